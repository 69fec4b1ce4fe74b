"""Numerical and combinatorial checks of the analytic lemmas behind the model.

* :func:`lambda_count` counts frequency pairs whose dispersion sums land in a
  unit window, the combinatorial kernel of the bilinear estimates.
* :func:`cordoba_check` tests the Cordoba-Cordoba convexity inequality
  2 Re(conj(u) (-Delta)^g u) >= (-Delta)^g |u|^2 in integrated form.
* :func:`radial_sobolev_check` estimates the constant in
  |u(r)| <= K r^(s - d/2) ||u||_{H^s} for radial fields on the ball.
* :func:`eigenfunction_lp_fit` fits the growth exponent of ||e_n||_{L^p}.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .basis import Domain, bessel_j0_zeros, build_basis, lp_slope
from .dynamics import sobolev_norm
from .errors import EmptyRegime


class ZSource(str, Enum):
    INTEGERS = "integers"
    BALL_D3 = "ball_d3"
    BALL_D2 = "ball_d2"


def z_values(source, n_max):
    """z_1, ..., z_{n_max} for the given source (index n at position n - 1)."""
    source = ZSource(source)
    n = np.arange(1, n_max + 1, dtype=float)
    if source is ZSource.INTEGERS:
        return n
    if source is ZSource.BALL_D3:
        return np.pi * n
    return bessel_j0_zeros(n_max)


@dataclass(frozen=True)
class CountingQuery:
    sigma: float
    N1: int
    N2: int
    tau: float
    source: ZSource = ZSource.INTEGERS

    def __post_init__(self):
        if not 0.5 <= self.sigma <= 1.0:
            raise ValueError(f"sigma must lie in [1/2, 1], got {self.sigma}")
        if not self.N1 >= self.N2 >= 1:
            raise ValueError(f"need N1 >= N2 >= 1, got N1={self.N1}, N2={self.N2}")
        object.__setattr__(self, "source", ZSource(self.source))


def _dyadic_values(source, N, sigma):
    # z_n^(2 sigma) for n in [N, 2N)
    return z_values(source, 2 * N - 1)[N - 1:] ** (2.0 * sigma)


def lambda_count(q):
    """Brute-force #{(n1, n2) : n_i in [N_i, 2 N_i), |z1^2s + z2^2s - tau| <= 1/2}."""
    a = _dyadic_values(q.source, q.N1, q.sigma)
    b = _dyadic_values(q.source, q.N2, q.sigma)
    return int(np.count_nonzero(np.abs(a[:, None] + b[None, :] - q.tau) <= 0.5))


def lambda_count_intervals(q):
    """Same count, one interval query per n2 on the sorted n1 values."""
    a = np.sort(_dyadic_values(q.source, q.N1, q.sigma))
    total = 0
    for bv in _dyadic_values(q.source, q.N2, q.sigma):
        # a in [tau - 1/2 - bv, tau + 1/2 - bv], written so the rounding matches |a + bv - tau| <= 1/2
        lo = np.searchsorted(a + bv - q.tau, -0.5, side="left")
        hi = np.searchsorted(a + bv - q.tau, 0.5, side="right")
        total += int(hi - lo)
    return total


def max_count_over_tau(sigma, N1, N2, source=ZSource.INTEGERS):
    """max over tau of the count, with the maximizing tau.

    The count is piecewise constant in tau and its maximum is attained with
    some pair sum on the left edge of the window.
    """
    sums = np.sort((_dyadic_values(source, N1, sigma)[:, None]
                    + _dyadic_values(source, N2, sigma)[None, :]).ravel())
    counts = np.searchsorted(sums, sums + 1.0, side="right") - np.arange(sums.size)
    i = int(np.argmax(counts))
    return int(counts[i]), float(sums[i] + 0.5)


@dataclass
class CountingReport:
    rows: list = field(default_factory=list)    # dicts: source, sigma, N1, N2, max_count, tau, ratio
    bound: float = 4.0

    @property
    def constant(self):
        """Smallest C with max_tau #Lambda <= C N2 over all rows."""
        return max(r["ratio"] for r in self.rows)

    def slope(self, source, sigma):
        """Least-squares slope of max count against N2 (N1 = N2 rows excluded if alone)."""
        rows = [r for r in self.rows if r["source"] == ZSource(source).value and r["sigma"] == sigma]
        x = np.array([r["N2"] for r in rows], dtype=float)
        y = np.array([r["max_count"] for r in rows], dtype=float)
        return float(np.dot(x, y) / np.dot(x, x))

    @property
    def passed(self):
        return self.constant <= self.bound


def counting_sweep(sigmas=(0.5, 0.75, 1.0), sources=tuple(ZSource), N2_max=256, N1_max=1024,
                   bound=4.0):
    """max_tau #Lambda / N2 over dyadic N2 <= N2_max and dyadic N2 <= N1 <= N1_max."""
    rows = []
    for source in map(ZSource, sources):
        for sigma in sigmas:
            N2 = 1
            while N2 <= N2_max:
                N1 = N2
                while N1 <= N1_max:
                    count, tau = max_count_over_tau(sigma, N1, N2, source)
                    rows.append(dict(source=source.value, sigma=sigma, N1=N1, N2=N2,
                                     max_count=count, tau=tau, ratio=count / N2))
                    N1 *= 2
                N2 *= 2
    return CountingReport(rows, bound)


# -- Cordoba-Cordoba ---------------------------------------------------------------------------

def trial_profile(basis, decay=3.0):
    """Amplitude profile of random test fields: n^(-decay) on the ball, <k>^(-decay) on the torus."""
    if basis.domain is Domain.BALL:
        return np.arange(1, basis.n_modes + 1, dtype=float) ** (-decay)
    return (1.0 + basis.z**2) ** (-decay / 2)


def random_fields(basis, rng, size, decay=3.0):
    shape = (size, basis.n_modes)
    zeta = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return zeta * trial_profile(basis, decay)


def _cordoba_big_basis(basis, refinement):
    if basis.domain is Domain.TORUS:
        # |u|^2 has frequencies up to 2K; the refined grid resolves |u|^2 u without aliasing
        return build_basis(Domain.TORUS, basis.d, 2 * basis.N,
                           grid_size=refinement * basis.grid_size)
    return build_basis(Domain.BALL, basis.d, 4 * refinement * basis.N)


def cordoba_defect(basis, c, gammas, refinement=4, big=None):
    """D = <(-Delta)^g u, |u|^2 u> - 1/2 ||(-Delta)^(g/2) |u|^2||^2 for each g.

    ``c`` has shape (..., n_modes); the result has shape (len(gammas), ...).
    On the ball |u|^2 is expanded in a basis with 4 * refinement * N modes,
    which can only drop positive tail terms from the second bracket.
    """
    big = big or _cordoba_big_basis(basis, refinement)
    idx = basis.mode_map(big)
    cb = basis.embed(c, big)
    v = big.synthesize(cb)
    w = np.abs(v) ** 2
    cubic = big.analyze(w * v)[..., idx]
    wc = big.analyze(w.astype(complex))
    out = []
    for g in gammas:
        first = np.real(np.sum(basis.frac_symbol(g) * c * np.conj(cubic), axis=-1))
        second = 0.5 * np.sum(big.frac_symbol(g) * np.abs(wc) ** 2, axis=-1)
        out.append(first - second)
    return np.array(out)


def complex_reduction_defect(basis, c, gamma):
    """Relative defect of Re(f conj((-Delta)^g f)) = a (-Delta)^g a + b (-Delta)^g b at the nodes, f = a + ib.

    The maximal pointwise difference is divided by max |f| |(-Delta)^g f|,
    so the result sits at the level of rounding error.
    """
    sym = basis.frac_symbol(gamma)
    f = basis.synthesize(c)
    a, b = f.real, f.imag
    La = basis.synthesize(sym * basis.analyze(a.astype(complex))).real
    Lb = basis.synthesize(sym * basis.analyze(b.astype(complex))).real
    Lf = basis.synthesize(sym * c)
    lhs = np.real(f * np.conj(Lf))
    scale = max(float(np.max(np.abs(f) * np.abs(Lf))), np.finfo(float).tiny)
    return float(np.max(np.abs(lhs - (a * La + b * Lb)))) / scale


@dataclass
class CordobaReport:
    gamma: float
    trials: int
    min_defect: float
    min_scaled: float        # min of D / (1 + ||u||_{H^1}^4)
    violations: int
    tol_factor: float = 1e-8

    @property
    def violation_fraction(self):
        return self.violations / self.trials

    @property
    def passed(self):
        return self.violations == 0


def cordoba_check(basis, gammas, trials=10_000, refinement=4, seed=0, chunk=500, decay=3.0):
    """Random smooth complex fields c_n = zeta_n profile_n (see :func:`trial_profile`), one report per gamma."""
    gammas = [float(g) for g in np.atleast_1d(gammas)]
    for g in gammas:
        if not 0.0 <= g <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {g}")
    big = _cordoba_big_basis(basis, refinement)
    rng = np.random.default_rng(seed)
    n_g = len(gammas)
    mins = np.full(n_g, np.inf)
    scaled = np.full(n_g, np.inf)
    bad = np.zeros(n_g, dtype=int)
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        c = random_fields(basis, rng, m, decay)
        D = cordoba_defect(basis, c, gammas, big=big)
        scale = 1.0 + sobolev_norm(basis, c, 1.0) ** 4
        mins = np.minimum(mins, D.min(axis=1))
        scaled = np.minimum(scaled, (D / scale).min(axis=1))
        bad += np.count_nonzero(D < -1e-8 * scale, axis=1)
        done += m
    return [CordobaReport(g, trials, float(mins[i]), float(scaled[i]), int(bad[i]))
            for i, g in enumerate(gammas)]


# -- radial Sobolev ----------------------------------------------------------------------------

@dataclass
class RadialSobolevReport:
    s: float
    d: int
    Ns: tuple
    K: tuple                  # one estimate per N
    rel_tol: float = 0.2

    @property
    def max_relative_change(self):
        K = np.array(self.K)
        return float(np.max(np.abs(np.diff(K)) / K[:-1])) if K.size > 1 else 0.0

    @property
    def passed(self):
        return bool(np.all(np.isfinite(self.K)) and self.max_relative_change <= self.rel_tol)


def radial_sobolev_constant(basis, c, s, r):
    """max over rows of c and over r of |u(r)| r^(d/2 - s) / ||u||_{H^s}."""
    u = np.asarray(c) @ basis.eigenfunctions_at(r).T
    norm = sobolev_norm(basis, c, s)
    ratio = np.abs(u) * r ** (basis.d / 2 - s)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(norm[..., None] > 0, ratio / norm[..., None], 0.0)
    return float(np.max(ratio))


def radial_sobolev_check(d, s, Ns=(32, 64, 128), trials=1000, seed=0, decay=3.0, n_r=4000,
                         rel_tol=0.2):
    """K(N) for nested random fields; the same draws are truncated to each N."""
    if not 0.5 < s < d / 2:
        raise EmptyRegime(f"radial Sobolev bound needs 1/2 < s < d/2 = {d / 2}, got s = {s}")
    Ns = tuple(sorted(Ns))
    rng = np.random.default_rng(seed)
    n_max = Ns[-1]
    zeta = (rng.standard_normal((trials, n_max)) + 1j * rng.standard_normal((trials, n_max))) / np.sqrt(2)
    r = np.unique(np.concatenate([np.geomspace(1e-4, 1.0, n_r // 2), np.linspace(0.0, 1.0, n_r // 2)[1:]]))
    K = []
    for N in Ns:
        basis = build_basis(Domain.BALL, d, N)
        c = zeta[:, :N] * trial_profile(basis, decay)
        K.append(radial_sobolev_constant(basis, c, s, r))
    return RadialSobolevReport(s, d, Ns, tuple(K), rel_tol)


# -- eigenfunction L^p growth ------------------------------------------------------------------

@dataclass
class LpFitReport:
    d: int
    p: float
    N: int
    slope: float
    expected: float
    tol: float = 0.1

    @property
    def passed(self):
        return abs(self.slope - self.expected) <= self.tol


def lp_exponent(d, p):
    """Growth exponent of ||e_n||_{L^p}: (d-1)/2 - d/p above p = 2d/(d-1), zero below."""
    return max(0.0, (d - 1) / 2 - d / p)


def eigenfunction_lp_fit(d, p, N=256, n_min=8, tol=0.1):
    slope, _ = lp_slope(d, p, N, n_min)
    return LpFitReport(d, p, N, slope, lp_exponent(d, p), tol)
