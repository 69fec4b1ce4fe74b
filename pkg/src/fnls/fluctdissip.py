"""Damped-driven Galerkin FNLS

    du = -i((-Delta)^sigma u + Pi^N|u|^2 u) dt - alpha L(u) dt + sqrt(alpha) dW^N

with the state-dependent dissipation operator L, its energy and mass
dissipation rates, spectral noise, an ensemble time stepper and the Ito
mass-balance diagnostic.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
import math
import os
import warnings

import numpy as np

from . import dynamics
from .dynamics import Propagator, check_finite, nonlinear_term
from .errors import InsufficientEnsemble, Overflow, StiffnessWarning

# exp() overflows float64 just above this
_EXP_MAX = 709.0


class Xi(str, Enum):
    """Concave one-to-one profile xi; the prefactor is exp(xi^{-1}(norm))."""

    IDENTITY = "identity"
    LOG = "log"

    def __call__(self, x):
        return x if self is Xi.IDENTITY else np.log1p(x)

    def inverse(self, x):
        return x if self is Xi.IDENTITY else np.expm1(x)


class Branch(str, Enum):
    HIGH = "high"  # s > d/2: L(u) = (-Delta)^(s-sigma) u + p u
    LOW = "low"    # 0 < s <= 1 + sigma: L(u) = p [(-Delta)^(s-sigma) u + Pi^N |u|^2 u]


@dataclass(frozen=True)
class DissipationSpec:
    sigma: float
    s: float
    alpha: float = 0.1
    eps: float = 0.05
    xi: Xi = Xi.IDENTITY
    branch: Branch = Branch.LOW
    homogeneous_prefactor: bool = False

    def __post_init__(self):
        object.__setattr__(self, "xi", Xi(self.xi))
        object.__setattr__(self, "branch", Branch(self.branch))
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self, d=None):
        """Violated constraints, as human-readable strings."""
        out = []
        if not 0.0 < self.sigma <= 1.0:
            out.append(f"sigma must lie in (0,1], got {self.sigma}")
        if not 0.0 <= self.alpha < 1.0:
            out.append(f"alpha must lie in [0,1), got {self.alpha}")
        if not self.eps > 0.0:
            out.append(f"eps must be positive, got {self.eps}")
        if self.branch is Branch.LOW and not 0.0 < self.s <= 1.0 + self.sigma:
            out.append(f"low-regularity dissipation needs 0 < s <= 1 + sigma = {1 + self.sigma}, got s={self.s}")
        if self.branch is Branch.HIGH and d is not None and not self.s > d / 2:
            out.append(f"high-regularity dissipation needs s > d/2 = {d / 2}, got s={self.s}")
        return out

    def check_dimension(self, d):
        problems = self.problems(d)
        if problems:
            raise ValueError("; ".join(problems))


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Noise coefficients a_n: dW^N = sum_n a_n e_n d beta_n.

    With ``circular`` the real Brownian motion beta_n is replaced by a
    complex one (independent real and imaginary parts, each of variance
    t/2), which keeps E||dW||^2 unchanged.
    """

    a: np.ndarray
    circular: bool = False

    def A(self, basis, r):
        """A_r^N = sum_n z_n^(2r) |a_n|^2."""
        return float(np.sum(basis.z ** (2.0 * r) * np.abs(self.a) ** 2))

    @classmethod
    def default(cls, basis, a0=1.0, sigma=1.0, exponent=None, circular=False):
        """|a_n| = a0 (1 + z_n)^(-exponent), exponent defaulting to sigma + d/2 + 1."""
        if exponent is None:
            exponent = sigma + basis.d / 2 + 1
        return cls(a0 * (1.0 + basis.z) ** (-exponent) + 0j, circular)

    @classmethod
    def zero(cls, basis):
        return cls(np.zeros(basis.n_modes, dtype=complex))


def xi_inverse_norm(basis, c, spec):
    norm = dynamics.sobolev_norm(basis, c, spec.s - spec.eps, homogeneous=spec.homogeneous_prefactor)
    return spec.xi.inverse(norm)


def prefactor(basis, c, spec):
    """exp(xi^{-1}(||u||_{H^{s-eps}})), raising :class:`Overflow` past float range."""
    x = np.asarray(xi_inverse_norm(basis, c, spec))
    if np.any(x > _EXP_MAX):
        raise Overflow(f"dissipation prefactor exp({float(np.max(x)):.4g}) overflows; "
                       "use xi=identity or smaller data")
    return np.exp(x)


def dissipation_apply(basis, c, spec):
    """L(u) for either branch."""
    c = np.asarray(c)
    p = prefactor(basis, c, spec)[..., None]
    lin = basis.frac_symbol(spec.s - spec.sigma) * c
    if spec.branch is Branch.HIGH:
        return lin + p * c
    return p * (lin + nonlinear_term(basis, c))


def _real_inner(f, g):
    """<f, g> = Re int f conj(g) dL, evaluated on coefficients."""
    return np.sum((f * np.conj(g)).real, axis=-1)


def diss_rate_energy(basis, c, spec):
    """E'(u; L(u)) = <(-Delta)^sigma u + Pi^N |u|^2 u, L(u)>."""
    grad = basis.frac_symbol(spec.sigma) * c + nonlinear_term(basis, c)
    return _real_inner(grad, dissipation_apply(basis, c, spec))


def diss_rate_mass(basis, c, spec):
    """M'(u; L(u)) = <u, L(u)>."""
    return _real_inner(c, dissipation_apply(basis, c, spec))


def diss_rate_mass_closed(basis, c, spec):
    """Closed form of <u, L(u)>.

    LOW: p (||u||_{L^4}^4 + ||u||^2_{H^{s-sigma}}); HIGH: ||u||^2_{H^{s-sigma}} + p ||u||_{L^2}^2.
    The H^{s-sigma} seminorm here is the homogeneous one, sum z_n^(2(s-sigma)) |c_n|^2,
    which is exactly what the inner product produces.
    """
    p = prefactor(basis, c, spec)
    hs = dynamics.sobolev_norm(basis, c, spec.s - spec.sigma, homogeneous=True) ** 2
    if spec.branch is Branch.HIGH:
        return hs + p * np.sum(np.abs(c) ** 2, axis=-1)
    return p * (dynamics.l4_norm4(basis, c) + hs)


def make_rng(seed, stream):
    """Counter-based generator keyed by (seed, stream)."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def brownian_increments(n, dt, rng, circular=False, size=None):
    """Increments of n independent Brownian motions over ``dt`` (real, or complex if circular)."""
    shape = (() if size is None else (size,) if np.isscalar(size) else tuple(size)) + (n,)
    if dt == 0:
        return np.zeros(shape, dtype=complex if circular else float)
    if circular:
        g = rng.standard_normal(shape + (2,))
        return (g[..., 0] + 1j * g[..., 1]) * math.sqrt(dt / 2)
    return rng.standard_normal(shape) * math.sqrt(dt)


def noise_increment(noise, dt, rng, size=None):
    """Coefficients a_n * d beta_n of one increment of W^N over ``dt``."""
    return noise.a * brownian_increments(noise.a.size, dt, rng, noise.circular, size)


class _StreamNoise:
    """Per-trajectory Brownian increments drawn in chunks from independent streams.

    Trajectory i always consumes the stream (seed, streams[i]) in the same
    order, so its path does not depend on how trajectories are batched.
    """

    def __init__(self, noise, dt, seed, streams, chunk=256):
        self.noise = noise
        self.dt = dt
        self.rngs = [make_rng(seed, int(s)) for s in streams]
        self.chunk = chunk
        self._buf = None
        self._pos = chunk

    def next(self):
        if self._pos == self.chunk:
            n = self.noise.a.size
            k = 2 if self.noise.circular else 1
            self._buf = np.stack([g.standard_normal((self.chunk, k * n)) for g in self.rngs], axis=1)
            self._pos = 0
        g = self._buf[self._pos]
        self._pos += 1
        if self.noise.circular:
            n = self.noise.a.size
            db = (g[:, :n] + 1j * g[:, n:]) * math.sqrt(self.dt / 2)
        else:
            db = g * math.sqrt(self.dt)
        return db


@dataclass
class SdeState:
    c: np.ndarray
    t: float
    seed: int
    stream: int
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.rng is None:
            self.rng = make_rng(self.seed, self.stream)


class StochasticStepper:
    """Lie splitting of one stochastic step.

    (i) Hamiltonian step of :class:`~fnls.dynamics.Propagator`;
    (ii) dissipation with the prefactor p frozen at the step start: the
    diagonal part is applied exactly, the LOW-branch cubic term by one tamed
    Euler increment -alpha dt p Pi^N|u|^2u / (1 + alpha dt p ||u||_inf^2);
    (iii) add sqrt(alpha) times the noise increment.

    ``hamiltonian_nonlinear=False`` drops the cubic terms from (i) and (ii)
    and ``freeze_unit_prefactor=True`` sets p = 1, which together reduce the
    system to independent Ornstein-Uhlenbeck modes.
    """

    def __init__(self, basis, flow, spec, noise, hamiltonian_nonlinear=True,
                 freeze_unit_prefactor=False):
        spec.check_dimension(basis.d)
        if not math.isclose(flow.sigma, spec.sigma):
            raise ValueError("flow and dissipation disagree on sigma")
        self.basis = basis
        self.flow = flow
        self.spec = spec
        self.noise = noise
        self.nonlinear = hamiltonian_nonlinear
        self.unit_prefactor = freeze_unit_prefactor
        self.prop = Propagator(basis, flow)
        self._lam = basis.frac_symbol(spec.s - spec.sigma)
        self._sqrt_alpha = math.sqrt(spec.alpha)
        self._warned = False

    def _prefactor(self, c):
        if self.unit_prefactor:
            return np.ones(c.shape[:-1])
        return prefactor(self.basis, c, self.spec)

    def step(self, c, db, martingale=None):
        """Advance ``c`` by one step given standard Brownian increments ``db``.

        If ``martingale`` is an array it is incremented in place by the
        martingale part of the mass change contributed by the noise.
        """
        alpha, dt = self.spec.alpha, self.flow.dt
        p = self._prefactor(c) if alpha > 0 else None
        c = self.prop.step(c) if self.nonlinear else self.prop.linear(c)
        if alpha > 0:
            h = alpha * dt * p[..., None]
            if not self._warned and float(np.max(h)) * self._lam[-1] > 30:
                warnings.warn(f"stiff dissipation: alpha dt p z_N^(2(s-sigma)) = "
                              f"{float(np.max(h)) * self._lam[-1]:.3g}", StiffnessWarning, stacklevel=2)
                self._warned = True
            if self.spec.branch is Branch.HIGH:
                c = c * np.exp(-alpha * dt * (self._lam + p[..., None]))
            else:
                if self.nonlinear:
                    v = self.basis.synthesize(c)
                    v2 = np.abs(v) ** 2
                    cubic = self.basis.analyze(v2 * v)
                    linf = np.max(v2.reshape(v2.shape[: c.ndim - 1] + (-1,)), axis=-1)[..., None]
                    c = c * np.exp(-h * self._lam) - h * cubic / (1.0 + h * linf)
                else:
                    c = c * np.exp(-h * self._lam)
            kick = self._sqrt_alpha * self.noise.a * db
            if martingale is not None:
                martingale += np.sum((np.conj(c) * kick).real, axis=-1)
                martingale += 0.5 * (np.sum(np.abs(kick) ** 2, axis=-1) - alpha * dt * np.sum(np.abs(self.noise.a) ** 2))
            c = c + kick
        return c


def step_stochastic(state, flow, spec, noise, basis, **flags):
    """Single-trajectory convenience wrapper around :class:`StochasticStepper`."""
    stepper = StochasticStepper(basis, flow, spec, noise, **flags)
    db = brownian_increments(noise.a.size, flow.dt, state.rng, noise.circular)
    c = stepper.step(state.c, db)
    check_finite(c)
    return SdeState(c, state.t + flow.dt, state.seed, state.stream, state.rng)


def standard_observables(basis, spec):
    """Scalar observables recorded along stochastic trajectories."""
    return {
        "mass": lambda c: dynamics.mass(c),
        "energy": lambda c: dynamics.energy(basis, c, spec.sigma),
        "mass_rate": lambda c: diss_rate_mass(basis, c, spec),
        "energy_rate": lambda c: diss_rate_energy(basis, c, spec),
        "hs_eps": lambda c: dynamics.sobolev_norm(basis, c, spec.s - spec.eps),
        "weighted_hs": lambda c: prefactor(basis, c, spec) * dynamics.sobolev_norm(basis, c, spec.s) ** 2,
    }


@dataclass
class EnsembleResult:
    times: np.ndarray
    observables: dict          # name -> (n_traj, n_times)
    final: np.ndarray          # (n_traj, n_modes)
    martingale: np.ndarray | None = None  # (n_traj, n_times)
    streams: np.ndarray = None


@dataclass(frozen=True)
class EnsembleConfig:
    T: float
    stride: int = 1
    seed: int = 0
    chunk: int = 256
    block: int = 128
    hamiltonian_nonlinear: bool = True
    freeze_unit_prefactor: bool = False
    track_martingale: bool = False


def _run_block(basis, flow, spec, noise, c0, streams, cfg, observables):
    stepper = StochasticStepper(basis, flow, spec, noise, cfg.hamiltonian_nonlinear, cfg.freeze_unit_prefactor)
    source = _StreamNoise(noise, flow.dt, cfg.seed, streams, cfg.chunk)
    obs = observables if observables is not None else standard_observables(basis, spec)
    nsteps = int(math.ceil(cfg.T / flow.dt - 1e-9))
    c = np.array(c0, dtype=complex)
    mart = np.zeros(c.shape[0]) if cfg.track_martingale else None
    times = [0.0]
    rec = {k: [np.broadcast_to(f(c), c.shape[:1]).copy()] for k, f in obs.items()}
    mrec = [mart.copy()] if mart is not None else None
    for i in range(1, nsteps + 1):
        c = stepper.step(c, source.next(), mart)
        if i % cfg.stride == 0 or i == nsteps:
            check_finite(c)
            times.append(i * flow.dt)
            for k, f in obs.items():
                rec[k].append(np.broadcast_to(f(c), c.shape[:1]).copy())
            if mrec is not None:
                mrec.append(mart.copy())
    return (np.array(times), {k: np.stack(v, axis=1) for k, v in rec.items()}, c,
            np.stack(mrec, axis=1) if mrec is not None else None)


def resolve_threads(threads=None):
    if threads:
        return max(1, int(threads))
    env = os.environ.get("FNLS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_ensemble(basis, flow, spec, noise, c0, cfg, observables=None, threads=1, streams=None):
    """Integrate an ensemble; trajectory i uses random stream ``streams[i]``.

    ``c0`` has shape (n_traj, n_modes).  Trajectories are advanced in blocks
    of ``cfg.block``; the blocks are the same for every thread count, so the
    results are bit-identical however many workers run them.  With
    ``threads > 1`` blocks go to worker processes and observables must be
    picklable (``None`` selects :func:`standard_observables`).
    """
    c0 = np.atleast_2d(np.asarray(c0, dtype=complex))
    n = c0.shape[0]
    streams = np.arange(n) if streams is None else np.asarray(streams)
    blocks = [np.arange(i, min(i + cfg.block, n)) for i in range(0, n, cfg.block)]
    threads = min(resolve_threads(threads), len(blocks))
    if threads == 1:
        parts = [_run_block(basis, flow, spec, noise, c0[b], streams[b], cfg, observables) for b in blocks]
    else:
        with ProcessPoolExecutor(threads) as pool:
            futs = [pool.submit(_run_block, basis, flow, spec, noise, c0[b], streams[b], cfg, observables)
                    for b in blocks]
            parts = [f.result() for f in futs]
    times = parts[0][0]
    obs = {k: np.concatenate([p[1][k] for p in parts]) for k in parts[0][1]}
    final = np.concatenate([p[2] for p in parts])
    mart = np.concatenate([p[3] for p in parts]) if cfg.track_martingale else None
    return EnsembleResult(times, obs, final, mart, streams)


@dataclass
class BalanceReport:
    times: np.ndarray
    residual: np.ndarray        # R(t), ensemble mean
    se: np.ndarray              # Monte Carlo standard error of R(t)
    compensated: np.ndarray | None = None     # R(t) minus the realized noise martingale
    compensated_se: np.ndarray | None = None

    @property
    def max_abs_z(self):
        mask = self.se > 0
        if not np.any(mask):
            return 0.0
        return float(np.max(np.abs(self.residual[mask]) / self.se[mask]))

    def within(self, k=3.0, floor=0.0):
        """True when |R| <= k SE at every sampled time (``floor`` absorbs round-off when SE = 0)."""
        return bool(np.all(np.abs(self.residual) <= k * self.se + floor))


def ito_mass_balance(result, alpha, A0, min_trajectories=100):
    """Per-trajectory residual M(t) + alpha int_0^t Mrate - M(0) - alpha A0 t / 2, ensemble averaged.

    ``result`` must carry ``mass`` and ``mass_rate`` observables sampled on
    a grid fine enough for the trapezoid rule.
    """
    M = result.observables["mass"]
    rate = result.observables["mass_rate"]
    n = M.shape[0]
    if n < min_trajectories:
        raise InsufficientEnsemble(f"need at least {min_trajectories} trajectories, got {n}")
    t = result.times
    integral = np.concatenate(
        [np.zeros((n, 1)), np.cumsum(0.5 * (rate[:, 1:] + rate[:, :-1]) * np.diff(t), axis=1)], axis=1)
    r = M + alpha * integral - M[:, :1] - 0.5 * alpha * A0 * t
    se = r.std(axis=0, ddof=1) / math.sqrt(n)
    report = BalanceReport(t, r.mean(axis=0), se)
    if result.martingale is not None:
        rc = r - result.martingale
        report.compensated = rc.mean(axis=0)
        report.compensated_se = rc.std(axis=0, ddof=1) / math.sqrt(n)
    return report


def ou_stationary_second_moment(basis, noise, spec, mode):
    """E|c_n|^2 at stationarity for the decoupled linear system with p = 1.

    dc = -i z^(2 sigma) c dt - alpha lam c dt + sqrt(alpha) a_n d beta has
    E|c|^2 = |a_n|^2 / (2 lam) with lam = z_n^(2(s-sigma)) (LOW) or
    z_n^(2(s-sigma)) + 1 (HIGH); the rotation drops out and alpha cancels.
    """
    return float(np.abs(noise.a[mode]) ** 2 / (2.0 * _ou_rate(basis, spec, mode)))


def _ou_rate(basis, spec, mode):
    lam = basis.frac_symbol(spec.s - spec.sigma)[mode]
    return lam + 1.0 if spec.branch is Branch.HIGH else lam


def ou_discrete_second_moment(basis, noise, spec, mode, dt):
    """Stationary E|c_n|^2 of the time-stepped linear system.

    c <- exp(-h) c + sqrt(alpha) a_n d beta with h = alpha lam dt gives
    alpha |a_n|^2 dt / (1 - exp(-2h)), which tends to the continuum value
    as dt -> 0.
    """
    h = spec.alpha * _ou_rate(basis, spec, mode) * dt
    return float(spec.alpha * np.abs(noise.a[mode]) ** 2 * dt / -np.expm1(-2.0 * h))
