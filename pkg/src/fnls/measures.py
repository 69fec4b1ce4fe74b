"""Time-averaged empirical measures of the damped-driven system and their diagnostics.

A stationary measure is only ever seen through scalar observables: the
Krylov-Bogoliubov average (1/t) int_0^t P*_tau delta_0 d tau becomes a pooled
time-and-ensemble average of observables along trajectories started at 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import dynamics
from .basis import build_basis
from .dynamics import FlowParams, Propagator, check_finite
from .errors import InsufficientEnsemble, InsufficientSamples
from .fluctdissip import (DissipationSpec, EnsembleConfig, NoiseSpec, run_ensemble)


@dataclass
class ObservableSeries:
    name: str
    times: np.ndarray
    values: np.ndarray
    burn_in: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"observable {self.name!r} has non-finite values")


@dataclass
class EmpiricalMeasure:
    """Post-burn-in observable samples pooled over an ensemble.

    ``samples[name]`` has shape (n_traj, n_kept); ``times`` the matching
    sample times.  Estimates of int f d mu are pooled means; standard errors
    come from batch means along each trajectory.
    """

    samples: dict
    times: np.ndarray
    params: dict = field(default_factory=dict)
    n_batches: int = 30

    @property
    def n_trajectories(self):
        return next(iter(self.samples.values())).shape[0]

    @property
    def count(self):
        return next(iter(self.samples.values())).size

    def mean(self, name):
        return float(self.samples[name].mean())

    def trajectory_means(self, name):
        return self.samples[name].mean(axis=1)

    def batch_means(self, name):
        x = self.samples[name]
        nb = max(1, min(self.n_batches, x.shape[1]))
        return np.stack([b.mean(axis=1) for b in np.array_split(x, nb, axis=1)], axis=1)

    def se(self, name):
        bm = self.batch_means(name).ravel()
        if bm.size < 2:
            return float("nan")
        return float(bm.std(ddof=1) / math.sqrt(bm.size))


def time_average_measure(times, observables, burn_in=0.2, stride=1, n_batches=30,
                         min_trajectories=1, params=None):
    """Pool observables after burn-in.

    ``observables`` maps names to arrays of shape (n_traj, n_times).
    ``burn_in`` is a fraction of the horizon (float < 1) or an index (int).
    """
    times = np.asarray(times, dtype=float)
    if isinstance(burn_in, float) and burn_in < 1.0:
        start = int(np.searchsorted(times, times[0] + burn_in * (times[-1] - times[0])))
    else:
        start = int(burn_in)
    if start >= times.size:
        raise InsufficientSamples("burn-in covers the whole horizon")
    samples = {}
    for name, x in observables.items():
        x = np.atleast_2d(np.asarray(x, dtype=float))[:, start::stride]
        if x.shape[0] < min_trajectories:
            raise InsufficientEnsemble(f"need at least {min_trajectories} trajectories, got {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"observable {name!r} has non-finite samples")
        samples[name] = x
    return EmpiricalMeasure(samples, times[start::stride], dict(params or {}), n_batches)


def ks_statistic(x, y):
    """Two-sample Kolmogorov-Smirnov statistic, vectorized over leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = x.shape[-1], y.shape[-1]
    values = np.concatenate([x, y], axis=-1)
    steps = np.concatenate([np.full(x.shape, 1.0 / n), np.full(y.shape, -1.0 / m)], axis=-1)
    order = np.argsort(values, axis=-1, kind="stable")
    v = np.take_along_axis(values, order, axis=-1)
    cum = np.cumsum(np.take_along_axis(steps, order, axis=-1), axis=-1)
    # the ECDF difference is only meaningful after the last member of a tie group
    last = np.ones(v.shape, dtype=bool)
    last[..., :-1] = v[..., 1:] != v[..., :-1]
    return np.max(np.where(last, np.abs(cum), 0.0), axis=-1)


@dataclass
class KSReport:
    statistic: float
    p_value: float
    reject: bool
    n: int
    m: int


def ks_bootstrap(x, y, n_boot=999, rng=None, level=0.01):
    """KS statistic with a bootstrap p-value under the pooled null distribution.

    Identical samples (statistic 0) get p = 1.
    """
    rng = np.random.default_rng(rng)
    x = np.ravel(x)
    y = np.ravel(y)
    n, m = x.size, y.size
    if n < 2 or m < 2:
        raise InsufficientSamples("each window needs at least 2 samples")
    d = float(ks_statistic(x, y))
    pooled = np.concatenate([x, y])
    idx = rng.integers(0, pooled.size, size=(n_boot, n + m))
    boot = pooled[idx]
    dstar = ks_statistic(boot[:, :n], boot[:, n:])
    # the statistic is discrete; ranking the observed value uniformly among
    # its ties keeps the test at its nominal size instead of far below it
    close = np.abs(dstar - d) <= 1e-12
    above = np.count_nonzero((dstar > d) & ~close)
    ties = np.count_nonzero(close)
    p = (above + rng.uniform() * (ties + 1)) / (n_boot + 1.0)
    if d == 0.0:
        p = 1.0
    return KSReport(d, float(p), bool(p < level), n, m)


def stationarity_test(measure, lag, window=None, names=None, n_boot=999, seed=0, level=0.01,
                      per_trajectory=1, max_samples=2000):
    """Compare each observable on [t0, t0 + window] against [t0 + lag, t0 + lag + window].

    From every trajectory ``per_trajectory`` sample times are drawn at random
    inside each window.  Trajectories are independent, so with one draw each
    the window samples are i.i.d. under stationarity, as the KS test assumes.
    At most ``max_samples`` values per window enter the test.
    """
    t = measure.times
    t0 = t[0]
    if window is None:
        window = lag if lag > 0 else (t[-1] - t0) / 2
    if window <= 0 or t0 + lag + window > t[-1] + 1e-12:
        raise InsufficientSamples("the lagged window does not fit in the post-burn-in horizon")
    ia = np.flatnonzero((t >= t0 - 1e-12) & (t <= t0 + window + 1e-12))
    ib = np.flatnonzero((t >= t0 + lag - 1e-12) & (t <= t0 + lag + window + 1e-12))
    k = min(ia.size, ib.size)
    ia, ib = ia[:k], ib[:k]
    rng = np.random.default_rng(seed)
    n_traj = measure.n_trajectories
    pick = rng.integers(0, k, size=(n_traj, per_trajectory))
    rows = np.repeat(np.arange(n_traj), per_trajectory)
    keep = rng.permutation(rows.size)[:max_samples]
    if keep.size < 2:
        raise InsufficientSamples("need at least 2 samples per window")
    out = {}
    for name in names or measure.samples:
        x = measure.samples[name]
        # lag = 0 compares a window with itself
        xa = x[rows, ia[pick.ravel()]][keep]
        xb = x[rows, ib[pick.ravel()]][keep]
        out[name] = ks_bootstrap(xa, xb, n_boot, rng, level)
    return out


def ks_calibration(repetitions=1000, n=100, n_boot=499, seed=0, level=0.01, drift=0.0):
    """Rejection rate of :func:`ks_bootstrap` on synthetic windows.

    Each repetition draws a standard normal series of length 2n, adds a
    linear trend of total size ``drift``, and tests the first half against
    the second.
    """
    rng = np.random.default_rng(seed)
    rejections = 0
    ramp = drift * np.linspace(0.0, 1.0, 2 * n)
    for _ in range(repetitions):
        series = rng.standard_normal(2 * n) + ramp
        rejections += ks_bootstrap(series[:n], series[n:], n_boot, rng, level).reject
    return rejections / repetitions


@dataclass
class BalanceCheck:
    mean: float
    se: float
    target: float
    rel_tol: float = 0.05
    k_se: float = 3.0

    @property
    def deviation(self):
        return abs(self.mean - self.target)

    @property
    def relative_deviation(self):
        return self.deviation / self.target if self.target else self.deviation

    @property
    def tolerance(self):
        return max(self.k_se * self.se, self.rel_tol * self.target)

    @property
    def passed(self):
        return self.deviation <= self.tolerance


def balance_identity_check(measure, noise, basis, rel_tol=0.05, k_se=3.0, name="mass_rate"):
    """Compare the pooled mean of the mass dissipation rate with A_0^N / 2."""
    target = 0.5 * noise.A(basis, 0.0)
    se = measure.se(name)
    return BalanceCheck(measure.mean(name), 0.0 if not np.isfinite(se) else se, target, rel_tol, k_se)


@dataclass
class StationaryRun:
    """Parameters of one stationary ensemble run started from u = 0."""

    domain: str = "ball"
    d: int = 3
    N: int = 16
    sigma: float = 1.0
    s: float = 1.5
    alpha: float = 0.1
    eps: float = 0.05
    xi: str = "identity"
    branch: str = "low"
    a0: float = 100.0
    decay: float | None = None
    dt: float = 0.01
    T: float = 62.5
    burn_in: float = 0.2
    stride: int = 10
    n_traj: int = 100
    seed: int = 0
    threads: int = 1

    def build(self):
        basis = build_basis(self.domain, self.d, self.N)
        spec = DissipationSpec(self.sigma, self.s, self.alpha, self.eps, self.xi, self.branch)
        noise = NoiseSpec.default(basis, self.a0, self.sigma, self.decay)
        return basis, FlowParams(self.sigma, self.dt), spec, noise

    def run(self):
        basis, flow, spec, noise = self.build()
        cfg = EnsembleConfig(T=self.T, stride=self.stride, seed=self.seed)
        res = run_ensemble(basis, flow, spec, noise, np.zeros((self.n_traj, basis.n_modes)), cfg,
                           threads=self.threads)
        tag = dict(N=self.N, alpha=self.alpha, sigma=self.sigma, s=self.s)
        measure = time_average_measure(res.times, res.observables, self.burn_in, params=tag)
        return measure, res, (basis, flow, spec, noise)


@dataclass
class SweepReport:
    cells: list           # dicts: N, alpha, energy_rate, energy_rate_se, weighted_hs, mass_rate, A0_half
    factor: float = 10.0

    def ratio(self, key="energy_rate"):
        vals = np.array([c[key] for c in self.cells])
        if np.all(vals == 0):
            return 1.0
        return float(vals.max() / vals.min())

    @property
    def passed(self):
        return self.ratio() <= self.factor


def moment_bound_sweep(base, Ns=(8, 16, 32, 64), alphas=(0.4, 0.2, 0.1, 0.05), factor=10.0,
                       T_scale=None):
    """Mean energy dissipation rate and mean exp(xi^{-1}) ||u||_{H^s}^2 over an (N, alpha) grid.

    ``base`` is a :class:`StationaryRun` whose N and alpha are overridden per
    cell.  With ``T_scale`` the horizon is stretched to ``T_scale / alpha``
    so every cell sees the same number of relaxation times.
    """
    from dataclasses import replace

    cells = []
    for N in Ns:
        for alpha in alphas:
            T = base.T if T_scale is None else T_scale / alpha
            run = replace(base, N=N, alpha=alpha, T=T)
            measure, _, (basis, _, _, noise) = run.run()
            cells.append(dict(
                N=N, alpha=alpha,
                energy_rate=measure.mean("energy_rate"), energy_rate_se=measure.se("energy_rate"),
                weighted_hs=measure.mean("weighted_hs"),
                mass_rate=measure.mean("mass_rate"), A0_half=0.5 * noise.A(basis, 0.0),
            ))
    return SweepReport(cells, factor)


@dataclass
class GrowthReport:
    times: np.ndarray
    ratio: np.ndarray            # (n_samples, n_times)
    c_star: np.ndarray           # (n_samples,)
    argmax_time: np.ndarray      # (n_samples,)

    @property
    def early_fraction(self):
        """Share of samples whose running supremum is attained before T/2."""
        return float(np.mean(self.argmax_time <= 0.5 * self.times[-1]))


def growth_bound_fit(basis, c0, flow, spec, T, stride=10):
    """C*(u0) = sup_t ||u(t)||_{H^{s-eps}} / xi(1 + ln(1 + t)) along the deterministic flow."""
    c = np.atleast_2d(np.asarray(c0, dtype=complex))
    prop = Propagator(basis, flow)
    s = spec.s - spec.eps
    nsteps = int(math.ceil(T / flow.dt - 1e-9))
    times, norms = [0.0], [dynamics.sobolev_norm(basis, c, s)]
    for i in range(1, nsteps + 1):
        c = prop.step(c)
        if i % stride == 0 or i == nsteps:
            check_finite(c)
            times.append(i * flow.dt)
            norms.append(dynamics.sobolev_norm(basis, c, s))
    times = np.array(times)
    denom = spec.xi(1.0 + np.log1p(times))
    ratio = np.stack(norms, axis=1) / denom
    arg = np.argmax(ratio, axis=1)
    return GrowthReport(times, ratio, ratio.max(axis=1), times[arg])
