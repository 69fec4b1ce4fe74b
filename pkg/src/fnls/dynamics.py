"""Deterministic Galerkin flow of the cubic fractional NLS.

    du/dt = -i ((-Delta)^sigma u + Pi^N |u|^2 u)

on a :class:`~fnls.basis.Basis`.  States are coefficient arrays with the mode
index last; leading axes are independent trajectories.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np
from scipy.integrate import trapezoid

from .errors import NonFinite


class Scheme(str, Enum):
    STRANG = "strang"
    RK4 = "rk4"


@dataclass(frozen=True)
class FlowParams:
    sigma: float
    dt: float
    scheme: Scheme = Scheme.STRANG

    def __post_init__(self):
        if not 0.0 < self.sigma <= 1.0:
            raise ValueError(f"sigma must lie in (0, 1], got {self.sigma}")
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "scheme", Scheme(self.scheme))


@dataclass
class ConservedReport:
    mass: float
    energy: float
    hs_norms: dict = field(default_factory=dict)


def nonlinear_term(basis, c):
    """Pi^N(|u|^2 u), evaluated pointwise at the nodes and projected back."""
    v = basis.synthesize(c)
    return basis.analyze(np.abs(v) ** 2 * v)


def mass(c):
    return 0.5 * np.sum(np.abs(c) ** 2, axis=-1)


def sobolev_norm(basis, c, s, homogeneous=False):
    """(sum w_n |c_n|^2)^(1/2) with w_n = z_n^(2s) (homogeneous) or <z_n>^(2s)."""
    w = basis.sobolev_weights(s, homogeneous)
    return np.sqrt(np.sum(w * np.abs(c) ** 2, axis=-1))


def l4_norm4(basis, c):
    """||u||_{L^4}^4 by quadrature."""
    return basis.integrate(np.abs(basis.synthesize(c)) ** 4)


def energy(basis, c, sigma):
    kinetic = np.sum(basis.frac_symbol(sigma) * np.abs(c) ** 2, axis=-1)
    return 0.5 * kinetic + 0.25 * l4_norm4(basis, c)


def conserved(basis, c, sigma, s_values=()):
    return ConservedReport(
        mass=float(mass(c)),
        energy=float(energy(basis, c, sigma)),
        hs_norms={s: float(sobolev_norm(basis, c, s)) for s in s_values},
    )


def check_finite(c):
    if not np.all(np.isfinite(c)):
        raise NonFinite("non-finite coefficient encountered; reduce the time step")


class Propagator:
    """One-step map of the Galerkin flow with cached linear phases."""

    def __init__(self, basis, params):
        self.basis = basis
        self.params = params
        dt = params.dt
        omega = basis.frac_symbol(params.sigma)
        self._half = np.exp(-0.5j * dt * omega)
        self._full = self._half**2
        self._omega = omega

    def linear(self, c, fraction=1.0):
        if fraction == 0.5:
            return c * self._half
        if fraction == 1.0:
            return c * self._full
        return c * np.exp(-1j * fraction * self.params.dt * self._omega)

    def nonlinear(self, c, dt):
        """Exact pointwise phase rotation v -> v exp(-i dt |v|^2), then re-projection."""
        v = self.basis.synthesize(c)
        return self.basis.analyze(v * np.exp(-1j * dt * np.abs(v) ** 2))

    def step(self, c):
        if self.params.scheme is Scheme.STRANG:
            c = c * self._half
            c = self.nonlinear(c, self.params.dt)
            return c * self._half
        return self._rk4(c)

    def _rk4(self, c):
        # Lawson RK4: classical RK4 in the interaction picture of the linear part
        dt = self.params.dt
        basis = self.basis

        def f(x):
            return -1j * nonlinear_term(basis, x)

        k1 = f(c)
        a = self._half * (c + 0.5 * dt * k1)
        k2 = f(a)
        b = self._half * c + 0.5 * dt * k2
        k3 = f(b)
        d = self._full * c + dt * self._half * k3
        k4 = f(d)
        return (self._full * (c + dt / 6 * k1)
                + self._half * (dt / 3) * (k2 + k3)
                + dt / 6 * k4)


def step(basis, c, params):
    return Propagator(basis, params).step(c)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray | None
    records: dict
    final: np.ndarray


def integrate(basis, c0, T, params, observers=None, stride=1, keep_states=False):
    """Apply ``ceil(T/dt)`` steps from ``c0``.

    ``observers`` maps a name to ``f(t, c) -> array``; each is evaluated at
    t = 0 and after every ``stride`` steps, and the results are stacked in
    ``Trajectory.records`` along a new leading time axis.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    observers = observers or {}
    prop = Propagator(basis, params)
    nsteps = int(math.ceil(T / params.dt - 1e-9))
    c = np.array(c0, dtype=complex)
    times, states = [0.0], [c.copy()] if keep_states else None
    records = {name: [np.asarray(f(0.0, c))] for name, f in observers.items()}
    for i in range(1, nsteps + 1):
        # overflow surfaces as NonFinite below
        with np.errstate(over="ignore", invalid="ignore"):
            c = prop.step(c)
        check_finite(c)
        if i % stride == 0 or i == nsteps:
            t = i * params.dt
            times.append(t)
            if keep_states:
                states.append(c.copy())
            for name, f in observers.items():
                records[name].append(np.asarray(f(t, c)))
    return Trajectory(
        times=np.array(times),
        states=np.array(states) if keep_states else None,
        records={k: np.array(v) for k, v in records.items()},
        final=c,
    )


def time_averaged_norm(times, values):
    """(1/T) int_0^T values dt by the trapezoid rule."""
    times = np.asarray(times)
    if times[-1] <= times[0]:
        return float(values[0])
    return float(trapezoid(values, times, axis=0) / (times[-1] - times[0]))


def galerkin_self_convergence(small, big, c0_big, T, params, r, stride=1):
    """sup_t ||phi^N_t Pi^N u0 - phi^{2N}_t u0||_{H^r} measured in the large basis.

    ``small`` and ``big`` are the truncations N and 2N, ``c0_big`` the initial
    datum expressed in ``big``.  Both flows share ``params``.
    """
    prop_s, prop_b = Propagator(small, params), Propagator(big, params)
    idx = small.mode_map(big)
    weights = big.sobolev_weights(r)
    cb = np.array(c0_big, dtype=complex)
    cs = cb[..., idx].copy()
    nsteps = int(math.ceil(T / params.dt - 1e-9))

    def residual():
        diff = cb.copy()
        diff[..., idx] -= cs
        return np.sqrt(np.sum(weights * np.abs(diff) ** 2, axis=-1))

    worst = residual()
    for i in range(1, nsteps + 1):
        cs = prop_s.step(cs)
        cb = prop_b.step(cb)
        if i % stride == 0 or i == nsteps:
            check_finite(cb)
            check_finite(cs)
            worst = np.maximum(worst, residual())
    return worst
