"""Spectral eigenbases of the Laplacian on the d-torus and the radial unit ball.

Coefficient arrays carry the mode index on their last axis; nodal arrays carry
the quadrature nodes on their last axis (ball) or last ``d`` axes (torus, one
axis per grid direction).  Any number of leading batch axes is allowed, so a
whole ensemble of fields is transformed in one call.

All integrals use the normalized Lebesgue measure ``dL`` (total mass 1), so
the eigenfunctions satisfy ``int e_m conj(e_n) dL = delta_mn``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
import itertools
import math

import numpy as np
import scipy.fft
from scipy import special

from .errors import BesselRootFailure, UnsupportedDomainDim


class Domain(str, Enum):
    TORUS = "torus"
    BALL = "ball"


SUPPORTED = {Domain.TORUS: (1, 2, 3), Domain.BALL: (2, 3)}


def bessel_j0_zeros(n, tol=1e-13, maxiter=50):
    """First ``n`` positive zeros of J0.

    McMahon's expansion seeds a Newton iteration on J0 with derivative -J1.
    Raises :class:`BesselRootFailure` if a root does not settle to ``tol``
    (relative to max(1, root)) or the roots come out out of order.
    """
    k = np.arange(1, n + 1, dtype=float)
    beta = (k - 0.25) * np.pi
    x = beta + 1 / (8 * beta) - 124 / (3 * (8 * beta) ** 3) + 120928 / (15 * (8 * beta) ** 5)
    for _ in range(maxiter):
        dx = special.j0(x) / special.j1(x)
        x = x + dx
        if np.all(np.abs(dx) <= tol * np.maximum(1.0, x)):
            break
    else:
        bad = int(np.argmax(np.abs(dx) / np.maximum(1.0, x)))
        raise BesselRootFailure(f"J0 root {bad + 1} did not converge (last step {dx[bad]:.3e})")
    if np.any(np.diff(x) <= 0) or (n and abs(x[0] - 2.404825557695773) > 1e-12):
        raise BesselRootFailure("J0 roots out of order; Newton jumped to a neighbouring root")
    return x


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and positive weights summing to one.

    For the torus ``nodes`` has shape ``(M,) * d + (d,)`` (a tensor grid);
    for the ball it is the vector of radii.
    """

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self):
        return self.weights.size


def _torus_modes(d, K):
    rng = range(-K, K + 1)
    ks = [k for k in itertools.product(rng, repeat=d) if sum(x * x for x in k) <= K * K]
    ks.sort(key=lambda k: (sum(x * x for x in k), k))
    return np.array(ks, dtype=int).reshape(-1, d)


def _ball_eigenfunctions(d, z, r):
    """Matrix of e_n(r_j), shape (len(r), len(z)), normalized in L^2(dL)."""
    r = np.asarray(r, dtype=float)[:, None]
    if d == 3:
        n = np.round(z / np.pi)[None, :]
        # sin(n pi r)/r written through sinc to stay finite at r = 0
        return math.sqrt(2.0 / 3.0) * n * np.pi * np.sinc(n * r)
    return special.j0(z[None, :] * r) / np.abs(special.j1(z))[None, :]


@dataclass(frozen=True, eq=False)
class Basis:
    """Truncated eigenbasis for one domain.

    ``N`` is the truncation parameter.  On the ball it is the number of
    radial modes.  On the torus it is the frequency cutoff K: every integer
    vector k with |k| <= K is kept, the constant mode k = 0 included, so
    ``n_modes`` exceeds ``N`` there.  ``z`` holds sqrt of the Laplacian
    eigenvalue of each retained mode, non-decreasing; ``levels`` lists the
    distinct values.
    """

    domain: Domain
    d: int
    N: int
    z: np.ndarray
    quad: QuadratureRule
    modes: np.ndarray | None = None
    grid_size: int | None = None

    @property
    def n_modes(self):
        return self.z.size

    @cached_property
    def levels(self):
        return np.unique(self.z)

    @property
    def node_axes(self):
        return tuple(range(-self.d, 0)) if self.domain is Domain.TORUS else (-1,)

    @property
    def node_shape(self):
        if self.domain is Domain.TORUS:
            return (self.grid_size,) * self.d
        return (self.quad.size,)

    @cached_property
    def _flat_index(self):
        return np.ravel_multi_index(tuple((self.modes % self.grid_size).T), self.node_shape)

    @cached_property
    def eigenmatrix(self):
        """e_n evaluated at the quadrature nodes, shape ``node_shape + (n_modes,)``."""
        if self.domain is Domain.BALL:
            return _ball_eigenfunctions(self.d, self.z, self.quad.nodes)
        x = self.quad.nodes
        return np.exp(1j * np.tensordot(x, self.modes.T, axes=(-1, 0)))

    def mode_index(self, k):
        """Position of a torus frequency vector (or int in d = 1) in the coefficient array."""
        k = np.atleast_1d(np.asarray(k, dtype=int))
        hits = np.flatnonzero(np.all(self.modes == k, axis=1))
        if hits.size == 0:
            raise KeyError(f"mode {tuple(k)} is not retained")
        return int(hits[0])

    def eigenfunctions_at(self, r):
        """Ball only: e_n at arbitrary radii, shape (len(r), n_modes)."""
        if self.domain is not Domain.BALL:
            raise UnsupportedDomainDim("pointwise evaluation off the grid is only provided for the ball")
        return _ball_eigenfunctions(self.d, self.z, r)

    def synthesize(self, c):
        """Coefficients -> values at the quadrature nodes."""
        c = np.asarray(c)
        if c.shape[-1] != self.n_modes:
            raise ValueError(f"expected {self.n_modes} coefficients, got {c.shape[-1]}")
        if self.domain is Domain.BALL:
            return c @ self.eigenmatrix.T
        batch = c.shape[:-1]
        full = np.zeros(batch + (self.grid_size**self.d,), dtype=complex)
        full[..., self._flat_index] = c
        full = full.reshape(batch + self.node_shape)
        return scipy.fft.ifftn(full, axes=self.node_axes, norm="forward")

    def analyze(self, v):
        """Nodal values -> coefficients, c_n = sum_j w_j v_j conj(e_n(x_j))."""
        v = np.asarray(v)
        if v.shape[v.ndim - len(self.node_shape):] != self.node_shape:
            raise ValueError(f"expected nodal shape {self.node_shape}, got {v.shape}")
        if self.domain is Domain.BALL:
            return (v * self.quad.weights) @ self.eigenmatrix
        batch = v.shape[: v.ndim - self.d]
        vh = scipy.fft.fftn(v, axes=self.node_axes, norm="forward")
        return vh.reshape(batch + (-1,))[..., self._flat_index]

    def integrate(self, f):
        """Quadrature of nodal values against dL, reducing the node axes."""
        f = np.asarray(f)
        if self.domain is Domain.BALL:
            return f @ self.quad.weights
        return f.mean(axis=self.node_axes)

    def lp_norm(self, v, p):
        return self.integrate(np.abs(v) ** p) ** (1.0 / p)

    def frac_symbol(self, gamma):
        """Diagonal multiplier z_n^(2 gamma) of (-Delta)^gamma."""
        return self.z ** (2.0 * gamma)

    def sobolev_weights(self, s, homogeneous=False):
        if homogeneous:
            return self.z ** (2.0 * s)
        return (1.0 + self.z**2) ** s

    def mode_map(self, other):
        """Indices into ``other`` of this basis' modes (other must contain them)."""
        if self.domain is not other.domain or self.d != other.d:
            raise ValueError("bases live on different domains")
        if self.domain is Domain.BALL:
            if other.n_modes < self.n_modes:
                raise ValueError("target basis is smaller")
            return np.arange(self.n_modes)
        lookup = {tuple(k): i for i, k in enumerate(other.modes)}
        try:
            return np.array([lookup[tuple(k)] for k in self.modes], dtype=int)
        except KeyError as exc:
            raise ValueError(f"mode {exc.args[0]} missing from target basis") from None

    def embed(self, c, other):
        """Zero-extend coefficients into a larger basis."""
        c = np.asarray(c)
        out = np.zeros(c.shape[:-1] + (other.n_modes,), dtype=complex)
        out[..., self.mode_map(other)] = c
        return out

    def restrict(self, c, other):
        """Orthogonal projection of coefficients from ``self`` onto the smaller ``other``."""
        return np.asarray(c)[..., other.mode_map(self)]

    def refined(self, factor):
        """Same modes, ``factor`` times as many quadrature nodes per direction."""
        if self.domain is Domain.TORUS:
            return build_basis(self.domain, self.d, self.N, grid_size=factor * self.grid_size)
        return build_basis(self.domain, self.d, self.N, quad_nodes=factor * self.quad.size)

    def __repr__(self):
        return (f"Basis(domain={self.domain.value}, d={self.d}, N={self.N}, "
                f"n_modes={self.n_modes}, nodes={self.quad.size})")


def default_ball_nodes(N):
    # products of four eigenfunctions oscillate at up to 4 N pi on (0, 1)
    return 4 * N + 16


def default_torus_grid(K):
    # quartic products reach frequency 4K; 4K + 1 points resolve them exactly
    return scipy.fft.next_fast_len(4 * K + 2)


def build_basis(domain, d, N, *, quad_nodes=None, grid_size=None):
    """Construct the truncated eigenbasis and its quadrature rule.

    Parameters
    ----------
    domain : Domain or str
        ``"torus"`` (d = 1, 2, 3) or ``"ball"`` (radial, d = 2, 3).
    N : int
        Number of radial modes (ball) or frequency cutoff K (torus).
    quad_nodes, grid_size : int, optional
        Override the number of Gauss-Legendre radii (ball, at least 2N + 8)
        or grid points per axis (torus, at least 3(2N + 1)/2).
    """
    domain = Domain(domain)
    if d not in SUPPORTED[domain]:
        raise UnsupportedDomainDim(f"{domain.value} supports d in {SUPPORTED[domain]}, got d={d}")
    if N < 1:
        raise ValueError("N must be >= 1")

    if domain is Domain.BALL:
        M = quad_nodes or default_ball_nodes(N)
        if M < 2 * N + 8:
            raise ValueError(f"ball quadrature needs at least 2N+8 = {2 * N + 8} nodes")
        z = np.pi * np.arange(1, N + 1) if d == 3 else bessel_j0_zeros(N)
        x, wx = np.polynomial.legendre.leggauss(M)
        r = 0.5 * (x + 1.0)
        w = 0.5 * wx * d * r ** (d - 1)
        return Basis(domain, d, N, z, QuadratureRule(r, w))

    modes = _torus_modes(d, N)
    M = grid_size or default_torus_grid(N)
    if 2 * M < 3 * (2 * N + 1):
        raise ValueError("torus grid must have at least 3/2 points per retained frequency")
    x1 = 2 * np.pi * np.arange(M) / M
    nodes = np.stack(np.meshgrid(*([x1] * d), indexing="ij"), axis=-1)
    weights = np.full((M,) * d, 1.0 / M**d)
    z = np.sqrt((modes**2).sum(axis=1).astype(float))
    return Basis(domain, d, N, z, QuadratureRule(nodes, weights), modes=modes, grid_size=M)


def smooth_random_coeffs(basis, rng, decay=3.0, amplitude=1.0, size=None):
    """Random complex coefficients zeta_n <z_n>^(-decay), zeta_n standard complex normal."""
    shape = (() if size is None else (size,) if np.isscalar(size) else tuple(size)) + (basis.n_modes,)
    zeta = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    return amplitude * zeta * (1.0 + basis.z**2) ** (-decay / 2.0)


def orthonormality_defect(basis):
    """max |G - I| with G_mn = sum_j w_j e_m(x_j) conj(e_n(x_j))."""
    E = basis.eigenmatrix.reshape(-1, basis.n_modes)
    w = basis.quad.weights.reshape(-1)
    G = (E * w[:, None]).T @ E.conj()
    return float(np.max(np.abs(G - np.eye(basis.n_modes))))


def lp_slope(d, p, N, n_min=8):
    """Least-squares slope of log ||e_n||_{L^p} against log n, n in [n_min, N].

    Uses a Gauss-Legendre rule fine enough for |e_N|^p (about p N / 2
    oscillations), independent of the dynamics quadrature.
    """
    basis = build_basis(Domain.BALL, d, N, quad_nodes=int(p * N + 64))
    norms = basis.lp_norm(basis.eigenmatrix.T, p)
    n = np.arange(1, N + 1)
    sel = n >= n_min
    slope, _ = np.polyfit(np.log(n[sel]), np.log(norms[sel]), 1)
    return float(slope), norms
