"""Gaussian heat kernel, its gradient, and the singular Duhamel quadrature.

Convolutions are separable (one 1-d pass per axis) with constant extension
beyond the box.  Discrete kernels are sampled on the grid and normalised to
unit mass, which keeps constants exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .fields import FieldError, Grid, SpaceTimeField

_WIDTH_SIGMAS = 8.0


@dataclass(frozen=True)
class KernelQuadrature:
    """Discretisation of the ``r``-integral in the Duhamel formula.

    Below ``r_min`` the kernel acts as the identity.  Above it the integral
    is taken in ``s = sqrt(r)`` with Gauss-Legendre panels.
    """

    r_min: float
    nodes_per_unit: int = 64
    panel_order: int = 8

    def __post_init__(self):
        if not self.r_min > 0:
            raise FieldError("r_min must be positive")
        if self.nodes_per_unit < 8 or self.panel_order < 1:
            raise FieldError("need at least 8 quadrature nodes per unit time")

    @classmethod
    def for_grid(cls, grid: Grid, nodes_per_unit: int = 64) -> "KernelQuadrature":
        return cls(r_min=grid.hx ** 2 / 4.0, nodes_per_unit=nodes_per_unit)

    def s_nodes(self, s0: float, s1: float, count: int | None = None):
        """Composite Gauss-Legendre nodes and weights on ``[s0, s1]``."""
        if s1 <= s0:
            return np.empty(0), np.empty(0)
        if count is None:
            count = max(self.panel_order, int(math.ceil(self.nodes_per_unit * (s1 * s1 - s0 * s0))))
        panels = max(1, int(math.ceil(count / self.panel_order)))
        x, w = np.polynomial.legendre.leggauss(self.panel_order)
        edges = np.linspace(s0, s1, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        weights = (half[:, None] * w[None, :]).ravel()
        return nodes, weights


def gauss_kernel(r: float, x, d: int) -> np.ndarray:
    """``K(r, x) = (2 pi r)^(-d/2) exp(-|x|^2 / (2 r))``; ``x`` is ``(..., d)``
    (plain points accepted for ``d == 1``)."""
    if not r > 0:
        raise FieldError(f"kernel time must be positive, got r={r}")
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    r2 = np.sum(x * x, axis=-1)
    return (2 * math.pi * r) ** (-d / 2) * np.exp(-r2 / (2 * r))


def _half_width(hx: float, r: float) -> int:
    return max(1, int(math.ceil(_WIDTH_SIGMAS * math.sqrt(r) / hx)))


def kernel_weights(hx: float, r: float) -> tuple[np.ndarray, np.ndarray]:
    """1-d value and derivative weights for ``K(r, .)`` on spacing ``hx``.

    Both share the mass normalisation of the sampled Gaussian.  The
    derivative weights sample ``-(x/r) K(r, x)``.
    """
    J = _half_width(hx, r)
    x = np.arange(-J, J + 1) * hx
    g = np.exp(-x * x / (2 * r))
    mass = g.sum()
    return g / mass, (-x / r) * g / mass


def _spatial_axes(F: np.ndarray, grid: Grid) -> range:
    if F.shape[: grid.d] != grid.shape:
        raise FieldError(f"slice shape {F.shape} does not match grid {grid.shape}")
    return range(grid.d)


def kernel_convolve(F: np.ndarray, grid: Grid, r: float) -> np.ndarray:
    """Convolve a slice (``grid.shape`` plus optional trailing axes) with the
    heat kernel at time ``r``."""
    if not r > 0:
        raise FieldError(f"kernel time must be positive, got r={r}")
    w, _ = kernel_weights(grid.hx, r)
    out = np.asarray(F, dtype=float)
    for ax in _spatial_axes(out, grid):
        out = ndimage.convolve1d(out, w, axis=ax, mode="nearest")
    return out


def kernel_grad_convolve(F: np.ndarray, grid: Grid, r: float, i: int) -> np.ndarray:
    """Convolve a slice with ``d/dx_i K(r, .)``."""
    if not r > 0:
        raise FieldError(f"kernel time must be positive, got r={r}")
    if not 0 <= i < grid.d:
        raise FieldError(f"axis {i} out of range for d={grid.d}")
    w, dw = kernel_weights(grid.hx, r)
    out = np.asarray(F, dtype=float)
    for ax in _spatial_axes(out, grid):
        out = ndimage.convolve1d(out, dw if ax == i else w, axis=ax, mode="nearest")
    return out


def centered_gradient(F: np.ndarray, grid: Grid, i: int) -> np.ndarray:
    """Centred difference along axis ``i`` with constant extension (so the
    boundary row uses half the one-sided slope)."""
    return ndimage.convolve1d(
        np.asarray(F, dtype=float),
        np.array([1.0, 0.0, -1.0]) / (2 * grid.hx),
        axis=i,
        mode="nearest",
    )


def _damped_identity_mass(r1: float, damping: float) -> float:
    """``int_0^r1 exp(-damping r) dr``."""
    if damping == 0.0:
        return r1
    return -math.expm1(-damping * r1) / damping


def duhamel(
    F: SpaceTimeField,
    t: float,
    quad: KernelQuadrature | None = None,
    gradient: bool = False,
    damping: float = 0.0,
) -> np.ndarray:
    """``int_0^t exp(-damping r) (K(r) * F(t-r))(x) dr`` by direct quadrature.

    Returns ``grid.shape + (C,)``, or ``grid.shape + (C, d)`` when
    ``gradient`` is set.  Time-independent sources use Gauss-Legendre panels
    in ``s = sqrt(r)``; time-dependent ones split the integral at the cell
    boundaries of ``F`` so each piece sees a constant source.
    """
    g = F.grid
    if t > g.T * (1 + 1e-12) or t < 0:
        raise FieldError(f"t={t} outside [0, T={g.T}]")
    if damping < 0:
        raise FieldError("damping must be >= 0")
    quad = quad or KernelQuadrature.for_grid(g)
    C, d = F.channels, g.d
    shape = g.shape + ((C, d) if gradient else (C,))
    out = np.zeros(shape)
    if t == 0:
        return out

    def src(r):
        return F.at(max(t - r, 0.0))

    def apply(r, weight, Fs):
        if gradient:
            return weight * np.stack([kernel_grad_convolve(Fs, g, r, i) for i in range(d)], axis=-1)
        return weight * kernel_convolve(Fs, g, r)

    r_id = min(quad.r_min, t)
    Fs = src(0.5 * r_id)
    m0 = _damped_identity_mass(r_id, damping)
    if gradient:
        out += m0 * np.stack([centered_gradient(Fs, g, i) for i in range(d)], axis=-1)
    else:
        out += m0 * Fs
    if t <= quad.r_min:
        return out

    s0, s1 = math.sqrt(quad.r_min), math.sqrt(t)
    if F.static:
        pieces = [(s0, s1, None)]
    else:
        # breakpoints r = t - t_j inside (r_min, t)
        tj = g.times[(g.times < t - quad.r_min) & (g.times > 0)]
        rb = np.sort(np.concatenate([[quad.r_min, t], t - tj]))
        sb = np.sqrt(rb)
        pieces = [(a, b, 2) for a, b in zip(sb[:-1], sb[1:]) if b > a]
    for a, b, count in pieces:
        nodes, weights = quad.s_nodes(a, b, count)
        for s, w in zip(nodes, weights):
            r = s * s
            wt = w * 2 * s * math.exp(-damping * r)
            out += apply(r, wt, src(r))
    return out


class HeatStep:
    """One time step ``dt`` of the damped heat semigroup with a source that is
    constant over the step:

    ``u(t+dt) = e^{-lam dt} K(dt) * u(t) + int_0^dt e^{-lam r} K(r) dr * F``.

    The source integral uses the identity below ``r_min`` and Gauss-Legendre
    in ``s = sqrt(r)`` above it.
    """

    def __init__(self, grid: Grid, dt: float, damping: float = 0.0,
                 quad: KernelQuadrature | None = None):
        if damping < 0:
            raise FieldError("damping must be >= 0")
        self.grid, self.dt, self.damping = grid, dt, damping
        quad = quad or KernelQuadrature.for_grid(grid)
        decay = math.exp(-damping * dt)
        w, dw = kernel_weights(grid.hx, dt)
        self._prop = (decay * w, decay * dw, w)
        r_id = min(quad.r_min, dt)
        self._id_mass = _damped_identity_mass(r_id, damping)
        terms = []
        if dt > quad.r_min:
            nodes, weights = quad.s_nodes(math.sqrt(quad.r_min), math.sqrt(dt),
                                          max(quad.panel_order, 16))
            for s, wq in zip(nodes, weights):
                r = s * s
                terms.append((wq * 2 * s * math.exp(-damping * r), r))
        self._terms = terms
        if grid.d == 1:
            self._merge_1d()

    def _merge_1d(self):
        hx = self.grid.hx
        J = max([_half_width(hx, r) for _, r in self._terms] + [1])
        val = np.zeros(2 * J + 1)
        der = np.zeros(2 * J + 1)
        val[J] += self._id_mass
        der[J - 1] += self._id_mass / (2 * hx)
        der[J + 1] -= self._id_mass / (2 * hx)
        for c, r in self._terms:
            w, dw = kernel_weights(hx, r)
            j = (len(w) - 1) // 2
            val[J - j: J + j + 1] += c * w
            der[J - j: J + j + 1] += c * dw
        self._src1d = (val, der)

    def _sep(self, F, weights_val, weights_der, i=None):
        out = F
        for ax in range(self.grid.d):
            wts = weights_der if ax == i else weights_val
            out = ndimage.convolve1d(out, wts, axis=ax, mode="nearest")
        return out

    def propagate(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Homogeneous part: value and gradient (gradient axis appended last)."""
        wv, wd, _ = self._prop
        val = self._sep(u, wv, wd)
        grad = np.stack([self._sep(u, wv, wd, i) for i in range(self.grid.d)], axis=-1)
        return val, grad

    def source(self, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Source part: value and gradient of ``int_0^dt e^{-lam r} K(r) dr * F``."""
        g = self.grid
        if g.d == 1:
            val, der = self._src1d
            return (ndimage.convolve1d(F, val, axis=0, mode="nearest"),
                    ndimage.convolve1d(F, der, axis=0, mode="nearest")[..., None])
        val = self._id_mass * F
        grad = self._id_mass * np.stack([centered_gradient(F, g, i) for i in range(g.d)], axis=-1)
        for c, r in self._terms:
            w, dw = kernel_weights(g.hx, r)
            val = val + c * self._sep(F, w, dw)
            grad = grad + c * np.stack([self._sep(F, w, dw, i) for i in range(g.d)], axis=-1)
        return val, grad
