"""Parabolic Cauchy problems with zero initial data.

Two backends solve

    du/dt = 1/2 a_ij d_ij u + g . grad u + h - lam u,    u(0, .) = 0,

channelwise for vector sources:

* :func:`solve_mild` (``a`` the identity) iterates the Duhamel fixed-point
  map on self-tuned sub-intervals, stepping with the exact heat semigroup.
* :func:`solve_fd` handles variable elliptic ``a`` with implicit Euler and
  centred differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .fields import FieldError, Grid, SpaceTimeField, lebesgue_holder_norm, slice_seminorm
from .heat_kernel import HeatStep, KernelQuadrature, centered_gradient

logger = logging.getLogger(__name__)

IDENTITY = "identity"


class SolverError(RuntimeError):
    """A PDE solve failed; ``residual`` holds the last measured residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


def theta_exponent(alpha: float, q: float) -> float:
    """Gradient Hoelder exponent ``1 + alpha - 2/q``; must be positive."""
    theta = 1.0 + alpha - 2.0 / q
    if theta <= 0:
        raise FieldError(
            f"(alpha={alpha}, q={q}) outside the admissible (alpha,q) region: theta={theta:.6g} <= 0"
        )
    return theta


def decay_exponent(alpha: float, q: float) -> tuple[float, float]:
    """Return ``(p1, eps)`` with ``p1 = 1/(1-alpha) + q/(2q-2)`` and
    ``eps = 1 - 1/q - 1/p1`` (the resolvent decay rate of the gradient)."""
    if not 0 < alpha < 1:
        raise FieldError("alpha must lie in (0, 1)")
    if not 2.0 / (1.0 + alpha) < q <= 2.0:
        raise FieldError(
            f"q={q} outside ({2 / (1 + alpha):.6g}, 2]; the decay formula needs q > 1"
        )
    p1 = 1.0 / (1.0 - alpha) + q / (2.0 * q - 2.0)
    return p1, 1.0 - 1.0 / q - 1.0 / p1


@dataclass
class ParabolicProblem:
    """Data of the Cauchy problem; ``g`` may be None for zero drift and ``a``
    may be :data:`IDENTITY`."""

    h: SpaceTimeField
    g: SpaceTimeField | None = None
    a: SpaceTimeField | str = IDENTITY
    damping: float = 0.0
    ellipticity: float = 1.0

    def __post_init__(self):
        grid = self.h.grid
        if self.damping < 0:
            raise FieldError("damping must be >= 0")
        if not 0 < self.ellipticity <= 1:
            raise FieldError("ellipticity constant must lie in (0, 1]")
        if self.g is not None:
            if self.g.grid != grid:
                raise FieldError("drift and source live on different grids")
            if self.g.channels != grid.d:
                raise FieldError("drift must have d channels")
        if not self.identity_diffusion:
            if self.a.grid != grid or self.a.channels != grid.d ** 2:
                raise FieldError("diffusion must be a d x d field on the source grid")

    @property
    def grid(self) -> Grid:
        return self.h.grid

    @property
    def identity_diffusion(self) -> bool:
        return isinstance(self.a, str) and self.a == IDENTITY

    def with_damping(self, lam: float) -> "ParabolicProblem":
        return replace(self, damping=float(lam))

    def check_ellipticity(self) -> None:
        """Raise :class:`SolverError` if ``a`` is not symmetric or violates
        ``Lam |xi|^2 <= a xi.xi <= |xi|^2 / Lam`` at any node."""
        if self.identity_diffusion:
            return
        d = self.grid.d
        mats = np.asarray(self.a.values).reshape(-1, d, d)
        if not np.allclose(mats, np.swapaxes(mats, 1, 2), atol=1e-12):
            raise SolverError("diffusion matrix is not symmetric")
        eig = np.linalg.eigvalsh(mats)
        lam = self.ellipticity
        if eig.min() < lam - 1e-12 or eig.max() > 1.0 / lam + 1e-12:
            raise SolverError(
                f"ellipticity violated: eigenvalues in [{eig.min():.4g}, {eig.max():.4g}], "
                f"required [{lam:.4g}, {1 / lam:.4g}]"
            )


@dataclass
class PdeSolution:
    """Solution ``u`` (``C`` channels) and its gradient (``C * d`` channels,
    channel ``c * d + i`` holding ``d u_c / d x_i``)."""

    u: SpaceTimeField
    grad_u: SpaceTimeField
    backend: str
    iterations: int
    residual: float
    damping: float = 0.0
    windows: list = field(default_factory=list)

    def grad_values(self) -> np.ndarray:
        """Gradient as ``(nt+1,) + grid.shape + (C, d)``."""
        g = self.u.grid
        return np.asarray(self.grad_u.values).reshape(
            self.grad_u.values.shape[:-1] + (self.u.channels, g.d)
        )

    def sup_grad(self) -> float:
        """``sup_{t,x}`` of the operator 2-norm of the Jacobian."""
        gv = self.grad_values()
        C, d = gv.shape[-2:]
        if C == 1 or d == 1:
            return float(np.sqrt(np.sum(gv * gv, axis=(-2, -1))).max())
        return float(np.linalg.norm(gv.reshape(-1, C, d), ord=2, axis=(1, 2)).max())

    def metadata(self) -> str:
        return (
            f"backend={self.backend}\nlambda={float(self.damping)!r}\n"
            f"iterations={self.iterations}\nresidual={float(self.residual)!r}\n"
        )


def _full(f: SpaceTimeField | None, k: int):
    return None if f is None else f.slice(k)


def _pack_solution(grid, u, grad, h, backend, iterations, residual, damping, windows=()):
    alpha, q = h.holder_alpha, h.q
    C = u.shape[-1]
    u_field = SpaceTimeField(grid, u, alpha, q)
    grad_field = SpaceTimeField(grid, grad.reshape(grad.shape[:-2] + (C * grid.d,)), alpha, q)
    return PdeSolution(u_field, grad_field, backend, iterations, residual, damping, list(windows))


def solve_mild(
    p: ParabolicProblem,
    tol: float = 1e-9,
    max_iter: int = 60,
    quad: KernelQuadrature | None = None,
) -> PdeSolution:
    """Picard iteration of the Duhamel map for ``a = I``.

    Starting from ``v0 = 0`` on ``[0, T]``, each window is iterated until the
    fixed-point residual ``sup |v - T v|`` (value and gradient) is at most
    ``tol``.  Whenever the measured contraction factor between successive
    iterates exceeds 1/2 the window is halved and restarted; accepted windows
    are chained, each starting from the end state of the previous one.
    """
    if not p.identity_diffusion:
        raise FieldError("solve_mild requires the identity diffusion; use solve_fd")
    grid = p.grid
    nt, d, C = grid.nt, grid.d, p.h.channels
    step = HeatStep(grid, grid.ht, p.damping, quad)
    u = np.zeros((nt + 1,) + grid.shape + (C,))
    grad = np.zeros((nt + 1,) + grid.shape + (C, d))

    def apply_map(k0, k1, v_grad, start_u):
        """Image of the iterate (through its gradient) on cells k0..k1-1."""
        out_u = np.empty((k1 - k0 + 1,) + u.shape[1:])
        out_g = np.empty((k1 - k0 + 1,) + grad.shape[1:])
        out_u[0], out_g[0] = start_u, grad_start
        cur = start_u
        for j, k in enumerate(range(k0, k1)):
            src = p.h.slice(k)
            if p.g is not None:
                gk = p.g.slice(k)
                src = src + np.einsum("...i,...ci->...c", gk, v_grad[j])
            pv, pg = step.propagate(cur)
            sv, sg = step.source(src)
            cur = pv + sv
            out_u[j + 1] = cur
            out_g[j + 1] = pg + sg
        if not (np.all(np.isfinite(out_u)) and np.all(np.isfinite(out_g))):
            raise SolverError("non-finite values in the mild iteration")
        return out_u, out_g

    k0, window = 0, nt
    total_iter, worst = 0, 0.0
    windows = []
    grad_start = grad[0]
    while k0 < nt:
        k1 = min(nt, k0 + window)
        grad_start = grad[k0]
        v_u = np.zeros((k1 - k0 + 1,) + u.shape[1:])
        v_g = np.zeros((k1 - k0 + 1,) + grad.shape[1:])
        prev_delta = None
        accepted = False
        for it in range(max_iter):
            new_u, new_g = apply_map(k0, k1, v_g, u[k0])
            delta = max(float(np.abs(new_u - v_u).max()), float(np.abs(new_g - v_g).max()))
            if it > 0 and delta <= tol:
                accepted = True
                break
            if prev_delta is not None and prev_delta > 0 and delta > 0.5 * prev_delta and k1 - k0 > 1:
                break
            prev_delta = delta
            v_u, v_g = new_u, new_g
        else:
            raise SolverError(
                f"Picard iteration did not reach tol={tol:g} in {max_iter} iterations "
                f"on cells [{k0}, {k1})", residual=delta)
        if not accepted:
            window = max(1, (k1 - k0) // 2)
            logger.debug("contraction factor > 1/2; halving window to %d cells", window)
            continue
        u[k0 + 1: k1 + 1] = v_u[1:]
        grad[k0 + 1: k1 + 1] = v_g[1:]
        total_iter += it
        worst = max(worst, delta)
        windows.append((k0, k1, it))
        k0 = k1
    return _pack_solution(grid, u, grad, p.h, "mild", total_iter, worst, p.damping, windows)


# -- finite differences -------------------------------------------------------


class _Stencil:
    """Clamped neighbour indices on the flattened grid (clamping realises the
    constant extension / homogeneous Neumann boundary)."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.index = np.arange(grid.num_nodes).reshape(grid.shape)
        self.multi = np.indices(grid.shape).reshape(grid.d, -1)

    def neighbour(self, offset) -> np.ndarray:
        n = self.grid.n
        idx = np.clip(self.multi + np.asarray(offset)[:, None], 0, n - 1)
        return np.ravel_multi_index(tuple(idx), self.grid.shape)


def _operator(stencil: _Stencil, a_mats, g_vecs, lam: float) -> sparse.csr_matrix:
    """Sparse matrix of ``1/2 a_ij d_ij + g . grad - lam`` at all nodes."""
    grid = stencil.grid
    N, d, hx = grid.num_nodes, grid.d, grid.hx
    rows, cols, vals = [], [], []
    me = np.arange(N)

    def add(target, coef):
        rows.append(me)
        cols.append(target)
        vals.append(np.broadcast_to(coef, (N,)))

    unit = np.eye(d, dtype=int)
    for i in range(d):
        plus, minus = stencil.neighbour(unit[i]), stencil.neighbour(-unit[i])
        c = 0.5 * a_mats[:, i, i] / hx ** 2
        add(plus, c)
        add(minus, c)
        add(me, -2.0 * c)
        if g_vecs is not None:
            c = g_vecs[:, i] / (2 * hx)
            add(plus, c)
            add(minus, -c)
        for j in range(i + 1, d):
            c = a_mats[:, i, j] / (4 * hx ** 2)
            add(stencil.neighbour(unit[i] + unit[j]), c)
            add(stencil.neighbour(-unit[i] - unit[j]), c)
            add(stencil.neighbour(unit[i] - unit[j]), -c)
            add(stencil.neighbour(-unit[i] + unit[j]), -c)
    add(me, -lam)
    return sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    ).tocsr()


def fd_gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Centred-difference gradient of ``(..., *grid.shape, C)`` data; the
    gradient axis is appended."""
    lead = u.ndim - grid.d - 1
    return np.stack([centered_gradient(u, grid, lead + i) for i in range(grid.d)], axis=-1)


def solve_fd(p: ParabolicProblem, grid: Grid | None = None, rtol: float = 1e-10) -> PdeSolution:
    """Implicit Euler with centred differences (4-point cross stencil for mixed
    derivatives); coefficients and source are taken on the left cell."""
    if grid is not None and grid != p.grid:
        raise FieldError("solve_fd grid differs from the problem grid")
    grid = p.grid
    p.check_ellipticity()
    nt, d, C, N = grid.nt, grid.d, p.h.channels, grid.num_nodes
    ht = grid.ht
    stencil = _Stencil(grid)
    eye = sparse.identity(N, format="csr")
    u = np.zeros((nt + 1, N, C))
    key, lu, M = None, None, None
    for k in range(nt):
        a_k = 0 if p.identity_diffusion else p.a.slice_index(k * ht)
        g_k = None if p.g is None else p.g.slice_index(k * ht)
        if (a_k, g_k) != key:
            if p.identity_diffusion:
                a_mats = np.broadcast_to(np.eye(d), (N, d, d))
            else:
                a_mats = np.asarray(p.a.slice(a_k)).reshape(N, d, d)
            g_vecs = None if p.g is None else np.asarray(p.g.slice(g_k)).reshape(N, d)
            M = (eye - ht * _operator(stencil, a_mats, g_vecs, p.damping)).tocsc()
            lu = spla.splu(M)
            key = (a_k, g_k)
        rhs = u[k] + ht * np.asarray(p.h.slice(k)).reshape(N, C)
        sol = lu.solve(rhs)
        res = float(np.abs(M @ sol - rhs).max())
        scale = max(1.0, float(np.abs(rhs).max()))
        if not np.isfinite(res) or res > rtol * scale:
            raise SolverError(f"linear solve failed at step {k}: residual {res:.3e}", residual=res)
        u[k + 1] = sol
    u = u.reshape((nt + 1,) + grid.shape + (C,))
    grad = fd_gradient(u, grid)
    return _pack_solution(grid, u, grad, p.h, "fd", nt, 0.0, p.damping)


def solve(p: ParabolicProblem, **kwargs) -> PdeSolution:
    """Dispatch: mild backend for ``a = I``, finite differences otherwise."""
    return solve_mild(p, **kwargs) if p.identity_diffusion else solve_fd(p)


# -- estimates ----------------------------------------------------------------


@dataclass
class ResolventReport:
    lambdas: np.ndarray
    sup_grad: np.ndarray
    slope: float | None
    intercept: float | None
    epsilon: float
    degenerate: bool

    def as_record(self) -> dict:
        return {
            "lambdas": list(map(float, self.lambdas)),
            "sup_grad": list(map(float, self.sup_grad)),
            "slope": self.slope,
            "theoretical_slope": -self.epsilon,
            "epsilon": self.epsilon,
            "degenerate": self.degenerate,
        }


def resolvent_decay(
    p: ParabolicProblem, lambdas: Sequence[float], backend: str = "auto", **solver_kw
) -> ResolventReport:
    """Solve at each damping and fit ``log sup |grad u|`` against ``log lam``."""
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size < 2 or np.any(lambdas <= 0) or np.any(np.diff(lambdas) <= 0):
        raise FieldError("need at least two increasing positive lambdas")
    _, eps = decay_exponent(p.h.holder_alpha, p.h.q)
    sups = []
    for lam in lambdas:
        pl = p.with_damping(lam)
        if backend == "fd" or (backend == "auto" and not pl.identity_diffusion):
            sol = solve_fd(pl)
        else:
            sol = solve_mild(pl, **solver_kw)
        sups.append(sol.sup_grad())
    sups = np.array(sups)
    if np.all(sups < 1e-12):
        return ResolventReport(lambdas, sups, None, None, eps, True)
    slope, intercept = np.polyfit(np.log(lambdas), np.log(sups), 1)
    return ResolventReport(lambdas, sups, float(slope), float(intercept), eps, False)


@dataclass
class SchauderReport:
    solution_norm: float
    data_norm: float
    ratio: float | None
    theta: float
    degenerate: bool


def c1theta_norm(sol: PdeSolution, theta: float, exhaustive: bool = False) -> float:
    """``sup_t (|u(t)|_0 + |grad u(t)|_0 + [grad u(t)]_theta)``."""
    g = sol.u.grid
    best = 0.0
    for k in range(g.nt + 1):
        uk = sol.u.slice(k)
        gk = sol.grad_u.slice(k)
        sup_u = float(np.abs(uk).max())
        sup_g = float(np.sqrt(np.sum(gk * gk, axis=-1)).max())
        semi = slice_seminorm(g, gk, theta, exhaustive) if sup_g > 0 else 0.0
        best = max(best, sup_u + sup_g + semi)
    return best


def schauder_check(sol: PdeSolution, p: ParabolicProblem, exhaustive: bool = False) -> SchauderReport:
    """Ratio of the ``C([0,T]; C^{1,theta})`` norm of the solution to the
    ``L^q(0,T; C^alpha)`` norm of the source."""
    theta = theta_exponent(p.h.holder_alpha, p.h.q)
    denom = lebesgue_holder_norm(p.h, exhaustive=exhaustive)
    num = c1theta_norm(sol, theta, exhaustive)
    if denom == 0.0:
        return SchauderReport(num, 0.0, None, theta, True)
    return SchauderReport(num, denom, num / denom, theta, False)


def damped_cosine_multiplier(t, k: float, lam: float) -> np.ndarray:
    """``int_0^t exp(-lam r) exp(-k^2 r / 2) dr``: the factor multiplying
    ``cos(k x)`` in the solution with source ``cos(k x)``, ``g = 0``."""
    t = np.asarray(t, dtype=float)
    rate = lam + 0.5 * k * k
    if rate == 0:
        return t.copy()
    return -np.expm1(-rate * t) / rate
