"""The drift-removing change of variables ``Phi(t, x) = x + U(T - t, x)``.

``U`` solves the backward Kolmogorov-type system

    dU/dt = 1/2 a_ij(T-t) d_ij U + b(T-t) . grad U - lam U + b(T-t),  U(0) = 0,

and ``lam`` is chosen by a doubling search until ``sup |grad U| < 1/2 - margin``.
Under that certificate ``Phi(t, .)`` is a bi-Lipschitz homeomorphism and
``Y = Phi(t, X)`` solves an SDE whose drift ``lam U`` is as regular as ``U``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import FieldError, SpaceTimeField, write_field
from .pde_solver import IDENTITY, ParabolicProblem, PdeSolution, SolverError, solve_fd, solve_mild

logger = logging.getLogger(__name__)

GRADIENT_TARGET = 0.5
DEFAULT_MARGIN = 0.05
LAMBDA_MAX = 2.0 ** 20


class CertificateError(RuntimeError):
    """The gradient bound on ``U`` could not be established or was violated."""


def diffusion_from_sigma(sigma: SpaceTimeField | None):
    """``a = sigma sigma^T`` as a field, or :data:`IDENTITY` when ``sigma`` is
    the constant identity (or None)."""
    if sigma is None:
        return IDENTITY
    d = sigma.grid.d
    if sigma.channels != d * d:
        raise FieldError("sigma must be a d x d field")
    if sigma.is_constant and np.array_equal(sigma.constant_value, np.eye(d).ravel()):
        return IDENTITY
    s = np.asarray(sigma.values).reshape(sigma.values.shape[:-1] + (d, d))
    a = np.einsum("...ik,...jk->...ij", s, s)
    return sigma.with_values(a.reshape(a.shape[:-2] + (d * d,)))


def build_U(b: SpaceTimeField, a=IDENTITY, lam: float = 1.0, **solver_kw) -> PdeSolution:
    """Solve for ``U`` at damping ``lam``; channels of ``b`` are solved with the
    common drift ``b(T - .)``.  The mild backend is used for ``a = I``."""
    if b.channels != b.grid.d:
        raise FieldError("drift must have d channels")
    if lam < 0:
        raise FieldError("lambda must be >= 0")
    rb = b.time_reversed()
    if isinstance(a, str):
        if a != IDENTITY:
            raise FieldError(f"unknown diffusion marker {a!r}")
        ra = IDENTITY
    else:
        ra = a.time_reversed()
    p = ParabolicProblem(h=rb, g=rb, a=ra, damping=lam, **solver_kw.pop("problem_kw", {}))
    if p.identity_diffusion:
        return solve_mild(p, **solver_kw)
    return solve_fd(p)


@dataclass
class ZvonkinTransform:
    """A certified transform; immutable once built."""

    U: SpaceTimeField
    grad_U: SpaceTimeField
    lam: float
    sup_grad_U: float
    margin: float = DEFAULT_MARGIN
    solution: PdeSolution | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise FieldError("lambda must be positive")

    @classmethod
    def from_solution(cls, sol: PdeSolution, margin: float = DEFAULT_MARGIN, check: bool = True):
        sup = sol.sup_grad()
        z = cls(sol.u, sol.grad_u, sol.damping, sup, margin, sol)
        if check and not z.certified:
            raise CertificateError(
                f"sup |grad U| = {sup:.4g} not below {GRADIENT_TARGET - margin:.4g} at lambda={sol.damping:g}"
            )
        return z

    @property
    def grid(self):
        return self.U.grid

    @property
    def T(self) -> float:
        return self.U.grid.T

    @property
    def d(self) -> int:
        return self.U.grid.d

    @property
    def certified(self) -> bool:
        return self.sup_grad_U < GRADIENT_TARGET - self.margin

    def certificate(self) -> dict:
        return {"lambda": float(self.lam), "sup_grad_U": float(self.sup_grad_U), "margin": float(self.margin)}

    def certificate_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.certificate().items())

    def _check_time(self, t: float) -> float:
        if not -1e-12 <= t <= self.T * (1 + 1e-12):
            raise FieldError(f"t={t} outside [0, T={self.T}]")
        return min(max(self.T - t, 0.0), self.T)

    def U_at(self, t: float, x) -> np.ndarray:
        """``U(T - t, x)``, shape ``(..., d)``."""
        return self.U.evaluate(self._check_time(t), x)

    def grad_U_at(self, t: float, x) -> np.ndarray:
        """``grad U(T - t, x)`` as ``(..., d, d)`` with entry ``[c, i] = d_i U_c``."""
        return self.grad_U.evaluate_matrix(self._check_time(t), x)

    def export(self, directory: str | Path) -> list[Path]:
        """Write ``U``, ``grad_U`` and the certificate record."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        cert = out / "certificate.txt"
        cert.write_text(self.certificate_text())
        return [write_field(self.U, out / "U.csv"), write_field(self.grad_U, out / "grad_U.csv"), cert]


def select_lambda(
    b: SpaceTimeField,
    a=IDENTITY,
    lam0: float = 1.0,
    margin: float = DEFAULT_MARGIN,
    lam_max: float = LAMBDA_MAX,
    history: list | None = None,
    **solver_kw,
) -> ZvonkinTransform:
    """Double ``lam`` from ``lam0`` until ``sup |grad U| < 1/2 - margin``.

    ``history``, if given, receives ``(lam, sup |grad U|)`` per attempt.
    """
    if not 0 <= margin < GRADIENT_TARGET:
        raise FieldError("margin must lie in [0, 1/2)")
    lam = float(lam0)
    while lam <= lam_max:
        sol = build_U(b, a, lam, **solver_kw)
        sup = sol.sup_grad()
        logger.info("lambda=%g sup|grad U|=%.6g", lam, sup)
        if history is not None:
            history.append((lam, sup))
        if sup < GRADIENT_TARGET - margin:
            return ZvonkinTransform.from_solution(sol, margin)
        lam *= 2.0
    raise CertificateError(f"resolvent decay not observed: sup |grad U| >= {GRADIENT_TARGET - margin} up to lambda={lam_max:g}")


def phi(z: ZvonkinTransform, t: float, x) -> np.ndarray:
    """``Phi(t, x) = x + U(T - t, x)``; ``x`` is ``(..., d)`` (plain points in 1-d)."""
    x = _points(x, z.d)
    return x + z.U_at(t, x)


def psi(z: ZvonkinTransform, t: float, y, tol: float | None = None, max_iter: int = 100) -> np.ndarray:
    """Inverse of :func:`phi` by the fixed-point iteration ``x <- y - U(T - t, x)``."""
    y = _points(y, z.d)
    tol = z.grid.hx * 1e-6 if tol is None else tol
    x = y.copy()
    for _ in range(max_iter):
        nxt = y - z.U_at(t, x)
        step = np.max(np.abs(nxt - x)) if x.size else 0.0
        x = nxt
        if step < tol:
            return x
    raise CertificateError(f"inverse iteration did not converge in {max_iter} steps (last step {step:.3e})")


def transformed_coeffs(z: ZvonkinTransform, sigma: SpaceTimeField | None, t: float, y):
    """Drift ``lam U(T-t, x)`` and diffusion ``(I + grad U(T-t, x)) sigma(t, x)``
    at ``x = Psi(t, y)``; returns ``(..., d)`` and ``(..., d, d)`` arrays."""
    x = psi(z, t, y)
    drift = z.lam * z.U_at(t, x)
    J = z.grad_U_at(t, x)
    J = J + np.eye(z.d)
    if sigma is None:
        return drift, J
    return drift, J @ sigma.evaluate_matrix(t, x)


def _points(x, d: int) -> np.ndarray:
    x = np.array(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != d:
        raise FieldError(f"points must have trailing dimension {d}")
    return x


__all__ = [
    "CertificateError",
    "SolverError",
    "ZvonkinTransform",
    "build_U",
    "diffusion_from_sigma",
    "phi",
    "psi",
    "select_lambda",
    "transformed_coeffs",
]
