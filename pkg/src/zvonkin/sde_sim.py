"""Reproducible Euler-Maruyama ensembles on shared Brownian noise.

Every path ``k`` draws its increments from a counter-based Philox stream
keyed by ``(seed, k)``, so results do not depend on block size, worker count
or how many other paths are simulated.  Coarser time steps are obtained by
summing consecutive fine increments, so refinement studies share one
Brownian path per sample.
"""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .fields import FieldError, Mollifier, SpaceTimeField, mollify, power_cell_average
from .transform import ZvonkinTransform, phi, psi, transformed_coeffs

logger = logging.getLogger(__name__)

WORKERS_ENV = "ZVONKIN_WORKERS"
DEFAULT_BLOCK = 2000
DEFAULT_BUDGET_BYTES = 2 * 1024 ** 3


class SimulationError(RuntimeError):
    """Non-finite state, inconsistent inputs or memory budget exceeded."""


def worker_count() -> int:
    """Worker threads for path blocks, from ``ZVONKIN_WORKERS`` (default 1)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise SimulationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


# -- noise --------------------------------------------------------------------


@dataclass(frozen=True)
class BrownianEnsemble:
    """``N`` independent ``d``-dimensional Brownian paths on ``[0, T]``.

    ``base_dt`` is the resolution at which increments are drawn; ``factor``
    consecutive base increments are summed per step, so ``dt = factor *
    base_dt``.
    """

    d: int
    T: float
    base_dt: float
    N: int
    seed: int
    factor: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise SimulationError("dimension must be >= 1")
        if not self.base_dt > 0 or self.base_dt > self.T * (1 + 1e-12):
            raise SimulationError(f"need 0 < dt <= T, got dt={self.base_dt}, T={self.T}")
        if self.N < 1:
            raise SimulationError("need at least one path")
        if not 0 <= self.seed < 2 ** 63:
            raise SimulationError("seed must be a non-negative 63-bit integer")
        n = self.T / self.base_dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise SimulationError(f"dt={self.base_dt} does not divide T={self.T}")
        if self.factor < 1 or round(n) % self.factor:
            raise SimulationError(f"coarsening factor {self.factor} does not divide {round(n)} steps")

    @property
    def dt(self) -> float:
        return self.base_dt * self.factor

    @property
    def n_steps(self) -> int:
        return round(self.T / self.base_dt) // self.factor

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def coarsen(self, factor: int) -> "BrownianEnsemble":
        """The same paths sampled with a step ``factor`` times larger."""
        return BrownianEnsemble(self.d, self.T, self.base_dt, self.N, self.seed, self.factor * factor)

    def with_paths(self, N: int) -> "BrownianEnsemble":
        return BrownianEnsemble(self.d, self.T, self.base_dt, N, self.seed, self.factor)

    def generator(self, k: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=np.array([self.seed, k], dtype=np.uint64)))

    def increments(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Increments of paths ``start..stop-1``, shape ``(M, n_steps, d)``."""
        stop = self.N if stop is None else stop
        if not 0 <= start <= stop <= self.N:
            raise SimulationError(f"path range [{start}, {stop}) outside [0, {self.N})")
        nb = self.n_steps * self.factor
        scale = np.sqrt(self.base_dt)
        out = np.empty((stop - start, nb, self.d))
        for j, k in enumerate(range(start, stop)):
            out[j] = self.generator(k).standard_normal((nb, self.d))
        out *= scale
        if self.factor > 1:
            out = out.reshape(stop - start, self.n_steps, self.factor, self.d).sum(axis=2)
        return out

    def paths(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Cumulative paths ``W``, shape ``(M, n_steps + 1, d)``, ``W_0 = 0``."""
        inc = self.increments(start, stop)
        W = np.zeros((inc.shape[0], inc.shape[1] + 1, self.d))
        np.cumsum(inc, axis=1, out=W[:, 1:])
        return W

    def checksum(self, block: int = DEFAULT_BLOCK) -> str:
        """sha256 of the increment stream in (path, step, coordinate) order."""
        h = hashlib.sha256()
        for s in range(0, self.N, block):
            h.update(np.ascontiguousarray(self.increments(s, min(self.N, s + block))).tobytes())
        return h.hexdigest()

    def metadata(self) -> dict:
        return {"d": self.d, "T": self.T, "dt": self.dt, "N": self.N, "seed": self.seed}


def brownian(d: int, T: float, dt: float, N: int, seed: int) -> BrownianEnsemble:
    return BrownianEnsemble(d, float(T), float(dt), int(N), int(seed))


# -- problems and schemes -----------------------------------------------------


def power_step_average(t: float, dt: float, gamma: float) -> float:
    """Average of ``s^(-gamma)`` over ``[t, t + dt]``."""
    if gamma == 0:
        return 1.0
    e = 1.0 - gamma
    return ((t + dt) ** e - t ** e) / (e * dt)


@dataclass
class SdeProblem:
    """``dX = b(t, X) dt + sigma(t, X) dW``.

    With ``gamma > 0`` the drift is ``t^(-gamma) b(x)`` for a static ``b``;
    ``sigma=None`` stands for the identity.
    """

    b: SpaceTimeField
    sigma: SpaceTimeField | None = None
    T: float | None = None
    ellipticity: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        g = self.b.grid
        self.T = g.T if self.T is None else float(self.T)
        if self.b.channels != g.d:
            raise FieldError("drift must have d channels")
        if self.sigma is not None and (self.sigma.grid.d != g.d or self.sigma.channels != g.d ** 2):
            raise FieldError("sigma must be a d x d field of the same dimension")
        if not 0 <= self.gamma < 0.5:
            raise FieldError("time-singularity exponent gamma must lie in [0, 1/2)")
        if self.gamma > 0 and not self.b.static:
            raise FieldError("a time-singular drift needs a static spatial profile")

    @property
    def d(self) -> int:
        return self.b.grid.d

    def drift_field(self) -> SpaceTimeField:
        """Drift on the field grid; a time-singular amplitude is replaced by its
        cell averages."""
        if self.gamma == 0:
            return self.b
        g = self.b.grid
        prof = power_cell_average(g, self.gamma)
        vals = prof.reshape((-1,) + (1,) * (g.d + 1)) * self.b.values
        return self.b.with_values(vals)


class Scheme:
    """Base class.  ``initial`` maps start points to the state, ``step`` does
    one Euler step and ``observe`` returns the recorded quantities."""

    names: tuple[str, ...] = ("X",)
    box: float = np.inf

    def initial(self, x0: np.ndarray) -> np.ndarray:
        return x0.copy()

    def step(self, t: float, state: np.ndarray, dW: np.ndarray, dt: float) -> np.ndarray:
        raise NotImplementedError

    def observe(self, t: float, state: np.ndarray) -> dict[str, np.ndarray]:
        return {"X": state}

    def provenance(self) -> dict:
        return {}

    @property
    def T(self) -> float:
        raise NotImplementedError

    @property
    def d(self) -> int:
        raise NotImplementedError


class EulerScheme(Scheme):
    """Euler-Maruyama with left-endpoint coefficients, optionally on
    coefficients mollified at level ``n``."""

    def __init__(self, problem: SdeProblem, n: int | None = None):
        self.problem = problem
        self.n = n
        b, sigma = problem.b, problem.sigma
        if n is not None:
            b = mollify(b, Mollifier(n, problem.d))
            sigma = None if sigma is None else mollify(sigma, Mollifier(n, problem.d))
        self.b, self.sigma = b, sigma
        self.box = 2.0 * problem.b.grid.L

    @property
    def T(self) -> float:
        return self.problem.T

    @property
    def d(self) -> int:
        return self.problem.d

    def drift(self, t: float, x: np.ndarray, dt: float) -> np.ndarray:
        v = self.b.evaluate(t, x)
        if self.problem.gamma:
            v = v * power_step_average(t, dt, self.problem.gamma)
        return v

    def step(self, t, state, dW, dt):
        out = state + self.drift(t, state, dt) * dt
        if self.sigma is None:
            return out + dW
        if self.sigma.is_constant:
            s = self.sigma.constant_value.reshape(self.d, self.d)
            return out + dW @ s.T
        s = self.sigma.evaluate_matrix(t, state)
        return out + np.einsum("...ij,...j->...i", s, dW)

    def provenance(self) -> dict:
        return {"scheme": "euler" if self.n is None else "mollified", "n": self.n}


class TransformedScheme(Scheme):
    """Euler for ``Y = Phi(t, X)`` with the transformed coefficients; records
    ``Y`` and the mapped-back ``X = Psi(t, Y)``."""

    names = ("Y", "X")

    def __init__(self, z: ZvonkinTransform, sigma: SpaceTimeField | None = None):
        self.z, self.sigma = z, sigma
        self.box = 2.0 * z.grid.L

    @property
    def T(self) -> float:
        return self.z.T

    @property
    def d(self) -> int:
        return self.z.d

    def initial(self, x0):
        return phi(self.z, 0.0, x0)

    def step(self, t, state, dW, dt):
        drift, diff = transformed_coeffs(self.z, self.sigma, t, state)
        return state + drift * dt + np.einsum("...ij,...j->...i", diff, dW)

    def observe(self, t, state):
        return {"Y": state, "X": psi(self.z, t, state)}

    def provenance(self) -> dict:
        return {"scheme": "transformed", "lambda": self.z.lam}


# -- ensembles ----------------------------------------------------------------


@dataclass
class PathEnsemble:
    """Recorded trajectories ``paths[path, record, coordinate]``."""

    paths: np.ndarray
    times: np.ndarray
    flagged: np.ndarray
    provenance: dict = field(default_factory=dict)
    checksum: str = ""

    @property
    def N(self) -> int:
        return self.paths.shape[0]

    @property
    def d(self) -> int:
        return self.paths.shape[2]

    @property
    def x0(self) -> np.ndarray:
        return self.paths[0, 0]

    @property
    def flagged_fraction(self) -> float:
        return float(self.flagged.mean())

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise SimulationError(f"t={t} is not a recorded time")
        return k

    def at(self, t: float, unflagged: bool = True) -> np.ndarray:
        v = self.paths[:, self.time_index(t)]
        return v[~self.flagged] if unflagged else v

    def metadata(self) -> dict:
        out = dict(self.provenance)
        out["flagged_count"] = int(self.flagged.sum())
        out["checksum"] = self.checksum
        return out

    def dumps(self) -> str:
        """Rows ``path,step,coordinate,value`` after a ``key=value`` header."""
        lines = [f"# {k}={v!r}" for k, v in sorted(self.metadata().items())]
        lines.append("path,step,coordinate,value")
        N, R, d = self.paths.shape
        vals = self.paths.tolist()
        for p in range(N):
            for s in range(R):
                for c in range(d):
                    lines.append(f"{p},{s},{c},{vals[p][s][c]!r}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path


@dataclass
class FlowEnsemble:
    """Trajectories from several initial points on one shared noise;
    ``paths[point, path, record, coordinate]``."""

    points: np.ndarray
    paths: np.ndarray
    times: np.ndarray
    flagged: np.ndarray
    provenance: dict = field(default_factory=dict)
    checksum: str = ""
    depth: int | None = None

    def member(self, j: int) -> PathEnsemble:
        return PathEnsemble(self.paths[j], self.times, self.flagged, dict(self.provenance), self.checksum)

    @property
    def N(self) -> int:
        return self.paths.shape[1]


def _simulate_block(scheme: Scheme, x0s: np.ndarray, w: BrownianEnsemble, start: int, stop: int,
                    record_every: int):
    P, d = x0s.shape
    M = stop - start
    dW = w.increments(start, stop)
    digest = np.ascontiguousarray(dW).tobytes()
    nrec = w.n_steps // record_every + 1
    out = {name: np.empty((P, M, nrec, d)) for name in scheme.names}
    state = scheme.initial(np.repeat(x0s, M, axis=0))
    flagged = np.zeros(P * M, dtype=bool)
    dt = w.dt
    obs = scheme.observe(0.0, state)
    for name in scheme.names:
        out[name][:, :, 0] = obs[name].reshape(P, M, d)
    # the exact start point is recorded for X regardless of round-off in Phi/Psi
    if "X" in out:
        out["X"][:, :, 0] = x0s[:, None, :]
    for k in range(w.n_steps):
        t = k * dt
        inc = np.tile(dW[:, k], (P, 1))
        state = scheme.step(t, state, inc, dt)
        bad = ~np.all(np.isfinite(state), axis=1)
        if bad.any():
            j = int(np.argmax(bad))
            raise SimulationError(
                f"non-finite state on path {start + j % M} (start point {j // M}) at step {k + 1}"
            )
        flagged |= np.any(np.abs(state) > scheme.box, axis=1)
        if (k + 1) % record_every == 0:
            obs = scheme.observe(t + dt, state)
            r = (k + 1) // record_every
            for name in scheme.names:
                out[name][:, :, r] = obs[name].reshape(P, M, d)
    return out, flagged.reshape(P, M), digest


def simulate(
    scheme: Scheme,
    x0s,
    w: BrownianEnsemble,
    record_every: int = 1,
    block: int = DEFAULT_BLOCK,
) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray, str]:
    """Run ``scheme`` from every start point in ``x0s`` (``(P, d)``) on the
    same noise.  Returns ``(arrays, times, flagged, checksum)`` where each array
    is ``(P, N, nrec, d)`` and ``flagged`` is ``(P, N)``."""
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    if scheme.d == 1 and x0s.shape[-1] != 1:
        x0s = x0s.reshape(-1, 1)
    if x0s.shape[1] != w.d or scheme.d != w.d:
        raise SimulationError("dimension mismatch between scheme, start points and noise")
    if abs(scheme.T - w.T) > 1e-9 * w.T:
        raise SimulationError(f"noise horizon {w.T} differs from problem horizon {scheme.T}")
    if record_every < 1 or w.n_steps % record_every:
        raise SimulationError(f"record_every={record_every} must divide {w.n_steps} steps")
    ranges = [(s, min(w.N, s + block)) for s in range(0, w.N, block)]
    run = lambda r: _simulate_block(scheme, x0s, w, r[0], r[1], record_every)  # noqa: E731
    workers = worker_count()
    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, ranges))
    else:
        results = [run(r) for r in ranges]
    h = hashlib.sha256()
    for _, _, digest in results:
        h.update(digest)
    arrays = {name: np.concatenate([r[0][name] for r in results], axis=1) for name in scheme.names}
    flagged = np.concatenate([r[1] for r in results], axis=1)
    times = np.arange(w.n_steps // record_every + 1) * w.dt * record_every
    return arrays, times, flagged, h.hexdigest()


def _provenance(scheme: Scheme, w: BrownianEnsemble, record_every: int) -> dict:
    out = scheme.provenance()
    out.update(dt=w.dt, seed=w.seed, N=w.N, record_every=record_every)
    return out


def _ensemble(scheme, x0, w, record_every, name="X", **kw) -> PathEnsemble:
    arrays, times, flagged, digest = simulate(scheme, x0, w, record_every, **kw)
    return PathEnsemble(arrays[name][0], times, flagged[0], _provenance(scheme, w, record_every), digest)


def euler(p: SdeProblem, x0, w: BrownianEnsemble, record_every: int = 1, **kw) -> PathEnsemble:
    return _ensemble(EulerScheme(p), x0, w, record_every, **kw)


def simulate_mollified(p: SdeProblem, n: int, x0, w: BrownianEnsemble, record_every: int = 1,
                       **kw) -> PathEnsemble:
    return _ensemble(EulerScheme(p, n), x0, w, record_every, **kw)


def simulate_transformed(z: ZvonkinTransform, sigma: SpaceTimeField | None, x0,
                         w: BrownianEnsemble, record_every: int = 1, **kw):
    """Return ``(Y, X)`` ensembles; ``Y_0 = Phi(0, x0)`` and ``X = Psi(t, Y)``."""
    scheme = TransformedScheme(z, sigma)
    arrays, times, flagged, digest = simulate(scheme, x0, w, record_every, **kw)
    prov = _provenance(scheme, w, record_every)
    return (PathEnsemble(arrays["Y"][0], times, flagged[0], dict(prov), digest),
            PathEnsemble(arrays["X"][0], times, flagged[0], dict(prov), digest))


def coupled_pair(scheme: Scheme, x0, y0, w: BrownianEnsemble, record_every: int = 1,
                 **kw) -> tuple[PathEnsemble, PathEnsemble]:
    """Two ensembles from ``x0`` and ``y0`` on identical noise."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    arrays, times, flagged, digest = simulate(scheme, np.stack([x0, y0]), w, record_every, **kw)
    prov = _provenance(scheme, w, record_every)
    X = arrays["X"]
    return (PathEnsemble(X[0], times, flagged[0], dict(prov), digest),
            PathEnsemble(X[1], times, flagged[1], dict(prov), digest))


# -- dyadic grids -------------------------------------------------------------


def dyadic_points(d: int, m: int) -> np.ndarray:
    """``D_m``: points of ``[0, 1]^d`` with coordinates in ``2^-m Z``, in
    lexicographic order, shape ``((2^m + 1)^d, d)``."""
    if m < 0 or d < 1:
        raise FieldError("need m >= 0 and d >= 1")
    ax = np.arange(2 ** m + 1) / 2.0 ** m
    return np.array(list(product(ax, repeat=d)), dtype=float).reshape(-1, d)


def dyadic_pairs(d: int, i: int, m: int | None = None) -> np.ndarray:
    """Ordered pairs of ``D_i`` points at Euclidean distance ``2^-i``, as index
    pairs into ``dyadic_points(d, m)`` (``m >= i``), shape ``(npairs, 2)``."""
    m = i if m is None else m
    if not 0 <= i <= m:
        raise FieldError("need 0 <= i <= m")
    side = 2 ** m + 1
    stride = 2 ** (m - i)
    coarse = np.arange(0, side, stride)
    multi = np.array(list(product(coarse, repeat=d)), dtype=int).reshape(-1, d)
    pairs = []
    for ax in range(d):
        step = np.zeros(d, dtype=int)
        step[ax] = stride
        nb = multi + step
        ok = nb[:, ax] < side
        a = np.ravel_multi_index(tuple(multi[ok].T), (side,) * d)
        b = np.ravel_multi_index(tuple(nb[ok].T), (side,) * d)
        pairs.append(np.stack([a, b], axis=1))
        pairs.append(np.stack([b, a], axis=1))
    return np.concatenate(pairs)


def flow_grid(scheme: Scheme, m: int, w: BrownianEnsemble, lower: float = 0.0, upper: float = 1.0,
              record_every: int = 1, budget_bytes: int = DEFAULT_BUDGET_BYTES, **kw) -> FlowEnsemble:
    """Simulate every point of ``D_m`` (affinely mapped onto ``[lower, upper]^d``)
    on shared noise."""
    d = w.d
    P = (2 ** m + 1) ** d
    nrec = w.n_steps // max(1, record_every) + 1
    required = P * w.N * nrec * d * 8 * len(scheme.names)
    if required > budget_bytes:
        raise SimulationError(
            f"flow grid needs {required} bytes for {P} points x {w.N} paths x {nrec} records; "
            f"budget is {budget_bytes} bytes"
        )
    pts = lower + (upper - lower) * dyadic_points(d, m)
    arrays, times, flagged, digest = simulate(scheme, pts, w, record_every, **kw)
    prov = _provenance(scheme, w, record_every)
    prov.update(m=m, lower=lower, upper=upper)
    return FlowEnsemble(pts, arrays["X"], times, flagged.any(axis=0), prov, digest, m)


__all__ = [
    "BrownianEnsemble",
    "EulerScheme",
    "FlowEnsemble",
    "PathEnsemble",
    "Scheme",
    "SdeProblem",
    "SimulationError",
    "TransformedScheme",
    "brownian",
    "coupled_pair",
    "dyadic_pairs",
    "dyadic_points",
    "euler",
    "flow_grid",
    "simulate",
    "simulate_mollified",
    "simulate_transformed",
    "worker_count",
]
