"""Grids, sampled space-time fields, Hoelder norms and mollification.

A :class:`SpaceTimeField` stores samples of a function ``(t, x) -> value`` on a
truncated box ``[-L, L]^d`` and a uniform time grid on ``[0, T]``.  Between
nodes the field is multilinear in space; in time it is piecewise constant,
taking on each cell ``[t_k, t_{k+1})`` the value stored at ``t_k``.  Outside
the box the value of the nearest boundary node is used.
"""

from __future__ import annotations

import functools
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate, ndimage, special

_TIME_EPS = 1e-9
_N_SAMPLED_OFFSETS = 64


class FieldError(ValueError):
    """Raised for malformed grids, fields or norm requests."""


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid on ``[-L, L]^d x [0, T]``.

    The spatial nodes are symmetric about the origin, ``n = floor(2L/hx) + 1``
    per axis.  ``T`` must be an integer multiple of ``ht``.
    """

    d: int
    L: float
    hx: float
    T: float
    ht: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise FieldError(f"dimension must be a positive integer, got {self.d}")
        if not (self.L > 0 and self.hx > 0 and self.T > 0 and self.ht > 0):
            raise FieldError("L, hx, T and ht must all be positive")
        if self.ht > self.T * (1 + _TIME_EPS):
            raise FieldError("ht must not exceed T")
        ratio = self.T / self.ht
        if abs(ratio - round(ratio)) > 1e-6 * max(1.0, ratio):
            raise FieldError(f"T={self.T} is not a multiple of ht={self.ht}")

    @property
    def n(self) -> int:
        return int(math.floor(2 * self.L / self.hx + _TIME_EPS)) + 1

    @property
    def nt(self) -> int:
        """Number of time cells (the time grid has ``nt + 1`` points)."""
        return int(round(self.T / self.ht))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def axis(self) -> np.ndarray:
        return (np.arange(self.n) - (self.n - 1) / 2.0) * self.hx

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.ht

    @property
    def num_nodes(self) -> int:
        return self.n ** self.d

    def nodes(self) -> np.ndarray:
        """All nodes as an array of shape ``(n**d, d)`` in C order."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def mesh(self) -> np.ndarray:
        """Node coordinates with shape ``(n,)*d + (d,)``."""
        return self.nodes().reshape(self.shape + (self.d,))

    def is_grid_time(self, t: float) -> bool:
        k = t / self.ht
        return -_TIME_EPS <= k <= self.nt + 1e-6 and abs(k - round(k)) < 1e-6

    def time_index(self, t: float) -> int:
        """Index of the grid time ``t``; raises if ``t`` is not on the grid."""
        if not self.is_grid_time(t):
            raise FieldError(f"t={t} is not a grid time (ht={self.ht}, T={self.T})")
        return int(round(t / self.ht))

    def cell_index(self, t: float) -> int:
        """Left-endpoint cell containing ``t`` (clamped to ``[0, nt]``)."""
        k = int(math.floor(t / self.ht + 1e-7))
        return min(max(k, 0), self.nt)

    def interior_mask(self, margin: float) -> np.ndarray:
        """Boolean mask over nodes (shape ``self.shape``) at distance >= margin
        from the box boundary."""
        inner = np.abs(self.axis) <= self.L - margin + 1e-12
        mask = inner
        for _ in range(self.d - 1):
            mask = np.multiply.outer(mask, inner)
        return mask

    def with_(self, **changes) -> "Grid":
        params = dict(d=self.d, L=self.L, hx=self.hx, T=self.T, ht=self.ht)
        params.update(changes)
        return Grid(**params)


def admissible_q(alpha: float, q: float) -> bool:
    """True when ``q`` lies in ``(2/(1+alpha), 2]``."""
    return 2.0 / (1.0 + alpha) < q <= 2.0


class SpaceTimeField:
    """Samples of a scalar, vector or matrix field on a :class:`Grid`.

    Parameters
    ----------
    grid : Grid
    values : array_like
        Shape ``(ntimes,) + grid.shape + (channels,)`` where ``ntimes`` is
        either ``grid.nt + 1`` or 1 (a time-independent field).
    alpha : float
        Declared Hoelder exponent in ``(0, 1)``.
    q : float
        Declared time-integrability exponent, in ``(2/(1+alpha), 2]``.
    """

    def __init__(self, grid: Grid, values, alpha: float = 0.5, q: float = 2.0):
        values = np.array(values, dtype=float)
        if values.ndim == grid.d + 1:
            values = values[..., None]
        expected = grid.shape
        if values.ndim != grid.d + 2 or values.shape[1:-1] != expected:
            raise FieldError(
                f"values shape {values.shape} incompatible with grid shape {expected}"
            )
        if values.shape[0] not in (1, grid.nt + 1):
            raise FieldError(
                f"expected 1 or {grid.nt + 1} time slices, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise FieldError("field values must be finite")
        if not 0.0 < alpha < 1.0:
            raise FieldError(f"holder alpha must lie in (0, 1), got {alpha}")
        if not admissible_q(alpha, q):
            raise FieldError(
                f"time exponent q={q} outside the admissible range "
                f"({2 / (1 + alpha):.6g}, 2] for alpha={alpha}"
            )
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.holder_alpha = float(alpha)
        self.q = float(q)
        flat = values.reshape(-1, values.shape[-1])
        self._constant = flat[0].copy() if np.all(flat == flat[0]) else None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_function(
        cls,
        grid: Grid,
        fn: Callable[[float, np.ndarray], np.ndarray],
        alpha: float = 0.5,
        q: float = 2.0,
        static: bool = True,
        time_profile: Sequence[float] | np.ndarray | None = None,
    ) -> "SpaceTimeField":
        """Sample ``fn(t, X)`` with ``X`` of shape ``(M, d)``.

        ``fn`` may return ``(M,)`` or ``(M, C)``.  With ``static=True`` only
        ``t = 0`` is sampled.  ``time_profile`` (length ``nt + 1``) multiplies
        a static spatial profile slice by slice.
        """
        pts = grid.nodes()
        if static or time_profile is not None:
            spatial = np.asarray(fn(0.0, pts), dtype=float)
            spatial = spatial.reshape(grid.shape + (-1,))
            if time_profile is None:
                return cls(grid, spatial[None], alpha, q)
            prof = np.asarray(time_profile, dtype=float)
            if prof.shape != (grid.nt + 1,):
                raise FieldError("time_profile must have length nt + 1")
            vals = prof.reshape((-1,) + (1,) * (grid.d + 1)) * spatial[None]
            return cls(grid, vals, alpha, q)
        slices = [
            np.asarray(fn(t, pts), dtype=float).reshape(grid.shape + (-1,))
            for t in grid.times
        ]
        return cls(grid, np.stack(slices), alpha, q)

    @classmethod
    def constant(cls, grid: Grid, value, alpha: float = 0.5, q: float = 2.0):
        value = np.atleast_1d(np.asarray(value, dtype=float)).ravel()
        vals = np.broadcast_to(value, (1,) + grid.shape + value.shape)
        return cls(grid, vals, alpha, q)

    @classmethod
    def identity_matrix(cls, grid: Grid, alpha: float = 0.5, q: float = 2.0):
        return cls.constant(grid, np.eye(grid.d), alpha, q)

    def with_values(self, values) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, values, self.holder_alpha, self.q)

    def full_values(self) -> np.ndarray:
        """Values broadcast to ``nt + 1`` time slices."""
        if self.static:
            return np.broadcast_to(self.values, (self.grid.nt + 1,) + self.values.shape[1:])
        return self.values

    def time_reversed(self) -> "SpaceTimeField":
        """The field ``(t, x) -> f(T - t, x)`` in the left-constant convention.

        Cell ``k`` of the result carries cell ``nt - 1 - k`` of ``self``; the
        terminal slice carries the value at time 0.
        """
        if self.static:
            return self
        nt = self.grid.nt
        idx = np.concatenate([np.arange(nt - 1, -1, -1), [0]])
        return self.with_values(self.values[idx])

    # -- basic properties -----------------------------------------------------

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    @property
    def static(self) -> bool:
        return self.values.shape[0] == 1

    @property
    def is_constant(self) -> bool:
        return self._constant is not None

    @property
    def constant_value(self) -> np.ndarray | None:
        return None if self._constant is None else self._constant.copy()

    def __repr__(self):
        kind = "static" if self.static else f"{self.values.shape[0]} slices"
        return (
            f"SpaceTimeField(d={self.grid.d}, n={self.grid.n}, channels={self.channels}, "
            f"{kind}, alpha={self.holder_alpha}, q={self.q})"
        )

    def __add__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        if not isinstance(other, SpaceTimeField) or other.grid != self.grid:
            return NotImplemented
        a, b = self.values, other.values
        if a.shape[0] != b.shape[0]:
            a, b = self.full_values(), other.full_values()
        return self.with_values(a + b)

    def __mul__(self, c: float) -> "SpaceTimeField":
        return self.with_values(float(c) * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    # -- slicing and evaluation -----------------------------------------------

    def slice_index(self, t: float) -> int:
        return 0 if self.static else self.grid.cell_index(t)

    def slice(self, k: int) -> np.ndarray:
        """Values at time index ``k``, shape ``grid.shape + (channels,)``."""
        return self.values[0 if self.static else k]

    def at(self, t: float) -> np.ndarray:
        return self.values[self.slice_index(t)]

    def evaluate(self, t: float, x) -> np.ndarray:
        """Evaluate at time ``t`` and points ``x`` (``(..., d)``); returns
        ``(..., channels)``.  In one dimension a plain array of points is
        accepted."""
        x = np.asarray(x, dtype=float)
        d = self.grid.d
        if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if x.shape[-1] != d:
            raise FieldError(f"points must have trailing dimension {d}")
        lead = x.shape[:-1]
        if self._constant is not None:
            return np.broadcast_to(self._constant, lead + (self.channels,)).copy()
        return interpolate(self.grid, self.at(t), x.reshape(-1, d)).reshape(
            lead + (self.channels,)
        )

    def evaluate_matrix(self, t: float, x) -> np.ndarray:
        """Evaluate a ``d x d`` matrix field, returning ``(..., d, d)``."""
        d = self.grid.d
        if self.channels != d * d:
            raise FieldError("not a matrix field")
        v = self.evaluate(t, x)
        return v.reshape(v.shape[:-1] + (d, d))

    def sup_norm(self, k: int | None = None) -> float:
        """Max over nodes (and over time when ``k`` is None) of the Euclidean
        norm across channels."""
        vals = self.values if k is None else self.slice(k)
        return float(np.max(np.sqrt(np.sum(vals * vals, axis=-1))))


def interpolate(grid: Grid, slice_values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of one slice at points ``pts`` (``(M, d)``),
    with constant extension outside the box."""
    n, d = grid.n, grid.d
    channels = slice_values.shape[-1]
    flat = slice_values.reshape(-1, channels)
    if n == 1:
        return np.broadcast_to(flat[0], (pts.shape[0], channels)).copy()
    x0 = grid.axis[0]
    idx0 = []
    frac = []
    for i in range(d):
        u = np.clip((pts[:, i] - x0) / grid.hx, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(u).astype(np.intp), n - 2)
        idx0.append(i0)
        frac.append(u - i0)
    if d == 1:
        i0, f = idx0[0], frac[0][:, None]
        return flat[i0] * (1.0 - f) + flat[i0 + 1] * f
    out = np.zeros((pts.shape[0], channels))
    strides = [n ** (d - 1 - i) for i in range(d)]
    for corner in range(2 ** d):
        w = np.ones(pts.shape[0])
        lin = np.zeros(pts.shape[0], dtype=np.intp)
        for i in range(d):
            bit = (corner >> (d - 1 - i)) & 1
            w = w * (frac[i] if bit else 1.0 - frac[i])
            lin = lin + (idx0[i] + bit) * strides[i]
        out += w[:, None] * flat[lin]
    return out


# -- Hoelder and Lebesgue-Hoelder norms -------------------------------------


def _offset_slices(v: Sequence[int], n: int):
    base, shifted = [], []
    for vi in v:
        if vi >= 0:
            base.append(slice(0, n - vi))
            shifted.append(slice(vi, n))
        else:
            base.append(slice(-vi, n))
            shifted.append(slice(0, n + vi))
    return tuple(base), tuple(shifted)


def _sampled_offsets(d: int, n: int) -> list[tuple[int, ...]]:
    """Nearest neighbours plus dyadic-distance offsets (axial then diagonal),
    capped at 64 offsets."""
    offsets: list[tuple[int, ...]] = []
    j = 0
    while 2 ** j <= n - 1 and len(offsets) < _N_SAMPLED_OFFSETS:
        step = 2 ** j
        for i in range(d):
            v = [0] * d
            v[i] = step
            offsets.append(tuple(v))
        if d > 1:
            offsets.append((step,) * d)
            offsets.append((step,) + (-step,) * (d - 1))
        j += 1
    return offsets[:_N_SAMPLED_OFFSETS]


def _exhaustive_offsets(d: int, n: int) -> Iterable[tuple[int, ...]]:
    rng = range(-(n - 1), n)
    for v in np.ndindex(*([2 * n - 1] * d)):
        off = tuple(rng[k] for k in v)
        # one representative per +-pair: first nonzero component positive
        nz = [c for c in off if c != 0]
        if nz and nz[0] > 0:
            yield off


def slice_seminorm(
    grid: Grid, values: np.ndarray, alpha: float, exhaustive: bool = False
) -> float:
    """Discrete ``alpha``-Hoelder seminorm of one slice (``grid.shape + (C,)``).

    Differences of vector or matrix values use the Euclidean norm over
    channels.
    """
    n, d = grid.n, grid.d
    if n < 2:
        raise FieldError("grid has fewer than two nodes per axis; no pairs to sample")
    offsets = _exhaustive_offsets(d, n) if exhaustive else _sampled_offsets(d, n)
    best = 0.0
    for v in offsets:
        base, shifted = _offset_slices(v, n)
        diff = values[shifted] - values[base]
        if diff.size == 0:
            continue
        mag = np.sqrt(np.sum(diff * diff, axis=-1)).max()
        if mag == 0.0:
            continue
        dist = grid.hx * math.sqrt(sum(c * c for c in v))
        best = max(best, float(mag) / dist ** alpha)
    return best


def holder_seminorm(
    f: SpaceTimeField, t: float, alpha: float | None = None, exhaustive: bool = False
) -> float:
    """Hoelder seminorm of ``f(t, .)`` over a deterministic pair sample.

    The default sample is every nearest-neighbour pair plus up to 64 dyadic
    offsets per node; ``exhaustive=True`` uses every node pair.  The result
    is a lower bound for the seminorm of the interpolated field.
    """
    k = f.grid.time_index(t)
    a = f.holder_alpha if alpha is None else alpha
    return slice_seminorm(f.grid, f.slice(k), a, exhaustive)


def lebesgue_holder_norm(
    f: SpaceTimeField,
    q: float | None = None,
    alpha: float | None = None,
    exhaustive: bool = False,
) -> float:
    """``L^q(0, T; C^alpha_b)`` norm by the left-endpoint rule on the time grid."""
    q = f.q if q is None else float(q)
    if q < 1:
        raise FieldError(f"q must be >= 1, got {q}")
    a = f.holder_alpha if alpha is None else alpha
    g = f.grid

    def slice_norm(k):
        vals = f.slice(k)
        sup = float(np.max(np.sqrt(np.sum(vals * vals, axis=-1))))
        semi = slice_seminorm(g, vals, a, exhaustive) if sup > 0 else 0.0
        return sup + semi

    if f.static:
        return slice_norm(0) * g.T ** (1.0 / q)
    integrand = np.array([slice_norm(k) ** q for k in range(g.nt)])
    return float((g.ht * integrand.sum()) ** (1.0 / q))


def power_cell_average(grid: Grid, gamma: float) -> np.ndarray:
    """Cell averages of ``t**(-gamma)`` over ``[t_k, t_{k+1})`` (closed form),
    length ``nt + 1``; the terminal entry repeats the last cell."""
    if not gamma < 1:
        raise FieldError("gamma must be < 1 for an integrable amplitude")
    t = grid.times
    anti = t ** (1.0 - gamma) / (1.0 - gamma)
    avg = np.diff(anti) / grid.ht
    return np.append(avg, avg[-1])


# -- mollification ------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _bump_mass(d: int) -> float:
    def radial(r):
        return r ** (d - 1) * math.exp(-1.0 / (1.0 - r * r)) if r < 1 else 0.0

    val, _ = integrate.quad(radial, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    sphere = 2 * math.pi ** (d / 2) / special.gamma(d / 2)
    return sphere * val


@dataclass(frozen=True)
class Mollifier:
    """Scaled bump ``rho_n(x) = n^d rho(n x)`` with
    ``rho(x) = c_d exp(-1/(1-|x|^2))`` on the unit ball."""

    level: int
    d: int = 1

    def __post_init__(self):
        if int(self.level) != self.level or self.level < 1:
            raise FieldError("mollification level must be a positive integer")

    @property
    def radius(self) -> float:
        return 1.0 / self.level

    def profile(self, x) -> np.ndarray:
        """Unit-scale profile ``rho``; ``x`` has shape ``(..., d)`` (or plain
        points when ``d == 1``)."""
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        r2 = np.sum(x * x, axis=-1)
        out = np.zeros_like(r2)
        inside = r2 < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        return out / _bump_mass(self.d)

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.level ** self.d * self.profile(self.level * x)

    def weights(self, grid: Grid) -> np.ndarray:
        """Discrete kernel on the grid, normalised to unit sum."""
        k = int(math.ceil(self.radius / grid.hx))
        offs = np.arange(-k, k + 1) * grid.hx
        mesh = np.stack(np.meshgrid(*([offs] * self.d), indexing="ij"), axis=-1)
        w = self.density(mesh)
        total = w.sum()
        if total <= 0:
            return np.ones((1,) * self.d)
        return w / total


def mollify(f: SpaceTimeField, m: Mollifier) -> SpaceTimeField:
    """Convolve every time slice with the scaled bump (constant extension at
    the box boundary)."""
    g = f.grid
    if m.d != g.d:
        raise FieldError("mollifier and field dimensions differ")
    if m.radius < g.hx:
        warnings.warn(
            f"mollifier radius {m.radius:g} below grid spacing {g.hx:g}; no-op",
            stacklevel=2,
        )
        return f
    if f.is_constant:
        return f
    w = m.weights(g)
    kernel = w.reshape((1,) + w.shape + (1,))
    out = ndimage.correlate(np.asarray(f.values), kernel, mode="nearest")
    return f.with_values(out)


def mollify_convergence(
    f: SpaceTimeField, q: float, levels: Sequence[int]
) -> np.ndarray:
    """``||f_n - f||`` in ``L^q(0, T; sup)`` for each mollification level."""
    if q < 1:
        raise FieldError(f"q must be >= 1, got {q}")
    g = f.grid
    out = []
    for n in levels:
        diff = mollify(f, Mollifier(int(n), g.d)).values - f.values
        sup = np.sqrt(np.sum(diff * diff, axis=-1)).reshape(diff.shape[0], -1).max(axis=1)
        if f.static:
            out.append(float(sup[0]) * g.T ** (1.0 / q))
        else:
            out.append(float((g.ht * np.sum(sup[: g.nt] ** q)) ** (1.0 / q)))
    return np.array(out)


# -- serialisation ------------------------------------------------------------

_HEADER_KEYS = ("d", "L", "hx", "T", "ht", "channels", "alpha", "q")


def dumps_field(f: SpaceTimeField) -> str:
    """Columnar text: a header line ``d,L,hx,T,ht,channels,alpha,q`` followed
    by ``time_index,node_index,channel,value`` rows (shortest round-trip
    decimal floats)."""
    g = f.grid
    buf = io.StringIO()
    header = (g.d, g.L, g.hx, g.T, g.ht, f.channels, f.holder_alpha, f.q)
    buf.write(",".join(repr(v) for v in header) + "\n")
    nslices, C = f.values.shape[0], f.channels
    flat = f.values.reshape(nslices, -1, C)
    nodes = flat.shape[1]
    vals = flat.ravel().tolist()
    i = 0
    for k in range(nslices):
        for node in range(nodes):
            for c in range(C):
                buf.write(f"{k},{node},{c},{vals[i]!r}\n")
                i += 1
    return buf.getvalue()


def loads_field(text: str) -> SpaceTimeField:
    lines = text.splitlines()
    if not lines:
        raise FieldError("empty field document")
    head = lines[0].split(",")
    if len(head) != len(_HEADER_KEYS):
        raise FieldError(f"header must carry {','.join(_HEADER_KEYS)}")
    d, channels = int(head[0]), int(head[5])
    L, hx, T, ht, alpha, q = (float(head[i]) for i in (1, 2, 3, 4, 6, 7))
    grid = Grid(d, L, hx, T, ht)
    rows = [ln.split(",") for ln in lines[1:] if ln.strip()]
    kmax = max(int(r[0]) for r in rows)
    nslices = kmax + 1
    vals = np.empty((nslices, grid.num_nodes, channels))
    for r in rows:
        vals[int(r[0]), int(r[1]), int(r[2])] = float(r[3])
    return SpaceTimeField(grid, vals.reshape((nslices,) + grid.shape + (channels,)), alpha, q)


def write_field(f: SpaceTimeField, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_field(f), encoding="utf-8")
    return path


def read_field(path: str | Path) -> SpaceTimeField:
    return loads_field(Path(path).read_text(encoding="utf-8"))
