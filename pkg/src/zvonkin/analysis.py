"""Statistical estimators on simulated ensembles and flows.

All estimators are pure functions of immutable ensembles.  Each returns a
small dataclass with a ``record()`` dict and a ``to_text()`` key=value block.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.spatial.distance import pdist

from .sde_sim import (
    BrownianEnsemble,
    FlowEnsemble,
    PathEnsemble,
    Scheme,
    SdeProblem,
    EulerScheme,
    coupled_pair,
    dyadic_pairs,
    simulate,
)

logger = logging.getLogger(__name__)


class AnalysisError(ValueError):
    pass


# -- report helpers -----------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, np.ndarray):
        return "[" + ", ".join(_fmt(x) for x in v.ravel()) + "]"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def format_record(name: str, record: dict) -> str:
    """``[name]`` header followed by sorted ``key=value`` lines."""
    lines = [f"[{name}]"]
    lines += [f"{k}={_fmt(v)}" for k, v in sorted(record.items())]
    return "\n".join(lines) + "\n"


def write_series(path: str | Path, x, y) -> Path:
    """Two-column ``x y`` plot data."""
    path = Path(path)
    with path.open("w") as fh:
        for a, b in zip(np.ravel(x), np.ravel(y)):
            fh.write(f"{float(a)!r} {float(b)!r}\n")
    return path


class _Report:
    name = "report"

    def record(self) -> dict:
        return {k: v for k, v in asdict(self).items() if not k.startswith("_")}

    def to_text(self) -> str:
        return format_record(self.name, self.record())


# -- densities ----------------------------------------------------------------


@dataclass
class DensityEstimate(_Report):
    bandwidth: float
    grid: np.ndarray
    values: np.ndarray
    norms: dict
    mass: float
    unflagged_fraction: float
    degenerate: bool = False
    bandwidth_rule: str = "silverman"
    name = "transition_density"

    def record(self) -> dict:
        out = {
            "bandwidth": self.bandwidth,
            "bandwidth_rule": self.bandwidth_rule,
            "mass": self.mass,
            "unflagged_fraction": self.unflagged_fraction,
            "degenerate": self.degenerate,
        }
        out.update({f"L{s:g}_norm": v for s, v in self.norms.items()})
        return out


def gaussian_l2_norm(variance: float, d: int = 1) -> float:
    """``(int p^2)^(1/2)`` for the centred normal density with covariance
    ``variance * I``: ``(4 pi variance)^(-d/4)``."""
    return (4.0 * math.pi * variance) ** (-d / 4.0)


def transition_density(
    e: PathEnsemble,
    t: float,
    bandwidth: float | None = None,
    s_list: Sequence[float] = (1.0, 2.0, 4.0),
    points: int | None = None,
) -> DensityEstimate:
    """Gaussian KDE of the unflagged positions at time ``t`` and its ``L^s``
    norms by grid quadrature.  The density is scaled by the unflagged
    fraction, so its mass estimates the probability of staying in the box."""
    if bandwidth is not None and not bandwidth > 0:
        raise AnalysisError("bandwidth must be positive")
    X = e.at(t)
    if X.shape[0] == 0:
        raise AnalysisError("all paths are flagged")
    d = X.shape[1]
    frac = 1.0 - e.flagged_fraction
    spread = X.std(axis=0)
    if np.all(spread == 0) or X.shape[0] < 2:
        return DensityEstimate(0.0, np.empty((0, d)), np.empty(0), {s: math.inf for s in s_list},
                               frac, frac, True, "none")
    # scipy's scalar bw_method multiplies the data standard deviation
    if bandwidth is None:
        kde = stats.gaussian_kde(X.T, bw_method="silverman")
        rule = "silverman"
    else:
        # gaussian_kde scales by the ddof=1 data covariance
        sd = X.std(axis=0, ddof=1)
        kde = stats.gaussian_kde(X.T, bw_method=bandwidth / float(np.sqrt(np.mean(sd ** 2))))
        rule = "fixed"
    h = float(np.sqrt(np.mean(np.diag(kde.covariance))))
    points = points or (512 if d == 1 else 96)
    lo = X.min(axis=0) - 6 * h
    hi = X.max(axis=0) + 6 * h
    axes = [np.linspace(lo[i], hi[i], points) for i in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    vals = frac * kde(mesh.T)
    cell = float(np.prod([(hi[i] - lo[i]) / (points - 1) for i in range(d)]))
    norms = {float(s): float((np.sum(vals ** s) * cell) ** (1.0 / s)) for s in s_list}
    mass = float(vals.sum() * cell)
    return DensityEstimate(h, mesh, vals, norms, mass, frac, False, rule)


# -- semigroup ----------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Bounded test function from a fixed library; build with the class
    methods or :meth:`parse`."""

    __test__ = False  # not a pytest class

    kind: str
    params: tuple
    bound: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.params[0])
        if self.kind == "halfspace":
            axis, thr = self.params
            return (x[..., int(axis)] > thr).astype(float)
        if self.kind == "ball":
            r = self.params[-1]
            c = np.asarray(self.params[:-1])
            return (np.sum((x - c) ** 2, axis=-1) < r * r).astype(float)
        if self.kind == "cos":
            axis, k = self.params
            return np.cos(k * x[..., int(axis)])
        if self.kind == "sin":
            axis, k = self.params
            return np.sin(k * x[..., int(axis)])
        raise AnalysisError(f"unknown test function {self.kind}")

    @classmethod
    def constant(cls, c: float = 1.0):
        return cls("constant", (float(c),), abs(float(c)))

    @classmethod
    def halfspace(cls, axis: int = 0, threshold: float = 0.0):
        return cls("halfspace", (int(axis), float(threshold)), 1.0)

    @classmethod
    def ball(cls, center: Sequence[float], radius: float):
        if radius <= 0:
            raise AnalysisError("ball radius must be positive")
        return cls("ball", tuple(map(float, center)) + (float(radius),), 1.0)

    @classmethod
    def trig(cls, kind: str = "cos", axis: int = 0, k: float = 1.0):
        if kind not in ("cos", "sin"):
            raise AnalysisError("trig kind must be cos or sin")
        return cls(kind, (int(axis), float(k)), 1.0)

    @classmethod
    def parse(cls, expr: str) -> "TestFunction":
        """``constant:c``, ``halfspace:axis:threshold``, ``ball:c1:...:cd:r``,
        ``cos:axis:k`` or ``sin:axis:k``."""
        kind, *args = expr.strip().split(":")
        try:
            vals = [float(a) for a in args]
        except ValueError as exc:
            raise AnalysisError(f"bad test function parameters in {expr!r}") from exc
        if kind == "constant" and len(vals) == 1:
            return cls.constant(vals[0])
        if kind == "halfspace" and len(vals) == 2:
            return cls.halfspace(int(vals[0]), vals[1])
        if kind == "ball" and len(vals) >= 2:
            return cls.ball(vals[:-1], vals[-1])
        if kind in ("cos", "sin") and len(vals) == 2:
            return cls.trig(kind, int(vals[0]), vals[1])
        raise AnalysisError(f"unsupported test function {expr!r}")

    def describe(self) -> str:
        return ":".join([self.kind] + [repr(p) for p in self.params])


@dataclass
class SemigroupReport(_Report):
    points: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    spacings: list
    modulus: list
    modulus_stderr: list
    function: str = ""
    t: float = 0.0
    name = "semigroup"

    def record(self) -> dict:
        return {
            "function": self.function,
            "t": self.t,
            "points": self.points,
            "values": self.values,
            "stderr": self.stderr,
            "spacings": self.spacings,
            "modulus": self.modulus,
            "modulus_stderr": self.modulus_stderr,
        }


def semigroup(e, f: TestFunction, t: float, spacings_from_depth: bool = True) -> SemigroupReport:
    """Monte Carlo ``P_t f(x0)`` for every start point.

    ``e`` is a :class:`FlowEnsemble` or a sequence of :class:`PathEnsemble`
    sharing noise.  The modulus table lists, per spacing, the largest
    ``|P_t f(x) - P_t f(y)|`` over adjacent start points; its standard error
    uses the paired differences, which share noise.
    """
    if not isinstance(f, TestFunction):
        raise AnalysisError("f must be a bounded TestFunction from the library")
    if isinstance(e, FlowEnsemble):
        pts = e.points
        k = e.member(0).time_index(t)
        samples = e.paths[:, :, k]
        keep = ~e.flagged
        depth = e.depth
    else:
        ens = list(e)
        pts = np.stack([m.x0 for m in ens])
        k = ens[0].time_index(t)
        samples = np.stack([m.paths[:, k] for m in ens])
        keep = ~np.any(np.stack([m.flagged for m in ens]), axis=0)
        depth = None
    fx = f(samples[:, keep])
    n = fx.shape[1]
    if n == 0:
        raise AnalysisError("all paths are flagged")
    values = fx.mean(axis=1)
    stderr = fx.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(values))
    spacings, modulus, mod_err = [], [], []
    if depth is not None and spacings_from_depth and pts.shape[1] >= 1:
        scale = float(np.max(pts) - np.min(pts)) or 1.0
        d = pts.shape[1]
        for i in range(depth + 1):
            pairs = dyadic_pairs(d, i, depth)
            pairs = pairs[pairs[:, 0] < pairs[:, 1]]
            diff = fx[pairs[:, 0]] - fx[pairs[:, 1]]
            m = np.abs(diff.mean(axis=1))
            j = int(np.argmax(m))
            spacings.append(scale * 2.0 ** -i)
            modulus.append(float(m[j]))
            mod_err.append(float(diff[j].std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
    elif len(pts) > 1:
        diff = fx[1:] - fx[:-1]
        m = np.abs(diff.mean(axis=1))
        spacings = list(map(float, np.linalg.norm(np.diff(pts, axis=0), axis=1)))
        modulus = list(map(float, m))
        mod_err = [float(x) for x in (diff.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(m)))]
    return SemigroupReport(pts, values, stderr, spacings, modulus, mod_err, f.describe(), float(t))


# -- dyadic chaining ----------------------------------------------------------


@dataclass
class ChainReport(_Report):
    s: float
    depths: list
    moments: list
    slope: float
    beta_eff: float
    beta: float
    modulus_max: float
    chain_bound_min_slack: float
    chain_bound_holds: bool
    name = "chain_holder"


def _pair_sep(paths: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """``max`` over pairs of ``|X(x) - X(y)|``, shape ``(N, nrec)``."""
    out = np.zeros(paths.shape[1:3])
    for a, b in pairs:
        np.maximum(out, np.linalg.norm(paths[a] - paths[b], axis=-1), out=out)
    return out


def chain_statistics(flow: FlowEnsemble) -> np.ndarray:
    """``K_i(t)`` for ``i = 0..m``, shape ``(m + 1, N, nrec)``."""
    d = flow.points.shape[1]
    m = flow.depth
    return np.stack([
        _pair_sep(flow.paths, _unordered(dyadic_pairs(d, i, m))) for i in range(m + 1)
    ])


def _unordered(pairs: np.ndarray) -> np.ndarray:
    return pairs[pairs[:, 0] < pairs[:, 1]]


def global_modulus(flow: FlowEnsemble, beta: float) -> np.ndarray:
    """``M_beta(t) = max_{x != y in D_m} |X_t(x) - X_t(y)| / |x - y|^beta`` in
    the unit-cube coordinates of ``D_m``, shape ``(N, nrec)``."""
    P = flow.points.shape[0]
    lo, hi = flow.provenance.get("lower", 0.0), flow.provenance.get("upper", 1.0)
    unit = (flow.points - lo) / (hi - lo)
    out = np.zeros(flow.paths.shape[1:3])
    for a in range(P):
        for b in range(a + 1, P):
            dist = float(np.linalg.norm(unit[a] - unit[b]))
            np.maximum(out, np.linalg.norm(flow.paths[a] - flow.paths[b], axis=-1) / dist ** beta, out=out)
    return out


def chain_bound(K: np.ndarray, beta: float, d: int = 1) -> np.ndarray:
    """``2 c_d sum_i 2^(i beta) K_i`` with ``c_1 = 1`` and ``c_d = d`` otherwise
    (each chaining step may cross ``d`` axis-neighbour links)."""
    w = 2.0 ** (beta * np.arange(K.shape[0]))
    return 2.0 * d * np.tensordot(w, K, axes=1)


def chain_holder(flow: FlowEnsemble, s: float, depths: Sequence[int], beta: float = 0.5) -> ChainReport:
    """Empirical ``E[sup_t K_i^s]`` per depth, its log-log slope against
    ``2^-i``, and the modulus-versus-chaining check at exponent ``beta``.

    Separations are measured in the unit-cube coordinates of ``D_m``.
    """
    depths = sorted(set(int(i) for i in depths))
    if len(depths) < 2:
        raise AnalysisError("need at least two depths")
    if flow.depth is None or max(depths) > flow.depth:
        raise AnalysisError(f"flow depth {flow.depth} is below the requested depth {max(depths)}")
    if s <= 0:
        raise AnalysisError("moment order must be positive")
    keep = ~flow.flagged
    sub = FlowEnsemble(flow.points, flow.paths[:, keep], flow.times, flow.flagged[keep],
                       flow.provenance, flow.checksum, flow.depth)
    lo, hi = flow.provenance.get("lower", 0.0), flow.provenance.get("upper", 1.0)
    K = chain_statistics(sub) / (hi - lo)
    supK = K.max(axis=2)
    moments = [float(np.mean(supK[i] ** s)) for i in depths]
    x = -np.array(depths) * math.log(2.0)
    slope = float(np.polyfit(x, np.log(moments), 1)[0])
    M = global_modulus(sub, beta) / (hi - lo)
    bound = chain_bound(K, beta, flow.points.shape[1])
    slack = float(np.min(bound - M))
    return ChainReport(float(s), depths, moments, slope, slope / s, float(beta),
                       float(M.max()), slack, bool(slack >= -1e-12 * max(1.0, float(bound.max()))))


# -- weak derivative ----------------------------------------------------------


@dataclass
class WeakDerivativeReport(_Report):
    deltas: list
    norms: list
    gaps: list
    non_increasing: bool
    sup_norm: float
    name = "weak_derivative"


def _l2_omega_time(D: np.ndarray, times: np.ndarray) -> float:
    """Empirical ``L^2(Omega x (0, T))`` norm with the left-point rule."""
    dt = np.diff(times)
    sq = np.sum(D[:, :-1] ** 2, axis=-1)
    return float(math.sqrt(np.mean(sq @ dt)))


def weak_derivative(scheme: Scheme, x0, i: int, deltas: Sequence[float], w: BrownianEnsemble,
                    record_every: int = 1, rtol: float = 0.05) -> WeakDerivativeReport:
    """Difference quotients ``D_delta = (X(x0 + delta e_i) - X(x0)) / delta`` on
    shared noise and their Cauchy gaps between consecutive deltas.

    ``non_increasing`` allows a relative slack ``rtol`` for Monte Carlo noise
    (zero gaps always pass).
    """
    deltas = [float(x) for x in deltas]
    if len(deltas) < 2 or any(b >= a for a, b in zip(deltas, deltas[1:])) or deltas[-1] <= 0:
        raise AnalysisError("deltas must be positive and strictly decreasing, at least two")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.shape[0]
    if not 0 <= i < d:
        raise AnalysisError(f"direction {i} out of range for d={d}")
    e = np.zeros(d)
    e[i] = 1.0
    starts = np.vstack([x0] + [x0 + dl * e for dl in deltas])
    arrays, times, flagged, _ = simulate(scheme, starts, w, record_every)
    X = arrays["X"]
    keep = ~flagged.any(axis=0)
    base = X[0, keep]
    Ds = [(X[j + 1, keep] - base) / dl for j, dl in enumerate(deltas)]
    norms = [_l2_omega_time(D, times) for D in Ds]
    gaps = [_l2_omega_time(Ds[j] - Ds[j + 1], times) for j in range(len(Ds) - 1)]
    ok = all(b <= a * (1 + rtol) + 1e-12 for a, b in zip(gaps, gaps[1:]))
    return WeakDerivativeReport(deltas, norms, gaps, ok, max(norms))


# -- non-confluence -----------------------------------------------------------


@dataclass
class HypothesisAudit(_Report):
    h1: bool | None
    h2: bool
    h3: bool | None
    min_abs_sigma: float
    h1_worst: float | None
    h3_worst: float | None
    pairs: int
    skipped: list = field(default_factory=list)
    name = "hypothesis_audit"

    @property
    def passed(self) -> bool:
        return self.h2 and self.h1 is not False and self.h3 is not False


def _increasing(fn: Callable, xs: np.ndarray) -> bool:
    v = fn(xs)
    return bool(np.all(np.diff(v) >= 0))


def audit_hypotheses(
    p: SdeProblem,
    phi_h1: Callable[[np.ndarray], np.ndarray] | None,
    phi_h3: Callable[[np.ndarray], np.ndarray] | None,
    pairs: int = 20000,
    seed: int = 0,
    tol: float = 1e-12,
) -> HypothesisAudit:
    """Check the one-dimensional non-confluence hypotheses on the grid nodes and
    on a deterministic sample of node pairs (including all neighbours):

    * H1: ``(sigma(x) - sigma(y))^2 <= (x - y)(phi_h1(x) - phi_h1(y))``
    * H2: ``min |sigma| > 0``
    * H3: ``|b(x) - b(y)| <= |phi_h3(x) - phi_h3(y)|``

    both functions increasing.  Every time slice of the coefficients is checked.
    """
    if p.d != 1:
        raise AnalysisError("the non-confluence audit is one-dimensional")
    g = p.b.grid
    x = g.axis
    sig = (np.ones((1, g.n)) if p.sigma is None else np.asarray(p.sigma.values)[..., 0])
    bv = np.asarray(p.b.values)[..., 0]
    min_sigma = float(np.abs(sig).min())
    rng = np.random.default_rng(seed)
    ia = np.concatenate([np.arange(g.n - 1), rng.integers(0, g.n, pairs)])
    ib = np.concatenate([np.arange(1, g.n), rng.integers(0, g.n, pairs)])
    sel = ia != ib
    ia, ib = ia[sel], ib[sel]
    skipped = []
    h1 = h1_worst = None
    if phi_h1 is None:
        skipped.append("H1")
        warnings.warn("no increasing function declared for H1; audit skipped", stacklevel=2)
    else:
        fx = phi_h1(x)
        rhs = (x[ia] - x[ib]) * (fx[ia] - fx[ib])
        lhs = (sig[:, ia] - sig[:, ib]) ** 2
        h1_worst = float(np.max(lhs - rhs))
        h1 = bool(h1_worst <= tol and _increasing(phi_h1, x))
    h3 = h3_worst = None
    if phi_h3 is None:
        skipped.append("H3")
        warnings.warn("no increasing function declared for H3; audit skipped", stacklevel=2)
    else:
        fx = phi_h3(x)
        lhs = np.abs(bv[:, ia] - bv[:, ib])
        h3_worst = float(np.max(lhs - np.abs(fx[ia] - fx[ib])))
        h3 = bool(h3_worst <= tol and _increasing(phi_h3, x))
    return HypothesisAudit(h1, bool(min_sigma > tol), h3, min_sigma, h1_worst, h3_worst,
                           int(ia.size), skipped)


@dataclass
class NonconfluenceReport(_Report):
    min_separation: float
    threshold: float
    below_threshold: int
    fraction_below: float
    paths: int
    audit: HypothesisAudit | None = None
    name = "nonconfluence"

    def record(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "audit"}
        if self.audit is not None:
            out.update({f"audit_{k}": v for k, v in self.audit.record().items()})
            out["audit_passed"] = self.audit.passed
        return out


def nonconfluence(
    p: SdeProblem,
    x0: float,
    y0: float,
    w: BrownianEnsemble,
    phi_h1: Callable | None = None,
    phi_h3: Callable | None = None,
    threshold: float | None = None,
    scheme: Scheme | None = None,
) -> NonconfluenceReport:
    """Coupled pair from ``x0 != y0``; reports the minimum separation over time
    and paths and how many paths come closer than ``threshold`` (default
    ``10 dt``)."""
    if p.d != 1:
        raise AnalysisError("non-confluence is checked in one dimension")
    if x0 == y0:
        raise AnalysisError("start points must differ")
    audit = audit_hypotheses(p, phi_h1, phi_h3)
    threshold = 10.0 * w.dt if threshold is None else threshold
    ex, ey = coupled_pair(scheme or EulerScheme(p), x0, y0, w)
    keep = ~(ex.flagged | ey.flagged)
    sep = np.abs(ex.paths[keep, :, 0] - ey.paths[keep, :, 0]).min(axis=1)
    below = int(np.sum(sep < threshold))
    n = int(keep.sum())
    return NonconfluenceReport(float(sep.min()), float(threshold), below, below / max(n, 1), n, audit)


# -- homeomorphism ------------------------------------------------------------


@dataclass
class HomeomorphismReport(_Report):
    t: float
    min_distance: float
    order_preserved_fraction: float | None
    negative_moment_product: float
    negative_moment_products: list
    clipped: int
    name = "homeomorphism_audit"


def homeomorphism_audit(flow: FlowEnsemble, t: float, clip: float | None = None) -> HomeomorphismReport:
    """Injectivity diagnostics of ``x -> X_t(x)`` on ``D_m`` at time ``t``.

    ``negative_moment_product`` is the largest, over adjacent pairs, of
    ``E|X_t(x) - X_t(y)|^-2 * |x - y|^2`` (start-point coordinates); distances
    are clipped below at ``clip`` (default machine epsilon times the box size)
    and the number of clipped samples is reported.
    """
    k = flow.member(0).time_index(t)
    keep = ~flow.flagged
    img = flow.paths[:, keep, k]  # (P, N, d)
    P, N, d = img.shape
    if N == 0:
        raise AnalysisError("all paths are flagged")
    span = float(np.ptp(img)) if img.size else 1.0
    clip = np.finfo(float).eps * max(span, 1.0) if clip is None else clip
    if d == 1:
        order = np.argsort(flow.points[:, 0], kind="stable")
        v = img[order, :, 0]
        gaps = np.diff(v, axis=0)
        min_dist = float(np.abs(gaps).min()) if P > 1 else math.inf
        monotone = np.all(gaps > 0, axis=0) | np.all(gaps < 0, axis=0)
        preserved = float(np.mean(monotone))
    else:
        min_dist = min(float(pdist(img[:, j]).min()) for j in range(N)) if P > 1 else math.inf
        preserved = None
    m = flow.depth
    pairs = _unordered(dyadic_pairs(flow.points.shape[1], m, m)) if m is not None else np.empty((0, 2), int)
    products, clipped = [], 0
    for a, b in pairs:
        dist = np.linalg.norm(img[a] - img[b], axis=-1)
        clipped += int(np.sum(dist < clip))
        dist = np.maximum(dist, clip)
        h = float(np.linalg.norm(flow.points[a] - flow.points[b]))
        products.append(float(np.mean(dist ** -2.0)) * h * h)
    worst = max(products) if products else math.nan
    return HomeomorphismReport(float(t), min_dist, preserved, worst, products, clipped)


__all__ = [
    "AnalysisError",
    "ChainReport",
    "DensityEstimate",
    "HomeomorphismReport",
    "HypothesisAudit",
    "NonconfluenceReport",
    "SemigroupReport",
    "TestFunction",
    "WeakDerivativeReport",
    "audit_hypotheses",
    "chain_bound",
    "chain_holder",
    "chain_statistics",
    "format_record",
    "gaussian_l2_norm",
    "global_modulus",
    "homeomorphism_audit",
    "nonconfluence",
    "semigroup",
    "transition_density",
    "weak_derivative",
    "write_series",
]
