"""Built-in scenarios and the INI configuration format of the CLI."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from .fields import FieldError, Grid, SpaceTimeField, admissible_q

DRIFT_FAMILIES = ("zero", "constant", "ou-linear", "holder-power", "time-singular")
DIFFUSION_FAMILIES = ("identity", "holder-perturbed", "constant-matrix")
ESTIMATORS = ("density", "semigroup", "chain", "weak_derivative", "homeomorphism", "nonconfluence")


class ConfigError(ValueError):
    """Invalid scenario or configuration file."""


def _floats(text: str) -> tuple[float, ...]:
    text = str(text).strip()
    if not text:
        return ()
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(","))
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from exc


@dataclass(frozen=True)
class Scenario:
    """Coefficients, grids and requested analyses of one experiment."""

    name: str
    drift: str = "zero"
    drift_params: tuple = ()
    diffusion: str = "identity"
    diffusion_params: tuple = ()
    alpha: float = 0.5
    q: float = 2.0
    ellipticity: float = 1.0
    hypotheses: str = ""
    d: int = 1
    L: float = 8.0
    hx: float = 0.02
    T: float = 1.0
    ht: float = 1e-3
    dt: float = 1e-3
    N: int = 2000
    seed: int = 1
    x0: tuple = (0.0,)
    record_every: int = 10
    flow_depth: int = 4
    flow_paths: int = 300
    transform: bool = True
    margin: float = 0.05
    estimators: tuple = ESTIMATORS[:5]
    s: float = 4.0
    depths: tuple = (1, 2, 3, 4)
    deltas: tuple = (0.1, 0.05, 0.025, 0.0125)
    test_function: str = "halfspace:0:0.0"
    y0: float | None = None
    phi_h1: str = ""
    phi_h3: str = ""
    export_paths: int = 5

    def validate(self) -> "Scenario":
        if self.drift not in DRIFT_FAMILIES:
            raise ConfigError(f"unknown drift family {self.drift!r}; choose from {', '.join(DRIFT_FAMILIES)}")
        if self.diffusion not in DIFFUSION_FAMILIES:
            raise ConfigError(
                f"unknown diffusion family {self.diffusion!r}; choose from {', '.join(DIFFUSION_FAMILIES)}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha={self.alpha} must lie in (0, 1)")
        if not admissible_q(self.alpha, self.q):
            raise ConfigError(
                f"q={self.q} outside the admissible range ({2 / (1 + self.alpha):.6g}, 2] for alpha={self.alpha}")
        if not 0 < self.ellipticity <= 1:
            raise ConfigError("ellipticity must lie in (0, 1]")
        if self.d < 1 or len(self.x0) != self.d:
            raise ConfigError(f"x0 must have {self.d} coordinates")
        for est in self.estimators:
            if est not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {est!r}; choose from {', '.join(ESTIMATORS)}")
        if "nonconfluence" in self.estimators and (self.d != 1 or self.y0 is None):
            raise ConfigError("nonconfluence needs d = 1 and a second start point y0")
        if self.drift == "time-singular" and not 0 < self.drift_params[0] < 0.5:
            raise ConfigError("time-singular drift needs 0 < gamma < 1/2")
        if self.drift == "constant" and len(self.drift_params) != self.d:
            raise ConfigError(f"constant drift needs {self.d} components")
        if self.diffusion == "constant-matrix" and len(self.diffusion_params) != self.d ** 2:
            raise ConfigError(f"constant-matrix diffusion needs {self.d ** 2} entries")
        try:
            self.grid()
            self.sim_check()
        except FieldError as exc:
            raise ConfigError(str(exc)) from exc
        for expr in (self.phi_h1, self.phi_h3):
            if expr:
                monotone_function(expr)
        return self

    def sim_check(self):
        n = self.T / self.dt
        if self.dt <= 0 or abs(n - round(n)) > 1e-6 * n:
            raise ConfigError(f"dt={self.dt} must divide T={self.T}")
        if round(n) % self.record_every:
            raise ConfigError("record_every must divide the number of steps")
        if self.N < 1 or self.flow_paths < 1:
            raise ConfigError("path counts must be positive")

    def grid(self) -> Grid:
        return Grid(self.d, self.L, self.hx, self.T, self.ht)

    # -- coefficient construction ---------------------------------------------

    @property
    def gamma(self) -> float:
        return self.drift_params[0] if self.drift == "time-singular" else 0.0

    def drift_field(self, grid: Grid | None = None) -> SpaceTimeField:
        """Spatial drift profile (time-singular amplitude excluded)."""
        grid = grid or self.grid()
        d, a, q = self.d, self.alpha, self.q
        if self.drift == "zero":
            return SpaceTimeField.constant(grid, np.zeros(d), a, q)
        if self.drift == "constant":
            return SpaceTimeField.constant(grid, np.array(self.drift_params), a, q)
        if self.drift == "ou-linear":
            k = self.drift_params[0] if self.drift_params else 1.0
            return SpaceTimeField.from_function(grid, lambda t, X: -k * X, a, q)
        expo = self.drift_params[-1] if self.drift_params else a
        if self.drift == "time-singular" and len(self.drift_params) < 2:
            expo = a
        return SpaceTimeField.from_function(
            grid, lambda t, X: np.minimum(np.abs(X) ** expo, 1.0) * np.sign(X), a, q)

    def sigma_field(self, grid: Grid | None = None) -> SpaceTimeField | None:
        grid = grid or self.grid()
        d, a, q = self.d, self.alpha, self.q
        if self.diffusion == "identity":
            return None
        if self.diffusion == "constant-matrix":
            return SpaceTimeField.constant(grid, np.array(self.diffusion_params), a, q)
        expo = self.diffusion_params[0] if self.diffusion_params else a

        def fn(t, X):
            r = np.linalg.norm(X, axis=1)
            s = 1.0 + np.minimum(r ** expo, 1.0) / 2.0
            return s[:, None] * np.eye(d).ravel()[None, :]

        return SpaceTimeField.from_function(grid, fn, a, q)

    def identity_diffusion(self) -> bool:
        return self.diffusion == "identity"

    def to_config(self) -> str:
        return dumps_config(self)

    def flags(self) -> str:
        return self.hypotheses


def monotone_function(expr: str) -> Callable[[np.ndarray], np.ndarray]:
    """Declared increasing functions for the non-confluence audit:
    ``zero``, ``linear:c`` (``c x``) or ``power:c:p`` (``c sign(x)|x|^p``)."""
    kind, *args = expr.strip().split(":")
    try:
        vals = [float(v) for v in args]
    except ValueError as exc:
        raise ConfigError(f"bad function parameters in {expr!r}") from exc
    if kind == "zero" and not vals:
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if kind == "linear" and len(vals) == 1 and vals[0] >= 0:
        c = vals[0]
        return lambda x: c * np.asarray(x, dtype=float)
    if kind == "power" and len(vals) == 2 and vals[0] >= 0 and vals[1] > 0:
        c, p = vals
        return lambda x: c * np.sign(x) * np.abs(x) ** p
    raise ConfigError(f"unsupported increasing function {expr!r}")


BUILTIN: dict[str, Scenario] = {
    s.name: s
    for s in [
        Scenario(
            "additive-identity",
            hypotheses="all coefficient hypotheses (zero drift, identity noise)",
            transform=True,
        ),
        Scenario(
            "ou-baseline",
            drift="ou-linear",
            drift_params=(1.0,),
            x0=(1.0,),
            N=20000,
            hypotheses="reference linear SDE (drift unbounded, outside the Hoelder class)",
            transform=False,
        ),
        Scenario(
            "holder-05-identity",
            drift="holder-power",
            drift_params=(0.5,),
            hypotheses="density, strong uniqueness, Hoelder flow and weak derivative hypotheses",
        ),
        Scenario(
            "holder-06-perturbed",
            drift="zero",
            diffusion="holder-perturbed",
            diffusion_params=(0.6,),
            alpha=0.6,
            ellipticity=0.4,
            estimators=("density", "semigroup", "nonconfluence"),
            y0=0.5,
            phi_h1="power:0.5:0.2",
            phi_h3="zero",
            hypotheses="one-dimensional non-confluence hypotheses (alpha > 1/2)",
        ),
        Scenario(
            "time-singular-drift",
            drift="time-singular",
            drift_params=(0.25, 0.5),
            hypotheses="time-integrable drift with q=2 only",
            estimators=("density", "semigroup"),
        ),
        Scenario(
            "constant-drift",
            drift="constant",
            drift_params=(0.5,),
            hypotheses="all coefficient hypotheses (constant drift)",
            estimators=("density", "semigroup", "homeomorphism"),
        ),
        Scenario(
            "constant-matrix-2d",
            d=2,
            L=4.0,
            hx=0.1,
            ht=1e-2,
            dt=1e-2,
            x0=(0.0, 0.0),
            record_every=1,
            flow_depth=2,
            flow_paths=100,
            depths=(1, 2),
            diffusion="constant-matrix",
            diffusion_params=(1.0, 0.0, 0.3, 0.9),
            drift="holder-power",
            drift_params=(0.5,),
            ellipticity=0.5,
            estimators=("density", "semigroup", "chain", "homeomorphism"),
            hypotheses="two-dimensional Hoelder drift with constant non-diagonal noise",
        ),
    ]
}


def list_scenarios() -> str:
    """One line per built-in scenario, sorted by id."""
    lines = []
    for name in sorted(BUILTIN):
        s = BUILTIN[name]
        lines.append(
            f"{name}: {s.hypotheses} | drift={s.drift} diffusion={s.diffusion} "
            f"d={s.d} alpha={s.alpha:g} q={s.q:g} ellipticity={s.ellipticity:g}"
        )
    return "\n".join(lines) + "\n"


# -- INI format ---------------------------------------------------------------

_SECTIONS = {
    "scenario": ("name", "hypotheses"),
    "coefficients": ("drift", "drift_params", "diffusion", "diffusion_params", "alpha", "q",
                     "ellipticity"),
    "grid": ("d", "L", "hx", "T", "ht"),
    "simulation": ("dt", "N", "seed", "x0", "y0", "record_every", "flow_depth", "flow_paths",
                   "export_paths"),
    "transform": ("transform", "margin"),
    "analysis": ("estimators", "s", "depths", "deltas", "test_function", "phi_h1", "phi_h3"),
}
_TUPLE_FLOAT = {"drift_params", "diffusion_params", "x0", "deltas"}
_INT = {"d", "N", "seed", "record_every", "flow_depth", "flow_paths", "export_paths"}
_FLOAT = {"alpha", "q", "ellipticity", "L", "hx", "T", "ht", "dt", "margin", "s"}


def _convert(key: str, raw: str):
    try:
        if key in _TUPLE_FLOAT:
            return _floats(raw)
        if key == "depths":
            return tuple(int(v) for v in _floats(raw))
        if key == "estimators":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if key in _INT:
            return int(raw)
        if key in _FLOAT:
            return float(raw)
        if key == "y0":
            return None if raw.strip().lower() in ("", "none") else float(raw)
        if key == "transform":
            return raw.strip().lower() in ("1", "yes", "true", "on")
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw.strip()


def loads_config(text: str) -> Scenario:
    """Parse an INI configuration.  ``[scenario] base = <builtin id>`` starts
    from a built-in scenario; any other key overrides it."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    base_name = cp.get("scenario", "base", fallback=None)
    if base_name is not None:
        if base_name not in BUILTIN:
            raise ConfigError(f"unknown base scenario {base_name!r}")
        base = BUILTIN[base_name]
    else:
        base = Scenario(cp.get("scenario", "name", fallback="custom"))
    changes = {}
    for section in cp.sections():
        allowed = _SECTIONS.get(section)
        if allowed is None:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key == "base" and section == "scenario":
                continue
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            changes[key] = _convert(key, raw)
    return replace(base, **changes).validate()


def dumps_config(s: Scenario) -> str:
    rec = asdict(s)
    out = []
    for section, keys in _SECTIONS.items():
        out.append(f"[{section}]")
        for k in keys:
            v = rec[k]
            if isinstance(v, tuple):
                v = ", ".join(x if isinstance(x, str) else repr(x) for x in v)
            elif isinstance(v, bool):
                v = "yes" if v else "no"
            elif v is None:
                v = "none"
            out.append(f"{k} = {v}")
        out.append("")
    return "\n".join(out)


__all__ = [
    "BUILTIN",
    "ConfigError",
    "Scenario",
    "dumps_config",
    "list_scenarios",
    "loads_config",
    "monotone_function",
]
