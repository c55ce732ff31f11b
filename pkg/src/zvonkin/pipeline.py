"""Scenario pipeline: solve, certify, simulate, analyze."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (
    TestFunction,
    chain_holder,
    format_record,
    homeomorphism_audit,
    nonconfluence,
    semigroup,
    transition_density,
    weak_derivative,
    write_series,
)
from .fields import lebesgue_holder_norm, read_field
from .pde_solver import SolverError
from .scenarios import Scenario, dumps_config, monotone_function
from .sde_sim import (
    EulerScheme,
    SdeProblem,
    SimulationError,
    brownian,
    euler,
    flow_grid,
    simulate_transformed,
)
from .transform import (
    CertificateError,
    ZvonkinTransform,
    diffusion_from_sigma,
    phi,
    psi,
    select_lambda,
)

logger = logging.getLogger(__name__)

STAGES = ("solve", "certify", "simulate", "analyze")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CERTIFICATE = 4
EXIT_SIMULATION = 5
EXIT_ASSERTION = 6


class AssertionFailure(RuntimeError):
    pass


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunResult:
    exit_code: int
    out: Path
    files: list = field(default_factory=list)
    assertions: dict = field(default_factory=dict)
    message: str = ""


class Pipeline:
    """Runs the stages of one scenario, writing every artifact under ``out``."""

    def __init__(self, scenario: Scenario, out: str | Path, exhaustive_norms: bool = False,
                 cache_dir: str | Path | None = None):
        self.s = scenario
        self.out = Path(out)
        self.exhaustive = exhaustive_norms
        self.cache_dir = Path(cache_dir) if cache_dir else self.out / "cache"
        self.files: list[Path] = []
        self.assertions: dict[str, bool] = {}
        self.z: ZvonkinTransform | None = None
        self.data: dict = {}

    # -- helpers --------------------------------------------------------------

    def _write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self._track(path)
        return path

    def _track(self, path: Path):
        if path not in self.files:
            self.files.append(path)

    def _check(self, name: str, ok: bool):
        self.assertions[name] = bool(ok)

    def problem(self) -> SdeProblem:
        s = self.s
        return SdeProblem(s.drift_field(), s.sigma_field(), s.T, s.ellipticity, s.gamma)

    def solve_key(self) -> str:
        s = self.s
        parts = dumps_config(replace(s, name="", hypotheses="", N=0, seed=0, dt=0.0, x0=(0.0,) * s.d,
                                     flow_paths=0, flow_depth=0, estimators=(), y0=None,
                                     export_paths=0, record_every=1))
        return hashlib.sha256((parts + __version__).encode()).hexdigest()[:16]

    # -- stages ---------------------------------------------------------------

    def solve(self):
        s = self.s
        p = self.problem()
        b = p.drift_field()
        rec = {"drift_norm": lebesgue_holder_norm(b, exhaustive=self.exhaustive)}
        if p.sigma is not None:
            rec["sigma_norm"] = lebesgue_holder_norm(p.sigma, exhaustive=self.exhaustive)
        if not s.transform:
            rec["transform"] = "disabled"
            self._write("solve.txt", format_record("solve", rec))
            return
        cache = self.cache_dir / self.solve_key()
        if (cache / "certificate.txt").exists():
            cert = dict(line.split("=", 1) for line in (cache / "certificate.txt").read_text().split("\n") if line)
            self.z = ZvonkinTransform(read_field(cache / "U.csv"), read_field(cache / "grad_U.csv"),
                                      float(cert["lambda"]), float(cert["sup_grad_U"]), float(cert["margin"]))
            rec["cache"] = "hit"
        else:
            history: list = []
            a = diffusion_from_sigma(p.sigma)
            self.z = select_lambda(b, a, margin=s.margin, history=history,
                                   problem_kw={"ellipticity": s.ellipticity})
            self.z.export(cache)
            rec["cache"] = "miss"
            rec["lambda_history"] = [h[0] for h in history]
            rec["sup_grad_history"] = [h[1] for h in history]
        rec.update(self.z.certificate())
        for f in self.z.export(self.out / "transform"):
            self._track(f)
        self._write("solve.txt", format_record("solve", rec))

    def certify(self):
        if self.z is None:
            return
        z, s = self.z, self.s
        rng = np.random.default_rng(s.seed)
        n = 10_000
        t = rng.uniform(0, s.T, n)
        x = rng.uniform(-s.L / 2, s.L / 2, (n, s.d))
        h = 10.0 ** rng.uniform(-3, 0, n)
        dirs = rng.normal(size=(n, s.d))
        y = x + h[:, None] * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        qphi = np.empty(n)
        qpsi = np.empty(n)
        trip = np.empty(n)
        for j in range(n):
            dx = np.linalg.norm(x[j] - y[j])
            qphi[j] = np.linalg.norm(phi(z, t[j], x[j]) - phi(z, t[j], y[j])) / dx
            qpsi[j] = np.linalg.norm(psi(z, t[j], x[j]) - psi(z, t[j], y[j])) / dx
            trip[j] = np.max(np.abs(psi(z, t[j], phi(z, t[j], x[j])) - x[j]))
        rec = z.certificate()
        rec.update(
            phi_quotient_min=float(qphi.min()), phi_quotient_max=float(qphi.max()),
            psi_quotient_min=float(qpsi.min()), psi_quotient_max=float(qpsi.max()),
            round_trip_max=float(trip.max()), pairs=n,
        )
        ok = (z.certified and 0.5 < qphi.min() and qphi.max() < 1.5 and 2 / 3 < qpsi.min()
              and qpsi.max() < 2 and trip.max() < 1e-5 * z.grid.hx)
        rec["passed"] = bool(ok)
        self._write("certificate_check.txt", format_record("certify", rec))
        if not ok:
            raise CertificateError("sampled difference quotients or round trip outside the certified bounds")

    def simulate(self):
        s = self.s
        p = self.problem()
        w = brownian(s.d, s.T, s.dt, s.N, s.seed)
        e = euler(p, s.x0, w, s.record_every)
        self.data["ensemble"] = e
        self._write("ensemble.txt", format_record("ensemble", e.metadata()))
        k = min(s.export_paths, e.N)
        if k:
            sub = type(e)(e.paths[:k], e.times, e.flagged[:k], dict(e.provenance), e.checksum)
            self._write("trajectories.txt", sub.dumps())
        if self.z is not None:
            wt = w.with_paths(min(s.N, 1000))
            Y, X = simulate_transformed(self.z, p.sigma, s.x0, wt, s.record_every)
            self.data["transformed"] = (Y, X)
            self._write("transformed.txt", format_record("transformed", Y.metadata()))
        if any(est in s.estimators for est in ("semigroup", "chain", "homeomorphism")):
            wf = brownian(s.d, s.T, s.dt, s.flow_paths, s.seed)
            flow = flow_grid(EulerScheme(p), s.flow_depth, wf, record_every=s.record_every)
            self.data["flow"] = flow
            rec = dict(flow.provenance)
            rec.update(points=len(flow.points), flagged_count=int(flow.flagged.sum()), checksum=flow.checksum)
            self._write("flow.txt", format_record("flow", rec))

    def analyze(self):
        s = self.s
        p = self.problem()
        e = self.data["ensemble"]
        reports = []
        self._check("flagged_fraction_below_0.001", e.flagged_fraction < 1e-3)
        flow = self.data.get("flow")
        additive = s.drift == "zero" and s.diffusion == "identity"
        ou = s.drift == "ou-linear" and s.diffusion == "identity" and s.d == 1
        if "density" in s.estimators:
            de = transition_density(e, s.T)
            reports.append(de.to_text())
            if not de.degenerate:
                self._check("density_mass", abs(de.mass - de.unflagged_fraction) <= 0.02 * de.unflagged_fraction)
                write_series(self.out / "density.dat", de.grid[:, 0], de.values)
                self._track(self.out / "density.dat")
            if additive:
                oracle = (4 * math.pi * (s.T + de.bandwidth ** 2)) ** (-s.d / 4)
                self._check("density_l2_gaussian", abs(de.norms[2.0] / oracle - 1) < 0.05)
        if "semigroup" in s.estimators:
            f = TestFunction.parse(s.test_function)
            sg = semigroup(flow, f, s.T)
            reports.append(sg.to_text())
            self._check("semigroup_contraction", bool(np.all(np.abs(sg.values) <= f.bound + 1e-12)))
        if "chain" in s.estimators:
            depths = [i for i in s.depths if i <= s.flow_depth]
            cr = chain_holder(flow, s.s, depths)
            reports.append(cr.to_text())
            self._check("chain_bound", cr.chain_bound_holds)
            if additive or ou:
                self._check("chain_slope_exact", abs(cr.slope - s.s) < 1e-9)
        if "weak_derivative" in s.estimators:
            wd = weak_derivative(EulerScheme(p), s.x0, 0, s.deltas,
                                 brownian(s.d, s.T, s.dt, s.flow_paths, s.seed), s.record_every)
            reports.append(wd.to_text())
            self._check("weak_derivative_bounded", math.isfinite(wd.sup_norm))
            if additive or ou:
                self._check("weak_derivative_gaps_zero", max(wd.gaps) < 1e-9)
            else:
                self._check("weak_derivative_cauchy", wd.non_increasing)
        if "homeomorphism" in s.estimators:
            ha = homeomorphism_audit(flow, s.T)
            reports.append(ha.to_text())
            if s.d == 1:
                self._check("order_preserved", ha.order_preserved_fraction == 1.0)
            if additive:
                self._check("negative_moment_product_one", abs(ha.negative_moment_product - 1) < 1e-9)
            if ou:
                k = s.drift_params[0] if s.drift_params else 1.0
                steps = round(s.T / s.dt)
                discrete = (1 - k * s.dt) ** (-2 * steps)
                self._check("negative_moment_product_ou_discrete",
                            abs(ha.negative_moment_product / discrete - 1) < 1e-9)
                self._check("negative_moment_product_ou",
                            abs(ha.negative_moment_product / math.exp(2 * k * s.T) - 1) < 2 * k * s.dt * 2)
        if "nonconfluence" in s.estimators:
            h1 = monotone_function(s.phi_h1) if s.phi_h1 else None
            h3 = monotone_function(s.phi_h3) if s.phi_h3 else None
            nc = nonconfluence(p, s.x0[0], s.y0, brownian(1, s.T, s.dt, s.N, s.seed), h1, h3)
            reports.append(nc.to_text())
            self._check("nonconfluence_audit", nc.audit.passed)
            self._check("nonconfluence_zero_below", nc.below_threshold == 0)
        if ou:
            k = s.drift_params[0] if s.drift_params else 1.0
            xT = e.at(s.T)[:, 0]
            n = xT.size
            mean, var = float(xT.mean()), float(xT.var(ddof=1))
            m_exact = s.x0[0] * math.exp(-k * s.T)
            v_exact = (1 - math.exp(-2 * k * s.T)) / (2 * k)
            self._check("ou_mean", abs(mean - m_exact) <= 3 * math.sqrt(var / n))
            self._check("ou_variance", abs(var - v_exact) <= 3 * v_exact * math.sqrt(2.0 / (n - 1)))
            reports.append(format_record("ou_moments", {"mean": mean, "variance": var,
                                                        "mean_exact": m_exact, "variance_exact": v_exact}))
        if additive:
            xT = e.at(s.T)
            self._check("additive_exact", bool(np.all(np.abs(xT.mean(axis=0)) < 4 * math.sqrt(s.T / e.N))))
        self._write("reports.txt", "\n".join(reports))
        self._write("assertions.txt", "".join(
            f"{k}={'PASS' if v else 'FAIL'}\n" for k, v in sorted(self.assertions.items())))
        if not all(self.assertions.values()):
            failed = sorted(k for k, v in self.assertions.items() if not v)
            raise AssertionFailure("failed assertions: " + ", ".join(failed))

    # -- driver ---------------------------------------------------------------

    def manifest(self, stage: str, exit_code: int):
        rec = {
            "scenario": self.s.name,
            "seed": self.s.seed,
            "stage": stage,
            "exit_code": exit_code,
            "config_sha256": hashlib.sha256(dumps_config(self.s).encode()).hexdigest(),
            "versions": {
                "zvonkin": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "files": {str(f.relative_to(self.out)): sha256_file(f) for f in self.files if f.exists()},
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        path = self.out / "manifest.json"
        path.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
        return path

    def run(self, stage: str = "all") -> RunResult:
        if stage != "all" and stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        self.out.mkdir(parents=True, exist_ok=True)
        self._write("config.ini", dumps_config(self.s))
        last = STAGES.index(stage) if stage != "all" else len(STAGES) - 1
        code, msg = EXIT_OK, "ok"
        try:
            for name in STAGES[: last + 1]:
                logger.info("stage %s", name)
                getattr(self, name)()
        except SolverError as exc:
            code, msg = EXIT_SOLVER, f"solver failure: {exc}"
        except CertificateError as exc:
            code, msg = EXIT_CERTIFICATE, f"certificate failure: {exc}"
        except SimulationError as exc:
            code, msg = EXIT_SIMULATION, f"simulation failure: {exc}"
        except AssertionFailure as exc:
            code, msg = EXIT_ASSERTION, str(exc)
        self.manifest(stage, code)
        return RunResult(code, self.out, list(self.files), dict(self.assertions), msg)


def run_scenario(scenario: Scenario, out, stage: str = "all", exhaustive_norms: bool = False,
                 cache_dir=None) -> RunResult:
    return Pipeline(scenario, out, exhaustive_norms, cache_dir).run(stage)
