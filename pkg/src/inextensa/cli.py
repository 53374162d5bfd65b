"""Command-line front end.

Subcommands read a JSON spec, run a verification pipeline and write a JSON report
(or an OBJ mesh). Exit codes: 0 pass, 1 numerical failure, 2 input error.
Reports are byte-deterministic: sorted keys, floats rounded to 9 significant digits,
all randomness derived from one seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from . import jet as J
from .compat import (
    MetricAnsatzZ,
    bending_metric,
    branch_initial_data,
    integrate_flat_ansatz,
    reconstruct_map,
)
from .diffgeo import DeformationMap, Domain, MetricField, constant_metric, ricci
from .errors import InextensaError, InputError, InvalidParams, NumericalError
from .families import KINDS, closed_form_C, closed_form_J, closed_form_metric, default_domain, make_family, params_from_json
from .universality import ConstraintReport, classify_invariants, full_equilibrium_residual, residual_report

SCHEMA = 1
CLOSED_FORM_TOL = 1e-10
METRIC_DEFECT_TOL = 1e-6
MIXED_PARTIAL_TOL = 1e-7
PATH_TOL = 1e-8
CLASSIFY_TOL = 1e-8
FIXTURE_KIND = "sin-perturbed"
SUBCOMMANDS = ("verify-family", "check-metric", "reconstruct", "export-mesh", "classify")


@dataclass
class RunConfig:
    subcommand: str
    spec: str
    out: Optional[str] = None
    domain: Optional[tuple] = None
    grid: Optional[tuple] = None
    tol_diff: float = 1e-10
    tol_quad: float = 1e-7
    materials: int = 10
    seed: int = 1
    format: str = "json"
    spec_bytes: bytes = field(default=b"", repr=False)

    def validate(self):
        if self.subcommand not in SUBCOMMANDS:
            raise InvalidParams(f"unknown subcommand {self.subcommand!r}")
        if not (self.tol_diff > 0 and self.tol_quad > 0):
            raise InvalidParams("tolerances must be positive")
        if self.grid is not None and (len(self.grid) != 3 or min(self.grid) < 2):
            raise InvalidParams("grid counts must be >= 2")
        if self.materials < 1:
            raise InvalidParams("--materials must be at least 1")
        if self.format not in ("json", "obj"):
            raise InvalidParams("--format must be json or obj")
        if self.format == "obj" and self.subcommand not in ("export-mesh", "reconstruct"):
            raise InvalidParams(f"{self.subcommand} only writes json")

    @property
    def spec_sha256(self) -> str:
        return hashlib.sha256(self.spec_bytes).hexdigest()

    def load_spec(self) -> dict:
        try:
            with open(self.spec, "rb") as fh:
                self.spec_bytes = fh.read()
        except OSError as exc:
            raise InputError(f"cannot read spec {self.spec!r}: {exc.strerror}") from None
        try:
            spec = json.loads(self.spec_bytes)
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InputError(f"spec is not valid JSON: {exc}") from None
        if not isinstance(spec, dict):
            raise InvalidParams("spec must be a JSON object")
        return spec

    def domain_for(self, default: Domain) -> Domain:
        bounds = self.domain if self.domain is not None else default.bounds
        counts = self.grid if self.grid is not None else default.counts
        return Domain(bounds, counts)

    def header(self) -> dict:
        return {
            "schema": SCHEMA,
            "subcommand": self.subcommand,
            "version": __version__,
            "spec_sha256": self.spec_sha256,
            "seed": self.seed,
            "tolerances": {"differential": self.tol_diff, "quadrature": self.tol_quad},
        }


# -- parsing helpers ------------------------------------------------------------------

def _floats(text: str, n: int, what: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise InvalidParams(f"{what} must be comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise InvalidParams(f"{what} needs {n} numbers, got {len(vals)}")
    return vals


def _grid(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise InvalidParams(f"--grid must be N or N,N,N, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 3
    if len(vals) != 3:
        raise InvalidParams("--grid must be N or N,N,N")
    return vals


def _seed(value: Optional[str]) -> int:
    raw = value if value is not None else os.environ.get("INEXTENSA_SEED", "1")
    try:
        return int(raw)
    except ValueError:
        raise InvalidParams(f"seed must be an integer, got {raw!r}") from None


def _check_keys(d: dict, allowed: set, what: str):
    extra = set(d) - allowed
    if extra:
        raise InvalidParams(f"unknown keys in {what}: {sorted(extra)}")


# -- serialization ----------------------------------------------------------------------

def _clean(obj):
    """Round floats to 9 significant digits and convert numpy containers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return str(v)
        return float("%.9g" % v)
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=1) + "\n"


def _write(path: Optional[str], text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"cannot write {path!r}: {exc.strerror}") from None


def _fmt(v: float) -> str:
    return "%.9g" % v


# -- spec interpretation -----------------------------------------------------------------

def sin_perturbed_map(amplitude: float = 0.1, domain: Optional[Domain] = None) -> DeformationMap:
    """``(X + a sin X, Y, Z)``: keeps ``C_ZZ = 1`` but is not universal."""
    return DeformationMap(lambda X, Y, Z: (X + amplitude * J.sin(X), Y, Z), domain, FIXTURE_KIND)


def family_from_spec(spec: dict):
    """``(kind, params or None, default domain)`` from a family spec."""
    if str(spec.get("family", "")).lower() == FIXTURE_KIND:
        _check_keys(spec, {"family", "params"}, "fixture spec")
        p = spec.get("params", {})
        if not isinstance(p, dict):
            raise InvalidParams("params must be an object")
        _check_keys(p, {"amplitude"}, "fixture params")
        a = float(p.get("amplitude", 0.1))
        if not math.isfinite(a):
            raise InvalidParams("amplitude must be finite")
        return FIXTURE_KIND, a, Domain.unit_box()
    params = params_from_json(spec)
    return params.kind, params, default_domain(params.kind)


def _polynomial_metric(spec: dict) -> MetricField:
    """Components ``C11 .. C33`` given as lists of ``[coefficient, pX, pY, pZ]`` terms."""
    names = ["C11", "C12", "C13", "C22", "C23", "C33"]
    _check_keys(spec, {"kind", "components"}, "polynomial metric spec")
    comps = spec.get("components")
    if not isinstance(comps, dict):
        raise InvalidParams("components must be an object keyed C11..C33")
    _check_keys(comps, set(names), "polynomial components")
    terms = {}
    for n in names:
        raw = comps.get(n, [])
        if isinstance(raw, (int, float)):
            raw = [[raw, 0, 0, 0]]
        try:
            terms[n] = [(float(c), int(a), int(b), int(d)) for c, a, b, d in raw]
        except (TypeError, ValueError):
            raise InvalidParams(f"{n} must be a number or a list of [coef, pX, pY, pZ]") from None
        if any(min(a, b, d) < 0 or not math.isfinite(c) for c, a, b, d in terms[n]):
            raise InvalidParams(f"{n}: powers must be >= 0 and coefficients finite")

    def poly(ts, X, Y, Z):
        out = 0.0
        for c, a, b, d in ts:
            t = c
            for var, p in ((X, a), (Y, b), (Z, d)):
                for _ in range(p):
                    t = t * var
            out = out + t
        return out

    def components(X, Y, Z):
        v = {n: poly(terms[n], X, Y, Z) for n in names}
        return [[v["C11"], v["C12"], v["C13"]], [v["C12"], v["C22"], v["C23"]], [v["C13"], v["C23"], v["C33"]]]

    return MetricField(components, None, "polynomial")


def metric_from_spec(spec: dict):
    """``(MetricField, default domain, label)`` from a metric spec."""
    kind = spec.get("kind")
    box = Domain.unit_box()
    if kind == "constant":
        _check_keys(spec, {"kind", "C"}, "constant metric spec")
        try:
            C = np.asarray(spec.get("C"), dtype=float)
        except (TypeError, ValueError):
            raise InvalidParams("C must be a 3x3 numeric matrix") from None
        if C.shape != (3, 3) or not np.all(np.isfinite(C)):
            raise InvalidParams("C must be a 3x3 numeric matrix")
        if not np.allclose(C, C.T, rtol=0, atol=1e-14):
            raise InvalidParams("C must be symmetric")
        return constant_metric(C), box, "constant"
    if kind in ("branch1", "branch2", "custom-poly", "spline"):
        return MetricAnsatzZ.from_json(spec).metric(), box, kind
    if kind == "bending":
        _check_keys(spec, {"kind", "params"}, "bending metric spec")
        p = spec.get("params", {})
        if not isinstance(p, dict):
            raise InvalidParams("params must be an object")
        _check_keys(p, {"a0", "a1", "b0"}, "bending params")
        return bending_metric(float(p.get("a0", 1.0)), float(p.get("a1", 1.0)), float(p.get("b0", 1.5))), box, kind
    if kind == "polynomial":
        return _polynomial_metric(spec), box, kind
    if kind == "family":
        fam = {k: v for k, v in spec.items() if k != "kind"}
        params = params_from_json(fam)
        return closed_form_metric(params.kind, params), default_domain(params.kind), f"family-{params.kind}"
    raise InvalidParams(
        f"metric kind must be one of constant, branch1, branch2, custom-poly, spline, bending, polynomial, family; got {kind!r}"
    )


# -- subcommands -------------------------------------------------------------------------

def _ricci_report(metric: MetricField, domain: Domain, tol: float) -> ConstraintReport:
    grid = domain.grid()
    Ric = ricci(metric, grid)
    res = {f"ricci_{A + 1}{B + 1}": np.abs(Ric[..., A, B]) for A in range(3) for B in range(A, 3)}
    return ConstraintReport.build(grid, res, tol, {"suite": "ricci"})


def _failures(section: str, report: ConstraintReport) -> list:
    lines = []
    for name, a in report.failures():
        at = "" if a["worst_point"] is None else " at (" + ", ".join(_fmt(c) for c in a["worst_point"]) + ")"
        lines.append(f"FAIL {section}.{name}: max {_fmt(a['max_abs'])}{at} > tol {_fmt(a['tolerance'])}")
    return lines


def cmd_verify_family(cfg: RunConfig) -> tuple:
    spec = cfg.load_spec()
    kind, params, default = family_from_spec(spec)
    domain = cfg.domain_for(default)
    if kind == FIXTURE_KIND:
        phi = sin_perturbed_map(params, domain)
        family = {"family": FIXTURE_KIND, "params": {"amplitude": params}}
    else:
        phi = make_family(kind, params, domain)
        family = params.to_json()
    metric = phi.metric()
    grid = domain.grid()
    messages = []
    sections = {}
    passed = True

    if kind != FIXTURE_KIND:
        C = metric(grid)
        dC = float(np.max(np.abs(C - closed_form_C(kind, params, grid, cartesian=True))))
        dJ = float(np.max(np.abs(np.linalg.det(phi.gradient(grid)) - closed_form_J(kind, params, grid))))
        ok = dC <= CLOSED_FORM_TOL and dJ <= CLOSED_FORM_TOL
        sections["closed_form"] = {"max_abs_C": dC, "max_abs_J": dJ, "tolerance": CLOSED_FORM_TOL, "pass": ok}
        if not ok:
            messages.append(f"FAIL closed_form: |C - FtF| {_fmt(dC)}, |J| {_fmt(dJ)} > tol {_fmt(CLOSED_FORM_TOL)}")
        passed &= ok

    reports = {
        "ricci": _ricci_report(metric, domain, cfg.tol_diff),
        "cauchy": residual_report(metric, domain, "cauchy", cfg.tol_diff),
        "hyper": residual_report(metric, domain, "hyper", cfg.tol_diff),
        "equilibrium": full_equilibrium_residual(metric, None, domain, cfg.materials, cfg.seed, tol=cfg.tol_quad),
    }
    for name, rep in reports.items():
        sections[name] = rep.to_json()
        messages += _failures(name, rep)
        passed &= rep.passed
    report = cfg.header()
    report.update({"family": family, "domain": domain.to_json(), "materials": cfg.materials, "sections": sections, "pass": passed})
    return report, passed, messages


def cmd_check_metric(cfg: RunConfig) -> tuple:
    spec = cfg.load_spec()
    metric, default, label = metric_from_spec(spec)
    domain = cfg.domain_for(default)
    metric = metric.restricted(domain)
    reports = {
        "flatness": _ricci_report(metric, domain, cfg.tol_diff),
        "cauchy": residual_report(metric, domain, "cauchy", cfg.tol_diff),
        "hyper": residual_report(metric, domain, "hyper", cfg.tol_diff),
    }
    sections = {n: r.to_json() for n, r in reports.items()}
    messages = [m for n, r in reports.items() for m in _failures(n, r)]
    passed = all(r.passed for r in reports.values())
    case = classify_invariants(metric, domain)
    report = cfg.header()
    report.update({
        "metric": label,
        "domain": domain.to_json(),
        "classification": case.to_json(),
        "sections": sections,
        "pass": passed,
    })
    return report, passed, messages


def cmd_reconstruct(cfg: RunConfig) -> tuple:
    spec = cfg.load_spec()
    metric, default, label = metric_from_spec(spec)
    domain = cfg.domain_for(default)
    res = reconstruct_map(metric, domain, seed=cfg.seed)
    defects = {
        "metric_defect": (res.metric_defect, METRIC_DEFECT_TOL),
        "compatibility_defect": (res.compatibility_defect, MIXED_PARTIAL_TOL),
        "path_independence_defect": (res.path_independence_defect, PATH_TOL),
    }
    checks = {n: {"value": v, "tolerance": t, "pass": v <= t} for n, (v, t) in defects.items()}
    passed = all(c["pass"] for c in checks.values())
    messages = [f"FAIL {n}: {_fmt(c['value'])} > tol {_fmt(c['tolerance'])}" for n, c in checks.items() if not c["pass"]]
    if cfg.format == "obj":
        return _obj_text(cfg, res.values, {"metric": label}), passed, messages
    report = cfg.header()
    report.update({"metric": label, "domain": domain.to_json(), "defects": checks, "map": res.to_json(), "pass": passed})
    return report, passed, messages


def cmd_classify(cfg: RunConfig) -> tuple:
    spec = cfg.load_spec()
    _check_keys(spec, {"initial", "branch", "params", "Z0", "span", "steps"}, "classify spec")
    Z0 = float(spec.get("Z0", 0.0))
    span = float(spec.get("span", 1.0))
    steps = spec.get("steps")
    if "initial" in spec:
        if "branch" in spec or "params" in spec:
            raise InvalidParams("give either initial or branch/params, not both")
        initial = spec["initial"]
    elif spec.get("branch") in ("branch1", "branch2"):
        p = spec.get("params", {})
        if not isinstance(p, dict):
            raise InvalidParams("params must be an object")
        _check_keys(p, {"C1", "C2", "C3", "C4"}, "branch params")
        initial = branch_initial_data(spec["branch"], [float(p.get(f"C{i}", 0.0)) for i in range(1, 5)], Z0)
    else:
        raise InvalidParams("classify spec needs initial data or a branch (branch1/branch2) with params")
    try:
        initial = [float(v) for v in initial]
    except (TypeError, ValueError):
        raise InvalidParams("initial must be six numbers") from None
    traj = integrate_flat_ansatz(initial, Z0, span, None if steps is None else int(steps), seed=cfg.seed)
    passed = traj.deviation <= CLASSIFY_TOL
    messages = [] if passed else [f"FAIL deviation {_fmt(traj.deviation)} > tol {_fmt(CLASSIFY_TOL)}"]
    report = cfg.header()
    report.update({"initial": initial, "Z0": Z0, "result": traj.to_json(), "tolerance": CLASSIFY_TOL, "pass": passed})
    return report, passed, messages


# -- meshes ----------------------------------------------------------------------------

def surface_mesh(counts) -> tuple:
    """Boundary nodes and outward quads of a structured ``nX x nY x nZ`` grid.

    Returns ``(node_index, faces)``: ``node_index`` lists the ``(i, j, k)`` of each
    vertex in X-fastest order; ``faces`` holds 1-based vertex indices. For ``n``
    nodes per axis there are ``n^3 - (n-2)^3`` vertices and ``6 (n-1)^2`` quads.
    """
    n = tuple(int(c) for c in counts)
    number = np.zeros(n, dtype=np.int64)
    nodes = []
    for k in range(n[2]):
        for j in range(n[1]):
            for i in range(n[0]):
                if i in (0, n[0] - 1) or j in (0, n[1] - 1) or k in (0, n[2] - 1):
                    nodes.append((i, j, k))
                    number[i, j, k] = len(nodes)
    faces = []
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        for side in (0, n[a] - 1):
            for v in range(n[c] - 1):
                for u in range(n[b] - 1):
                    quad = []
                    for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        idx = [0, 0, 0]
                        idx[a], idx[b], idx[c] = side, u + du, v + dv
                        quad.append(int(number[tuple(idx)]))
                    faces.append(quad if side else quad[::-1])
    return np.array(nodes, dtype=np.int64), np.array(faces, dtype=np.int64)


def _obj_text(cfg: RunConfig, values: np.ndarray, meta: dict) -> str:
    nodes, faces = surface_mesh(values.shape[:3])
    verts = values[nodes[:, 0], nodes[:, 1], nodes[:, 2]]
    lines = [
        f"# inextensa {__version__} {cfg.subcommand}",
        f"# spec-sha256 {cfg.spec_sha256}",
        f"# seed {cfg.seed}",
    ]
    lines += [f"# {k} {meta[k]}" for k in sorted(meta)]
    lines.append(f"# vertices {len(verts)} faces {len(faces)}")
    lines += ["v " + " ".join(_fmt(c) for c in v) for v in verts]
    lines += ["f " + " ".join(str(i) for i in f) for f in faces]
    return "\n".join(lines) + "\n"


def cmd_export_mesh(cfg: RunConfig) -> tuple:
    spec = cfg.load_spec()
    kind, params, default = family_from_spec(spec)
    if cfg.grid is None:
        cfg.grid = (20, 20, 20)
    domain = cfg.domain_for(default)
    if kind == FIXTURE_KIND:
        phi = sin_perturbed_map(params, domain)
    else:
        phi = make_family(kind, params, domain)
    values = phi(domain.grid())
    meta = {"family": kind, "grid": " ".join(str(c) for c in domain.counts),
            "domain": " ".join(_fmt(b) for b in domain.bounds)}
    if cfg.format == "obj":
        return _obj_text(cfg, values, meta), True, []
    nodes, faces = surface_mesh(domain.counts)
    report = cfg.header()
    report.update({
        "family": kind,
        "domain": domain.to_json(),
        "vertices": values[nodes[:, 0], nodes[:, 1], nodes[:, 2]],
        "faces": faces,
        "pass": True,
    })
    return report, True, []


COMMANDS = {
    "verify-family": cmd_verify_family,
    "check-metric": cmd_check_metric,
    "reconstruct": cmd_reconstruct,
    "export-mesh": cmd_export_mesh,
    "classify": cmd_classify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inextensa", description="Universal deformations of Z-fiber-reinforced solids.")
    parser.add_argument("--version", action="version", version=f"inextensa {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--spec", required=True, help="JSON spec file")
        p.add_argument("--domain", help="x0,x1,y0,y1,z0,z1 (use --domain=... for negative values)")
        p.add_argument("--grid", help="N or N,N,N nodes per axis")
        p.add_argument("--tol-diff", type=float, default=1e-10)
        p.add_argument("--tol-quad", type=float, default=1e-7)
        p.add_argument("--materials", type=int, default=10)
        p.add_argument("--seed", help="integer seed (fallback: INEXTENSA_SEED, then 1)")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=("json", "obj"), default=None)
    return parser


def config_from_args(args) -> RunConfig:
    fmt = args.format or ("obj" if args.subcommand == "export-mesh" else "json")
    cfg = RunConfig(
        subcommand=args.subcommand,
        spec=args.spec,
        out=args.out,
        domain=None if args.domain is None else _floats(args.domain, 6, "--domain"),
        grid=None if args.grid is None else _grid(args.grid),
        tol_diff=args.tol_diff,
        tol_quad=args.tol_quad,
        materials=args.materials,
        seed=_seed(args.seed),
        format=fmt,
    )
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = config_from_args(args)
        out, passed, messages = COMMANDS[cfg.subcommand](cfg)
        _write(cfg.out, out if isinstance(out, str) else dumps(out))
    except InputError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, InextensaError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for m in messages:
        print(m, file=sys.stderr)
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
