"""Scenario files: declarative pipelines of checks with pass/fail reports.

A scenario is a YAML mapping with keys ``version``, ``model``,
``definitions``, ``commands`` and optionally ``seed`` and ``oracle``.  See
README.md for the schema.  Every command yields one report row with a
status, a residual, and the tolerance it was judged against.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import diffeo as dg
from . import fio
from . import geometry as geo
from . import oracle as orc
from . import symbols as sym
from .expr import (DomainError, HomogeneousField, ParseError, ScalarField, check_homogeneity,
                   cotangent_coords, parse_expression, sample_cotangent)

SCHEMA_VERSION = 1
REPORT_VERSION = 1

__all__ = [
    "ScenarioError",
    "Scenario",
    "Report",
    "CommandResult",
    "RunOptions",
    "load_scenario",
    "bundled_scenarios",
    "resolve_scenario_path",
    "run_scenario",
    "emit_report",
    "parse_machine_report",
]


class ScenarioError(ValueError):
    pass


# failures a command may raise that count as a failed check rather than a crash
_EXPECTED = (sym.EllipticityError, dg.SmallnessError, dg.ConvergenceError, dg.FlowError,
             fio.ExperimentalDepthError, orc.InconclusiveError, orc.ResolutionError,
             geo.NotContactError, DomainError, np.linalg.LinAlgError)


@dataclass
class RunOptions:
    seed: int | None = None
    tol_scale: float = 1.0
    grid: int | None = None
    fail_fast: bool = False
    experimental_depth: bool = False
    timings: bool = False


@dataclass
class CommandResult:
    index: int
    op: str
    status: str
    residual: float
    tolerance: float
    message: str = ""
    wall_time: float | None = None

    @property
    def passed(self) -> bool:
        return self.status == "pass"


@dataclass
class Report:
    scenario: str
    seed: int
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> dict:
        rows = []
        for r in self.results:
            row = asdict(r)
            if row["wall_time"] is None:
                del row["wall_time"]
            rows.append(row)
        return {"report_version": REPORT_VERSION, "scenario": self.scenario, "seed": self.seed,
                "passed": self.passed, "commands": rows}


@dataclass
class Scenario:
    name: str
    n: int
    depth: int
    sobolev: int
    model_id: str
    model_g0: list | None
    seed: int
    definitions: dict
    commands: list
    oracle: dict


# ---------------------------------------------------------------------------
# loading


def bundled_scenarios() -> list:
    root = resources.files("fiogroup") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_scenario_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    candidate = resources.files("fiogroup") / "scenarios" / f"{name}.yaml"
    if candidate.is_file():
        return Path(str(candidate))
    raise ScenarioError(f"no scenario file or bundled scenario named {name!r}")


def _require(mapping, key, where):
    if key not in mapping:
        raise ScenarioError(f"{where}: missing key {key!r}")
    return mapping[key]


def _parse(text, n, where):
    try:
        return parse_expression(str(text), dim=n)
    except ParseError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _ref(defs, name, role, where):
    if name not in defs:
        raise ScenarioError(f"{where}: unresolved reference {name!r}")
    kind, value = defs[name]
    if role is not None and kind not in (role if isinstance(role, tuple) else (role,)):
        raise ScenarioError(f"{where}: {name!r} is a {kind}, expected {role}")
    return value


def _build_definition(name, entry, n, depth, defs, sol):
    where = f"definition {name!r}"
    if not isinstance(entry, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    role = _require(entry, "role", where)
    if role == "symbol":
        comps = _require(entry, "components", where)
        order = int(entry.get("order", 0))
        fields = tuple(_parse(c, n, f"{where} component {j}") for j, c in enumerate(comps))
        s = sym.GradedSymbol(order, fields, n)
        try:
            s.validate()
        except ValueError as exc:
            raise ScenarioError(f"{where}: {exc}") from None
        return "symbol", s
    if role == "hamiltonian":
        f = _parse(_require(entry, "expr", where), n, where)
        if not check_homogeneity(f, 1):
            raise ScenarioError(f"{where}: not homogeneous of degree 1")
        return "hamiltonian", HomogeneousField(f, 1)
    if role == "diffeo":
        kind = entry.get("kind", "flow")
        if kind == "identity":
            return "diffeo", dg.identity(n)
        if kind == "translation":
            shift = _require(entry, "shift", where)
            if len(shift) != n:
                raise ScenarioError(f"{where}: shift needs {n} entries")
            return "diffeo", dg.translation(shift)
        H = _ref(defs, _require(entry, "hamiltonian", where), "hamiltonian", where)
        if kind == "flow":
            return "diffeo", dg.flow(H, float(entry.get("t", 1.0)), sol,
                                     steps=int(entry.get("steps", sol.rk4_steps)))
        if kind == "phase":
            return "diffeo", dg.phase_to_diffeo(H, sol)
        raise ScenarioError(f"{where}: unknown diffeo kind {kind!r}")
    if role == "element":
        f = _ref(defs, entry["diffeo"], "diffeo", where) if "diffeo" in entry else dg.identity(n)
        P = (_ref(defs, entry["symbol"], "symbol", where) if "symbol" in entry
             else sym.GradedSymbol.identity(n, depth))
        return "element", fio.FioElement(f, P)
    if role == "tangent":
        H = _ref(defs, _require(entry, "hamiltonian", where), "hamiltonian", where)
        P = (_ref(defs, entry["symbol"], "symbol", where) if "symbol" in entry
             else sym.GradedSymbol.zero(n, 0))
        return "tangent", fio.FioTangent(H, P)
    raise ScenarioError(f"{where}: unknown role {role!r}")


def load_scenario(path, sol: dg.SolverConfig | None = None) -> Scenario:
    """Parse and validate a scenario file; all references must resolve."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    version = data.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"{path}: unsupported schema version {version}")
    model = data.get("model", {}) or {}
    n = int(model.get("dim", 1))
    depth = int(model.get("depth", 0))
    sobolev = int(model.get("sobolev", n + 1))
    model_id = str(model.get("id", f"cotangent-{n}"))
    sol = sol or dg.SolverConfig()
    defs: dict = {}
    for name, entry in (data.get("definitions") or {}).items():
        defs[name] = _build_definition(name, entry, n, depth, defs, sol)
    commands = data.get("commands") or []
    for i, cmd in enumerate(commands):
        if not isinstance(cmd, dict) or "op" not in cmd:
            raise ScenarioError(f"command {i}: expected a mapping with an 'op' key")
        if cmd["op"] not in OPERATIONS:
            raise ScenarioError(f"command {i}: unknown operation {cmd['op']!r}")
        for a in cmd.get("args", []) or []:
            if a not in defs:
                raise ScenarioError(f"command {i} ({cmd['op']}): unresolved reference {a!r}")
    return Scenario(path.stem, n, depth, sobolev, model_id, model.get("g0"),
                    int(data.get("seed", 0)), defs, commands, data.get("oracle") or {})


# ---------------------------------------------------------------------------
# operations; each returns (residual, passed-or-None, message)


@dataclass
class _Ctx:
    sc: Scenario
    seed: int
    opts: RunOptions
    sol: dg.SolverConfig

    def args(self, cmd, role, count=None):
        names = cmd.get("args", []) or []
        if count is not None and len(names) != count:
            raise ScenarioError(f"{cmd['op']}: expected {count} arguments, got {len(names)}")
        return [_ref(self.sc.definitions, a, role, cmd["op"]) for a in names]

    def points(self, count):
        rng = np.random.default_rng(self.seed)
        x, xi = sample_cotangent(self.sc.n, count, rng)
        return np.concatenate([x, xi], axis=-1)

    def quadrature(self):
        o = dict(self.sc.oracle)
        if self.opts.grid is not None:
            o["N"] = self.opts.grid
        return orc.QuadratureConfig(n=self.sc.n, **o)

    def contact_model(self):
        if not self.sc.model_id.startswith("std-contact"):
            raise ScenarioError(f"operation needs a std-contact model, got {self.sc.model_id}")
        return geo.contact_model(self.sc.model_id, g0=self.sc.model_g0)


def _op_parametrix(ctx, cmd):
    (a,) = ctx.args(cmd, "symbol", 1)
    rep = sym.invert_in_quotient(a, int(cmd.get("samples", 1000)), ctx.seed,
                                 return_report=True)
    return max(rep.left_residual, rep.right_residual, rep.left_right_gap), None, ""


def _op_ellipticity(ctx, cmd):
    (a,) = ctx.args(cmd, "symbol", 1)
    ok, c1, c2 = sym.is_uniformly_elliptic(a, seed=ctx.seed)
    expect = bool(cmd.get("expect", True))
    return c1, ok == expect, f"elliptic={ok} C1={c1!r} C2={c2!r}"


def _op_associativity(ctx, cmd):
    a, b, c = ctx.args(cmd, "symbol", 3)
    Z = ctx.points(int(cmd.get("samples", 200)))
    lhs = sym.graded_compose(sym.graded_compose(a, b), c)
    rhs = sym.graded_compose(a, sym.graded_compose(b, c))
    return lhs.max_abs_difference(rhs, Z), None, ""


def _op_adjoint(ctx, cmd):
    (a,) = ctx.args(cmd, "symbol", 1)
    Z = ctx.points(int(cmd.get("samples", 200)))
    return a.max_abs_difference(sym.adjoint(sym.adjoint(a)), Z), None, ""


def _op_jacobi(ctx, cmd):
    a, b, c = ctx.args(cmd, "symbol", 3)
    Z = ctx.points(int(cmd.get("samples", 200)))
    C = sym.commutator
    total = C(a, C(b, c)) + C(b, C(c, a)) + C(c, C(a, b))
    return float(np.max(np.abs(total.at(Z)))), None, ""


def _op_sobolev(ctx, cmd):
    a, b = ctx.args(cmd, "symbol", 2)
    params = sym.SobolevParams(q=a.order, k=a.depth, s=ctx.sc.sobolev,
                               R=float(cmd.get("radius", 6.0)),
                               x_points=int(cmd.get("x_points", 97)))
    d = sym.sobolev_distance(a, b, params)
    expect = cmd.get("expect", "finite")
    ok = {"finite": math.isfinite(d), "infinite": not math.isfinite(d), "zero": d == 0.0}
    if expect not in ok:
        raise ScenarioError("sobolev_distance: expect must be finite, infinite or zero")
    return d, ok[expect], f"distance={d!r}"


def _op_flow_contact(ctx, cmd):
    (H,) = ctx.args(cmd, "hamiltonian", 1)
    f = dg.flow(H, float(cmd.get("t", 1.0)), ctx.sol, steps=int(cmd.get("steps", 1000)))
    tol = float(cmd.get("tol", ctx.sol.contact_tol)) * ctx.opts.tol_scale
    rep = dg.verify_contact(f, int(cmd.get("samples", 200)), tol, ctx.seed)
    return rep.residuals["theta"], rep.ok, f"homogeneity={rep.residuals['homogeneity']!r}"


def _op_verify_contact(ctx, cmd):
    (f,) = ctx.args(cmd, "diffeo", 1)
    tol = float(cmd.get("tol", ctx.sol.contact_tol)) * ctx.opts.tol_scale
    rep = dg.verify_contact(f, int(cmd.get("samples", 200)), tol, ctx.seed)
    failed = [k for k, v in rep.passed.items() if not v]
    return rep.residuals["theta"], rep.ok, ("failed: " + ",".join(failed)) if failed else ""


def _op_chart_roundtrip(ctx, cmd):
    (H,) = ctx.args(cmd, "hamiltonian", 1)
    Z = ctx.points(int(cmd.get("samples", 200)))
    f = dg.phase_to_diffeo(H, ctx.sol)
    H2 = dg.diffeo_to_phase(f, ctx.sol)
    e1 = float(np.max(np.abs(H2.base.at(Z) - H.base.at(Z))))
    e2 = dg.max_deviation(dg.phase_to_diffeo(H2, ctx.sol), f, Z)
    return max(e1, e2), None, f"H->f->H={e1!r} f->H->f={e2!r}"


def _op_hamiltonian_theta(ctx, cmd):
    (H,) = ctx.args(cmd, "hamiltonian", 1)
    Z = ctx.points(int(cmd.get("samples", 200)))
    X = geo.hamiltonian_vector_field(H)
    return float(np.max(np.abs(geo.theta_of(X).at(Z) - H.base.at(Z)))), None, ""


def _op_ba_zero(ctx, cmd):
    model = ctx.contact_model()
    rng = np.random.default_rng(ctx.seed)
    Z = model.sample(int(cmd.get("samples", 100)), rng)
    worst = 0.0
    for _ in range(int(cmd.get("count", 10))):
        u = geo.random_smooth_field(model.coords, rng)
        X = geo.random_vector_field(model.coords, rng)
        first, second = geo.operator_B(*geo.operator_A(u, X, model))
        worst = max(worst, first.max_abs(Z), second.max_abs(Z))
    return worst, None, ""


def _op_associated_metric(ctx, cmd):
    model = ctx.contact_model()
    g, phi = geo.associated_metric(model)
    rep = geo.verify_associated(g, phi, model, int(cmd.get("samples", 200)), ctx.seed)
    worst = max(rep.residuals.values())
    return worst, None, ",".join(rep.failures())


def _random_triples(ctx, elements, count):
    rng = np.random.default_rng(ctx.seed)
    return [tuple(elements[k] for k in rng.integers(0, len(elements), 3)) for _ in range(count)]


def _op_group_axioms(ctx, cmd):
    elements = ctx.args(cmd, "element")
    Z = ctx.points(int(cmd.get("samples", 50)))
    exp = ctx.opts.experimental_depth
    e = fio.identity_element(ctx.sc.n, elements[0].depth)
    worst = 0.0
    for A, B, C in _random_triples(ctx, elements, int(cmd.get("count", 20))):
        worst = max(worst, fio.associativity_defect(A, B, C, Z, exp))
        Ainv = fio.invert(A, exp)
        worst = max(worst, fio.element_deviation(fio.multiply(A, Ainv, exp), e, Z),
                    fio.element_deviation(fio.multiply(Ainv, A, exp), e, Z))
    return worst, None, ""


def _op_exact_sequence(ctx, cmd):
    names = ctx.sc.definitions
    diffeos = [_ref(names, a, "diffeo", "exact_sequence") for a in cmd.get("diffeos", [])]
    symbols = [_ref(names, a, "symbol", "exact_sequence") for a in cmd.get("symbols", [])]
    elements = [_ref(names, a, "element", "exact_sequence") for a in cmd.get("args", []) or []]
    tol = float(cmd.get("tol", 1e-9)) * ctx.opts.tol_scale
    rep = fio.exact_sequence_check(diffeos, symbols, elements, int(cmd.get("samples", 50)),
                                   ctx.seed, tol)
    return max(rep.checks.values()), rep.ok, "; ".join(rep.notes)


def _op_composition_oracle(ctx, cmd):
    a, b = ctx.args(cmd, "symbol", 2)
    depth = cmd.get("depth")
    err = orc.composition_mismatch(a, b, ctx.quadrature(), depth=None if depth is None
                                   else int(depth))
    return err, None, ""


def _op_select_convention(ctx, cmd):
    pairs = None
    if cmd.get("args"):
        a, b = ctx.args(cmd, "symbol", 2)
        pairs = [(a, b), (b, a)]
    res = orc.select_convention(pairs, ctx.quadrature())
    choice = res.choice.name if res.choice else "inconclusive"
    inv = 1.0 / res.separation if res.separation > 0 else math.inf
    return inv, res.conclusive, f"choice={choice} separation={res.separation!r}"


def _op_egorov(ctx, cmd):
    names = cmd.get("args", []) or []
    if len(names) != 2:
        raise ScenarioError("egorov: expected a diffeo and a symbol")
    f = _ref(ctx.sc.definitions, names[0], "diffeo", "egorov")
    P = _ref(ctx.sc.definitions, names[1], "symbol", "egorov")
    return orc.egorov_mismatch(f, P, ctx.quadrature(), sol=ctx.sol), None, ""


def _op_bracket_fd(ctx, cmd):
    T1, T2 = ctx.args(cmd, "tangent", 2)
    Z = ctx.points(int(cmd.get("samples", 20)))
    d = orc.bracket_fd_defect(T1, T2, Z, float(cmd.get("h", 0.02)))
    return max(d.values()), None, f"diffeo={d['diffeo']!r} symbol={d['symbol']!r}"


OPERATIONS: dict[str, tuple[Callable, float]] = {
    "parametrix": (_op_parametrix, 1e-9),
    "ellipticity": (_op_ellipticity, 0.0),
    "associativity": (_op_associativity, 1e-9),
    "adjoint_involution": (_op_adjoint, 1e-10),
    "commutator_jacobi": (_op_jacobi, 1e-9),
    "sobolev_distance": (_op_sobolev, 0.0),
    "flow_contact": (_op_flow_contact, 1e-6),
    "verify_contact": (_op_verify_contact, 1e-6),
    "chart_roundtrip": (_op_chart_roundtrip, 1e-7),
    "hamiltonian_theta": (_op_hamiltonian_theta, 1e-12),
    "ba_zero": (_op_ba_zero, 1e-12),
    "associated_metric": (_op_associated_metric, 1e-8),
    "group_axioms": (_op_group_axioms, 1e-9),
    "exact_sequence": (_op_exact_sequence, 1e-9),
    "composition_oracle": (_op_composition_oracle, 0.05),
    "select_convention": (_op_select_convention, 1 / 3),
    "egorov": (_op_egorov, 0.05),
    "bracket_fd": (_op_bracket_fd, 1e-4),
}


def run_scenario(path, options: RunOptions | None = None) -> Report:
    """Load a scenario and execute its commands in order."""
    opts = options or RunOptions()
    sol = dg.SolverConfig()
    sc = load_scenario(path, sol)
    seed = sc.seed if opts.seed is None else opts.seed
    ctx = _Ctx(sc, seed, opts, sol)
    report = Report(sc.name, seed)
    for i, cmd in enumerate(sc.commands):
        op = cmd["op"]
        fn, default_tol = OPERATIONS[op]
        tol = float(cmd.get("tol", default_tol)) * opts.tol_scale
        start = time.perf_counter()
        try:
            residual, passed, message = fn(ctx, cmd)
            if passed is None:
                passed = residual <= tol
            status = "pass" if passed else "fail"
        except _EXPECTED as exc:
            residual, status, message = math.inf, "fail", f"{type(exc).__name__}: {exc}"
        except ScenarioError as exc:
            residual, status, message = math.inf, "error", str(exc)
        wall = time.perf_counter() - start if opts.timings else None
        report.results.append(CommandResult(i, op, status, float(residual), tol, message, wall))
        if opts.fail_fast and status != "pass":
            break
    return report


# ---------------------------------------------------------------------------
# output


def _num(v: float) -> str:
    return repr(float(v))


def emit_report(report: Report, fmt: str = "text") -> str:
    """Render as an aligned text table or as a JSON document (``machine``)."""
    if fmt == "machine":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = [f"scenario: {report.scenario}  seed: {report.seed}  "
             f"overall: {'PASS' if report.passed else 'FAIL'}",
             f"{'#':>3}  {'operation':<20} {'status':<6} {'residual':<24} {'tolerance':<24}"
             + ("  wall_s" if any(r.wall_time is not None for r in report.results) else "")]
    lines[1] = lines[1].rstrip()
    for r in report.results:
        line = (f"{r.index:>3}  {r.op:<20} {r.status:<6} {_num(r.residual):<24} "
                f"{_num(r.tolerance):<24}")
        if r.wall_time is not None:
            line += f"  {r.wall_time:.3f}"
        if r.message:
            line += f"  {r.message}"
        lines.append(line.rstrip())
    return "\n".join(lines) + "\n"


def parse_machine_report(text: str) -> Report:
    data = json.loads(text)
    if data.get("report_version") != REPORT_VERSION:
        raise ValueError("unsupported report version")
    rows = [CommandResult(r["index"], r["op"], r["status"], float(r["residual"]),
                          float(r["tolerance"]), r.get("message", ""), r.get("wall_time"))
            for r in data["commands"]]
    return Report(data["scenario"], data["seed"], rows)
