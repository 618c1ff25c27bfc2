"""Command-line driver.

Runs are described by a flat, line-oriented configuration file::

    schema = 1
    command = sweep
    k = 1, 2, 4, 8, 16

    [family]
    kind = transmission
    a_value = 2
    n_value = 0.5

Keys inside a ``[section]`` are addressed as ``section.key``.  Every key has
a default; unknown keys and invalid values are reported with their line
number.  Exit status: 0 when everything asserted passed, 1 when an asserted
check failed, 2 on configuration errors or refused runs.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import coeff, consts, fem, geom, harness, morawetz, rays
from .coeff import ConditionId, ConfigurationError

COMMANDS = ("check-coeffs", "constants", "solve", "sweep", "rays", "morawetz-check", "mollify-study", "infsup")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ConfigurationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# ---------------------------------------------------------------------------
# value parsers


def _float(raw: str) -> float:
    v = float(raw)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _positive(raw: str) -> float:
    v = _float(raw)
    if v <= 0:
        raise ValueError("must be positive")
    return v


def _nonneg(raw: str) -> float:
    v = _float(raw)
    if v < 0:
        raise ValueError("must be non-negative")
    return v


def _pos_int(raw: str) -> int:
    v = int(raw)
    if v <= 0:
        raise ValueError("must be a positive integer")
    return v


def _nonneg_int(raw: str) -> int:
    v = int(raw)
    if v < 0:
        raise ValueError("must be a non-negative integer")
    return v


def _floats(raw: str) -> tuple:
    return tuple(_float(p) for p in raw.replace(";", ",").split(",") if p.strip()) if raw.strip() else ()


def _pos_floats(raw: str) -> tuple:
    vals = _floats(raw)
    if any(v <= 0 for v in vals):
        raise ValueError("all entries must be positive")
    return vals


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("must be true or false")


def _choice(*options: str) -> Callable:
    def parse(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return raw
    return parse


def _text(raw: str) -> str:
    return raw


def _dims(raw: str) -> tuple:
    vals = tuple(int(p) for p in raw.split(",") if p.strip())
    if not vals or any(v not in (2, 3) for v in vals):
        raise ValueError("dimensions must be 2 or 3")
    return vals


# key -> (parser, default as text)
SCHEMA: dict = {
    "schema": (_pos_int, None),
    "command": (_choice(*COMMANDS), "constants"),
    "seed": (_nonneg_int, "0"),
    "out": (_text, "out"),
    "workers": (_nonneg_int, "0"),
    "k": (_pos_floats, "1"),
    # coefficient family
    "family.kind": (_choice("constant", "radial_profile", "transmission", "piecewise_constant"), "constant"),
    "family.a_value": (_positive, "1"),
    "family.n_value": (_positive, "1"),
    "family.a_profile": (_choice("constant", "bump", "hat"), "constant"),
    "family.a_params": (_floats, "1"),
    "family.n_profile": (_choice("constant", "bump", "hat", "tabulated"), "constant"),
    "family.n_params": (_floats, "1"),
    "family.n_table": (_text, ""),
    "family.interface": (_choice("square", "disk"), "square"),
    "family.interface_size": (_positive, "1"),
    "family.a_layers": (_pos_floats, ""),
    "family.n_layers": (_pos_floats, ""),
    "family.layer_radii": (_pos_floats, ""),
    "family.condition": (_choice("A1", "A2", "N3"), "A1"),
    # truncated domain
    "domain.outer": (_choice("square", "regular", "polygon"), "square"),
    "domain.outer_size": (_positive, "2"),
    "domain.outer_vertices": (_floats, ""),
    "domain.obstacle": (_choice("none", "square", "regular"), "none"),
    "domain.obstacle_size": (_positive, "0.5"),
    "domain.conform": (_bool, "true"),
    "domain.theta": (_positive, "1"),
    # meshing
    "mesh.h0": (_positive, "0.25"),
    "mesh.ppw": (_positive, "20"),
    # sweep
    "sweep.safety_factor": (_nonneg, "0.1"),
    "sweep.mode": (_choice("assert", "report"), "assert"),
    # constants
    "constants.case": (_choice("C1", "C2", "C3C5", "edp_A2", "edp_N3", "tedp_A1", "tedp_A2", "tedp_N3",
                               "infsup", "cutoff"), "C1"),
    "constants.d": (_pos_int, "2"),
    "constants.R": (_positive, "1"),
    "constants.mu1": (_positive, "1"),
    "constants.mu2": (_positive, "1"),
    "constants.mu3": (_positive, "1"),
    "constants.mu4": (_positive, "1"),
    "constants.A_min": (_positive, "1"),
    "constants.A_max": (_positive, "1"),
    "constants.n_min": (_positive, "1"),
    "constants.n_max": (_positive, "1"),
    "constants.L_D": (_positive, "0.5"),
    "constants.a": (_positive, "0.5"),
    "constants.L_I": (_positive, "1"),
    "constants.a_I": (_positive, "1"),
    "constants.theta_min": (_positive, "1"),
    "constants.theta_max": (_positive, "1"),
    "constants.n_max_GammaI": (_positive, "1"),
    "constants.mu_min": (_positive, "1"),
    "constants.C1": (_positive, "1"),
    # rays
    "rays.R": (_positive, "2"),
    "rays.n_rays": (_nonneg_int, "100"),
    "rays.s_budget": (_nonneg, "0"),
    "rays.ds": (_positive, "0.02"),
    "rays.mu": (_float, "-1"),
    "rays.launch_circular": (_bool, "false"),
    "rays.record_every": (_pos_int, "50"),
    "rays.expect": (_choice("none", "nontrapping", "trapping"), "none"),
    # identity checks
    "morawetz.cases": (_pos_int, "100"),
    "morawetz.dims": (_dims, "2, 3"),
    "morawetz.tol": (_positive, "1e-10"),
    "morawetz.integrated": (_bool, "false"),
    "morawetz.level": (_nonneg_int, "3"),
    "morawetz.integrated_tol": (_positive, "1e-6"),
    # mollification
    "mollify.deltas": (_pos_floats, "0.2, 0.1, 0.05"),
    "mollify.R": (_nonneg, "0"),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values`` maps every schema key to its parsed value."""

    values: dict
    source_lines: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def command(self) -> str:
        return self.values["command"]

    def with_overrides(self, **kw) -> "RunConfig":
        vals = dict(self.values)
        vals.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig(vals, self.source_lines)


def parse_config(text: str) -> RunConfig:
    """Parse the flat ``key = value`` format with ``[section]`` headers."""
    section = ""
    raw: dict = {}
    lines: dict = {}
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]") or not s[1:-1].strip():
                raise ConfigError(f"malformed section header {s!r}", no)
            section = s[1:-1].strip()
            if not any(k.startswith(section + ".") for k in SCHEMA):
                raise ConfigError(f"unknown section [{section}]", no)
            continue
        if "=" not in s:
            raise ConfigError(f"expected 'key = value', got {s!r}", no)
        key, value = (p.strip() for p in s.split("=", 1))
        full = f"{section}.{key}" if section else key
        if full not in SCHEMA:
            raise ConfigError(f"unknown key {full!r}", no)
        if full in raw:
            raise ConfigError(f"duplicate key {full!r} (first set on line {lines[full]})", no)
        raw[full] = value
        lines[full] = no
    if "schema" not in raw:
        raise ConfigError("missing required key 'schema' (use schema = 1)")
    values = {}
    for key, (parser, default) in SCHEMA.items():
        text_value = raw.get(key, default)
        try:
            values[key] = parser(text_value)
        except ValueError as exc:
            raise ConfigError(f"invalid value {text_value!r} for {key}: {exc}", lines.get(key)) from None
    if values["schema"] != 1:
        raise ConfigError(f"unsupported schema {values['schema']} (expected 1)", lines.get("schema"))
    if not values["k"]:
        raise ConfigError("k must list at least one wavenumber", lines.get("k"))
    return RunConfig(values, lines)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# builders


def build_family_from(cfg: RunConfig) -> tuple:
    spec = coeff.FamilySpec(
        kind=cfg["family.kind"], a_value=cfg["family.a_value"], n_value=cfg["family.n_value"],
        a_profile=cfg["family.a_profile"], a_params=cfg["family.a_params"], n_profile=cfg["family.n_profile"],
        n_params=cfg["family.n_params"], n_table=cfg["family.n_table"] or None, interface=cfg["family.interface"],
        interface_size=cfg["family.interface_size"], a_layers=cfg["family.a_layers"],
        n_layers=cfg["family.n_layers"], layer_radii=cfg["family.layer_radii"])
    return coeff.build_family(spec)


def _shape(kind: str, size: float, vertices=()) -> np.ndarray:
    if kind == "square":
        return geom.square(size)
    if kind == "regular":
        return geom.regular_polygon(128, size)
    pts = np.asarray(vertices, dtype=float)
    if pts.size < 6 or pts.size % 2:
        raise ConfigError("domain.outer_vertices needs an even number (>= 6) of coordinates")
    return pts.reshape(-1, 2)


def build_domain_from(cfg: RunConfig) -> geom.DomainSpec:
    outer = _shape(cfg["domain.outer"], cfg["domain.outer_size"], cfg["domain.outer_vertices"])
    obstacle = None if cfg["domain.obstacle"] == "none" else _shape(cfg["domain.obstacle"],
                                                                     cfg["domain.obstacle_size"])
    interfaces = ()
    if cfg["domain.conform"] and cfg["family.kind"] == "transmission":
        size = cfg["family.interface_size"]
        interfaces = (geom.square(size) if cfg["family.interface"] == "square"
                      else geom.regular_polygon(128, size),)
    return geom.DomainSpec(outer, obstacle, interfaces)


def build_sweep_family(cfg: RunConfig) -> harness.SweepFamily:
    A, n = build_family_from(cfg)
    name = cfg["family.kind"]
    if name == "transmission":
        name = f"transmission(a_i={cfg['family.a_value']:g},n_i={cfg['family.n_value']:g})"
    return harness.SweepFamily(name, A, n, build_domain_from(cfg), ConditionId(cfg["family.condition"]),
                               cfg["domain.theta"])


# ---------------------------------------------------------------------------
# commands


class Runner:
    def __init__(self, cfg: RunConfig, out: Path, quiet: bool):
        self.cfg, self.out, self.quiet = cfg, out, quiet

    def say(self, text: str) -> None:
        if not self.quiet:
            print(text)

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    # -- check-coeffs
    def check_coeffs(self) -> int:
        A, n = build_family_from(self.cfg)
        gp = geom.geometric_params(build_domain_from(self.cfg))
        region = coeff.SamplingRegion(radius=gp.L_I)
        reports = [coeff.check_condition_A1(A, n, region), coeff.check_condition_A2(A, region),
                   coeff.check_condition_N3(n, region)]
        for f, direction in ((n, coeff.Direction.NONDECREASING), (A, coeff.Direction.NONINCREASING)):
            if f.regularity is not coeff.Regularity.PIECEWISE_CONSTANT:
                reports.append(coeff.check_radial_monotone(f, direction, region))
        lines = ["condition,holds,margins,worst_point,samples,method"]
        for r in reports:
            self.say(str(r))
            lines.append(",".join([r.condition_id.value, str(r.holds).lower(),
                                   " ".join(repr(float(m)) for m in r.mu_values),
                                   " ".join(repr(float(c)) for c in r.worst_point), str(r.sample_count), r.method]))
        self.path("conditions.csv").write_text("\n".join(lines) + "\n")
        wanted = ConditionId(self.cfg["family.condition"])
        ok = next(r.holds for r in reports if r.condition_id is wanted)
        self.say(f"requested condition {wanted.value}: {'holds' if ok else 'FAILS'}")
        return EXIT_OK if ok else EXIT_FAIL

    # -- constants
    def constants(self) -> int:
        c = {k.split(".", 1)[1]: v for k, v in self.cfg.values.items() if k.startswith("constants.")}
        case = c["case"]
        rows = []
        if case == "cutoff":
            rep = consts.verify_cutoff_properties()
            rows = [("sup_ratio_M", rep.sup_ratio_M), ("sup_ratio_six", rep.sup_ratio_six),
                    ("max_formula_mismatch", rep.max_formula_mismatch)]
            ok = rep.holds
        else:
            ok = True
            for k in self.cfg["k"]:
                rows += [(f"{name}[k={k:g}]", v) for name, v in self._constants_for(case, c, k)]
        lines = ["name,value"] + [f"{name},{float(v)!r}" for name, v in rows]
        for name, v in rows:
            self.say(f"{name} = {float(v):.12g}")
        self.path("constants.csv").write_text("\n".join(lines) + "\n")
        return EXIT_OK if ok else EXIT_FAIL

    @staticmethod
    def _constants_for(case: str, c: dict, k: float) -> list:
        if case == "C1":
            return [("C1", consts.constant_C1(c["mu1"], c["mu2"], c["R"], c["d"], k))]
        if case == "C2":
            return [("C2", consts.constant_C2(c["mu3"], c["A_max"], c["R"], c["d"], k))]
        if case == "C3C5":
            return list(zip(("C3", "C4", "C5"),
                            consts.constants_C3_C5(c["mu4"], c["n_max"], c["R"], c["L_D"], c["a"], c["d"], k)))
        if case == "infsup":
            return [("infsup_lower", consts.infsup_lower_bound(c["A_min"], c["n_min"], c["n_max"], c["mu_min"],
                                                               c["C1"], k))]
        if case.startswith("edp_"):
            res = consts.edp_constants(consts.EdpCase.A2 if case == "edp_A2" else consts.EdpCase.N3, k=k, d=c["d"],
                                       R=c["R"], mu3=c["mu3"], A_max=c["A_max"], mu4=c["mu4"], n_max=c["n_max"],
                                       L_D=c["L_D"], a=c["a"])
            return res.as_rows()
        tcase = {"tedp_A1": consts.TedpCase.A1, "tedp_A2": consts.TedpCase.A2, "tedp_N3": consts.TedpCase.N3}[case]
        res = consts.tedp_constants(tcase, k=k, d=c["d"], L_I=c["L_I"], a_I=c["a_I"], theta_min=c["theta_min"],
                                    theta_max=c["theta_max"], n_max_GammaI=c["n_max_GammaI"], mu1=c["mu1"],
                                    mu2=c["mu2"], mu3=c["mu3"], A_max=c["A_max"], mu4=c["mu4"], n_max=c["n_max"],
                                    L_D=c["L_D"], a_D=c["a"])
        return res.as_rows()

    # -- solve
    def solve(self) -> int:
        fam = build_sweep_family(self.cfg)
        f, _, _ = harness.gaussian_source(fam.domain)
        k = self.cfg["k"][0]
        mesh = geom.build_mesh(fam.domain, harness.mesh_size(k, self.cfg["mesh.h0"], self.cfg["mesh.ppw"]))
        prob = fem.HelmholtzProblem(k=k, A=fam.A, n=fam.n, domain=fam.domain, theta=fam.theta, f=f)
        sol = fem.solve_problem(prob, mesh)
        geom.write_mesh(mesh, self.path("mesh.txt"))
        fem.write_solution_csv(sol, mesh, self.path("solution.csv"))
        self.say(f"k = {k:g}, {mesh.n_vertices} vertices, relative residual {sol.residual:.2e}")
        for name, v in sol.norms.items():
            self.say(f"{name} = {v:.10g}")
        return EXIT_OK

    # -- sweep
    def sweep(self) -> int:
        fam = build_sweep_family(self.cfg)
        report_only = self.cfg["sweep.mode"] == "report"
        rep = harness.k_sweep_bound_check(fam, self.cfg["k"], self.cfg["mesh.h0"], self.cfg["mesh.ppw"],
                                          self.cfg["sweep.safety_factor"], report_only,
                                          self.cfg["workers"] or None)
        rep.write_csv(self.path("sweep.csv"))
        self.path("sweep_summary.txt").write_text(rep.summary() + "\n")
        self.say(rep.summary())
        if report_only:
            return EXIT_OK
        return EXIT_OK if rep.all_pass else EXIT_FAIL

    # -- rays
    def rays(self) -> int:
        _, n = build_family_from(self.cfg)
        R = self.cfg["rays.R"]
        mu = self.cfg["rays.mu"]
        if mu < 0:
            rep = coeff.check_condition_N3(n, coeff.SamplingRegion(radius=R))
            mu = rep.mu_values[0] if rep.holds else None
            self.say(str(rep))
        elif mu == 0:
            mu = None
        extra = []
        if self.cfg["rays.launch_circular"]:
            prof_r = rays.circular_orbit_radii(n, R)
            if prof_r:
                r1 = prof_r[0]
                extra.append((np.array([r1, 0.0]), np.array([0.0, 1.0])))
                self.say(f"circular-orbit launch at r = {r1:.12g}")
            else:
                self.say("no circular-orbit radius inside B_R")
        s_budget = self.cfg["rays.s_budget"] or None
        rep = rays.classify_trapping(n, R, self.cfg["rays.n_rays"], s_budget, mu, extra, self.cfg["rays.ds"],
                                     self.cfg["rays.record_every"])
        rays.write_trajectories_csv(rep.traces, self.path("trajectories.csv"), n)
        self.path("rays_verdict.txt").write_text(rep.summary() + "\n")
        self.say(rep.summary())
        expect = self.cfg["rays.expect"]
        if expect == "none":
            return EXIT_OK
        want = rays.Verdict.NONTRAPPING_EVIDENCE if expect == "nontrapping" else rays.Verdict.TRAPPING_EVIDENCE
        ok = rep.verdict is want and (rep.all_within_bound is not False)
        return EXIT_OK if ok else EXIT_FAIL

    # -- morawetz-check
    def morawetz_check(self) -> int:
        tol = self.cfg["morawetz.tol"]
        seed0 = self.cfg["seed"]
        lines = ["seed,dim,max_residual,max_part_residual,additivity_defect"]
        worst = 0.0
        for d in self.cfg["morawetz.dims"]:
            for i in range(self.cfg["morawetz.cases"]):
                v, A, n, spec, x = morawetz.random_case(seed0 + i, d)
                res = float(np.max(morawetz.pointwise_identity_residual(v, A, n, spec, x)))
                part = max(float(np.max(morawetz.pointwise_identity_residual(v, A, n, spec, x, part=p)))
                           for p in morawetz.PARTS)
                add = float(np.max(morawetz.additivity_defect(v, A, n, spec, x)))
                worst = max(worst, res, part, add)
                lines.append(f"{seed0 + i},{d},{res!r},{part!r},{add!r}")
        self.path("morawetz.csv").write_text("\n".join(lines) + "\n")
        ok = worst <= tol
        self.say(f"pointwise identity: worst scaled residual {worst:.3e} (tolerance {tol:g})")
        if self.cfg["morawetz.integrated"]:
            v, A, n, spec, _ = morawetz.random_case(seed0, 2)
            dom = geom.DomainSpec(geom.square(2.0), geom.square(0.5))
            chk = morawetz.integrated_identity_check(v, A, n, spec, dom, level=self.cfg["morawetz.level"])
            good = chk.residual < self.cfg["morawetz.integrated_tol"]
            self.say(f"integrated identity: relative residual {chk.residual:.3e} at level {chk.level}")
            ok = ok and good
        return EXIT_OK if ok else EXIT_FAIL

    # -- mollify-study
    def mollify_study(self) -> int:
        _, n = build_family_from(self.cfg)
        R = self.cfg["mollify.R"] or None
        rep = harness.mollification_study(n, self.cfg["mollify.deltas"], R)
        rep.write_csv(self.path("mollify.csv"))
        for r in rep.rows:
            self.say(f"delta={r.delta:g} L2 distance={r.l2_distance:.6e} mu={r.mu_radial:.12g} "
                     f"{'preserved' if r.preserved else 'LOST'}")
        self.say(f"log-log slope {rep.slope:.4f}")
        return EXIT_OK if all(r.preserved for r in rep.rows) else EXIT_FAIL

    # -- infsup
    def infsup(self) -> int:
        fam = build_sweep_family(self.cfg)
        rep = harness.infsup_sweep(fam, self.cfg["k"], self.cfg["mesh.h0"], self.cfg["mesh.ppw"])
        rep.write_csv(self.path("infsup.csv"))
        for r in rep.rows:
            lb = "n/a" if r.lower_bound is None else f"{r.lower_bound:.6e}"
            self.say(f"k={r.k:g} discrete inf-sup={r.discrete_infsup:.6e} lower bound={lb}"
                     + ("" if r.converged else " (not converged)"))
        ok = all(r.discrete_infsup > 0 and r.converged for r in rep.rows)
        return EXIT_OK if ok else EXIT_FAIL


def run(cfg: RunConfig, out: Path | str | None = None, quiet: bool = False) -> int:
    """Execute a validated configuration; returns the exit status."""
    runner = Runner(cfg, Path(out if out is not None else cfg["out"]), quiet)
    method = getattr(runner, cfg.command.replace("-", "_"))
    try:
        return method()
    except (harness.ConditionNotSatisfied, consts.DomainError, ConfigurationError, geom.GeometryError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (fem.SolverError, rays.IntegrationError, geom.MeshError, morawetz.IdentityError,
            coeff.EvaluationError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="helmbound", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the config's command")
    parser.add_argument("--config", required=True, help="path to the key = value configuration")
    parser.add_argument("--out", help="output directory (overrides the config's out)")
    parser.add_argument("--seed", type=int, help="random seed (overrides the config's seed)")
    parser.add_argument("--quiet", action="store_true", help="suppress stdout")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = cfg.with_overrides(command=args.command, seed=args.seed)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.out, args.quiet)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
