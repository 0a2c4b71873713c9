"""Command-line front end: ``medrobust estimate | simulate | diagnose``.

Structured options live in a JSON config; flags cover only paths, seed,
thread count and output format. Every number in a report comes from the
library calls the config describes.

Exit codes: 0 success, 2 input error, 3 convergence or identification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Optional

import numpy as np

from .core import ESTIMATOR_TAGS, Dataset, ModelSpec
from .errors import (
    ConvergenceError,
    InputError,
    MedRobustError,
    NegativeVarianceError,
    WeakIdentificationError,
)
from .estimators import SolveOptions, certificate, solve
from .inference import VarianceConfig, breusch_pagan, effect_report
from .simulation import SCENARIOS, DgpConfig, run_monte_carlo
from .systems import InteractionWeights

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3
COMMANDS = ("estimate", "simulate", "diagnose")
FORMATS = ("json", "csv")
INTERCEPT = "(intercept)"


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class ColumnMap:
    """Which CSV columns hold the outcome, exposure, mediator and covariates."""

    y: str = "y"
    a: str = "a"
    m: str = "m"
    covariates: tuple = ()

    @classmethod
    def from_dict(cls, raw: dict) -> "ColumnMap":
        _reject_unknown(raw, {"y", "a", "m", "covariates"}, "columns")
        covs = raw.get("covariates", ())
        if isinstance(covs, str) or not all(isinstance(c, str) for c in covs):
            raise InputError("columns.covariates must be a list of column names")
        return cls(raw.get("y", "y"), raw.get("a", "a"), raw.get("m", "m"), tuple(covs))

    @property
    def required(self) -> tuple:
        return (self.y, self.a, self.m) + self.covariates


@dataclass(frozen=True)
class Table:
    header: tuple
    columns: dict  # name -> float array
    rows: int


def read_table(path, required, dichotomize: Optional[str] = None):
    """Parse a UTF-8, comma-separated file with a header row.

    Only ``required`` columns are converted. Any missing or non-numeric cell
    is an error naming the data row (1-based) and column. Returns the table
    and, when ``dichotomize`` names a column, the median threshold used.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = tuple(h.strip() for h in next(reader))
            except StopIteration:
                raise InputError(f"{path}: empty file") from None
            rows = [row for row in reader if row]
    except FileNotFoundError:
        raise InputError(f"input file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    wanted = list(dict.fromkeys(list(required) + ([dichotomize] if dichotomize else [])))
    missing = [c for c in wanted if c not in header]
    if missing:
        raise InputError(f"missing column(s) {missing} in {path}")
    if len(set(header)) != len(header):
        raise InputError(f"{path}: duplicate column names in header")
    pos = {name: header.index(name) for name in wanted}
    cols = {name: np.empty(len(rows)) for name in wanted}
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise InputError(f"row {i}: expected {len(header)} fields, found {len(row)}")
        for name in wanted:
            cell = row[pos[name]].strip()
            if cell == "" or cell.lower() in ("na", "nan", "null"):
                raise InputError(f"row {i}: missing value in column {name!r}")
            try:
                value = float(cell)
            except ValueError:
                raise InputError(f"row {i}: non-numeric value {cell!r} in column {name!r}") from None
            if not math.isfinite(value):
                raise InputError(f"row {i}: non-finite value {cell!r} in column {name!r}")
            cols[name][i - 1] = value
    threshold = None
    if dichotomize:
        threshold = float(np.median(cols[dichotomize]))
        cols[dichotomize] = (cols[dichotomize] > threshold).astype(np.float64)
    return Table(header, cols, len(rows)), threshold


def ingest_csv(path, mapping: ColumnMap | dict, dichotomize: Optional[str] = None) -> Dataset:
    """Load a complete-case CSV into a Dataset with a leading constant column."""
    return _ingest(path, mapping, dichotomize)[0]


def _ingest(path, mapping, dichotomize=None):
    if isinstance(mapping, dict):
        mapping = ColumnMap.from_dict(mapping)
    table, threshold = read_table(path, mapping.required, dichotomize)
    if table.rows == 0:
        raise InputError(f"{path}: no data rows")
    x = np.column_stack([np.ones(table.rows)] + [table.columns[c] for c in mapping.covariates])
    names = (INTERCEPT,) + mapping.covariates
    data = Dataset(
        y=table.columns[mapping.y],
        a=table.columns[mapping.a],
        m=table.columns[mapping.m],
        x=x,
        x_names=names,
    )
    info = {"path": str(path), "rows_read": table.rows, "rows_rejected": 0, "n": data.n}
    if dichotomize:
        info["dichotomized"] = {"column": dichotomize, "threshold": threshold, "rule": "value > median"}
    return data, info


def write_csv(path, data: Dataset, names=("y", "a", "m")):
    """Write a Dataset as CSV (covariates without the constant column)."""
    covs = [n for n in data.x_names[1:]] if data.x_names else [f"x{j}" for j in range(1, data.p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + covs)
        for i in range(data.n):
            w.writerow([repr(float(v)) for v in (data.y[i], data.a[i], data.m[i], *data.x[i, 1:])])


# ---------------------------------------------------------------------------
# configuration


def _reject_unknown(raw, allowed, where):
    if not isinstance(raw, dict):
        raise InputError(f"{where} must be a JSON object")
    extra = sorted(set(raw) - set(allowed))
    if extra:
        raise InputError(f"unknown key(s) {extra} in {where}")


@dataclass(frozen=True)
class ModelConfig:
    """Nuisance designs by covariate name; the constant column is always included."""

    pi: Optional[tuple] = None
    g: Optional[tuple] = None
    rho: Optional[tuple] = None
    h: Optional[tuple] = None
    pi_link: Optional[str] = None
    rho_link: str = "log"
    exposure_kind: str = "binary"

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        _reject_unknown(raw, {f.name for f in fields(cls)}, "model")
        kw = dict(raw)
        for key in ("pi", "g", "rho", "h"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def build(self, data: Dataset) -> ModelSpec:
        names = list(data.x_names)

        def cols(selected):
            if selected is None:
                return tuple(range(data.p))
            bad = [c for c in selected if c not in names]
            if bad:
                raise InputError(f"model design references unknown covariate(s) {bad}")
            return (0,) + tuple(sorted(names.index(c) for c in selected if c != INTERCEPT))

        pi_link = self.pi_link or ("logistic" if self.exposure_kind == "binary" else "identity")
        return ModelSpec(cols(self.pi), cols(self.g), cols(self.rho), cols(self.h),
                         pi_link=pi_link, rho_link=self.rho_link, exposure_kind=self.exposure_kind)


@dataclass(frozen=True)
class SimulationConfig:
    scenario: str = "i"
    replications: int = 1000
    estimators: tuple = ("MR", "PS", "BK")
    dgp: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "SimulationConfig":
        _reject_unknown(raw, {"scenario", "replications", "estimators", "dgp"}, "simulation")
        kw = dict(raw)
        if "estimators" in kw:
            kw["estimators"] = tuple(kw["estimators"])
        cfg = cls(**kw)
        if cfg.scenario not in SCENARIOS:
            raise InputError(f"simulation.scenario must be one of {sorted(SCENARIOS)}")
        return cfg

    def dgp_config(self, seed: int) -> DgpConfig:
        known = {f.name for f in fields(DgpConfig)}
        _reject_unknown(self.dgp, known - {"seed"}, "simulation.dgp")
        try:
            return DgpConfig(seed=seed, **self.dgp)
        except TypeError as exc:
            raise InputError(f"simulation.dgp: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: Optional[str] = None
    columns: ColumnMap = ColumnMap()
    model: ModelConfig = ModelConfig()
    estimators: tuple = ("MR",)
    contrast: tuple = (0.0, 1.0)
    ci_level: float = 0.95
    variance: str = "sandwich"
    bootstrap_B: int = 1000
    breusch_pagan: bool = False
    solver: SolveOptions = SolveOptions()
    simulation: SimulationConfig = SimulationConfig()
    seed: int = 0
    threads: int = 1
    output: Optional[str] = None
    format: str = "json"
    dichotomize_at_median: Optional[str] = None
    interaction: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InputError(f"command must be one of {COMMANDS}")
        if self.command in ("estimate", "diagnose") and not self.input:
            raise InputError(f"{self.command} needs an input CSV path")
        unknown = [e for e in self.estimators if e not in ESTIMATOR_TAGS]
        if unknown or not self.estimators:
            raise InputError(f"estimators must be a non-empty subset of {ESTIMATOR_TAGS}")
        if len(self.contrast) != 2:
            raise InputError("contrast must be a pair (from, to)")
        if not 0 < self.ci_level < 1:
            raise InputError("ci_level must lie in (0, 1)")
        if self.variance not in ("sandwich", "bootstrap"):
            raise InputError("variance.kind must be 'sandwich' or 'bootstrap'")
        if self.format not in FORMATS:
            raise InputError(f"format must be one of {FORMATS}")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, raw: dict, command: str) -> "RunConfig":
        allowed = {"input", "columns", "model", "estimators", "contrast", "ci_level", "variance",
                   "breusch_pagan", "solver", "simulation", "seed", "threads", "output", "format",
                   "dichotomize_at_median", "interaction"}
        _reject_unknown(raw, allowed, "config")
        kw = {"command": command}
        for key in ("input", "ci_level", "breusch_pagan", "seed", "threads", "output", "format",
                    "dichotomize_at_median"):
            if key in raw:
                kw[key] = raw[key]
        if "columns" in raw:
            kw["columns"] = ColumnMap.from_dict(raw["columns"])
        if "model" in raw:
            kw["model"] = ModelConfig.from_dict(raw["model"])
        if "estimators" in raw:
            kw["estimators"] = tuple(raw["estimators"])
        if "contrast" in raw:
            kw["contrast"] = tuple(float(c) for c in raw["contrast"])
        if "variance" in raw:
            var = raw["variance"]
            _reject_unknown(var, {"kind", "B"}, "variance")
            kw["variance"] = var.get("kind", "sandwich")
            kw["bootstrap_B"] = int(var.get("B", 1000))
        if "solver" in raw:
            _reject_unknown(raw["solver"], {"tol", "max_iter", "jacobian", "init"}, "solver")
            kw["solver"] = SolveOptions(**raw["solver"])
        if "simulation" in raw:
            kw["simulation"] = SimulationConfig.from_dict(raw["simulation"])
        if "interaction" in raw:
            _reject_unknown(raw["interaction"], {"column", "component"}, "interaction")
            kw["interaction"] = dict(raw["interaction"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise InputError(f"config: {exc}") from None

    def weights(self, data: Dataset) -> InteractionWeights:
        """Interaction weights; ``interaction.column`` is a covariate name."""
        column = self.interaction.get("column")
        if column is not None:
            if column not in data.x_names:
                raise InputError(f"interaction.column {column!r} is not a covariate")
            column = list(data.x_names).index(column)
        return InteractionWeights(column=column, component=int(self.interaction.get("component", 0)))

    def variance_config(self) -> VarianceConfig:
        return VarianceConfig(self.variance, self.bootstrap_B, self.seed, self.threads,
                              opts=self.solver)


def load_config(path: Optional[str], command: str, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config; ``overrides`` (from flags) replace top-level keys."""
    raw = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise InputError("config must be a JSON object")
    raw.update(overrides or {})
    return RunConfig.from_dict(raw, command)


# ---------------------------------------------------------------------------
# commands


def run_estimate(cfg: RunConfig) -> dict:
    data, info = _ingest(cfg.input, cfg.columns, cfg.dichotomize_at_median)
    spec = cfg.model.build(data)
    weights = cfg.weights(data)
    reports = []
    for tag in cfg.estimators:
        result = solve(tag, data, spec, cfg.solver, d_choice=weights)
        rep = effect_report(data, result, cfg.contrast, cfg.ci_level, cfg.variance_config(), weights)
        row = rep.to_dict()
        row["diagnostics"]["certificate"] = certificate(result)
        reports.append(row)
    out = {"command": "estimate", "status": "ok", "input": info, "reports": reports}
    if cfg.breusch_pagan:
        out["breusch_pagan"] = _bp_dict(breusch_pagan(data, spec))
    return out


def run_simulate(cfg: RunConfig) -> dict:
    sim = cfg.simulation
    summary = run_monte_carlo(sim.dgp_config(cfg.seed), sim.scenario, sim.estimators,
                              sim.replications, cfg.seed, cfg.threads, cfg.solver)
    return {"command": "simulate", "status": "ok", "summary": summary.to_dict()}


def run_diagnose(cfg: RunConfig) -> dict:
    data, info = _ingest(cfg.input, cfg.columns, cfg.dichotomize_at_median)
    spec = cfg.model.build(data)
    bp = breusch_pagan(data, spec)
    tag = cfg.estimators[0]
    opts = SolveOptions(cfg.solver.tol, cfg.solver.max_iter, cfg.solver.jacobian, cfg.solver.init,
                        raise_on_failure=False)
    try:
        result = solve(tag, data, spec, opts, d_choice=cfg.weights(data))
        cond = {"estimator": tag, "condition_estimate": result.condition_estimate,
                "converged": result.converged}
    except WeakIdentificationError as exc:
        cond = {"estimator": tag, "condition_estimate": exc.condition_estimate, "converged": True}
    return {"command": "diagnose", "status": "ok", "input": info,
            "breusch_pagan": _bp_dict(bp), "identification": cond}


RUNNERS = {"estimate": run_estimate, "simulate": run_simulate, "diagnose": run_diagnose}


def _bp_dict(bp) -> dict:
    return {"statistic": bp.statistic, "df": bp.df, "p_value": bp.p_value,
            "studentized": bp.studentized}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConvergenceError, WeakIdentificationError, NegativeVarianceError)):
        return EXIT_CONVERGENCE
    return EXIT_INPUT


def run(cfg: RunConfig) -> tuple:
    """Execute one command; returns (exit code, report dict)."""
    try:
        return EXIT_OK, RUNNERS[cfg.command](cfg)
    except (MedRobustError, np.linalg.LinAlgError) as exc:
        code = exit_code_for(exc)
        return code, error_report(cfg.command, exc, code)


def error_report(command, exc, code) -> dict:
    return {
        "command": command,
        "status": "error",
        "error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code},
    }


# ---------------------------------------------------------------------------
# rendering


def _finite(obj):
    # JSON has no NaN/inf; non-finite numbers are reported as null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def to_json(report: dict) -> str:
    return json.dumps(_finite(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def to_csv(report: dict) -> str:
    """Flat CSV rendering; error reports are always JSON."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cmd = report["command"]
    if report["status"] != "ok":
        return to_json(report)
    if cmd == "estimate":
        w.writerow(["estimator", "contrast_from", "contrast_to", "nde", "se_nde", "nde_lo", "nde_hi",
                    "nie", "se_nie", "nie_lo", "nie_hi", "ci_level", "variance_source",
                    "converged", "certificate"])
        for r in report["reports"]:
            w.writerow([r["estimator"], *r["contrast"], r["nde"], r["se_nde"], *r["ci_nde"],
                        r["nie"], r["se_nie"], *r["ci_nie"], r["ci_level"], r["variance_source"],
                        r["diagnostics"]["converged"], r["diagnostics"]["certificate"]])
    elif cmd == "simulate":
        s = report["summary"]
        w.writerow(["scenario", "estimator", "estimand", "bias", "sd", "sqrt_evar", "cov90",
                    "cov95", "mean", "replicates", "failures"])
        for est, by in s["rows"].items():
            for estimand, v in by.items():
                w.writerow([s["scenario"], est, estimand, v["bias"], v["sd"], v["sqrt_evar"],
                            v["cov90"], v["cov95"], v["mean"], v["replicates"], s["failures"][est]])
    else:
        bp, ident = report["breusch_pagan"], report["identification"]
        w.writerow(["bp_statistic", "bp_df", "bp_p_value", "estimator", "condition_estimate"])
        w.writerow([bp["statistic"], bp["df"], bp["p_value"], ident["estimator"],
                    ident["condition_estimate"]])
    return buf.getvalue()


def report_schema() -> dict:
    text = resources.files("medrobust").joinpath("schemas/report.schema.json").read_text("utf-8")
    return json.loads(text)


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medrobust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("estimate", "NDE/NIE estimates from a CSV file"),
                        ("simulate", "Monte Carlo study on the built-in DGP"),
                        ("diagnose", "Breusch-Pagan test and bread condition estimate")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run configuration")
        if name != "simulate":
            p.add_argument("--input", help="CSV file (overrides config.input)")
            p.add_argument("--dichotomize-at-median", metavar="COL",
                           help="replace COL by the indicator COL > median before fitting")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
        p.add_argument("--threads", type=int, help="worker processes (0 = all cores)")
        p.add_argument("--output", help="report path (default: standard output)")
        p.add_argument("--format", choices=FORMATS, help="report format")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    output, fmt = args.output, args.format or "json"
    try:
        overrides = {}
        for key in ("input", "seed", "threads", "output", "format", "dichotomize_at_median"):
            value = getattr(args, key, None)
            if value is not None:
                overrides[key] = value
        cfg = load_config(args.config, args.command, overrides)
        output, fmt = cfg.output, cfg.format
        code, report = run(cfg)
    except (MedRobustError, TypeError, ValueError) as exc:
        code = EXIT_INPUT
        report = error_report(args.command, exc, code)
    if code != EXIT_OK:
        print(f"medrobust {args.command}: {report['error']['message']}", file=sys.stderr)
    text = to_csv(report) if fmt == "csv" else to_json(report)
    if output:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
