"""Config-driven command line front end.

    rvas-design run <config.json> [--out DIR] [--threads N] [--print-config]

Exit codes: 0 success, 1 I/O failure, 2 unreadable or unparsable config,
3 validation failure, 4 numeric failure (convergence, degeneracy,
truncation, infeasible budget).
"""

import argparse
import copy
import csv
import datetime
import hashlib
import json
import logging
import math
import os
from pathlib import Path
import sys
import time
import warnings

import jsonschema

from . import __version__
from .exceptions import (
    ConvergenceError,
    DegenerateError,
    DomainError,
    InfeasibleError,
    TruncationError,
)
from .power import (
    AnalyticBernoulliModel,
    HierarchicalMCModel,
    default_depth_grid,
    fixed_budget_curve,
    fixed_design_curve,
    optimize_depth,
)
from .predictive import PriorParams, gamma_k
from .seqmodel import CostModel, SeqConfig, detection_prob, thin_matrix
from .simulate import (
    HierParams,
    mc_bernoulli_kton_summary,
    mc_kton_summary,
    sample_bernoulli_cohort,
    sample_hier_cohorts,
)
from .streams import RandomStream

log = logging.getLogger(__name__)

EXIT_IO, EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERIC = 1, 2, 3, 4
MODES = ("phi", "predict", "simulate", "fixed_design", "fixed_budget", "optimize")
MC_MODES = ("simulate",)
# substream namespace for matrix dumps, disjoint from the replicate streams
_DUMP_STREAM = 2**31

_PRIOR = {
    "type": "object",
    "required": ["mass", "concentration", "discount"],
    "properties": {
        "mass": {"type": "number"},
        "concentration": {"type": "number"},
        "discount": {"type": "number"},
    },
    "additionalProperties": False,
}

_PRIOR_KEYS = tuple(_PRIOR["properties"])

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["mode"],
    "properties": {
        "mode": {"enum": list(MODES)},
        "model": {"enum": ["analytic_bernoulli", "mc_hierarchical"]},
        "priors": {"type": "object", "minProperties": 1, "additionalProperties": _PRIOR},
        "hier": {
            "type": "object",
            "required": ["shared", "populations"],
            "properties": {
                "shared": _PRIOR,
                "populations": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["id", "a", "b"],
                        "properties": {
                            "id": {"type": "string"},
                            "a": {"type": "number"},
                            "b": {"type": "number"},
                        },
                        "additionalProperties": False,
                    },
                },
            },
            "additionalProperties": False,
        },
        "seq": {
            "type": "object",
            "properties": {
                "depths": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "call_threshold": {"type": "integer"},
                "err_rate": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "cost": {
            "type": "object",
            "properties": {
                "fixed_cost": {"type": "number"},
                "per_sample_rate": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "budgets": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "sizes": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "k": {
            "oneOf": [
                {"type": "integer"},
                {"type": "array", "items": {"type": "integer"}, "minItems": 1},
            ]
        },
        "kton_mode": {"enum": ["exact", "at_most", "at-most"]},
        "exclusive": {"type": "boolean"},
        "significance": {"type": "number"},
        "replicates": {"type": "integer"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "variance": {"enum": ["mc", "poisson"]},
        "method": {"enum": ["exact", "truncated"]},
        "carrier_rule": {"enum": ["any_nonzero", "allele_count"]},
        "predict": {
            "type": "object",
            "properties": {
                "n_pilot": {"type": "integer"},
                "pilot_depth": {"type": ["number", "null"]},
            },
            "additionalProperties": False,
        },
        "dump_matrices": {"type": "boolean"},
        "plot": {"type": "boolean"},
        "output_path": {"type": "string"},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "model": "analytic_bernoulli",
    "seq": {"call_threshold": 30, "err_rate": 0.05},
    "cost": {"fixed_cost": 0.0, "per_sample_rate": 1.0},
    "k": 1,
    "kton_mode": "exact",
    "exclusive": False,
    "significance": 1e-4,
    "replicates": 200,
    "variance": "mc",
    "method": "exact",
    "carrier_rule": "any_nonzero",
    "predict": {"n_pilot": 0, "pilot_depth": None},
    "dump_matrices": False,
    "plot": False,
    "output_path": "rvas-out",
}

CSV_COLUMNS = {
    "phi": ["depth", "call_threshold", "err_rate", "phi"],
    "predict": [
        "population", "depth", "n_pilot", "size", "k",
        "phi_pilot", "phi_follow", "gamma", "gamma_at_most",
    ],
    "simulate": ["depth", "size", "population", "k", "mean", "variance", "se", "replicates"],
    "fixed_design": ["depth", "size", "mean_A", "mean_U", "var_A", "var_U", "T", "df", "power"],
    "fixed_budget": [
        "budget", "k", "depth", "size", "mean_A", "mean_U", "var_A", "var_U", "T", "df", "power",
    ],
    "optimize": ["budget", "k", "depth", "size", "power"],
}


class ConfigError(DomainError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


# --------------------------------------------------------------------------
# configuration


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _schema_error(exc):
    path = [str(p) for p in exc.absolute_path]
    if exc.validator == "required":
        missing = sorted(set(exc.validator_value) - set(exc.instance))
        path.append(missing[0])
    elif exc.validator == "additionalProperties":
        extra = sorted(set(exc.instance) - set(exc.schema.get("properties", {})))
        if extra:
            path.append(extra[0])
    field = ".".join(path) or "<root>"
    return ConfigError(field, exc.message)


def _require(cfg, *fields):
    for f in fields:
        if f not in cfg:
            raise ConfigError(f, f"required for mode '{cfg['mode']}'")


def normalize_config(raw):
    """Validate ``raw`` and return the canonical config with defaults filled in.

    Raises :class:`ConfigError` naming the first offending field.
    """
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    error = jsonschema.exceptions.best_match(validator.iter_errors(raw))
    if error is not None:
        raise _schema_error(error)
    cfg = _merge(DEFAULTS, raw)
    cfg["kton_mode"] = cfg["kton_mode"].replace("-", "_")
    mode, model = cfg["mode"], cfg["model"]

    if mode != "phi":
        if model == "analytic_bernoulli":
            _require(cfg, "priors")
        else:
            _require(cfg, "hier")
    if mode in ("phi", "predict", "simulate", "fixed_design"):
        if "depths" not in cfg["seq"]:
            raise ConfigError("seq.depths", f"required for mode '{mode}'")
    if mode in ("predict", "simulate", "fixed_design"):
        _require(cfg, "sizes")
    if mode in ("fixed_budget", "optimize"):
        _require(cfg, "budgets")
        cfg["budgets"] = sorted(cfg["budgets"])
    if mode in MC_MODES or (model == "mc_hierarchical" and mode != "phi"):
        _require(cfg, "seed")
    if mode == "predict" and model != "analytic_bernoulli":
        raise ConfigError("model", "predict mode needs the analytic_bernoulli model")
    if mode in ("fixed_design", "fixed_budget", "optimize"):
        pops = (
            list(cfg["priors"]) if model == "analytic_bernoulli"
            else [p["id"] for p in cfg["hier"]["populations"]]
        )
        if model == "analytic_bernoulli" and sorted(pops) != ["A", "U"]:
            raise ConfigError("priors", "design modes need exactly the populations 'A' and 'U'")
        if model == "mc_hierarchical" and len(pops) != 2:
            raise ConfigError("hier.populations", "design modes need exactly two populations")
        if model == "analytic_bernoulli" and cfg["exclusive"]:
            raise ConfigError("exclusive", "exclusive k-tons need the mc_hierarchical model")
    if isinstance(cfg["k"], list):
        if mode not in ("fixed_budget", "optimize"):
            raise ConfigError("k", f"a list of k values is only allowed in budget modes, not '{mode}'")
        cfg["k"] = sorted(set(cfg["k"]))
    if "depths" in cfg["seq"]:
        cfg["seq"]["depths"] = sorted(cfg["seq"]["depths"])
    if "sizes" in cfg:
        cfg["sizes"] = sorted(cfg["sizes"])

    # semantic checks through the domain constructors
    _build_domain(cfg)
    return cfg


def _field_check(field, fn, keys=()):
    try:
        return fn()
    except ConfigError:
        raise
    except DomainError as exc:
        # name the leaf when the message starts with one of the object's keys
        leaf = next((k for k in keys if str(exc).startswith(k)), None)
        raise ConfigError(f"{field}.{leaf}" if leaf else field, str(exc)) from None


def _build_domain(cfg):
    """Instantiate the domain objects a config describes; validates their invariants."""
    seq = cfg["seq"]
    out = {}
    for d in seq.get("depths", []):
        _field_check("seq.depths", lambda: SeqConfig(d, seq["call_threshold"], seq["err_rate"]))
    _field_check("seq", lambda: SeqConfig(0.0, seq["call_threshold"], seq["err_rate"]))
    out["cost"] = _field_check(
        "cost", lambda: CostModel(cfg["cost"]["fixed_cost"], cfg["cost"]["per_sample_rate"])
    )
    if "priors" in cfg:
        out["priors"] = {
            name: _field_check(f"priors.{name}", lambda p=p: PriorParams(**p), _PRIOR_KEYS)
            for name, p in cfg["priors"].items()
        }
    if "hier" in cfg:
        h = cfg["hier"]
        shared = _field_check("hier.shared", lambda: PriorParams(**h["shared"]), _PRIOR_KEYS)
        out["hier"] = _field_check(
            "hier.populations",
            lambda: HierParams(
                shared,
                [(p["a"], p["b"]) for p in h["populations"]],
                [p["id"] for p in h["populations"]],
            ),
        )
    if not 0 < cfg["significance"] < 1:
        raise ConfigError("significance", f"must lie in (0, 1), got {cfg['significance']}")
    if min(_ks(cfg)) < 1:
        raise ConfigError("k", f"must be >= 1, got {cfg['k']}")
    if cfg["replicates"] < 2:
        raise ConfigError("replicates", f"must be >= 2, got {cfg['replicates']}")
    if any(m < 1 for m in cfg.get("sizes", [])):
        raise ConfigError("sizes", "sizes must be >= 1")
    if any(not b > 0 for b in cfg.get("budgets", [])):
        raise ConfigError("budgets", "budgets must be > 0")
    if cfg["predict"]["n_pilot"] < 0:
        raise ConfigError("predict.n_pilot", "must be >= 0")
    pd = cfg["predict"]["pilot_depth"]
    if pd is not None:
        _field_check("predict.pilot_depth", lambda: SeqConfig(pd, seq["call_threshold"], seq["err_rate"]))
    return out


def _ks(cfg):
    return cfg["k"] if isinstance(cfg["k"], list) else [cfg["k"]]


def config_digest(cfg):
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path):
    """Read and parse a JSON config; parse failures raise ``ValueError``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: top level must be a JSON object")
    return raw


# --------------------------------------------------------------------------
# output


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    if value is None:
        return ""
    return str(value)


def emit_csv(table, path):
    """Write ``(header, rows)`` as RFC 4180 CSV with round-trip float formatting."""
    header, rows = table
    if not header:
        raise DomainError("cannot write a table without columns")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# x column, y column and grouping column (1-based) of each plotted table
_GNUPLOT = {
    "fixed_design": ("size", 2, 9, 1),
    "fixed_budget": ("depth", 3, 11, 1),
}


def _gnuplot_script(kind, csv_name):
    """Power scatter coloured by depth (fixed design) or by budget."""
    xlab, xcol, ycol, gcol = _GNUPLOT[kind]
    return "\n".join(
        [
            "set datafile separator ','",
            f"set xlabel '{xlab}'",
            "set ylabel 'power'",
            "set logscale x",
            "set yrange [0:1]",
            "set key off",
            f"plot '{csv_name}' skip 1 using {xcol}:{ycol}:{gcol} with points pt 7 palette",
            "",
        ]
    )


# --------------------------------------------------------------------------
# modes


def _seq(cfg, depth):
    return SeqConfig(depth, cfg["seq"]["call_threshold"], cfg["seq"]["err_rate"])


def _design_model(cfg, dom, threads):
    seq = cfg["seq"]
    if cfg["model"] == "analytic_bernoulli":
        return AnalyticBernoulliModel(
            dom["priors"]["A"], dom["priors"]["U"], seq["call_threshold"], seq["err_rate"]
        )
    return HierarchicalMCModel(
        dom["hier"],
        seq["call_threshold"],
        seq["err_rate"],
        replicates=cfg["replicates"],
        seed=cfg["seed"],
        variance=cfg["variance"],
        threads=threads,
        carrier_rule=cfg["carrier_rule"],
        method=cfg["method"],
    )


def _design_row(p):
    return [p.depth, p.size, p.mean_a, p.mean_u, p.var_a, p.var_u, p.statistic, p.welch_df, p.power]


def _run_phi(cfg, dom, threads, out):
    rows = []
    for d in cfg["seq"]["depths"]:
        s = _seq(cfg, d)
        rows.append([float(d), s.call_threshold, s.err_rate, detection_prob(s)])
    return {"phi": rows}, {}


def _run_predict(cfg, dom, threads, out):
    n_pilot = cfg["predict"]["n_pilot"]
    pd = cfg["predict"]["pilot_depth"]
    phi_p = 1.0 if pd is None else detection_prob(_seq(cfg, pd))
    rows = []
    for name, prior in dom["priors"].items():
        for d in cfg["seq"]["depths"]:
            phi_f = detection_prob(_seq(cfg, d))
            for m in cfg["sizes"]:
                running = []
                for j in range(1, min(cfg["k"], m) + 1):
                    g = gamma_k(prior, n_pilot, m, j, phi_p, phi_f).gamma
                    running.append(g)
                    rows.append([name, float(d), n_pilot, m, j, phi_p, phi_f, g, math.fsum(running)])
    return {"predict": rows}, {}


def _run_simulate(cfg, dom, threads, out):
    k, mode = cfg["k"], cfg["kton_mode"]
    stream = RandomStream(cfg["seed"])
    rows, bound = [], 0.0
    for di, d in enumerate(cfg["seq"]["depths"]):
        s = _seq(cfg, d)
        for m in cfg["sizes"]:
            if cfg["model"] == "analytic_bernoulli":
                for pi, (name, prior) in enumerate(dom["priors"].items()):
                    r = mc_bernoulli_kton_summary(
                        prior, m, s, k, mode, cfg["replicates"], stream.child(pi), name, threads
                    )
                    rows.append([float(d), m, name, k, r.mean, r.variance, r.se, r.replicates])
            else:
                hp = dom["hier"]
                res = mc_kton_summary(
                    hp, [m] * hp.n_populations, s, k, mode, cfg["exclusive"],
                    cfg["replicates"], stream, cfg["carrier_rule"], threads, cfg["method"],
                )
                for r in res:
                    bound = max(bound, r.truncation_mass_bound)
                    rows.append([float(d), m, r.population_id, k, r.mean, r.variance, r.se, r.replicates])
            if cfg["dump_matrices"]:
                _dump_matrices(cfg, dom, s, m, stream.child(_DUMP_STREAM, di, m), out)
    return {"simulate": rows}, {"truncation_mass_bound": bound}


def _dump_matrices(cfg, dom, s, m, stream, out):
    gen = stream.generator()
    if cfg["model"] == "analytic_bernoulli":
        mats = [
            thin_matrix(sample_bernoulli_cohort(prior, m, gen, name), s, gen)
            for name, prior in dom["priors"].items()
        ]
    else:
        hp = dom["hier"]
        mats = sample_hier_cohorts(hp, [m] * hp.n_populations, s, gen, cfg["method"])
    for g in mats:
        p = out / "matrices" / f"{g.population_id}_depth{_fmt(float(s.depth))}_size{m}.txt"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(g.to_text(), encoding="utf-8")


def _run_fixed_design(cfg, dom, threads, out):
    model = _design_model(cfg, dom, threads)
    curve = fixed_design_curve(
        model, cfg["seq"]["depths"], cfg["sizes"], cfg["k"], cfg["kton_mode"],
        cfg["exclusive"], cfg["significance"],
    )
    rows = [_design_row(p) for p in curve]
    return {"fixed_design": rows}, {"truncation_mass_bound": model.truncation_mass_bound}


def _budget_curves(cfg, dom, threads):
    model = _design_model(cfg, dom, threads)
    grid = cfg["seq"].get("depths") or default_depth_grid()
    curves, skipped = [], {}
    for b in cfg["budgets"]:
        for k in _ks(cfg):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                curve = fixed_budget_curve(
                    model, b, grid, dom["cost"], k, cfg["kton_mode"],
                    cfg["exclusive"], cfg["significance"],
                )
            for w in caught:
                log.warning("%s", w.message)
            if curve.infeasible_depths:
                skipped[_fmt(float(b))] = curve.infeasible_depths
            curves.append((k, curve))
    return model, curves, skipped


def _budget_rows(curves):
    return [[c.budget, k] + _design_row(p) for k, c in curves for p in c.points]


def _run_fixed_budget(cfg, dom, threads, out):
    model, curves, skipped = _budget_curves(cfg, dom, threads)
    rows = _budget_rows(curves)
    extra = {"truncation_mass_bound": model.truncation_mass_bound, "infeasible_depths": skipped}
    return {"fixed_budget": rows}, extra


def _run_optimize(cfg, dom, threads, out):
    model, curves, skipped = _budget_curves(cfg, dom, threads)
    rows = []
    for k, c in curves:
        best = optimize_depth(c)
        rows.append([c.budget, k, best.depth, best.size, best.power])
    tables = {"optimize": rows, "fixed_budget": _budget_rows(curves)}
    extra = {"truncation_mass_bound": model.truncation_mass_bound, "infeasible_depths": skipped}
    return tables, extra


_RUNNERS = {
    "phi": _run_phi,
    "predict": _run_predict,
    "simulate": _run_simulate,
    "fixed_design": _run_fixed_design,
    "fixed_budget": _run_fixed_budget,
    "optimize": _run_optimize,
}


def run(cfg, out_dir, threads=1):
    """Execute a normalized config, write CSVs and the manifest; return the manifest dict."""
    dom = _build_domain(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc)
    t0 = time.perf_counter()
    tables, extra = _RUNNERS[cfg["mode"]](cfg, dom, threads, out)

    written = []
    for name, rows in tables.items():
        written.append(emit_csv((CSV_COLUMNS[name], rows), out / f"{name}.csv"))
    if cfg["plot"] and cfg["mode"] in ("fixed_design", "fixed_budget", "optimize"):
        kind = "fixed_design" if cfg["mode"] == "fixed_design" else "fixed_budget"
        gp = out / f"{kind}.gp"
        gp.write_text(_gnuplot_script(kind, f"{kind}.csv"), encoding="utf-8")
        written.append(gp)
    written.extend(sorted((out / "matrices").glob("*.txt")) if cfg["dump_matrices"] else [])

    manifest = {
        "config_digest": config_digest(cfg),
        "tool_version": __version__,
        "mode": cfg["mode"],
        "model": cfg["model"],
        "seed": cfg.get("seed"),
        "sampler": cfg["method"],
        "truncation_mass_bound": extra.get("truncation_mass_bound", 0.0),
        "infeasible_depths": extra.get("infeasible_depths", {}),
        "threads": threads,
        "started_utc": started.isoformat(timespec="seconds"),
        "wall_clock_seconds": round(time.perf_counter() - t0, 3),
        "files": {str(p.relative_to(out)): _sha256(p) for p in written},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# --------------------------------------------------------------------------
# entry point


def _fail(code, kind, message, field=None):
    payload = {"error": kind, "message": message}
    if field is not None:
        payload["field"] = field
    print(json.dumps(payload), file=sys.stderr)
    return code


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("RVAS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer RVAS_THREADS=%r", env)
    return 1


def build_parser():
    parser = argparse.ArgumentParser(prog="rvas-design", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute a JSON experiment config")
    r.add_argument("config", help="path to the JSON config")
    r.add_argument("--out", help="output directory (overrides output_path)")
    r.add_argument("--threads", type=int, help="worker threads (default: $RVAS_THREADS or 1)")
    r.add_argument(
        "--print-config", action="store_true",
        help="print the normalized config and exit without running",
    )
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
    except ValueError as exc:
        return _fail(EXIT_PARSE, "parse", str(exc))
    try:
        cfg = normalize_config(raw)
    except ConfigError as exc:
        return _fail(EXIT_VALIDATION, "validation", str(exc), exc.field)
    if args.print_config:
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return 0
    threads = _threads(args.threads)
    if threads < 1:
        return _fail(EXIT_VALIDATION, "validation", "threads must be >= 1", "--threads")
    out = args.out if args.out is not None else cfg["output_path"]
    try:
        manifest = run(cfg, out, threads)
    except (ConvergenceError, DegenerateError, TruncationError, InfeasibleError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", f"{type(exc).__name__}: {exc}")
    except DomainError as exc:
        return _fail(EXIT_VALIDATION, "validation", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    print(json.dumps({"out": str(out), "files": sorted(manifest["files"])}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
