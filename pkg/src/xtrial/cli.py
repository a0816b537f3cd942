"""``xtrial`` command line: estimate, simulate, report.

Exit codes: 0 success, 2 usage or missing input, 3 data validation failure,
4 estimation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .contrasts import contrast_difference, contrast_geomean_ratio
from .data import (
    DEFAULT_TRUNCATION,
    EstimandSpec,
    ParseError,
    Schema,
    SchemaError,
    DomainError,
    load_stacked_csv,
    validate,
)
from .nuisance import EstimationError
from .report import (
    contrast_record,
    estimate_record,
    markdown,
    table2_rows,
    table3_rows,
    to_csv,
)
from .sim import PRESETS, load_preset, load_scenario, run_monte_carlo
from .tmle import OutcomeDomainError, estimate_unadjusted, run_tmle

EXIT_OK, EXIT_INPUT, EXIT_INVALID, EXIT_ESTIMATION = 0, 2, 3, 4
RESULTS_JSON = "results.json"
METRICS_JSON = "metrics.json"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    preset: str | None = None
    config: str | None = None
    vaccines: tuple[int, ...] = ()
    ref_trials: tuple[int, ...] = ()
    ws: tuple[str, ...] = ()
    wdelta: tuple[str, ...] = ()
    categorical: tuple[str, ...] = ()
    scales: tuple[str, ...] = ("identity",)
    s_columns: dict[str, str] = field(default_factory=dict)
    truncation: tuple[float, float] = DEFAULT_TRUNCATION
    gdelta: str = "known"
    out: str = "results"
    seed: int | None = None
    reps: int | None = None

    def digest(self) -> str:
        """Hash of everything that can change numerical output."""
        d = asdict(self)
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _csv_list(text: str, cast=str) -> tuple:
    return tuple(cast(x.strip()) for x in text.split(",") if x.strip())


def _pair(text: str) -> tuple[float, float]:
    lo, hi = _csv_list(text, float)
    return lo, hi


def _s_column(text: str) -> tuple[str, str]:
    scale, _, col = text.partition("=")
    if not col:
        raise argparse.ArgumentTypeError(f"expected SCALE=COLUMN, got {text!r}")
    return scale, col


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xtrial", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"xtrial {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="standardized estimates and contrasts from a CSV")
    e.add_argument("--input", required=True, help="stacked CSV")
    e.add_argument("--vaccine", required=True, type=lambda s: _csv_list(s, int),
                   help="vaccine labels; later labels are contrasted against the first")
    e.add_argument("--ref-trials", required=True, type=lambda s: _csv_list(s, int))
    e.add_argument("--ws", type=_csv_list, default=(), help="shared covariates")
    e.add_argument("--wdelta", type=_csv_list, default=(), help="extra sampling covariates")
    e.add_argument("--categorical", type=_csv_list, default=())
    e.add_argument("--scale", type=_csv_list, default=("identity",),
                   help="comma list of identity, log10, binary")
    e.add_argument("--s-col", action="append", type=_s_column, default=[],
                   metavar="SCALE=COLUMN", help="response column for a scale (default 's')")
    e.add_argument("--truncation", type=_pair, default=DEFAULT_TRUNCATION, metavar="LO,HI")
    e.add_argument("--gdelta", choices=("known", "estimate"), default="known")
    e.add_argument("--seed", type=int, default=None, help="recorded only; estimation is deterministic")
    e.add_argument("--out", default="results")

    s = sub.add_parser("simulate", help="Monte Carlo evaluation of a scenario")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    src.add_argument("--config", help="scenario JSON file")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--gdelta", choices=("known", "estimate"), default="known")
    s.add_argument("--out", default="results")

    r = sub.add_parser("report", help="render stored results as markdown")
    r.add_argument("results_dir")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=ns.command, out=getattr(ns, "out", "results"))
    if ns.command == "estimate":
        bad = [x for x in ns.scale if x not in ("identity", "log10", "binary")]
        if bad:
            raise CliError(EXIT_INPUT, f"unknown scale(s) {bad}")
        cfg.input, cfg.vaccines, cfg.ref_trials = ns.input, ns.vaccine, ns.ref_trials
        cfg.ws, cfg.wdelta, cfg.categorical = ns.ws, ns.wdelta, ns.categorical
        cfg.scales, cfg.s_columns = ns.scale, dict(ns.s_col)
        cfg.truncation, cfg.gdelta, cfg.seed = ns.truncation, ns.gdelta, ns.seed
    elif ns.command == "simulate":
        cfg.preset, cfg.config, cfg.seed = ns.preset, ns.config, ns.seed
        cfg.reps, cfg.gdelta = ns.reps, ns.gdelta
    else:
        cfg.out = ns.results_dir
    return cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _stamp(cfg: RunConfig) -> list[str]:
    return [f"config_hash={cfg.digest()}", f"seed={cfg.seed}"]


# ---------------------------------------------------------------- estimate

def _estimate_block(ds, cfg: RunConfig, scale: str, column: str) -> dict:
    a, others = cfg.vaccines[0], cfg.vaccines[1:]
    specs = {}
    for v in cfg.vaccines:
        specs[v] = EstimandSpec(v, frozenset(cfg.ref_trials), ds.trials_evaluating(v),
                                w_s=cfg.ws, w_delta=cfg.wdelta, scale=scale,
                                prob_truncation=cfg.truncation, gdelta=cfg.gdelta)
        rep = validate(ds, specs[v])
        if not rep.ok:
            raise CliError(EXIT_INVALID, rep.render())
    tmle, unadj = {}, {}
    for v, spec in specs.items():
        try:
            tmle[v] = run_tmle(ds, spec)
            unadj[v] = estimate_unadjusted(ds, v, spec.t_a, scale, cfg.gdelta, cfg.truncation)
        except (EstimationError, OutcomeDomainError) as err:
            diag = getattr(err, "diagnostics", {})
            raise CliError(EXIT_ESTIMATION,
                           f"vaccine {v}, scale {scale}: {err}" + (f"\n{_dump(diag)}" if diag else ""))
    contrast = contrast_geomean_ratio if scale == "log10" else contrast_difference
    contrasts = [contrast(res[a], res[b]) for b in others for res in (unadj, tmle)]
    return {
        "label": f"{column} ({scale})", "scale": scale, "column": column,
        "estimates": [estimate_record(r) for v in cfg.vaccines for r in (unadj[v], tmle[v])],
        "contrasts": [contrast_record(c) for c in contrasts],
    }


def cmd_estimate(cfg: RunConfig) -> int:
    if not Path(cfg.input).is_file():
        raise CliError(EXIT_INPUT, f"input file not found: {cfg.input}")
    covs = tuple(dict.fromkeys(cfg.ws + cfg.wdelta))
    blocks, datasets = [], {}
    for scale in cfg.scales:
        column = cfg.s_columns.get(scale, "s")
        if column not in datasets:
            schema = Schema(s=column, covariates=covs, categorical=cfg.categorical)
            try:
                datasets[column] = load_stacked_csv(cfg.input, schema)
            except (SchemaError, ParseError, DomainError) as err:
                raise CliError(EXIT_INVALID, f"{cfg.input}: {err}")
        blocks.append(_estimate_block(datasets[column], cfg, scale, column))

    ds = next(iter(datasets.values()))
    results = {
        "kind": "estimate", "config": asdict(cfg), "config_hash": cfg.digest(),
        "seed": cfg.seed, "version": __version__, "n": ds.n,
        "vaccines": list(cfg.vaccines), "ref_trials": sorted(cfg.ref_trials),
        "trials_evaluating": {str(v): sorted(ds.trials_evaluating(v)) for v in cfg.vaccines},
        "outcomes": blocks,
    }
    out = Path(cfg.out)
    _write(out / RESULTS_JSON, _dump(results))
    _write(out / "estimates.csv", to_csv(_estimate_table(blocks), _stamp(cfg)))
    _write(out / "contrasts.csv", to_csv(_contrast_table(blocks), _stamp(cfg)))
    text = _render_estimate(results)
    _write(out / "report.md", text)
    sys.stdout.write(text)
    return EXIT_OK


def _estimate_table(blocks) -> list[list[str]]:
    rows = [["outcome", "scale", "estimator", "vaccine", "t_ref", "psi", "se", "ci_lo",
             "ci_hi", "ci_scale", "display", "display_lo", "display_hi"]]
    for b in blocks:
        for r in b["estimates"]:
            d = r["display"]
            rows.append([b["column"], b["scale"], r["estimator"], str(r["vaccine"]),
                         " ".join(map(str, r["t_ref"])), repr(r["psi"]), repr(r["se"]),
                         repr(r["ci"][0]), repr(r["ci"][1]), r["ci_scale"],
                         repr(d["estimate"]), repr(d["ci"][0]), repr(d["ci"][1])])
    return rows


def _contrast_table(blocks) -> list[list[str]]:
    rows = [["outcome", "scale", "estimator", "kind", "vaccine_a", "vaccine_b", "estimate",
             "se", "ci_lo", "ci_hi", "ci_scale", "z", "p_value", "degenerate"]]
    for b in blocks:
        for c in b["contrasts"]:
            rows.append([b["column"], b["scale"], c["estimator"], c["kind"],
                         str(c["vaccine_a"]), str(c["vaccine_b"]), repr(c["estimate"]),
                         repr(c["se"]), repr(c["ci"][0]), repr(c["ci"][1]), c["ci_scale"],
                         repr(c["z"]), repr(c["p_value"]), str(c["degenerate"]).lower()])
    return rows


def _render_estimate(results: dict) -> str:
    vs = results["vaccines"]
    parts = [f"<!-- config_hash={results['config_hash']} seed={results['seed']} -->\n"]
    for b in vs[1:]:
        parts.append(f"\nVaccine {b} versus vaccine {vs[0]}, referent trials "
                     f"{{{', '.join(map(str, results['ref_trials']))}}}\n\n")
        parts.append(markdown(table3_rows(results, vs[0], b)))
    return "".join(parts)


# ---------------------------------------------------------------- simulate

def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.preset is not None:
        if cfg.preset not in PRESETS:
            raise CliError(EXIT_INPUT, f"unknown preset {cfg.preset!r}; choose from {', '.join(PRESETS)}")
        spec = load_preset(cfg.preset)
    else:
        try:
            spec = load_scenario(cfg.config)
        except (OSError, ValueError, KeyError, TypeError) as err:
            raise CliError(EXIT_INPUT, f"cannot load scenario {cfg.config}: {err}")
    spec = replace(spec, base_seed=cfg.seed)
    reps = cfg.reps if cfg.reps is not None else spec.replicates
    t0 = time.perf_counter()
    try:
        table = run_monte_carlo(spec, replicates=reps, gdelta=cfg.gdelta)
    except EstimationError as err:
        raise CliError(EXIT_ESTIMATION, str(err))
    elapsed = time.perf_counter() - t0

    records = table.records()
    out = Path(cfg.out)
    stamp = _stamp(cfg) + [f"scenario={spec.name}", f"replicates={reps}", f"gdelta={cfg.gdelta}"]
    _write(out / "metrics.csv", to_csv(table2_rows(records), stamp))
    _write(out / METRICS_JSON, _dump({
        "kind": "simulate", "config": asdict(cfg), "config_hash": cfg.digest(),
        "seed": cfg.seed, "scenario": spec.to_json(), "replicates": reps,
        "gdelta": cfg.gdelta, "rows": records,
    }))
    _write(out / "manifest.json", _dump({
        "config_hash": cfg.digest(), "seed": cfg.seed, "replicates": reps,
        "versions": {"xtrial": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "timings": {"monte_carlo_seconds": round(elapsed, 3)},
        "failed_replicates": {f"{r['t_ref']}/{r['vaccine']}": r["n_failed"] for r in records},
    }))
    sys.stdout.write(markdown(table2_rows(records)))
    return EXIT_OK


# ---------------------------------------------------------------- report

def cmd_report(cfg: RunConfig) -> int:
    d = Path(cfg.out)
    if not d.is_dir():
        raise CliError(EXIT_INPUT, f"no results directory at {d}")
    found = [d / f for f in (RESULTS_JSON, METRICS_JSON) if (d / f).is_file()]
    if not found:
        raise CliError(EXIT_INPUT, f"{d} holds no {RESULTS_JSON} or {METRICS_JSON}")
    for path in found:
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
            text = (_render_estimate(obj) if obj["kind"] == "estimate"
                    else markdown(table2_rows(obj["rows"])))
        except (ValueError, KeyError, TypeError, StopIteration) as err:
            raise CliError(EXIT_INPUT, f"corrupt record file {path}: {err!r}")
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = config_from_args(ns)
        return COMMANDS[cfg.command](cfg)
    except CliError as err:
        print(f"xtrial {ns.command}: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
