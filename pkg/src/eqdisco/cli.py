"""Command-line pipeline: discover, ensemble, bnet, sample-solve,
baseline, compare.

Stages communicate only through files in the run's output directory, so
each stage can be re-run independently. Every command writes its fully
resolved configuration and the tool version next to its outputs, and all
JSON/CSV outputs are byte-reproducible for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import bootstrap_discover, format_result, result_to_json
from .bayesnet import (
    extract_bases,
    fit_parameters,
    format_summary,
    from_json,
    learn_structure,
    pair_runs,
    pool,
    sample_systems,
    summarize,
    to_dot,
    to_json,
)
from .config import format_config, load_config, resolve
from .dataio import differentiate, load_csv, normalize, refine
from .ensemble import collect, filter_support, write_csv
from .ensemble import read_csv as read_table_csv
from .errors import ConfigError, EqDiscoError
from .evolution import EvoConfig, evolve, front_records
from .solver import (
    integrate_samples,
    plot_envelope,
    write_envelope_csv,
    write_trajectory_csv,
)

# Reference Lotka-Volterra coefficients for the Hudson Bay lynx-hare
# system, the standard values this dataset is benchmarked against:
# du/dt = 0.55 u - 0.028 uv ; dv/dt = -0.84 v + 0.026 uv.
REFERENCE = {
    "u": {"u": 0.55, "u*v": -0.028},
    "v": {"v": -0.84, "u*v": 0.026},
}


def _load_data(cfg):
    if not cfg["data.path"]:
        raise ConfigError("data.path is required")
    if not cfg["data.columns"]:
        raise ConfigError("data.columns is required")
    aliases = {src: alias for src, alias in cfg["data.columns"]}
    data = load_csv(
        cfg["data.path"],
        cfg["data.time_column"],
        [src for src, _ in cfg["data.columns"]],
        time_alias="t",
        aliases=aliases,
    )
    for variable in sorted(data.channels):
        for order in range(1, cfg["diff.max_order"] + 1):
            data = differentiate(
                data,
                variable,
                order,
                method=cfg["diff.method"],
                window=cfg["diff.window"],
                max_order=cfg["diff.max_order"],
                smoothing=cfg["diff.smoothing"],
            )
    if cfg["data.normalize"]:
        data, factors = normalize(data)
        return data, factors
    return data, None


def _evo_config(cfg, data, variable, seed):
    return EvoConfig(
        variables=tuple(sorted(data.channels)),
        target_variable=variable,
        max_order=cfg["diff.max_order"],
        max_factors=cfg["tokens.max_factors"],
        max_power=cfg["tokens.max_power"],
        use_inverse=cfg["tokens.use_inverse"],
        use_constant=cfg["tokens.use_constant"],
        min_terms=cfg["evo.min_terms"],
        max_terms=cfg["evo.max_terms"],
        population=cfg["evo.population"],
        generations=cfg["evo.generations"],
        crossover_rate=cfg["evo.crossover_rate"],
        mutation_rate=cfg["evo.mutation_rate"],
        lam=cfg["regression.lambda"],
        epsilon=cfg["regression.epsilon"],
        seed=seed,
        archive_size=cfg["evo.archive_size"],
    )


def _prepare_out(cfg, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(format_config(cfg), encoding="utf-8")
    (out / "version.txt").write_text(f"eqdisco {__version__}\n", encoding="utf-8")
    return out


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        # numpy scalars (from table arrays) serialize via .item()
        json.dump(obj, fh, indent=2, sort_keys=True,
                  default=lambda o: o.item())
        fh.write("\n")


def cmd_discover(cfg, out):
    data, _ = _load_data(cfg)
    out = _prepare_out(cfg, out)
    report = []
    for i, variable in enumerate(sorted(data.channels)):
        econf = _evo_config(cfg, data, variable, cfg["evo.seed"] + i)
        front = evolve(data, econf)
        records = front_records(front, variable)
        _write_json(out / f"front_{variable}.json", records)
        report.append(f"# {variable}")
        for r in records:
            report.append(f"  [{r['complexity']} terms, q={r['quality']:.4g}] {r['pretty']}")
    (out / "report.txt").write_text("\n".join(report) + "\n", encoding="utf-8")
    return 0


def cmd_ensemble(cfg, out, n_runs=None):
    data, _ = _load_data(cfg)
    out = _prepare_out(cfg, out)
    n_runs = n_runs or cfg["ensemble.runs"]
    ensembles = {}
    meta = {"n_runs": n_runs, "skipped": {}}
    for i, variable in enumerate(sorted(data.channels)):
        econf = _evo_config(
            cfg, data, variable, cfg["evo.seed"] + 100000 * i
        )
        ens = collect(data, n_runs, econf, top_l=cfg["ensemble.top_l"])
        ensembles[variable] = ens
        meta["skipped"][variable] = ens.skipped
    tables = pair_runs(ensembles)
    for variable, table in tables.items():
        write_csv(table, out / f"table_{variable}.csv")
    pooled = pool(tables)
    write_csv(pooled, out / "pooled.csv")
    _write_json(out / "ensemble_meta.json", meta)
    return 0


def cmd_bnet(cfg, out):
    out = _prepare_out(cfg, out)
    pooled_path = out / "pooled.csv"
    if not pooled_path.exists():
        raise EqDiscoError(
            f"no ensemble output found at {pooled_path}; run 'ensemble' first"
        )
    from .ensemble import read_csv

    pooled = read_csv(pooled_path)
    filtered = filter_support(pooled, cfg["ensemble.min_support"])
    dag = learn_structure(filtered, max_parents=cfg["bn.max_parents"])
    bn = fit_parameters(dag, filtered)
    payload = to_json(bn)
    payload["dropped_columns"] = list(filtered.dropped)
    _write_json(out / "network.json", payload)
    (out / "network.dot").write_text(to_dot(bn), encoding="utf-8")
    return 0


def _anchors(cfg, variables):
    anchors = {}
    for v in variables:
        anchors[v] = cfg.get(f"bn.anchor.{v}", f"d1_{v}")
    return anchors


def cmd_sample_solve(cfg, out, n=None):
    data, _ = _load_data(cfg)
    out = _prepare_out(cfg, out)
    net_path = out / "network.json"
    if not net_path.exists():
        raise EqDiscoError(
            f"no network found at {net_path}; run 'bnet' first"
        )
    with open(net_path, encoding="utf-8") as fh:
        bn = from_json(json.load(fh))
    n = n or cfg["bn.samples"]
    variables = sorted(data.channels)
    anchors = _anchors(cfg, variables)
    rng = np.random.default_rng(cfg["run.seed"])
    samples = sample_systems(bn, anchors, n, rng)
    summary = summarize(samples)
    _write_json(out / "summary.json", summary)
    (out / "summary.txt").write_text(
        format_summary(summary, anchors) + "\n", encoding="utf-8"
    )
    tables = {}
    for v in variables:
        table_path = out / f"table_{v}.csv"
        if table_path.exists():
            tables[v] = read_table_csv(table_path, variable=v)
    _write_json(out / "bases.json", extract_bases(samples, tables))
    t_span = cfg["solve.t_span"] or (float(data.grid[0]), float(data.grid[-1]))
    y0 = [data.channels[v][0] for v in variables]
    warnings = []
    env, trajectories = integrate_samples(
        samples,
        y0,
        t_span,
        report_points=cfg["solve.report_points"],
        rtol=cfg["solve.rtol"],
        atol=cfg["solve.atol"],
        warn=warnings.append,
    )
    write_envelope_csv(env, out / "envelope.csv")
    traj_dir = out / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    for i, tr in enumerate(trajectories):
        write_trajectory_csv(tr, traj_dir / f"sample_{i:03d}.csv")
    plot_envelope(env, out / "band.svg", data=data)
    if warnings:
        (out / "solve_warnings.txt").write_text(
            "\n".join(warnings) + "\n", encoding="utf-8"
        )
    return 0


def cmd_baseline(cfg, out, n_boot=None):
    data, _ = _load_data(cfg)
    out = _prepare_out(cfg, out)
    # The bootstrap works on a spline-refined uniform grid: row resampling
    # of the raw grid is too coarse for stable support recovery.
    refined = refine(
        data,
        cfg["baseline.refine_points"],
        smoothing=cfg["diff.smoothing"],
        derivative_orders=(1,),
    )
    rng = np.random.default_rng(cfg["run.seed"])
    results = bootstrap_discover(
        refined,
        n_boot=n_boot or cfg["baseline.n_boot"],
        keep_fraction=cfg["baseline.keep_fraction"],
        threshold=cfg["baseline.threshold"],
        rng=rng,
        resample_rows=cfg["baseline.resample_rows"],
        normalize=cfg["baseline.normalize"],
    )
    payload = {v: result_to_json(r) for v, r in sorted(results.items())}
    _write_json(out / "baseline.json", payload)
    lines = [format_result(results[v]) for v in sorted(results)]
    (out / "baseline.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _fitted_from_summary(summary):
    out = {}
    for variable, ref in REFERENCE.items():
        stats = summary.get(variable, {})
        out[variable] = {
            key: stats[key]["mean"] for key in ref if key in stats
        }
    return out


def _fitted_from_bases(payload):
    """Coefficients of the reference support, count-weighted over every
    sampled base whose support contains all reference terms. Bases whose
    coefficients come from ensemble fits are preferred over ones that only
    exist as raw network samples."""
    out = {}
    for variable, ref in REFERENCE.items():
        matching = [
            base
            for base in payload.get(variable, [])
            if all(k in base["support"] for k in ref)
        ]
        grounded = [b for b in matching if b.get("source") == "ensemble"]
        if grounded:
            matching = grounded
        fitted = {}
        for key in ref:
            total = sum(b["count"] for b in matching)
            if total:
                fitted[key] = (
                    sum(
                        b["coefficients"][key]["mean"] * b["count"]
                        for b in matching
                    )
                    / total
                )
        out[variable] = fitted
    return out


def _fitted_from_baseline(payload):
    out = {}
    for variable, ref in REFERENCE.items():
        spec = payload.get(variable, {})
        coeffs = spec.get("coefficients", {})
        out[variable] = {
            key: coeffs[key]["mean"] for key in ref if key in coeffs
        }
    return out


def _errors(fitted):
    """Percentage errors vs the reference coefficients.

    Returns per-coefficient errors, the Table-style columns (u, mean(uv),
    v — the uv error is averaged because both equations contain a uv
    term), and the overall mean over the four base coefficients.
    """
    per = {}
    for variable, ref in REFERENCE.items():
        per[variable] = {}
        for key, target in ref.items():
            value = fitted.get(variable, {}).get(key)
            if value is None:
                per[variable][key] = None
            else:
                per[variable][key] = 100.0 * abs(value - target) / abs(target)
    missing = any(v is None for d in per.values() for v in d.values())
    if missing:
        return {"per_coefficient": per, "columns": None, "mean": None}
    columns = {
        "u": per["u"]["u"],
        "uv": 0.5 * (per["u"]["u*v"] + per["v"]["u*v"]),
        "v": per["v"]["v"],
    }
    mean = np.mean([per[v][k] for v in per for k in per[v]])
    return {"per_coefficient": per, "columns": columns, "mean": float(mean)}


def cmd_compare(cfg, out):
    out = _prepare_out(cfg, out)
    comparison = {}
    bases_path = out / "bases.json"
    summary_path = out / "summary.json"
    if bases_path.exists():
        with open(bases_path, encoding="utf-8") as fh:
            payload = json.load(fh)
        comparison["evolutionary"] = _errors(_fitted_from_bases(payload))
    elif summary_path.exists():
        with open(summary_path, encoding="utf-8") as fh:
            summary = json.load(fh)
        comparison["evolutionary"] = _errors(_fitted_from_summary(summary))
    baseline_path = out / "baseline.json"
    if baseline_path.exists():
        with open(baseline_path, encoding="utf-8") as fh:
            payload = json.load(fh)
        comparison["baseline"] = _errors(_fitted_from_baseline(payload))
    if not comparison:
        raise EqDiscoError(
            f"nothing to compare in {out}: need summary.json (sample-solve) "
            f"or baseline.json (baseline)"
        )
    _write_json(out / "compare.json", comparison)
    lines = ["method      u%      mean(uv)%  v%      mean%"]
    for method in sorted(comparison):
        c = comparison[method]
        if c["columns"] is None:
            lines.append(f"{method:<11} (base terms missing)")
        else:
            lines.append(
                f"{method:<11} {c['columns']['u']:<7.2f} "
                f"{c['columns']['uv']:<10.2f} {c['columns']['v']:<7.2f} "
                f"{c['mean']:.2f}"
            )
    (out / "compare.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eqdisco",
        description="Differential-equation discovery with uncertainty "
        "quantification",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, extra in [
        ("discover", ()),
        ("ensemble", (("--runs", int),)),
        ("bnet", ()),
        ("sample-solve", (("--samples", int),)),
        ("baseline", (("--boot", int),)),
        ("compare", ()),
    ]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--seed", type=int, help="override run.seed and evo.seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a single config key",
        )
        for flag, typ in extra:
            p.add_argument(flag, type=typ, default=None)
    return parser


def _resolve_from_args(args):
    from .config import parse_value

    values = load_config(args.config) if args.config else {}
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw_value = item.partition("=")
        overrides[key.strip()] = parse_value(key.strip(), raw_value.strip())
    if args.seed is not None:
        overrides["run.seed"] = args.seed
        overrides["evo.seed"] = args.seed
    cfg = resolve(values, overrides)
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_from_args(args)
        out = args.out or cfg["run.output_dir"]
        if args.command == "discover":
            return cmd_discover(cfg, out)
        if args.command == "ensemble":
            return cmd_ensemble(cfg, out, n_runs=args.runs)
        if args.command == "bnet":
            return cmd_bnet(cfg, out)
        if args.command == "sample-solve":
            return cmd_sample_solve(cfg, out, n=args.samples)
        if args.command == "baseline":
            return cmd_baseline(cfg, out, n_boot=args.boot)
        if args.command == "compare":
            return cmd_compare(cfg, out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EqDiscoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
