"""Command-line interface.

Subcommands: ``estimate``, ``estimate-mp``, ``decompose``, ``decompose-mp``,
``simulate`` and ``replicate``.  Results are JSON (stdout or ``--out``) and
plot-ready CSV.  Domain errors exit with status 1 and a JSON object on
stderr whose ``error`` field is the error class name.  Usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import baseline, multiperiod, mp_decomp, simlab, twfe
from .errors import DoseDidError
from .inference import BootstrapSpec, bootstrap, resolve_threads
from .panel import PanelDataset, dose_grid, load_panel
from .smoothing import SmootherSpec

log = logging.getLogger("dose_did")

N_CONTINUOUS_EVAL = 20


# --------------------------------------------------------------------------
# argument helpers


def _kv_pairs(text: str) -> dict[str, str]:
    out = {}
    for tok in text.replace(",", " ").split():
        if "=" not in tok:
            raise argparse.ArgumentTypeError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _bootstrap_arg(text: str) -> dict:
    kv = _kv_pairs(text)
    unknown = set(kv) - {"reps", "seed", "level"}
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown bootstrap keys {sorted(unknown)}")
    try:
        return {
            "n_reps": int(kv.get("reps", 999)),
            "seed": int(kv["seed"]) if "seed" in kv else None,
            "ci_level": float(kv.get("level", 0.95)),
        }
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _param_arg(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        return k, json.loads(v)
    except json.JSONDecodeError:
        return k, v


def read_config(path: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use flag names."""
    cfg = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line {raw!r}")
        k, v = line.split("=", 1)
        cfg[k.strip().lstrip("-").replace("-", "_")] = v.strip().strip('"').strip("'")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dose-did", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("--in", dest="input", required=True, help="long-format panel CSV")
            p.add_argument("--dose-onset", default="auto",
                           choices=["auto", "exposure", "constant", "column"])
        p.add_argument("--out", help="write the JSON result here instead of stdout")
        p.add_argument("--config", help="key=value file; command-line flags take precedence")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)

    def boot(p):
        p.add_argument("--bootstrap", type=_bootstrap_arg, default=None,
                       help="e.g. 'reps=999 seed=42'")

    def smoother(p):
        p.add_argument("--bandwidth", default="rot")
        p.add_argument("--kernel", default="epanechnikov", choices=["epanechnikov", "gaussian"])

    p = sub.add_parser("estimate", help="two-period level and slope effects")
    common(p)
    boot(p)
    smoother(p)
    p.add_argument("--assume", default="pt", choices=list(baseline.ASSUMPTIONS))
    p.add_argument("--dose", type=float, action="append", help="evaluation dose (repeatable)")

    p = sub.add_parser("estimate-mp", help="group-time effects and aggregations")
    common(p)
    boot(p)
    smoother(p)
    p.add_argument("--comparison", default="nyt", choices=list(multiperiod.COMPARISONS))
    p.add_argument("--estimand", default="acr", choices=["acr", "ate"])
    p.add_argument("--aggregate", default="cells",
                   choices=["cells", "group", "overall", "star", "es", "es_avg"])
    p.add_argument("--g", type=int)
    p.add_argument("--d", type=float)
    p.add_argument("--e", type=int)
    p.add_argument("--pretest", type=int, metavar="E_MIN",
                   help="also report pre-treatment event-study slopes for e=E_MIN..-1")

    p = sub.add_parser("decompose", help="two-period TWFE decomposition")
    common(p)
    boot(p)
    p.add_argument("--method", default="mechanical", choices=list(twfe.METHODS))
    p.add_argument("--emit-weights", help="CSV of the weight curve")

    p = sub.add_parser("decompose-mp", help="multi-period TWFE decomposition")
    common(p)
    boot(p)
    p.add_argument("--emit-terms", help="CSV of weights, comparisons and nuisance terms")
    p.add_argument("--no-nuisance", action="store_true")

    p = sub.add_parser("simulate", help="draw a panel from a DGP family")
    common(p, needs_input=False)
    p.add_argument("--family", required=True,
                   choices=list(simlab.FAMILIES) + list(simlab.ALIASES))
    p.add_argument("--n-units", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--param", type=_param_arg, action="append", default=[],
                   help="family parameter key=value (JSON values accepted)")
    p.add_argument("--panel-out", dest="panel_out", help="alias of --out for the panel CSV")
    p.add_argument("--oracle", help="oracle JSON path")

    p = sub.add_parser("replicate", help="plot-ready series for the worked examples")
    common(p, needs_input=False)
    p.add_argument("figure", choices=["fig4", "fig5", "fig6-decomp"])
    p.add_argument("--n-units", type=int)
    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = read_config(args.config)
        except (OSError, ValueError) as exc:
            parser.error(f"--config: {exc}")
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = set(cfg) - known
        if unknown:
            parser.error(f"unknown config keys {sorted(unknown)}")
        if "bootstrap" in cfg:
            cfg["bootstrap"] = _bootstrap_arg(cfg["bootstrap"])
        subparser.set_defaults(**cfg)
        args = parser.parse_args(argv)
    if getattr(args, "input", None) and not Path(args.input).is_file():
        parser.error(f"--in: cannot read {args.input}")
    return args


# --------------------------------------------------------------------------
# helpers


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = int(np.random.SeedSequence().entropy % 2**63)
    log.warning("no --seed given; using entropy seed %d", seed)
    return seed


def _smoother(args) -> SmootherSpec:
    bw = args.bandwidth
    return SmootherSpec(kernel=args.kernel, bandwidth=bw if bw == "rot" else float(bw))


def _boot(args, data, statistic, seed_offset=0):
    if args.bootstrap is None:
        return None
    b = dict(args.bootstrap)
    if b["seed"] is None:
        b["seed"] = _seed(args)
    b["seed"] += seed_offset
    return bootstrap(data, statistic, BootstrapSpec(**b), threads=args.threads).to_dict()


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _emit(args, result: dict) -> None:
    text = json.dumps(_clean(result), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


def _eval_doses(data: PanelDataset, requested) -> list[float]:
    if requested:
        return [float(d) for d in requested]
    grid = dose_grid(data)
    if grid.is_discrete:
        return [float(d) for d in grid.points]
    pos = data.dose[data.dose > 0]
    return [float(q) for q in np.quantile(pos, np.linspace(0.05, 0.95, N_CONTINUOUS_EVAL))]


# --------------------------------------------------------------------------
# subcommands


def cmd_estimate(args) -> dict:
    data = load_panel(args.input, dose_onset=args.dose_onset)
    spec = _smoother(args)
    has_untreated = bool(np.any(data.dose == 0))
    rows = []
    for i, d in enumerate(_eval_doses(data, args.dose)):
        row = {"dose": d}
        if has_untreated:
            att = baseline.att_dd(data, d, args.assume, spec)
            row["level"] = att.to_dict()
            row["level"]["bootstrap"] = _boot(args, data, lambda p, d=d: baseline.att_dd(p, d, args.assume, spec), i)
        try:
            slope = baseline.acr(data, d, spec, args.assume)
        except DoseDidError as exc:
            row["slope"] = {"error": exc.name, "message": str(exc)}
        else:
            row["slope"] = slope.to_dict()
        rows.append(row)
    star = baseline.acr_star(data, spec, args.assume)
    result = {"assumption": args.assume, "doses": rows, "average_slope": star.to_dict()}
    result["average_slope"]["bootstrap"] = _boot(
        args, data, lambda p: baseline.acr_star(p, spec, args.assume), 10_000)
    result["twfe_beta"] = twfe.twfe_beta_2p(data)
    return result


def cmd_estimate_mp(args) -> dict:
    data = load_panel(args.input, dose_onset=args.dose_onset)
    spec = _smoother(args)

    def cells_of(p):
        return multiperiod.group_time_cells(p, args.estimand, args.comparison, spec)

    result: dict = {"comparison": multiperiod.COMPARISONS[args.comparison], "estimand": args.estimand}
    if args.aggregate == "cells":
        result["cells"] = [c.to_dict() for c in cells_of(data).values()]
    else:
        def stat(p):
            return multiperiod.aggregate(p, cells_of(p), args.aggregate, g=args.g, d=args.d, e=args.e)

        agg = stat(data)
        out = agg.to_dict()
        boot = _boot(args, data, stat)
        if boot is not None:
            out["se"] = boot["se"]
            out["ci"] = [boot["ci_lower"], boot["ci_upper"]]
            out["bootstrap"] = boot
        result["aggregate"] = out
    if args.pretest is not None:
        result["pretest"] = [a.to_dict() for a in multiperiod.pretest(data, args.pretest, args.comparison, spec)]
    result["twfe_beta"] = mp_decomp.twfe_beta_mp(data)
    return result


def cmd_decompose(args) -> dict:
    data = load_panel(args.input, dose_onset=args.dose_onset)
    report = twfe.decompose(data, args.method)
    result = report.to_dict()
    result["bootstrap_beta"] = _boot(args, data, twfe.twfe_beta_2p)
    if args.emit_weights:
        curve = report.terms
        pd.DataFrame([t.__dict__ for t in curve]).to_csv(args.emit_weights, index=False)
    return result


def cmd_decompose_mp(args) -> dict:
    data = load_panel(args.input, dose_onset=args.dose_onset)
    report = mp_decomp.decompose_mp(data, with_nuisance=not args.no_nuisance)
    result = report.to_dict()
    result["bootstrap_beta"] = _boot(args, data, mp_decomp.twfe_beta_mp)
    if args.emit_terms:
        report.table().to_csv(args.emit_terms, index=False)
    return result


def cmd_simulate(args) -> dict:
    spec = simlab.DgpSpec(args.family, args.n_units, _seed(args), args.noise_sd, dict(args.param))
    data, oracle = simlab.generate(spec)
    target = args.panel_out or args.out
    if target:
        data.to_csv(target)
    doses = np.unique(data.dose[data.dose > 0])
    oracle_doc = {"family": spec.family, "seed": spec.seed, "n_units": spec.n,
                  "noise_sd": spec.sd, "params": spec.params, **oracle.sample(doses)}
    if oracle.ate_gtd is not None:
        T = data.n_periods
        oracle_doc["ate_gtd"] = [
            {"g": int(g), "t": t, "dose": float(d), "value": float(oracle.ate_gtd(int(g), t, float(d)))}
            for g in data.timing.treated_groups
            for d in np.unique(data.dose[data.first_treated == g])
            for t in range(int(g), T + 1)
        ]
    if args.oracle:
        Path(args.oracle).write_text(json.dumps(_clean(oracle_doc), indent=2) + "\n")
    # the panel owns --out here, so the summary goes to stdout
    summary = {"panel": target, "oracle": args.oracle, "seed": spec.seed,
               "n_units": data.n_units, "n_periods": data.n_periods}
    print(json.dumps(_clean(summary)))
    return {}


def fig4_series(seed: int, n_units: int | None = None) -> pd.DataFrame:
    """Scatter of outcome changes with cell means and the TWFE and true-slope lines.

    The true-slope line has slope 1 and passes through the untreated mean.
    """
    data, _ = simlab.generate(simlab.DgpSpec("two-period-exp", n_units, seed))
    dy, D = data.delta_y, data.dose
    beta = twfe.twfe_beta_2p(data)
    intercept = dy.mean() - beta * D.mean()
    cell = pd.Series(dy).groupby(D).transform("mean").to_numpy()
    m0 = dy[D == 0].mean() if np.any(D == 0) else intercept
    return pd.DataFrame({
        "dose": D, "delta_y": dy, "cell_mean": cell,
        "twfe_line": intercept + beta * D, "true_acrt_line": m0 + 1.0 * D,
    })


def fig5_series(seed: int, n_units: int | None = None) -> pd.DataFrame:
    """Density of positive doses and the TWFE weight curve on a grid."""
    data, _ = simlab.generate(simlab.DgpSpec("two-period-exp", n_units, seed))
    return twfe.weight_table(data).rename(columns={"weight": "w1"})[["dose", "density", "w1"]]


def fig6_table(seed: int, n_units: int | None = None) -> pd.DataFrame:
    """Weights, comparisons and nuisance terms for the staggered two-group example."""
    data, _ = simlab.generate(simlab.DgpSpec("four-group", n_units, seed))
    return mp_decomp.decompose_mp(data).table()


def cmd_replicate(args) -> dict:
    seed = _seed(args)
    build = {"fig4": fig4_series, "fig5": fig5_series, "fig6-decomp": fig6_table}[args.figure]
    frame = build(seed, args.n_units)
    if args.out:
        frame.to_csv(args.out, index=False)
    else:
        frame.to_csv(sys.stdout, index=False)
    return {}


COMMANDS = {
    "estimate": cmd_estimate,
    "estimate-mp": cmd_estimate_mp,
    "decompose": cmd_decompose,
    "decompose-mp": cmd_decompose_mp,
    "simulate": cmd_simulate,
    "replicate": cmd_replicate,
}


def run(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args.threads = resolve_threads(args.threads)
    try:
        result = COMMANDS[args.command](args)
    except DoseDidError as exc:
        sys.stderr.write(json.dumps(_clean(exc.to_dict())) + "\n")
        return 1
    if result:
        _emit(args, result)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
