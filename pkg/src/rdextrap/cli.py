"""Command-line interface.

Subcommands mirror the library's analyses; every number printed comes from a
library call, the CLI only formats.  Results are emitted as JSON (full float
precision, round-trippable) or as aligned text tables (3 decimals).  Exit
codes: 0 success, 2 usage error, 3 data error, 4 estimation error.
"""

import argparse
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .dataset import load_dataset, pool_normalize
from .errors import DataError, EstimationError, InsufficientData, RdextrapError
from .extrapolation import (
    estimate_cutoff_effect,
    extrapolate_covadj,
    extrapolate_fuzzy,
    extrapolate_polybias,
    extrapolation_grid,
    pooled_effect,
    weighted_average_effect,
)
from .falsification import global_parallel_test, local_derivative_test
from .fixedeffects import fe_effect_at, fit_fe_model, slope_equality_test
from .linmod import poly_design
from .localrand import lr_inference, lr_sensitivity
from .locfit import FitSpec
from .simulate import (
    SimulationConfig,
    config_from_mapping,
    load_config,
    resolve_threads,
    run_monte_carlo,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_ESTIMATION = 4


# -- RD plot bin data ---------------------------------------------------------


@dataclass
class RDPlotData:
    """Binned means and global polynomial fits for an RD plot, per side."""

    bins_left: list
    bins_right: list
    fit_left: dict
    fit_right: dict
    normalized: bool
    cutoff: float
    order: int

    def to_dict(self):
        return {
            "cutoff": self.cutoff,
            "normalized": self.normalized,
            "order": self.order,
            "bins_left": [list(b) for b in self.bins_left],
            "bins_right": [list(b) for b in self.bins_right],
            "fit_left": self.fit_left,
            "fit_right": self.fit_right,
        }


def _side_bins(x, y, bins_per_side):
    lo, hi = float(np.min(x)), float(np.max(x))
    edges = np.linspace(lo, hi, bins_per_side + 1)
    idx = np.clip(np.digitize(x, edges[1:-1]), 0, bins_per_side - 1)
    out = []
    for b in range(bins_per_side):
        members = idx == b
        count = int(np.sum(members))
        center = 0.5 * (edges[b] + edges[b + 1])
        mean = float(np.mean(y[members])) if count else float("nan")
        out.append((center, mean, count))
    return out


def _side_fit(x, y, order):
    if x.size < order + 1:
        raise InsufficientData(f"side has {x.size} rows, needs {order + 1}")
    coef, *_ = np.linalg.lstsq(poly_design(x, order), y, rcond=None)
    return [float(v) for v in coef]


def rdplot_bins(ds, cutoff="pooled", bins_per_side=20, order=1):
    """Evenly-spaced binned means and global fits on each side of a cutoff.

    ``cutoff='pooled'`` recenters every score at its own cutoff first.
    """
    if bins_per_side < 2:
        raise InsufficientData("bins_per_side must be at least 2")
    if order not in (1, 2):
        raise DataError("rdplot order must be 1 or 2")
    if cutoff == "pooled":
        view = pool_normalize(ds)
        cut, normalized = 0.0, True
    else:
        view = ds.subset(cutoff=float(cutoff))
        cut, normalized = float(cutoff), False
    left = view.x < cut
    right = ~left
    if not left.any() or not right.any():
        raise InsufficientData("need observations on both sides of the cutoff")
    return RDPlotData(
        bins_left=_side_bins(view.x[left], view.y[left], bins_per_side),
        bins_right=_side_bins(view.x[right], view.y[right], bins_per_side),
        fit_left={str(order): _side_fit(view.x[left], view.y[left], order)},
        fit_right={str(order): _side_fit(view.x[right], view.y[right], order)},
        normalized=normalized,
        cutoff=cut,
        order=order,
    )


# -- argument plumbing --------------------------------------------------------


def _add_data_args(p):
    p.add_argument("--data", required=True, help="input CSV file")
    p.add_argument("--y", default="y", help="outcome column name")
    p.add_argument("--x", default="x", help="score column name")
    p.add_argument("--c", default="c", help="cutoff column name")
    p.add_argument("--d", default=None, help="treatment column name")
    p.add_argument("--z", default=None, help="comma-separated covariate columns")
    p.add_argument("--design", choices=("sharp", "fuzzy"), default="sharp")


def _add_fit_args(p):
    p.add_argument("--kernel", default="triangular",
                   choices=("triangular", "uniform", "epanechnikov"))
    p.add_argument("--order", type=int, default=1, help="local polynomial order")
    p.add_argument("--bandwidth", default="auto", help="'auto' or a positive number")
    p.add_argument("--level", type=float, default=0.95, help="confidence level")


def _add_out_args(p):
    p.add_argument("--out", default=None, help="write output to this path")
    p.add_argument("--format", choices=("json", "table"), default="json")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rdx",
        description="Multi-cutoff regression discontinuity analysis and "
                    "treatment-effect extrapolation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("effect", help="cutoff-specific, pooled and averaged RD effects")
    _add_data_args(p)
    _add_fit_args(p)
    _add_out_args(p)
    p.add_argument("--cutoff", type=float, default=None,
                   help="restrict to one cutoff (default: all, plus pooled and average)")

    p = sub.add_parser("extrapolate", help="extrapolated effect between two cutoffs")
    _add_data_args(p)
    _add_fit_args(p)
    _add_out_args(p)
    p.add_argument("--cutoff-low", "--low", dest="low", type=float, required=True)
    p.add_argument("--cutoff-high", "--high", dest="high", type=float, required=True)
    p.add_argument("--at", type=float, default=None, help="single evaluation point")
    p.add_argument("--grid", default=None, help="a:b:n equidistant evaluation points")
    p.add_argument("--fuzzy", action="store_true",
                   help="fuzzy design with one-sided noncompliance")
    p.add_argument("--polybias-order", type=int, default=0, choices=(0, 1, 2),
                   help="order of the polynomial-in-score gap correction")
    p.add_argument("--covadj", action="store_true",
                   help="aggregate over discrete covariate cells")

    p = sub.add_parser("falsify", help="parallel-trend diagnostics below the low cutoff")
    _add_data_args(p)
    _add_fit_args(p)
    _add_out_args(p)
    p.add_argument("--cutoff-low", "--low", dest="low", type=float, required=True)
    p.add_argument("--cutoff-high", "--high", dest="high", type=float, required=True)
    p.add_argument("--global-order", type=int, default=2)
    p.add_argument("--joint", action="store_true",
                   help="include the intercept shift in the F-test null")
    p.add_argument("--grid", default=None, help="a:b:n derivative-test grid")

    p = sub.add_parser("fe", help="cutoff fixed-effects model and slope test")
    _add_data_args(p)
    _add_out_args(p)
    p.add_argument("--separate-slopes", action="store_true",
                   help="fit one control slope per cutoff")
    p.add_argument("--no-center", action="store_true",
                   help="keep raw scores instead of centering at each cutoff")
    p.add_argument("--at", type=float, default=None,
                   help="also report per-cutoff effects at this score value")

    p = sub.add_parser("lr", help="local-randomization extrapolation")
    _add_data_args(p)
    _add_out_args(p)
    p.add_argument("--cutoff-low", "--low", dest="low", type=float, required=True)
    p.add_argument("--cutoff-high", "--high", dest="high", type=float, required=True)
    p.add_argument("--at", type=float, required=True)
    p.add_argument("--k", type=int, default=50, help="nearest neighbors per window")
    p.add_argument("--adjustment", choices=("constant", "linear"), default="constant")
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--perms", type=int, default=2000)
    p.add_argument("--bb-grid", type=int, default=100,
                   help="gap values scanned inside the confidence set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-list", default=None,
                   help="comma-separated window sizes for a sensitivity table")

    p = sub.add_parser("simulate", help="Monte Carlo study on the benchmark DGP")
    _add_out_args(p)
    p.add_argument("--config", default=None, help="JSON or key=value config file")
    p.add_argument("--n", type=int, default=None, help="sample size override")
    p.add_argument("--reps", type=int, default=None, help="replication override")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--estimator", default="extrapolate_sharp")
    p.add_argument("--polybias-order", type=int, default=1, choices=(0, 1, 2))

    p = sub.add_parser("rdplot", help="binned means and global fits for plotting")
    _add_data_args(p)
    _add_out_args(p)
    p.add_argument("--cutoff", default="pooled",
                   help="a cutoff value, or 'pooled' (default)")
    p.add_argument("--bins", type=int, default=20, help="bins per side")
    p.add_argument("--fit-order", type=int, default=1, choices=(1, 2))

    return parser


def _schema(args):
    schema = {"y": args.y, "x": args.x, "c": args.c}
    if args.d:
        schema["d"] = args.d
    if args.z:
        schema["z"] = args.z
    return schema


def _load(args):
    return load_dataset(args.data, schema=_schema(args), design=args.design)


def _fitspec(args):
    h = args.bandwidth
    if h != "auto":
        h = float(h)
    return FitSpec(p=args.order, kernel=args.kernel, h=h)


def _parse_grid(text):
    try:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(n))
    except ValueError:
        raise DataError(f"grid must be 'a:b:n', got {text!r}") from None


# -- table rendering ----------------------------------------------------------


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return "nan" if v != v else f"{v:.3f}"
    return str(v)


def _table(headers, rows):
    cells = [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    out = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    out.append("  ".join("-" * w for w in widths))
    for row in cells:
        out.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(out)


def _effect_rows(label, d):
    return [label, d["tau"], f"[{d['ci_rbc'][0]:.3f}, {d['ci_rbc'][1]:.3f}]",
            d["p_rbc"], d["n_eff_left"] + d["n_eff_right"],
            f"{d['h_left']:.3f}/{d['h_right']:.3f}"]


EFFECT_HEADERS = ("", "Estimate", "RBC CI", "RBC p", "Eff. N", "Bw")


def _render_effect(payload):
    rows = [_effect_rows(e["label"], e) for e in payload["effects"]]
    if "pooled" in payload:
        rows.append(_effect_rows("pooled", payload["pooled"]))
    if "weighted_average" in payload:
        w = payload["weighted_average"]
        rows.append(["weighted avg", w["estimate"],
                     f"[{w['ci_rbc'][0]:.3f}, {w['ci_rbc'][1]:.3f}]",
                     w["p_rbc"], None, None])
    return _table(EFFECT_HEADERS, rows)


def _render_extrapolation(payload):
    blocks = []
    for entry in payload["results"]:
        if entry.get("error"):
            blocks.append(f"x = {entry['x']:.3f}: error: {entry['error']}")
            continue
        r = entry["result"]
        rows = []
        for comp in r.get("components", r.get("itt", {}).get("components", [])):
            rows.append([comp["name"], comp["estimate"],
                         f"se {comp['se_rbc']:.3f}", None,
                         comp["n_eff"], comp["bandwidth"]])
        gap = r.get("bias_low", r.get("itt", {}).get("bias_low"))
        if gap is not None:
            rows.append(["gap at low cutoff", gap, None, None, None, None])
        if "itt" in r:
            rows.append(["intent-to-treat", r["itt"]["tau"],
                         f"se {r['itt']['se_rbc']:.3f}",
                         r["itt"]["p_rbc"], None, None])
        if "first_stage" in r:
            rows.append(["first stage", r["first_stage"]["estimate"],
                         f"se {r['first_stage']['se_rbc']:.3f}", None,
                         r["first_stage"]["n_eff"], r["first_stage"]["bandwidth"]])
        rows.append(["extrapolated effect", r["tau"],
                     f"[{r['ci_rbc'][0]:.3f}, {r['ci_rbc'][1]:.3f}]",
                     r["p_rbc"], None, None])
        blocks.append(f"x = {r['xbar']:.3f}\n" + _table(EFFECT_HEADERS, rows))
    return "\n\n".join(blocks)


def _render_kv(payload, skip=()):
    lines = []
    for key, value in payload.items():
        if key in skip:
            continue
        if isinstance(value, float):
            lines.append(f"{key:<24}{value:.3f}")
        elif isinstance(value, (str, int, bool)):
            lines.append(f"{key:<24}{value}")
    return "\n".join(lines)


# -- subcommands --------------------------------------------------------------


def _cmd_effect(args):
    ds = _load(args)
    spec = _fitspec(args)
    cutoffs = ds.cutoffs if args.cutoff is None else (args.cutoff,)
    effects = [estimate_cutoff_effect(ds, c, spec=spec, level=args.level)
               for c in cutoffs]
    payload = {"effects": [{**e.to_dict(), "label": f"cutoff {e.cutoff:g}"}
                           for e in effects]}
    if args.cutoff is None:
        payload["pooled"] = {**pooled_effect(ds, spec=spec, level=args.level).to_dict(),
                             "label": "pooled"}
        if len(effects) >= 2:
            payload["weighted_average"] = weighted_average_effect(
                effects, ds, level=args.level).to_dict()
    return payload, _render_effect


def _cmd_extrapolate(args):
    ds = _load(args)
    spec = _fitspec(args)
    pair = (args.low, args.high)
    if (args.at is None) == (args.grid is None):
        raise DataError("exactly one of --at and --grid is required")
    if args.fuzzy and (args.covadj or args.polybias_order):
        raise DataError("--fuzzy cannot be combined with --covadj or --polybias-order")
    if args.covadj and args.polybias_order:
        raise DataError("--covadj cannot be combined with --polybias-order")

    def run_at(x):
        if args.covadj:
            return extrapolate_covadj(ds, pair, x, spec=spec, level=args.level)
        if args.fuzzy:
            return extrapolate_fuzzy(ds, pair, x, spec=spec, level=args.level)
        return extrapolate_polybias(ds, pair, x, spec=spec,
                                    s_max=args.polybias_order, level=args.level)

    results = []
    if args.at is not None:
        results.append({"x": args.at, "result": run_at(args.at).to_dict()})
    else:
        points = _parse_grid(args.grid)
        if args.fuzzy or args.covadj or args.polybias_order:
            for x in points:
                try:
                    results.append({"x": float(x), "result": run_at(float(x)).to_dict()})
                except EstimationError as exc:
                    results.append({"x": float(x), "error": str(exc)})
        else:
            for point in extrapolation_grid(ds, pair, points, spec=spec,
                                            level=args.level):
                entry = {"x": point.x}
                if point.ok:
                    entry["result"] = point.result.to_dict()
                else:
                    entry["error"] = point.error
                results.append(entry)
    return {"low": args.low, "high": args.high, "results": results}, _render_extrapolation


def _cmd_falsify(args):
    ds = _load(args)
    pair = (args.low, args.high)
    glob = global_parallel_test(ds, pair, order=args.global_order,
                                include_intercept_shift=args.joint)
    grid = "auto" if args.grid is None else _parse_grid(args.grid)
    loc = local_derivative_test(ds, pair, grid=grid, level=args.level,
                                kernel=args.kernel, bandwidth=args.bandwidth)
    payload = {"global_trend": glob.to_dict(), "derivative_test": loc.to_dict()}

    def render(p):
        g = p["global_trend"]
        lines = [
            "global parallel-trend test",
            f"  F = {g['F_stat']:.3f}  df = ({g['df'][0]}, {g['df'][1]})"
            f"  p = {g['p_value']:.3f}  n = {g['n_used']}",
            "",
            "derivative equality test",
            _table(("x", "diff", "RBC CI", "reject"),
                   [[pt["x"], pt["diff_rbc"],
                     "-" if pt["error"] else
                     f"[{pt['ci_rbc'][0]:.3f}, {pt['ci_rbc'][1]:.3f}]",
                     pt["error"] or str(pt["reject"])]
                    for pt in p["derivative_test"]["points"]]),
            f"  sup |t| = {p['derivative_test']['sup_stat']:.3f}",
        ]
        return "\n".join(lines)

    return payload, render


def _cmd_fe(args):
    ds = _load(args)
    fit = fit_fe_model(ds, common_slope=not args.separate_slopes,
                       center=not args.no_center)
    payload = {"model": fit.to_dict()}
    if args.at is not None:
        payload["effects_at"] = []
        for j, cut in enumerate(fit.cutoffs):
            est, se = fe_effect_at(fit, j, args.at)
            payload["effects_at"].append(
                {"cutoff": cut, "x": args.at, "estimate": est, "se": se})
    if len(ds.cutoffs) >= 2:
        F, df, p = slope_equality_test(ds)
        payload["slope_equality"] = {"F_stat": F, "df": list(df), "p_value": p}

    def render(pl):
        m = pl["model"]
        rows = []
        for j, cut in enumerate(m["cutoffs"]):
            rows.append([f"cutoff {cut:g}", m["gamma"][j],
                         m["beta"][j if len(m["beta"]) > 1 else 0],
                         m["delta"][j], m["theta"][j]])
        out = [_table(("", "intercept", "slope", "jump", "interaction"), rows)]
        if "slope_equality" in pl:
            s = pl["slope_equality"]
            out.append(f"slope equality: F = {s['F_stat']:.3f} "
                       f"df = ({s['df'][0]}, {s['df'][1]}) p = {s['p_value']:.3f}")
        return "\n".join(out)

    return payload, render


def _cmd_lr(args):
    ds = _load(args)
    pair = (args.low, args.high)
    lr, bb = lr_inference(ds, pair, args.at, args.k, adjustment=args.adjustment,
                          eta=args.eta, M=args.perms, G=args.bb_grid,
                          seed=args.seed)
    payload = {"estimate": lr.to_dict(), "bergerboos": bb.to_dict()}
    if args.k_list:
        ks = [int(v) for v in args.k_list.split(",") if v.strip()]
        payload["sensitivity"] = [row.to_dict() for row in lr_sensitivity(
            ds, pair, args.at, ks, adjustment=args.adjustment, eta=args.eta,
            M=args.perms, G=args.bb_grid, seed=args.seed)]

    def render(pl):
        e = pl["estimate"]
        lines = [
            f"tau = {e['tau_hat']:.3f}  gap = {e['delta_hat']:.3f}  k = {e['k']}",
            f"p (randomization, confidence-set corrected) = {e['p_fisher_bb']:.3f}",
            f"p (studentized normal) = {e['p_neyman']:.3f}",
        ]
        if "sensitivity" in pl:
            lines.append(_table(("k", "tau", "p*", "p Neyman"),
                                [[r["k"], r["tau_hat"], r["p_star"], r["p_neyman"]]
                                 if not r["error"] else [r["k"], r["error"], None, None]
                                 for r in pl["sensitivity"]]))
        return "\n".join(lines)

    return payload, render


def _cmd_simulate(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = SimulationConfig()
    overrides = {}
    if args.n is not None:
        overrides["N"] = args.n
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        merged = cfg.to_dict()
        merged.update(overrides)
        if args.n is not None and "N_ell" not in overrides:
            merged["N_ell"] = None
        cfg = config_from_mapping({k: v for k, v in merged.items() if v is not None})
    estimator = args.estimator
    if estimator == "extrapolate_polybias":
        estimator = {"name": estimator, "s_max": args.polybias_order}
    summary = run_monte_carlo(cfg, estimator=estimator,
                              n_jobs=resolve_threads())
    return summary.to_dict(), _render_summary


def _render_summary(payload):
    lines = [
        f"{'replications':<18}{payload['reps_completed']:>12d}",
        f"{'failed':<18}{payload['reps_failed']:>12d}",
        f"{'target':<18}{payload['target']:>12.3f}",
        f"{'mean estimate':<18}{payload['mean_tau_hat']:>12.3f}",
        f"{'bias':<18}{payload['bias']:>12.3f}",
        f"{'sd':<18}{payload['sd']:>12.3f}",
        f"{'rmse':<18}{payload['rmse']:>12.3f}",
        f"{'coverage (RBC)':<18}{payload['coverage_rbc']:>12.3f}",
    ]
    for name, bw in payload["mean_bandwidths"].items():
        lines.append(f"{name:<40}bw {bw:>9.3f}  eff n "
                     f"{payload['mean_eff_n'][name]:>8.1f}")
    return "\n".join(lines)


def _cmd_rdplot(args):
    ds = _load(args)
    data = rdplot_bins(ds, cutoff=args.cutoff, bins_per_side=args.bins,
                       order=args.fit_order)
    payload = data.to_dict()

    def render(pl):
        rows = [[f"L{i}", b[0], b[1], b[2]] for i, b in enumerate(pl["bins_left"])]
        rows += [[f"R{i}", b[0], b[1], b[2]] for i, b in enumerate(pl["bins_right"])]
        return _table(("bin", "center", "mean", "count"), rows)

    return payload, render


_COMMANDS = {
    "effect": _cmd_effect,
    "extrapolate": _cmd_extrapolate,
    "falsify": _cmd_falsify,
    "fe": _cmd_fe,
    "lr": _cmd_lr,
    "simulate": _cmd_simulate,
    "rdplot": _cmd_rdplot,
}


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    else:
        argv = list(argv)
    # argparse mistakes grid values like -840:-580:5 for option names
    for i, tok in enumerate(argv[:-1]):
        if tok == "--grid" and argv[i + 1].startswith("-"):
            argv[i:i + 2] = [f"--grid={argv[i + 1]}"]
            break
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        payload, renderer = _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EstimationError, RdextrapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA

    if args.format == "json":
        text = json.dumps(payload, indent=2, allow_nan=True)
    else:
        rendered = renderer(payload)
        text = rendered if isinstance(rendered, str) else str(rendered)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
