"""``senscap`` command line: bounds, exponents, sweeps, simulations and type enumeration.

Exit codes: 0 success, 2 configuration error (the message names the field),
1 solver failure (``diagnostics.json`` is still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bounds, simulate, svg
from .errors import ConfigError, SolverError
from .io import CsvWriter, NdjsonWriter, read_csv, write_json
from .models import load_model
from .types import (
    compute_joint_type,
    compute_type,
    count_type_classes,
    enumerate_type_class,
)

log = logging.getLogger("senscap")

SWEEP_HEADER = ("axis", "value", "clb", "numerator", "denominator", "iters")
EXPONENT_HEADER = ("R", "Er", "rho", "achievable")
SIM_HEADER = ("k", "n", "rate", "error_rate", "ci_low", "ci_high", "trials")


def parse_grid(text: str, name: str) -> list:
    """``from:to:points`` (inclusive endpoints) or a comma-separated list."""
    try:
        if ":" in text:
            lo, hi, pts = text.split(":")
            return list(np.linspace(float(lo), float(hi), int(pts)))
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}", field=name) from None


def _int_list(text: str, name: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}", field=name) from None


def _model(path: str):
    if not path:
        raise ConfigError("a model file is required", field="model")
    return load_model(path)


def _options(args) -> bounds.SolverOptions:
    return bounds.SolverOptions(grid_points=args.grid_points, bisection_tol=args.bisection_tol)


def _out(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory: {exc}", field="out") from None
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_bound(args) -> int:
    model = _model(args.model)
    problem = bounds.BoundProblem(model, args.distortion, args.variant, _options(args))
    result = bounds.compute_bound(problem)
    doc = result.to_dict()
    if args.replicate:
        rep = bounds.replication_comparison(model, args.distortion, args.replicate,
                                            _options(args))
        doc["replication"] = rep.__dict__
    write_json(_out(args) / "bound.json", doc)
    print(f"clb={result.clb:.6f} D={result.D} variant={result.variant}")
    return 0


def cmd_exponent(args) -> int:
    model = _model(args.model)
    res = bounds.random_coding_exponent(model, args.rate, args.distortion, args.variant,
                                        _options(args))
    doc = res.to_dict()
    doc["achievable"] = res.achievable()
    write_json(_out(args) / "exponent.json", doc)
    print(f"Er={res.Er_value:.6g} rho={res.rho:.4f} R={args.rate} D={args.distortion}")
    return 0


def _sweep_grid(args) -> list:
    if args.grid:
        return parse_grid(args.grid, "grid")
    if args.start is None or args.stop is None:
        raise ConfigError("sweep needs --from and --to (or --grid)", field="from")
    if args.points < 1:
        raise ConfigError("--points must be >= 1", field="points")
    return list(np.linspace(args.start, args.stop, args.points))


def cmd_sweep(args) -> int:
    paths = args.models.split(",") if args.models else [args.model]
    models = [(Path(p).stem, _model(p)) for p in paths if p]
    if not models:
        raise ConfigError("a model file is required", field="model")
    grid = _sweep_grid(args)
    out = _out(args)
    csvs, flags = [], {}
    for stem, model in models:
        problem = bounds.BoundProblem(model, args.distortion, args.variant, _options(args))
        path = out / f"sweep_{stem}.csv"
        results = []
        with CsvWriter(path, SWEEP_HEADER) as writer:
            for value in grid:
                table = bounds.sweep(problem, args.axis, [value])
                res = table.results[0]
                results.append(res)
                writer.write(next(table.rows()))
        full = bounds.SweepTable(args.axis, grid, results)
        flags[stem] = _flags(full, problem)
        if args.axis == "rate":
            with CsvWriter(out / f"sweep_{stem}_exponent.csv", EXPONENT_HEADER) as ew:
                for r in results:
                    ew.write({key: r.diagnostics[key] for key in EXPONENT_HEADER})
        csvs.append((stem, path))
    write_json(out / "sweep_flags.json", flags)
    (out / "sweep.svg").write_text(render_sweep(csvs, args.axis), encoding="utf-8")
    for stem, path in csvs:
        print(f"{stem}: {path}")
    return 0


def _flags(table, problem) -> dict:
    clbs = [r.clb for r in table.results]
    tol = problem.options.bisection_tol + 1e-9
    order = np.argsort(table.values)
    seq = np.diff([clbs[i] for i in order]) if len(clbs) > 1 else np.zeros(0)
    if table.axis == "D":
        return {"nondecreasing_in_D": bool(np.all(seq >= -tol))}
    if table.axis == "noise_p":
        return {"nonincreasing_in_p": bool(np.all(seq <= tol))}
    return {}


def render_sweep(csvs, axis: str) -> str:
    """Sweep plot built only from the CSV files on disk."""
    series = []
    for stem, path in csvs:
        rows = read_csv(path)
        if axis == "rate":
            ex = read_csv(path.with_name(path.stem + "_exponent.csv"))
            series.append((f"{stem} Er", [r["R"] for r in ex], [r["Er"] for r in ex]))
        else:
            series.append((stem, [r["value"] for r in rows], [r["clb"] for r in rows]))
    notes = []
    if len(series) == 2 and axis != "rate":
        (_, xa, ya), (_, xb, yb) = series
        if xa == xb:
            notes = [(x, y, f"crossover {axis}={x:.4g}") for x, y in svg.crossings(xa, ya, yb)]
    ylabel = "E_r (bits)" if axis == "rate" else "C_LB (bits)"
    return svg.line_plot(series, axis, ylabel, title=f"bound vs {axis}", notes=notes)


def cmd_simulate(args) -> int:
    model = _model(args.model)
    k_list = _int_list(args.k, "k")
    rates = parse_grid(args.rates, "rates")
    out = _out(args)
    bound = bounds.compute_bound(bounds.BoundProblem(model, args.distortion, None, _options(args)))
    with CsvWriter(out / "bound.csv", SWEEP_HEADER) as writer:
        writer.write({"axis": "D", "value": args.distortion, "clb": bound.clb,
                      "numerator": bound.numerator, "denominator": bound.denominator,
                      "iters": bound.diagnostics.get("iterations", -1)})
    writer = CsvWriter(out / "simulate.csv", SIM_HEADER)
    records = NdjsonWriter(out / "trials.ndjson") if args.records else None
    completed = False
    try:
        for k in k_list:
            for n in sorted({simulate.sensors_for_rate(model, k, r) for r in rates}, reverse=True):
                s = simulate.run_trials(model, k, n, args.distortion, args.trials, args.seed,
                                        args.decoder, args.bp_iters, args.damping,
                                        keep_records=records is not None)
                writer.write(s.row())
                if records is not None:
                    for rec in s.records:
                        records.write(rec.to_dict())
        completed = True
    finally:
        writer.close(truncated=not completed)
        if records is not None:
            records.close()
    (out / "simulate.svg").write_text(render_simulation(out / "simulate.csv", out / "bound.csv"),
                                      encoding="utf-8")
    print(f"clb={bound.clb:.6f}; curves in {out / 'simulate.csv'}")
    return 0


def render_simulation(sim_csv: Path, bound_csv: Path) -> str:
    rows = read_csv(sim_csv)
    series = []
    for k in sorted({int(r["k"]) for r in rows}):
        pts = sorted((r["rate"], r["error_rate"]) for r in rows if int(r["k"]) == k)
        series.append((f"k={k}", [p[0] for p in pts], [p[1] for p in pts]))
    clb = read_csv(bound_csv)[0]["clb"]
    return svg.line_plot(series, "rate k/n", "error rate", title="empirical error vs rate",
                         vlines=[(clb, f"C_LB={clb:.3f}")])


def cmd_enumerate(args) -> int:
    gi = compute_type(args.reference, args.c, circular=not args.linear)
    doc = {"gamma_i": gi.to_dict()}
    if args.candidate:
        lam = compute_joint_type(args.reference, args.candidate, args.c, circular=not args.linear)
        count, _ = enumerate_type_class(args.reference, lam, args.c, not args.linear)
        cb = count_type_classes(lam, reference=args.reference)
        doc.update({
            "lambda": lam.to_dict(),
            "count": count,
            "log2_bound": cb.log2_bound,
            "bound_holds": cb.holds(),
        })
        print(f"partners with this joint type: {count}; log2 bound {cb.log2_bound:.4f}")
    else:
        print(f"type: {[str(f) for f in gi.as_fractions()]}")
    write_json(_out(args) / "enumerate.json", doc)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="senscap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        if model:
            p.add_argument("--model", help="model JSON file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--variant", default=None, choices=bounds.VARIANTS)
        p.add_argument("--grid-points", type=int, default=200)
        p.add_argument("--bisection-tol", type=float, default=1e-3)
        p.add_argument("--distortion", "--D", dest="distortion", type=float, default=0.1)

    p = sub.add_parser("bound", help="lower bound C_LB(D)")
    common(p)
    p.add_argument("--replicate", type=int, default=0, help="odd replication factor m")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("exponent", help="random-coding exponent E_r(R, D)")
    common(p)
    p.add_argument("--rate", type=float, required=True)
    p.set_defaults(func=cmd_exponent)

    p = sub.add_parser("sweep", help="bound along D, noise_p, c or rate")
    common(p)
    p.add_argument("--models", help="comma-separated model files (overlaid)")
    p.add_argument("--axis", required=True, choices=("D", "noise_p", "c", "rate"))
    p.add_argument("--from", dest="start", type=float)
    p.add_argument("--to", dest="stop", type=float)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--grid", help="from:to:points or a comma-separated list")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="Monte Carlo error rate vs rate")
    common(p)
    p.add_argument("--k", default="15,30,60", help="comma-separated target counts")
    p.add_argument("--rates", default="0.15:1.5:10", help="from:to:points")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--seed", type=int, default=simulate.DEFAULT_SEED)
    p.add_argument("--decoder", choices=("bp", "ml"), default="bp")
    p.add_argument("--bp-iters", type=int, default=50)
    p.add_argument("--damping", type=float, default=simulate.DEFAULT_DAMPING)
    p.add_argument("--records", action="store_true", help="also write trials.ndjson")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("enumerate", help="types, joint types and type-class counts")
    p.add_argument("--reference", required=True, help="symbol string, e.g. 0010110")
    p.add_argument("--candidate", help="second vector for the joint type")
    p.add_argument("--c", type=int, default=1)
    p.add_argument("--linear", action="store_true", help="non-circular windows")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_enumerate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        field = exc.field or "input"
        print(f"senscap: configuration error in '{field}': {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        out = Path(getattr(args, "out", "."))
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "diagnostics.json", {"error": str(exc), **exc.diagnostics})
        except OSError:
            pass
        print(f"senscap: solver failure: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("senscap: interrupted; partial output flushed", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
