"""``osibench`` command line: one subcommand per pipeline stage, files in between.

Exit status: 0 success, 1 bad input or contract violation, 2 internal error.
Each output file gets a ``<output>.manifest.json`` next to it recording the
tool version, the configuration and SHA-256 digests of inputs and outputs.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from osibench import __version__
from osibench import calibration, metrics, synth
from osibench.engine import load_scores, save_scores, score_run
from osibench.store import IngestError, ingest, serialize
from osibench.transforms import DEFAULT_TOPK, CohortSet, fuse, fuse_run, normalize_run
from osibench.watchlist import (
    build_kfold,
    build_loso,
    load_plan,
    load_trials,
    make_trials,
    save_plan,
    save_trials,
    select_enrollment,
)

# flags that never change outputs, kept out of manifests
RUNTIME_ONLY = {"threads", "force", "func"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(args, inputs, outputs):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in RUNTIME_ONLY}
    for out in outputs:
        manifest = {
            "tool": "osibench",
            "version": __version__,
            "config": config,
            "inputs": {str(p): sha256(p) for p in inputs},
            "outputs": {str(p): sha256(p) for p in outputs},
        }
        Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def stale_inputs(manifest_path):
    """Inputs whose current digest differs from the one recorded in a manifest."""
    manifest = json.loads(Path(manifest_path).read_text())
    return [p for p, digest in manifest["inputs"].items() if not Path(p).exists() or sha256(p) != digest]


def _outputs_free(args, *paths):
    for p in paths:
        if p and Path(p).exists() and not args.force:
            raise UsageError(f"output {p} exists; outputs are write-once (use --force to replace)")


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


# -- subcommands ---------------------------------------------------------------------


def cmd_ingest(args):
    _outputs_free(args, args.out)
    store = ingest(args.input, args.format)
    serialize(store, args.out, args.out_format)
    print(f"{len(store)} records, {len(store.speakers)} speakers, dim {store.dimension}", file=sys.stderr)
    return [args.input], [args.out]


def _synth_config(args, prefix="spk"):
    return synth.SynthConfig(
        n_speakers=args.speakers,
        recordings_per_speaker=args.recs,
        dim=args.dim,
        within_spread=args.spread,
        spread_variation=args.spread_variation,
        quality_correlation=args.quality_corr,
        seed=args.seed,
        system=args.system,
        prefix=args.prefix or prefix,
    )


def cmd_simulate(args):
    _outputs_free(args, args.out)
    store = synth.generate(_synth_config(args))
    serialize(store, args.out, "binary")
    return [], [args.out]


def cmd_build_watchlists(args):
    _outputs_free(args, args.out)
    store = ingest(args.store)
    if args.mode == "loso":
        plan = build_loso(store.speakers, args.seed)
    else:
        if args.size is None:
            raise UsageError("--size is required for kfold watchlists")
        plan = build_kfold(store.speakers, args.size, args.seed)
    plan = select_enrollment(plan, store, args.seed)
    save_plan(plan, args.out)
    return [args.store], [args.out]


def cmd_make_trials(args):
    _outputs_free(args, args.out)
    store = ingest(args.store)
    plan = load_plan(args.plan, store.speakers)
    trials = make_trials(plan, store, args.max_per_label, args.seed)
    save_trials(trials, args.out)
    c = trials.counts()
    print(f"in-set trials: {c['inset']}, OOS trials: {c['oos']}", file=sys.stderr)
    return [args.store, args.plan], [args.out]


def cmd_score(args):
    _outputs_free(args, args.out)
    store = ingest(args.store)
    plan = load_plan(args.plan, store.speakers)
    table = score_run(plan, load_trials(args.trials), store, args.threads)
    save_scores(table, args.out)
    return [args.store, args.plan, args.trials], [args.out]


def cmd_asnorm(args):
    _outputs_free(args, args.out)
    store = ingest(args.store)
    plan = load_plan(args.plan, store.speakers)
    cohort = CohortSet(ingest(args.cohort), args.topk)
    table = normalize_run(load_scores(args.scores), plan, store, cohort, args.threads)
    save_scores(table, args.out)
    return [args.scores, args.store, args.plan, args.cohort], [args.out]


def cmd_calibrate_train(args):
    _outputs_free(args, args.out)
    store = ingest(args.store)
    plan = load_plan(args.plan, store.speakers)
    cohort = CohortSet(ingest(args.cohort), 1)
    if args.measures:
        measures = tuple(m for m in args.measures.split(",") if m)
    else:
        measures = calibration.available_measures(store, args.with_duration)
    weights = calibration.train_from_run(load_scores(args.scores), plan, store, cohort, measures, args.l2, args.seed)
    weights.save(args.out)
    print(f"converged in {weights.iterations} iterations", file=sys.stderr)
    return [args.scores, args.store, args.plan, args.cohort], [args.out]


def cmd_calibrate_apply(args):
    _outputs_free(args, args.out)
    store = ingest(args.store)
    plan = load_plan(args.plan, store.speakers)
    cohort = CohortSet(ingest(args.cohort), 1)
    weights = calibration.CalibratorWeights.load(args.weights)
    table = calibration.calibrate_run(load_scores(args.scores), plan, store, cohort, weights)
    save_scores(table, args.out)
    return [args.weights, args.scores, args.store, args.plan, args.cohort], [args.out]


def cmd_fuse(args):
    _outputs_free(args, args.out)
    if args.stores:
        if not (args.plan and args.trials):
            raise UsageError("--stores needs --plan and --trials")
        stores = [ingest(p) for p in args.stores]
        plan = load_plan(args.plan, stores[0].speakers)
        table = fuse_run(plan, load_trials(args.trials), stores, args.threads)
        inputs = [*args.stores, args.plan, args.trials]
    elif args.scores:
        table = fuse([load_scores(p) for p in args.scores])
        inputs = list(args.scores)
    else:
        raise UsageError("give --scores files or --stores with --plan and --trials")
    save_scores(table, args.out)
    return inputs, [args.out]


def cmd_eval(args):
    outs = [p for p in (args.report, args.det) if p]
    if not outs:
        raise UsageError("eval needs --report and/or --det")
    _outputs_free(args, *outs)
    p = metrics.partition(load_scores(args.scores), args.use_transformed)
    report = metrics.evaluate(p, args.far, args.frr, args.det_max_points)
    if args.report:
        Path(args.report).write_text(report.to_json())
    if args.det:
        metrics.write_det_csv(report.det_points, args.det)
    print(f"EER {report.eer:.6f}", file=sys.stderr)
    return [args.scores], outs


def cmd_sweep(args):
    _outputs_free(args, args.out)
    if args.store:
        source, inputs = ingest(args.store), [args.store]
    elif args.speakers:
        source, inputs = _synth_config(args), []
    else:
        raise UsageError("sweep needs --store or simulation flags (--speakers ...)")
    rows = synth.sweep(source, _ints(args.sizes), args.seed, args.max_per_label, args.far, args.frr, args.threads)
    synth.write_sweep_csv(rows, args.out, args.far, args.frr)
    return inputs, [args.out]


def cmd_histogram(args):
    _outputs_free(args, args.out)
    table = load_scores(args.scores)
    scores = table.transformed if args.use_transformed else table.raw_score
    if args.label == "inset":
        scores = scores[table.is_inset]
    elif args.label == "oos":
        scores = scores[~table.is_inset]
    h = metrics.histogram(scores, args.bins, (args.lo, args.hi))
    metrics.write_histogram_csv(h, args.out)
    return [args.scores], [args.out]


# -- parser ----------------------------------------------------------------------------


def _add_synth_flags(p, required):
    p.add_argument("--speakers", type=int, required=required)
    p.add_argument("--recs", type=int, default=4)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--spread", type=float, default=0.135)
    p.add_argument("--spread-variation", type=float, default=0.0)
    p.add_argument("--quality-corr", type=float, default=0.5)
    p.add_argument("--system", type=int, default=0)
    p.add_argument("--prefix", default=None)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--force", action="store_true", help="replace existing outputs")

    parser = _Parser(prog="osibench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"osibench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "validate a store and convert it")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["binary", "jsonl"])
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", choices=["binary", "jsonl"], default="binary")

    p = add("simulate", cmd_simulate, "generate a synthetic population")
    _add_synth_flags(p, required=True)
    p.add_argument("--out", required=True)

    p = add("build-watchlists", cmd_build_watchlists, "build splits and pick enrollments")
    p.add_argument("--store", required=True)
    p.add_argument("--mode", choices=["kfold", "loso"], default="kfold")
    p.add_argument("--size", type=int)
    p.add_argument("--out", required=True)

    p = add("make-trials", cmd_make_trials, "enumerate trials for a plan")
    p.add_argument("--store", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--max-per-label", type=int)
    p.add_argument("--out", required=True)

    p = add("score", cmd_score, "max-score every trial")
    p.add_argument("--store", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True)

    p = add("asnorm", cmd_asnorm, "adaptive score normalization")
    p.add_argument("--scores", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--topk", type=int, default=DEFAULT_TOPK)
    p.add_argument("--out", required=True)

    p = add("calibrate-train", cmd_calibrate_train, "fit a quality-measure calibrator")
    p.add_argument("--scores", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--l2", type=float, default=calibration.DEFAULT_L2)
    p.add_argument("--measures", help="comma-separated measure names")
    p.add_argument("--with-duration", action="store_true")
    p.add_argument("--out", required=True)

    p = add("calibrate-apply", cmd_calibrate_apply, "apply a calibrator to a score file")
    p.add_argument("--weights", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", required=True)

    p = add("fuse", cmd_fuse, "unweighted score fusion")
    p.add_argument("--scores", nargs="+")
    p.add_argument("--stores", nargs="+")
    p.add_argument("--plan")
    p.add_argument("--trials")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "EER, operating points, DET curve")
    p.add_argument("--scores", required=True)
    p.add_argument("--use-transformed", action="store_true")
    p.add_argument("--far", type=_floats, default=[metrics.DEFAULT_FAR])
    p.add_argument("--frr", type=_floats, default=[metrics.DEFAULT_FRR])
    p.add_argument("--det")
    p.add_argument("--det-max-points", type=int)
    p.add_argument("--report")

    p = add("sweep", cmd_sweep, "metrics across watchlist sizes")
    p.add_argument("--store")
    _add_synth_flags(p, required=False)
    p.add_argument("--sizes", required=True)
    p.add_argument("--max-per-label", type=int)
    p.add_argument("--far", type=float, default=metrics.DEFAULT_FAR)
    p.add_argument("--frr", type=float, default=metrics.DEFAULT_FRR)
    p.add_argument("--out", required=True)

    p = add("histogram", cmd_histogram, "score histogram")
    p.add_argument("--scores", required=True)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--lo", type=float, default=-1.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--label", choices=["inset", "oos", "all"], default="all")
    p.add_argument("--use-transformed", action="store_true")
    p.add_argument("--out", required=True)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if args.threads < 1:
        print("osibench: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        inputs, outputs = args.func(args)
        write_manifest(args, inputs, outputs)
    except (UsageError, IngestError, ValueError, KeyError, OSError, calibration.ConvergenceError) as exc:
        print(f"osibench {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"osibench {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
