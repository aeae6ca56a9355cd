"""Command-line entry point: ``eadkit <command> [options]``.

Exit status is 0 on success, 1 on a data error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, autocorrect, dataset_io, lcs, ocr
from .errors import EadError
from .model import QUANTITIES, Quantity, validate_datapoint
from .scnn import network, training

log = logging.getLogger("eadkit")


def _quantity(text):
    try:
        return Quantity.parse(text)
    except EadError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _group_from_dir(directory, q: Quantity) -> lcs.DatasetGroup:
    points = dataset_io.read_directory(directory)
    if not points:
        raise EadError(f"{directory}: no data points found")
    return lcs.DatasetGroup(tuple(dp.channels[q] for dp in points), Path(directory).name, q,
                            tuple(dp.source_id for dp in points))


def _meta(args, **extra):
    policy = "min population std" + (" of z-normalized series" if args.normalize else "")
    return {"quantity": args.quantity.value, "epsilon": policy, **extra}


def cmd_sim_self(args):
    g = _group_from_dir(args.input, args.quantity)
    m = lcs.self_similarity_matrix(g, args.normalize, lcs.default_workers())
    lcs.write_matrix_csv(m, args.out, _meta(args, group=g.label))
    print(f"usm({g.label}) = {m.mean():.6f}")


def cmd_sim_cross(args):
    a = _group_from_dir(args.input_a, args.quantity)
    b = _group_from_dir(args.input_b, args.quantity)
    m = lcs.cross_similarity_matrix(a, b, args.normalize, lcs.default_workers())
    lcs.write_matrix_csv(m, args.out, _meta(args, group_a=a.label, group_b=b.label))
    print(f"usm({a.label}, {b.label}) = {m.mean():.6f}")


def cmd_sim_vector(args):
    points = dataset_io.read_directory(args.input)
    subset = dataset_io.LabelSubset.parse(args.group_by)
    d = dataset_io.group_by_labels(points, subset, args.quantity)
    values = lcs.dataset_similarity_vector(d, args.normalize, lcs.default_workers())
    lcs.write_vector_csv(d, values, args.out, _meta(args, group_by=",".join(subset.fields)))
    for (i, j), v in zip(lcs.group_pairs(d), values):
        print(f"{d.groups[i].label}\t{d.groups[j].label}\t{v:.6f}")


def cmd_correct(args):
    t = None
    if args.eps1 is not None or args.eps2 is not None:
        if args.eps1 is None:
            raise EadError("--eps2 given without --eps1")
        t = autocorrect.Tolerances(args.eps1, args.eps2 if args.eps2 is not None else 0.02)
    scale = [float(v) for v in args.scale.split(",")] if args.scale else None
    if scale is not None and len(scale) != 5:
        raise EadError("--scale needs five comma-separated values")
    reports = autocorrect.correct_csv(args.input, args.out, t, scale)
    changed = sum(r.case is not autocorrect.ConstraintCase.BOTH_SATISFIED for r in reports)
    print(f"{len(reports)} vectors, {changed} corrected")


def cmd_corpus_gen(args):
    train, test = ocr.build_corpus(args.n_per_class, args.seed, args.noise, args.jitter)
    out = Path(args.out)
    ocr.save_corpus(train, out / "train")
    ocr.save_corpus(test, out / "test")
    print(f"{len(train)} train / {len(test)} test images written to {out}")


def _config(args):
    return network.ScnnConfig(seed=args.seed, learning_rate=args.lr,
                              subsample_path=not args.no_subsample)


def cmd_scnn_train(args):
    cfg = _config(args)
    if args.corpus:
        train = ocr.load_corpus(Path(args.corpus) / "train")
        test = ocr.load_corpus(Path(args.corpus) / "test")
    else:
        train, test = ocr.build_corpus(args.n_per_class, args.seed)
    rows = []

    def on_epoch(m):
        rows.append(m)
        print(f"epoch {m.epoch}: loss {m.loss:.4f} train {m.train_accuracy:.4f} test {m.test_accuracy:.4f}",
              flush=True)

    result = training.train(train.images, train.labels, cfg, args.epochs, (test.images, test.labels),
                            on_epoch=on_epoch)
    network.save_params(args.out, result.params, cfg)
    if args.metrics:
        with open(args.metrics, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "train_accuracy", "test_accuracy"])
            for m in rows:
                w.writerow([m.epoch, repr(m.loss), repr(m.train_accuracy), repr(m.test_accuracy)])


def cmd_scnn_eval(args):
    params, cfg = network.load_params(args.params)
    corpus = ocr.load_corpus(args.corpus)
    ev = training.evaluate(params, cfg, corpus.images, corpus.labels)
    print(f"accuracy {ev.accuracy:.4f} ({len(corpus)} images), decimal-point confusions {ev.decimal_confusions()}")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred"] + [str(network.DigitLabel(k)).strip() or "blank" for k in range(1, 22)])
            for k, row in enumerate(ev.confusion, start=1):
                w.writerow([str(network.DigitLabel(k)).strip() or "blank"] + [int(v) for v in row])


def cmd_scnn_gradcheck(args):
    cfg = network.ScnnConfig(seed=args.seed)
    rep = training.gradient_check(cfg, seed=args.seed, n_samples=args.samples)
    ok = rep.max_relative_error < 1e-4 and rep.additivity_error <= 1e-12 and rep.outside_sconv_max == 0.0
    doc = {
        "max_relative_error": rep.max_relative_error,
        "per_param": rep.per_param,
        "samples": rep.samples,
        "a2_relative_error": rep.input_error,
        "path_additivity_error": rep.additivity_error,
        "sconv_outside_region_max": rep.outside_sconv_max,
        "pass": ok,
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0 if ok else 1


def cmd_ingest(args):
    points, report = dataset_io.ead_import(args.input)
    out = Path(args.out)
    dataset_io.write_directory(points, out)
    (out / "import_report.json").write_text(report.to_json(), encoding="utf-8")
    print(f"{len(points)} data points imported, {len(report.skipped)} files skipped")


def cmd_stats(args):
    points = dataset_io.read_directory(args.input)
    header = ["source_id", "labels", "samples", "seconds", "events"] + [f"mean_{q.value}" for q in QUANTITIES]
    rows = []
    for dp in points:
        n = len(dp)
        rows.append([dp.source_id, str(dp.labels), n, n / 5.0, len(dp.events)]
                    + [repr(float(np.mean(dp.channels[q].samples))) for q in QUANTITIES])
        for problem in validate_datapoint(dp):
            print(f"{dp.source_id}: {problem}", file=sys.stderr)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if args.out:
            out.close()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("-v", "--verbose", action="store_true")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--quantity", "-q", type=_quantity, required=True,
                     help="u, i, s, p, cos_phi or f")
    sim.add_argument("--normalize", action="store_true", help="z-normalize series before comparing")
    sim.add_argument("--out", required=True)

    p = argparse.ArgumentParser(prog="eadkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"eadkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("sim-self", parents=[common, sim], help="self-similarity matrix of one group")
    c.add_argument("--in", dest="input", required=True)
    c.set_defaults(func=cmd_sim_self)

    c = sub.add_parser("sim-cross", parents=[common, sim], help="cross-similarity matrix of two groups")
    c.add_argument("--in-a", dest="input_a", required=True)
    c.add_argument("--in-b", dest="input_b", required=True)
    c.set_defaults(func=cmd_sim_cross)

    c = sub.add_parser("sim-vector", parents=[common, sim], help="pairwise group similarities")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--group-by", required=True, help="comma list of appliance,brand,application,event")
    c.set_defaults(func=cmd_sim_vector)

    c = sub.add_parser("correct", parents=[common], help="auto-correct energy vectors")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--eps1", type=float, help="apparent-power tolerance in VA (default max(0.5, 1%% of s))")
    c.add_argument("--eps2", type=float, help="power-factor tolerance (default 0.02)")
    c.add_argument("--scale", help="per-component distance scale u,i,s,p,cos_phi")
    c.set_defaults(func=cmd_correct)

    c = sub.add_parser("corpus-gen", parents=[common], help="render a synthetic digit corpus")
    c.add_argument("--n-per-class", type=int, default=100)
    c.add_argument("--noise", type=float, default=0.05)
    c.add_argument("--jitter", type=int, default=2)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corpus_gen)

    c = sub.add_parser("scnn-train", parents=[common], help="train the subsample CNN")
    c.add_argument("--corpus", help="directory with train/ and test/ (default: generate in memory)")
    c.add_argument("--n-per-class", type=int, default=100)
    c.add_argument("--epochs", type=int, default=20)
    c.add_argument("--lr", type=float, default=0.01)
    c.add_argument("--no-subsample", action="store_true", help="train the ablated plain CNN")
    c.add_argument("--out", required=True, help="checkpoint path (.npz)")
    c.add_argument("--metrics", help="per-epoch metrics CSV")
    c.set_defaults(func=cmd_scnn_train)

    c = sub.add_parser("scnn-eval", parents=[common], help="evaluate a checkpoint on a corpus directory")
    c.add_argument("--params", required=True)
    c.add_argument("--corpus", required=True, help="directory with manifest.csv")
    c.add_argument("--out", help="confusion matrix CSV")
    c.set_defaults(func=cmd_scnn_eval)

    c = sub.add_parser("scnn-gradcheck", parents=[common], help="finite-difference gradient check")
    c.add_argument("--samples", type=int, default=100)
    c.add_argument("--out", help="JSON report path")
    c.set_defaults(func=cmd_scnn_gradcheck)

    c = sub.add_parser("ingest", parents=[common], help="import an EAD download into canonical files")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_ingest)

    c = sub.add_parser("stats", parents=[common], help="summarize a directory of data points")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_stats)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except (EadError, OSError) as exc:
        print(f"eadkit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return int(rc or 0)


def main():
    sys.exit(run())
