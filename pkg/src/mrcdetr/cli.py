"""Command-line front end: ``mrcdetr <command> [options]``.

Exit codes: 0 success, 1 validation failure (bad data, config, checkpoint or
a failed check), 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import MrcError

log = logging.getLogger("mrcdetr")

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2
ABLATION_FIELDS = ("kind", "precision", "recall", "mAP", "flops", "params")


def _config(path, seed=None, epochs=None):
    from .config import desk, load_config

    cfg = load_config(path) if path else desk()
    if seed is not None:
        cfg.train.seed = seed
    if epochs is not None:
        cfg.train.epochs = epochs
    return cfg


def cmd_gen_data(args) -> int:
    from .data import GenConfig, generate_dataset

    cfg = GenConfig(count=args.count, image_size=args.size, seed=args.seed, train_frac=args.train_frac)
    t0 = time.perf_counter()
    manifest = generate_dataset(cfg, args.out)
    n_ann = sum(len(r.annotations) for r in manifest.records)
    print(f"wrote {len(manifest)} images with {n_ann} defects to {args.out} in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import load_manifest
    from .train import train_loop

    manifest = load_manifest(args.data)
    cfg = _config(args.config, args.seed, args.epochs)
    log_path = args.log or str(Path(args.out).with_suffix(".csv"))

    def report(row):
        print(f"epoch {row['epoch']:3d}  loss {row['loss_total']:.4f}  P {row['precision']:.3f}  "
              f"R {row['recall']:.3f}  mAP50 {row['map50']:.3f}", flush=True)

    _, history = train_loop(manifest, cfg, args.out, log_path, resume=args.resume, on_epoch=report)
    print(f"checkpoint {args.out}; metric log {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_manifest
    from .train import evaluate, load_model, load_split

    manifest = load_manifest(args.data)
    model, cfg, _ = load_model(args.ckpt)
    data = load_split(manifest, None if args.split == "all" else args.split, np.dtype(cfg.train.dtype))
    t0 = time.perf_counter()
    report = evaluate(model, data, cfg, list(manifest.classes))
    elapsed = time.perf_counter() - t0
    out = Path(args.report)
    out.write_text(report.to_csv() if out.suffix == ".csv" else report.to_json() + "\n")
    fps = len(data) / elapsed if elapsed > 0 and len(data) else 0.0
    print(f"{len(data)} images: P {report.precision:.4f}  R {report.recall:.4f}  mAP50 {report.map50:.4f}"
          f"  ({fps:.1f} img/s, informational)")
    print(f"report {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import SUITES, run_suite

    suites = SUITES if args.module == "all" else (args.module,)
    ok = True
    for suite in suites:
        for name, rep in run_suite(suite, seed=args.seed, n_probe=args.probes):
            status = "PASS" if rep.passed else "FAIL"
            print(f"{status} {suite}/{name}: {len(rep.probes)} probes, max rel err {rep.max_rel_error:.2e}"
                  + (f", {rep.skipped_kinks} kink probes replaced" if rep.skipped_kinks else ""))
            for p in rep.failures()[:5]:
                print(f"    {p.name}{list(p.index)}: analytic {p.analytic:.6g} numeric {p.numeric:.6g}")
            ok &= rep.passed
    return EXIT_OK if ok else EXIT_INVALID


def cmd_flops(args) -> int:
    from .cost import LayerStack, count_flops, count_params, trace_flops
    from .detect import build_model, flops_input_shape

    cfg = _config(args.config)
    print("FLOPs = 2 x MACs")
    if cfg.layers is not None:
        stack = LayerStack(cfg.layers)
        rows = stack.table()
        print(f"{'layer':<24}{'params':>14}{'flops':>18}")
        for label, p, f in rows:
            print(f"{label:<24}{p:>14d}{f:>18d}")
        print(f"{'total':<24}{sum(r[1] for r in rows):>14d}{sum(r[2] for r in rows):>18d}")
        return EXIT_OK
    model = build_model(cfg)
    shape = flops_input_shape(cfg, args.batch)
    counter = trace_flops(model, shape)
    print(f"input {list(shape)}")
    print(f"{'module':<24}{'params':>14}{'flops':>18}")
    flops_by = counter.by_scope(2)
    for name, child in (("backbone", model.backbone), ("aspn", model.aspn), ("head", model.head)):
        scope_name = "Detector." + type(child).__name__
        print(f"{name:<24}{count_params(child):>14d}{flops_by.get(scope_name, 0):>18d}")
    print(f"{'total':<24}{count_params(model):>14d}{counter.total:>18d}")
    assert counter.total == count_flops(model, shape)
    return EXIT_OK


def ablation_rows(manifest, cfg, kinds, on_kind=None) -> list[dict]:
    """Train and evaluate one detector per attention kind with identical seeds and data."""
    import copy

    from .cost import count_flops, count_params
    from .detect import build_model, flops_input_shape
    from .train import evaluate, load_split, train_loop

    val = load_split(manifest, "val", np.dtype(cfg.train.dtype))
    rows = []
    for kind in kinds:
        kcfg = copy.deepcopy(cfg)
        kcfg.aspn.attention = kind
        model, _ = train_loop(manifest, kcfg)
        report = evaluate(model, val, kcfg, list(manifest.classes))
        fresh = build_model(kcfg)
        row = {"kind": kind, "precision": report.precision, "recall": report.recall, "mAP": report.map50,
               "flops": count_flops(fresh, flops_input_shape(kcfg)), "params": count_params(fresh)}
        rows.append(row)
        if on_kind:
            on_kind(row)
    return rows


def cmd_ablate(args) -> int:
    from .aspn import ATTENTION_KINDS
    from .data import load_manifest
    from .errors import ConfigError

    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    bad = [k for k in kinds if k not in ATTENTION_KINDS]
    if bad or not kinds:
        raise ConfigError(f"unknown attention kinds {bad}; registered kinds: {', '.join(ATTENTION_KINDS)}")
    manifest = load_manifest(args.data)
    cfg = _config(args.config, args.seed, args.epochs)
    out = Path(args.out) if args.out else None
    rows = ablation_rows(manifest, cfg, kinds,
                         on_kind=lambda r: print(f"{r['kind']}: mAP50 {r['mAP']:.3f} params {r['params']}", flush=True))
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if out:
            fh.close()
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors print the full help text before the message."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"\n{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrcdetr", description="Toy PCB defect detector with directional attention blocks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("gen-data", help="render a synthetic dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--count", type=int, default=800)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--train-frac", type=float, default=0.8)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a detector on a dataset")
    t.add_argument("--data", required=True, help="dataset directory or manifest file")
    t.add_argument("--config", help="experiment config JSON (defaults to the desk preset)")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="metric log CSV (default: checkpoint path with .csv suffix)")
    t.add_argument("--epochs", type=int, help="override train.epochs")
    t.add_argument("--seed", type=int, help="override train.seed")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint if it exists")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True, help="report path (.json or .csv)")
    e.add_argument("--split", choices=("val", "train", "all"), default="val")
    e.add_argument("--seed", type=int, help="accepted for symmetry; evaluation draws no random numbers")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    c.add_argument("--module", choices=("mrdcb", "aspn", "head", "all"), default="all")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--probes", type=int, default=16, help="probed coordinates per tensor")
    c.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("flops", help="print parameter and FLOP counts")
    f.add_argument("--config", help="experiment config JSON; a 'layers' section costs that stack instead")
    f.add_argument("--batch", type=int, default=1)
    f.set_defaults(func=cmd_flops)

    a = sub.add_parser("ablate-attention", help="compare attention kinds inside the pyramid")
    a.add_argument("--data", required=True)
    a.add_argument("--kinds", default="lssm,se,sge,caa")
    a.add_argument("--config")
    a.add_argument("--epochs", type=int, help="override train.epochs")
    a.add_argument("--seed", type=int)
    a.add_argument("--out", help="CSV path (default: stdout)")
    a.set_defaults(func=cmd_ablate)
    p.commands = sub.choices
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:
            # report against the subcommand so its own help text is shown
            parser.commands[args.command].error(f"unrecognized arguments: {' '.join(extra)}")
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MrcError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
