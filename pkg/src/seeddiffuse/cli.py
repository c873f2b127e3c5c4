"""Command-line interface.

Exit codes: 0 success, 2 I/O or format error, 3 a class produced no seeds,
4 the solver did not converge (the label map is still written).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import PipelineConfig, dump_config, load_config
from .errors import NoSeedsForClass, SeedDiffuseError
from .evaluation import VOC_IGNORE_INDEX, ConfusionMatrix, accumulate, format_report
from .imagecore import (
    atomic_write_bytes,
    load_class_table,
    load_fmap,
    load_image,
    load_label_png,
    save_label_png,
)
from .pipeline import run_pipeline
from .synth import VARIANTS, make_fixture, write_fixture

EXIT_OK = 0
EXIT_IO = 2
EXIT_NO_SEEDS = 3
EXIT_NONCONVERGENCE = 4

log = logging.getLogger("seeddiffuse")


def parse_act(text):
    cid, sep, path = text.partition(":")
    if not sep or not path:
        raise argparse.ArgumentTypeError(f"expected <classid>:<path>, got {text!r}")
    try:
        return int(cid), path
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad class id in {text!r}") from None


def diffuse_one(image_path, mask_path, acts, classes_path, out_path, config, workers=1):
    """Run the pipeline for one image and return an exit code."""
    try:
        table = load_class_table(classes_path)
        image = load_image(image_path)
        m = load_fmap(mask_path)
        activations = []
        for cid, path in acts:
            if not 1 <= cid < len(table):
                log.error("activation class %d is not a foreground class in %s", cid, classes_path)
                return EXIT_IO
            activations.append((cid, load_fmap(path)))
        if not activations:
            log.error("at least one --act is required")
            return EXIT_IO
        result = run_pipeline(image, m, activations, table, config, workers=workers)
    except NoSeedsForClass as exc:
        log.error("%s", exc)
        return EXIT_NO_SEEDS
    except (OSError, SeedDiffuseError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_IO

    try:
        save_label_png(result.label_map, out_path)
    except OSError as exc:
        log.error("cannot write %s: %s", out_path, exc)
        return EXIT_IO
    if not result.converged:
        log.warning("diffusion did not converge for %s; label map written anyway", image_path)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def _load_cfg(path):
    return load_config(path) if path else PipelineConfig()


def cmd_diffuse(args):
    try:
        cfg = _load_cfg(args.config)
    except (OSError, SeedDiffuseError) as exc:
        log.error("config: %s", exc)
        return EXIT_IO
    if args.dump_config:
        try:
            atomic_write_bytes(args.dump_config, dump_config(cfg).encode("utf-8"))
        except OSError as exc:
            log.error("cannot write %s: %s", args.dump_config, exc)
            return EXIT_IO
    return diffuse_one(
        args.image, args.mask, args.act, args.classes, args.out, cfg, workers=args.workers
    )


def _parse_manifest(path):
    jobs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 4:
                raise ValueError(f"{path}:{lineno}: expected image, mask, out and >= 1 activation")
            acts = [parse_act(p) for p in parts[3:]]
            jobs.append((parts[0], parts[1], acts, parts[2]))
    return jobs


def _batch_job(job):
    image, mask, acts, out, classes, cfg = job
    return diffuse_one(image, mask, acts, classes, out, cfg)


def cmd_batch(args):
    try:
        cfg = _load_cfg(args.config)
        jobs = _parse_manifest(args.manifest)
    except (OSError, SeedDiffuseError, ValueError, argparse.ArgumentTypeError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    payload = [(i, m, a, o, args.classes, cfg) for i, m, a, o in jobs]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            codes = list(pool.map(_batch_job, payload))
    else:
        codes = [_batch_job(p) for p in payload]
    for (image, *_), code in zip(jobs, codes):
        if code:
            log.warning("%s: exit %d", image, code)
    return max(codes, default=EXIT_OK)


def cmd_eval(args):
    try:
        table = load_class_table(args.classes)
        gt_names = sorted(f for f in os.listdir(args.gt) if f.lower().endswith(".png"))
        pred_names = set(f for f in os.listdir(args.pred) if f.lower().endswith(".png"))
    except (OSError, SeedDiffuseError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    missing = [f for f in gt_names if f not in pred_names]
    if missing:
        log.error("no matching prediction for: %s", ", ".join(missing))
        return EXIT_IO
    if not gt_names:
        log.error("no ground-truth/prediction pairs found")
        return EXIT_IO
    ignore = None if args.ignore_index < 0 else args.ignore_index
    cm = ConfusionMatrix.empty(len(table))
    try:
        for name in gt_names:
            gt = load_label_png(os.path.join(args.gt, name), table, ignore_index=ignore)
            pred = load_label_png(os.path.join(args.pred, name), table)
            cm = accumulate(cm, gt, pred, ignore_index=ignore)
        report = format_report(cm)
    except (OSError, SeedDiffuseError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    sys.stdout.write(report)
    return EXIT_OK


def cmd_synth(args):
    try:
        fixture = make_fixture(args.variant, args.seed, size=args.size, noise=args.noise)
        write_fixture(fixture, args.out)
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    return EXIT_OK


def cmd_inspect(args):
    try:
        fmap = load_fmap(args.path)
    except (OSError, SeedDiffuseError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    d = fmap.data.astype(np.float64)
    print(f"{fmap.width} {fmap.height} {d.min():.6f} {d.max():.6f} {d.mean():.6f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="seeddiffuse",
        description="Seeded superpixel diffusion from activation maps to label maps.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diffuse", help="label one image")
    p.add_argument("--image", required=True, help="RGB PNG")
    p.add_argument("--mask", required=True, help="class-agnostic segmentation FMAP")
    p.add_argument(
        "--act", action="append", type=parse_act, default=[], metavar="CLASSID:PATH",
        help="activation FMAP for a class (repeatable)",
    )
    p.add_argument("--classes", required=True, help="class table file")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="output indexed PNG")
    p.add_argument("--dump-config", help="write the effective config here")
    p.add_argument("--workers", type=int, default=1, help="threads for per-class solves")
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("batch", help="label every image listed in a manifest")
    p.add_argument("--manifest", required=True,
                   help="lines of image<TAB>mask<TAB>out<TAB>cid:path[<TAB>cid:path...]")
    p.add_argument("--classes", required=True)
    p.add_argument("--config")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("eval", help="mIoU of prediction PNGs against ground truth")
    p.add_argument("--gt", required=True, help="directory of ground-truth PNGs")
    p.add_argument("--pred", required=True, help="directory of predicted PNGs")
    p.add_argument("--classes", required=True)
    p.add_argument("--ignore-index", type=int, default=VOC_IGNORE_INDEX,
                   help="void label in ground truth; negative disables")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=VARIANTS, default="two-blob")
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--noise", type=float, default=0.3, help="boundary noise rate of M")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="print size and value range of an FMAP")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_IO if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
