"""Command-line interface.

Subcommands: build, summary, gradcheck, inflate, train, extract, bench,
selftest.  Exit codes: 0 success, 1 usage error, 2 data or file format
error, 3 numerical verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import gradcheck as gc
from . import rng
from .benchmark import bench
from .errors import DataError, NumericalError, ShapeError, SpecError
from .features import extract_features, write_features
from .network import (ArchSpec, build_network, calibrate_running_stats,
                      count_parameters, inflate_from_2d, model_size_bytes,
                      summarize)
from .training import TrainConfig, train
from .video import load_clip_source, read_clip_file, read_ppm

GRADCHECK_TOL = 1e-5


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _geometry(text: str):
    try:
        t, h, w = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"geometry must be T,H,W integers, got {text!r}")
    return (t, h, w)


def build_parser() -> _Parser:
    parser = _Parser(prog="p3d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("build", help="build a network and write a checkpoint")
    p.add_argument("--depth", type=int, choices=(50, 152), default=50)
    p.add_argument("--blocks", choices=("2d", "a", "b", "c", "mixed"),
                   default="mixed")
    p.add_argument("--classes", type=int, default=101)
    p.add_argument("--out", required=True)
    p.add_argument("--stem-width", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--geometry", type=_geometry, default=(16, 160, 160))
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("summary", help="layer table and parameter counts")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", type=_geometry, default=None)

    p = sub.add_parser("gradcheck", help="finite-difference verification")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--op", default=None)
    g.add_argument("--all", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=gc.DEFAULT_STEP)

    p = sub.add_parser("inflate", help="copy 2D weights into a checkpoint")
    p.add_argument("--from2d", required=True)
    p.add_argument("--into", required=True)
    p.add_argument("--temporal", choices=("identity", "zeros", "random"),
                   default="identity")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="SGD training on a labelled clip tree")
    p.add_argument("--data", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-step", type=int, default=3000)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ckpt", required=True, help="output checkpoint path")
    p.add_argument("--init", default=None,
                   help="starting checkpoint; otherwise a fresh network "
                        "is built from the flags below")
    p.add_argument("--depth", type=int, choices=(50, 152), default=50)
    p.add_argument("--blocks", choices=("2d", "a", "b", "c", "mixed"),
                   default="mixed")
    p.add_argument("--stem-width", type=int, default=8)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--wd", type=float, default=1e-4)
    p.add_argument("--freeze-bn", action="store_true")
    p.add_argument("--log-every", type=int, default=1)

    p = sub.add_parser("extract", help="pooled video features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--clips", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="forward throughput")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", type=_geometry, default=None)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)

    sub.add_parser("selftest", help="oracle and inflation equivalence suites")
    return parser


# ---------------------------------------------------------------------------
# commands

def _cmd_build(args) -> int:
    arch = ArchSpec(base_depth=args.depth, block_policy=args.blocks,
                    num_classes=args.classes, input_geometry=args.geometry,
                    dropout_rate=args.dropout, stem_width=args.stem_width)
    net = build_network(arch, seed=args.seed)
    ckpt.save_checkpoint(net, args.out)
    _, (tw, tbn) = count_parameters(net)
    print(f"wrote {args.out}: depth {args.depth} blocks {args.blocks} "
          f"classes {args.classes} params {tw + tbn} "
          f"({model_size_bytes(net) / 2**20:.2f} MiB)")
    return 0


def _cmd_summary(args) -> int:
    net = ckpt.network_from_checkpoint(args.ckpt)
    sys.stdout.write(summarize(net, args.input))
    return 0


def _cmd_gradcheck(args) -> int:
    checks = gc.op_checks()
    if args.op is not None:
        if args.op not in checks:
            raise DataError(f"unknown op {args.op!r}; known: "
                            f"{', '.join(sorted(checks))}")
        names = [args.op]
    else:
        names = sorted(checks)
    failed = []
    for name in names:
        err = checks[name](args.seed, args.step)
        status = "OK" if err < GRADCHECK_TOL else "FAIL"
        print(f"{name:24s} rel err {err:.3e}  {status}")
        if err >= GRADCHECK_TOL:
            failed.append(name)
    if failed:
        print(f"gradcheck failed: {', '.join(failed)}", file=sys.stderr)
        return 3
    return 0


def _cmd_inflate(args) -> int:
    source = ckpt.load_checkpoint(args.from2d)
    net = ckpt.network_from_checkpoint(args.into)
    inflate_from_2d(net, source, temporal_init=args.temporal, seed=args.seed)
    ckpt.save_checkpoint(net, args.into)
    print(f"inflated {args.into} from {args.from2d} "
          f"(temporal={args.temporal})")
    return 0


def load_labeled_dataset(root):
    """Clips and labels from a directory tree: one subdirectory per class,
    each containing .clp clip files and/or PPM-frame clip directories."""
    if not os.path.isdir(root):
        raise DataError(f"{root}: not a directory")
    classes = sorted(d for d in os.listdir(root)
                     if os.path.isdir(os.path.join(root, d)))
    if not classes:
        raise DataError(f"{root}: no class subdirectories")
    clips, labels = [], []
    for label, cname in enumerate(classes):
        cdir = os.path.join(root, cname)
        entries = sorted(os.listdir(cdir))
        for entry in entries:
            path = os.path.join(cdir, entry)
            if os.path.isdir(path):
                names = sorted(n for n in os.listdir(path)
                               if n.lower().endswith(".ppm"))
                if not names:
                    continue
                frames = np.stack(
                    [read_ppm(os.path.join(path, n)) for n in names])
                clips.append(frames.transpose(1, 0, 2, 3))
            elif entry.endswith(".clp"):
                arr = read_clip_file(path)
                if arr.shape[0] != 1:
                    raise DataError(f"{path}: expected a single clip")
                clips.append(arr[0])
            else:
                continue
            labels.append(label)
    if not clips:
        raise DataError(f"{root}: no clips found")
    shapes = {c.shape for c in clips}
    if len(shapes) > 1:
        raise DataError(f"{root}: clips disagree in shape: {sorted(shapes)}")
    return np.stack(clips), np.asarray(labels, np.int64), classes


def _cmd_train(args) -> int:
    clips, labels, classes = load_labeled_dataset(args.data)
    if args.init:
        net = ckpt.network_from_checkpoint(args.init)
        if net.arch.num_classes != len(classes):
            raise DataError(
                f"checkpoint head has {net.arch.num_classes} classes, "
                f"data has {len(classes)}")
    else:
        arch = ArchSpec(base_depth=args.depth, block_policy=args.blocks,
                        num_classes=len(classes),
                        input_geometry=tuple(clips.shape[2:]),
                        dropout_rate=args.dropout,
                        stem_width=args.stem_width)
        net = build_network(arch, seed=args.seed)
    cfg = TrainConfig(lr=args.lr, lr_step=args.lr_step,
                      momentum=args.momentum, weight_decay=args.wd,
                      batch_size=args.batch, iters=args.iters,
                      seed=args.seed, freeze_bn=args.freeze_bn)
    every = max(1, args.log_every)

    def emit(line):
        n = int(line.split()[1])
        if n % every == 0 or n == args.iters - 1:
            print(line)

    train(net, clips, labels, cfg, log=emit)
    ckpt.save_checkpoint(net, args.ckpt)
    print(f"wrote {args.ckpt} ({len(classes)} classes: "
          f"{', '.join(classes)})")
    return 0


def _cmd_extract(args) -> int:
    net = ckpt.network_from_checkpoint(args.ckpt)
    source = load_clip_source(args.video)
    t, h, w = net.arch.input_geometry
    resize = None
    if source.frames.shape[2:] != (h, w):
        resize = (h, w)
    vec = extract_features(net, source, num_clips=args.clips, clip_len=t,
                           seed=args.seed, resize_to=resize)
    write_features(args.out, vec)
    print(f"wrote {args.out}: {vec.size}-d vector from {args.clips} clips")
    return 0


def _cmd_bench(args) -> int:
    net = ckpt.network_from_checkpoint(args.ckpt)
    result = bench(net, geometry=args.input, iterations=args.iters,
                   threads=args.threads)
    sys.stdout.write(result.table())
    return 0


# ---------------------------------------------------------------------------
# selftest

def _selftest_oracle(report) -> bool:
    from .kernels import (KernelSpec, conv3d, conv_pointwise, conv_spatial,
                          conv_temporal)
    from .reference import conv3d_ref
    stream = rng.Stream(20)
    ok = True
    cases = []
    for i in range(4):
        cases.append(("conv_spatial", conv_spatial,
                      KernelSpec.same(1, 3, 2, 3, stride_s=1 + i % 2),
                      (1, 2, 2, 6, 6)))
        cases.append(("conv_temporal", conv_temporal,
                      KernelSpec.same(3, 1, 2, 3), (1, 2, 5, 3, 3)))
        cases.append(("conv_pointwise", conv_pointwise,
                      KernelSpec(1, 1, 3, 4, stride_s=1 + i % 2),
                      (1, 3, 2, 5, 5)))
        cases.append(("conv3d", conv3d,
                      KernelSpec(3, 3, 2, 3, stride_t=1 + i % 2,
                                 stride_s=1 + (i + 1) % 2, pad_t=1,
                                 pad_s=i % 2), (1, 2, 4, 6, 6)))
    worst = 0.0
    for name, fn, spec, shape in cases:
        x = stream.uniform(shape, -1, 1, dtype=np.float64)
        w = stream.uniform(spec.weight_shape, -1, 1, dtype=np.float64)
        tol = 1e-5 if name == "conv3d" else 1e-6
        diff = float(np.abs(fn(x, w, spec) - conv3d_ref(x, w, spec)).max())
        worst = max(worst, diff)
        if diff >= tol:
            report(f"FAIL oracle {name} {spec}: max diff {diff:.2e}")
            ok = False
    if ok:
        report(f"PASS oracle equivalence ({len(cases)} configurations, "
               f"worst {worst:.2e})")
    return ok


def _selftest_inflation(report) -> bool:
    from .network import ArchSpec, build_network
    geometry = (4, 32, 32)
    arch2d = ArchSpec(50, "2d", 11, (1, 32, 32), stem_width=8)
    net2d = build_network(arch2d, seed=3)
    calibrate_running_stats(
        net2d, rng.uniform((2, 3, 1, 32, 32), 0, 1, seed=6))
    tensors = ckpt.network_tensors(net2d)
    frame = rng.uniform((1, 3, 1, 32, 32), 0, 1, seed=9)
    ref = net2d.features(frame)
    clip = np.repeat(frame, geometry[0], axis=2)
    ok = True
    for policy in ("a", "mixed"):
        net = build_network(ArchSpec(50, policy, 11, geometry, stem_width=8),
                            seed=7)
        inflate_from_2d(net, tensors, "identity")
        diff = float(np.abs(net.features(clip) - ref).max())
        if diff < 1e-4:
            report(f"PASS inflation equivalence ({policy}): "
                   f"max diff {diff:.2e}")
        else:
            report(f"FAIL inflation equivalence ({policy}): "
                   f"max diff {diff:.2e}")
            ok = False
    return ok


def _cmd_selftest(args) -> int:
    ok = _selftest_oracle(print)
    ok = _selftest_inflation(print) and ok
    for name in ("conv_spatial", "conv_temporal", "batch_norm", "block_a"):
        err = gc.check_op(name, seed=0)
        if err < GRADCHECK_TOL:
            print(f"PASS gradcheck {name} (rel err {err:.2e})")
        else:
            print(f"FAIL gradcheck {name} (rel err {err:.2e})")
            ok = False
    if not ok:
        print("selftest failed", file=sys.stderr)
        return 3
    print("selftest passed")
    return 0


_COMMANDS = {
    "build": _cmd_build,
    "summary": _cmd_summary,
    "gradcheck": _cmd_gradcheck,
    "inflate": _cmd_inflate,
    "train": _cmd_train,
    "extract": _cmd_extract,
    "bench": _cmd_bench,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ShapeError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
