"""rsexport CLI: export-images, export-network, oracle-forward, oracle-rdm."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import ExportError
from . import rstf
from .checkpoint import export_network, make_toy_checkpoint
from .images import ExportJob, export_images
from .oracle import oracle_forward_dir, oracle_rdm


def _cmd_export_images(args) -> int:
    job = ExportJob(
        source=args.source,
        target_dims=(args.channels, args.height, args.width),
        resize_policy=args.policy,
        output_dir=args.out,
    )
    manifest = export_images(job)
    print(f"export-images: {manifest}")
    return 0


def _cmd_export_network(args) -> int:
    descriptor = export_network(args.checkpoint, args.tap, args.out)
    print(f"export-network: {descriptor}")
    return 0


def _cmd_toy_checkpoint(args) -> int:
    make_toy_checkpoint(args.out, seed=args.seed)
    print(f"toy-checkpoint: {args.out}")
    return 0


def _cmd_oracle_forward(args) -> int:
    oracle_forward_dir(args.net, args.manifest, args.out)
    print(f"oracle-forward: {args.out}")
    return 0


def _cmd_oracle_rdm(args) -> int:
    patterns = rstf.read(args.patterns)
    rstf.write(oracle_rdm(patterns).astype(np.float32), args.out)
    print(f"oracle-rdm: {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rsexport", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ei = sub.add_parser("export-images", help="image folders -> manifest + RSTF tensors")
    ei.add_argument("--source", required=True)
    ei.add_argument("--out", required=True)
    ei.add_argument("--channels", type=int, default=3)
    ei.add_argument("--height", type=int, required=True)
    ei.add_argument("--width", type=int, required=True)
    ei.add_argument("--policy", default="resize", choices=["resize", "center_crop"])
    ei.set_defaults(func=_cmd_export_images)

    en = sub.add_parser("export-network", help=".npz checkpoint -> descriptor + weights")
    en.add_argument("--checkpoint", required=True)
    en.add_argument("--out", required=True)
    en.add_argument("--tap", action="append", default=[])
    en.set_defaults(func=_cmd_export_network)

    tc = sub.add_parser("toy-checkpoint", help="write the seeded 5-conv toy checkpoint")
    tc.add_argument("--out", required=True)
    tc.add_argument("--seed", type=int, default=99)
    tc.set_defaults(func=_cmd_toy_checkpoint)

    of = sub.add_parser("oracle-forward", help="reference forward traces via torch")
    of.add_argument("--net", required=True)
    of.add_argument("--manifest", required=True)
    of.add_argument("--out", required=True)
    of.set_defaults(func=_cmd_oracle_forward)

    orr = sub.add_parser("oracle-rdm", help="reference RDM from a pattern matrix")
    orr.add_argument("--patterns", required=True)
    orr.add_argument("--out", required=True)
    orr.set_defaults(func=_cmd_oracle_rdm)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExportError as exc:
        print(f"rsexport: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
