"""craniotk-train: train and run the toy direct-estimation models."""

import argparse
import sys

from .errors import TrainerError
from .model import VARIANTS
from .predict import map_back_cli, predict
from .training import TrainConfig, train


def build_parser():
    parser = argparse.ArgumentParser(
        prog="craniotk-train",
        description="Toy implant-estimation trainer on craniotk exports.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train DE or DE-Shape on an exported "
                                     "manifest")
    p.add_argument("--manifest", required=True,
                   help="craniotk register --export-training output")
    p.add_argument("--variant", default="DE-Shape", choices=sorted(VARIANTS))
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--split", type=float, default=0.95)
    p.add_argument("--base-width", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--atlas", help="override the manifest's atlas directory")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="binarized prediction for one case")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--defected", required=True,
                   help="common-space defected volume")
    p.add_argument("--atlas", help="atlas directory (DE-Shape checkpoints)")
    p.add_argument("--transform",
                   help="with --like: map the prediction back via craniotk")
    p.add_argument("--like", help="original-space volume defining the grid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def cmd_train(args):
    config = TrainConfig(variant=args.variant, lam=args.lam, lr=args.lr,
                         epochs=args.epochs, split=args.split,
                         base_width=args.base_width, seed=args.seed)
    metrics = train(config, args.manifest, args.out_dir, atlas_dir=args.atlas)
    print(f"best val Dice {metrics['best_val_dice']:.4f} "
          f"at epoch {metrics['best_epoch']} "
          f"({metrics['n_train']} train / {metrics['n_val']} val)")
    return 0


def cmd_predict(args):
    if bool(args.transform) != bool(args.like):
        print("craniotk-train: error: --transform and --like go together",
              file=sys.stderr)
        return 2
    if args.transform:
        common_out = str(args.out) + ".common.nii.gz"
        predict(args.checkpoint, args.defected, common_out, args.atlas)
        map_back_cli(common_out, args.transform, args.like, args.out)
    else:
        predict(args.checkpoint, args.defected, args.out, args.atlas)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainerError as exc:
        print(f"craniotk-train: error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())
