"""Command-line entry point: export one dataset category to SNFT files."""

import argparse
import json
import sys

from .backbone import BACKBONES
from .export import export_category


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featexport",
        description="Export CNN feature maps of an MVTec-style dataset to SNFT files.",
    )
    parser.add_argument("dataset_root", help="directory containing the category folders")
    parser.add_argument("category", help="category folder name, e.g. 'bottle'")
    parser.add_argument("--backbone", choices=sorted(BACKBONES), default="wideresnet50")
    parser.add_argument("--levels", type=int, nargs="+", default=[2, 3],
                        help="residual stages to export (1..4)")
    parser.add_argument("--out-dir", default="export")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--no-pretrained", action="store_true",
                        help="seeded random weights instead of pretrained (testing)")
    parser.add_argument("--seed", type=int, default=0,
                        help="weight seed when --no-pretrained is given")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = export_category(
            dataset_root=args.dataset_root, category=args.category,
            backbone=args.backbone, levels=tuple(args.levels),
            out_dir=args.out_dir, pretrained=not args.no_pretrained,
            seed=args.seed, batch_size=args.batch_size,
        )
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"manifest": str(manifest)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
