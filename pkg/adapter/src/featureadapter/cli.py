"""Command-line wrapper around the extractor."""

from __future__ import annotations

import argparse
import logging
import sys

from .extract import BACKBONES, AdapterConfig, AdapterError, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urbanfuse-adapter",
        description="Convert per-object image sets into urbanfuse feature files",
    )
    parser.add_argument("--images", required=True,
                        help="image manifest: object_id, class, overhead path, ';'-joined ground paths (TSV)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--backbone", default="vgg16", choices=sorted(BACKBONES))
    parser.add_argument("--weights", default="pretrained",
                        help="'pretrained', 'random', or a path to a torch state dict")
    parser.add_argument("--feature-layer", default="fc7",
                        help="which fully connected output to export (fc6 or fc7; resnet50 uses its pooled features)")
    parser.add_argument("--seed", type=int, default=0, help="seed for --weights random")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--normalization", default="imagenet", choices=("imagenet", "none"))
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    config = AdapterConfig(
        image_manifest=args.images,
        output_dir=args.out,
        backbone=args.backbone,
        weights=args.weights,
        feature_layer=args.feature_layer,
        seed=args.seed,
        batch_size=args.batch_size,
        device=args.device,
        normalization=args.normalization,
    )
    try:
        manifest = extract(config)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
