"""Command line for the feature exporter."""

from __future__ import annotations

import argparse
import sys

from .export import ExportSpec, run_export
from .models import ExportEnvironmentError
from .templates import TemplateError, load_templates


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clip-export",
        description="Export pretrained vision-language features (class "
                    "weights per prompt template, image features, labels) "
                    "in the promptdist tensor/manifest formats.")
    parser.add_argument("action", nargs="?", default="export",
                        choices=["export"], help="the one supported action")
    parser.add_argument("--dataset", default="synthetic",
                        help="cifar10, or synthetic (fake-model test double)")
    parser.add_argument("--model", default="fake",
                        help="checkpoint id (e.g. RN50), or fake")
    parser.add_argument("--templates", default="single",
                        help="builtin set (single, cifar10, imagenet) or a "
                             "file with one template per line")
    parser.add_argument("--out", required=True)
    parser.add_argument("--split", default="test", choices=["test", "train"])
    parser.add_argument("--limit", type=int, default=None,
                        help="cap the number of exported examples")
    parser.add_argument("--dim", type=int, default=64,
                        help="embedding width of the fake model")
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        spec = ExportSpec(dataset=args.dataset, model=args.model,
                          templates=load_templates(args.templates),
                          out_dir=args.out, split=args.split,
                          limit=args.limit, dim=args.dim, seed=args.seed)
        reference = run_export(spec)
    except (TemplateError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExportEnvironmentError as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return 3
    print(f"exported {reference['num_examples']} examples, "
          f"{reference['num_templates']} templates -> {args.out}")
    print(f"ensemble zero-shot: {reference['ensemble_accuracy']:.4f} "
          f"(single template: {reference['single_template_accuracy']:.4f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
