"""Extractor command line: description generation and embedding extraction.

``--mock`` swaps in the deterministic offline endpoints so the full flow
runs without credentials or a network (the CI mode).
"""

from __future__ import annotations

import argparse
import os
import sys

from .descriptions import (DEFAULT_PROMPT_PATTERN, GenerationReport,
                           generate_descriptions, load_vocabulary_names)
from .endpoints import (EndpointConfig, EndpointError, HttpEmbeddingClient,
                        HttpTextClient, MockEmbeddingClient, MockTextClient)
from .extract import (DimensionDriftError, extract_image_embeddings,
                      extract_text_embeddings)


def _text_client(args):
    if args.mock:
        return MockTextClient(seed=args.seed)
    if not args.config:
        raise EndpointError("need --config (or --mock)")
    return HttpTextClient(EndpointConfig.from_json_file(args.config))


def _embedding_client(args):
    if args.mock:
        return MockEmbeddingClient(dim=args.dim, seed=args.seed)
    if not args.config:
        raise EndpointError("need --config (or --mock)")
    return HttpEmbeddingClient(EndpointConfig.from_json_file(args.config))


def _write_text(path: str, payload: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _cmd_generate(args) -> int:
    vocab = load_vocabulary_names(args.vocab)
    client = _text_client(args)
    lines, report = generate_descriptions(vocab, client, n=args.n,
                                          temperature=args.temperature,
                                          pattern=args.prompt_template)
    _write_text(args.out, ("\n".join(lines) + "\n") if lines else "")
    if args.report:
        _write_text(args.report, report.to_json() + "\n")
    print(f"{report.completed}/{report.requested} classes described "
          f"({len(report.incomplete)} incomplete) -> {args.out}")
    return 0 if report.completed else 1


def _cmd_extract(args) -> int:
    client = _embedding_client(args)
    if args.texts:
        report = extract_text_embeddings(args.texts, client,
                                         out_jsonl=args.out_jsonl,
                                         out_bank=args.out_bank,
                                         batch_size=args.batch_size)
    elif args.jobs:
        if not args.images or not args.out_bank:
            print("error: --jobs mode needs --images and --out-bank", file=sys.stderr)
            return 1
        report = extract_image_embeddings(args.jobs, args.images, client,
                                          out_bank=args.out_bank,
                                          source=args.source,
                                          batch_size=args.batch_size)
    else:
        print("error: need --texts or --jobs", file=sys.stderr)
        return 1
    if args.report:
        _write_text(args.report, report.to_json() + "\n")
    print(f"encoded {report.encoded} items ({len(report.skipped)} skipped)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovextract",
        description="generate class descriptions and extract embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-descriptions")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--prompt-template", default=DEFAULT_PROMPT_PATTERN)
    p.add_argument("--mock", action="store_true")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("extract-embeddings")
    p.add_argument("--texts", default=None, help="descriptions JSONL to embed")
    p.add_argument("--jobs", default=None, help="augmentation jobs JSONL")
    p.add_argument("--images", default=None, help="directory of exemplar images")
    p.add_argument("--out-jsonl", default=None, help="completed descriptions JSONL")
    p.add_argument("--out-bank", default=None, help="output embedding bank (.oveb)")
    p.add_argument("--source", default="in21k",
                   choices=["in21k", "detection-box", "visualgenome",
                            "manual-alias", "synthetic"])
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--mock", action="store_true")
    p.add_argument("--dim", type=int, default=512, help="mock encoder dimension")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_extract)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        return args.func(args)
    except (EndpointError, DimensionDriftError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
