"""Command line: embed-export export --encoder <id> --corpus <p> --out <dir>."""

from __future__ import annotations

import argparse
import json
import sys

from .encoders import EncoderLoadError
from .export import CorpusParseError, ExportJob, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="embed-export")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export")
    p.add_argument("--encoder", required=True,
                   help="encoder id: hash-<dim> or a transformers model name")
    p.add_argument("--corpus", required=True,
                   help="JSONL of {query, context, split}")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tokens", action="store_true",
                   help="also emit per-token matrices")
    p.add_argument("--max-len", type=int, default=512)
    p.add_argument("--normalize", action="store_true")
    args = parser.parse_args(argv)

    job = ExportJob(encoder=args.encoder, corpus=args.corpus,
                    out_dir=args.out, with_tokens=args.tokens,
                    max_len=args.max_len, normalize=args.normalize)
    try:
        summary = export(job)
    except EncoderLoadError as exc:
        print(f"encoder error: {exc}", file=sys.stderr)
        return 2
    except CorpusParseError as exc:
        print(f"corpus error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
