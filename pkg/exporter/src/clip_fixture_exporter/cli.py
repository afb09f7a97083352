"""clip-fixture-exporter: encode expression prompts into a fixture file.

    export   encode the built-in expression prompts (plus any from
             --prompts) and write one fixture JSON

Exit codes: 0 success, 2 bad prompts or arguments, 3 encoder failure
(unavailable, wrong width, bad output), 4 filesystem refusal (existing
output needs --force).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoders import DEFAULT_MODEL, load_clip_encoder
from .errors import (DimensionMismatchError, EncoderUnavailableError,
                     EncodingError, ExporterError, PromptSetError)
from .export import export_fixture
from .prompts import load_prompt_file, merged_prompt_set


def cmd_export(args) -> None:
    extra, file_d_e = (), None
    if args.prompts is not None:
        extra, file_d_e = load_prompt_file(args.prompts)
    d_e = args.d_e if args.d_e is not None else file_d_e
    prompt_set = merged_prompt_set(extra, d_e=d_e)

    out = Path(args.out)
    if out.exists() and not args.force:
        raise FileExistsError(
            f"{out} already exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)

    encoder = load_clip_encoder(args.encoder,
                                local_files_only=args.local_only)
    values = export_fixture(prompt_set, encoder, out)
    print(f"wrote {len(values)} embeddings (d_e={prompt_set.d_e}, "
          f"encoder {encoder.name}) to {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clip-fixture-exporter",
        description="encode expression prompts into an embedding fixture")
    sub = parser.add_subparsers(dest="command", required=True)

    export = sub.add_parser(
        "export", help="encode prompts and write a fixture JSON")
    export.add_argument("--prompts", default=None,
                        help="JSON file with extra {key: prompt} entries")
    export.add_argument("--out", required=True, help="fixture file to write")
    export.add_argument("--encoder", default=DEFAULT_MODEL,
                        help=f"model id (default {DEFAULT_MODEL})")
    export.add_argument("--d-e", dest="d_e", type=int, default=None,
                        help="expected embedding width (default 512, or "
                             "the prompts file's d_e)")
    export.add_argument("--local-only", action="store_true",
                        help="never touch the network; fail fast unless "
                             "the weights are already cached")
    export.add_argument("--force", action="store_true",
                        help="overwrite an existing output file")
    export.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except PromptSetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EncoderUnavailableError, DimensionMismatchError,
            EncodingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
