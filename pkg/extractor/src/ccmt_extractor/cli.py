"""Extractor CLI: audio manifest in, CCMTEMB container out.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error, 3 when more
than the allowed fraction of samples had to be skipped.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from .errors import BackendUnavailableError, ExtractorError, ValidationError
from .extract import extract
from .job import ExtractionJob


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="ccmt-extract", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--manifest", required=True, help="CSV of path,label,language")
    p.add_argument("--out", required=True, help="CCMTEMB output path")
    p.add_argument("--asr", nargs="+", default=["toy-small"],
                   help="ASR backend tags; one text variant per backend")
    p.add_argument("--translate-to", default="en")
    p.add_argument("--translator", default="toy")
    p.add_argument("--text-encoder", default="toy-text-32",
                   help="encoder for original-language transcripts")
    p.add_argument("--text-encoder-translated", default=None,
                   help="encoder for translated transcripts (defaults to --text-encoder)")
    p.add_argument("--audio-encoder", default="toy-audio-48")
    p.add_argument("--width-handling", choices=["native", "adapter"], default="native")
    p.add_argument("--channel-order", choices=["agent-first", "customer-first"],
                   default="agent-first")
    p.add_argument("--max-skip-fraction", type=float, default=0.10)
    p.add_argument("--error-log", default=None)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)

    t0 = time.time()
    try:
        job = ExtractionJob(
            manifest_path=args.manifest,
            output_path=args.out,
            asr_backends=list(args.asr),
            translation_target=args.translate_to,
            translator=args.translator,
            text_encoder_original=args.text_encoder,
            text_encoder_translated=args.text_encoder_translated or args.text_encoder,
            audio_encoder=args.audio_encoder,
            width_handling=args.width_handling,
            channel_order=args.channel_order,
            max_skip_fraction=args.max_skip_fraction,
            error_log_path=args.error_log,
        )
        stats = extract(job)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except BackendUnavailableError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ExtractorError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3

    manifest = {
        "command": ["ccmt-extract"] + argv,
        "written": stats.written,
        "skipped": len(stats.skipped),
        "label_names": stats.label_names,
        "widths": list(stats.widths),
        "asr_backends": list(args.asr),
        "width_handling": args.width_handling,
        "wall_clock_sec": round(time.time() - t0, 3),
    }
    with open(str(args.out) + ".manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(
        f"wrote {stats.written} samples ({len(stats.skipped)} skipped) to {args.out}; "
        f"widths {stats.widths}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
