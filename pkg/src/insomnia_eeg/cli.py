"""Command line entry point.

Subcommands mirror the pipeline stages (synth, ingest, preprocess,
features, select, train, eval, report, sleepstats). Every option can also
come from a JSON config file (--config); explicit flags win. Failures
print one machine-readable JSON error line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import PipelineError
from . import pipeline


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", help="output directory (default: out)")
    parser.add_argument("--seed", type=int, help="global random seed")
    parser.add_argument("--jobs", type=int, help="parallel subject workers")
    parser.add_argument(
        "--channel", choices=("fp2", "c4", "both"), help="EEG channel(s) to analyse"
    )
    parser.add_argument("--manifest", help="cohort manifest CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="insomnia-eeg",
        description="Insomnia screening pipeline over single-channel sleep EEG",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labelled cohort")
    _common(p)
    p.add_argument("--healthy", type=int, dest="synth_healthy", help="healthy subjects")
    p.add_argument("--insomnia", type=int, dest="synth_insomnia", help="insomnia subjects")
    p.add_argument("--duration", type=float, dest="synth_duration", help="seconds per subject")
    p.add_argument("--fs", type=float, dest="synth_fs", help="synthesis sampling rate")
    p.add_argument(
        "--synth-channels", dest="synth_channels", help="comma list, e.g. fp2,c4"
    )
    p.add_argument("--profiles", help="JSON file overriding the class profiles")

    p = sub.add_parser("ingest", help="parse EDFs, select channel, resample")
    _common(p)
    p.add_argument("--resample-fs", type=float, dest="resample_fs", help="pipeline rate (Hz)")

    p = sub.add_parser("preprocess", help="band-pass filter and epoch the recordings")
    _common(p)
    p.add_argument("--hp", type=float, help="high-pass cutoff (Hz)")
    p.add_argument("--lp", type=float, help="low-pass cutoff (Hz)")
    p.add_argument("--order", type=int, help="Butterworth order per section")
    p.add_argument(
        "--zero-phase", action="store_const", const=True, dest="zero_phase",
        help="forward-backward filtering",
    )
    p.add_argument("--clip-uv", type=float, dest="clip_uv", help="epoch rejection threshold")

    p = sub.add_parser("features", help="compute the 31 per-epoch features")
    _common(p)
    p.add_argument("--sigma-lo", type=float, dest="sigma_lo", help="spindle band low edge")
    p.add_argument("--sigma-hi", type=float, dest="sigma_hi", help="spindle band high edge")
    p.add_argument(
        "--slow-wave-gate", action="store_const", const=True, dest="slow_wave_gate",
        help="count slow-wave power only above the 75 uV swing gate",
    )

    p = sub.add_parser("select", help="grade features and write the selected set")
    _common(p)
    p.add_argument("--alpha-top", type=float, dest="alpha_top")
    p.add_argument("--p-optimal", type=float, dest="p_optimal")
    p.add_argument("--r-top", type=float, dest="r_top")
    p.add_argument("--r-optimal", type=float, dest="r_optimal")
    p.add_argument(
        "--curated-set", action="store_const", const=True, dest="curated_set",
        help="use the fixed 20-feature curated set",
    )
    p.add_argument(
        "--per-subject-means", action="store_const", const=True, dest="per_subject_means",
        help="compute statistics over subject means instead of pooled epochs",
    )

    p = sub.add_parser("train", help="train the classifier")
    _common(p)
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int, help="early stopping patience")
    p.add_argument("--split", type=float, help="training fraction")
    p.add_argument(
        "--epoch-split", action="store_const", const=True, dest="epoch_split",
        help="naive row-level split instead of subject-level",
    )
    p.add_argument(
        "--shuffle-labels", action="store_const", const=True, dest="shuffle_labels",
        help="permute subject labels (null-control experiment)",
    )

    p = sub.add_parser("eval", help="evaluate the trained model on the held-out split")
    _common(p)
    p.add_argument("--split", type=float, help="training fraction used at train time")
    p.add_argument(
        "--epoch-split", action="store_const", const=True, dest="epoch_split",
        help="must match the flag used at train time",
    )

    p = sub.add_parser("report", help="emit metrics.csv, sleep_stats.csv, history.csv")
    _common(p)

    p = sub.add_parser("sleepstats", help="sleep parameter statistics from a manifest")
    _common(p)

    return parser


_STAGES = {
    "synth": pipeline.cmd_synth,
    "ingest": pipeline.cmd_ingest,
    "preprocess": pipeline.cmd_preprocess,
    "features": pipeline.cmd_features,
    "select": pipeline.cmd_select,
    "train": pipeline.cmd_train,
    "eval": pipeline.cmd_eval,
    "report": pipeline.cmd_report,
    "sleepstats": pipeline.cmd_sleepstats,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "config") and v is not None
    }
    try:
        cfg = load_config(args.config, overrides)
        result = _STAGES[args.command](cfg)
    except (PipelineError, OSError) as exc:
        line = json.dumps({"error": type(exc).__name__, "message": str(exc)})
        print(line, file=sys.stderr)
        return 1
    if result is not None:
        paths = result if isinstance(result, (list, tuple)) else [result]
        for path in paths:
            print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
