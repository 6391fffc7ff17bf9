"""Command-line operator surface.

Subcommands:

    generate  build a synthetic corpus from a run config
    pretrain  train one variant on a generated corpus
    probe     linear probes against a trained checkpoint
    report    cross-variant comparison table over finished runs
    verify    built-in self-checks, named, with a per-check report
    params    parameter-accounting table across all variants

Outputs land under the POLYSPEECH_RUNS root (default ./runs) unless
--out says otherwise. Exit codes: 0 success, 1 failed checks or runtime
failure, 2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .checkpoint import restore_model
from .data import Corpus, generate_corpus
from .errors import ConfigError, ContractError, DataError, NumericError
from .evaluation import compare_variants, frame_probe, language_probe
from .langcond import count_params, overhead_report
from .model import VARIANTS, baseline_config, model_param_shapes, full_scale_config
from .runconfig import echo_run_config, load_run_config
from .trainer import run_pretraining
from .verify import format_report, run_all_checks

RUNS_ENV = "POLYSPEECH_RUNS"


def _runs_root() -> str:
    return os.environ.get(RUNS_ENV, os.path.join(os.curdir, "runs"))


def _out_dir(args, default_name: str) -> str:
    return args.out if args.out else os.path.join(_runs_root(), default_name)


# -- subcommands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    rc = load_run_config(args.config, {
        "corpus.seed": args.seed,
        "corpus.num_languages": args.num_languages,
    })
    out = _out_dir(args, "corpus")
    generate_corpus(rc.corpus, out)
    echo_run_config(rc, out, "generate")
    print(f"corpus written to {out} "
          f"({len(rc.corpus.languages)} languages, seed {rc.corpus.seed})")
    return 0


def cmd_pretrain(args) -> int:
    rc = load_run_config(args.config, {
        "model.variant": args.variant,
        "model.tap_layer": args.tap_layer,
        "model.k_scale": args.k_scale,
        "model.k_bias": args.k_bias,
        "trainer.lambda_adv": args.lambda_adv,
        "trainer.total_steps": args.steps,
        "trainer.warmup_steps": args.warmup,
        "trainer.seed": args.seed,
    })
    corpus = Corpus(args.corpus)
    out = _out_dir(args, f"pretrain-{rc.model.variant}")
    echo_run_config(rc, out, "pretrain")
    result = run_pretraining(rc.model, rc.trainer, corpus, out,
                             resume_from=args.resume)
    final = result.final_metrics
    print(f"finished {rc.trainer.total_steps} steps; "
          f"loss_total {final.get('loss_total', float('nan')):.4f}; "
          f"checkpoint {result.checkpoint_path}")
    return 0


def cmd_probe(args) -> int:
    rc = load_run_config(args.config, {"probe.seed": args.seed})
    model, ckpt = restore_model(args.checkpoint)
    corpus = Corpus(args.corpus)
    lang = language_probe(model, corpus, rc.probe, tap_layer=args.tap_layer)
    frame = frame_probe(model, corpus, rc.probe, tap_layer=args.tap_layer)
    out = _out_dir(args, "probe")
    echo_run_config(rc, out, "probe")
    payload = {
        "checkpoint": args.checkpoint,
        "checkpoint_step": ckpt["step"],
        "variant": model.cfg.variant,
        "language_probe": dataclasses.asdict(lang),
        "frame_probe": dataclasses.asdict(frame),
    }
    path = os.path.join(out, "probe.json")
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"language probe accuracy {lang.accuracy:.4f} "
          f"(tap {lang.tap_layer}, chance {lang.majority_share:.4f})")
    print(f"frame probe macro accuracy {frame.macro:.4f}")
    print(f"details in {path}")
    return 0


def cmd_report(args) -> int:
    rc = load_run_config(args.config, None)
    corpus = Corpus(args.corpus)
    out = _out_dir(args, "report")
    result = compare_variants(args.runs, corpus, out, rc.probe)
    echo_run_config(rc, out, "report")
    print(open(result.csv_path).read(), end="")
    print(f"table: {result.csv_path}")
    print(f"summary: {result.summary_path}")
    return 0


def cmd_verify(args) -> int:
    results = run_all_checks(seed=args.seed)
    print(format_report(results))
    return 0 if all(r.passed for r in results) else 1


def cmd_params(args) -> int:
    print("variant  backbone_params  added_params  added_pct")
    for variant in VARIANTS:
        if args.full_scale:
            cfg = full_scale_config(variant)
        else:
            rc = load_run_config(args.config, {"model.variant": variant})
            cfg = rc.model
        shapes = model_param_shapes(cfg)
        if variant == "xlsr":
            print(f"{variant:7s}  {count_params(shapes):15d}  {0:12d}  {0.0:9.4f}")
            continue
        report = overhead_report(model_param_shapes(baseline_config(cfg)), shapes)
        print(f"{variant:7s}  {report['backbone_params']:15d}  "
              f"{report['added_params']:12d}  {report['added_percent']:9.4f}")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyspeech",
        description="Multilingual contrastive speech pretraining at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run config JSON; defaults apply if omitted")
        p.add_argument("--out", help=f"output directory (default under ${RUNS_ENV})")

    p = sub.add_parser("generate", help="build a synthetic corpus")
    common(p)
    p.add_argument("--seed", type=int, help="corpus seed override")
    p.add_argument("--num-languages", type=int, help="desk corpus language count")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", help="train one variant")
    common(p)
    p.add_argument("--variant", choices=VARIANTS, help="model variant")
    p.add_argument("--corpus", required=True, help="generated corpus directory")
    p.add_argument("--tap-layer", type=int, help="adversarial tap position")
    p.add_argument("--lambda", dest="lambda_adv", type=float,
                   help="adversarial loss weight")
    p.add_argument("--k-scale", type=int, help="multiplicative factor rank")
    p.add_argument("--k-bias", type=int, help="additive factor rank")
    p.add_argument("--steps", type=int, help="total training steps")
    p.add_argument("--warmup", type=int, help="linear warmup steps")
    p.add_argument("--seed", type=int, help="training seed override")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="linear probes on a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--tap-layer", type=int, help="probe position (default: model's)")
    p.add_argument("--seed", type=int, help="probe seed override")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", help="compare finished runs")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--runs", nargs="+", required=True,
                   help="two or more run directories")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="run the built-in self-checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("params", help="parameter accounting per variant")
    p.add_argument("--config", help="run config JSON; defaults apply if omitted")
    p.add_argument("--full-scale", action="store_true",
                   help="use the large accounting-only profile")
    p.set_defaults(func=cmd_params)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ContractError, DataError, NumericError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
