"""Command-line entry point.

Subcommands: gen-corpus, train, generate, evaluate, diagnose, ablate.
Every run is reproducible from (config file, seeds); flags override
config values via repeated `--set section.key=value`. Exit status is 0
on success, nonzero with a single-line diagnostic otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .corpus import LANGS, VOCAB, VisionItem, build_corpus, load_corpus, save_corpus
from .decoding import DecodeConfig, caption, translate
from .metrics import score_corpus
from .training import (
    Checkpoint,
    dlr_sentence_pool,
    finetune_supervised,
    load_checkpoint,
    save_checkpoint,
    train_crosslingual_alignment,
    train_dlr,
    train_vision_alignment,
)


class CliError(ValueError):
    pass


STAGE_FLAGS = {
    "align-vision": "align_vision",
    "align-lingual": "align_lingual",
    "dlr": "dlr",
    "finetune": "finetune",
}
STAGE_REQUIRES = {"align_lingual": "align-vision", "dlr": "align-lingual", "finetune": "dlr"}


def _run_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    return apply_overrides(cfg, getattr(args, "set", None) or [])


def _epoch_logger(stream):
    def log(epoch: int, stage: str, loss: float) -> None:
        print(f"epoch={epoch} stage={stage} loss={loss:.6f}", file=stream, flush=True)

    return log


def cmd_gen_corpus(args) -> int:
    run = _run_config(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"output directory {out} is not empty; pass --force to overwrite")
    save_corpus(build_corpus(run.corpus), out)
    print(f"corpus written to {out} (scenes={run.corpus.scenes}, test={run.corpus.test}, seed={run.corpus.seed})")
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    stage = STAGE_FLAGS[args.stage]
    corpus = load_corpus(args.corpus)
    mcfg = run.model_config()
    init: Checkpoint | None = None
    if args.init:
        init = load_checkpoint(args.init)
    elif stage in STAGE_REQUIRES:
        raise CliError(f"stage {args.stage} needs --init with a checkpoint from stage {STAGE_REQUIRES[stage]}")
    log = _epoch_logger(sys.stdout)
    cfg = run.train_config(stage)
    if stage == "align_vision":
        ckpt = train_vision_alignment(corpus.pairsets["D1"], cfg, mcfg, init=init, log=log)
    elif stage == "align_lingual":
        ckpt = train_crosslingual_alignment(
            corpus.pairsets["D2"], corpus.pairsets["D3"], corpus.pairsets["D4"], cfg, mcfg, init, log=log
        )
    elif stage == "dlr":
        ckpt = train_dlr(dlr_sentence_pool(corpus.pairsets), cfg, mcfg, init, log=log)
    else:
        pairs = pipeline.downstream_pairs(corpus, args.ft_lang)
        ckpt = finetune_supervised(pairs, args.ratio, cfg, mcfg, init, log=log)
    save_checkpoint(ckpt, args.out)
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_generate(args) -> int:
    run = _run_config(args)
    ckpt = load_checkpoint(args.ckpt)
    params = pipeline.inference_parameters(ckpt)
    dcfg = DecodeConfig(
        beam_size=args.beam if args.beam is not None else run.decode.beam_size,
        max_len=run.decode.max_len,
        alpha=run.decode.alpha,
    )
    lines = []
    if args.task == "caption":
        lang = _check_lang(args.lang, "--lang")
        for rec in _read_jsonl(args.input):
            item = VisionItem(np.asarray(rec["frames"], dtype=np.float32))
            lines.append(VOCAB.decode(caption(item, lang, params, ckpt.config, dcfg).seq))
    else:
        src = _check_lang(args.src, "--src")
        tgt = _check_lang(args.tgt, "--tgt")
        for raw in Path(args.input).read_text(encoding="utf-8").splitlines():
            seq = VOCAB.encode(raw, src)
            lines.append(VOCAB.decode(translate(seq, src, tgt, params, ckpt.config, dcfg).seq))
    Path(args.out).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    print(f"{len(lines)} line(s) written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    hyp_lines = Path(args.hyp).read_text(encoding="utf-8").splitlines()
    ref_lines = Path(args.ref).read_text(encoding="utf-8").splitlines()
    if len(hyp_lines) != len(ref_lines):
        raise CliError(f"line count mismatch: {len(hyp_lines)} hypotheses vs {len(ref_lines)} references")
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in wanted if m not in ("bleu4", "rougeL")]
    if unknown:
        raise CliError(f"unknown metric(s): {', '.join(unknown)}; supported: bleu4, rougeL")
    report = score_corpus([h.split() for h in hyp_lines], [r.split() for r in ref_lines])
    payload = json.loads(report.to_json())
    payload = {k: v for k, v in payload.items() if k in wanted or k in ("per_language", "sample_count")}
    print(json.dumps(payload, indent=2))
    return 0


def cmd_diagnose(args) -> int:
    corpus = load_corpus(args.pairs)
    ckpt = load_checkpoint(args.ckpt)
    report = pipeline.alignment_report(corpus, ckpt)
    print(report.to_json())
    return 0


def cmd_ablate(args) -> int:
    run = _run_config(args)
    corpus = load_corpus(args.corpus)
    log = _epoch_logger(sys.stderr) if args.verbose else None
    rows = [pipeline.run_variant(corpus, run, variant, log=log) for variant in args.variant]
    table = pipeline.ablation_table(rows)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


def _check_lang(lang: str | None, flag: str) -> str:
    if lang not in LANGS:
        raise CliError(f"{flag} must be one of {', '.join(LANGS)}, got {lang!r}")
    return lang


def _read_jsonl(path: str) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pivotgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI-style run config")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")

    p = sub.add_parser("gen-corpus", help="write the synthetic corpus files")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("train", help="run one training stage")
    common(p)
    p.add_argument("--stage", required=True, choices=sorted(STAGE_FLAGS))
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--ratio", type=float, default=0.01, help="finetune: fraction of downstream pairs")
    p.add_argument("--ft-lang", default="L1", choices=LANGS, help="finetune: caption language")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="caption vision items or translate text")
    common(p)
    p.add_argument("--task", required=True, choices=("caption", "translate"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="caption: frames jsonl; translate: one sentence per line")
    p.add_argument("--out", required=True, help="output text file, one line per input")
    p.add_argument("--lang", help="caption target language")
    p.add_argument("--src", help="translate source language")
    p.add_argument("--tgt", help="translate target language")
    p.add_argument("--beam", type=int, help="beam size (default from config)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="score hypothesis file against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metrics", default="bleu4,rougeL")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("diagnose", help="alignment diagnostics on held-out pairs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True, help="corpus directory with test files")
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("ablate", help="train + score ablation variants")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument(
        "--variant",
        action="append",
        required=True,
        help="full | no-corruption | no-cda | none | langs=L0,L1,...; repeatable",
    )
    p.add_argument("--out", help="write the tab-separated table here as well")
    p.add_argument("--verbose", action="store_true", help="log per-epoch losses to stderr")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ConfigError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
