"""End-to-end orchestration: staged training runs, zero-shot evaluation,
and the ablation grid. Shared by the CLI and the acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .corpus import LANGS, Corpus, Scene, World, frame_seed, render_text
from .decoding import caption, translate
from .metrics import bleu4, corpus_rouge_l, retrieval_diagnostics, AlignmentReport
from .model import (
    Parameters,
    encode_multi_batch,
    encode_pivot_batch,
    encode_vision_batch,
    init_parameters,
)
from .training import (
    Checkpoint,
    dlr_sentence_pool,
    finetune_supervised,
    train_crosslingual_alignment,
    train_dlr,
    train_vision_alignment,
)

VARIANTS = ("full", "no-corruption", "no-cda", "none")

# task name -> (kind, languages it needs beyond the pivot)
TASKS = {
    "caption_L0": ("caption", ("L0",)),
    "caption_L1": ("caption", ("L1",)),
    "translate_L1_L2": ("translate", ("L1", "L2")),
}


def inference_parameters(ckpt: Checkpoint) -> Parameters:
    """Parameters with gradient tracking off everywhere (decode-only)."""
    p = ckpt.to_parameters()
    p.frozen = set(p.tensors)
    p._sync_flags()
    return p


def align_stages(
    corpus: Corpus,
    run: RunConfig,
    langs: tuple[str, ...] = LANGS,
    log=None,
) -> Checkpoint:
    """Stages A + B. `langs` restricts which non-pivot pair sets train."""
    mcfg = run.model_config()
    cfg_a = run.train_config("align_vision", epochs=run.stage_epochs("align_vision"))
    ckpt = train_vision_alignment(corpus.pairsets["D1"], cfg_a, mcfg, log=log)
    sets = {"L1": "D2", "L2": "D3", "L3": "D4"}
    active = [corpus.pairsets[sets[l]] if l in langs else None for l in ("L1", "L2", "L3")]
    if any(ps is not None for ps in active):
        cfg_b = run.train_config("align_lingual", epochs=run.stage_epochs("align_lingual"))
        ckpt = train_crosslingual_alignment(active[0], active[1], active[2], cfg_b, mcfg, ckpt, log=log)
    return ckpt


def reconstruction_stage(
    corpus: Corpus,
    run: RunConfig,
    init: Checkpoint,
    task: str,
    langs: tuple[str, ...] = LANGS,
    corruption: bool = True,
    log=None,
) -> Checkpoint:
    """Stage C with the task's corruption regime (or none)."""
    mcfg = run.model_config()
    r, eps = run.regime(task) if corruption else (0.0, 0.0)
    cfg = run.train_config("dlr", epochs=run.stage_epochs("dlr"), r=r, eps=eps)
    pool = {lang: seqs for lang, seqs in dlr_sentence_pool(corpus.pairsets).items() if lang in langs}
    return train_dlr(pool, cfg, mcfg, init, log=log)


def random_checkpoint(run: RunConfig) -> Checkpoint:
    """Untrained parameters packaged as a checkpoint (no-cda baseline)."""
    mcfg = run.model_config()
    params = init_parameters(mcfg, run.train_config("align_vision").seed)
    return Checkpoint.from_parameters(params, mcfg, [{"stage": "init"}])


def downstream_pairs(corpus: Corpus, lang: str) -> list[tuple]:
    """All (vision, text-in-lang) pairs over the training scenes; these
    never occur as training pairs, only as fine-tuning material."""
    world = World(corpus.params.seed, corpus.params.v_dim)
    pairs = []
    for ps in corpus.pairsets.values():
        for sid in ps.scene_ids:
            scene = Scene.from_key(sid)
            item = world.render_vision(scene, corpus.params.frames, corpus.params.jitter, frame_seed(corpus.params.seed, scene, "train"))
            pairs.append((item, render_text(scene, lang)))
    return pairs


def finetune_stage(corpus: Corpus, run: RunConfig, init: Checkpoint, ratio: float, lang: str, log=None) -> Checkpoint:
    cfg = run.train_config(
        "finetune",
        epochs=run.stage_epochs("finetune"),
        learning_rate=float(run.pipeline["lr_finetune"]),
    )
    return finetune_supervised(downstream_pairs(corpus, lang), ratio, cfg, run.model_config(), init, log=log)


# -- evaluation ---------------------------------------------------------------


@dataclass
class TaskScore:
    bleu4: float
    rougeL: float
    n: int


def eval_caption(corpus: Corpus, ckpt: Checkpoint, run: RunConfig, lang: str, limit: int | None = None) -> TaskScore:
    p = inference_parameters(ckpt)
    mcfg, dcfg = ckpt.config, run.decode
    items = corpus.test.vision[:limit] if limit else corpus.test.vision
    refs = [list(s.surface()) for s in corpus.test.text[lang][: len(items)]]
    hyps = [list(caption(item, lang, p, mcfg, dcfg).seq.surface()) for item in items]
    return TaskScore(bleu4(hyps, refs), corpus_rouge_l(hyps, refs), len(items))


def eval_translate(
    corpus: Corpus, ckpt: Checkpoint, run: RunConfig, src: str, tgt: str, limit: int | None = None
) -> TaskScore:
    p = inference_parameters(ckpt)
    mcfg, dcfg = ckpt.config, run.decode
    sources = corpus.test.text[src][:limit] if limit else corpus.test.text[src]
    refs = [list(s.surface()) for s in corpus.test.text[tgt][: len(sources)]]
    hyps = [list(translate(s, src, tgt, p, mcfg, dcfg).seq.surface()) for s in sources]
    return TaskScore(bleu4(hyps, refs), corpus_rouge_l(hyps, refs), len(sources))


def alignment_report(corpus: Corpus, ckpt: Checkpoint) -> AlignmentReport:
    """Held-out retrieval/cosine diagnostics for every domain pair that
    routes through the shared space."""
    p = inference_parameters(ckpt)
    mcfg = ckpt.config
    frames = np.stack([item.frames for item in corpus.test.vision])
    coords: dict[str, np.ndarray] = {"vision": encode_vision_batch(p, mcfg, frames).data}
    coords["pivot"] = encode_pivot_batch(p, mcfg, corpus.test.text["L0"]).data
    for lang in LANGS:
        coords[lang] = encode_multi_batch(p, mcfg, corpus.test.text[lang]).data
    report = AlignmentReport()
    pairs = [("vision", "pivot"), ("L0", "pivot"), ("L1", "pivot"), ("L2", "pivot"), ("L3", "pivot"),
             ("L1", "L2"), ("L1", "L3"), ("L2", "L3")]
    for a, b in pairs:
        report.pairs[f"{a}>{b}"] = retrieval_diagnostics(coords[a], coords[b])
        report.pairs[f"{b}>{a}"] = retrieval_diagnostics(coords[b], coords[a])
    return report


# -- ablation grid -------------------------------------------------------------


@dataclass
class AblationRow:
    variant: str
    scores: dict[str, TaskScore | None] = field(default_factory=dict)


def parse_variant(variant: str) -> tuple[str, tuple[str, ...]]:
    """Returns (kind, langs). `langs=L0,L1` restricts the pipeline."""
    if variant.startswith("langs="):
        langs = tuple(part.strip() for part in variant[len("langs=") :].split(",") if part.strip())
        unknown = [l for l in langs if l not in LANGS]
        if unknown:
            raise ValueError(f"unknown language(s) in variant: {', '.join(unknown)}; valid: {', '.join(LANGS)}")
        if "L0" not in langs:
            raise ValueError("the pivot language L0 cannot be dropped")
        return "langs", langs
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)} or langs=...")
    return variant, LANGS


def run_variant(corpus: Corpus, run: RunConfig, variant: str, log=None, limit: int | None = None) -> AblationRow:
    """Train the pipeline under one ablation variant and score the tasks."""
    kind, langs = parse_variant(variant)
    use_cda = kind not in ("no-cda", "none")
    use_corruption = kind not in ("no-corruption", "none")

    aligned = align_stages(corpus, run, langs, log=log) if use_cda else random_checkpoint(run)

    decoders: dict[tuple[float, float], Checkpoint] = {}

    def decoder_for(task_kind: str) -> Checkpoint:
        key = run.regime(task_kind) if use_corruption else (0.0, 0.0)
        if key not in decoders:
            decoders[key] = reconstruction_stage(corpus, run, aligned, task_kind, langs, use_corruption, log=log)
        return decoders[key]

    row = AblationRow(variant)
    for name, (task_kind, needed) in TASKS.items():
        if any(l not in langs for l in needed):
            row.scores[name] = None
            continue
        ckpt = decoder_for(task_kind)
        if task_kind == "caption":
            row.scores[name] = eval_caption(corpus, ckpt, run, needed[0], limit)
        else:
            row.scores[name] = eval_translate(corpus, ckpt, run, needed[0], needed[1], limit)
    return row


def ablation_table(rows: list[AblationRow]) -> str:
    """Tab-separated comparison table; absent tasks render as '-'."""
    header = ["variant"]
    for task in TASKS:
        header += [f"{task}_bleu4", f"{task}_rougeL"]
    lines = ["\t".join(header)]
    for row in rows:
        cells = [row.variant]
        for task in TASKS:
            score = row.scores.get(task)
            if score is None:
                cells += ["-", "-"]
            else:
                cells += [f"{score.bleu4:.4f}", f"{score.rougeL:.4f}"]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"

