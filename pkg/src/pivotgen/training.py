"""Staged training and checkpointing.

Stage A aligns the vision and pivot text encoders contrastively on
(vision, L0) pairs. Stage B freezes the pivot encoder and pulls the
multilingual encoder onto its coordinates using the (L0, Li) pair sets,
drawn round-robin. Stage C (denoising reconstruction) freezes the
encoders and teaches the decoder to reproduce uncorrupted sentences from
corrupted coordinates. An optional supervised stage fine-tunes the
decoder on a sampled fraction of true downstream pairs.

Checkpoints are bit-exact: little-endian binary with magic `ZNLG`,
versioned header, named float32 tensors, and a JSON trailer carrying the
model config and stage provenance.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .corpus import LANGS, PairSet, TokenSequence, VisionItem, mask_tokens
from .losses import AlignmentBatch, LossWeights, cda_loss, perturb_rows
from .model import (
    ModelConfig,
    Parameters,
    encode_multi_batch,
    encode_pivot_batch,
    encode_vision_batch,
    init_parameters,
    sequence_loss,
)
from .optim import AdamW
from .tensor import Tensor, add, scale

MAGIC = b"ZNLG"
CHECKPOINT_VERSION = 1

STAGES = ("align_vision", "align_lingual", "dlr", "finetune")

# Default loss mix per alignment stage: contrastive-only for
# vision<->pivot, MSE-only for cross-lingual.
STAGE_WEIGHTS = {"align_vision": (1.0, 0.0), "align_lingual": (0.0, 1.0)}


@dataclass
class TrainConfig:
    stage: str = "align_vision"
    lam1: float | None = None  # None -> stage default
    lam2: float | None = None
    tau: float = 0.07
    r: float = 0.0  # mask percent (captioning regime; translation uses 5)
    eps: float = 0.1  # feature noise std (translation regime uses 0.01)
    learning_rate: float = 3e-4
    warmup_steps: int = 100
    weight_decay: float = 0.01
    batch_align: int = 64
    batch_dlr: int = 32
    epochs: int = 20
    seed: int = 0
    train_encoder_in_dlr: bool = False
    align_pivot: bool = True
    renorm_after_noise: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.learning_rate <= 0 or self.batch_align < 1 or self.batch_dlr < 1 or self.epochs < 1:
            raise ValueError("learning rate must be positive and batch sizes/epochs >= 1")
        if not 0 <= self.r <= 100 or self.eps < 0:
            raise ValueError(f"invalid corruption settings r={self.r}, eps={self.eps}")

    def weights(self) -> LossWeights:
        default = STAGE_WEIGHTS.get(self.stage, (0.0, 0.0))
        lam1 = default[0] if self.lam1 is None else self.lam1
        lam2 = default[1] if self.lam2 is None else self.lam2
        return LossWeights(lam1, lam2, self.tau)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    provenance: list[dict] = field(default_factory=list)
    version: int = CHECKPOINT_VERSION

    def to_parameters(self) -> Parameters:
        p = Parameters()
        for name, arr in self.tensors.items():
            p.add(name, arr.copy())
        return p

    @staticmethod
    def from_parameters(p: Parameters, config: ModelConfig, provenance: list[dict]) -> "Checkpoint":
        return Checkpoint(config, {n: t.data.copy() for n, t in p.tensors.items()}, list(provenance))

    def stages_run(self) -> list[str]:
        return [rec.get("stage", "?") for rec in self.provenance]


class CheckpointError(ValueError):
    """Malformed checkpoint file; message includes the byte offset."""


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", ckpt.version, len(ckpt.tensors))
    for name, arr in ckpt.tensors.items():
        encoded = name.encode("utf-8")
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", arr32.ndim)
        out += struct.pack(f"<{arr32.ndim}I", *arr32.shape)
        out += arr32.tobytes()
    record = json.dumps({"model": ckpt.config.to_dict(), "provenance": ckpt.provenance}).encode("utf-8")
    out += struct.pack("<I", len(record))
    out += record
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes for {what} at byte {self.pos}")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path: str | Path) -> Checkpoint:
    rd = _Reader(Path(path).read_bytes())
    if rd.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic at byte 0: not a checkpoint file")
    version, count = rd.unpack("<II", "header")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at byte 4")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = rd.unpack("<H", f"tensor {i} name length")
        name = rd.take(name_len, f"tensor {i} name").decode("utf-8")
        (ndim,) = rd.unpack("<B", f"tensor {name} ndim")
        dims = rd.unpack(f"<{ndim}I", f"tensor {name} dims")
        payload = rd.take(4 * int(np.prod(dims, dtype=np.int64)), f"tensor {name} payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    (record_len,) = rd.unpack("<I", "config record length")
    record = json.loads(rd.take(record_len, "config record").decode("utf-8"))
    if rd.pos != len(rd.blob):
        raise CheckpointError(f"trailing garbage after config record at byte {rd.pos}")
    config = ModelConfig(**record["model"])
    return Checkpoint(config, tensors, record.get("provenance", []))


# -- stage plumbing -----------------------------------------------------------


def _freeze_except(p: Parameters, keep_prefixes: tuple[str, ...]) -> None:
    p.unfreeze_all()
    for prefix in ("vis.", "piv.", "mul.", "dec."):
        if prefix not in keep_prefixes:
            p.freeze(prefix)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _provenance(cfg: TrainConfig, epoch_losses: list[float], extra: dict | None = None) -> dict:
    rec = {
        "stage": cfg.stage,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "epoch_losses": [round(x, 6) for x in epoch_losses],
    }
    if extra:
        rec.update(extra)
    return rec


def train_vision_alignment(
    d1: PairSet,
    cfg: TrainConfig,
    mcfg: ModelConfig,
    init: Checkpoint | None = None,
    log=None,
) -> Checkpoint:
    """Stage A: joint contrastive training of the vision and pivot text
    encoders on (vision, L0) pairs; multilingual nets stay untouched."""
    if len(d1) == 0:
        raise ValueError("vision alignment needs a non-empty D1 pair set")
    params = init.to_parameters() if init else init_parameters(mcfg, cfg.seed)
    _freeze_except(params, ("vis.", "piv."))
    weights = cfg.weights()
    opt = AdamW(params, cfg.learning_rate, cfg.warmup_steps, cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA]))
    frames = np.stack([item.frames for item in d1.a_items])
    first_loss = None
    epoch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(d1), cfg.batch_align, rng):
            pivot = encode_pivot_batch(params, mcfg, [d1.b_items[i] for i in idx])
            vision = encode_vision_batch(params, mcfg, frames[idx])
            loss = cda_loss(AlignmentBatch(pivot, vision), weights)
            if first_loss is None:
                first_loss = loss.item()
            params.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        epoch_losses.append(float(np.mean(losses)))
        if log:
            log(epoch, cfg.stage, epoch_losses[-1])
    prov = (init.provenance if init else []) + [_provenance(cfg, epoch_losses, {"first_batch_loss": first_loss})]
    return Checkpoint.from_parameters(params, mcfg, prov)


def train_crosslingual_alignment(
    d2: PairSet | None,
    d3: PairSet | None,
    d4: PairSet | None,
    cfg: TrainConfig,
    mcfg: ModelConfig,
    init: Checkpoint,
    log=None,
) -> Checkpoint:
    """Stage B: pivot encoder frozen; the multilingual encoder is pulled
    onto pivot coordinates, with batches drawn round-robin from D2/D3/D4.
    A pair set may be None (language-restricted runs).

    When `align_pivot` is set (default) each batch also aligns the
    multilingual encoding of the pivot side itself, so the multilingual
    encoder covers L0 too.
    """
    if init is None:
        raise ValueError("cross-lingual alignment requires a checkpoint from align_vision")
    pair_sets = tuple(ps for ps in (d2, d3, d4) if ps is not None and len(ps) > 0)
    if not pair_sets:
        raise ValueError("cross-lingual alignment needs at least one non-empty pair set")
    params = init.to_parameters()
    _freeze_except(params, ("mul.",))
    weights = cfg.weights()
    opt = AdamW(params, cfg.learning_rate, cfg.warmup_steps, cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xB]))
    epoch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        per_set = [_batches(len(ps), cfg.batch_align, rng) for ps in pair_sets]
        losses = []
        for round_idx in range(max(len(b) for b in per_set)):
            for ps, batches in zip(pair_sets, per_set):
                if round_idx >= len(batches):
                    continue
                idx = batches[round_idx]
                pivot_seqs = [ps.a_items[i] for i in idx]
                target = encode_pivot_batch(params, mcfg, pivot_seqs)
                multi = encode_multi_batch(params, mcfg, [ps.b_items[i] for i in idx])
                loss = cda_loss(AlignmentBatch(target, multi), weights)
                if cfg.align_pivot:
                    multi_pivot = encode_multi_batch(params, mcfg, pivot_seqs)
                    loss = scale(add(loss, cda_loss(AlignmentBatch(target, multi_pivot), weights)), 0.5)
                params.zero_grad()
                loss.backward()
                opt.step()
                losses.append(loss.item())
        epoch_losses.append(float(np.mean(losses)))
        if log:
            log(epoch, cfg.stage, epoch_losses[-1])
    return Checkpoint.from_parameters(params, mcfg, init.provenance + [_provenance(cfg, epoch_losses)])


def train_dlr(
    sentences: dict[str, list[TokenSequence]],
    cfg: TrainConfig,
    mcfg: ModelConfig,
    init: Checkpoint,
    log=None,
) -> Checkpoint:
    """Stage C: decoder training by denoising reconstruction.

    Per batch: mask r% of input tokens, encode with the (frozen)
    multilingual encoder, add Gaussian noise of std eps to the
    coordinates, and teacher-force the decoder onto the uncorrupted
    sentence behind its language's begin token. Languages alternate
    round-robin, keeping the mix balanced.
    """
    if init is None:
        raise ValueError("denoising reconstruction requires a checkpoint from align_lingual")
    params = init.to_parameters()
    keep = ("dec.", "mul.") if cfg.train_encoder_in_dlr else ("dec.",)
    _freeze_except(params, keep)
    opt = AdamW(params, cfg.learning_rate, cfg.warmup_steps, cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xC]))
    langs = [lang for lang in LANGS if sentences.get(lang)]
    if not langs:
        raise ValueError("no sentences to reconstruct")
    epoch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        per_lang = {lang: _batches(len(sentences[lang]), cfg.batch_dlr, rng) for lang in langs}
        losses = []
        for round_idx in range(max(len(b) for b in per_lang.values())):
            for lang in langs:
                batches = per_lang[lang]
                if round_idx >= len(batches):
                    continue
                originals = [sentences[lang][i] for i in batches[round_idx]]
                corrupted = [
                    mask_tokens(s, cfg.r, int(rng.integers(2**31))) if cfg.r > 0 else s for s in originals
                ]
                coords = encode_multi_batch(params, mcfg, corrupted)
                if cfg.train_encoder_in_dlr:
                    noise = rng.normal(0.0, cfg.eps, size=coords.shape).astype(np.float32) if cfg.eps > 0 else None
                    cond = add(coords, Tensor(noise)) if noise is not None else coords
                else:
                    cond = Tensor(perturb_rows(coords.data, cfg.eps, rng, cfg.renorm_after_noise))
                loss = sequence_loss(params, mcfg, cond, originals)
                params.zero_grad()
                loss.backward()
                opt.step()
                losses.append(loss.item())
        epoch_losses.append(float(np.mean(losses)))
        if log:
            log(epoch, cfg.stage, epoch_losses[-1])
    return Checkpoint.from_parameters(params, mcfg, init.provenance + [_provenance(cfg, epoch_losses)])


def finetune_supervised(
    pairs: list[tuple[VisionItem, TokenSequence]],
    ratio: float,
    cfg: TrainConfig,
    mcfg: ModelConfig,
    init: Checkpoint,
    log=None,
) -> Checkpoint:
    """Optional semi-supervised stage: train the decoder with plain
    cross-entropy on a sampled fraction of true (vision, text) pairs."""
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if init is None:
        raise ValueError("fine-tuning requires a trained checkpoint")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xF]))
    n_keep = int(ratio * len(pairs))
    chosen = [pairs[i] for i in rng.permutation(len(pairs))[:n_keep]]
    record = {"ratio": ratio, "pairs_used": n_keep}
    if not chosen:
        return Checkpoint(init.config, {k: v.copy() for k, v in init.tensors.items()},
                          init.provenance + [_provenance(cfg, [], record)])
    params = init.to_parameters()
    _freeze_except(params, ("dec.",))
    opt = AdamW(params, cfg.learning_rate, cfg.warmup_steps, cfg.weight_decay)
    frames = np.stack([item.frames for item, _ in chosen])
    texts = [seq for _, seq in chosen]
    epoch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(chosen), cfg.batch_dlr, rng):
            coords = encode_vision_batch(params, mcfg, frames[idx])
            loss = sequence_loss(params, mcfg, Tensor(coords.data.copy()), [texts[i] for i in idx])
            params.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        epoch_losses.append(float(np.mean(losses)))
        if log:
            log(epoch, cfg.stage, epoch_losses[-1])
    return Checkpoint.from_parameters(params, mcfg, init.provenance + [_provenance(cfg, epoch_losses, record)])


def dlr_sentence_pool(pairsets: dict[str, PairSet]) -> dict[str, list[TokenSequence]]:
    """One language per pair set, mirroring the pivot-centric split:
    L0 sentences come from D1, Li from the non-pivot side of D(i+1)."""
    return {
        "L0": list(pairsets["D1"].b_items),
        "L1": list(pairsets["D2"].b_items),
        "L2": list(pairsets["D3"].b_items),
        "L3": list(pairsets["D4"].b_items),
    }
