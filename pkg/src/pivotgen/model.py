"""The four networks: vision encoder, pivot text encoder, multilingual
encoder, and the multilingual decoder.

Every encoder maps its input to a unit-norm d-dimensional coordinate in
the shared latent space (a plain float32 `(d,)` array at the single-item
level, rows of a `(B, d)` Tensor in batched training paths). The decoder
generates conditioned on one such coordinate via cross-attention to a
length-1 memory.

Layout is pre-norm transformer blocks with learned positions; the
decoder ties its input embedding with the output projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BOS_IDS, EOS_ID, PAD_ID, VOCAB_SIZE, TokenSequence
from .tensor import (
    ShapeError,
    Tensor,
    add,
    cross_entropy_rows,
    embedding,
    gelu,
    l2_normalize,
    matmul,
    mul,
    reshape,
    scale,
    slice_,
    softmax,
    sum_,
    take_positions,
    transpose,
)
from .tensor import layer_norm as ln_op

NEG_INF = np.float32(-1e9)


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    max_len: int = 24
    vocab_size: int = VOCAB_SIZE
    v_dim: int = 64

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"latent dim {self.d} not divisible by {self.heads} heads")

    def to_dict(self) -> dict:
        return dict(vars(self))


class Parameters:
    """Named tensor collection with per-tensor frozen flags.

    Freezing both removes a tensor from optimizer updates and turns off
    gradient tracking for it, so frozen tensors stay bit-identical
    through any number of training steps.
    """

    def __init__(self):
        self.tensors: dict[str, Tensor] = {}
        self.frozen: set[str] = set()

    def add(self, name: str, data: np.ndarray) -> None:
        if name in self.tensors:
            raise ValueError(f"duplicate parameter name: {name}")
        self.tensors[name] = Tensor(data, requires_grad=True)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def freeze(self, prefix: str) -> None:
        hits = [n for n in self.tensors if n.startswith(prefix)]
        if not hits:
            raise ValueError(f"no parameters match prefix {prefix!r}")
        self.frozen.update(hits)
        self._sync_flags()

    def unfreeze(self, prefix: str) -> None:
        self.frozen = {n for n in self.frozen if not n.startswith(prefix)}
        self._sync_flags()

    def unfreeze_all(self) -> None:
        self.frozen.clear()
        self._sync_flags()

    def _sync_flags(self) -> None:
        for name, t in self.tensors.items():
            t.requires_grad = name not in self.frozen

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.tensors.items() if n not in self.frozen]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "Parameters":
        dup = Parameters()
        for name, t in self.tensors.items():
            dup.add(name, t.data.copy())
        dup.frozen = set(self.frozen)
        dup._sync_flags()
        return dup

    def snapshot(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items() if n.startswith(prefix)}


def init_parameters(cfg: ModelConfig, seed: int) -> Parameters:
    """Fresh parameters for all four sub-networks: N(0, 0.02) weights,
    zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9A9]))
    p = Parameters()

    def w(name: str, *shape: int) -> None:
        p.add(name, rng.normal(0.0, 0.02, size=shape).astype(np.float32))

    def zeros(name: str, *shape: int) -> None:
        p.add(name, np.zeros(shape, dtype=np.float32))

    def ones(name: str, *shape: int) -> None:
        p.add(name, np.ones(shape, dtype=np.float32))

    d, f, v = cfg.d, cfg.d * cfg.ffn_mult, cfg.vocab_size

    w("vis.fc1.w", cfg.v_dim, f)
    zeros("vis.fc1.b", f)
    w("vis.fc2.w", f, d)
    zeros("vis.fc2.b", d)

    for enc in ("piv", "mul"):
        w(f"{enc}.tok", v, d)
        w(f"{enc}.pos", cfg.max_len, d)
        for i in range(cfg.enc_layers):
            base = f"{enc}.l{i}"
            ones(f"{base}.ln1.g", d)
            zeros(f"{base}.ln1.b", d)
            for proj in ("wq", "wk", "wv", "wo"):
                w(f"{base}.attn.{proj}", d, d)
            for b in ("bq", "bk", "bv", "bo"):
                zeros(f"{base}.attn.{b}", d)
            ones(f"{base}.ln2.g", d)
            zeros(f"{base}.ln2.b", d)
            w(f"{base}.ffn.w1", d, f)
            zeros(f"{base}.ffn.b1", f)
            w(f"{base}.ffn.w2", f, d)
            zeros(f"{base}.ffn.b2", d)
        ones(f"{enc}.lnf.g", d)
        zeros(f"{enc}.lnf.b", d)
        w(f"{enc}.proj.w", d, d)
        zeros(f"{enc}.proj.b", d)

    w("dec.tok", v, d)
    w("dec.pos", cfg.max_len + 1, d)
    for i in range(cfg.dec_layers):
        base = f"dec.l{i}"
        for j, attn in enumerate(("self", "cross")):
            ones(f"{base}.ln{j + 1}.g", d)
            zeros(f"{base}.ln{j + 1}.b", d)
            for proj in ("wq", "wk", "wv", "wo"):
                w(f"{base}.{attn}.{proj}", d, d)
            for b in ("bq", "bk", "bv", "bo"):
                zeros(f"{base}.{attn}.{b}", d)
        ones(f"{base}.ln3.g", d)
        zeros(f"{base}.ln3.b", d)
        w(f"{base}.ffn.w1", d, f)
        zeros(f"{base}.ffn.b1", f)
        w(f"{base}.ffn.w2", f, d)
        zeros(f"{base}.ffn.b2", d)
    ones("dec.lnf.g", d)
    zeros("dec.lnf.b", d)
    zeros("dec.out.b", v)
    return p


# -- building blocks ---------------------------------------------------------


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def _layer_norm(p: Parameters, base: str, x: Tensor) -> Tensor:
    return ln_op(x, p[f"{base}.g"], p[f"{base}.b"])


def _mha(p: Parameters, base: str, x: Tensor, kv: Tensor, heads: int, mask: np.ndarray | None) -> Tensor:
    """Multi-head attention of queries x over keys/values kv; `mask` is
    an additive array broadcastable to (B, H, Tq, Tk)."""
    b_sz, tq, d = x.shape
    tk = kv.shape[1]
    dh = d // heads

    def split(t: Tensor, tlen: int) -> Tensor:
        return transpose(reshape(t, (b_sz, tlen, heads, dh)), (0, 2, 1, 3))

    q = split(_linear(x, p[f"{base}.wq"], p[f"{base}.bq"]), tq)
    k = split(_linear(kv, p[f"{base}.wk"], p[f"{base}.bk"]), tk)
    v = split(_linear(kv, p[f"{base}.wv"], p[f"{base}.bv"]), tk)

    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    if mask is not None:
        scores = add(scores, Tensor(mask))
    ctx = matmul(softmax(scores), v)
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b_sz, tq, d))
    return _linear(merged, p[f"{base}.wo"], p[f"{base}.bo"])


def _ffn(p: Parameters, base: str, x: Tensor) -> Tensor:
    h = gelu(_linear(x, p[f"{base}.w1"], p[f"{base}.b1"]))
    return _linear(h, p[f"{base}.w2"], p[f"{base}.b2"])


def _embed(p: Parameters, prefix: str, ids: np.ndarray, cfg: ModelConfig) -> Tensor:
    t = ids.shape[1]
    limit = p[f"{prefix}.pos"].shape[0]
    if t > limit:
        raise ShapeError(f"sequence length {t} exceeds position table of {limit}")
    tok = embedding(p[f"{prefix}.tok"], ids)
    pos = slice_(p[f"{prefix}.pos"], slice(0, t))
    return add(tok, pos)


def encoder_forward(p: Parameters, prefix: str, ids: np.ndarray, cfg: ModelConfig) -> Tensor:
    """Bidirectional pre-norm encoder stack: (B, T) ids -> (B, T, d)."""
    pad_mask = np.where(ids == PAD_ID, NEG_INF, np.float32(0.0)).astype(np.float32)
    mask = pad_mask[:, None, None, :]
    x = _embed(p, prefix, ids, cfg)
    for i in range(cfg.enc_layers):
        base = f"{prefix}.l{i}"
        normed = _layer_norm(p, f"{base}.ln1", x)
        x = add(x, _mha(p, f"{base}.attn", normed, normed, cfg.heads, mask))
        x = add(x, _ffn(p, f"{base}.ffn", _layer_norm(p, f"{base}.ln2", x)))
    return _layer_norm(p, f"{prefix}.lnf", x)


def pad_rows(seqs: list[TokenSequence]) -> np.ndarray:
    t = max(len(s.ids) for s in seqs)
    ids = np.full((len(seqs), t), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s.ids)] = s.ids
    return ids


# -- encoders ----------------------------------------------------------------


def encode_vision_batch(p: Parameters, cfg: ModelConfig, frames: np.ndarray) -> Tensor:
    """(B, F, v_dim) frame stacks -> (B, d) unit-norm coordinates."""
    if frames.ndim != 3 or frames.shape[2] != cfg.v_dim:
        raise ShapeError(f"vision frames shape {frames.shape} does not match (B, F, {cfg.v_dim})")
    x = Tensor(frames)
    h = gelu(_linear(x, p["vis.fc1.w"], p["vis.fc1.b"]))
    z = _linear(h, p["vis.fc2.w"], p["vis.fc2.b"])
    pooled = scale(sum_(z, axis=1), 1.0 / frames.shape[1])
    return l2_normalize(pooled)


def encode_pivot_batch(p: Parameters, cfg: ModelConfig, seqs: list[TokenSequence]) -> Tensor:
    """Pivot-language sequences -> (B, d) coordinates, pooled at EOS."""
    for s in seqs:
        if s.lang != "L0":
            raise ValueError(f"pivot encoder only accepts L0, got {s.lang}")
        if EOS_ID not in s.ids:
            raise ValueError("pivot encoder needs an EOS token in the sequence")
    ids = pad_rows(seqs)
    h = encoder_forward(p, "piv", ids, cfg)
    eos_pos = np.array([list(s.ids).index(EOS_ID) for s in seqs])
    pooled = take_positions(h, eos_pos)
    return l2_normalize(_linear(pooled, p["piv.proj.w"], p["piv.proj.b"]))


def encode_multi_batch(p: Parameters, cfg: ModelConfig, seqs: list[TokenSequence]) -> Tensor:
    """Any-language sequences -> (B, d) coordinates, mean-pooled over
    non-PAD positions."""
    for s in seqs:
        if len(s.ids) == 0:
            raise ValueError("multilingual encoder got an empty sequence")
    ids = pad_rows(seqs)
    h = encoder_forward(p, "mul", ids, cfg)
    valid = (ids != PAD_ID).astype(np.float32)
    counts = valid.sum(axis=1, keepdims=True)
    summed = sum_(mul(h, Tensor(valid[:, :, None])), axis=1)
    pooled = mul(summed, Tensor(1.0 / counts))
    return l2_normalize(_linear(pooled, p["mul.proj.w"], p["mul.proj.b"]))


def encode_vision(item, p: Parameters, cfg: ModelConfig) -> np.ndarray:
    return encode_vision_batch(p, cfg, item.frames[None, :, :]).data[0].copy()


def encode_pivot(seq: TokenSequence, p: Parameters, cfg: ModelConfig) -> np.ndarray:
    return encode_pivot_batch(p, cfg, [seq]).data[0].copy()


def encode_multi(seq: TokenSequence, p: Parameters, cfg: ModelConfig) -> np.ndarray:
    return encode_multi_batch(p, cfg, [seq]).data[0].copy()


# -- decoder -----------------------------------------------------------------


def causal_mask(t: int) -> np.ndarray:
    m = np.triu(np.full((t, t), NEG_INF, dtype=np.float32), k=1)
    return m[None, None, :, :]


def decoder_forward(p: Parameters, cfg: ModelConfig, prefix_ids: np.ndarray, coords: Tensor) -> Tensor:
    """Teacher-forced decoder: (B, T) prefix ids + (B, d) coordinates ->
    (B, T, vocab) next-token logits.

    Causal self-attention over the prefix, cross-attention to a length-1
    memory holding the coordinate, tied output embedding.
    """
    b_sz, t = prefix_ids.shape
    x = _embed(p, "dec", prefix_ids, cfg)
    memory = reshape(coords, (b_sz, 1, cfg.d))
    cmask = causal_mask(t)
    for i in range(cfg.dec_layers):
        base = f"dec.l{i}"
        normed = _layer_norm(p, f"{base}.ln1", x)
        x = add(x, _mha(p, f"{base}.self", normed, normed, cfg.heads, cmask))
        x = add(x, _mha(p, f"{base}.cross", _layer_norm(p, f"{base}.ln2", x), memory, cfg.heads, None))
        x = add(x, _ffn(p, f"{base}.ffn", _layer_norm(p, f"{base}.ln3", x)))
    x = _layer_norm(p, "dec.lnf", x)
    return add(matmul(x, transpose(p["dec.tok"])), p["dec.out.b"])


def decode_step(coord: np.ndarray, prefix: list[int], lang: str, p: Parameters, cfg: ModelConfig) -> np.ndarray:
    """Next-token logits after `prefix`, which must start with the
    language's begin token."""
    if lang not in BOS_IDS:
        raise ValueError(f"unknown language {lang!r}; expected one of {sorted(BOS_IDS)}")
    if not prefix or prefix[0] != BOS_IDS[lang]:
        raise ValueError(f"prefix must start with the {lang} begin token (id {BOS_IDS[lang]})")
    ids = np.asarray(prefix, dtype=np.int64)[None, :]
    logits = decoder_forward(p, cfg, ids, Tensor(coord[None, :]))
    return logits.data[0, -1].copy()


# -- reconstruction loss over batches ------------------------------------------


def sequence_loss(p: Parameters, cfg: ModelConfig, coords: Tensor, targets: list[TokenSequence]) -> Tensor:
    """Teacher-forced cross-entropy, mean over positions per sequence,
    then mean over the batch. Targets end with EOS; the decoder input is
    BOS_lang followed by the target shifted right."""
    b_sz = len(targets)
    t = max(len(s.ids) for s in targets)
    prefix = np.full((b_sz, t), PAD_ID, dtype=np.int64)
    tgt = np.full((b_sz, t), PAD_ID, dtype=np.int64)
    weights = np.zeros((b_sz, t), dtype=np.float32)
    for i, s in enumerate(targets):
        n = len(s.ids)
        prefix[i, 0] = BOS_IDS[s.lang]
        prefix[i, 1:n] = s.ids[:-1]
        tgt[i, :n] = s.ids
        weights[i, :n] = 1.0 / n
    logits = decoder_forward(p, cfg, prefix, coords)
    flat = reshape(logits, (b_sz * t, cfg.vocab_size))
    losses = cross_entropy_rows(flat, tgt.reshape(-1))
    weighted = mul(losses, Tensor(weights.reshape(-1)))
    return scale(sum_(weighted), 1.0 / b_sz)


def token_accuracy(p: Parameters, cfg: ModelConfig, coords: Tensor, targets: list[TokenSequence]) -> float:
    """Teacher-forced argmax accuracy over non-PAD target positions."""
    b_sz = len(targets)
    t = max(len(s.ids) for s in targets)
    prefix = np.full((b_sz, t), PAD_ID, dtype=np.int64)
    tgt = np.full((b_sz, t), PAD_ID, dtype=np.int64)
    for i, s in enumerate(targets):
        n = len(s.ids)
        prefix[i, 0] = BOS_IDS[s.lang]
        prefix[i, 1:n] = s.ids[:-1]
        tgt[i, :n] = s.ids
    logits = decoder_forward(p, cfg, prefix, coords).data
    pred = logits.argmax(axis=2)
    mask = tgt != PAD_ID
    return float((pred[mask] == tgt[mask]).mean())
