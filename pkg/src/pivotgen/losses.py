"""Training objectives: bidirectional InfoNCE, MSE, their weighted
combination for cross-domain alignment, plus the denoising
reconstruction loss and its two corruption knobs.

On unit-norm rows the MSE identity (1/2K)·Σ‖s−d‖² = (1/K)·Σ(1−cos)
holds, so both alignment losses operate on cosine geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BOS_IDS, TokenSequence
from .model import ModelConfig, Parameters, sequence_loss
from .tensor import Tensor, add, cross_entropy_rows, matmul, mean, mul, scale, sub, sum_, transpose


@dataclass
class AlignmentBatch:
    """K matched coordinate rows: s[k] (pivot side) pairs with d[k]."""

    s: Tensor
    d: Tensor

    def __post_init__(self):
        if self.s.ndim != 2 or self.s.shape != self.d.shape:
            raise ValueError(f"alignment batch needs matching (K, d) matrices, got {self.s.shape} and {self.d.shape}")

    @property
    def k(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class LossWeights:
    lam1: float = 1.0  # InfoNCE
    lam2: float = 0.0  # MSE
    tau: float = 0.07

    def __post_init__(self):
        if not (0.0 <= self.lam1 <= 1.0 and 0.0 <= self.lam2 <= 1.0):
            raise ValueError(f"loss weights must be in [0, 1], got ({self.lam1}, {self.lam2})")
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


def _check_unit_rows(batch: AlignmentBatch, tol: float = 1e-3) -> None:
    for name, t in (("s", batch.s), ("d", batch.d)):
        norms = np.linalg.norm(t.data, axis=1)
        off = np.abs(norms - 1.0).max()
        if off > tol:
            raise ValueError(f"InfoNCE needs unit-norm rows; {name} deviates by {off:.2e}")


def info_nce(batch: AlignmentBatch, tau: float) -> Tensor:
    """Symmetric in-batch contrastive loss over cosine similarities.

    Matched pairs sit on the diagonal of the K x K similarity matrix;
    each direction is a mean row-wise cross-entropy against that
    diagonal, and the two directions are averaged.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    _check_unit_rows(batch)
    logits = scale(matmul(batch.s, transpose(batch.d)), 1.0 / tau)
    diag = np.arange(batch.k)
    loss_sd = mean(cross_entropy_rows(logits, diag))
    loss_ds = mean(cross_entropy_rows(transpose(logits), diag))
    return scale(add(loss_sd, loss_ds), 0.5)


def mse(batch: AlignmentBatch) -> Tensor:
    """(1/2K) · Σ_k ‖s_k − d_k‖²."""
    diff = sub(batch.s, batch.d)
    return scale(sum_(mul(diff, diff)), 0.5 / batch.k)


def cda_loss(batch: AlignmentBatch, w: LossWeights) -> Tensor:
    """Weighted cross-domain alignment objective: lam1·InfoNCE + lam2·MSE."""
    terms = []
    if w.lam1 != 0.0:
        terms.append(scale(info_nce(batch, w.tau), w.lam1))
    if w.lam2 != 0.0:
        terms.append(scale(mse(batch), w.lam2))
    if not terms:
        return Tensor(np.zeros(()))
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total


def perturb_coordinate(c: np.ndarray, eps: float, seed: int) -> np.ndarray:
    """Additive Gaussian feature corruption, std = eps (training only).

    The result is intentionally not re-normalized.
    """
    if eps < 0:
        raise ValueError(f"noise std must be >= 0, got {eps}")
    if eps == 0:
        return np.asarray(c, dtype=np.float32).copy()
    rng = np.random.default_rng(seed)
    return (np.asarray(c, dtype=np.float32) + rng.normal(0.0, eps, size=np.shape(c))).astype(np.float32)


def perturb_rows(coords: np.ndarray, eps: float, rng: np.random.Generator, renormalize: bool = False) -> np.ndarray:
    """Batch variant drawing from an already-seeded generator."""
    if eps == 0 and not renormalize:
        return coords
    out = coords + rng.normal(0.0, eps, size=coords.shape).astype(np.float32) if eps > 0 else coords.copy()
    if renormalize:
        out = out / np.maximum(np.linalg.norm(out, axis=-1, keepdims=True), 1e-12)
    return out.astype(np.float32)


def dlr_loss(c: np.ndarray | Tensor, target: TokenSequence, lang: str, p: Parameters, cfg: ModelConfig) -> Tensor:
    """Teacher-forced reconstruction loss of one sequence conditioned on
    coordinate c, mean over positions; the begin token selects `lang`."""
    if lang not in BOS_IDS:
        raise ValueError(f"unknown language {lang!r}; expected one of {sorted(BOS_IDS)}")
    if target.ids[-1] != 1:  # EOS_ID
        raise ValueError("reconstruction target must end with EOS")
    cond = c if isinstance(c, Tensor) else Tensor(np.asarray(c, dtype=np.float32))
    if cond.ndim == 1:
        cond = cond.reshape(1, cond.shape[0])
    return sequence_loss(p, cfg, cond, [TokenSequence(lang, target.ids)])
