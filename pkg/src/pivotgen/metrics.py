"""Text metrics and alignment diagnostics.

BLEU-4 is corpus-level with clipped n-gram counts pooled before the
ratios, quarter weights, brevity penalty min(1, e^(1-r/c)), and add-one
smoothing applied only to n >= 2 precisions whose match count is zero
(unigram precision is never smoothed). ROUGE-L is the LCS F-measure with
beta = 1.2, max over references. Retrieval diagnostics quantify how well
two coordinate sets line up: matched/cross cosines and recall@K with
ties broken toward the lower index.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

ROUGE_BETA = 1.2


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidates: list[Sequence], references: list[Sequence]) -> float:
    """Corpus BLEU-4 over token sequences, one reference per candidate."""
    if not candidates:
        raise ValueError("bleu4 needs a non-empty corpus")
    if len(candidates) != len(references):
        raise ValueError(f"bleu4 got {len(candidates)} candidates but {len(references)} references")
    matches = [0] * 5
    totals = [0] * 5
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, 5):
            cand_counts = _ngrams(cand, n)
            ref_counts = _ngrams(ref, n)
            totals[n] += max(0, len(cand) - n + 1)
            matches[n] += sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
    if cand_len == 0 or matches[1] == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        if n >= 2 and matches[n] == 0:
            p = 1.0 / (totals[n] + 1)
        else:
            p = matches[n] / totals[n]
        log_sum += 0.25 * math.log(p)
    brevity = min(1.0, math.exp(1.0 - ref_len / cand_len))
    return brevity * math.exp(log_sum)


def _lcs_len(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence, references: list[Sequence]) -> float:
    """LCS F-measure (beta = 1.2), max over references."""
    if not len(candidate) or not references or any(not len(r) for r in references):
        raise ValueError("rouge_l needs non-empty candidate and references")
    best = 0.0
    b2 = ROUGE_BETA**2
    for ref in references:
        lcs = _lcs_len(candidate, ref)
        if lcs == 0:
            continue
        prec = lcs / len(candidate)
        rec = lcs / len(ref)
        best = max(best, (1 + b2) * prec * rec / (rec + b2 * prec))
    return best


def corpus_rouge_l(candidates: list[Sequence], references: list[Sequence]) -> float:
    if len(candidates) != len(references):
        raise ValueError(f"rouge got {len(candidates)} candidates but {len(references)} references")
    return float(np.mean([rouge_l(c, [r]) for c, r in zip(candidates, references)]))


@dataclass
class MetricReport:
    bleu4: float
    rougeL: float
    per_language: dict[str, dict[str, float]] = field(default_factory=dict)
    sample_count: int = 0

    def __post_init__(self):
        if not (0 <= self.bleu4 <= 1 and 0 <= self.rougeL <= 1):
            raise ValueError(f"metric values out of [0, 1]: bleu4={self.bleu4}, rougeL={self.rougeL}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def score_corpus(candidates: list[Sequence], references: list[Sequence], langs: list[str] | None = None) -> MetricReport:
    """BLEU-4 + ROUGE-L for a corpus, with a per-language breakdown when
    each item carries a language tag."""
    report = MetricReport(
        bleu4=bleu4(candidates, references),
        rougeL=corpus_rouge_l(candidates, references),
        sample_count=len(candidates),
    )
    if langs:
        for lang in sorted(set(langs)):
            sel = [i for i, l in enumerate(langs) if l == lang]
            report.per_language[lang] = {
                "bleu4": bleu4([candidates[i] for i in sel], [references[i] for i in sel]),
                "rougeL": corpus_rouge_l([candidates[i] for i in sel], [references[i] for i in sel]),
            }
    return report


@dataclass
class PairDiagnostics:
    matched_cosine: float
    cross_cosine: float
    recall_at_1: float
    recall_at_5: float

    def __post_init__(self):
        if not 0 <= self.recall_at_1 <= self.recall_at_5 <= 1:
            raise ValueError(f"inconsistent recalls: @1={self.recall_at_1}, @5={self.recall_at_5}")


@dataclass
class AlignmentReport:
    pairs: dict[str, PairDiagnostics] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({k: asdict(v) for k, v in self.pairs.items()}, indent=2)


def retrieval_diagnostics(coords_a: np.ndarray, coords_b: np.ndarray) -> PairDiagnostics:
    """Rows of `coords_a` query `coords_b`; row k's true match is row k."""
    a = np.asarray(coords_a, dtype=np.float32)
    b = np.asarray(coords_b, dtype=np.float32)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] < 2:
        raise ValueError(f"need two equal (N>=2, d) coordinate sets, got {a.shape} and {b.shape}")
    a = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    b = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    sims = a @ b.T
    n = sims.shape[0]
    diag = np.diag(sims)
    # rank of the true match per row; earlier index wins ties
    better = sims > diag[:, None]
    tied_earlier = (sims == diag[:, None]) & (np.arange(n)[None, :] < np.arange(n)[:, None])
    ranks = better.sum(axis=1) + tied_earlier.sum(axis=1)
    cross = (sims.sum() - diag.sum()) / (n * (n - 1))
    return PairDiagnostics(
        matched_cosine=float(diag.mean()),
        cross_cosine=float(cross),
        recall_at_1=float((ranks < 1).mean()),
        recall_at_5=float((ranks < 5).mean()),
    )
