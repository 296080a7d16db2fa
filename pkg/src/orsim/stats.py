"""Dataset statistics: detection-score histograms and the repulsion pair census."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .core import Embedding
from .dataset import Dataset, build_probe_context, true_positives
from .errors import ValidationError
from .similarity import GalleryIndex, query_grid, similarity_matrix


@dataclass
class ScoreHistograms:
    edges: np.ndarray
    positive: np.ndarray
    distractor: np.ndarray

    def fraction_above(self, which: str, threshold: float) -> float:
        """Mass fraction in bins whose lower edge is >= threshold."""
        counts = getattr(self, which)
        total = counts.sum()
        if total == 0:
            return 0.0
        return float(counts[self.edges[:-1] >= threshold - 1e-12].sum() / total)

    def fraction_below(self, which: str, threshold: float) -> float:
        counts = getattr(self, which)
        total = counts.sum()
        if total == 0:
            return 0.0
        return float(counts[self.edges[1:] <= threshold + 1e-12].sum() / total)


def detection_score_histogram(ds: Dataset, bins: int = 20) -> ScoreHistograms:
    """Uniform bins on [0, 1] (last bin closed) for labeled vs unlabeled detections."""
    if bins < 2:
        raise ValidationError(f"bins must be >= 2, got {bins}")
    edges = np.linspace(0.0, 1.0, bins + 1)
    pos = [it.det_score for it in ds.items if it.person_id is not None]
    dis = [it.det_score for it in ds.items if it.person_id is None]
    return ScoreHistograms(
        edges=edges,
        positive=np.histogram(pos, bins=edges)[0],
        distractor=np.histogram(dis, bins=edges)[0],
    )


def raw_fraction(ds: Dataset, labeled: bool, threshold: float, above: bool = True) -> float:
    scores = np.array([it.det_score for it in ds.items if (it.person_id is not None) == labeled])
    if scores.size == 0:
        return 0.0
    return float(np.mean(scores > threshold if above else scores < threshold))


def is_bimodal(counts, dip_ratio: float = 0.6, min_share: float = 0.05) -> bool:
    """True when two bins, each holding >= ``min_share`` of the mass, are
    separated by a bin lower than ``dip_ratio`` times the smaller of them."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total == 0:
        return False
    n = len(counts)
    for i in range(n):
        if counts[i] < min_share * total:
            continue
        for k in range(i + 2, n):
            if counts[k] < min_share * total:
                continue
            if counts[i + 1:k].min() < dip_ratio * min(counts[i], counts[k]):
                return True
    return False


Scorer = Callable[[Embedding, Embedding], float]


def repulsion_pair_census(ds: Dataset, scorer: Optional[Scorer] = None) -> Tuple[int, int]:
    """Count (probe, true positive) pairs where the positive is strictly closer
    to the probe than to every neighbor (satisfied) versus not (violated).

    Uses the visual term; ``scorer(f_query, f_gallery)`` replaces it if given.
    """
    satisfied = violated = 0
    index = None
    for pid in ds.probes:
        ctx = build_probe_context(ds, pid)
        positives = true_positives(ds, ctx.probe)
        if not positives:
            continue
        if not ctx.neighbors:
            satisfied += len(positives)
            continue
        if scorer is None:
            if index is None:
                index = GalleryIndex(ds.items)
                pos_of = {it.item_id: k for k, it in enumerate(ds.items)}
            cols = np.array([pos_of[p.item_id] for p in positives])
            qgrid, qsq = query_grid(ctx, index.dim)
            sims = similarity_matrix(qgrid, qsq, index, cols)
        else:
            sims = np.array([[scorer(q.embedding, p.embedding) for p in positives] for q in ctx.queries])
        ok = sims[0] > sims[1:].max(axis=0)
        satisfied += int(ok.sum())
        violated += int((~ok).sum())
    return satisfied, violated
