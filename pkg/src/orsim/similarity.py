"""Visual, objectness and repulsion terms and their product, the OR similarity.

All scores for one probe come from a single similarity matrix whose row 0 is
the probe and rows 1..n_q are its same-frame neighbors::

    S[i, j]       = cosine(query_i, gallery_j)
    objectness_j  = exp(det_score_j - 1)
    N_j           = argmax_i S[i, j]                (first index on ties)
    gap_j         = S[0, j] - S[N_j, j]             (always <= 0)
    repulsion_j   = exp(gap_j / S[N_j, j])
    combined_j    = S[0, j] * repulsion_j * objectness_j
"""

from __future__ import annotations

import enum
from collections.abc import Sequence as SequenceABC
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from .core import Embedding, GalleryItem, ProbeContext, check_same_dim
from .errors import DimensionMismatch, EmptyGallery, EmptyRow, OutOfRange, ValidationError, ZeroVector

# Rows whose best query-side similarity is at or below this carry no
# repulsion information; the term is fixed to 1 for them.
EPS_DEN = 1e-6


class ScoringMode(str, enum.Enum):
    VISUAL = "visual"
    VISUAL_O = "o"
    VISUAL_R = "r"
    VISUAL_OR = "or"

    @property
    def uses_objectness(self) -> bool:
        return self in (ScoringMode.VISUAL_O, ScoringMode.VISUAL_OR)

    @property
    def uses_repulsion(self) -> bool:
        return self in (ScoringMode.VISUAL_R, ScoringMode.VISUAL_OR)

    @property
    def label(self) -> str:
        return {"visual": "Visual", "o": "+O", "r": "+R", "or": "+OR"}[self.value]

    @classmethod
    def parse(cls, text: str) -> "ScoringMode":
        key = text.strip().lower()
        aliases = {"visual": "visual", "v": "visual", "o": "o", "visualo": "o",
                   "r": "r", "visualr": "r", "or": "or", "visualor": "or"}
        if key not in aliases:
            raise ValueError(f"unknown scoring mode {text!r}; expected one of visual, o, r, or")
        return cls(aliases[key])


ALL_MODES = (ScoringMode.VISUAL, ScoringMode.VISUAL_O, ScoringMode.VISUAL_R, ScoringMode.VISUAL_OR)


@dataclass(frozen=True)
class ScoreBreakdown:
    visual: float
    objectness: float
    repulsion: float
    gap: float
    nearest_query_index: int
    combined: float


class ScoreTable(SequenceABC):
    """Column-wise batch of :class:`ScoreBreakdown` records.

    Indexing with an int returns a ScoreBreakdown; ``take`` reorders rows.
    """

    __slots__ = ("visual", "objectness", "repulsion", "gap", "nearest", "combined")

    def __init__(self, visual, objectness, repulsion, gap, nearest, combined):
        self.visual = np.asarray(visual, dtype=np.float64)
        self.objectness = np.asarray(objectness, dtype=np.float64)
        self.repulsion = np.asarray(repulsion, dtype=np.float64)
        self.gap = np.asarray(gap, dtype=np.float64)
        self.nearest = np.asarray(nearest, dtype=np.int64)
        self.combined = np.asarray(combined, dtype=np.float64)

    def __len__(self):
        return int(self.combined.shape[0])

    def __getitem__(self, j):
        if isinstance(j, slice):
            return self.take(np.arange(len(self))[j])
        return ScoreBreakdown(
            visual=float(self.visual[j]),
            objectness=float(self.objectness[j]),
            repulsion=float(self.repulsion[j]),
            gap=float(self.gap[j]),
            nearest_query_index=int(self.nearest[j]),
            combined=float(self.combined[j]),
        )

    def take(self, idx) -> "ScoreTable":
        return ScoreTable(self.visual[idx], self.objectness[idx], self.repulsion[idx],
                          self.gap[idx], self.nearest[idx], self.combined[idx])

    def columns(self):
        return (self.visual, self.objectness, self.repulsion, self.gap, self.nearest, self.combined)

    def __eq__(self, other):
        if not isinstance(other, ScoreTable):
            return NotImplemented
        return all(a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self.columns(), other.columns()))

    __hash__ = None

    def for_mode(self, mode: ScoringMode) -> "ScoreTable":
        """Rescore under ``mode`` from a table that holds both extra terms."""
        n = len(self)
        obj = self.objectness if mode.uses_objectness else np.ones(n)
        if mode.uses_repulsion:
            rep, gap, nearest = self.repulsion, self.gap, self.nearest
        else:
            rep, gap, nearest = np.ones(n), np.zeros(n), np.zeros(n, dtype=np.int64)
        return ScoreTable(self.visual, obj, rep, gap, nearest, self.visual * rep * obj)


def cosine_from_grid(dots, sq_left, sq_right):
    """Cosine from exact grid dot products and squared grid norms, clipped to [-1, 1]."""
    return np.clip(dots / np.sqrt(sq_left * sq_right), -1.0, 1.0)


def visual_similarity(fq: Embedding, fg: Embedding) -> float:
    """``1 - |n(fq) - n(fg)|^2 / 2`` for unit vectors ``n(.)``, i.e. their cosine."""
    if fq.dim != fg.dim:
        raise DimensionMismatch(f"dimensions differ: {fq.dim} vs {fg.dim}")
    dot = np.dot(fq.grid, fg.grid)
    return float(cosine_from_grid(dot, fq.grid_sq, fg.grid_sq))


def objectness_term(det_score):
    """``exp(det_score - 1)``; accepts a scalar or an array of scores in [0, 1]."""
    arr = np.asarray(det_score, dtype=np.float64)
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise OutOfRange(f"detection scores must lie in [0, 1], got {det_score!r}")
    out = np.exp(arr - 1.0)
    return float(out) if out.ndim == 0 else out


def repulsion_terms(sims: np.ndarray):
    """Vectorized repulsion over the columns of a (n_q + 1, n) similarity matrix.

    Returns ``(repulsion, gap, nearest)`` arrays of length n.
    """
    sims = np.asarray(sims, dtype=np.float64)
    if sims.ndim != 2 or sims.shape[0] == 0:
        raise EmptyRow("similarity rows must have at least the probe entry")
    n = sims.shape[1]
    cols = np.arange(n)
    nearest = np.argmax(sims, axis=0).astype(np.int64)
    best = sims[nearest, cols]
    gap = sims[0] - best
    repulsion = np.ones(n)
    uninformative = best <= EPS_DEN
    active = (nearest != 0) & ~uninformative
    if active.any():
        repulsion[active] = np.exp(gap[active] / best[active])
    gap[uninformative] = 0.0
    nearest[uninformative] = 0
    return repulsion, gap, nearest


def repulsion_term(row) -> Tuple[float, float, int]:
    """Repulsion for one gallery item given ``[S_0j, S_1j, ..., S_nq j]``."""
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    if row.size == 0:
        raise EmptyRow("empty similarity row")
    rep, gap, nearest = repulsion_terms(row[:, None])
    return float(rep[0]), float(gap[0]), int(nearest[0])


def scores_from_similarities(sims: np.ndarray, det_scores: np.ndarray, mode: ScoringMode,
                       objectness: np.ndarray = None) -> ScoreTable:
    n = sims.shape[1]
    visual = sims[0]
    if mode.uses_repulsion:
        rep, gap, nearest = repulsion_terms(sims)
    else:
        rep, gap, nearest = np.ones(n), np.zeros(n), np.zeros(n, dtype=np.int64)
    if mode.uses_objectness:
        obj = objectness if objectness is not None else objectness_term(det_scores)
    else:
        obj = np.ones(n)
    return ScoreTable(visual, obj, rep, gap, nearest, visual * rep * obj)


class GalleryIndex:
    """Stacked, grid-quantized gallery embeddings plus per-item metadata."""

    def __init__(self, items: Sequence[GalleryItem]):
        items = tuple(items)
        if not items:
            raise EmptyGallery("gallery is empty")
        self.dim = check_same_dim(items)
        self.items = items
        self.ids = np.array([it.item_id for it in items], dtype=object)
        if len(set(self.ids.tolist())) != len(items):
            raise ValidationError("gallery contains duplicate item_ids")
        self.item_array = np.empty(len(items), dtype=object)
        self.item_array[:] = items
        grids = []
        for it in items:
            try:
                grids.append(it.embedding.grid)
            except ZeroVector as exc:
                raise ZeroVector(f"item {it.item_id!r}: {exc}") from None
        self.grid = np.ascontiguousarray(np.vstack(grids))
        self.sq = np.array([it.embedding.grid_sq for it in items])
        self.det_scores = np.array([it.det_score for it in items])
        self.objectness = objectness_term(self.det_scores)
        self.frame_ids = np.array([it.frame_id for it in items], dtype=object)
        # position of each item in ascending item_id order, for tie-breaking
        order = sorted(range(len(items)), key=lambda k: items[k].item_id)
        self.id_rank = np.empty(len(items), dtype=np.int64)
        self.id_rank[order] = np.arange(len(items))

    def __len__(self):
        return len(self.items)

    @classmethod
    def coerce(cls, gallery) -> "GalleryIndex":
        return gallery if isinstance(gallery, cls) else cls(gallery)


def query_grid(ctx: ProbeContext, dim: int):
    queries = ctx.queries
    check_same_dim(queries, dim)
    grid = np.vstack([q.embedding.grid for q in queries])
    sq = np.array([q.embedding.grid_sq for q in queries])
    return grid, sq


def similarity_matrix(qgrid: np.ndarray, qsq: np.ndarray, index: GalleryIndex, cols=None) -> np.ndarray:
    g, gsq = (index.grid, index.sq) if cols is None else (index.grid[cols], index.sq[cols])
    return cosine_from_grid(qgrid @ g.T, qsq[:, None], gsq[None, :])


def score_columns(sims: np.ndarray, index: GalleryIndex, mode: ScoringMode, cols=None) -> ScoreTable:
    if cols is None:
        return scores_from_similarities(sims, index.det_scores, mode, index.objectness)
    return scores_from_similarities(sims, index.det_scores[cols], mode, index.objectness[cols])


def or_score_matrix(probe_ctx: ProbeContext, gallery: Union[Sequence[GalleryItem], GalleryIndex],
                    mode: ScoringMode = ScoringMode.VISUAL_OR) -> ScoreTable:
    """Score every gallery item against the probe; element j matches ``or_score(ctx, gallery[j])``."""
    mode = ScoringMode(mode)
    index = GalleryIndex.coerce(gallery)
    try:
        qgrid, qsq = query_grid(probe_ctx, index.dim)
    except DimensionMismatch as exc:
        raise DimensionMismatch(f"probe context vs gallery: {exc}") from None
    sims = similarity_matrix(qgrid, qsq, index)
    return score_columns(sims, index, mode)


def or_score(probe_ctx: ProbeContext, item: GalleryItem,
             mode: ScoringMode = ScoringMode.VISUAL_OR) -> ScoreBreakdown:
    return or_score_matrix(probe_ctx, [item], mode)[0]


def mode_tables(probe_ctx: ProbeContext, gallery, modes: Iterable[ScoringMode] = ALL_MODES):
    """All requested modes from one similarity matrix."""
    full = or_score_matrix(probe_ctx, gallery, ScoringMode.VISUAL_OR)
    return {ScoringMode(m): full.for_mode(ScoringMode(m)) for m in modes}
