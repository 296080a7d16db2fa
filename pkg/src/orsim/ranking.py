"""Deterministic ranked gallery lists, batch ranking and the TSV record format."""

from __future__ import annotations

import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Union

import numpy as np

from .core import GalleryItem, ProbeContext
from .errors import EmptyGallery, FormatError, InvalidK
from .similarity import (
    GalleryIndex,
    ScoreTable,
    ScoringMode,
    cosine_from_grid,
    query_grid,
    score_columns,
    similarity_matrix,
)

TSV_COLUMNS = ("probe_id", "rank", "item_id", "combined", "visual", "objectness",
               "repulsion", "gap", "nearest_query_index")


@dataclass(frozen=True, eq=False)
class RankedList:
    """Gallery items for one probe, by descending combined score then ascending item_id."""

    probe: GalleryItem
    mode: ScoringMode
    items: np.ndarray  # object array of GalleryItem, in rank order
    scores: ScoreTable

    @property
    def probe_id(self) -> str:
        return self.probe.item_id

    @property
    def item_ids(self) -> List[str]:
        return [it.item_id for it in self.items]

    @property
    def entries(self) -> List[tuple]:
        return [(it.item_id, self.scores[j]) for j, it in enumerate(self.items)]

    def __len__(self):
        return len(self.items)

    def __eq__(self, other):
        if not isinstance(other, RankedList):
            return NotImplemented
        return (self.probe_id == other.probe_id and self.mode == other.mode
                and self.item_ids == other.item_ids and self.scores == other.scores)

    __hash__ = None


def _rank_from_columns(ctx: ProbeContext, index: GalleryIndex, sims: np.ndarray, cols: np.ndarray,
                       mode: ScoringMode, top_k: Optional[int] = None) -> RankedList:
    table = score_columns(sims, index, mode, cols)
    order = np.lexsort((index.id_rank[cols], -table.combined))
    if top_k is not None:
        order = order[:top_k]
    return RankedList(ctx.probe, mode, index.item_array[cols][order], table.take(order))


def _columns_for(ctx: ProbeContext, index: GalleryIndex, exclude_probe_frame: bool, subset=None) -> np.ndarray:
    cols = np.arange(len(index)) if subset is None else np.asarray(subset, dtype=np.int64)
    if exclude_probe_frame:
        cols = cols[index.frame_ids[cols] != ctx.probe.frame_id]
    if cols.size == 0:
        raise EmptyGallery(f"no gallery items left for probe {ctx.probe.item_id!r}")
    return cols


def rank_gallery(probe_ctx: ProbeContext, gallery: Union[Sequence[GalleryItem], GalleryIndex],
                 mode: ScoringMode = ScoringMode.VISUAL_OR,
                 exclude_probe_frame: bool = True) -> RankedList:
    mode = ScoringMode(mode)
    index = GalleryIndex.coerce(gallery)
    cols = _columns_for(probe_ctx, index, exclude_probe_frame)
    qgrid, qsq = query_grid(probe_ctx, index.dim)
    sims = similarity_matrix(qgrid, qsq, index, cols)
    return _rank_from_columns(probe_ctx, index, sims, cols, mode)


def truncate_top_k(ranked: RankedList, k: int) -> RankedList:
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    if k >= len(ranked):
        return ranked
    return RankedList(ranked.probe, ranked.mode, ranked.items[:k], ranked.scores.take(slice(0, k)))


def _rank_block(contexts, index, modes, exclude_probe_frame, subsets, top_k):
    # one matmul for the union of query rows in the block; the grid dot
    # products are exact, so slicing afterwards is bitwise-neutral
    grids, sqs, spans = [], [], []
    start = 0
    for ctx in contexts:
        g, s = query_grid(ctx, index.dim)
        grids.append(g)
        sqs.append(s)
        spans.append((start, start + len(s)))
        start += len(s)
    qgrid = np.vstack(grids)
    qsq = np.concatenate(sqs)
    dots = qgrid @ index.grid.T
    out = {m: [] for m in modes}
    for n, ctx in enumerate(contexts):
        a, b = spans[n]
        cols = _columns_for(ctx, index, exclude_probe_frame, None if subsets is None else subsets[n])
        sims = cosine_from_grid(dots[a:b][:, cols], qsq[a:b, None], index.sq[None, cols])
        for m in modes:
            out[m].append(_rank_from_columns(ctx, index, sims, cols, m, top_k))
    return out


def default_threads() -> int:
    env = os.environ.get("OR_RANK_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def rank_probes(contexts: Sequence[ProbeContext], gallery, modes: Iterable[ScoringMode],
                exclude_probe_frame: bool = True, subsets: Optional[Sequence] = None,
                top_k: Optional[int] = None, threads: int = 1,
                block_size: int = 64) -> Dict[ScoringMode, List[RankedList]]:
    """Rank many probes in every requested mode.

    ``subsets`` optionally restricts probe n to the gallery positions in
    ``subsets[n]``. Output order follows ``contexts`` regardless of ``threads``.
    """
    modes = [ScoringMode(m) for m in modes]
    index = GalleryIndex.coerce(gallery)
    if top_k is not None and top_k < 1:
        raise InvalidK(f"top_k must be >= 1, got {top_k}")
    blocks = [range(i, min(i + block_size, len(contexts))) for i in range(0, len(contexts), block_size)]

    def work(block):
        ctxs = [contexts[i] for i in block]
        subs = None if subsets is None else [subsets[i] for i in block]
        return _rank_block(ctxs, index, modes, exclude_probe_frame, subs, top_k)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    return {m: [rl for part in parts for rl in part[m]] for m in modes}


# -- TSV record format -----------------------------------------------------------

def _fmt(x: float) -> str:
    return "%.9g" % x


def format_ranked(ranked: RankedList) -> str:
    s = ranked.scores
    cols = [[_fmt(v) for v in c.tolist()] for c in (s.combined, s.visual, s.objectness, s.repulsion, s.gap)]
    nearest = s.nearest.tolist()
    pid = ranked.probe_id
    lines = [
        f"{pid}\t{r + 1}\t{it.item_id}\t{cols[0][r]}\t{cols[1][r]}\t{cols[2][r]}\t{cols[3][r]}\t{cols[4][r]}\t{nearest[r]}\n"
        for r, it in enumerate(ranked.items)
    ]
    return "".join(lines)


def write_ranked_tsv(ranked_lists: Union[RankedList, Iterable[RankedList]], dest: Union[str, os.PathLike, TextIO]):
    if isinstance(ranked_lists, RankedList):
        ranked_lists = [ranked_lists]
    text = "".join(format_ranked(rl) for rl in ranked_lists)
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        dest.write(text)


def read_ranked_tsv(src: Union[str, os.PathLike, TextIO], items_by_id: Mapping[str, GalleryItem],
                    mode: ScoringMode = ScoringMode.VISUAL_OR) -> List[RankedList]:
    """Parse ranked records back into RankedLists (scores carry 9 significant digits)."""
    if isinstance(src, (str, os.PathLike)):
        with open(src, encoding="utf-8") as fh:
            text = fh.read()
        name = str(src)
    else:
        text = src.read()
        name = getattr(src, "name", "<stream>")
    groups: Dict[str, list] = {}
    for lineno, line in enumerate(io.StringIO(text), 1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != len(TSV_COLUMNS):
            raise FormatError(f"{name}:{lineno}: expected {len(TSV_COLUMNS)} fields, got {len(parts)}")
        groups.setdefault(parts[0], []).append(parts)
    out = []
    for probe_id, rows in groups.items():
        if probe_id not in items_by_id:
            raise FormatError(f"{name}: unknown probe {probe_id!r}")
        rows.sort(key=lambda r: int(r[1]))
        try:
            items = np.empty(len(rows), dtype=object)
            items[:] = [items_by_id[r[2]] for r in rows]
        except KeyError as exc:
            raise FormatError(f"{name}: unknown item {exc.args[0]!r}") from None
        f = np.array([[float(v) for v in r[3:8]] for r in rows]).reshape(len(rows), 5)
        table = ScoreTable(f[:, 1], f[:, 2], f[:, 3], f[:, 4], [int(r[8]) for r in rows], f[:, 0])
        out.append(RankedList(items_by_id[probe_id], ScoringMode(mode), items, table))
    return out
