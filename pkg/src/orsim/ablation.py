"""Mode x gallery-size x seed ablation sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset, build_probe_context, sample_gallery_subset
from .errors import InvariantViolation
from .metrics import EvalReport, evaluate_search
from .ranking import rank_probes
from .similarity import ALL_MODES, GalleryIndex, ScoringMode, or_score

CONSISTENCY_TOL = 1e-12


@dataclass
class AblationCell:
    mode: ScoringMode
    gallery_size: Optional[int]  # None = full gallery
    seed: int
    report: EvalReport


@dataclass
class AblationResult:
    cells: List[AblationCell]
    consistency: List[dict] = field(default_factory=list)

    def summary(self) -> List[dict]:
        """Seed-averaged mAP / top-1 per (mode, gallery size)."""
        groups: Dict[Tuple[ScoringMode, Optional[int]], List[EvalReport]] = {}
        for c in self.cells:
            groups.setdefault((c.mode, c.gallery_size), []).append(c.report)
        rows = []
        for (mode, size), reports in groups.items():
            rows.append({
                "mode": mode,
                "gallery_size": size,
                "map": float(np.mean([r.map_score for r in reports])),
                "top1": float(np.mean([r.cmc.get(1, math.nan) for r in reports])),
                "runs": len(reports),
            })
        return rows


def size_label(size: Optional[int]) -> str:
    return "full" if size is None else str(size)


def check_mode_consistency(ctx, item) -> dict:
    """Score one (probe, item) pair in all four modes and check the product identity."""
    b = {m: or_score(ctx, item, m) for m in ALL_MODES}
    full = b[ScoringMode.VISUAL_OR]
    row = {
        "probe_id": ctx.probe.item_id,
        "item_id": item.item_id,
        "visual": full.visual,
        "objectness": full.objectness,
        "repulsion": full.repulsion,
        **{f"combined_{m.value}": b[m].combined for m in ALL_MODES},
    }
    via_o = b[ScoringMode.VISUAL_O].combined * full.repulsion
    via_r = b[ScoringMode.VISUAL_R].combined * full.objectness
    if not (abs(full.combined - via_o) <= CONSISTENCY_TOL and abs(full.combined - via_r) <= CONSISTENCY_TOL
            and b[ScoringMode.VISUAL].combined == full.visual):
        raise InvariantViolation(f"mode consistency failed for probe {row['probe_id']!r}, item {row['item_id']!r}")
    return row


def run_ablation(ds: Dataset, modes: Sequence[ScoringMode] = ALL_MODES,
                 gallery_sizes: Sequence[Optional[int]] = (None,), seeds: Sequence[int] = (0,),
                 ks: Sequence[int] = (1, 5, 10), exclude_probe_frame: bool = True,
                 min_neighbor_score: Optional[float] = None, threads: int = 1,
                 consistency_samples: int = 3) -> AblationResult:
    modes = [ScoringMode(m) for m in modes]
    index = GalleryIndex(ds.items)
    position = {it.item_id: k for k, it in enumerate(ds.items)}
    ctxs = [build_probe_context(ds, pid, min_neighbor_score) for pid in ds.probes]
    result = AblationResult([])
    for size in gallery_sizes:
        # the full gallery does not depend on the seed
        for seed in (seeds if size is not None else seeds[:1]):
            subsets = None
            if size is not None:
                subsets = [np.array(sorted(position[i] for i in
                                           sample_gallery_subset(ds, c.probe.item_id, size, seed).gallery_item_ids))
                           for c in ctxs]
            ranked = rank_probes(ctxs, index, modes, exclude_probe_frame, subsets, threads=threads)
            for m in modes:
                result.cells.append(AblationCell(m, size, seed, evaluate_search(ranked[m], ds.frames, ks)))
            logged = ranked[modes[-1]][:consistency_samples]
            for rl, ctx in zip(logged, ctxs):
                row = check_mode_consistency(ctx, rl.items[0])
                row.update(gallery_size=size_label(size), seed=seed)
                result.consistency.append(row)
    return result


def format_summary(result: AblationResult) -> str:
    """Modes as rows, gallery sizes as columns (mAP% and top-1%)."""
    rows = result.summary()
    sizes = []
    for r in rows:
        if r["gallery_size"] not in sizes:
            sizes.append(r["gallery_size"])
    sizes.sort(key=lambda s: math.inf if s is None else s)
    modes = []
    for r in rows:
        if r["mode"] not in modes:
            modes.append(r["mode"])
    lookup = {(r["mode"], r["gallery_size"]): r for r in rows}
    header = ["mode"] + [f"{col}@{size_label(s)}" for s in sizes for col in ("map", "top1")]
    lines = ["\t".join(header)]
    for m in modes:
        cells = [m.label]
        for s in sizes:
            r = lookup.get((m, s))
            cells += ["" if r is None else f"{100 * r['map']:.2f}", "" if r is None else f"{100 * r['top1']:.2f}"]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
