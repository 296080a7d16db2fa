"""Seeded synthetic person-search benchmarks and brute-force oracles.

The generator models two failure modes of plain visual ranking:

* occlusion: a labeled detection that shares its frame with other people is,
  with probability ``occlusion_rate``, mixed with an occluder's embedding,
  ``normalize((1 - alpha) * own + alpha * occluder)``;
* low-confidence look-alikes: unlabeled detections that resemble a labeled
  identity but come with low detector scores.

Unlabeled pedestrians (own identities, high scores) fill out the distractor
set. The oracles at the bottom re-derive rankings and metrics with plain
scalar code and share no intermediate state with the vectorized paths.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import GRID_SCALE, ZERO_NORM, BBox, Embedding, Frame, GalleryItem, ProbeContext
from .dataset import Dataset
from .errors import ConfigError, EmptyGallery, NoGroundTruth, ZeroVector
from .ranking import RankedList
from .similarity import EPS_DEN, ScoreTable, ScoringMode

FRAME_W, FRAME_H = 1920.0, 1080.0
PERSON_BAND = 700.0  # person boxes stay above this line, look-alikes below it


def default_positive_dist() -> dict:
    return {"name": "beta", "a": 30.0, "b": 1.6, "lo": 0.5, "hi": 1.0}


def default_distractor_dist() -> dict:
    return {"name": "mixture", "components": [
        {"weight": 0.5, "kind": "pedestrian",
         "dist": {"name": "beta", "a": 8.6, "b": 1.4, "lo": 0.5, "hi": 1.0}},
        {"weight": 0.5, "kind": "lookalike",
         "dist": {"name": "uniform", "lo": 0.5, "hi": 0.8}},
    ]}


@dataclass
class SynthConfig:
    num_identities: int = 500
    embedding_dim: int = 64
    frames_per_identity: int = 3
    persons_per_frame: int = 3
    distractor_fraction: float = 0.25
    occlusion_rate: float = 0.3
    occlusion_alpha: float = 0.5
    intra_class_noise_sigma: float = 0.65
    lookalike_noise_sigma: float = 0.65
    positive_score_dist: dict = field(default_factory=default_positive_dist)
    distractor_score_dist: dict = field(default_factory=default_distractor_dist)
    seed: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("num_identities", "frames_per_identity", "persons_per_frame"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.embedding_dim < 2:
            raise ConfigError("embedding_dim must be >= 2")
        for name in ("occlusion_rate", "occlusion_alpha"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.distractor_fraction < 1.0:
            raise ConfigError("distractor_fraction must lie in [0, 1)")
        if self.intra_class_noise_sigma < 0 or self.lookalike_noise_sigma < 0:
            raise ConfigError("noise sigmas must be >= 0")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        _check_dist(self.positive_score_dist)
        _check_dist(self.distractor_score_dist)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


# -- score distributions -------------------------------------------------------------

def _check_dist(spec: dict):
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError(f"distribution must be an object with a 'name': {spec!r}")
    name = spec["name"]
    if name == "mixture":
        comps = spec.get("components") or []
        if not comps or any(c.get("weight", 0) < 0 for c in comps) or sum(c.get("weight", 0) for c in comps) <= 0:
            raise ConfigError("mixture needs components with non-negative weights")
        for c in comps:
            if c.get("kind", "pedestrian") not in ("pedestrian", "lookalike"):
                raise ConfigError(f"unknown distractor kind {c.get('kind')!r}")
            _check_dist(c["dist"])
        return
    lo, hi = spec.get("lo", 0.0), spec.get("hi", 1.0)
    if name == "constant":
        if not 0.0 <= spec.get("value", -1) <= 1.0:
            raise ConfigError("constant value must lie in [0, 1]")
    elif name in ("uniform", "beta"):
        if not 0.0 <= lo < hi <= 1.0:
            raise ConfigError(f"{name} support must satisfy 0 <= lo < hi <= 1")
        if name == "beta" and (spec.get("a", 0) <= 0 or spec.get("b", 0) <= 0):
            raise ConfigError("beta needs a > 0 and b > 0")
    else:
        raise ConfigError(f"unknown distribution {name!r}")


def sample_scores(spec: dict, n: int, rng: np.random.Generator) -> np.ndarray:
    name = spec["name"]
    if name == "constant":
        return np.full(n, float(spec["value"]))
    lo, hi = float(spec.get("lo", 0.0)), float(spec.get("hi", 1.0))
    if name == "uniform":
        u = rng.random(n)
    elif name == "beta":
        u = rng.beta(spec["a"], spec["b"], n)
    else:
        raise ConfigError(f"cannot sample {name!r} directly")
    return np.clip(lo + (hi - lo) * u, 0.0, 1.0)


def _mixture(spec: dict):
    if spec["name"] == "mixture":
        comps = spec["components"]
        w = np.array([c["weight"] for c in comps], dtype=float)
        return w / w.sum(), [c.get("kind", "pedestrian") for c in comps], [c["dist"] for c in comps]
    return np.array([1.0]), ["pedestrian"], [spec]


# -- generator ---------------------------------------------------------------------

def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _streams(seed: int):
    names = ("centers", "layout", "noise", "occlusion", "scores", "boxes")
    seqs = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {n: np.random.Generator(np.random.Philox(s)) for n, s in zip(names, seqs)}


def identity_centers(cfg: SynthConfig) -> np.ndarray:
    """Unit-sphere cluster centers of the labeled identities (float64)."""
    rng = _streams(cfg.seed)["centers"]
    return _unit_rows(rng.standard_normal((cfg.num_identities, cfg.embedding_dim)))


def _noisy(base: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return base.copy()
    noise = rng.standard_normal(base.shape) * (sigma / math.sqrt(base.shape[1]))
    return _unit_rows(base + noise)


def _person_boxes(k: int, rng: np.random.Generator):
    """k non-overlapping person boxes in side-by-side slots."""
    slot = FRAME_W / k
    w = np.minimum(120.0, 0.6 * slot) * rng.uniform(0.8, 1.0, k)
    h = 2.4 * w
    x = np.arange(k) * slot + rng.uniform(0.0, 1.0, k) * (slot - w)
    y = rng.uniform(20.0, PERSON_BAND - h)
    return [BBox(float(x[i]), float(y[i]), float(w[i]), float(h[i])) for i in range(k)]


def _jitter(box: BBox, rng: np.random.Generator) -> BBox:
    dx, dy = rng.uniform(-0.05, 0.05, 2) * np.array([box.w, box.h])
    sw, sh = rng.uniform(0.95, 1.05, 2)
    return BBox(box.x + float(dx), box.y + float(dy), box.w * float(sw), box.h * float(sh))


def _lookalike_box(rng: np.random.Generator) -> BBox:
    w, h = rng.uniform(40.0, 120.0), rng.uniform(40.0, 80.0)
    return BBox(float(rng.uniform(0.0, FRAME_W - w)), float(rng.uniform(PERSON_BAND + 40.0, FRAME_H - h)), float(w), float(h))


def generate(cfg: SynthConfig) -> Dataset:
    cfg.validate()
    st = _streams(cfg.seed)
    n_id, d = cfg.num_identities, cfg.embedding_dim
    # same first draw as identity_centers(); pedestrian centers continue the stream
    centers = _unit_rows(st["centers"].standard_normal((n_id, d)))

    # frames: each round is one appearance of every identity, chunked into frames
    frame_people: List[List[int]] = []
    appearance_frame: Dict[Tuple[int, int], int] = {}
    for r in range(cfg.frames_per_identity):
        perm = st["layout"].permutation(n_id)
        for start in range(0, n_id, cfg.persons_per_frame):
            chunk = [int(p) for p in perm[start:start + cfg.persons_per_frame]]
            for p in chunk:
                appearance_frame[(p, r)] = len(frame_people)
            frame_people.append(chunk)
    n_frames = len(frame_people)
    probe_round = st["layout"].integers(0, cfg.frames_per_identity, n_id)

    n_lab = n_id * cfg.frames_per_identity
    n_dis = int(round(n_lab * cfg.distractor_fraction / (1.0 - cfg.distractor_fraction)))
    weights, kinds, dists = _mixture(cfg.distractor_score_dist)
    dis_frame = st["layout"].integers(0, n_frames, n_dis)
    dis_comp = st["layout"].choice(len(weights), size=n_dis, p=weights)
    dis_kind = [kinds[c] for c in dis_comp]

    # labeled embeddings, then pedestrians and look-alikes
    lab_people = np.array([p for ppl in frame_people for p in ppl], dtype=np.int64)
    lab_emb = _noisy(centers[lab_people], cfg.intra_class_noise_sigma, st["noise"])
    n_ped = sum(k == "pedestrian" for k in dis_kind)
    ped_centers = _unit_rows(st["centers"].standard_normal((n_ped, d))) if n_ped else np.zeros((0, d))
    ped_emb = _noisy(ped_centers, cfg.intra_class_noise_sigma, st["noise"])
    look_src = np.zeros(n_dis - n_ped, dtype=np.int64)
    li = 0
    for k, f in zip(dis_kind, dis_frame):
        if k == "lookalike":
            present = set(frame_people[f])
            while True:
                cand = int(st["layout"].integers(0, n_id))
                if cand not in present or len(present) >= n_id:
                    break
            look_src[li] = cand
            li += 1
    look_emb = _noisy(centers[look_src], cfg.lookalike_noise_sigma, st["noise"]) if li else np.zeros((0, d))

    # per-frame detection lists: (kind, row in its embedding block, person index or -1)
    frame_dets: List[List[tuple]] = [[("lab", 0, p) for p in ppl] for ppl in frame_people]
    row = 0
    for f, ppl in enumerate(frame_people):
        for j in range(len(ppl)):
            frame_dets[f][j] = ("lab", row, ppl[j])
            row += 1
    pi = li = 0
    for k, f in zip(dis_kind, dis_frame):
        if k == "pedestrian":
            frame_dets[f].append(("ped", pi, -1))
            pi += 1
        else:
            frame_dets[f].append(("look", li, -1))
            li += 1

    # occlusion contaminates labeled detections with a co-frame person
    occ_rng = st["occlusion"]
    clean_lab = lab_emb.copy()
    alpha = cfg.occlusion_alpha
    for dets in frame_dets:
        people = [(k, r) for k, r, _ in dets if k in ("lab", "ped")]
        if len(people) < 2:
            continue
        for k, r, _ in dets:
            if k != "lab" or occ_rng.random() >= cfg.occlusion_rate:
                continue
            others = [pr for pr in people if pr != ("lab", r)]
            ok, orow = others[int(occ_rng.integers(0, len(others)))]
            occ = clean_lab[orow] if ok == "lab" else ped_emb[orow]
            if alpha == 1.0:
                lab_emb[r] = occ
            else:
                mixed = (1.0 - alpha) * clean_lab[r] + alpha * occ
                lab_emb[r] = mixed / np.linalg.norm(mixed)

    pos_scores = sample_scores(cfg.positive_score_dist, n_lab, st["scores"])
    dis_scores = np.zeros(n_dis)
    for c, dist in enumerate(dists):
        sel = np.flatnonzero(dis_comp == c)
        if sel.size:
            dis_scores[sel] = sample_scores(dist, sel.size, st["scores"])
    ped_scores = dis_scores[[i for i, k in enumerate(dis_kind) if k == "pedestrian"]]
    look_scores = dis_scores[[i for i, k in enumerate(dis_kind) if k == "lookalike"]]

    items: List[GalleryItem] = []
    frames: Dict[str, Frame] = {}
    probe_items: Dict[int, str] = {}
    box_rng = st["boxes"]
    blocks = {"lab": lab_emb.astype(np.float32), "ped": ped_emb.astype(np.float32),
              "look": look_emb.astype(np.float32)}
    scores = {"lab": pos_scores, "ped": ped_scores, "look": look_scores}
    for f, dets in enumerate(frame_dets):
        fid = f"f{f:06d}"
        n_people = sum(1 for k, _, _ in dets if k != "look")
        boxes = iter(_person_boxes(n_people, box_rng)) if n_people else iter(())
        gt = []
        for k, r, person in dets:
            iid = f"d{len(items):07d}"
            if k == "look":
                box = _lookalike_box(box_rng)
                pid = None
            else:
                gt_box = next(boxes)
                box = _jitter(gt_box, box_rng)
                pid = None
                if k == "lab":
                    pid = f"p{person:05d}"
                    gt.append((gt_box, pid))
                    if appearance_frame[(person, int(probe_round[person]))] == f:
                        probe_items[person] = iid
            items.append(GalleryItem(iid, fid, box, float(scores[k][r]), Embedding(blocks[k][r]), pid))
        frames[fid] = Frame(fid, tuple(gt))
    probes = tuple(probe_items[p] for p in range(n_id))
    return Dataset(items, frames, probes, d)


# -- small random instances for oracle sweeps ----------------------------------------

def random_instance(seed: int, max_frames: int = 20, max_dets: int = 50, dim: int = 8,
                    num_persons: int = 6) -> Dataset:
    """A small random dataset with messy geometry: duplicate detections,
    partial overlaps, boxes exactly at IoU 0.5, misses and false alarms."""
    rng = np.random.default_rng(seed)
    n_frames = int(rng.integers(2, max_frames + 1))
    centers = _unit_rows(rng.standard_normal((num_persons, dim)))
    frames: Dict[str, Frame] = {}
    items: List[GalleryItem] = []
    for f in range(n_frames):
        fid = f"f{f:02d}"
        k = int(rng.integers(0, min(4, num_persons) + 1))
        people = rng.choice(num_persons, size=k, replace=False)
        gt = []
        for slot, p in enumerate(people):
            gt.append((BBox(10.0 + 100.0 * slot, 10.0, 40.0, 80.0), f"p{int(p)}"))
        frames[fid] = Frame(fid, tuple(gt))
        for box, pid in gt:
            for _ in range(int(rng.integers(0, 3))):
                if len(items) >= max_dets:
                    break
                shape = rng.integers(0, 4)
                if shape == 0:
                    b = box
                elif shape == 1:  # half-width shift: IoU exactly 1/3
                    b = BBox(box.x + box.w / 2, box.y, box.w, box.h)
                elif shape == 2:  # half height: IoU exactly 0.5
                    b = BBox(box.x, box.y, box.w, box.h / 2)
                else:
                    b = BBox(box.x + float(rng.uniform(-8, 8)), box.y + float(rng.uniform(-8, 8)), box.w, box.h)
                p = int(pid[1:])
                emb = centers[p] + 0.5 * rng.standard_normal(dim)
                items.append(GalleryItem(f"d{len(items):03d}", fid, b, float(rng.choice([1.0, rng.uniform(0.3, 1.0)])),
                                         Embedding(emb.astype(np.float32)), pid))
        for _ in range(int(rng.integers(0, 3))):
            if len(items) >= max_dets:
                break
            b = BBox(float(rng.uniform(0, 400)), float(rng.uniform(0, 200)), 30.0, 60.0)
            items.append(GalleryItem(f"d{len(items):03d}", fid, b, float(rng.uniform(0.0, 1.0)),
                                     Embedding(rng.standard_normal(dim).astype(np.float32)), None))
    if not any(it.person_id for it in items):
        box = BBox(10.0, 300.0, 40.0, 80.0)
        frames["fx"] = Frame("fx", ((box, "p0"),))
        items.append(GalleryItem(f"d{len(items):03d}", "fx", box, 0.9, Embedding(centers[0].astype(np.float32)), "p0"))
    labeled = [it for it in items if it.person_id is not None]
    n_probes = min(len(labeled), int(rng.integers(1, 6)))
    picks = rng.choice(len(labeled), n_probes, replace=False)
    probes = tuple(sorted(labeled[int(i)].item_id for i in picks))
    return Dataset(items, frames, probes, dim)


# -- brute-force oracles -------------------------------------------------------------

def _oracle_grid(values) -> Tuple[List[int], int]:
    xs = [float(v) for v in values]
    norm = math.sqrt(math.fsum(x * x for x in xs))
    if norm < ZERO_NORM:
        raise ZeroVector("zero embedding")
    g = [int(round((x / norm) * GRID_SCALE)) for x in xs]
    return g, sum(a * a for a in g)


def _oracle_sim(a: Tuple[List[int], int], b: Tuple[List[int], int]) -> float:
    dot = sum(x * y for x, y in zip(a[0], b[0]))
    s = float(dot) / math.sqrt(float(a[1]) * float(b[1]))
    return max(-1.0, min(1.0, s))


def brute_force_rank(probe_ctx: ProbeContext, gallery: Sequence[GalleryItem],
                     mode: ScoringMode = ScoringMode.VISUAL_OR, exclude_probe_frame: bool = True) -> RankedList:
    """Scalar re-derivation of ``rank_gallery``; must agree with it bit for bit."""
    mode = ScoringMode(mode)
    pool = [g for g in gallery if not (exclude_probe_frame and g.frame_id == probe_ctx.probe.frame_id)]
    if not pool:
        raise EmptyGallery("no gallery items")
    queries = [_oracle_grid(q.embedding.values) for q in probe_ctx.queries]
    rows = []
    for item in pool:
        gi = _oracle_grid(item.embedding.values)
        sims = [_oracle_sim(q, gi) for q in queries]
        visual = sims[0]
        rep, gap, nearest = 1.0, 0.0, 0
        if mode.uses_repulsion:
            nearest = 0
            for i in range(1, len(sims)):
                if sims[i] > sims[nearest]:
                    nearest = i
            best = sims[nearest]
            if best <= EPS_DEN:
                nearest = 0
            else:
                gap = sims[0] - best
                if nearest != 0:
                    rep = float(np.exp(gap / best))
        obj = float(np.exp(item.det_score - 1.0)) if mode.uses_objectness else 1.0
        rows.append((item, visual, obj, rep, gap, nearest, visual * rep * obj))
    rows.sort(key=lambda r: (-r[6], r[0].item_id))
    items = np.empty(len(rows), dtype=object)
    items[:] = [r[0] for r in rows]
    table = ScoreTable([r[1] for r in rows], [r[2] for r in rows], [r[3] for r in rows],
                       [r[4] for r in rows], [r[5] for r in rows], [r[6] for r in rows])
    return RankedList(probe_ctx.probe, mode, items, table)


def _oracle_iou(a: BBox, b: BBox) -> float:
    ax2, ay2, bx2, by2 = a.x + a.w, a.y + a.h, b.x + b.w, b.y + b.h
    iw = min(ax2, bx2) - max(a.x, b.x)
    ih = min(ay2, by2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((ax2 - a.x) * (ay2 - a.y) + (bx2 - b.x) * (by2 - b.y) - inter)


def _oracle_ap(hits: List[bool], num_gt: int) -> float:
    total = 0.0
    for p in range(len(hits)):
        if hits[p]:
            total += sum(1 for h in hits[:p + 1] if h) / (p + 1)
    return total / num_gt


def _frames_of(gt) -> Dict[str, list]:
    return {f: list(v.gt_boxes if isinstance(v, Frame) else v) for f, v in gt.items()}


def brute_force_search(ranked_lists: Sequence[RankedList], gt, ks: Sequence[int] = (1,),
                       iou_threshold: float = 0.5):
    """Naive per-probe scan: returns (mAP, {k: CMC}, [(probe_id, AP)])."""
    frames = _frames_of(gt)
    per_probe = []
    cmc = {k: 0 for k in ks}
    for rl in sorted(ranked_lists, key=lambda r: r.probe_id):
        target, own = rl.probe.person_id, rl.probe.frame_id
        num_gt = 0
        for f, boxes in frames.items():
            for _, pid in boxes:
                if f != own and pid == target:
                    num_gt += 1
        if num_gt == 0:
            continue
        claimed = []
        hits = []
        for item in rl.items:
            if item.frame_id == own:
                continue
            best, best_ov = None, -1.0
            for k, (box, pid) in enumerate(frames[item.frame_id]):
                if pid != target or (item.frame_id, k) in claimed:
                    continue
                ov = _oracle_iou(item.bbox, box)
                if ov >= iou_threshold and ov > best_ov:
                    best, best_ov = (item.frame_id, k), ov
            if best is not None:
                claimed.append(best)
            hits.append(best is not None)
        per_probe.append((rl.probe_id, _oracle_ap(hits, num_gt)))
        for k in ks:
            cmc[k] += 1 if True in hits[:k] else 0
    n = len(per_probe)
    if n == 0:
        return 0.0, {k: 0.0 for k in ks}, []
    return sum(ap for _, ap in per_probe) / n, {k: v / n for k, v in cmc.items()}, per_probe


def brute_force_map(ranked_lists: Sequence[RankedList], gt, iou_threshold: float = 0.5) -> float:
    return brute_force_search(ranked_lists, gt, (1,), iou_threshold)[0]


def brute_force_detection(detections: Sequence[GalleryItem], gt, iou_threshold: float = 0.5):
    """Naive detection matcher: returns (ap, recall)."""
    frames = _frames_of(gt)
    num_gt = sum(len(b) for b in frames.values())
    if num_gt == 0:
        raise NoGroundTruth("no ground truth")
    order = sorted(detections, key=lambda d: (-d.det_score, d.item_id))
    claimed = []
    flags = []
    for det in order:
        best, best_ov = None, -1.0
        for k, (box, _) in enumerate(frames[det.frame_id]):
            if (det.frame_id, k) in claimed:
                continue
            ov = _oracle_iou(det.bbox, box)
            if ov >= iou_threshold and ov > best_ov:
                best, best_ov = (det.frame_id, k), ov
        if best is not None:
            claimed.append(best)
        flags.append(best is not None)
    return _oracle_ap(flags, num_gt), len(claimed) / num_gt
