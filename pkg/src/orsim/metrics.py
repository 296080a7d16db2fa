"""Search and detection metrics: IoU matching, CMC top-K, AP and mAP."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

from .core import BBox, Frame, GalleryItem, iou
from .errors import InvalidK, NoGroundTruth, ORSimError, UnknownFrame, ValidationError
from .ranking import RankedList

DEFAULT_IOU = 0.5

GroundTruth = Mapping[str, Union[Frame, Sequence[Tuple[BBox, str]]]]


def _boxes(gt: GroundTruth, frame_id: str):
    try:
        entry = gt[frame_id]
    except KeyError:
        raise UnknownFrame(f"frame {frame_id!r} is not in the ground truth") from None
    return entry.gt_boxes if isinstance(entry, Frame) else entry


def _check_threshold(iou_threshold: float):
    if not (0.0 < iou_threshold <= 1.0):
        raise ValidationError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")


def _best_unclaimed(box: BBox, candidates, claimed: set, iou_threshold: float):
    """Index of the highest-IoU unclaimed candidate at or above the threshold."""
    best, best_iou = None, -1.0
    for key, gt_box in candidates:
        if key in claimed:
            continue
        ov = iou(box, gt_box)
        if ov >= iou_threshold and ov > best_iou:
            best, best_iou = key, ov
    return best


def _person_boxes(gt: GroundTruth, person_id: str) -> Dict[str, list]:
    out: Dict[str, list] = {}
    for frame_id in gt:
        for k, (b, pid) in enumerate(_boxes(gt, frame_id)):
            if pid == person_id:
                out.setdefault(frame_id, []).append(((frame_id, k), b))
    return out


def match_ranked_list(ranked: RankedList, gt: GroundTruth, target_person: str,
                      iou_threshold: float = DEFAULT_IOU, _index=None) -> List[bool]:
    """Hit flag per ranked entry; each ground-truth box can be claimed once, in rank order."""
    _check_threshold(iou_threshold)
    targets = _person_boxes(gt, target_person) if _index is None else _index
    claimed: set = set()
    hits = []
    for item in ranked.items:
        if item.frame_id not in gt:
            raise UnknownFrame(f"frame {item.frame_id!r} of item {item.item_id!r} is not in the ground truth")
        cands = targets.get(item.frame_id)
        key = None if cands is None else _best_unclaimed(item.bbox, cands, claimed, iou_threshold)
        if key is not None:
            claimed.add(key)
        hits.append(key is not None)
    return hits


def average_precision(hits: Sequence[bool], num_gt: int) -> float:
    """Interpolation-free AP: sum of precision at each hit, divided by num_gt."""
    if num_gt <= 0:
        raise NoGroundTruth("average precision needs at least one ground-truth box")
    total, found = 0.0, 0
    for p, h in enumerate(hits, 1):
        if h:
            found += 1
            total += found / p
    if found > num_gt:
        raise ValidationError(f"{found} hits exceed {num_gt} ground-truth boxes")
    return total / num_gt


def cmc_at_k(hits: Sequence[bool], k: int) -> int:
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    return int(any(hits[:k]))


@dataclass
class EvalReport:
    map_score: float
    cmc: Dict[int, float]
    per_probe_ap: List[Tuple[str, float]]
    num_probes: int
    skipped: List[str] = field(default_factory=list)
    failures: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def top1(self) -> float:
        return self.cmc.get(1, float("nan"))


@dataclass
class DetectionReport:
    ap: float
    recall: float
    num_gt: int
    num_detections: int


def count_gt(gt: GroundTruth, person_id: str, skip_frame: str = None) -> int:
    return sum(len(v) for f, v in _person_boxes(gt, person_id).items() if f != skip_frame)


def _without_frame(ranked: RankedList, frame_id: str) -> RankedList:
    keep = [j for j, it in enumerate(ranked.items) if it.frame_id != frame_id]
    if len(keep) == len(ranked.items):
        return ranked
    return RankedList(ranked.probe, ranked.mode, ranked.items[keep], ranked.scores.take(keep))


def evaluate_search(ranked: Iterable[RankedList], gt: GroundTruth, ks: Sequence[int] = (1, 5, 10),
                    iou_threshold: float = DEFAULT_IOU) -> EvalReport:
    """mAP and CMC over probes, aggregated in ascending probe_id order.

    Ground truth in the probe's own frame is never counted and entries from
    that frame are dropped before matching. Probes whose person has no
    ground-truth box elsewhere are skipped; per-probe errors are recorded.
    """
    ks = sorted({int(k) for k in ks})
    for k in ks:
        if k < 1:
            raise InvalidK(f"k must be >= 1, got {k}")
    _check_threshold(iou_threshold)
    aps: List[Tuple[str, float]] = []
    cmc_hits = {k: 0 for k in ks}
    skipped, failures = [], []
    by_person: Dict[str, Dict[str, list]] = {}
    for frame_id in gt:
        for k, (b, pid) in enumerate(_boxes(gt, frame_id)):
            by_person.setdefault(pid, {}).setdefault(frame_id, []).append(((frame_id, k), b))
    for rl in sorted(ranked, key=lambda r: r.probe_id):
        probe = rl.probe
        if probe.person_id is None:
            failures.append((rl.probe_id, "probe has no person_id"))
            continue
        try:
            targets = {f: v for f, v in by_person.get(probe.person_id, {}).items() if f != probe.frame_id}
            num_gt = sum(len(v) for v in targets.values())
            if num_gt == 0:
                skipped.append(rl.probe_id)
                continue
            hits = match_ranked_list(_without_frame(rl, probe.frame_id), gt, probe.person_id,
                                     iou_threshold, _index=targets)
            ap = average_precision(hits, num_gt)
        except ORSimError as exc:
            failures.append((rl.probe_id, str(exc)))
            continue
        aps.append((rl.probe_id, ap))
        for k in ks:
            cmc_hits[k] += cmc_at_k(hits, k)
    n = len(aps)
    map_score = sum(a for _, a in aps) / n if n else 0.0
    cmc = {k: (cmc_hits[k] / n if n else 0.0) for k in ks}
    return EvalReport(map_score, cmc, aps, n, skipped, failures)


def evaluate_detection(detections: Sequence[GalleryItem], gt: GroundTruth,
                       iou_threshold: float = DEFAULT_IOU) -> DetectionReport:
    _check_threshold(iou_threshold)
    num_gt = sum(len(_boxes(gt, f)) for f in gt)
    if num_gt == 0:
        raise NoGroundTruth("no ground-truth boxes to evaluate detections against")
    order = sorted(detections, key=lambda d: (-d.det_score, d.item_id))
    claimed: set = set()
    flags = []
    for det in order:
        cands = [((det.frame_id, k), b) for k, (b, _) in enumerate(_boxes(gt, det.frame_id))]
        key = _best_unclaimed(det.bbox, cands, claimed, iou_threshold)
        if key is not None:
            claimed.add(key)
        flags.append(key is not None)
    return DetectionReport(
        ap=average_precision(flags, num_gt),
        recall=len(claimed) / num_gt,
        num_gt=num_gt,
        num_detections=len(order),
    )


# -- report text format -----------------------------------------------------------

def format_eval_report(report: EvalReport) -> str:
    lines = ["# orsim search evaluation",
             f"map\t{report.map_score:.9g}"]
    for k, v in report.cmc.items():
        lines.append(f"cmc@{k}\t{v:.9g}")
    lines.append(f"num_probes\t{report.num_probes}")
    lines.append(f"num_skipped\t{len(report.skipped)}")
    lines.append(f"num_failed\t{len(report.failures)}")
    if report.skipped:
        lines.append("skipped\t" + ",".join(report.skipped))
    for pid, msg in report.failures:
        lines.append(f"failed\t{pid}\t{msg}")
    lines.append("")
    lines.append("probe_id\tap")
    lines.extend(f"{pid}\t{ap:.9g}" for pid, ap in report.per_probe_ap)
    return "\n".join(lines) + "\n"


def parse_eval_report(text: str) -> EvalReport:
    header, _, table = text.partition("\nprobe_id\tap\n")
    values, cmc, skipped, failures = {}, {}, [], []
    for line in header.splitlines():
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition("\t")
        if key.startswith("cmc@"):
            cmc[int(key[4:])] = float(rest)
        elif key == "skipped":
            skipped = rest.split(",")
        elif key == "failed":
            pid, _, msg = rest.partition("\t")
            failures.append((pid, msg))
        else:
            values[key] = rest
    aps = []
    for line in table.splitlines():
        if line:
            pid, ap = line.split("\t")
            aps.append((pid, float(ap)))
    return EvalReport(float(values["map"]), cmc, aps, int(values["num_probes"]), skipped, failures)


def format_detection_report(report: DetectionReport) -> str:
    return ("# orsim detection evaluation\n"
            f"ap\t{report.ap:.9g}\n"
            f"recall\t{report.recall:.9g}\n"
            f"num_gt\t{report.num_gt}\n"
            f"num_detections\t{report.num_detections}\n")
