"""On-disk dataset formats, validation, probe contexts and gallery subsets.

A dataset directory holds four files:

``embeddings.bin``
    little-endian header ``b"ORSE"``, u16 version (1), u64 count, u32 dim,
    then ``count * dim`` float32 values, row-major, rows in detection order.
``detections.jsonl``
    one ``{"item_id", "frame_id", "bbox": [x, y, w, h], "det_score", "person_id"?}``
    object per line.
``frames.jsonl``
    one ``{"frame_id", "gt": [{"bbox": [...], "person_id"}, ...]}`` per line.
``probes.jsonl``
    one ``{"probe_item_id"}`` per line.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import BBox, Embedding, Frame, GalleryItem, ProbeContext
from .errors import (
    CountMismatch,
    DanglingFrameRef,
    DimensionMismatch,
    DimensionZero,
    FormatError,
    SizeTooLarge,
    UnknownProbe,
    ValidationError,
)
from .rng import CounterRNG, sample_without_replacement, subset_key

MAGIC = b"ORSE"
VERSION = 1
HEADER = struct.Struct("<4sHQI")

EMBEDDINGS_FILE = "embeddings.bin"
DETECTIONS_FILE = "detections.jsonl"
FRAMES_FILE = "frames.jsonl"
PROBES_FILE = "probes.jsonl"


@dataclass(frozen=True, eq=False)
class Dataset:
    items: Tuple[GalleryItem, ...]
    frames: Mapping[str, Frame]
    probes: Tuple[str, ...]
    embedding_dim: int

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "probes", tuple(self.probes))
        object.__setattr__(self, "frames", dict(self.frames))
        if self.embedding_dim <= 0:
            raise DimensionZero("embedding dimension must be positive")
        seen = set()
        for it in self.items:
            if it.item_id in seen:
                raise ValidationError(f"duplicate item_id {it.item_id!r}")
            seen.add(it.item_id)
            if it.frame_id not in self.frames:
                raise DanglingFrameRef(f"item {it.item_id!r} references unknown frame {it.frame_id!r}")
            if it.embedding.dim != self.embedding_dim:
                raise DimensionMismatch(
                    f"item {it.item_id!r} has dimension {it.embedding.dim}, expected {self.embedding_dim}")
        for pid in self.probes:
            if pid not in seen:
                raise UnknownProbe(f"probe {pid!r} is not a known item")
            if self.by_id[pid].person_id is None:
                raise ValidationError(f"probe {pid!r} has no person_id")

    @cached_property
    def by_id(self) -> Dict[str, GalleryItem]:
        return {it.item_id: it for it in self.items}

    @cached_property
    def by_frame(self) -> Dict[str, List[GalleryItem]]:
        out: Dict[str, List[GalleryItem]] = {}
        for it in self.items:
            out.setdefault(it.frame_id, []).append(it)
        return out

    @property
    def gt(self) -> Dict[str, Frame]:
        return self.frames

    def __len__(self):
        return len(self.items)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.embedding_dim == other.embedding_dim and self.items == other.items
                and self.frames == other.frames and self.probes == other.probes)

    __hash__ = None


# -- serialization ----------------------------------------------------------------

def _json_line(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": ")) + "\n"


def encode_embeddings(matrix: np.ndarray) -> bytes:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    count, dim = matrix.shape
    return HEADER.pack(MAGIC, VERSION, count, dim) + matrix.tobytes()


def decode_embeddings(data: bytes, name: str = "<embeddings>") -> np.ndarray:
    if len(data) < HEADER.size:
        raise FormatError(f"{name}: truncated header")
    magic, version, count, dim = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{name}: unsupported version {version}")
    if dim == 0:
        raise DimensionZero(f"{name}: embedding dimension is zero")
    expected = HEADER.size + 4 * count * dim
    if len(data) != expected:
        raise FormatError(f"{name}: expected {expected} bytes for {count}x{dim}, found {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", count=count * dim, offset=HEADER.size)
    arr = arr.reshape(count, dim).astype(np.float32)
    arr.flags.writeable = False
    return arr


def serialize(ds: Dataset) -> Dict[str, bytes]:
    """Bytes of the four dataset files, keyed by file name."""
    matrix = np.vstack([np.asarray(it.embedding.values, dtype=np.float32) for it in ds.items]) \
        if ds.items else np.zeros((0, ds.embedding_dim), dtype=np.float32)
    dets = []
    for it in ds.items:
        rec = {"item_id": it.item_id, "frame_id": it.frame_id, "bbox": it.bbox.as_list(),
               "det_score": it.det_score}
        if it.person_id is not None:
            rec["person_id"] = it.person_id
        dets.append(_json_line(rec))
    frames = [_json_line({"frame_id": f.frame_id,
                          "gt": [{"bbox": b.as_list(), "person_id": pid} for b, pid in f.gt_boxes]})
              for f in ds.frames.values()]
    probes = [_json_line({"probe_item_id": pid}) for pid in ds.probes]
    return {
        EMBEDDINGS_FILE: encode_embeddings(matrix),
        DETECTIONS_FILE: "".join(dets).encode("utf-8"),
        FRAMES_FILE: "".join(frames).encode("utf-8"),
        PROBES_FILE: "".join(probes).encode("utf-8"),
    }


def save_dataset(ds: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, blob in serialize(ds).items():
        (directory / name).write_bytes(blob)
    return directory


def dataset_hash(ds: Dataset) -> str:
    h = hashlib.sha256()
    for name, blob in sorted(serialize(ds).items()):
        h.update(name.encode())
        h.update(len(blob).to_bytes(8, "little"))
        h.update(blob)
    return h.hexdigest()


def _read_jsonl(path: Path) -> List[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc.msg}") from None
    return out


def _bbox(raw, where: str) -> BBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise FormatError(f"{where}: bbox must be [x, y, w, h]")
    try:
        return BBox(*raw)
    except (TypeError, ValidationError) as exc:
        raise FormatError(f"{where}: {exc}") from None


def read_frames(path) -> Dict[str, Frame]:
    frames: Dict[str, Frame] = {}
    for rec in _read_jsonl(Path(path)):
        try:
            fid = str(rec["frame_id"])
            gt = tuple((_bbox(g["bbox"], f"frame {fid}"), str(g["person_id"])) for g in rec.get("gt", []))
            frames[fid] = Frame(fid, gt)
        except KeyError as exc:
            raise FormatError(f"{path}: frame record missing {exc.args[0]!r}") from None
        except ValidationError as exc:
            raise FormatError(f"{path}: {exc}") from None
    return frames


def read_probes(path) -> Tuple[str, ...]:
    try:
        return tuple(str(rec["probe_item_id"]) for rec in _read_jsonl(Path(path)))
    except KeyError:
        raise FormatError(f"{path}: probe record missing 'probe_item_id'") from None


def load_dataset(embeddings_path, metadata_path, frames_path=None, probes_path=None) -> Dataset:
    """Load and cross-check a dataset.

    Frame and probe files default to ``frames.jsonl`` / ``probes.jsonl`` next
    to the metadata file; a missing probes file means no probes.
    """
    metadata_path = Path(metadata_path)
    frames_path = Path(frames_path) if frames_path else metadata_path.with_name(FRAMES_FILE)
    probes_path = Path(probes_path) if probes_path else metadata_path.with_name(PROBES_FILE)
    matrix = decode_embeddings(Path(embeddings_path).read_bytes(), str(embeddings_path))
    records = _read_jsonl(metadata_path)
    if len(records) != matrix.shape[0]:
        raise CountMismatch(
            f"embedding header declares {matrix.shape[0]} rows, metadata has {len(records)} records")
    frames = read_frames(frames_path)
    items = []
    for row, rec in enumerate(records):
        try:
            item_id = str(rec["item_id"])
            frame_id = str(rec["frame_id"])
            pid = rec.get("person_id")
            items.append(GalleryItem(
                item_id=item_id,
                frame_id=frame_id,
                bbox=_bbox(rec["bbox"], f"item {item_id}"),
                det_score=rec["det_score"],
                embedding=Embedding(matrix[row]),
                person_id=None if pid is None else str(pid),
            ))
        except KeyError as exc:
            raise FormatError(f"{metadata_path}: record {row} missing {exc.args[0]!r}") from None
        except (TypeError, ValidationError) as exc:
            raise FormatError(f"{metadata_path}: record {row}: {exc}") from None
        if frame_id not in frames:
            raise DanglingFrameRef(f"item {item_id!r} references unknown frame {frame_id!r}")
    probes = read_probes(probes_path) if probes_path.exists() else ()
    return Dataset(items, frames, probes, int(matrix.shape[1]))


def load_dataset_dir(directory, probes_path=None) -> Dataset:
    directory = Path(directory)
    return load_dataset(directory / EMBEDDINGS_FILE, directory / DETECTIONS_FILE,
                        directory / FRAMES_FILE, probes_path or directory / PROBES_FILE)


# -- probes and subsets -------------------------------------------------------------

def build_probe_context(ds: Dataset, probe_id: str, min_neighbor_score: Optional[float] = None) -> ProbeContext:
    """Probe plus every other detection in its frame, ordered by item_id."""
    try:
        probe = ds.by_id[probe_id]
    except KeyError:
        raise UnknownProbe(f"probe {probe_id!r} is not in the dataset") from None
    neighbors = [it for it in ds.by_frame[probe.frame_id] if it.item_id != probe_id]
    if min_neighbor_score is not None:
        neighbors = [it for it in neighbors if it.det_score >= min_neighbor_score]
    neighbors.sort(key=lambda it: it.item_id)
    return ProbeContext(probe, tuple(neighbors))


@dataclass(frozen=True)
class GallerySubset:
    probe_id: str
    gallery_item_ids: Tuple[str, ...]
    seed: int
    size: int
    degenerate: bool = False


def true_positives(ds: Dataset, probe: GalleryItem) -> List[GalleryItem]:
    """Items of the probe's person outside the probe's frame."""
    return [it for it in ds.items
            if it.person_id is not None and it.person_id == probe.person_id and it.frame_id != probe.frame_id]


def sample_gallery_subset(ds: Dataset, probe_id: str, size: int, seed: int) -> GallerySubset:
    """All true positives plus uniformly drawn other items, ``size`` in total.

    Candidates exclude the probe's frame. Negatives are drawn with the
    counter-based stream keyed on (seed, probe_id, size) from the
    item_id-sorted negative pool; the result is sorted by item_id.
    """
    try:
        probe = ds.by_id[probe_id]
    except KeyError:
        raise UnknownProbe(f"probe {probe_id!r} is not in the dataset") from None
    candidates = sorted((it for it in ds.items if it.frame_id != probe.frame_id), key=lambda it: it.item_id)
    if size > len(candidates):
        raise SizeTooLarge(f"gallery size {size} exceeds the {len(candidates)} available items")
    pos = [it.item_id for it in candidates
           if it.person_id is not None and it.person_id == probe.person_id]
    if size < len(pos):
        raise ValidationError(f"gallery size {size} cannot hold the {len(pos)} true positives of {probe_id!r}")
    pos_set = set(pos)
    neg = [it.item_id for it in candidates if it.item_id not in pos_set]
    rng = CounterRNG(subset_key(seed, probe_id, size))
    picked = sample_without_replacement(rng, neg, size - len(pos))
    return GallerySubset(probe_id, tuple(sorted(pos + picked)), int(seed), int(size), degenerate=not pos)


def items_for(ds: Dataset, ids: Sequence[str]) -> List[GalleryItem]:
    return [ds.by_id[i] for i in ids]
