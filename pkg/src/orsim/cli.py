"""``orsim`` command line.

Exit codes: 0 success, 2 usage or validation error, 3 data-format error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional
from urllib.parse import quote

from . import __version__
from .ablation import format_summary, run_ablation, size_label
from .dataset import (
    PROBES_FILE,
    build_probe_context,
    dataset_hash,
    load_dataset_dir,
    read_probes,
    sample_gallery_subset,
    save_dataset,
)
from .errors import DataFormatError, InvariantViolation, ValidationError
from .metrics import evaluate_detection, evaluate_search, format_detection_report, format_eval_report
from .ranking import default_threads, rank_probes, read_ranked_tsv, write_ranked_tsv
from .similarity import ALL_MODES, GalleryIndex, ScoringMode
from .stats import detection_score_histogram, is_bimodal, raw_fraction, repulsion_pair_census
from .synth import SynthConfig, generate

log = logging.getLogger("orsim")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4
MANIFEST = "manifest.json"
EXECUTION_ONLY = {"out", "threads", "func", "verbose"}


@dataclass
class RunManifest:
    command: str
    config_hash: str
    dataset_hash: Optional[str]
    seeds: List[int] = field(default_factory=list)
    tool_version: str = __version__
    wall_time_s: float = 0.0
    config: dict = field(default_factory=dict)


def _config_of(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in EXECUTION_ONLY:
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


def _write_manifest(path: Path, args, ds_hash, seeds, started):
    cfg = _config_of(args)
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()
    man = RunManifest(args.command, digest, ds_hash, list(seeds), __version__,
                      round(time.perf_counter() - started, 3), cfg)
    path.write_text(json.dumps(asdict(man), indent=2, default=str) + "\n", encoding="utf-8")


def _file_manifest(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _int_list(text: str) -> List[int]:
    try:
        vals = [int(t) for t in re.split(r"[,\s]+", text.strip()) if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _seed_list(text: str) -> List[int]:
    # accepts "1,2,3" and ranges like "1..5"
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def _sizes(text: str) -> List[Optional[int]]:
    out = []
    for part in text.split(","):
        part = part.strip().lower()
        if part in ("full", "all"):
            out.append(None)
        elif part:
            out.append(int(part))
    return out


def _modes(text: str) -> List[ScoringMode]:
    if text.strip().lower() == "all":
        return list(ALL_MODES)
    try:
        return [ScoringMode.parse(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _mode(text: str) -> ScoringMode:
    try:
        return ScoringMode.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _threads(args) -> int:
    return args.threads if args.threads else default_threads()


def probe_filename(probe_id: str) -> str:
    if re.fullmatch(r"[A-Za-z0-9_-][A-Za-z0-9._-]*", probe_id):
        return probe_id + ".tsv"
    return quote(probe_id, safe="") + ".tsv"


# -- commands -------------------------------------------------------------------------

def cmd_synth(args) -> int:
    started = time.perf_counter()
    if args.print_default_config:
        print(json.dumps(SynthConfig().to_dict(), indent=2))
        return EXIT_OK
    if not args.config or not args.out:
        raise ValidationError("synth needs --config and --out")
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.config}: invalid JSON ({exc.msg})") from None
    cfg = SynthConfig.from_dict(raw)
    ds = generate(cfg)
    out = save_dataset(ds, args.out)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    args.resolved_config = cfg.to_dict()
    _write_manifest(out / MANIFEST, args, dataset_hash(ds), [cfg.seed], started)
    log.info("wrote %d detections, %d frames, %d probes to %s", len(ds.items), len(ds.frames), len(ds.probes), out)
    return EXIT_OK


def cmd_rank(args) -> int:
    started = time.perf_counter()
    ds = load_dataset_dir(args.data, args.probes)
    probes = ds.probes
    if not probes:
        raise ValidationError("no probes to rank")
    index = GalleryIndex(ds.items)
    ctxs = [build_probe_context(ds, pid, args.min_neighbor_score) for pid in probes]
    subsets = None
    if args.gallery_size:
        position = {it.item_id: k for k, it in enumerate(ds.items)}
        subsets = [sorted(position[i] for i in
                          sample_gallery_subset(ds, pid, args.gallery_size, args.seed).gallery_item_ids)
                   for pid in probes]
    ranked = rank_probes(ctxs, index, [args.mode], args.exclude_probe_frame, subsets,
                         top_k=args.top_k or None, threads=_threads(args))[args.mode]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rl in ranked:
        write_ranked_tsv(rl, out / probe_filename(rl.probe_id))
    _write_manifest(out / MANIFEST, args, dataset_hash(ds), [args.seed], started)
    log.info("ranked %d probes (%s) into %s", len(ranked), args.mode.value, out)
    return EXIT_OK


def _ranked_mode(ranked_dir: Path) -> ScoringMode:
    man = ranked_dir / MANIFEST
    if man.exists():
        try:
            return ScoringMode(json.loads(man.read_text())["config"]["mode"])
        except (KeyError, ValueError, json.JSONDecodeError):
            pass
    return ScoringMode.VISUAL_OR


def cmd_eval_search(args) -> int:
    started = time.perf_counter()
    ds = load_dataset_dir(args.data)
    ranked_dir = Path(args.ranked)
    files = sorted(ranked_dir.glob("*.tsv"))
    if not files:
        raise ValidationError(f"no ranked lists (*.tsv) in {ranked_dir}")
    mode = _ranked_mode(ranked_dir)
    ranked = [rl for f in files for rl in read_ranked_tsv(f, ds.by_id, mode)]
    report = evaluate_search(ranked, ds.frames, args.ks, args.iou)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_eval_report(report), encoding="utf-8")
    _write_manifest(_file_manifest(out), args, dataset_hash(ds), [], started)
    log.info("mAP %.4f over %d probes", report.map_score, report.num_probes)
    return EXIT_OK


def cmd_eval_det(args) -> int:
    started = time.perf_counter()
    ds = load_dataset_dir(args.data)
    report = evaluate_detection(ds.items, ds.frames, args.iou)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_detection_report(report), encoding="utf-8")
    _write_manifest(_file_manifest(out), args, dataset_hash(ds), [], started)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .plotting import plot_ablation

    started = time.perf_counter()
    ds = load_dataset_dir(args.data)
    result = run_ablation(ds, args.modes, args.gallery_sizes, args.seeds, args.ks,
                          args.exclude_probe_frame, args.min_neighbor_score, _threads(args))
    out = Path(args.out)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    for cell in result.cells:
        name = f"{cell.mode.value}_g{size_label(cell.gallery_size)}_s{cell.seed}.txt"
        (out / "reports" / name).write_text(format_eval_report(cell.report), encoding="utf-8")
    (out / "summary.tsv").write_text(format_summary(result), encoding="utf-8")
    if result.consistency:
        with open(out / "consistency.tsv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(result.consistency[0]), delimiter="\t", lineterminator="\n")
            w.writeheader()
            for row in result.consistency:
                w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
    plot_ablation(result.summary(), out / "ablation_map.png")
    _write_manifest(out / MANIFEST, args, dataset_hash(ds), args.seeds, started)
    sys.stdout.write(format_summary(result))
    return EXIT_OK


def cmd_stats(args) -> int:
    from .plotting import plot_score_histograms

    started = time.perf_counter()
    ds = load_dataset_dir(args.data)
    hist = detection_score_histogram(ds, args.bins)
    satisfied, violated = repulsion_pair_census(ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["bin_lo\tbin_hi\tpositive\tdistractor"]
    for i in range(len(hist.positive)):
        lines.append(f"{hist.edges[i]:.6g}\t{hist.edges[i + 1]:.6g}\t{hist.positive[i]}\t{hist.distractor[i]}")
    (out / "histogram.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = {
        "num_positive": int(hist.positive.sum()),
        "num_distractor": int(hist.distractor.sum()),
        "positive_frac_above_0.9": raw_fraction(ds, True, 0.9, above=True),
        "distractor_frac_below_0.9": raw_fraction(ds, False, 0.9, above=False),
        "distractor_bimodal": is_bimodal(hist.distractor),
        "census_satisfied": satisfied,
        "census_violated": violated,
    }
    (out / "summary.tsv").write_text(
        "".join(f"{k}\t{v:.9g}\n" if isinstance(v, float) else f"{k}\t{str(v).lower()}\n"
                for k, v in summary.items()), encoding="utf-8")
    if args.csv:
        with open(out / "histogram.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_center", "positive_fraction", "distractor_fraction"])
            pt, dt = max(hist.positive.sum(), 1), max(hist.distractor.sum(), 1)
            for i in range(len(hist.positive)):
                c = 0.5 * (hist.edges[i] + hist.edges[i + 1])
                w.writerow([f"{c:.6g}", f"{hist.positive[i] / pt:.9g}", f"{hist.distractor[i] / dt:.9g}"])
    plot_score_histograms(hist, out / "detection_scores.png")
    _write_manifest(out / MANIFEST, args, dataset_hash(ds), [], started)
    for k, v in summary.items():
        print(f"{k}\t{v}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orsim", description="Objectness/repulsion re-scoring for person search.")
    p.add_argument("--version", action="version", version=f"orsim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, threads=False, neighbors=False):
        if threads:
            sp.add_argument("--threads", type=int, default=None,
                            help="worker threads (default: $OR_RANK_THREADS or CPU count)")
        if neighbors:
            sp.add_argument("--exclude-probe-frame", action=argparse.BooleanOptionalAction, default=True,
                            help="drop the probe's own frame from the gallery (default: on)")
            sp.add_argument("--min-neighbor-score", type=float, default=None,
                            help="only use neighbors with at least this detection score")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--config", type=Path)
    sp.add_argument("--out", type=Path)
    sp.add_argument("--print-default-config", action="store_true")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("rank", help="rank the gallery for every probe")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--probes", type=Path, default=None, help=f"probe list (default: DATA/{PROBES_FILE})")
    sp.add_argument("--mode", type=_mode, default=ScoringMode.VISUAL_OR, help="visual | o | r | or")
    sp.add_argument("--gallery-size", type=int, default=None, help="sample a gallery subset of this size")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--top-k", type=int, default=None, help="keep only the first K entries")
    sp.add_argument("--out", type=Path, required=True)
    common(sp, threads=True, neighbors=True)
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("eval-search", help="mAP / CMC of ranked lists")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--ranked", type=Path, required=True)
    sp.add_argument("--ks", type=_int_list, default=[1, 5, 10])
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_eval_search)

    sp = sub.add_parser("eval-det", help="detection AP / recall")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_eval_det)

    sp = sub.add_parser("ablate", help="mode x gallery size x seed sweep")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--modes", type=_modes, default=list(ALL_MODES))
    sp.add_argument("--gallery-sizes", type=_sizes, default=[None], help="e.g. 50,100,500,full")
    sp.add_argument("--seeds", type=_seed_list, default=[0], help="e.g. 1,2,3 or 1..5")
    sp.add_argument("--ks", type=_int_list, default=[1, 5, 10])
    sp.add_argument("--out", type=Path, required=True)
    common(sp, threads=True, neighbors=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("stats", help="detection-score histograms and repulsion census")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--bins", type=int, default=20)
    sp.add_argument("--csv", action="store_true", help="also write plot-ready histogram.csv")
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"orsim: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except DataFormatError as exc:
        print(f"orsim: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValidationError, FileNotFoundError) as exc:
        print(f"orsim: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
