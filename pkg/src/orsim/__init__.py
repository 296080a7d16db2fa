"""Objectness- and repulsion-aware re-scoring and evaluation for person search."""

__version__ = "0.1.0"

from .core import BBox, Embedding, Frame, GalleryItem, ProbeContext, iou, l2_normalize  # noqa: E402
from .similarity import (  # noqa: E402
    ScoreBreakdown,
    ScoringMode,
    objectness_term,
    or_score,
    or_score_matrix,
    repulsion_term,
    visual_similarity,
)
from .ranking import RankedList, rank_gallery, rank_probes, truncate_top_k  # noqa: E402
from .metrics import (  # noqa: E402
    DetectionReport,
    EvalReport,
    average_precision,
    cmc_at_k,
    evaluate_detection,
    evaluate_search,
    match_ranked_list,
)
from .dataset import (  # noqa: E402
    Dataset,
    build_probe_context,
    load_dataset,
    load_dataset_dir,
    sample_gallery_subset,
    save_dataset,
)
