"""Two-stage inference over whole tractograms.

Stage one keeps or discards each streamline; survivors go through the
stage-two classifier, whose 2K classes split into K clusters and K
outlier bins. The final label is the cluster id, or NON_SWM when either
stage rejected the streamline.

Work is partitioned into fixed batches up front, so the result is
bit-identical no matter how many worker threads execute them.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datasets import NON_SWM
from .errors import ShapeMismatchError
from .geometry import resample_many
from .network import classify, encode, predict

DEFAULT_BATCH = 4096


def to_final_labels(stage_two_labels, num_clusters):
    """Collapse 2K-space predictions: clusters stay, outlier bins reject."""
    labels = np.asarray(stage_two_labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= 2 * num_clusters):
        raise ValueError(f"stage-two labels out of range for {num_clusters} clusters")
    return np.where(labels < num_clusters, labels, NON_SWM)


@dataclass
class ParcellationResult:
    """Per-streamline outcome of both stages.

    stage_one: 0 discarded, 1 kept. stage_two: predicted 2K-space class,
    or -1 where stage one already discarded the streamline. final:
    cluster id or NON_SWM.
    """

    stage_one: np.ndarray
    stage_two: np.ndarray
    final: np.ndarray
    num_clusters: int

    def cluster_counts(self):
        kept = self.final[self.final >= 0]
        return np.bincount(kept, minlength=self.num_clusters)


def _check_models(stage_one_model, stage_two_model):
    if stage_one_model.stage != 1:
        raise ValueError(f"first model is stage {stage_one_model.stage}, expected 1")
    if stage_two_model.stage != 2:
        raise ValueError(f"second model is stage {stage_two_model.stage}, expected 2")
    if stage_one_model.num_classes != 2:
        raise ShapeMismatchError(
            f"stage-one model has {stage_one_model.num_classes} classes, expected 2"
        )
    if stage_two_model.num_classes % 2 != 0:
        raise ShapeMismatchError(
            f"stage-two model has {stage_two_model.num_classes} classes, "
            "expected an even count (clusters plus outlier bins)"
        )
    if stage_one_model.n_points != stage_two_model.n_points:
        raise ShapeMismatchError(
            f"models disagree on points per streamline: "
            f"{stage_one_model.n_points} vs {stage_two_model.n_points}"
        )


def parcellate(stage_one_model, stage_two_model, streamlines,
               batch_size=DEFAULT_BATCH, workers=1):
    """Run both stages over a tractogram.

    streamlines: sequence of (p_i, 3) arrays. batch_size fixes the work
    partition (and therefore the exact arithmetic); workers only chooses
    how many threads execute it.
    """
    _check_models(stage_one_model, stage_two_model)
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    k2 = stage_two_model.num_classes
    num_clusters = k2 // 2
    total = len(streamlines)
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return ParcellationResult(stage_one=empty, stage_two=empty.copy(),
                                  final=empty.copy(), num_clusters=num_clusters)

    x = resample_many(streamlines, stage_one_model.n_points)

    def run_batch(bounds):
        s, e = bounds
        xb = x[s:e]
        keep = predict(classify(
            stage_one_model.classifier,
            encode(stage_one_model.encoder, xb, with_argmax=False).g))
        s2 = np.full(e - s, -1, dtype=np.int64)
        final = np.full(e - s, NON_SWM, dtype=np.int64)
        kept = np.flatnonzero(keep == 1)
        if kept.size:
            cls = predict(classify(
                stage_two_model.classifier,
                encode(stage_two_model.encoder, xb[kept], with_argmax=False).g))
            s2[kept] = cls
            final[kept] = to_final_labels(cls, num_clusters)
        return keep.astype(np.int64), s2, final

    bounds = [(s, min(s + batch_size, total)) for s in range(0, total, batch_size)]
    if workers == 1:
        parts = [run_batch(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_batch, bounds))
    return ParcellationResult(
        stage_one=np.concatenate([p[0] for p in parts]),
        stage_two=np.concatenate([p[1] for p in parts]),
        final=np.concatenate([p[2] for p in parts]),
        num_clusters=num_clusters,
    )


@dataclass
class ImportanceProfile:
    """How often each resampled point wins the encoder max pool.

    mean / std aggregate, over streamlines, the per-streamline fraction
    of feature dimensions won by each point index. endpoint_share is the
    mean combined share of the first and last point.
    """

    mean: np.ndarray
    std: np.ndarray
    endpoint_share: float
    feature_dim: int
    count: int

    def to_dict(self):
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "endpoint_share": self.endpoint_share,
            "feature_dim": self.feature_dim,
            "count": self.count,
        }


def point_importance(model, streamlines, batch_size=DEFAULT_BATCH,
                     return_counts=False):
    """Count max-pool wins per point position across a tractogram.

    Every feature dimension is won by exactly one point (first index on
    ties), so each streamline's raw counts sum to the encoder width.
    """
    if len(streamlines) == 0:
        raise ValueError("no streamlines given")
    n = model.n_points
    f = model.encoder.out_dim
    x = resample_many(streamlines, n)
    total = x.shape[0]
    sums = np.zeros(n)
    sq_sums = np.zeros(n)
    all_counts = np.empty((total, n), dtype=np.int64) if return_counts else None
    row_base = np.arange(0, batch_size) * n
    for s in range(0, total, batch_size):
        e = min(s + batch_size, total)
        gf = encode(model.encoder, x[s:e])
        flat = (gf.argmax + row_base[: e - s, None]).ravel()
        counts = np.bincount(flat, minlength=(e - s) * n).reshape(e - s, n)
        if return_counts:
            all_counts[s:e] = counts
        shares = counts / f
        sums += shares.sum(axis=0)
        sq_sums += (shares * shares).sum(axis=0)
    mean = sums / total
    var = np.maximum(sq_sums / total - mean * mean, 0.0)
    profile = ImportanceProfile(
        mean=mean,
        std=np.sqrt(var),
        endpoint_share=float(mean[0] + mean[-1]),
        feature_dim=f,
        count=total,
    )
    return (profile, all_counts) if return_counts else profile
