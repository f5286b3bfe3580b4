"""Parcellation quality metrics.

Label-space conventions: stage-two classifiers emit 2K classes (cluster
c in [0, K), outlier class K + c). Final labels collapse outliers and
filtered streamlines to NON_SWM. Metrics that run "in final space" use
K + 1 categories: the K clusters plus one rejection category.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .datasets import NON_SWM
from .errors import ShapeMismatchError
from .geometry import mdf_min_to_set, resample_many


def _as_labels(arr, name):
    out = np.asarray(arr, dtype=np.int64)
    if out.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {out.shape}")
    return out


def accuracy(pred, truth):
    """Fraction of exact label matches. Empty input is an error."""
    pred = _as_labels(pred, "pred")
    truth = _as_labels(truth, "truth")
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"{pred.shape[0]} predictions vs {truth.shape[0]} labels")
    if pred.size == 0:
        raise ValueError("cannot compute accuracy of an empty set")
    return float((pred == truth).mean())


def confusion_matrix(pred, truth, num_classes):
    """(num_classes, num_classes) counts; rows are truth, columns prediction."""
    pred = _as_labels(pred, "pred")
    truth = _as_labels(truth, "truth")
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"{pred.shape[0]} predictions vs {truth.shape[0]} labels")
    for name, arr in (("pred", pred), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} labels out of range for {num_classes} classes")
    flat = truth * num_classes + pred
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )


@dataclass
class F1Report:
    per_class: np.ndarray
    mean: float
    std: float

    def to_dict(self):
        return {
            "per_class": [float(v) for v in self.per_class],
            "mean": self.mean,
            "std": self.std,
        }


def macro_f1(pred, truth, num_classes):
    """Unweighted mean and spread of per-class F1.

    A class with no predictions and no true members gets F1 = 0 (the
    0/0 convention), which also penalizes degenerate collapse onto a
    few classes. std is the population spread across classes.
    """
    conf = confusion_matrix(pred, truth, num_classes)
    if conf.sum() == 0:
        raise ValueError("cannot compute F1 of an empty set")
    tp = np.diag(conf).astype(np.float64)
    pred_tot = conf.sum(axis=0).astype(np.float64)
    true_tot = conf.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_tot > 0, tp / pred_tot, 0.0)
        recall = np.where(true_tot > 0, tp / true_tot, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)
    return F1Report(per_class=f1, mean=float(f1.mean()), std=float(f1.std()))


def final_class_index(final_labels, num_clusters):
    """Map final labels onto [0, K]: cluster ids stay, NON_SWM becomes K.

    Lets the standard accuracy / F1 machinery run in final space with
    the rejection category as one extra class.
    """
    labels = _as_labels(final_labels, "final_labels")
    if labels.size:
        if labels.min() < NON_SWM or labels.max() >= num_clusters:
            raise ValueError(
                f"final labels must be NON_SWM or in [0, {num_clusters})"
            )
    return np.where(labels == NON_SWM, num_clusters, labels)


@dataclass
class CirReport:
    rate: float
    counts: np.ndarray
    identified: list
    threshold: int

    def to_dict(self):
        return {
            "rate": self.rate,
            "counts": [int(c) for c in self.counts],
            "identified": [int(c) for c in self.identified],
            "threshold": self.threshold,
        }


def cluster_identification_rate(final_labels, num_clusters, threshold=10,
                                cluster_ids=None):
    """Fraction of clusters detected with at least `threshold` streamlines.

    cluster_ids restricts the check to a subset (helpful when a subject
    is only expected to carry some of the atlas).
    """
    labels = final_class_index(final_labels, num_clusters)  # validates range
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    counts = np.bincount(labels[labels < num_clusters], minlength=num_clusters)
    if cluster_ids is None:
        ids = np.arange(num_clusters)
    else:
        ids = np.unique(np.asarray(cluster_ids, dtype=np.int64))
        if ids.size == 0:
            raise ValueError("cluster_ids is empty")
        if ids.min() < 0 or ids.max() >= num_clusters:
            raise ValueError(f"cluster_ids out of range for {num_clusters} clusters")
    hit = counts[ids] >= threshold
    return CirReport(
        rate=float(hit.mean()),
        counts=counts,
        identified=[int(c) for c in ids[hit]],
        threshold=threshold,
    )


@dataclass
class CdaReport:
    per_cluster: dict
    mean: "float | None"
    std: "float | None"
    skipped: list

    def to_dict(self):
        return {
            "per_cluster": {str(k): v for k, v in self.per_cluster.items()},
            "mean": self.mean,
            "std": self.std,
            "skipped": self.skipped,
        }


def cluster_distance_to_atlas(subject_streamlines, subject_final,
                              atlas_streamlines, atlas_final, num_clusters,
                              n_points=15):
    """Geometric agreement with the atlas, cluster by cluster.

    For every subject streamline assigned to cluster c, take its minimum
    MDF to the atlas streamlines of cluster c; report the per-cluster
    mean of those minima and the mean/std across clusters. Clusters the
    atlas does not cover are skipped with a warning.
    """
    if len(subject_streamlines) == 0:
        raise ValueError("subject has no streamlines")
    subject_final = final_class_index(subject_final, num_clusters)
    atlas_final = final_class_index(atlas_final, num_clusters)
    if len(subject_streamlines) != subject_final.shape[0]:
        raise ShapeMismatchError("subject streamline/label count mismatch")
    if len(atlas_streamlines) != atlas_final.shape[0]:
        raise ShapeMismatchError("atlas streamline/label count mismatch")
    subj = resample_many(subject_streamlines, n_points)
    atlas = resample_many(atlas_streamlines, n_points)
    per_cluster = {}
    skipped = []
    for c in np.unique(subject_final):
        if c >= num_clusters:
            continue  # rejected streamlines have no atlas target
        pool = atlas[atlas_final == c]
        if pool.shape[0] == 0:
            warnings.warn(f"atlas has no streamlines for cluster {int(c)}; skipped",
                          stacklevel=2)
            skipped.append(int(c))
            continue
        minima = mdf_min_to_set(subj[subject_final == c], pool)
        per_cluster[int(c)] = float(minima.mean())
    values = np.array(list(per_cluster.values()), dtype=np.float64)
    mean = float(values.mean()) if values.size else None
    std = float(values.std()) if values.size else None
    return CdaReport(per_cluster=per_cluster, mean=mean, std=std, skipped=skipped)


@dataclass
class IspvReport:
    per_cluster: np.ndarray  # NaN where the cluster is absent everywhere
    mean: "float | None"

    def to_dict(self):
        return {
            "per_cluster": [None if np.isnan(v) else float(v)
                            for v in self.per_cluster],
            "mean": self.mean,
        }


def inter_subject_variability(counts):
    """Coefficient of variation of per-subject cluster sizes.

    counts: (subjects, clusters) streamline counts. Per cluster this is
    population std / mean; a cluster found in no subject has no defined
    value and is reported as absent.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2:
        raise ValueError(f"expected (subjects, clusters) counts, got {counts.shape}")
    if counts.shape[0] < 2:
        raise ValueError("variability needs at least 2 subjects")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    mean = counts.mean(axis=0)
    std = counts.std(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cv = np.where(mean > 0, std / mean, np.nan)
    defined = cv[~np.isnan(cv)]
    return IspvReport(per_cluster=cv,
                      mean=float(defined.mean()) if defined.size else None)


# ---------------------------------------------------------------------------
# spatial overlap


@dataclass
class GridSpec:
    """Axis-aligned voxel grid: origin corner, isotropic voxel edge, dims."""

    origin: np.ndarray
    voxel_size: float
    dims: tuple

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.voxel_size = float(self.voxel_size)
        self.dims = tuple(int(d) for d in self.dims)
        if self.voxel_size <= 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be 3 positive ints, got {self.dims}")

    def same_lattice(self, other):
        return (
            self.dims == other.dims
            and self.voxel_size == other.voxel_size
            and np.array_equal(self.origin, other.origin)
        )


@dataclass
class Heatmap:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.dims:
            raise ShapeMismatchError(
                f"values shape {self.values.shape} vs grid dims {self.grid.dims}"
            )


def _voxel_of(points, grid):
    return np.floor((points - grid.origin) / grid.voxel_size).astype(np.int64)


def _data_bounds(subjects):
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    any_points = False
    for pts in subjects:
        pts = np.asarray(pts, dtype=np.float64)
        if pts.size == 0:
            continue
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"subject points must be (P, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("subject points contain non-finite values")
        any_points = True
        np.minimum(lo, pts.min(axis=0), out=lo)
        np.maximum(hi, pts.max(axis=0), out=hi)
    return (lo, hi) if any_points else (None, None)


def population_heatmap(subjects, grid=None, voxel_size=2.0, outside="error"):
    """Per-voxel fraction of subjects with at least one point there.

    subjects: one (P, 3) point array per subject (already filtered to
    whatever structure is being mapped). Without an explicit grid, one
    is built over the padded bounding box of all points. With a grid,
    points falling outside either raise (outside="error") or grow the
    grid along its own lattice (outside="extend").
    """
    if len(subjects) == 0:
        raise ValueError("no subjects given")
    if outside not in ("error", "extend"):
        raise ValueError(f"outside must be 'error' or 'extend', got {outside!r}")
    lo, hi = _data_bounds(subjects)
    if grid is None:
        if lo is None:
            raise ValueError("cannot build a grid: no subject has any points")
        origin = lo - voxel_size
        dims = tuple(int(d) for d in
                     np.floor((hi - origin) / voxel_size).astype(np.int64) + 2)
        grid = GridSpec(origin=origin, voxel_size=voxel_size, dims=dims)
    elif outside == "extend" and lo is not None:
        v = grid.voxel_size
        shift = np.maximum(0, np.ceil((grid.origin - lo) / v)).astype(np.int64)
        origin = grid.origin - shift * v
        need = np.floor((hi - origin) / v).astype(np.int64) + 1
        dims = tuple(int(d) for d in np.maximum(np.array(grid.dims) + shift, need))
        grid = GridSpec(origin=origin, voxel_size=v, dims=dims)

    hit_count = np.zeros(grid.dims, dtype=np.int64)
    flat = hit_count.ravel()
    for pts in subjects:
        pts = np.asarray(pts, dtype=np.float64)
        if pts.size == 0:
            continue
        idx = _voxel_of(pts, grid)
        if np.any(idx < 0) or np.any(idx >= np.array(grid.dims)):
            raise ValueError("points fall outside the requested grid")
        flat[np.unique(np.ravel_multi_index(idx.T, grid.dims))] += 1
    return Heatmap(grid=grid, values=hit_count / len(subjects))


def weighted_dice(a, b):
    """Overlap of two heatmaps: 2 * sum(min) / (sum(a) + sum(b)).

    Requires identical grids. When both maps are empty the overlap is
    undefined and None is returned.
    """
    if not a.grid.same_lattice(b.grid):
        raise ShapeMismatchError("heatmap grids differ; cannot compare")
    denom = float(a.values.sum() + b.values.sum())
    if denom == 0.0:
        return None
    return float(2.0 * np.minimum(a.values, b.values).sum() / denom)
