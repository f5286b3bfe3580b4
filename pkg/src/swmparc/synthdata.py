"""Synthetic tractography with known ground truth.

Superficial clusters are built around u-shaped prototype arcs: both
endpoints sit on a spherical "cortical" shell and the middle dips a
little toward the interior. Members of a cluster are the prototype (or
its midsagittal mirror, for bilateral clusters) plus a smooth random
perturbation; plausible members get small perturbations, outlier
members get large ones. Deep streamlines are long arcs that cross near
the center of the shell, unmistakably different from any u-fiber.

Two labeled datasets come out of one generation pass. The filter
dataset labels every superficial streamline 1 (outliers included; the
filter's only job is superficial vs deep) and every deep streamline 0.
The cluster dataset holds the superficial streamlines with 2K labels:
c for plausible members of cluster c, K + c for its outliers.

Prototype separation is rejection-sampled to stay well above the
perturbation scale, so nearest-prototype assignment (and therefore a
trained classifier) can recover the labels almost perfectly at default
settings.

All coordinates are quantized to float32 resolution before use, so a
round trip through the streamline file format reproduces the arrays
bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from .datasets import LabeledDataset
from .errors import GenerationError
from .geometry import mdf_distance, reflect_bilateral, resample, resample_many

SHELL_RADIUS = 70.0  # mm, roughly cortex scale
SWM_POINTS = 64
DWM_POINTS = 160
_MAX_TRIES = 500


@dataclass
class AtlasSpec:
    """Dials of the generator; defaults give a comfortable training set."""

    num_clusters: int = 8
    streamlines_per_cluster: int = 600
    outlier_fraction: float = 1.0 / 6.0
    dwm_count: int = 4000
    coordinate_noise: float = 1.5  # per-axis mm scale of plausible spread
    outlier_noise: float = 8.0  # mm scale of outlier deviation
    min_length: float = 40.0
    bilateral: bool = True

    def validate(self):
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")
        if self.streamlines_per_cluster < 2:
            raise ValueError("streamlines_per_cluster must be >= 2")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must be in [0, 1)")
        if self.dwm_count < 0:
            raise ValueError("dwm_count must be >= 0")
        if self.coordinate_noise <= 0 or self.outlier_noise <= 0:
            raise ValueError("noise scales must be positive")
        if self.outlier_noise <= self.coordinate_noise:
            raise ValueError("outlier_noise must exceed coordinate_noise")
        if self.min_length <= 0:
            raise ValueError("min_length must be positive")
        return self

    @property
    def outliers_per_cluster(self):
        return int(round(self.streamlines_per_cluster * self.outlier_fraction))

    @property
    def plausible_per_cluster(self):
        n = self.streamlines_per_cluster - self.outliers_per_cluster
        if n < 1:
            raise ValueError("outlier_fraction leaves no plausible streamlines")
        return n


@dataclass
class SyntheticAtlas:
    d1: LabeledDataset  # superficial (1) vs deep (0)
    d2: LabeledDataset  # cluster c vs outlier bin K + c
    prototypes: np.ndarray  # (K, SWM_POINTS, 3)
    spec: AtlasSpec
    seed: int


def _bezier_basis(t):
    t = t[:, None]
    return np.concatenate(
        [(1 - t) ** 3, 3 * (1 - t) ** 2 * t, 3 * (1 - t) * t ** 2, t ** 3], axis=1
    )


def _smooth_basis(t):
    # orthonormal polynomials on [0, 1]; combined with iid coefficients
    # they give smooth curves with unit mean-square amplitude
    t = t[:, None]
    return np.concatenate(
        [
            np.ones_like(t),
            np.sqrt(3.0) * (2 * t - 1),
            np.sqrt(5.0) * (6 * t ** 2 - 6 * t + 1),
            np.sqrt(7.0) * (20 * t ** 3 - 30 * t ** 2 + 12 * t - 1),
        ],
        axis=1,
    )


def _unit(v):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norm, 1e-12)


def _unit_vectors(rng, count):
    return _unit(rng.normal(size=(count, 3)))


def _curve_lengths(curves):
    return np.linalg.norm(np.diff(curves, axis=1), axis=2).sum(axis=1)


def _quantize(arr):
    # collapse to float32 resolution so file round trips are bit-exact
    return np.asarray(arr, dtype="<f4").astype(np.float64)


def _draw_prototype(rng, spec):
    """One candidate u-arc; geometry checks happen at the caller."""
    while True:
        d = _unit_vectors(rng, 1)[0]
        if not spec.bilateral or d[0] >= 0.25:
            break
    helper = np.zeros(3)
    helper[np.argmin(np.abs(d))] = 1.0
    t1 = _unit(np.cross(d, helper))
    t2 = np.cross(d, t1)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    u = np.cos(phi) * t1 + np.sin(phi) * t2
    chord = rng.uniform(max(40.0, spec.min_length), 56.0)
    alpha = np.arcsin(chord / (2.0 * SHELL_RADIUS))
    dm = _unit(np.cos(alpha) * d - np.sin(alpha) * u)
    dp = _unit(np.cos(alpha) * d + np.sin(alpha) * u)
    depth = rng.uniform(8.0, 16.0)
    inner = SHELL_RADIUS - depth
    controls = np.stack(
        [
            SHELL_RADIUS * dm,
            inner * _unit(2.0 * dm / 3.0 + dp / 3.0),
            inner * _unit(dm / 3.0 + 2.0 * dp / 3.0),
            SHELL_RADIUS * dp,
        ]
    )
    t = np.linspace(0.0, 1.0, SWM_POINTS)
    return _bezier_basis(t) @ controls


def _draw_prototypes(rng, spec):
    """Rejection-sample K prototypes with guaranteed mutual separation.

    The separation floor sits far above the plausible perturbation
    scale, so cluster identity survives the noise; mirrors count as
    rivals too, which keeps arcs off the midsagittal plane.
    """
    separation = max(12.0 * spec.coordinate_noise, 8.0)
    accepted = []
    accepted_15 = []  # resampled copies for fast MDF screening
    for c in range(spec.num_clusters):
        for attempt in range(_MAX_TRIES):
            cand = _draw_prototype(rng, spec)
            if _curve_lengths(cand[None])[0] < spec.min_length * 1.05:
                continue
            cand_15 = resample(cand, 15)
            rivals = list(accepted_15)
            if spec.bilateral:
                rivals += [reflect_bilateral(p) for p in accepted_15]
                rivals.append(reflect_bilateral(cand_15))
            if all(mdf_distance(cand_15, r) >= separation for r in rivals):
                accepted.append(cand)
                accepted_15.append(cand_15)
                break
        else:
            raise GenerationError(
                f"could not place prototype {c} after {_MAX_TRIES} tries; "
                "lower num_clusters or coordinate_noise"
            )
    return np.stack(accepted)


def _cluster_offsets(rng, spec, basis, n_plausible, n_outlier):
    """Smooth per-streamline displacement curves for one cluster.

    Outliers use the same smooth basis as plausible streamlines, only
    with the larger noise scale, so both classes share the same
    deviation profile along the curve and their separation is set
    purely by the sigma ratio. Division by two turns the per-basis
    coefficient scale into a per-axis root-mean-square amplitude equal
    to the dial value.
    """
    coeffs = np.concatenate(
        [
            rng.normal(0.0, spec.coordinate_noise / 2.0, size=(n_plausible, 4, 3)),
            rng.normal(0.0, spec.outlier_noise / 2.0, size=(n_outlier, 4, 3)),
        ]
    )
    return np.einsum("mj,bjc->bmc", basis, coeffs)


def _sample_cluster(rng, spec, prototype):
    n_plaus = spec.plausible_per_cluster
    n_out = spec.outliers_per_cluster
    count = n_plaus + n_out
    basis = _smooth_basis(np.linspace(0.0, 1.0, SWM_POINTS))
    if spec.bilateral:
        sides = rng.integers(0, 2, size=count)
    else:
        sides = np.zeros(count, dtype=np.int64)
    base = np.where(sides[:, None, None] == 1,
                    reflect_bilateral(prototype)[None], prototype[None])
    curves = base + _cluster_offsets(rng, spec, basis, n_plaus, n_out)
    for _ in range(_MAX_TRIES):
        short = np.flatnonzero(_curve_lengths(curves) < spec.min_length)
        if short.size == 0:
            return curves
        plaus_bad = short[short < n_plaus]
        out_bad = short[short >= n_plaus] - n_plaus
        redraw = _cluster_offsets(rng, spec, basis, plaus_bad.size, out_bad.size)
        curves[short] = base[short] + redraw
    raise GenerationError("could not keep cluster streamlines above min_length")


def _sample_dwm(rng, spec):
    """Deep streamlines: long arcs passing near the shell center."""
    count = spec.dwm_count
    if count == 0:
        return np.zeros((0, DWM_POINTS, 3))
    basis = _bezier_basis(np.linspace(0.0, 1.0, DWM_POINTS))

    def draw(c):
        d1 = _unit_vectors(rng, c)
        d2 = _unit(-d1 + rng.normal(0.0, 0.35, size=(c, 3)))
        inner1 = rng.uniform(4.0, 18.0, size=c)[:, None] * _unit_vectors(rng, c)
        inner2 = rng.uniform(4.0, 18.0, size=c)[:, None] * _unit_vectors(rng, c)
        controls = np.stack(
            [SHELL_RADIUS * d1, inner1, inner2, SHELL_RADIUS * d2], axis=1
        )
        ok = (d1 * d2).sum(axis=1) < -0.5  # endpoints at least 120 deg apart
        return np.einsum("mj,bjc->bmc", basis, controls), ok

    curves, ok = draw(count)
    for _ in range(_MAX_TRIES):
        bad = np.flatnonzero(~ok | (_curve_lengths(curves) < spec.min_length))
        if bad.size == 0:
            return curves
        curves[bad], ok_new = draw(bad.size)
        ok[bad] = ok_new
    raise GenerationError("could not draw valid deep streamlines")


def generate_atlas(spec=None, seed=0):
    """Build the full synthetic atlas; same seed, same bytes out."""
    spec = (spec or AtlasSpec()).validate()
    rng = np.random.default_rng(seed)
    prototypes = _draw_prototypes(rng, spec)

    swm = []
    d2_labels = []
    k = spec.num_clusters
    for c in range(k):
        curves = _quantize(_sample_cluster(rng, spec, prototypes[c]))
        swm.extend(curves)
        d2_labels += [c] * spec.plausible_per_cluster
        d2_labels += [k + c] * spec.outliers_per_cluster
    dwm = [curve for curve in _quantize(_sample_dwm(rng, spec))]

    d1 = LabeledDataset(
        streamlines=swm + dwm,
        labels=np.concatenate(
            [np.ones(len(swm), dtype=np.int64), np.zeros(len(dwm), dtype=np.int64)]
        ),
    )
    d2 = LabeledDataset(streamlines=list(swm),
                        labels=np.asarray(d2_labels, dtype=np.int64))
    return SyntheticAtlas(d1=d1, d2=d2, prototypes=_quantize(prototypes),
                          spec=spec, seed=seed)


def prototype_assignments(atlas, n_points=15):
    """Nearest-prototype labels for the cluster dataset, by MDF.

    The reference oracle for cluster identity: with default dials it
    agrees with the generating labels (modulo outlier bins) for
    essentially every plausible streamline.
    """
    k = atlas.spec.num_clusters
    pool = [atlas.prototypes[c] for c in range(k)]
    cluster_of = list(range(k))
    if atlas.spec.bilateral:
        pool += [reflect_bilateral(atlas.prototypes[c]) for c in range(k)]
        cluster_of += list(range(k))
    pool = resample_many(pool, n_points)
    cluster_of = np.asarray(cluster_of)
    x = resample_many(atlas.d2.streamlines, n_points)
    best = np.full(x.shape[0], -1, dtype=np.int64)
    best_dist = np.full(x.shape[0], np.inf)
    for j in range(pool.shape[0]):
        diff = x - pool[j][None]
        direct = np.sqrt((diff * diff).sum(-1)).mean(-1)
        diff = x - pool[j, ::-1][None]
        flipped = np.sqrt((diff * diff).sum(-1)).mean(-1)
        dist = np.minimum(direct, flipped)
        closer = dist < best_dist
        best[closer] = cluster_of[j]
        best_dist[closer] = dist[closer]
    return best


def kfold_split(num_items, num_folds, seed):
    """Deterministic near-equal split into disjoint, exhaustive folds.

    Returns a list of (train_indices, test_indices) pairs, both sorted.
    """
    if num_folds < 2:
        raise ValueError(f"need at least 2 folds, got {num_folds}")
    if num_folds > num_items:
        raise ValueError(f"cannot split {num_items} items into {num_folds} folds")
    perm = np.random.default_rng(seed).permutation(num_items)
    pieces = np.array_split(perm, num_folds)
    out = []
    for i, piece in enumerate(pieces):
        test = np.sort(piece)
        train = np.sort(np.concatenate(pieces[:i] + pieces[i + 1 :]))
        out.append((train, test))
    return out
