"""Streamline geometry: resampling, bilateral reflection, distances.

A streamline is an ordered polyline of 3-D points in RAS millimeters,
stored as a float64 array of shape (p, 3). The first coordinate axis is
right-left, so reflection across the midsagittal plane is a sign flip of
column 0.
"""

import numpy as np

from .errors import ShapeMismatchError


def as_streamline(points):
    """Validate a point sequence and return it as a float64 (p, 3) array.

    Raises ValueError for wrong dimensionality, fewer than 2 points, or
    non-finite coordinates.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"streamline must have shape (p, 3), got {pts.shape}")
    if pts.shape[0] < 2:
        raise ValueError("streamline needs at least 2 points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("streamline contains non-finite coordinates")
    return pts


def streamline_length(points):
    """Polyline length in mm: sum of consecutive point-to-point distances."""
    pts = as_streamline(points)
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _canonical_flips(batch):
    """Which rows of a (G, p, 3) batch run 'backwards'.

    A streamline and its reversal describe the same curve, so arc lengths
    are always accumulated along the lexicographically smaller of the two
    point orders. That choice makes resample() commute with reversal
    bit-exactly, not just to rounding error, which downstream label
    stability relies on.
    """
    fwd = batch.reshape(batch.shape[0], -1)
    bwd = batch[:, ::-1].reshape(batch.shape[0], -1)
    neq = fwd != bwd
    first = np.argmax(neq, axis=1)
    rows = np.arange(batch.shape[0])
    return neq.any(axis=1) & (fwd[rows, first] > bwd[rows, first])


def _resample_batch(batch, n):
    """Resample a (G, p, 3) batch of equal-length polylines to (G, n, 3)."""
    g, p, _ = batch.shape
    flip = _canonical_flips(batch)
    pts = np.where(flip[:, None, None], batch[:, ::-1], batch)

    seg = np.linalg.norm(np.diff(pts, axis=1), axis=2)  # (G, p-1)
    cum = np.concatenate([np.zeros((g, 1)), np.cumsum(seg, axis=1)], axis=1)
    total = cum[:, -1]
    targets = total[:, None] * np.linspace(0.0, 1.0, n)  # (G, n)

    # per-row searchsorted: count cum entries <= target, in row chunks to
    # bound the (chunk, p, n) comparison buffer
    idx = np.empty((g, n), dtype=np.int64)
    step = max(1, 2_000_000 // (p * n))
    for s in range(0, g, step):
        e = min(s + step, g)
        idx[s:e] = (cum[s:e, :, None] <= targets[s:e, None, :]).sum(axis=1) - 1
    np.clip(idx, 0, p - 2, out=idx)

    rows = np.arange(g)[:, None]
    lo = pts[rows, idx]  # (G, n, 3)
    hi = pts[rows, idx + 1]
    seg_sel = seg[rows, idx]
    off = targets - cum[rows, idx]
    frac = np.where(seg_sel > 0.0, off / np.where(seg_sel > 0.0, seg_sel, 1.0), 0.0)
    out = lo + frac[:, :, None] * (hi - lo)
    out[:, 0] = pts[:, 0]
    out[:, -1] = pts[:, -1]
    out[flip] = out[flip, ::-1]
    return out


def resample(points, n):
    """Resample a polyline to n points at equal arc-length spacing.

    Linear interpolation along cumulative chord length; both endpoints
    are preserved exactly. A degenerate zero-length polyline yields n
    copies of its single location. n must be >= 2.
    """
    pts = as_streamline(points)
    if n < 2:
        raise ValueError(f"resample target must be >= 2 points, got {n}")
    return _resample_batch(pts[None], n)[0]


def resample_many(streamlines, n):
    """Resample a sequence of streamlines into one (N, n, 3) array.

    Streamlines are grouped by point count so each group resamples as a
    single vectorized batch; results keep the input order.
    """
    if n < 2:
        raise ValueError(f"resample target must be >= 2 points, got {n}")
    count = len(streamlines)
    if count == 0:
        return np.zeros((0, n, 3), dtype=np.float64)
    sizes = {}
    for i, s in enumerate(streamlines):
        sizes.setdefault(len(s), []).append(i)
    out = np.empty((count, n, 3), dtype=np.float64)
    for _, indices in sizes.items():
        batch = np.stack([as_streamline(streamlines[i]) for i in indices])
        out[indices] = _resample_batch(batch, n)
    return out


def reflect_bilateral(points):
    """Mirror points across the midsagittal plane (x = 0).

    Accepts any array of shape (..., 3); returns a copy with the first
    coordinate negated. An exact involution: reflecting twice gives back
    the input bit-for-bit.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim < 1 or pts.shape[-1] != 3:
        raise ValueError(f"expected trailing axis of size 3, got {pts.shape}")
    out = pts.copy()
    # 0.0 - x instead of -x keeps exact zeros at +0.0
    out[..., 0] = 0.0 - out[..., 0]
    return out


def mdf_distance(a, b):
    """Mean direct-flip distance between two streamlines.

    Both inputs must have the same point count. The distance is the mean
    pointwise Euclidean distance minimized over the two relative
    orientations (direct and one-streamline-flipped), which makes it
    orientation-invariant and symmetric.
    """
    pa = as_streamline(a)
    pb = as_streamline(b)
    if pa.shape[0] != pb.shape[0]:
        raise ShapeMismatchError(
            f"mdf requires equal point counts, got {pa.shape[0]} and {pb.shape[0]}"
        )
    direct = np.linalg.norm(pa - pb, axis=1).mean()
    flipped = np.linalg.norm(pa - pb[::-1], axis=1).mean()
    return float(min(direct, flipped))


def mdf_min_to_set(query, pool):
    """Minimum MDF from each query streamline to any streamline in pool.

    query: (Q, n, 3), pool: (P, n, 3), both resampled to the same n.
    Returns a (Q,) array. Used for nearest-cluster distances, where a
    per-pair python loop would be too slow.
    """
    q = np.asarray(query, dtype=np.float64)
    p = np.asarray(pool, dtype=np.float64)
    if q.ndim != 3 or p.ndim != 3 or q.shape[-1] != 3 or p.shape[-1] != 3:
        raise ValueError("expected (N, n, 3) arrays")
    if q.shape[1] != p.shape[1]:
        raise ShapeMismatchError(
            f"mdf requires equal point counts, got {q.shape[1]} and {p.shape[1]}"
        )
    if p.shape[0] == 0:
        raise ValueError("pool is empty")
    n = q.shape[1]
    # keep the (chunk, P, n, 3) difference buffer near 100 MB
    chunk = max(1, int(100e6 // (p.shape[0] * n * 3 * 8)))
    out = np.full(q.shape[0], np.inf)
    prev = p[:, ::-1]
    for start in range(0, q.shape[0], chunk):
        qc = q[start : start + chunk]
        diff = qc[:, None] - p[None]
        direct = np.sqrt((diff * diff).sum(-1)).mean(-1)
        diff = qc[:, None] - prev[None]
        flip = np.sqrt((diff * diff).sum(-1)).mean(-1)
        out[start : start + chunk] = np.minimum(direct, flip).min(axis=1)
    return out
