"""Shared test utilities: finite-difference gradients and tiny fixtures."""

import numpy as np

from swmparc.network import (
    ClassifierParams,
    EncoderParams,
    ProjectorParams,
)


def fd_gradient(fn, arrays, h=1e-5):
    """Central-difference gradient of a scalar function.

    arrays maps names to float64 numpy arrays that fn reads in place;
    each entry is perturbed elementwise and restored. Returns a matching
    dict of gradient arrays.
    """
    out = {}
    for name, arr in arrays.items():
        grad = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = fn()
            flat[i] = keep - h
            down = fn()
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * h)
        out[name] = grad
    return out


def max_rel_error(analytic, numeric, floor=1e-4):
    """Worst relative disagreement between two gradient dicts."""
    worst = 0.0
    for name, ga in analytic.items():
        gn = numeric[name]
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), floor)
        worst = max(worst, float(np.max(np.abs(ga - gn) / denom)))
    return worst


def tiny_encoder(rng, widths=(4, 6)):
    return EncoderParams.init(rng, widths)


def tiny_classifier(rng, in_dim, hidden=(5,), num_classes=3):
    return ClassifierParams.init(rng, in_dim, hidden, num_classes)


def tiny_projector(rng, in_dim, widths=(6, 4)):
    return ProjectorParams.init(rng, in_dim, widths)


def warm_running_stats(module, seed=11):
    """Give batch-norm layers non-trivial running statistics."""
    r = np.random.default_rng(seed)
    for nrm in getattr(module, "norms", []):
        nrm.running_mean[:] = r.normal(size=nrm.running_mean.shape) * 0.4
        nrm.running_var[:] = 0.5 + r.random(nrm.running_var.shape)
    return module


def random_polyline(rng, n_points, scale=20.0):
    """A random but finite polyline with distinct consecutive points."""
    steps = rng.normal(size=(n_points - 1, 3))
    norms = np.linalg.norm(steps, axis=1, keepdims=True)
    steps = steps / np.maximum(norms, 1e-9) * (0.5 + rng.random((n_points - 1, 1)))
    start = rng.normal(size=3) * scale
    return np.concatenate([start[None], start[None] + np.cumsum(steps, axis=0)])
