"""Point-cloud classification network, from parameters to file format.

The encoder applies a shared per-point MLP (affine, batch norm, ReLU at
every layer) and max-pools over the point axis into a global feature
vector. A small fully connected head classifies that vector; a separate
two-layer projection head maps it onto the unit sphere for contrastive
training. All math is float64 numpy; model files store float32.

Parameter blocks are addressed by name ("enc0.weight", "cla1.gamma",
"proj1.bias", ...). Gradient dictionaries and optimizer state use the
same keys, so freezing a component is just dropping its keys.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    FileFormatError,
    NonFiniteError,
    ShapeMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)

NORM_EPS = 1e-5
NORM_MOMENTUM = 0.1

POINT_DIM = 3
DEFAULT_POINTS = 15
ENCODER_WIDTHS = (64, 128, 1024)
CLASSIFIER_HIDDEN = (512, 256)
PROJECTOR_WIDTHS = (1024, 128)

MODEL_MAGIC = b"SWMM"
MODEL_VERSION = 1


def _check_finite(arr, where):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite activation in {where}")


def _blame_layer(prefix, caches):
    """Find the first layer whose pre-norm activations went non-finite.

    Only called on the error path, so the full scans here are free in
    normal operation.
    """
    for i, layer in enumerate(caches):
        probe = layer.norm.a if layer.norm is not None else layer.x_in
        if not np.isfinite(probe).all():
            return f"{prefix}{i}"
    return f"{prefix}{len(caches) - 1}"


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class LinearParams:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)

    @classmethod
    def init(cls, rng, fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return cls(weight=weight, bias=np.zeros(fan_out, dtype=np.float64))


@dataclass
class NormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def init(cls, width):
        return cls(
            gamma=np.ones(width, dtype=np.float64),
            beta=np.zeros(width, dtype=np.float64),
            running_mean=np.zeros(width, dtype=np.float64),
            running_var=np.ones(width, dtype=np.float64),
        )


def _layer_blocks(prefix, i, linear, norm):
    out = {
        f"{prefix}{i}.weight": linear.weight,
        f"{prefix}{i}.bias": linear.bias,
    }
    if norm is not None:
        out[f"{prefix}{i}.gamma"] = norm.gamma
        out[f"{prefix}{i}.beta"] = norm.beta
        out[f"{prefix}{i}.running_mean"] = norm.running_mean
        out[f"{prefix}{i}.running_var"] = norm.running_var
    return out


@dataclass
class EncoderParams:
    """Shared per-point MLP. Every layer carries a norm."""

    linears: list
    norms: list
    prefix: str = "enc"

    @classmethod
    def init(cls, rng, widths=ENCODER_WIDTHS):
        fan_in = POINT_DIM
        linears, norms = [], []
        for w in widths:
            linears.append(LinearParams.init(rng, fan_in, w))
            norms.append(NormParams.init(w))
            fan_in = w
        return cls(linears=linears, norms=norms)

    @property
    def widths(self):
        return tuple(lin.weight.shape[1] for lin in self.linears)

    @property
    def out_dim(self):
        return self.linears[-1].weight.shape[1]

    def named_arrays(self):
        out = {}
        for i, (lin, nrm) in enumerate(zip(self.linears, self.norms)):
            out.update(_layer_blocks(self.prefix, i, lin, nrm))
        return out

    def trainable(self):
        return {
            name: arr
            for name, arr in self.named_arrays().items()
            if not name.endswith(("running_mean", "running_var"))
        }


@dataclass
class ClassifierParams:
    """Fully connected head; norms on all layers except the last."""

    linears: list
    norms: list
    prefix: str = "cla"

    @classmethod
    def init(cls, rng, in_dim, hidden=CLASSIFIER_HIDDEN, num_classes=2):
        fan_in = in_dim
        linears, norms = [], []
        for w in hidden:
            linears.append(LinearParams.init(rng, fan_in, w))
            norms.append(NormParams.init(w))
            fan_in = w
        linears.append(LinearParams.init(rng, fan_in, num_classes))
        return cls(linears=linears, norms=norms)

    @property
    def num_classes(self):
        return self.linears[-1].weight.shape[1]

    @property
    def in_dim(self):
        return self.linears[0].weight.shape[0]

    def named_arrays(self):
        out = {}
        for i, lin in enumerate(self.linears):
            nrm = self.norms[i] if i < len(self.norms) else None
            out.update(_layer_blocks(self.prefix, i, lin, nrm))
        return out

    def trainable(self):
        return {
            name: arr
            for name, arr in self.named_arrays().items()
            if not name.endswith(("running_mean", "running_var"))
        }


@dataclass
class ProjectorParams:
    """Two affine maps then L2 normalization; no norm layers, no ReLU."""

    linears: list
    prefix: str = "proj"

    @classmethod
    def init(cls, rng, in_dim, widths=PROJECTOR_WIDTHS):
        fan_in = in_dim
        linears = []
        for w in widths:
            linears.append(LinearParams.init(rng, fan_in, w))
            fan_in = w
        return cls(linears=linears)

    @property
    def out_dim(self):
        return self.linears[-1].weight.shape[1]

    def named_arrays(self):
        out = {}
        for i, lin in enumerate(self.linears):
            out.update(_layer_blocks(self.prefix, i, lin, None))
        return out

    def trainable(self):
        return self.named_arrays()


@dataclass
class StageModel:
    """A trained stage: encoder plus classifier (plus optional projector).

    stage is 1 (plausible-vs-deep filter) or 2 (cluster assignment);
    num_classes is 2 for stage one and twice the cluster count for stage
    two, where classes [0, K) are clusters and [K, 2K) their outliers.
    """

    stage: int
    n_points: int
    num_classes: int
    encoder: EncoderParams
    classifier: ClassifierParams
    projector: "ProjectorParams | None" = None

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.classifier.num_classes != self.num_classes:
            raise ShapeMismatchError(
                f"cla{len(self.classifier.linears) - 1}.weight has "
                f"{self.classifier.num_classes} outputs, expected {self.num_classes}"
            )

    def named_arrays(self):
        out = {}
        out.update(self.encoder.named_arrays())
        out.update(self.classifier.named_arrays())
        if self.projector is not None:
            out.update(self.projector.named_arrays())
        return out

    def trainable(self):
        return {
            name: arr
            for name, arr in self.named_arrays().items()
            if not name.endswith(("running_mean", "running_var"))
        }


# ---------------------------------------------------------------------------
# forward


@dataclass
class _NormCache:
    a: np.ndarray  # pre-norm activations, kept for the backward pass
    mu: np.ndarray
    invstd: np.ndarray
    train: bool

    def xhat(self):
        return (self.a - self.mu) * self.invstd


@dataclass
class _LayerCache:
    x_in: np.ndarray
    norm: "_NormCache | None"
    relu_mask: "np.ndarray | None"


@dataclass
class EncoderCache:
    layers: list
    batch: int
    n_points: int
    argmax: np.ndarray


@dataclass
class GlobalFeature:
    """Pooled encoder output.

    g: (B, F) global feature; argmax: (B, F) index of the point that won
    the max for each feature (first occurrence on ties), or None when the
    caller asked to skip it.
    """

    g: np.ndarray
    argmax: "np.ndarray | None"


def _norm_forward(nrm, a, train, update_stats):
    """Normalize columns of a; a is kept aside for the backward pass.

    Train mode uses biased batch statistics for normalization and the
    unbiased variance for the running estimate. The work is arranged as
    reductions plus one fused scale/shift, because these arrays are the
    big ones and every extra pass costs real time.
    """
    m = a.shape[0]
    if train:
        mu = a.mean(axis=0)
        ex2 = np.einsum("ij,ij->j", a, a) / m
        var = np.maximum(ex2 - mu * mu, 0.0)
        if update_stats:
            unbiased = var * (m / max(m - 1, 1))
            nrm.running_mean *= 1.0 - NORM_MOMENTUM
            nrm.running_mean += NORM_MOMENTUM * mu
            nrm.running_var *= 1.0 - NORM_MOMENTUM
            nrm.running_var += NORM_MOMENTUM * unbiased
    else:
        mu = nrm.running_mean
        var = nrm.running_var
    invstd = 1.0 / np.sqrt(var + NORM_EPS)
    scale = nrm.gamma * invstd
    out = a * scale
    out += nrm.beta - mu * scale
    return out, _NormCache(a=a, mu=mu, invstd=invstd, train=train)


def _norm_backward(nrm, cache, gy):
    """Returns (dx, dgamma, dbeta); gy is consumed (overwritten by dx).

    The train-mode input gradient folds the batch-statistic terms into
        dx = gamma * invstd * (gy - dbeta/m - xhat * dgamma/m)
    which follows from d(mu)/dx and d(var)/dx of the biased variance.
    """
    dbeta = gy.sum(axis=0)
    xhat = cache.xhat()
    dgamma = np.einsum("ij,ij->j", gy, xhat)
    if cache.train:
        m = gy.shape[0]
        gy -= dbeta / m
        xhat *= dgamma / m
        gy -= xhat
    gy *= nrm.gamma * cache.invstd
    return gy, dgamma, dbeta


def encode_with_cache(enc, x, train=False, update_stats=False):
    """Run the encoder over a (B, n, 3) batch.

    Batch norm statistics are computed over all B*n point rows in train
    mode and taken from the running estimates otherwise; update_stats
    controls whether train mode also advances the running estimates
    (gradient checks need it off).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != POINT_DIM:
        raise ValueError(f"expected (B, n, {POINT_DIM}) input, got {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    b, n, _ = x.shape
    h = x.reshape(b * n, POINT_DIM)
    layers = []
    for lin, nrm in zip(enc.linears, enc.norms):
        x_in = h
        a = x_in @ lin.weight
        a += lin.bias
        out, ncache = _norm_forward(nrm, a, train, update_stats)
        mask = out > 0.0
        np.maximum(out, 0.0, out=out)
        h = out
        layers.append(_LayerCache(x_in=x_in, norm=ncache, relu_mask=mask))
    feats = h.reshape(b, n, -1)
    argmax = feats.argmax(axis=1)  # first max wins ties
    g = np.take_along_axis(feats, argmax[:, None, :], axis=1)[:, 0]
    # one cheap guard on the pooled output; non-finite values upstream
    # reach it, and the expensive per-layer scan runs only on failure
    if not np.isfinite(g).all():
        raise NonFiniteError(
            f"non-finite activation in {_blame_layer(enc.prefix, layers)}"
        )
    gf = GlobalFeature(g=g, argmax=argmax)
    return gf, EncoderCache(layers=layers, batch=b, n_points=n, argmax=argmax)


def encode(enc, x, train=False, update_stats=False, with_argmax=True):
    if train or update_stats:
        gf, _ = encode_with_cache(enc, x, train=train, update_stats=update_stats)
        return gf
    return _encode_eval(enc, x, with_argmax)


_EVAL_SLAB_ROWS = 4096  # point rows per slab; keeps the widest layer cache-hot


def _encode_eval(enc, x, with_argmax=True):
    """Inference-only encoder pass.

    Running statistics are constants here, so each normalization folds
    into its affine ahead of the matmul. Streamlines are processed in
    fixed-size slabs so the widest activations stay near the cache
    instead of sweeping memory once per operation; the slab grid depends
    only on the batch itself, keeping results reproducible. with_argmax
    False skips the winner bookkeeping only the importance analysis
    needs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != POINT_DIM:
        raise ValueError(f"expected (B, n, {POINT_DIM}) input, got {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    b, n, _ = x.shape
    folded = []
    for lin, nrm in zip(enc.linears, enc.norms):
        scale = nrm.gamma / np.sqrt(nrm.running_var + NORM_EPS)
        folded.append((lin.weight * scale,
                       lin.bias * scale + nrm.beta - nrm.running_mean * scale))
    out_dim = enc.out_dim
    g = np.empty((b, out_dim))
    argmax = np.empty((b, out_dim), dtype=np.int64) if with_argmax else None
    step = max(_EVAL_SLAB_ROWS // n, 1)
    for s in range(0, b, step):
        e = min(s + step, b)
        h = x[s:e].reshape((e - s) * n, POINT_DIM)
        for weight, shift in folded:
            a = h @ weight
            a += shift
            np.maximum(a, 0.0, out=a)
            h = a
        feats = h.reshape(e - s, n, out_dim)
        if with_argmax:
            am = feats.argmax(axis=1)
            argmax[s:e] = am
            g[s:e] = np.take_along_axis(feats, am[:, None, :], axis=1)[:, 0]
        else:
            feats.max(axis=1, out=g[s:e])
    if not np.isfinite(g).all():
        # rerun with caches purely to name the offending layer
        encode_with_cache(enc, x)
        raise NonFiniteError(f"non-finite activation in {enc.prefix}0")
    return GlobalFeature(g=g, argmax=argmax)


def encode_backward(enc, cache, g_grad):
    """Backpropagate d(loss)/d(g) through pooling and the shared MLP.

    Max pooling routes gradient only to each feature's winning point.
    Returns (grads keyed like trainable(), d(loss)/d(input points)).
    """
    b, n = cache.batch, cache.n_points
    f = g_grad.shape[1]
    grad_feats = np.zeros((b, n, f), dtype=np.float64)
    np.put_along_axis(grad_feats, cache.argmax[:, None, :], g_grad[:, None, :], axis=1)
    gy = grad_feats.reshape(b * n, f)
    grads = {}
    for i in range(len(enc.linears) - 1, -1, -1):
        lin, nrm, lc = enc.linears[i], enc.norms[i], cache.layers[i]
        gy *= lc.relu_mask
        gy, dgamma, dbeta = _norm_backward(nrm, lc.norm, gy)
        grads[f"{enc.prefix}{i}.gamma"] = dgamma
        grads[f"{enc.prefix}{i}.beta"] = dbeta
        grads[f"{enc.prefix}{i}.weight"] = lc.x_in.T @ gy
        grads[f"{enc.prefix}{i}.bias"] = gy.sum(axis=0)
        gy = gy @ lin.weight.T
    return grads, gy.reshape(b, n, POINT_DIM)


def classify_with_cache(cla, g, train=False, update_stats=False):
    """Map global features (B, F) to raw logits (B, k)."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != cla.in_dim:
        raise ValueError(f"expected (B, {cla.in_dim}) input, got {g.shape}")
    if g.shape[0] == 0:
        raise ValueError("empty batch")
    h = g
    layers = []
    last = len(cla.linears) - 1
    for i, lin in enumerate(cla.linears):
        x_in = h
        a = x_in @ lin.weight
        a += lin.bias
        if i < last:
            out, ncache = _norm_forward(cla.norms[i], a, train, update_stats)
            mask = out > 0.0
            np.maximum(out, 0.0, out=out)
            h = out
        else:
            ncache, mask = None, None
            h = a
        layers.append(_LayerCache(x_in=x_in, norm=ncache, relu_mask=mask))
    if not np.isfinite(h).all():
        raise NonFiniteError(
            f"non-finite activation in {_blame_layer(cla.prefix, layers)}"
        )
    return h, layers


def classify(cla, g, train=False, update_stats=False):
    logits, _ = classify_with_cache(cla, g, train=train, update_stats=update_stats)
    return logits


def classify_backward(cla, cache, logit_grad):
    """Returns (grads, d(loss)/d(g))."""
    gy = logit_grad
    grads = {}
    for i in range(len(cla.linears) - 1, -1, -1):
        lin, lc = cla.linears[i], cache[i]
        if lc.relu_mask is not None:
            gy *= lc.relu_mask
            gy, dgamma, dbeta = _norm_backward(cla.norms[i], lc.norm, gy)
            grads[f"{cla.prefix}{i}.gamma"] = dgamma
            grads[f"{cla.prefix}{i}.beta"] = dbeta
        grads[f"{cla.prefix}{i}.weight"] = lc.x_in.T @ gy
        grads[f"{cla.prefix}{i}.bias"] = gy.sum(axis=0)
        gy = gy @ lin.weight.T
    return grads, gy


@dataclass
class ProjectorCache:
    g_in: np.ndarray
    h_mid: np.ndarray
    z: np.ndarray
    norms: np.ndarray


def project_with_cache(proj, g):
    """Map global features onto the unit sphere: two affines, then L2.

    There is deliberately no activation between the two affine layers.
    A zero vector before normalization has no direction and raises.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != proj.linears[0].weight.shape[0]:
        raise ValueError(
            f"expected (B, {proj.linears[0].weight.shape[0]}) input, got {g.shape}"
        )
    if g.shape[0] == 0:
        raise ValueError("empty batch")
    w1, w2 = proj.linears
    h_mid = g @ w1.weight + w1.bias
    u = h_mid @ w2.weight + w2.bias
    _check_finite(u, f"{proj.prefix}1")
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("projection produced a zero vector; cannot normalize")
    z = u / norms[:, None]
    return z, ProjectorCache(g_in=g, h_mid=h_mid, z=z, norms=norms)


def project(proj, g):
    z, _ = project_with_cache(proj, g)
    return z


def project_backward(proj, cache, z_grad):
    """Returns (grads, d(loss)/d(g))."""
    z, norms = cache.z, cache.norms
    # d/du of u/|u|: remove the radial component, scale by 1/|u|
    du = (z_grad - z * (z * z_grad).sum(axis=1, keepdims=True)) / norms[:, None]
    w1, w2 = proj.linears
    grads = {
        f"{proj.prefix}1.weight": cache.h_mid.T @ du,
        f"{proj.prefix}1.bias": du.sum(axis=0),
    }
    gh = du @ w2.weight.T
    grads[f"{proj.prefix}0.weight"] = cache.g_in.T @ gh
    grads[f"{proj.prefix}0.bias"] = gh.sum(axis=0)
    return grads, gh @ w1.weight.T


def predict(logits):
    """Class prediction per row; ties resolve to the lowest class id."""
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ValueError(f"expected (B, k) logits, got shape {logits.shape}")
    return logits.argmax(axis=1)


# ---------------------------------------------------------------------------
# FLOPs accounting


def count_flops(
    n_points=DEFAULT_POINTS,
    encoder_widths=ENCODER_WIDTHS,
    classifier_hidden=CLASSIFIER_HIDDEN,
    num_classes=199,
):
    """Inference cost of one streamline, in integer FLOPs.

    Convention: a multiply-accumulate is 2 FLOPs, each bias add is 1,
    batch norm is 2 per activation (subtract-scale against folded
    statistics), ReLU is 1 per activation, and the max pool spends
    (n_points - 1) comparisons per feature. Per-point encoder work is
    multiplied by n_points; the classifier runs once on the pooled
    vector.
    """
    layers = []

    def affine(name, fan_in, fan_out, per_point, with_norm):
        mult = n_points if per_point else 1
        entry = {
            "name": name,
            "fan_in": fan_in,
            "fan_out": fan_out,
            "matmul": 2 * fan_in * fan_out * mult,
            "bias": fan_out * mult,
            "norm": 2 * fan_out * mult if with_norm else 0,
            "relu": fan_out * mult if with_norm else 0,
        }
        entry["total"] = entry["matmul"] + entry["bias"] + entry["norm"] + entry["relu"]
        layers.append(entry)

    fan_in = POINT_DIM
    for i, w in enumerate(encoder_widths):
        affine(f"enc{i}", fan_in, w, per_point=True, with_norm=True)
        fan_in = w
    pool = (n_points - 1) * encoder_widths[-1]
    layers.append({"name": "maxpool", "total": pool})
    for i, w in enumerate(classifier_hidden):
        affine(f"cla{i}", fan_in, w, per_point=False, with_norm=True)
        fan_in = w
    affine(
        f"cla{len(classifier_hidden)}",
        fan_in,
        num_classes,
        per_point=False,
        with_norm=False,
    )
    return {
        "n_points": n_points,
        "num_classes": num_classes,
        "encoder_widths": list(encoder_widths),
        "classifier_hidden": list(classifier_hidden),
        "layers": layers,
        "total": sum(entry["total"] for entry in layers),
    }


# ---------------------------------------------------------------------------
# serialization


def serialize_model(model):
    """Model file bytes: little-endian header plus named float32 blocks.

    Layout: magic "SWMM", u32 version, u8 stage, u32 n_points, u32
    num_classes, u32 block count, then per block a u16 name length,
    UTF-8 name, u8 rank, u32 dims, and the float32 payload in C order.
    """
    blocks = model.named_arrays()
    buf = bytearray()
    buf += MODEL_MAGIC
    buf += struct.pack("<IBIII", MODEL_VERSION, model.stage, model.n_points,
                       model.num_classes, len(blocks))
    for name, arr in blocks.items():
        encoded = name.encode("utf-8")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(buf)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, count, what):
        if self.pos + count > len(self.data):
            raise TruncatedFileError(f"file ends inside {what}")
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _read_blocks(data):
    r = _Reader(data)
    if r.take(4, "magic") != MODEL_MAGIC:
        raise BadMagicError("not a model file (bad magic)")
    version, stage, n_points, num_classes, n_blocks = r.unpack("<IBIII", "header")
    if version != MODEL_VERSION:
        raise UnsupportedVersionError(f"unsupported model version {version}")
    blocks = {}
    for _ in range(n_blocks):
        (name_len,) = r.unpack("<H", "block name length")
        name = r.take(name_len, "block name").decode("utf-8")
        (rank,) = r.unpack("<B", "block rank")
        shape = r.unpack(f"<{rank}I", f"shape of {name}")
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = r.take(4 * count, f"payload of {name}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        if name in blocks:
            raise FileFormatError(f"duplicate block {name}")
        blocks[name] = arr
    if r.pos != len(data):
        raise FileFormatError(f"{len(data) - r.pos} trailing bytes after last block")
    return stage, n_points, num_classes, blocks


def _pull(blocks, name, expect_shape=None):
    if name not in blocks:
        raise FileFormatError(f"missing block {name}")
    arr = blocks.pop(name)
    if expect_shape is not None and arr.shape != expect_shape:
        raise ShapeMismatchError(
            f"{name} has shape {arr.shape}, expected {expect_shape}"
        )
    return arr


def _layer_indices(blocks, prefix):
    found = set()
    for name in blocks:
        if name.startswith(prefix):
            rest = name[len(prefix):]
            digits = rest.split(".", 1)[0]
            if digits.isdigit():
                found.add(int(digits))
    if not found:
        raise FileFormatError(f"no {prefix}* blocks present")
    count = max(found) + 1
    if found != set(range(count)):
        raise FileFormatError(f"non-contiguous {prefix}* layer indices")
    return count


def deserialize_model(data):
    """Rebuild a StageModel from file bytes, validating as it goes.

    Wrong magic, unknown version, truncation, and missing or duplicate
    blocks raise FileFormatError subclasses; dimension disagreements
    raise ShapeMismatchError naming the offending block.
    """
    stage, n_points, num_classes, blocks = _read_blocks(data)

    n_enc = _layer_indices(blocks, "enc")
    fan_in = POINT_DIM
    linears, norms = [], []
    for i in range(n_enc):
        w = _pull(blocks, f"enc{i}.weight")
        if w.ndim != 2 or w.shape[0] != fan_in:
            raise ShapeMismatchError(
                f"enc{i}.weight has shape {w.shape}, expected ({fan_in}, *)"
            )
        width = w.shape[1]
        linears.append(
            LinearParams(weight=w, bias=_pull(blocks, f"enc{i}.bias", (width,)))
        )
        norms.append(
            NormParams(
                gamma=_pull(blocks, f"enc{i}.gamma", (width,)),
                beta=_pull(blocks, f"enc{i}.beta", (width,)),
                running_mean=_pull(blocks, f"enc{i}.running_mean", (width,)),
                running_var=_pull(blocks, f"enc{i}.running_var", (width,)),
            )
        )
        if np.any(norms[-1].running_var <= 0.0):
            raise FileFormatError(f"enc{i}.running_var must be strictly positive")
        fan_in = width
    encoder = EncoderParams(linears=linears, norms=norms)

    n_cla = _layer_indices(blocks, "cla")
    linears, norms = [], []
    for i in range(n_cla):
        w = _pull(blocks, f"cla{i}.weight")
        if w.ndim != 2 or w.shape[0] != fan_in:
            raise ShapeMismatchError(
                f"cla{i}.weight has shape {w.shape}, expected ({fan_in}, *)"
            )
        width = w.shape[1]
        linears.append(
            LinearParams(weight=w, bias=_pull(blocks, f"cla{i}.bias", (width,)))
        )
        if i < n_cla - 1:
            norms.append(
                NormParams(
                    gamma=_pull(blocks, f"cla{i}.gamma", (width,)),
                    beta=_pull(blocks, f"cla{i}.beta", (width,)),
                    running_mean=_pull(blocks, f"cla{i}.running_mean", (width,)),
                    running_var=_pull(blocks, f"cla{i}.running_var", (width,)),
                )
            )
            if np.any(norms[-1].running_var <= 0.0):
                raise FileFormatError(f"cla{i}.running_var must be strictly positive")
        fan_in = width
    classifier = ClassifierParams(linears=linears, norms=norms)
    if classifier.num_classes != num_classes:
        raise ShapeMismatchError(
            f"cla{n_cla - 1}.weight has {classifier.num_classes} outputs "
            f"but header declares {num_classes} classes"
        )

    projector = None
    if any(name.startswith("proj") for name in blocks):
        n_proj = _layer_indices(blocks, "proj")
        fan_in = encoder.out_dim
        linears = []
        for i in range(n_proj):
            w = _pull(blocks, f"proj{i}.weight")
            if w.ndim != 2 or w.shape[0] != fan_in:
                raise ShapeMismatchError(
                    f"proj{i}.weight has shape {w.shape}, expected ({fan_in}, *)"
                )
            linears.append(
                LinearParams(
                    weight=w, bias=_pull(blocks, f"proj{i}.bias", (w.shape[1],))
                )
            )
            fan_in = w.shape[1]
        projector = ProjectorParams(linears=linears)

    if blocks:
        raise FileFormatError(f"unexpected blocks: {sorted(blocks)}")
    return StageModel(
        stage=stage,
        n_points=n_points,
        num_classes=num_classes,
        encoder=encoder,
        classifier=classifier,
        projector=projector,
    )


def save_model(path, model):
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path, expect_stage=None, expect_classes=None):
    with open(path, "rb") as fh:
        model = deserialize_model(fh.read())
    if expect_stage is not None and model.stage != expect_stage:
        raise FileFormatError(
            f"model file is stage {model.stage}, expected stage {expect_stage}"
        )
    if expect_classes is not None and model.num_classes != expect_classes:
        last = len(model.classifier.linears) - 1
        raise ShapeMismatchError(
            f"cla{last}.weight has {model.num_classes} outputs, "
            f"expected {expect_classes}"
        )
    return model
