"""Losses, optimizer, and the two training recipes.

Stage one learns a binary keep/discard filter with cross entropy. Stage
two runs in two phases: a contrastive phase that shapes the encoder via
projected unit-sphere features, then a downstream phase that freezes the
encoder (parameters and normalization statistics) and fits only the
classification head on cached global features. Everything is float64
and fully deterministic given the seed.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .datasets import LabeledDataset
from .errors import NonFiniteError
from .evaluation import accuracy, macro_f1
from .geometry import reflect_bilateral, resample_many
from .network import (
    CLASSIFIER_HIDDEN,
    DEFAULT_POINTS,
    ENCODER_WIDTHS,
    PROJECTOR_WIDTHS,
    ClassifierParams,
    EncoderParams,
    ProjectorParams,
    StageModel,
    classify,
    classify_backward,
    classify_with_cache,
    encode,
    encode_backward,
    encode_with_cache,
    predict,
    project_backward,
    project_with_cache,
)

EVAL_BATCH = 4096


# ---------------------------------------------------------------------------
# losses


def cross_entropy_loss(logits, labels):
    """Mean negative log-likelihood over the batch.

    Returns (loss, d(loss)/d(logits)). Labels outside [0, k) raise.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ValueError(f"expected (B, k) logits, got shape {logits.shape}")
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if b == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range for {k} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(b)
    loss = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= b
    return loss, grad


def supcon_loss(z, labels, temperature=0.1):
    """Supervised contrastive loss over unit-norm projections, summed
    over the batch.

    For anchor i with positives P(i) (same label, excluding i) over
    candidates A(i) (everything excluding i):

        L_i = log sum_{a in A(i)} exp(z_i.z_a / t)
              - (1/|P(i)|) sum_{p in P(i)} z_i.z_p / t

    Anchors without positives contribute zero. Returns (loss,
    d(loss)/d(z)). Rows must be unit norm to 1e-6; temperature must be
    positive.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if z.ndim != 2:
        raise ValueError(f"expected (B, d) projections, got shape {z.shape}")
    b = z.shape[0]
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if b < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("projections must be unit norm")

    sim = (z @ z.T) / temperature
    off = ~np.eye(b, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & off
    n_pos = pos.sum(axis=1)

    # stabilized log-sum-exp over the off-diagonal of each row
    row_max = np.where(off, sim, -np.inf).max(axis=1)
    exps = np.exp(sim - row_max[:, None])
    exps[~off] = 0.0
    zsum = exps.sum(axis=1)
    logz = row_max + np.log(zsum)

    denom = np.maximum(n_pos, 1)
    per_anchor = np.where(n_pos > 0, logz - (sim * pos).sum(axis=1) / denom, 0.0)
    loss = float(per_anchor.sum())

    # dL/d(sim): softmax weights minus the positive-average indicator,
    # zeroed for anchors without positives; symmetrize through z_a z_b
    g = exps / zsum[:, None] - pos / denom[:, None]
    g[n_pos == 0] = 0.0
    grad = (g + g.T) @ z / temperature
    return loss, grad


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params):
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, applied to params in place.

    No weight decay, by design. params and grads must share keys with
    the state built by adam_init.
    """
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p -= lr * mhat / (np.sqrt(vhat) + state.eps)


# ---------------------------------------------------------------------------
# configs


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


@dataclass
class StageOneConfig:
    seed: int = 0
    n_points: int = DEFAULT_POINTS
    encoder_widths: tuple = ENCODER_WIDTHS
    classifier_hidden: tuple = CLASSIFIER_HIDDEN
    epochs: int = 50
    batch_size: int = 1024
    learning_rate: float = 1e-3
    weight_decay: float = 0.0

    def validate(self):
        _require(self.n_points >= 2, "n_points must be >= 2")
        _require(self.epochs >= 0, "epochs must be >= 0")
        _require(self.batch_size >= 1, "batch_size must be >= 1")
        _require(self.learning_rate > 0.0, "learning_rate must be positive")
        _require(self.weight_decay == 0.0, "weight decay is not supported")
        _require(len(self.encoder_widths) >= 1, "encoder needs at least one layer")
        _require(len(self.classifier_hidden) >= 1, "classifier needs a hidden layer")
        return self


@dataclass
class StageTwoConfig:
    seed: int = 0
    n_points: int = DEFAULT_POINTS
    encoder_widths: tuple = ENCODER_WIDTHS
    classifier_hidden: tuple = CLASSIFIER_HIDDEN
    projector_widths: tuple = PROJECTOR_WIDTHS
    use_contrastive: bool = True
    contrastive_epochs: int = 100
    contrastive_batch_size: int = 3072  # doubled by bilateral pairing
    contrastive_learning_rate: float = 1e-2
    temperature: float = 0.1
    epochs: int = 50  # downstream head (or plain supervised when no contrastive)
    batch_size: int = 1024
    learning_rate: float = 1e-3
    weight_decay: float = 0.0

    def validate(self):
        _require(self.n_points >= 2, "n_points must be >= 2")
        _require(self.epochs >= 0, "epochs must be >= 0")
        _require(self.contrastive_epochs >= 0, "contrastive_epochs must be >= 0")
        _require(self.batch_size >= 1, "batch_size must be >= 1")
        _require(self.contrastive_batch_size >= 1, "contrastive_batch_size must be >= 1")
        _require(self.learning_rate > 0.0, "learning_rate must be positive")
        _require(
            self.contrastive_learning_rate > 0.0,
            "contrastive_learning_rate must be positive",
        )
        _require(self.temperature > 0.0, "temperature must be positive")
        _require(self.weight_decay == 0.0, "weight decay is not supported")
        _require(len(self.encoder_widths) >= 1, "encoder needs at least one layer")
        _require(len(self.classifier_hidden) >= 1, "classifier needs a hidden layer")
        _require(len(self.projector_widths) == 2, "projector has exactly two layers")
        return self


@dataclass
class TrainResult:
    model: StageModel
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# shared loop pieces


def _check_loss(value, what):
    if not np.isfinite(value):
        raise NonFiniteError(f"{what} loss is not finite")


def _batch_ranges(total, batch_size):
    return [(s, min(s + batch_size, total)) for s in range(0, total, batch_size)]


def _snapshot(arrays):
    return {k: a.copy() for k, a in arrays.items()}


def _restore(arrays, snap):
    for k, a in arrays.items():
        a[...] = snap[k]


def _eval_labels(enc, cla, x, batch=EVAL_BATCH):
    out = np.empty(x.shape[0], dtype=np.int64)
    for s, e in _batch_ranges(x.shape[0], batch):
        out[s:e] = predict(classify(
            cla, encode(enc, x[s:e], with_argmax=False).g))
    return out


def _eval_head_labels(cla, g, batch=EVAL_BATCH):
    out = np.empty(g.shape[0], dtype=np.int64)
    for s, e in _batch_ranges(g.shape[0], batch):
        out[s:e] = predict(classify(cla, g[s:e]))
    return out


def _encode_all(enc, x, batch=EVAL_BATCH):
    parts = [encode(enc, x[s:e], with_argmax=False).g
             for s, e in _batch_ranges(x.shape[0], batch)]
    return np.concatenate(parts, axis=0)


def _val_entry(entry, pred_labels, truth, num_classes):
    entry["val_accuracy"] = accuracy(pred_labels, truth)
    entry["val_macro_f1"] = macro_f1(pred_labels, truth, num_classes).mean
    return entry


def _train_joint_ce(enc, cla, x, y, num_classes, epochs, batch_size, lr, rng,
                    phase, val=None):
    """Cross-entropy training of encoder + classifier together.

    val, when given, is (x_val, y_val); the best validation macro-F1
    checkpoint (parameters and running statistics) is restored at the
    end. Returns the history list.
    """
    params = {**enc.trainable(), **cla.trainable()}
    state = adam_init(params)
    history = []
    best_f1 = -1.0
    best_snap = None
    all_arrays = {**enc.named_arrays(), **cla.named_arrays()}
    n = x.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        hits = 0
        for s, e in _batch_ranges(n, batch_size):
            idx = order[s:e]
            xb, yb = x[idx], y[idx]
            gf, ecache = encode_with_cache(enc, xb, train=True, update_stats=True)
            logits, ccache = classify_with_cache(cla, gf.g, train=True,
                                                 update_stats=True)
            loss, dlogits = cross_entropy_loss(logits, yb)
            _check_loss(loss, phase)
            cgrads, dg = classify_backward(cla, ccache, dlogits)
            egrads, _ = encode_backward(enc, ecache, dg)
            adam_step(params, {**egrads, **cgrads}, state, lr)
            loss_sum += loss * len(idx)
            hits += int((predict(logits) == yb).sum())
        entry = {"phase": phase, "epoch": epoch,
                 "loss": loss_sum / n, "accuracy": hits / n}
        if val is not None:
            pred = _eval_labels(enc, cla, val[0])
            _val_entry(entry, pred, val[1], num_classes)
            if entry["val_macro_f1"] > best_f1:
                best_f1 = entry["val_macro_f1"]
                best_snap = _snapshot(all_arrays)
        history.append(entry)
    if best_snap is not None:
        _restore(all_arrays, best_snap)
    return history


def _train_head_ce(cla, g, y, num_classes, epochs, batch_size, lr, rng,
                   val=None):
    """Cross-entropy training of the classification head on fixed
    global features."""
    params = cla.trainable()
    state = adam_init(params)
    history = []
    best_f1 = -1.0
    best_snap = None
    all_arrays = cla.named_arrays()
    n = g.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        hits = 0
        for s, e in _batch_ranges(n, batch_size):
            idx = order[s:e]
            gb, yb = g[idx], y[idx]
            logits, ccache = classify_with_cache(cla, gb, train=True,
                                                 update_stats=True)
            loss, dlogits = cross_entropy_loss(logits, yb)
            _check_loss(loss, "downstream")
            cgrads, _ = classify_backward(cla, ccache, dlogits)
            adam_step(params, cgrads, state, lr)
            loss_sum += loss * len(idx)
            hits += int((predict(logits) == yb).sum())
        entry = {"phase": "downstream", "epoch": epoch,
                 "loss": loss_sum / n, "accuracy": hits / n}
        if val is not None:
            pred = _eval_head_labels(cla, val[0])
            _val_entry(entry, pred, val[1], num_classes)
            if entry["val_macro_f1"] > best_f1:
                best_f1 = entry["val_macro_f1"]
                best_snap = _snapshot(all_arrays)
        history.append(entry)
    if best_snap is not None:
        _restore(all_arrays, best_snap)
    return history


def contrastive_batch(x, labels, idx):
    """Pair every sampled streamline with its bilateral mirror.

    The mirror keeps the label, so each anchor has a guaranteed positive
    and the encoder is pushed toward reflection-consistent features.
    Returns a batch of twice the sampled size.
    """
    xb = x[idx]
    return (
        np.concatenate([xb, reflect_bilateral(xb)], axis=0),
        np.concatenate([labels[idx], labels[idx]]),
    )


# ---------------------------------------------------------------------------
# stage recipes


def _prepare(dataset, cfg, min_classes, max_classes=None):
    if not isinstance(dataset, LabeledDataset):
        raise TypeError("expected a LabeledDataset")
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    labels = dataset.labels
    present = np.unique(labels)
    if present.size < min_classes:
        raise ValueError(
            f"training needs at least {min_classes} distinct labels, "
            f"found {present.size}"
        )
    if max_classes is not None and labels.max() >= max_classes:
        raise ValueError(
            f"label {labels.max()} out of range for {max_classes} classes"
        )
    x = resample_many(dataset.streamlines, cfg.n_points)
    return x, labels


def train_stage_one(dataset, config, val=None):
    """Fit the binary filter (0 discard, 1 keep) with cross entropy."""
    cfg = config.validate()
    x, y = _prepare(dataset, cfg, min_classes=2, max_classes=2)
    rng = np.random.default_rng(cfg.seed)
    enc = EncoderParams.init(rng, cfg.encoder_widths)
    cla = ClassifierParams.init(rng, enc.out_dim, cfg.classifier_hidden, 2)
    val_xy = None
    if val is not None and len(val):
        val_xy = (resample_many(val.streamlines, cfg.n_points), val.labels)
    history = _train_joint_ce(
        enc, cla, x, y, 2, cfg.epochs, cfg.batch_size, cfg.learning_rate,
        rng, "supervised", val=val_xy,
    )
    model = StageModel(stage=1, n_points=cfg.n_points, num_classes=2,
                       encoder=enc, classifier=cla)
    return TrainResult(model=model, history=history)


def train_stage_two(dataset, config, val=None, num_classes=None):
    """Fit the cluster classifier over 2K classes (K clusters plus K
    per-cluster outlier classes).

    With use_contrastive on: phase one trains encoder + projector with
    the contrastive loss on mirror-augmented batches, phase two freezes
    the encoder, caches global features once, and fits the head with
    cross entropy. With it off: a single supervised phase trains encoder
    and head jointly (the ablation baseline).
    """
    cfg = config.validate()
    if num_classes is None:
        num_classes = int(dataset.labels.max()) + 1
        if num_classes % 2 != 0:
            raise ValueError(
                f"inferred {num_classes} classes, which is odd; cluster and "
                "outlier classes come in pairs, pass num_classes explicitly"
            )
    if num_classes < 2 or num_classes % 2 != 0:
        raise ValueError(f"num_classes must be a positive even number, got {num_classes}")
    x, y = _prepare(dataset, cfg, min_classes=2, max_classes=num_classes)
    missing = np.setdiff1d(np.arange(num_classes), np.unique(y))
    if missing.size:
        warnings.warn(
            f"{missing.size} of {num_classes} classes absent from training data",
            stacklevel=2,
        )
    rng = np.random.default_rng(cfg.seed)
    enc = EncoderParams.init(rng, cfg.encoder_widths)
    proj = (
        ProjectorParams.init(rng, enc.out_dim, cfg.projector_widths)
        if cfg.use_contrastive
        else None
    )
    cla = ClassifierParams.init(rng, enc.out_dim, cfg.classifier_hidden, num_classes)
    val_xy = None
    if val is not None and len(val):
        val_xy = (resample_many(val.streamlines, cfg.n_points), val.labels)

    history = []
    if cfg.use_contrastive:
        params = {**enc.trainable(), **proj.trainable()}
        state = adam_init(params)
        n = x.shape[0]
        for epoch in range(cfg.contrastive_epochs):
            order = rng.permutation(n)
            loss_sum = 0.0
            anchors = 0
            for s, e in _batch_ranges(n, cfg.contrastive_batch_size):
                xb, yb = contrastive_batch(x, y, order[s:e])
                gf, ecache = encode_with_cache(enc, xb, train=True,
                                               update_stats=True)
                z, pcache = project_with_cache(proj, gf.g)
                loss, dz = supcon_loss(z, yb, cfg.temperature)
                _check_loss(loss, "contrastive")
                pgrads, dg = project_backward(proj, pcache, dz)
                egrads, _ = encode_backward(enc, ecache, dg)
                adam_step(params, {**egrads, **pgrads}, state,
                          cfg.contrastive_learning_rate)
                loss_sum += loss
                anchors += xb.shape[0]
            history.append({"phase": "contrastive", "epoch": epoch,
                            "loss": loss_sum / anchors})
        # encoder is frozen from here on: cache features once
        g = _encode_all(enc, x)
        val_head = None
        if val_xy is not None:
            val_head = (_encode_all(enc, val_xy[0]), val_xy[1])
        history += _train_head_ce(
            cla, g, y, num_classes, cfg.epochs, cfg.batch_size,
            cfg.learning_rate, rng, val=val_head,
        )
    else:
        history += _train_joint_ce(
            enc, cla, x, y, num_classes, cfg.epochs, cfg.batch_size,
            cfg.learning_rate, rng, "supervised", val=val_xy,
        )
    model = StageModel(stage=2, n_points=cfg.n_points, num_classes=num_classes,
                       encoder=enc, classifier=cla, projector=proj)
    return TrainResult(model=model, history=history)
