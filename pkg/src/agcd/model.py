"""Trainable prototypical classifier over frozen embeddings.

The network is deliberately small: a linear adapter with a GELU nonlinearity
standing in for backbone fine-tuning, an L2-normalized projection head for
contrastive learning, and a bank of unit-norm class prototypes scored by a
temperature softmax.  All gradients are derived by hand and everything trains
in float64 so finite-difference checks are sharp.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .assignment import LabelMapping
from .data import rng_from

__all__ = [
    "ModelConfig",
    "Params",
    "Model",
    "EmaModel",
    "TrainConfig",
    "RoundResult",
    "make_views",
    "posterior",
    "loss_con_sup",
    "loss_con_unsup",
    "loss_cls_unsup",
    "loss_cls_sup",
    "ema_update",
    "train_round",
    "save_checkpoint",
    "load_checkpoint",
]

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def _gelu(x):
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * x * (1.0 + t)


def _gelu_prime(x):
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def _row_normalize(x):
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / norms, norms


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ModelConfig:
    dim: int
    num_classes: int
    proj_dim: int | None = None
    tau_c: float = 0.07
    tau_p: float = 0.1
    sharpen_start: float = 0.07
    sharpen_end: float = 0.04
    sharpen_ramp_epochs: int = 30

    def __post_init__(self):
        if self.proj_dim is None:
            object.__setattr__(self, "proj_dim", self.dim)
        if min(self.tau_c, self.tau_p, self.sharpen_start, self.sharpen_end) <= 0:
            raise ValueError("temperatures must be positive")


PARAM_NAMES = ("w_adapt", "b_adapt", "w_proj", "b_proj", "prototypes")


@dataclass
class Params:
    """All trainable tensors, float64, in fixed declaration order."""

    w_adapt: np.ndarray
    b_adapt: np.ndarray
    w_proj: np.ndarray
    b_proj: np.ndarray
    prototypes: np.ndarray

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, n) for n in PARAM_NAMES)

    def copy(self) -> "Params":
        return Params(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "Params":
        return Params(*(np.zeros_like(a) for a in self.arrays()))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec: np.ndarray) -> "Params":
        out, off = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[off : off + a.size], dtype=np.float64).reshape(a.shape))
            off += a.size
        if off != vec.size:
            raise ValueError("vector length does not match parameter count")
        return Params(*out)


class Model:
    """Adapter + projection head + prototype bank with a sharpening schedule."""

    def __init__(self, cfg: ModelConfig, params: Params, schedule_epoch: int = 0):
        self.cfg = cfg
        self.params = params
        self.schedule_epoch = schedule_epoch

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: int) -> "Model":
        rng = rng_from(seed, "model-init")
        d, p, k = cfg.dim, cfg.proj_dim, cfg.num_classes
        w_adapt = np.eye(d) + 0.1 * rng.standard_normal((d, d)) / np.sqrt(d)
        b_adapt = np.zeros(d)
        if p <= d:
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            w_proj = np.ascontiguousarray(q.T[:p])
        else:
            w_proj = rng.standard_normal((p, d)) / np.sqrt(d)
        b_proj = np.zeros(p)
        protos = rng.standard_normal((k, d))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        return cls(cfg, Params(w_adapt, b_adapt, w_proj, b_proj, protos))

    def adapt(self, x: np.ndarray) -> np.ndarray:
        """Unit-norm adapted features h for raw embeddings x."""
        h, _ = _adapter_forward(self.params, np.asarray(x, dtype=np.float64))
        return h

    def posterior(self, h: np.ndarray) -> np.ndarray:
        return posterior(self, h)

    def predict_raw(self, x: np.ndarray) -> np.ndarray:
        """Argmax class prediction from raw (un-augmented) embeddings."""
        return np.argmax(self.posterior(self.adapt(x)), axis=-1)

    def sharpen_temperature(self, epoch: int | None = None) -> float:
        e = self.schedule_epoch if epoch is None else epoch
        cfg = self.cfg
        frac = min(max(e, 0) / max(cfg.sharpen_ramp_epochs, 1), 1.0)
        return cfg.sharpen_start + frac * (cfg.sharpen_end - cfg.sharpen_start)

    def renormalize_prototypes(self) -> None:
        protos = self.params.prototypes
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)


class EmaModel:
    """Exponential moving average shadow of a model's parameters."""

    def __init__(self, model: Model, decay: float):
        if not 0.0 <= decay <= 1.0:
            raise ValueError("decay must lie in [0, 1]")
        self.cfg = model.cfg
        self.params = model.params.copy()
        self.decay = decay

    def update(self, model: Model) -> None:
        ema_update(self, model, self.decay)

    def predict_raw(self, x: np.ndarray) -> np.ndarray:
        h, _ = _adapter_forward(self.params, np.asarray(x, dtype=np.float64))
        return np.argmax(_softmax(h @ self.params.prototypes.T / self.cfg.tau_p), axis=-1)


def ema_update(ema: EmaModel, model: Model, decay: float) -> EmaModel:
    """In-place shadow update: theta_ema <- decay*theta_ema + (1-decay)*theta."""
    for shadow, live in zip(ema.params.arrays(), model.params.arrays()):
        if shadow.shape != live.shape:
            raise ValueError("EMA parameter shapes do not match the live model")
        shadow *= decay
        shadow += (1.0 - decay) * live
    return ema


def make_views(x: np.ndarray, rng: np.random.Generator, sigma: float = 0.05):
    """Two stochastic feature-space views: L2-normalize(x + N(0, sigma^2 I))."""
    x = np.asarray(x, dtype=np.float64)
    if sigma > 0:
        v1 = x + sigma * rng.standard_normal(x.shape)
        v2 = x + sigma * rng.standard_normal(x.shape)
    else:
        v1, v2 = x.copy(), x.copy()
    v1, _ = _row_normalize(v1)
    v2, _ = _row_normalize(v2)
    return v1, v2


# ---------------------------------------------------------------------------
# forward / backward building blocks


def _adapter_forward(params: Params, x):
    a = x @ params.w_adapt.T + params.b_adapt
    u = _gelu(a)
    h, r = _row_normalize(u)
    return h, (x, a, h, r)


def _adapter_backward(params: Params, cache, dh, grads: Params):
    x, a, h, r = cache
    du = (dh - h * np.sum(h * dh, axis=1, keepdims=True)) / r
    da = du * _gelu_prime(a)
    grads.w_adapt += da.T @ x
    grads.b_adapt += da.sum(axis=0)


def _proj_forward(params: Params, h):
    v = h @ params.w_proj.T + params.b_proj
    z, r = _row_normalize(v)
    return z, (h, z, r)


def _proj_backward(params: Params, cache, dz, grads: Params):
    h, z, r = cache
    dv = (dz - z * np.sum(z * dz, axis=1, keepdims=True)) / r
    grads.w_proj += dv.T @ h
    grads.b_proj += dv.sum(axis=0)
    return dv @ params.w_proj


def _embed(params: Params, x):
    h, acache = _adapter_forward(params, x)
    z, pcache = _proj_forward(params, h)
    return z, (acache, pcache)


def _embed_backward(params: Params, cache, dz, grads: Params):
    acache, pcache = cache
    dh = _proj_backward(params, pcache, dz, grads)
    _adapter_backward(params, acache, dh, grads)


def posterior(model: Model | EmaModel, h: np.ndarray) -> np.ndarray:
    """Prototype softmax p_k proportional to exp(h.c_k / tau_p) for unit h."""
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    logits = np.atleast_2d(h) @ model.params.prototypes.T / model.cfg.tau_p
    p = _softmax(logits)
    return p[0] if single else p


# ---------------------------------------------------------------------------
# losses (each returns (value, Params-shaped gradients))


def loss_con_sup(model: Model, view1, view2, labels, want_grad: bool = True):
    """Supervised contrastive loss over a labeled batch.

    Anchors are first-view embeddings; positives are the other-view embeddings
    of same-label samples.  The denominator runs over all other-view terms
    except the anchor's own pair, matching the printed form.  Anchors without
    positives are skipped; a batch with no valid anchor is rejected.
    """
    params, tau = model.params, model.cfg.tau_c
    labels = np.asarray(labels, dtype=np.int64)
    b = labels.shape[0]

    pos_mask = (labels[:, None] == labels[None, :]) & ~np.eye(b, dtype=bool)
    pos_counts = pos_mask.sum(axis=1)
    valid = pos_counts > 0
    if b < 2 or not valid.any():
        raise ValueError("degenerate supervised batch: no anchor has a positive")

    z1, c1 = _embed(params, np.asarray(view1, dtype=np.float64))
    z2, c2 = _embed(params, np.asarray(view2, dtype=np.float64))
    s = z1 @ z2.T / tau

    s_excl = s.copy()
    np.fill_diagonal(s_excl, -np.inf)
    row_max = s_excl.max(axis=1, keepdims=True)
    e = np.exp(s_excl - row_max)
    denom = e.sum(axis=1, keepdims=True)
    log_denom = np.log(denom[:, 0]) + row_max[:, 0]

    n_valid = int(valid.sum())
    per_anchor = -np.where(valid, (s * pos_mask).sum(axis=1), 0.0)
    per_anchor = np.where(valid, per_anchor / np.maximum(pos_counts, 1), 0.0)
    per_anchor = per_anchor + np.where(valid, log_denom, 0.0)
    value = float(per_anchor[valid].mean())

    if not want_grad:
        return value, None
    softmax_excl = e / denom
    g = softmax_excl - pos_mask / np.maximum(pos_counts, 1)[:, None]
    g[~valid] = 0.0
    g /= n_valid
    grads = params.zeros_like()
    _embed_backward(params, c1, (g @ z2) / tau, grads)
    _embed_backward(params, c2, (g.T @ z1) / tau, grads)
    return value, grads


def loss_con_unsup(model: Model, view1, view2, want_grad: bool = True):
    """Unsupervised InfoNCE with cross-view positives.

    The positive pair is kept in the denominator together with every other
    second-view term (the printed index-exclusion would make the objective
    unbounded below).
    """
    params, tau = model.params, model.cfg.tau_c
    view1 = np.asarray(view1, dtype=np.float64)
    b = view1.shape[0]
    if b < 2:
        raise ValueError("degenerate unsupervised batch: need at least 2 samples")

    z1, c1 = _embed(params, view1)
    z2, c2 = _embed(params, np.asarray(view2, dtype=np.float64))
    s = z1 @ z2.T / tau

    row_max = s.max(axis=1, keepdims=True)
    e = np.exp(s - row_max)
    denom = e.sum(axis=1, keepdims=True)
    log_denom = np.log(denom[:, 0]) + row_max[:, 0]
    value = float(np.mean(log_denom - np.diag(s)))

    if not want_grad:
        return value, None
    g = (e / denom - np.eye(b)) / b
    grads = params.zeros_like()
    _embed_backward(params, c1, (g @ z2) / tau, grads)
    _embed_backward(params, c2, (g.T @ z1) / tau, grads)
    return value, grads


def sharpened_targets(model: Model, view: np.ndarray, tau_t: float) -> np.ndarray:
    """Constant (stop-gradient) self-distillation targets from one view."""
    h, _ = _adapter_forward(model.params, np.asarray(view, dtype=np.float64))
    return _softmax(h @ model.params.prototypes.T / tau_t)


def loss_cls_unsup(
    model: Model,
    view1,
    view2,
    lambda_e: float,
    tau_t: float | None = None,
    want_grad: bool = True,
):
    """Self-distillation on two views plus a mean-prediction entropy reward.

    The target distribution q' comes from the second view sharpened at
    ``tau_t`` and receives no gradient; the entropy term flows through both
    views' predictions.
    """
    if tau_t is None:
        tau_t = model.sharpen_temperature()
    targets = sharpened_targets(model, view2, tau_t)
    return _loss_cls_unsup_fixed(model, view1, view2, targets, lambda_e, want_grad)


def _loss_cls_unsup_fixed(model: Model, view1, view2, targets, lambda_e, want_grad=True):
    params, tau_p = model.params, model.cfg.tau_p
    protos = params.prototypes
    b = np.asarray(view1).shape[0]

    h1, ac1 = _adapter_forward(params, np.asarray(view1, dtype=np.float64))
    h2, ac2 = _adapter_forward(params, np.asarray(view2, dtype=np.float64))
    logits1 = h1 @ protos.T / tau_p
    logits2 = h2 @ protos.T / tau_p
    p1 = _softmax(logits1)
    p2 = _softmax(logits2)

    log_p1 = logits1 - logits1.max(axis=1, keepdims=True)
    log_p1 = log_p1 - np.log(np.exp(log_p1).sum(axis=1, keepdims=True))
    ce = float(-(targets * log_p1).sum(axis=1).mean())

    p_bar = (p1.sum(axis=0) + p2.sum(axis=0)) / (2.0 * b)
    entropy = float(-(p_bar * np.log(p_bar)).sum())
    value = ce - lambda_e * entropy

    if not want_grad:
        return value, None
    dlogits1 = (p1 - targets) / b
    gvec = lambda_e * (1.0 + np.log(p_bar)) / (2.0 * b)
    dlogits1 += p1 * (gvec[None, :] - (p1 @ gvec)[:, None])
    dlogits2 = p2 * (gvec[None, :] - (p2 @ gvec)[:, None])

    grads = params.zeros_like()
    grads.prototypes += (dlogits1.T @ h1 + dlogits2.T @ h2) / tau_p
    _adapter_backward(params, ac1, (dlogits1 @ protos) / tau_p, grads)
    _adapter_backward(params, ac2, (dlogits2 @ protos) / tau_p, grads)
    return value, grads


def loss_cls_sup(model: Model, batch, labels, want_grad: bool = True):
    """Mean cross-entropy of prototype posteriors against hard labels."""
    params, tau_p = model.params, model.cfg.tau_p
    labels = np.asarray(labels, dtype=np.int64)
    k = model.cfg.num_classes
    if labels.size == 0:
        raise ValueError("empty supervised batch")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label outside classifier range")

    h, acache = _adapter_forward(params, np.asarray(batch, dtype=np.float64))
    logits = h @ params.prototypes.T / tau_p
    log_p = logits - logits.max(axis=1, keepdims=True)
    log_p = log_p - np.log(np.exp(log_p).sum(axis=1, keepdims=True))
    b = labels.shape[0]
    value = float(-log_p[np.arange(b), labels].mean())

    if not want_grad:
        return value, None
    p = np.exp(log_p)
    dlogits = p.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    grads = params.zeros_like()
    grads.prototypes += dlogits.T @ h / tau_p
    _adapter_backward(params, acache, (dlogits @ params.prototypes) / tau_p, grads)
    return value, grads


# ---------------------------------------------------------------------------
# fused batch objectives for the training loop
#
# Mathematically identical to weighted sums of the loss operations above, but
# the two view forwards (adapter + projection) are shared across all terms so
# a training step does a fraction of the work.  test_model_fused pins the
# equivalence against the composed single-loss path.


def _con_unsup_grad_s(z1, z2, tau):
    b = z1.shape[0]
    s = z1 @ z2.T / tau
    row_max = s.max(axis=1, keepdims=True)
    e = np.exp(s - row_max)
    denom = e.sum(axis=1, keepdims=True)
    value = float(np.mean(np.log(denom[:, 0]) + row_max[:, 0] - np.diag(s)))
    return value, (e / denom - np.eye(b)) / b


def _con_sup_grad_s(z1, z2, labels, tau):
    b = labels.shape[0]
    pos_mask = (labels[:, None] == labels[None, :]) & ~np.eye(b, dtype=bool)
    pos_counts = pos_mask.sum(axis=1)
    valid = pos_counts > 0
    if b < 2 or not valid.any():
        return None, None
    s = z1 @ z2.T / tau
    s_excl = s.copy()
    np.fill_diagonal(s_excl, -np.inf)
    row_max = s_excl.max(axis=1, keepdims=True)
    e = np.exp(s_excl - row_max)
    denom = e.sum(axis=1, keepdims=True)
    log_denom = np.log(denom[:, 0]) + row_max[:, 0]
    per_anchor = -np.where(valid, (s * pos_mask).sum(axis=1) / np.maximum(pos_counts, 1), 0.0)
    value = float((per_anchor + log_denom)[valid].mean())
    g = e / denom - pos_mask / np.maximum(pos_counts, 1)[:, None]
    g[~valid] = 0.0
    g /= int(valid.sum())
    return value, g


def main_batch_objective(
    model: Model,
    view1,
    view2,
    lab_mask: np.ndarray,
    mapped_labels: np.ndarray,
    lam: float,
    lambda_e: float,
    tau_t: float,
):
    """Fused (1-lam)*con_u + lam*con_l + cls_u + cls_l over one mini-batch.

    ``lab_mask`` marks the rows of the batch carrying supervision and
    ``mapped_labels`` are their classifier-space targets (already filtered to
    the classifier's width).  Returns (loss, grads).
    """
    params, cfg = model.params, model.cfg
    protos = params.prototypes
    tau_c, tau_p = cfg.tau_c, cfg.tau_p
    b = np.asarray(view1).shape[0]

    h1, ac1 = _adapter_forward(params, np.asarray(view1, dtype=np.float64))
    h2, ac2 = _adapter_forward(params, np.asarray(view2, dtype=np.float64))
    z1, pc1 = _proj_forward(params, h1)
    z2, pc2 = _proj_forward(params, h2)

    # unsupervised contrastive
    val_u, g_u = _con_unsup_grad_s(z1, z2, tau_c)
    loss = (1.0 - lam) * val_u
    dz1 = (1.0 - lam) * (g_u @ z2) / tau_c
    dz2 = (1.0 - lam) * (g_u.T @ z1) / tau_c

    # supervised contrastive on the labeled rows
    if lab_mask.any():
        val_l, g_l = _con_sup_grad_s(z1[lab_mask], z2[lab_mask], mapped_labels, tau_c)
        if val_l is not None:
            loss += lam * val_l
            dz1[lab_mask] += lam * (g_l @ z2[lab_mask]) / tau_c
            dz2[lab_mask] += lam * (g_l.T @ z1[lab_mask]) / tau_c

    # classification: self-distillation + entropy reward + supervised CE
    logits1 = h1 @ protos.T / tau_p
    logits2 = h2 @ protos.T / tau_p
    log_p1 = logits1 - logits1.max(axis=1, keepdims=True)
    log_p1 = log_p1 - np.log(np.exp(log_p1).sum(axis=1, keepdims=True))
    p1 = np.exp(log_p1)
    p2 = _softmax(logits2)
    targets = _softmax(h2 @ protos.T / tau_t)

    loss += float(-(targets * log_p1).sum(axis=1).mean())
    p_bar = (p1.sum(axis=0) + p2.sum(axis=0)) / (2.0 * b)
    loss -= lambda_e * float(-(p_bar * np.log(p_bar)).sum())

    dlogits1 = (p1 - targets) / b
    gvec = lambda_e * (1.0 + np.log(p_bar)) / (2.0 * b)
    dlogits1 += p1 * (gvec[None, :] - (p1 @ gvec)[:, None])
    dlogits2 = p2 * (gvec[None, :] - (p2 @ gvec)[:, None])

    if lab_mask.any() and mapped_labels.size:
        nl = mapped_labels.shape[0]
        rows = np.flatnonzero(lab_mask)
        loss += float(-log_p1[rows, mapped_labels].mean())
        d_sup = p1[rows].copy()
        d_sup[np.arange(nl), mapped_labels] -= 1.0
        dlogits1[rows] += d_sup / nl

    grads = params.zeros_like()
    grads.prototypes += (dlogits1.T @ h1 + dlogits2.T @ h2) / tau_p
    dh1 = (dlogits1 @ protos) / tau_p
    dh2 = (dlogits2 @ protos) / tau_p
    dh1 += _proj_backward(params, pc1, dz1, grads)
    dh2 += _proj_backward(params, pc2, dz2, grads)
    _adapter_backward(params, ac1, dh1, grads)
    _adapter_backward(params, ac2, dh2, grads)
    return loss, grads


def queried_batch_objective(model: Model, view1, view2, mapped_labels, lam: float):
    """Fused supervised terms lam*con_l + cls_l for a queried mini-batch."""
    params, cfg = model.params, model.cfg
    protos = params.prototypes
    labels = np.asarray(mapped_labels, dtype=np.int64)
    nl = labels.shape[0]

    h1, ac1 = _adapter_forward(params, np.asarray(view1, dtype=np.float64))
    logits1 = h1 @ protos.T / cfg.tau_p
    log_p1 = logits1 - logits1.max(axis=1, keepdims=True)
    log_p1 = log_p1 - np.log(np.exp(log_p1).sum(axis=1, keepdims=True))
    loss = float(-log_p1[np.arange(nl), labels].mean())
    dlogits1 = np.exp(log_p1)
    dlogits1[np.arange(nl), labels] -= 1.0
    dlogits1 /= nl

    grads = params.zeros_like()
    grads.prototypes += dlogits1.T @ h1 / cfg.tau_p
    dh1 = (dlogits1 @ protos) / cfg.tau_p

    if _has_positive_pair(labels):
        h2, ac2 = _adapter_forward(params, np.asarray(view2, dtype=np.float64))
        z1, pc1 = _proj_forward(params, h1)
        z2, pc2 = _proj_forward(params, h2)
        val_l, g_l = _con_sup_grad_s(z1, z2, labels, cfg.tau_c)
        loss += lam * val_l
        dz1 = lam * (g_l @ z2) / cfg.tau_c
        dz2 = lam * (g_l.T @ z1) / cfg.tau_c
        dh1 += _proj_backward(params, pc1, dz1, grads)
        dh2 = _proj_backward(params, pc2, dz2, grads)
        _adapter_backward(params, ac2, dh2, grads)

    _adapter_backward(params, ac1, dh1, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# optimization


@dataclass
class TrainConfig:
    """Hyperparameters for base training and per-round fine-tuning."""

    lam: float = 0.35
    lambda_e: float = 1.0
    lr: float = 0.1
    momentum: float = 0.9
    epochs_base: int = 200
    epochs_round: int = 15
    batch_main: int = 128
    batch_queried: int = 8
    ema_decay: float = 0.9
    view_sigma: float = 0.05
    proj_dim: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.lambda_e < 0:
            raise ValueError("lambda_e must be >= 0")


class SgdMomentum:
    def __init__(self, params: Params, momentum: float):
        self.momentum = momentum
        self.velocity = params.zeros_like()

    def step(self, params: Params, grads: Params, lr: float) -> None:
        for p, g, v in zip(params.arrays(), grads.arrays(), self.velocity.arrays()):
            v *= self.momentum
            v += g
            p -= lr * v


def cosine_lr(lr0: float, epoch: int, total_epochs: int) -> float:
    if total_epochs <= 0:
        return lr0
    return 0.5 * lr0 * (1.0 + np.cos(np.pi * epoch / total_epochs))


@dataclass
class RoundResult:
    m_init: LabelMapping
    m_final: LabelMapping
    epoch_losses: list[float] = field(default_factory=list)


def _chunks(order: np.ndarray, size: int) -> list[np.ndarray]:
    return [order[i : i + size] for i in range(0, order.size, size)]


def _has_positive_pair(labels: np.ndarray) -> bool:
    if labels.size < 2:
        return False
    _, counts = np.unique(labels, return_counts=True)
    return bool((counts >= 2).any())


def train_round(
    model: Model,
    ema: EmaModel,
    features: np.ndarray,
    labels: np.ndarray,
    labeled_idx: np.ndarray,
    unlabeled_idx: np.ndarray,
    queried_idx: np.ndarray,
    mapping_provider: Callable[[], LabelMapping],
    cfg: TrainConfig,
    epochs: int,
    seed: int,
    stage: str,
) -> RoundResult:
    """One training stage: E epochs of SimGCD-style updates with EMA tracking.

    Main batches draw from ``labeled_idx`` (initially labeled data, supervised
    + unsupervised terms) plus ``unlabeled_idx`` (unsupervised only); queried
    samples train in separate small supervised batches interleaved round-robin
    after each main step.  The label mapping is refreshed from the EMA model at
    every epoch start and applied to all supervised targets; the mappings seen
    at the first and last epoch are returned for the stability diff.
    """
    feats = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    unlabeled_idx = np.asarray(unlabeled_idx, dtype=np.int64)
    queried_idx = np.asarray(queried_idx, dtype=np.int64)

    labeled_mask = np.zeros(feats.shape[0], dtype=bool)
    labeled_mask[labeled_idx] = True
    main_pool = np.concatenate([labeled_idx, unlabeled_idx])

    rng_shuffle = rng_from(seed, "shuffle", stage)
    rng_views = rng_from(seed, "views", stage)
    opt = SgdMomentum(model.params, cfg.momentum)

    m_init = m_final = None
    epoch_losses: list[float] = []

    for epoch in range(epochs):
        mapping = mapping_provider()
        if m_init is None:
            m_init = mapping
        m_final = mapping
        lr = cosine_lr(cfg.lr, epoch, epochs)
        tau_t = model.sharpen_temperature()

        main_order = rng_shuffle.permutation(main_pool)
        main_batches = [b for b in _chunks(main_order, cfg.batch_main) if b.size >= 2]
        if queried_idx.size:
            queried_order = rng_shuffle.permutation(queried_idx)
            queried_batches = _chunks(queried_order, cfg.batch_queried)
        else:
            queried_batches = []
        q_cursor = 0

        step_losses = []
        for batch in main_batches:
            x = feats[batch]
            v1, v2 = make_views(x, rng_views, cfg.view_sigma)
            is_lab = labeled_mask[batch]
            if is_lab.any():
                y_m = mapping.apply(labels[batch[is_lab]])
                # classifier can be narrower than the mapping when K was under-estimated
                keep = y_m < model.cfg.num_classes
                y_m = y_m[keep]
                lab_rows = np.flatnonzero(is_lab)[keep]
                is_lab = np.zeros_like(is_lab)
                is_lab[lab_rows] = True
            else:
                y_m = np.empty(0, dtype=np.int64)
            loss_val, grads = main_batch_objective(
                model, v1, v2, is_lab, y_m, cfg.lam, cfg.lambda_e, tau_t
            )
            _apply_step(model, ema, opt, grads, lr)
            step_losses.append(loss_val)

            if queried_batches:
                qbatch = queried_batches[q_cursor % len(queried_batches)]
                q_cursor += 1
                xq = feats[qbatch]
                qv1, qv2 = make_views(xq, rng_views, cfg.view_sigma)
                y_m = mapping.apply(labels[qbatch])
                keep = y_m < model.cfg.num_classes
                y_m = y_m[keep]
                if y_m.size:
                    _, grads = queried_batch_objective(model, qv1[keep], qv2[keep], y_m, cfg.lam)
                    _apply_step(model, ema, opt, grads, lr)

        epoch_losses.append(float(np.mean(step_losses)) if step_losses else float("nan"))
        model.schedule_epoch += 1

    if m_init is None:
        m_init = m_final = mapping_provider()
    return RoundResult(m_init=m_init, m_final=m_final, epoch_losses=epoch_losses)


def _apply_step(model: Model, ema: EmaModel, opt: SgdMomentum, grads: Params, lr: float):
    opt.step(model.params, grads, lr)
    if lr != 0.0:
        model.renormalize_prototypes()
    ema.update(model)


# ---------------------------------------------------------------------------
# checkpoints: length-prefixed JSON header + float64 LE tensors in order


def _write_params_file(path: Path, header: dict, params: Params) -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in params.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_params_file(path: Path) -> tuple[dict, Params]:
    raw = Path(path).read_bytes()
    (hlen,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    d, p, k = header["dim"], header["proj_dim"], header["num_classes"]
    shapes = [(d, d), (d,), (p, d), (p,), (k, d)]
    off = 8 + hlen
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).copy())
        off += n * 8
    if off != len(raw):
        raise ValueError(f"checkpoint size mismatch in {path}")
    return header, Params(*arrays)


def save_checkpoint(model: Model, ema: EmaModel | None, path: str | Path) -> None:
    path = Path(path)
    cfg = model.cfg
    header = {
        "dim": cfg.dim,
        "proj_dim": cfg.proj_dim,
        "num_classes": cfg.num_classes,
        "tau_c": cfg.tau_c,
        "tau_p": cfg.tau_p,
        "sharpen_start": cfg.sharpen_start,
        "sharpen_end": cfg.sharpen_end,
        "sharpen_ramp_epochs": cfg.sharpen_ramp_epochs,
        "schedule_epoch": model.schedule_epoch,
    }
    _write_params_file(path, header, model.params)
    if ema is not None:
        header_ema = dict(header, ema_decay=ema.decay)
        _write_params_file(path.with_suffix(path.suffix + ".ema"), header_ema, ema.params)


def load_checkpoint(path: str | Path, with_ema: bool = False):
    path = Path(path)
    header, params = _read_params_file(path)
    cfg = ModelConfig(
        dim=header["dim"],
        num_classes=header["num_classes"],
        proj_dim=header["proj_dim"],
        tau_c=header["tau_c"],
        tau_p=header["tau_p"],
        sharpen_start=header["sharpen_start"],
        sharpen_end=header["sharpen_end"],
        sharpen_ramp_epochs=header["sharpen_ramp_epochs"],
    )
    model = Model(cfg, params, schedule_epoch=int(header["schedule_epoch"]))
    if not with_ema:
        return model
    ema_path = path.with_suffix(path.suffix + ".ema")
    ema_header, ema_params = _read_params_file(ema_path)
    ema = EmaModel(model, float(ema_header.get("ema_decay", 0.9)))
    ema.params = ema_params
    return model, ema
