"""Minibatch SGD training, evaluation and finite-difference gradient checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import StructuralError
from . import layers as L
from .network import (ScnnConfig, ScnnParams, cross_entropy_loss, init_params,
                      predict_categories, scnn_backward, scnn_forward)

log = logging.getLogger(__name__)


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: Optional[float] = None


@dataclass
class TrainResult:
    params: ScnnParams
    history: list = field(default_factory=list)


def _shuffle_rng(cfg: ScnnConfig):
    return np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])


def train(images, labels, cfg: ScnnConfig, epochs: int = 20, test=None,
          params: Optional[ScnnParams] = None,
          on_epoch: Optional[Callable[[EpochMetrics], None]] = None,
          stop_at: Optional[float] = None) -> TrainResult:
    """Plain SGD on the mean minibatch cross-entropy.

    ``labels`` are categories 1..21. ``test`` is an optional ``(images,
    labels)`` pair evaluated after every epoch. Training accuracy is the
    running accuracy of the pre-update predictions within each epoch.
    ``stop_at`` ends training once the test accuracy reaches that value.
    """
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise StructuralError("cannot train on an empty corpus")
    if len(images) != len(labels):
        raise StructuralError(f"{len(images)} images but {len(labels)} labels")
    params = init_params(cfg) if params is None else params
    rng = _shuffle_rng(cfg)
    bs = cfg.batch_size
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(images))
        total_loss, correct = 0.0, 0
        for k in range(0, len(order), bs):
            idx = order[k:k + bs]
            xb = images[idx].astype(np.float64)
            yb = labels[idx]
            probs, cache = scnn_forward(xb, params, cfg)
            total_loss += cross_entropy_loss(probs, yb) * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) + 1 == yb))
            grads = scnn_backward(cache, yb)
            params.sgd_step(grads.params, cfg.learning_rate)
        m = EpochMetrics(epoch, total_loss / len(images), correct / len(images))
        if test is not None:
            m.test_accuracy = evaluate(params, cfg, *test).accuracy
        log.info("epoch %d loss %.4f train %.4f test %s", epoch, m.loss, m.train_accuracy, m.test_accuracy)
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
        if stop_at is not None and m.test_accuracy is not None and m.test_accuracy >= stop_at:
            break
    return TrainResult(params, history)


@dataclass
class Evaluation:
    accuracy: float
    predictions: np.ndarray
    confusion: np.ndarray  # rows: true category - 1, cols: predicted category - 1

    def decimal_confusions(self) -> int:
        """Misclassifications between a digit and the same digit with a decimal point."""
        c = self.confusion
        return int(sum(c[k, k + 10] + c[k + 10, k] for k in range(10)))


def evaluate(params: ScnnParams, cfg: ScnnConfig, images, labels) -> Evaluation:
    labels = np.asarray(labels, dtype=np.int64)
    pred = predict_categories(images, params, cfg)
    conf = np.zeros((cfg.num_classes, cfg.num_classes), dtype=np.int64)
    np.add.at(conf, (labels - 1, pred - 1), 1)
    acc = float(np.mean(pred == labels)) if len(labels) else 0.0
    return Evaluation(acc, pred, conf)


# -- gradient checks ---------------------------------------------------------

def relative_error(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps round-off on
    near-zero gradients from dominating."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(f, x, indices, step=1e-5):
    """Central differences of scalar ``f()`` w.r.t. ``x.flat[indices]`` (x modified in place and restored)."""
    flat = x.reshape(-1)
    out = np.empty(len(indices))
    for k, ix in enumerate(indices):
        old = flat[ix]
        flat[ix] = old + step
        fp = f()
        flat[ix] = old - step
        fm = f()
        flat[ix] = old
        out[k] = (fp - fm) / (2 * step)
    return out


@dataclass
class GradCheckReport:
    per_param: dict          # name -> max relative error
    samples: dict            # name -> number of entries checked
    input_error: float       # max relative error of dJ/dA2 entries
    additivity_error: float  # max |dA2 - (dA2_fc_only + dA2_sconv_only)|
    outside_sconv_max: float  # max |SConv contribution| outside the subsampled block
    mask_fc_exact: bool      # masked-SConv backward reproduces the FC contribution exactly

    @property
    def max_relative_error(self) -> float:
        return max(max(self.per_param.values()), self.input_error)


def gradient_check(cfg: Optional[ScnnConfig] = None, seed: int = 0, n_samples: int = 100,
                   batch: int = 2, step: float = 1e-5, params: Optional[ScnnParams] = None,
                   images=None, labels=None) -> GradCheckReport:
    """Compare analytic and central-difference gradients of the loss.

    Every parameter tensor with more than ``n_samples`` entries is checked at
    ``n_samples`` random entries, smaller tensors exhaustively. The gradient
    w.r.t. the Conv2 activation is checked by perturbing that activation and
    re-running only the layers downstream of it.
    """
    cfg = cfg or ScnnConfig(seed=seed)
    rng = np.random.default_rng(seed)
    params = params or init_params(cfg, seed)
    if images is None:
        images = rng.uniform(0.0, 1.0, size=(batch,) + cfg.input_shape)
    if labels is None:
        labels = rng.integers(1, cfg.num_classes + 1, size=len(images))
    images = np.asarray(images, dtype=np.float64)

    probs, cache = scnn_forward(images, params, cfg)
    full = scnn_backward(cache, labels)

    def loss():
        return cross_entropy_loss(scnn_forward(images, params, cfg)[0], labels)

    per_param, samples = {}, {}
    for name in params.names():
        arr = params[name]
        size = arr.size
        idx = np.arange(size) if size <= n_samples else rng.choice(size, n_samples, replace=False)
        num = numeric_gradient(loss, arr, idx, step)
        ana = full.params[name].reshape(-1)[idx]
        per_param[name] = float(relative_error(ana, num).max())
        samples[name] = len(idx)

    a2 = _a2(images, params, cfg)
    idx = rng.choice(a2.size, min(n_samples, a2.size), replace=False)
    num = numeric_gradient(lambda: _loss_from_a2(a2, params, cfg, labels), a2, idx, step)
    input_error = float(relative_error(full.d_a2.reshape(-1)[idx], num).max())

    fc_only = scnn_backward(cache, labels, paths=("fc",))
    sconv_only = scnn_backward(cache, labels, paths=("sconv",)) if cfg.subsample_path else None
    if sconv_only is not None:
        additivity = float(np.abs(full.d_a2 - (fc_only.d_a2 + sconv_only.d_a2)).max())
        outside = _outside_region(full.d_a2_sconv, cfg)
    else:
        additivity, outside = 0.0, 0.0
    mask_exact = bool(np.array_equal(fc_only.d_a2, full.d_a2_fc))
    return GradCheckReport(per_param, samples, input_error, additivity, outside, mask_exact)


def _a2(images, params, cfg):
    _, cache = scnn_forward(images, params, cfg)
    x, slope = cache.steps["c2_act"]
    return L.leaky_relu_forward(x, slope)[0]


def _loss_from_a2(a2, params, cfg, labels):
    """Loss as a function of the Conv2 activation alone."""
    n = a2.shape[0]
    p, slope = params, cfg.leaky_slope
    h_fc, _ = L.leaky_relu_forward(a2.reshape(n, -1) @ p["fc_w"] + p["fc_b"], slope)
    feats = [h_fc]
    if cfg.subsample_path:
        sub = L.subsample_extract(a2, cfg.gamma_h, cfg.gamma_w, cfg.filter_size)
        z, _ = L.conv_forward(sub, p["sconv_w"], p["sconv_b"], cfg.conv_strides[2])
        z, _ = L.layer_norm_forward(z, p["ln3_g"], p["ln3_b"])
        a3, _ = L.leaky_relu_forward(z, slope)
        h_sfc, _ = L.leaky_relu_forward(a3.reshape(n, -1) @ p["sfc_w"] + p["sfc_b"], slope)
        feats.append(h_sfc)
    logits = np.concatenate(feats, axis=1) @ p["head_w"] + p["head_b"]
    return cross_entropy_loss(L.softmax(logits), labels)


def _outside_region(d_sconv, cfg):
    p, q = d_sconv.shape[-2:]
    hp, wq = L.subsample_size(p, q, cfg.gamma_h, cfg.gamma_w)
    mask = np.ones((p, q), dtype=bool)
    mask[p - hp:, q - wq:] = False
    return float(np.abs(d_sconv[..., mask]).max()) if mask.any() else 0.0
