"""The subsample CNN: configuration, parameters, forward and backward passes.

Pipeline::

    image -> Conv1 -> LN -> LReLU -> Conv2 -> LN -> LReLU = A2
    path 1: flatten(A2) -> FC -> LReLU
    path 2: lower-right block of A2 -> SConv -> LN -> LReLU -> flatten -> SFC -> LReLU
    concat(path 1, path 2) -> softmax head

Inside the subsampled block every activation of A2 feeds both paths, so its
gradient is the sum of the two path contributions; outside it only the FC
path contributes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import StructuralError
from . import layers as L


@dataclass(frozen=True)
class ScnnConfig:
    num_classes: int = 21
    filter_size: int = 3
    gamma_h: float = 0.5
    gamma_w: float = 0.5
    input_shape: tuple = (3, 65, 50)
    conv_strides: tuple = (2, 2, 1)
    fc_width: int = 128
    sfc_width: int = 64
    leaky_slope: float = 0.01
    learning_rate: float = 0.01
    batch_size: int = 32
    seed: int = 0
    # False gives the ablated plain CNN (no SConv/SFC path)
    subsample_path: bool = True

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_strides", tuple(int(v) for v in self.conv_strides))
        if len(self.input_shape) != 3 or len(self.conv_strides) != 3:
            raise StructuralError("input_shape and conv_strides need three entries")
        self.shapes()

    def shapes(self) -> dict:
        """Activation shapes along the network; raises if any layer does not fit."""
        c, h, w = self.input_shape
        d, k = self.filter_size, self.num_classes
        s1, s2, s3 = self.conv_strides
        h1, w1 = L.conv_output_size(h, d, s1), L.conv_output_size(w, d, s1)
        h2, w2 = L.conv_output_size(h1, d, s2), L.conv_output_size(w1, d, s2)
        if min(h1, w1, h2, w2) < 1:
            raise StructuralError(f"input {self.input_shape} too small for the conv stack")
        out = {"input": (c, h, w), "conv1": (k, h1, w1), "conv2": (k, h2, w2)}
        hp, wq = L.subsample_size(h2, w2, self.gamma_h, self.gamma_w)
        if self.subsample_path:
            if hp < d or wq < d:
                raise StructuralError(f"subsampled region {hp}x{wq} smaller than filter {d}")
            out["subsample"] = (k, hp, wq)
            out["sconv"] = (k, L.conv_output_size(hp, d, s3), L.conv_output_size(wq, d, s3))
        return out

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "ScnnConfig":
        raw = json.loads(text)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in known})


@dataclass(frozen=True)
class DigitLabel:
    """Category 1..21: 1-10 are digits 0-9, 11-20 the same digits followed by
    a decimal point, 21 is a blank position."""

    category: int

    BLANK = 21

    def __post_init__(self):
        if not 1 <= int(self.category) <= 21:
            raise StructuralError(f"digit category must be in 1..21, got {self.category}")
        object.__setattr__(self, "category", int(self.category))

    @classmethod
    def of(cls, digit: Optional[int], decimal_point: bool = False) -> "DigitLabel":
        if digit is None:
            return cls(cls.BLANK)
        return cls(digit + 1 + (10 if decimal_point else 0))

    @property
    def is_blank(self) -> bool:
        return self.category == self.BLANK

    @property
    def digit(self) -> Optional[int]:
        return None if self.is_blank else (self.category - 1) % 10

    @property
    def has_decimal_point(self) -> bool:
        return 11 <= self.category <= 20

    @property
    def index(self) -> int:
        return self.category - 1

    def __str__(self):
        if self.is_blank:
            return " "
        return f"{self.digit}." if self.has_decimal_point else str(self.digit)


class ScnnParams:
    """Named float64 arrays holding every trainable parameter.

    ``version`` increases on each in-place update so stale forward caches can
    be detected.
    """

    def __init__(self, arrays: dict):
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        self.version = 0

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def names(self):
        return list(self.arrays)

    def copy(self) -> "ScnnParams":
        return ScnnParams({k: v.copy() for k, v in self.arrays.items()})

    def sgd_step(self, grads: dict, lr: float) -> None:
        for k, g in grads.items():
            self.arrays[k] -= lr * g
        self.version += 1

    def equals(self, other: "ScnnParams") -> bool:
        return (self.names() == other.names()
                and all(np.array_equal(self[k], other[k]) for k in self.arrays))


def param_shapes(cfg: ScnnConfig) -> dict:
    sh = cfg.shapes()
    k, d = cfg.num_classes, cfg.filter_size
    c_in = cfg.input_shape[0]
    out = {
        "conv1_w": (k, c_in, d, d), "conv1_b": (k,),
        "ln1_g": (k,), "ln1_b": (k,),
        "conv2_w": (k, k, d, d), "conv2_b": (k,),
        "ln2_g": (k,), "ln2_b": (k,),
        "fc_w": (int(np.prod(sh["conv2"])), cfg.fc_width), "fc_b": (cfg.fc_width,),
    }
    head_in = cfg.fc_width
    if cfg.subsample_path:
        out.update({
            "sconv_w": (k, k, d, d), "sconv_b": (k,),
            "ln3_g": (k,), "ln3_b": (k,),
            "sfc_w": (int(np.prod(sh["sconv"])), cfg.sfc_width), "sfc_b": (cfg.sfc_width,),
        })
        head_in += cfg.sfc_width
    out.update({"head_w": (head_in, k), "head_b": (k,)})
    return out


def init_params(cfg: ScnnConfig, seed: Optional[int] = None) -> ScnnParams:
    """He-style uniform init scaled by fan-in; LN gains 1, all shifts and biases 0."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed if seed is None else seed).spawn(1)[0])
    arrays = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("_g"):
            arrays[name] = np.ones(shape)
        elif name.endswith("_b"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ScnnParams(arrays)


@dataclass
class ForwardCache:
    params: ScnnParams
    version: int
    cfg: ScnnConfig
    batch: int
    single: bool
    probs: np.ndarray
    steps: dict = field(default_factory=dict)


def _as_batch(images, cfg):
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1:] != cfg.input_shape:
        raise StructuralError(f"image shape {x.shape[1:]} does not match {cfg.input_shape}")
    return x, single


def _conv_block(x, w, b, g, s, stride, slope, steps, tag):
    z, steps[tag + "_conv"] = L.conv_forward(x, w, b, stride)
    n, steps[tag + "_ln"] = L.layer_norm_forward(z, g, s)
    a, steps[tag + "_act"] = L.leaky_relu_forward(n, slope)
    return a


def scnn_forward(images, params: ScnnParams, cfg: ScnnConfig):
    """Class probabilities for one image ``(C, H, W)`` or a batch ``(N, C, H, W)``.

    Returns ``(probs, cache)``; ``probs`` has shape ``(num_classes,)`` or
    ``(N, num_classes)`` to match the input.
    """
    x, single = _as_batch(images, cfg)
    s1, s2, s3 = cfg.conv_strides
    slope = cfg.leaky_slope
    p = params
    steps = {}
    a1 = _conv_block(x, p["conv1_w"], p["conv1_b"], p["ln1_g"], p["ln1_b"], s1, slope, steps, "c1")
    a2 = _conv_block(a1, p["conv2_w"], p["conv2_b"], p["ln2_g"], p["ln2_b"], s2, slope, steps, "c2")
    n = x.shape[0]
    steps["a2_shape"] = a2.shape

    z, steps["fc"] = L.affine_forward(a2.reshape(n, -1), p["fc_w"], p["fc_b"])
    h_fc, steps["fc_act"] = L.leaky_relu_forward(z, slope)
    feats = [h_fc]
    if cfg.subsample_path:
        sub = L.subsample_extract(a2, cfg.gamma_h, cfg.gamma_w, cfg.filter_size)
        a3 = _conv_block(sub, p["sconv_w"], p["sconv_b"], p["ln3_g"], p["ln3_b"], s3, slope, steps, "c3")
        steps["a3_shape"] = a3.shape
        z, steps["sfc"] = L.affine_forward(a3.reshape(n, -1), p["sfc_w"], p["sfc_b"])
        h_sfc, steps["sfc_act"] = L.leaky_relu_forward(z, slope)
        feats.append(h_sfc)
    hcat = np.concatenate(feats, axis=1)
    logits, steps["head"] = L.affine_forward(hcat, p["head_w"], p["head_b"])
    probs = L.softmax(logits)
    cache = ForwardCache(params, params.version, cfg, n, single, probs, steps)
    return (probs[0] if single else probs), cache


def cross_entropy_loss(probs, labels) -> float:
    """Mean ``-log p[label]`` for categories 1..21 (floored at ``log 1e-12``)."""
    return L.cross_entropy(probs, _targets(labels))


def _targets(labels):
    cats = np.atleast_1d(np.asarray([l.category if isinstance(l, DigitLabel) else l for l in np.atleast_1d(labels)],
                                    dtype=np.int64))
    if cats.min() < 1 or cats.max() > 21:
        raise StructuralError("digit categories must be in 1..21")
    return cats - 1


@dataclass
class Gradients:
    """Parameter gradients plus the gradient w.r.t. the Conv2 activation A2.

    ``d_a2_fc`` and ``d_a2_sconv`` are the two path contributions; ``d_a2`` is
    their sum.
    """

    params: dict
    d_a2: np.ndarray
    d_a2_fc: np.ndarray
    d_a2_sconv: np.ndarray


PATHS = ("fc", "sconv")


def scnn_backward(cache: ForwardCache, labels, paths=PATHS) -> Gradients:
    """Analytic gradients of the mean cross-entropy.

    ``paths`` masks a feature path: passing ``("fc",)`` zeroes the upstream
    gradient entering the SConv/SFC path and vice versa.
    """
    t = _targets(labels)
    if len(t) != cache.batch:
        raise StructuralError(f"{len(t)} labels for a batch of {cache.batch}")
    probs = cache.probs
    return backward_from_logits(cache, L.softmax_cross_entropy_backward(probs, t), paths)


def backward_from_logits(cache: ForwardCache, dlogits, paths=PATHS) -> Gradients:
    if cache.params.version != cache.version:
        raise StructuralError("forward cache is stale: parameters changed since the forward pass")
    cfg, st, p = cache.cfg, cache.steps, cache.params
    n = cache.batch
    grads = {}
    dlogits = np.asarray(dlogits, dtype=np.float64).reshape(n, cfg.num_classes)

    dh, grads["head_w"], grads["head_b"] = L.affine_backward(dlogits, st["head"])
    dh_fc = dh[:, :cfg.fc_width]
    if "fc" not in paths:
        dh_fc = np.zeros_like(dh_fc)
    dz = L.leaky_relu_backward(dh_fc, st["fc_act"])
    dflat, grads["fc_w"], grads["fc_b"] = L.affine_backward(dz, st["fc"])
    a2_shape = st["a2_shape"]
    d_a2_fc = dflat.reshape(a2_shape)

    d_a2_sconv = np.zeros(a2_shape)
    if cfg.subsample_path:
        dh_sfc = dh[:, cfg.fc_width:]
        if "sconv" not in paths:
            dh_sfc = np.zeros_like(dh_sfc)
        dz = L.leaky_relu_backward(dh_sfc, st["sfc_act"])
        dflat, grads["sfc_w"], grads["sfc_b"] = L.affine_backward(dz, st["sfc"])
        da3 = dflat.reshape(st["a3_shape"])
        dsub = _conv_block_backward(da3, st, "c3", grads, "sconv", "ln3")
        hp, wq = dsub.shape[-2:]
        d_a2_sconv[..., a2_shape[-2] - hp:, a2_shape[-1] - wq:] = dsub

    d_a2 = d_a2_fc + d_a2_sconv
    da1 = _conv_block_backward(d_a2, st, "c2", grads, "conv2", "ln2")
    _conv_block_backward(da1, st, "c1", grads, "conv1", "ln1")
    ordered = {k: grads[k] for k in p.names()}
    return Gradients(ordered, d_a2, d_a2_fc, d_a2_sconv)


def _conv_block_backward(dout, st, tag, grads, conv, ln):
    dn = L.leaky_relu_backward(dout, st[tag + "_act"])
    dz, grads[ln + "_g"], grads[ln + "_b"] = L.layer_norm_backward(dn, st[tag + "_ln"])
    dx, grads[conv + "_w"], grads[conv + "_b"] = L.conv_backward(dz, st[tag + "_conv"])
    return dx


def predict_proba(images, params: ScnnParams, cfg: ScnnConfig, batch_size: int = 256) -> np.ndarray:
    x = np.asarray(images)
    if x.ndim == 3:
        return scnn_forward(x, params, cfg)[0]
    out = [scnn_forward(x[k:k + batch_size], params, cfg)[0] for k in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, cfg.num_classes))


def predict_categories(images, params: ScnnParams, cfg: ScnnConfig, batch_size: int = 256) -> np.ndarray:
    # argmax returns the first maximum, i.e. the lowest category on ties
    return np.argmax(predict_proba(images, params, cfg, batch_size), axis=-1) + 1


def predict_digit(image, params: ScnnParams, cfg: ScnnConfig) -> DigitLabel:
    return DigitLabel(int(np.argmax(scnn_forward(image, params, cfg)[0])) + 1)


# -- checkpoints -------------------------------------------------------------

def save_params(path, params: ScnnParams, cfg: ScnnConfig) -> None:
    """Write config and arrays to a single ``.npz`` file (bit-exact round trip)."""
    payload = {f"param/{k}": v for k, v in params.arrays.items()}
    payload["config"] = np.frombuffer(cfg.to_json().encode("utf-8"), dtype=np.uint8)
    with Path(path).open("wb") as fh:
        np.savez(fh, **payload)


def load_params(path) -> tuple[ScnnParams, ScnnConfig]:
    with np.load(Path(path), allow_pickle=False) as data:
        cfg = ScnnConfig.from_json(data["config"].tobytes().decode("utf-8"))
        arrays = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
    expected = param_shapes(cfg)
    for name, shape in expected.items():
        if name not in arrays or arrays[name].shape != tuple(shape):
            raise StructuralError(f"checkpoint {path}: parameter {name} missing or mis-shaped")
    return ScnnParams({k: arrays[k] for k in expected}), cfg
