"""Shallow weight-shared Siamese network for learning iris filter kernels.

Each branch is one convolution layer (wrap-x / clamp-y, same as the
encoder) followed by an optional ReLU. The two branch outputs are merged by
an elementwise absolute difference, and a single sigmoid unit maps the
weighted sum of that difference to a score in (0, 1), 0 meaning a perfect
match. Gradients are derived by hand; convolutions run through the FFT.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import DimensionMismatch, InsufficientPairs, InvalidConfig
from .imaging import Kernel2D, pad_rows
from .encoding import filled_texture

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20000
    batch_genuine: int = 16
    batch_impostor: int = 16
    lr: float = 0.0006
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 10.0  # decoupled, on kernels and head weights; 0 disables
    seed: int = 0
    activation: str = "relu"
    use_bias: bool = True
    n_kernels: int = 6
    kernel_rows: int = 9
    kernel_cols: int = 15
    precision: str = "float64"  # float32 trades exactness for ~2x speed

    def __post_init__(self):
        if self.batch_genuine != self.batch_impostor:
            raise InvalidConfig("batches must be half genuine, half impostor")
        if self.activation not in ACTIVATIONS:
            raise InvalidConfig(f"activation must be one of {ACTIVATIONS}")
        if self.precision not in ("float64", "float32"):
            raise InvalidConfig("precision must be float64 or float32")
        if self.iterations < 0 or self.lr <= 0:
            raise InvalidConfig("iterations must be >= 0 and lr > 0")
        if self.weight_decay < 0 or self.lr * self.weight_decay >= 1:
            raise InvalidConfig("weight_decay must be >= 0 and lr * weight_decay < 1")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class SiameseModel:
    kernels: np.ndarray  # (K, rows, cols)
    kernel_biases: np.ndarray  # (K,)
    head_weights: np.ndarray  # (K * H * W,)
    head_bias: float
    patch_shape: tuple = (64, 256)
    activation: str = "relu"

    @property
    def n_kernels(self):
        return self.kernels.shape[0]

    def params(self) -> dict:
        return {"kernels": self.kernels, "kernel_biases": self.kernel_biases,
                "head_weights": self.head_weights,
                "head_bias": np.array([self.head_bias], dtype=np.float64)}

    @classmethod
    def from_params(cls, p, patch_shape, activation):
        return cls(p["kernels"].copy(), p["kernel_biases"].copy(), p["head_weights"].copy(),
                   float(p["head_bias"][0]), tuple(patch_shape), activation)

    def to_dict(self):
        return {
            "patch_shape": list(self.patch_shape),
            "activation": self.activation,
            "kernels": self.kernels.tolist(),
            "kernel_biases": self.kernel_biases.tolist(),
            "head_weights": self.head_weights.tolist(),
            "head_bias": float(self.head_bias),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["kernels"], dtype=np.float64),
                   np.asarray(d["kernel_biases"], dtype=np.float64),
                   np.asarray(d["head_weights"], dtype=np.float64),
                   float(d["head_bias"]), tuple(d["patch_shape"]), d["activation"])


def init_model(seed=0, n_kernels=6, kernel_shape=(9, 15), patch_shape=(64, 256),
               activation="relu") -> SiameseModel:
    rng = np.random.default_rng(seed)
    r, c = kernel_shape
    kernels = rng.standard_normal((n_kernels, r, c)) / math.sqrt(r * c)
    n_head = n_kernels * patch_shape[0] * patch_shape[1]
    head = np.abs(rng.standard_normal(n_head)) / n_head
    return SiameseModel(kernels, np.zeros(n_kernels), head, 0.0, tuple(patch_shape), activation)


@dataclass(frozen=True)
class PairSample:
    x1: np.ndarray
    x2: np.ndarray
    label: int  # 0 genuine, 1 impostor

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 (genuine) or 1 (impostor)")


def pair_label(meta_a, meta_b) -> int:
    """0 for the same eye of the same subject, 1 otherwise."""
    return 0 if (meta_a.subject_id == meta_b.subject_id and meta_a.eye == meta_b.eye) else 1


# ---------------------------------------------------------------------------
# Forward / backward


class _Conv:
    """FFT correlation with fixed patch geometry."""

    def __init__(self, patch_shape, kernel_shape, dtype=np.float64):
        self.h, self.w = patch_shape
        self.kr, self.kc = kernel_shape
        self.pad = self.kr // 2
        self.hp = self.h + 2 * self.pad
        self.dtype = np.dtype(dtype)
        self.cols = (np.arange(self.kc) - self.kc // 2) % self.w
        if len(set(self.cols.tolist())) != self.kc:
            raise DimensionMismatch("kernel wider than the patch")

    def spectra(self, images):
        return sfft.rfft2(pad_rows(np.asarray(images, dtype=self.dtype), self.pad))

    def forward(self, spec, kernels, biases):
        layout = np.zeros((kernels.shape[0], self.hp, self.w), dtype=self.dtype)
        layout[:, :self.kr, self.cols] = kernels
        k_hat = np.conj(sfft.rfft2(layout))
        out = sfft.irfft2(spec[:, None] * k_hat[None], s=(self.hp, self.w))
        return out[:, :, :self.h, :] + biases.astype(self.dtype)[None, :, None, None]

    def kernel_grad(self, spec, grad):
        g = np.zeros(grad.shape[:2] + (self.hp, self.w), dtype=self.dtype)
        g[:, :, :self.h] = grad
        g_hat = sfft.rfft2(g)
        acc = np.einsum("nkyx,nyx->kyx", np.conj(g_hat), spec)
        corr = sfft.irfft2(acc, s=(self.hp, self.w))
        return corr[:, :self.kr][:, :, self.cols]


def _activate(pre, activation):
    return np.maximum(pre, 0) if activation == "relu" else pre


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def loss(score, label):
    """Binary cross-entropy with operands clamped at 1e-12."""
    score = np.asarray(score, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    p = np.clip(score, 1e-12, None)
    q = np.clip(1.0 - score, 1e-12, None)
    out = -(label * np.log(p) + (1.0 - label) * np.log(q))
    return float(out) if out.ndim == 0 else out


def _batch(model, conv, spec1, spec2, labels, use_bias=True, need_grad=True):
    """Mean loss, scores and (optionally) parameter gradients for a batch."""
    b = len(labels)
    spec = np.concatenate([spec1, spec2])
    biases = model.kernel_biases if use_bias else np.zeros_like(model.kernel_biases)
    pre = conv.forward(spec, model.kernels, biases)
    f = _activate(pre, model.activation)
    diff = f[:b] - f[b:]
    d = np.abs(diff).reshape(b, -1)
    z = d @ model.head_weights.astype(d.dtype) + model.head_bias
    s = _sigmoid(z.astype(np.float64))
    y = np.asarray(labels, dtype=np.float64)
    mean_loss = float(np.mean(loss(s, y)))
    if not need_grad:
        return mean_loss, s, None

    dz = (s - y) / b
    grads = {
        "head_weights": (dz.astype(d.dtype) @ d).astype(np.float64),
        "head_bias": np.array([dz.sum()]),
    }
    dd = dz.astype(d.dtype)[:, None] * model.head_weights.astype(d.dtype)[None, :]
    ddiff = dd.reshape(diff.shape) * np.sign(diff)
    g = np.concatenate([ddiff, -ddiff])
    if model.activation == "relu":
        g *= pre > 0
    grads["kernel_biases"] = (g.sum(axis=(0, 2, 3)).astype(np.float64) if use_bias
                              else np.zeros_like(model.kernel_biases))
    grads["kernels"] = conv.kernel_grad(spec, g).astype(np.float64)
    return mean_loss, s, grads


def _check_patch(x, shape):
    if np.shape(x)[-2:] != tuple(shape):
        raise DimensionMismatch(f"patch shape {np.shape(x)[-2:]} != model patch shape {shape}")


def forward(model: SiameseModel, x1, x2):
    """Score a single pair; returns (score, cache) with the feature tensors."""
    _check_patch(x1, model.patch_shape)
    _check_patch(x2, model.patch_shape)
    conv = _Conv(model.patch_shape, model.kernels.shape[1:])
    spec = conv.spectra(np.stack([x1, x2]))
    pre = conv.forward(spec, model.kernels, model.kernel_biases)
    f = _activate(pre, model.activation)
    d = np.abs(f[0] - f[1])
    z = float(d.ravel() @ model.head_weights + model.head_bias)
    score = float(_sigmoid(z))
    return score, {"pre": pre, "features": f, "l1": d, "z": z}


def batch_loss_and_grads(model: SiameseModel, x1, x2, labels, use_bias=True):
    """Mean BCE over pairs (x1[i], x2[i]) and its gradient for every parameter."""
    conv = _Conv(model.patch_shape, model.kernels.shape[1:])
    _check_patch(x1, model.patch_shape)
    _check_patch(x2, model.patch_shape)
    l, _, g = _batch(model, conv, conv.spectra(x1), conv.spectra(x2), labels, use_bias)
    return l, g


def predict(model: SiameseModel, x1, x2, chunk=32) -> np.ndarray:
    """Scores for many pairs at once."""
    conv = _Conv(model.patch_shape, model.kernels.shape[1:])
    x1, x2 = np.asarray(x1), np.asarray(x2)
    out = []
    for lo in range(0, len(x1), chunk):
        a, b = x1[lo:lo + chunk], x2[lo:lo + chunk]
        _, s, _ = _batch(model, conv, conv.spectra(a), conv.spectra(b), np.zeros(len(a)),
                         need_grad=False)
        out.append(s)
    return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------------------
# Training


class PairPool:
    """Patches plus the genuine pair list; impostors are drawn on demand.

    Genuine pairs join two patches of the same subject, eye and side.
    Impostor pairs join patches of the same side from different eyes.
    """

    def __init__(self, patches):
        self.patches = list(patches)
        self.textures = np.stack([filled_texture(p.texture, p.mask) for p in self.patches]) \
            if self.patches else np.zeros((0, 64, 256))
        self.keys = [(p.meta.subject_id, p.meta.eye) for p in self.patches]
        self.sides = [p.side for p in self.patches]
        self.genuine = [(i, j) for i in range(len(self.patches)) for j in range(i + 1, len(self.patches))
                        if self.keys[i] == self.keys[j] and self.sides[i] == self.sides[j]]
        by_side = {}
        for i, s in enumerate(self.sides):
            by_side.setdefault(s, []).append(i)
        self.by_side = {s: np.array(v) for s, v in sorted(by_side.items())}
        self.n_impostor = sum(
            1 for idx in self.by_side.values() for a in range(len(idx)) for b in range(a + 1, len(idx))
            if self.keys[idx[a]] != self.keys[idx[b]])

    def samples(self, pairs):
        return [PairSample(self.textures[i], self.textures[j], pair_label(self.patches[i].meta,
                                                                          self.patches[j].meta))
                for i, j in pairs]

    def sample_impostors(self, rng, n):
        sides = list(self.by_side)
        chosen = set()
        while len(chosen) < n:
            idx = self.by_side[sides[rng.integers(len(sides))]]
            a, b = rng.choice(len(idx), 2, replace=False)
            i, j = sorted((int(idx[a]), int(idx[b])))
            if self.keys[i] != self.keys[j]:
                chosen.add((i, j))
        return sorted(chosen)


@dataclass
class TrainResult:
    model: SiameseModel
    loss_history: list = field(default_factory=list)
    config: TrainConfig = field(default_factory=TrainConfig)

    def checkpoint(self) -> dict:
        return {"config": asdict(self.config), "seed": self.config.seed,
                "iteration": len(self.loss_history), "model": self.model.to_dict()}

    def checkpoint_json(self) -> str:
        return json.dumps(self.checkpoint())

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(self.loss_history):
            w.writerow([i + 1, repr(v)])
        return buf.getvalue()


def load_checkpoint(text: str) -> TrainResult:
    d = json.loads(text)
    return TrainResult(SiameseModel.from_dict(d["model"]), [], TrainConfig.from_dict(d["config"]))


class _Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1 - c.adam_beta1 ** self.t
        bc2 = 1 - c.adam_beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = c.adam_beta1 * self.m[k] + (1 - c.adam_beta1) * g
            self.v[k] = c.adam_beta2 * self.v[k] + (1 - c.adam_beta2) * g * g
            params[k] -= c.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.adam_eps)
        # decoupled shrinkage keeps the 98k-weight head from memorizing training subjects
        if c.weight_decay:
            for k in ("kernels", "head_weights"):
                params[k] *= 1.0 - c.lr * c.weight_decay


def train(pool: PairPool, cfg: TrainConfig = TrainConfig(), progress=None) -> TrainResult:
    """Minimize BCE with ADAM on balanced batches drawn afresh every iteration."""
    if len(pool.genuine) < cfg.batch_genuine or pool.n_impostor < cfg.batch_impostor:
        raise InsufficientPairs(
            f"need >= {cfg.batch_genuine} genuine and >= {cfg.batch_impostor} impostor pairs, "
            f"have {len(pool.genuine)} and {pool.n_impostor}")
    patch_shape = pool.textures.shape[1:]
    model = init_model(cfg.seed, cfg.n_kernels, (cfg.kernel_rows, cfg.kernel_cols), patch_shape,
                       cfg.activation)
    conv = _Conv(patch_shape, (cfg.kernel_rows, cfg.kernel_cols), np.dtype(cfg.precision))
    spectra = conv.spectra(pool.textures)
    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    adam = _Adam(params, cfg)
    genuine = np.array(pool.genuine)
    labels = np.array([0.0] * cfg.batch_genuine + [1.0] * cfg.batch_impostor)
    history = []
    for it in range(cfg.iterations):
        gen = genuine[np.sort(rng.choice(len(genuine), cfg.batch_genuine, replace=False))]
        imp = np.array(pool.sample_impostors(rng, cfg.batch_impostor))
        pairs = np.concatenate([gen, imp])
        current = SiameseModel.from_params(params, patch_shape, cfg.activation)
        l, _, grads = _batch(current, conv, spectra[pairs[:, 0]], spectra[pairs[:, 1]], labels,
                             cfg.use_bias)
        adam.step(params, grads)
        history.append(l)
        if progress is not None:
            progress(it, l)
    return TrainResult(SiameseModel.from_params(params, patch_shape, cfg.activation), history, cfg)


def extract_kernels(model: SiameseModel, prefix="learned") -> list[Kernel2D]:
    """Mean-subtracted copies of the learned convolution kernels."""
    return [Kernel2D(k - k.mean(), "learned", f"{prefix}-{i + 1}")
            for i, k in enumerate(model.kernels)]
