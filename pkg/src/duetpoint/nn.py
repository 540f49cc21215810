"""Minimal dense-network engine.

Exactly the layer kinds used by the models: linear, ELU, dropout,
Gaussian input noise and a reshape+softmax head. Reverse-mode gradients
are hand-derived per layer; Adam with a cosine learning-rate schedule
drives training. A finite-difference checker verifies the whole stack.

Forward passes return an explicit tape, so a model instance is immutable
during inference and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import load_container, save_container


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    total_steps: int = 1000
    batch_size: int = 32
    seed: int = 0
    hidden: int = 512
    latent_channels: int = 128  # K
    latent_classes: int = 8  # C
    dropout: float = 0.1
    noise_sigma: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")

    def lr_at(self, step: int) -> float:
        """Cosine decay: lr0 * (1 + cos(pi * t / T)) / 2, t in [0, T]."""
        t = min(step, self.total_steps)
        return self.learning_rate * 0.5 * (1.0 + np.cos(np.pi * t / self.total_steps))


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        if n_in <= 0 or n_out <= 0:
            raise ValueError("linear dims must be positive")
        bound = 1.0 / np.sqrt(n_in)
        self.W = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x, rng, train):
        return x @ self.W + self.b, x

    def backward(self, cache, dy, grads):
        x = cache
        grads["W"] = x.T @ dy
        grads["b"] = dy.sum(axis=0)
        return dy @ self.W.T

    def params(self):
        return {"W": self.W, "b": self.b}

    def out_dim(self, n_in):
        if n_in != self.n_in:
            raise ValueError(f"linear expects width {self.n_in}, got {n_in}")
        return self.n_out


class ELU:
    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def forward(self, x, rng, train):
        neg = self.alpha * np.expm1(np.minimum(x, 0.0))
        y = np.where(x > 0, x, neg)
        return y, (x, neg)

    def backward(self, cache, dy, grads):
        x, neg = cache
        return dy * np.where(x > 0, 1.0, neg + self.alpha)

    def params(self):
        return {}

    def out_dim(self, n_in):
        return n_in


class Dropout:
    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout p must be in [0, 1)")
        self.p = p

    def forward(self, x, rng, train):
        if not train or self.p == 0.0:
            return x, None
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * mask, mask

    def backward(self, cache, dy, grads):
        return dy if cache is None else dy * cache

    def params(self):
        return {}

    def out_dim(self, n_in):
        return n_in


class GaussianNoise:
    def __init__(self, sigma: float):
        if sigma < 0:
            raise ValueError("noise sigma must be nonnegative")
        self.sigma = sigma

    def forward(self, x, rng, train):
        if not train or self.sigma == 0.0:
            return x, None
        return x + rng.normal(scale=self.sigma, size=x.shape), None

    def backward(self, cache, dy, grads):
        return dy

    def params(self):
        return {}

    def out_dim(self, n_in):
        return n_in


class SoftmaxReshape:
    """Reshape (B, K*C) into K rows of C logits and softmax each row.

    Output is flattened back to (B, K*C); every row is a distribution.
    """

    def __init__(self, channels: int, classes: int):
        self.K, self.C = channels, classes

    def forward(self, x, rng, train):
        B = x.shape[0]
        z = x.reshape(B, self.K, self.C)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        return y.reshape(B, self.K * self.C), y

    def backward(self, cache, dy, grads):
        y = cache  # (B, K, C)
        B = y.shape[0]
        g = dy.reshape(B, self.K, self.C)
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot)).reshape(B, self.K * self.C)

    def params(self):
        return {}

    def out_dim(self, n_in):
        if n_in != self.K * self.C:
            raise ValueError(
                f"softmax head expects width {self.K * self.C}, got {n_in}"
            )
        return n_in


class Sequential:
    """An ordered layer stack with explicit-tape forward/backward."""

    def __init__(self, layers: list, in_dim: int, name: str = "net"):
        self.layers = layers
        self.name = name
        self.in_dim = in_dim
        d = in_dim
        for layer in layers:
            d = layer.out_dim(d)
        self.out_dim = d

    def forward(self, x, rng=None, train=False):
        """Returns (output, tape). Eval mode needs no rng."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{self.name}: non-finite input")
        if x.shape[1] != self.in_dim:
            raise ValueError(f"{self.name}: input width {x.shape[1]}, expected {self.in_dim}")
        if train and rng is None:
            raise ValueError("train-mode forward requires an rng")
        tape = []
        for layer in self.layers:
            x, cache = layer.forward(x, rng, train)
            tape.append(cache)
        return x, tape

    def infer(self, x):
        return self.forward(x, train=False)[0]

    def backward(self, tape, dy):
        """Propagate an output gradient; returns (dx, grads dict)."""
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer_grads = {}
            dy = self.layers[i].backward(tape[i], dy, layer_grads)
            for k, v in layer_grads.items():
                grads[f"{i}.{k}"] = v
        return dy, grads

    def params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params().items():
                out[f"{i}.{k}"] = v
        return out

    def set_params(self, values: dict):
        for i, layer in enumerate(self.layers):
            for k in layer.params():
                name = f"{i}.{k}"
                arr = np.asarray(values[name], dtype=np.float64)
                cur = layer.params()[k]
                if arr.shape != cur.shape:
                    raise ValueError(f"{self.name}.{name}: shape {arr.shape} != {cur.shape}")
                cur[...] = arr


def make_encoder_stack(
    in_dim: int, cfg: TrainConfig, rng: np.random.Generator, name: str
) -> Sequential:
    """Encoder/estimator: noise, then 6 dropout+linear blocks, softmax head."""
    h, K, C = cfg.hidden, cfg.latent_channels, cfg.latent_classes
    layers = [GaussianNoise(cfg.noise_sigma), Dropout(cfg.dropout), Linear(in_dim, h, rng), ELU()]
    for _ in range(4):
        layers += [Dropout(cfg.dropout), Linear(h, h, rng), ELU()]
    layers += [Dropout(cfg.dropout), Linear(h, K * C, rng), SoftmaxReshape(K, C)]
    return Sequential(layers, in_dim, name)


def make_decoder_stack(
    in_dim: int, out_dim: int, cfg: TrainConfig, rng: np.random.Generator, name: str
) -> Sequential:
    """Decoder/mapping: 5 dropout+linear+ELU blocks plus a linear head."""
    h = cfg.hidden
    layers = [Dropout(cfg.dropout), Linear(in_dim, h, rng), ELU()]
    for _ in range(4):
        layers += [Dropout(cfg.dropout), Linear(h, h, rng), ELU()]
    layers += [Dropout(cfg.dropout), Linear(h, out_dim, rng)]
    return Sequential(layers, in_dim, name)


class Adam:
    """Adam with cosine-decayed learning rate and global-norm clipping.

    Non-finite gradients skip the step and raise the skipped counter
    instead of poisoning the moments.
    """

    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.skipped = 0

    def step(self, params: dict, grads: dict, step_index: int | None = None):
        cfg = self.cfg
        # One fused scan per tensor: the squared norm is non-finite iff
        # the gradient contains a NaN/Inf, so it doubles as the guard.
        sq = sum(float(np.dot(g.reshape(-1), g.reshape(-1))) for g in grads.values())
        if not np.isfinite(sq):
            self.skipped += 1
            return False
        if step_index is None:
            step_index = self.t
        lr = cfg.lr_at(step_index)
        self.t = step_index + 1
        if cfg.clip_norm > 0:
            total = np.sqrt(sq)
            if total > cfg.clip_norm:
                scale = cfg.clip_norm / total
                grads = {k: g * scale for k, g in grads.items()}
        b1, b2 = cfg.beta1, cfg.beta2
        c1 = 1.0 / (1 - b1 ** self.t)
        c2 = 1.0 / (1 - b2 ** self.t)
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            # in-place moment updates; the update reuses g as scratch
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            upd = np.sqrt(v * c2)
            upd += cfg.adam_eps
            np.divide(m, upd, out=upd)
            upd *= lr * c1
            params[k] -= upd
        return True


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries and its gradient wrt pred."""
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def grad_check(
    model: Sequential, x: np.ndarray, target: np.ndarray, eps: float = 1e-4
) -> float:
    """Max relative error between analytic and central-difference grads.

    Runs in eval mode (stochastic layers frozen). The loss is plain MSE
    against the given target.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    y, tape = model.forward(x, train=False)
    _, dy = mse(y, target)
    _, grads = model.backward(tape, dy)
    params = model.params()
    worst = 0.0
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        idx = range(flat.size) if flat.size <= 64 else np.linspace(
            0, flat.size - 1, 64
        ).astype(int)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = mse(model.forward(x, train=False)[0], target)
            flat[i] = orig - eps
            lm, _ = mse(model.forward(x, train=False)[0], target)
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            denom = max(abs(num), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(num - gflat[i]) / denom)
    return worst


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Deterministic per-step generator for train-mode stochastic layers."""
    return np.random.default_rng(np.random.SeedSequence((seed, step)))


def save_networks(path, nets: dict, meta: dict | None = None):
    """Persist named Sequential stacks into one container file."""
    tensors = {}
    dims = {}
    for net_name, net in nets.items():
        for k, v in net.params().items():
            tensors[f"{net_name}.{k}"] = v
        dims[net_name] = [net.in_dim, net.out_dim]
    meta = dict(meta or {})
    meta["net_dims"] = dims
    save_container(path, tensors, meta=meta, dtype="f8")


def load_networks(path, nets: dict) -> dict:
    """Load parameters saved by save_networks into freshly built stacks."""
    tensors, meta = load_container(path)
    for net_name, net in nets.items():
        values = {
            k[len(net_name) + 1:]: v
            for k, v in tensors.items()
            if k.startswith(net_name + ".")
        }
        net.set_params(values)
    return meta
