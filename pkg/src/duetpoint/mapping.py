"""Mapping network: leader's past half second of three-point input to
one second of future three-point trajectories for both characters.

A plain 6-layer dense stack trained with mean-squared error; there is no
autoregression anywhere in this network, so its outputs cannot drift.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .container import load_container, save_container
from .dataset import (
    Dataset,
    Stats,
    assemble_mapping,
    mapping_input_layout,
    mapping_output_layout,
    vec_as_frames,
)
from .nn import Adam, Sequential, TrainConfig, make_decoder_stack, mse, step_rng
from .tracking import LayoutMismatch


@dataclass
class MappingModel:
    net: Sequential
    stats_x: Stats
    stats_y: Stats
    cfg: TrainConfig

    @property
    def layout_x(self):
        return mapping_input_layout()

    @property
    def layout_y(self):
        return mapping_output_layout()

    def infer(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.layout_x.width:
            raise LayoutMismatch(
                f"mapping input width {x.shape[1]} != {self.layout_x.width}"
            )
        return self.stats_y.denormalize(self.net.infer(self.stats_x.normalize(x)))

    def eval_loss(self, X: np.ndarray, Y: np.ndarray) -> float:
        loss, _ = mse(
            self.net.infer(self.stats_x.normalize(X)), self.stats_y.normalize(Y)
        )
        return loss


def map_infer(model: MappingModel, past_window: np.ndarray) -> dict:
    """Run the mapping net and split the output into both characters'
    future root frames (headings renormalized) and three-point positions.

    Everything is expressed in the coordinate frame of the input
    window's first frame; the caller re-anchors per character.
    """
    y = model.infer(past_window)[0]
    parts = model.layout_y.unpack(y)
    return {
        "leader_roots": vec_as_frames(parts["leader_roots"]),
        "leader_points": parts["leader_points"],
        "follower_roots": vec_as_frames(parts["follower_roots"]),
        "follower_points": parts["follower_points"],
    }


def train_mapping(
    data,
    cfg: TrainConfig,
    log_path=None,
    log_every: int = 50,
) -> tuple[MappingModel, list]:
    """Minimize MSE over mapping windows. data: Dataset or (X, Y)."""
    if isinstance(data, Dataset):
        X, Y = assemble_mapping(data, "train")
    else:
        X, Y = data
    if X.shape[1] != mapping_input_layout().width:
        raise LayoutMismatch("mapping training data has a wrong input width")
    stats_x, stats_y = Stats.fit(X), Stats.fit(Y)
    Xn, Yn = stats_x.normalize(X), stats_y.normalize(Y)

    rng0 = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x3A9)))
    net = make_decoder_stack(X.shape[1], Y.shape[1], cfg, rng0, "mapping")
    model = MappingModel(net, stats_x, stats_y, cfg)

    params = net.params()
    opt = Adam(params, cfg)
    order_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x0D0)))
    n = X.shape[0]
    history = []
    for step in range(cfg.total_steps):
        idx = order_rng.integers(0, n, size=min(cfg.batch_size, n))
        rng = step_rng(cfg.seed, step)
        yhat, tape = net.forward(Xn[idx], rng=rng, train=True)
        loss, dy = mse(yhat, Yn[idx])
        if not np.isfinite(loss):
            raise FloatingPointError(f"mapping training diverged at step {step}")
        _, grads = net.backward(tape, dy)
        opt.step(params, grads, step_index=step)
        if step % log_every == 0 or step == cfg.total_steps - 1:
            history.append({"step": step, "lr": cfg.lr_at(step), "loss": loss})

    if log_path is not None:
        with open(log_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(history[0].keys()))
            w.writeheader()
            w.writerows(history)
    return model, history


def save_mapping(model: MappingModel, path):
    tensors = {f"mapping.{k}": v for k, v in model.net.params().items()}
    tensors.update(
        mean_x=model.stats_x.mean, std_x=model.stats_x.std,
        mean_y=model.stats_y.mean, std_y=model.stats_y.std,
    )
    meta = {
        "kind": "mapping",
        "layout_x": model.layout_x.hash(),
        "layout_y": model.layout_y.hash(),
        "cfg": {
            "hidden": model.cfg.hidden,
            "seed": model.cfg.seed,
            "learning_rate": model.cfg.learning_rate,
            "total_steps": model.cfg.total_steps,
            "dropout": model.cfg.dropout,
        },
    }
    save_container(path, tensors, meta=meta, dtype="f8")


def load_mapping(path) -> MappingModel:
    tensors, meta = load_container(path)
    if meta.get("kind") != "mapping":
        raise ValueError(f"{path}: not a mapping model file")
    cfg = TrainConfig(**{**meta["cfg"], "batch_size": 1})
    stats_x = Stats(tensors["mean_x"], tensors["std_x"])
    stats_y = Stats(tensors["mean_y"], tensors["std_y"])
    rng0 = np.random.default_rng(0)
    net = make_decoder_stack(
        stats_x.mean.shape[0], stats_y.mean.shape[0], cfg, rng0, "mapping"
    )
    model = MappingModel(net, stats_x, stats_y, cfg)
    if model.layout_x.hash() != meta["layout_x"]:
        raise LayoutMismatch(f"{path}: mapping layout hash mismatch")
    net.set_params({k[8:]: v for k, v in tensors.items() if k.startswith("mapping.")})
    return model
