"""Tracking network: estimator-encoder-decoder triplet.

Training couples a reconstruction loss (decode the encoder's latent back
to the full-body target) with a matching loss that pulls the estimator's
latent toward the encoder's. The encoder output is a constant target in
the matching term (stop-gradient), so the estimator chases the encoder
and never the reverse. At inference the encoder is dropped and the
network reduces to estimator + decoder.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import load_container, save_container
from .dataset import (
    FUTURE,
    Dataset,
    Stats,
    assemble_tracking,
    tracking_input_layout,
    tracking_output_layout,
    vec_as_frames,
)
from .motion import RootFrame, orthonormalize_rotation
from .nn import (
    Adam,
    Sequential,
    TrainConfig,
    make_decoder_stack,
    make_encoder_stack,
    mse,
    save_networks,
    load_networks,
    step_rng,
)


class LayoutMismatch(ValueError):
    pass


@dataclass
class TrackingModel:
    estimator: Sequential
    encoder: Sequential | None
    decoder: Sequential
    stats_x: Stats
    stats_y: Stats
    cfg: TrainConfig
    n_joints: int
    variant: str = "duet"
    encoder_input: str = "xy"  # "xy" (auto-encoder over the target) or "x"
    vanilla: bool = False

    @property
    def layout_x(self):
        return tracking_input_layout(self.n_joints, self.variant)

    @property
    def layout_y(self):
        return tracking_output_layout(self.n_joints)

    def infer(self, x: np.ndarray) -> np.ndarray:
        """Deterministic eval-mode inference on raw (unnormalized) input."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.layout_x.width:
            raise LayoutMismatch(
                f"input width {x.shape[1]} != layout width {self.layout_x.width} "
                f"(variant {self.variant!r}, J={self.n_joints})"
            )
        z = self.estimator.infer(self.stats_x.normalize(x))
        y = self.decoder.infer(z)
        return self.stats_y.denormalize(y)

    def eval_losses(self, X: np.ndarray, Y: np.ndarray) -> dict:
        """Eval-mode normalized losses on a raw sample matrix."""
        Xn = self.stats_x.normalize(X)
        Yn = self.stats_y.normalize(Y)
        out = {}
        if self.vanilla:
            z = self.estimator.infer(Xn)
            out["rec"], _ = mse(self.decoder.infer(z), Yn)
            return out
        enc_in = np.concatenate([Xn, Yn], axis=1) if self.encoder_input == "xy" else Xn
        z_e = self.encoder.infer(enc_in)
        out["rec"], _ = mse(self.decoder.infer(z_e), Yn)
        z_s = self.estimator.infer(Xn)
        out["matching"], _ = mse(z_s, z_e)
        out["infer_rec"], _ = mse(self.decoder.infer(z_s), Yn)
        return out


def track_infer(model: TrackingModel, x: np.ndarray) -> np.ndarray:
    """Estimator + decoder inference (the encoder plays no part here)."""
    return model.infer(x)


def decode_output(model: TrackingModel, raw_y: np.ndarray) -> dict:
    """Structure a raw output vector into 30 future frames.

    Headings renormalized to unit complex, rotation blocks repaired onto
    SO(3), contact logits thresholded at 0.5 (ties count as contact).
    Frames containing non-finite values are flagged invalid.
    """
    raw_y = np.asarray(raw_y, dtype=np.float64).reshape(-1)
    lay = model.layout_y
    if raw_y.shape[0] != lay.width:
        raise LayoutMismatch(f"output width {raw_y.shape[0]} != {lay.width}")
    parts = lay.unpack(raw_y)
    valid = np.ones(FUTURE, dtype=bool)
    for v in parts.values():
        valid &= np.all(np.isfinite(v.reshape(FUTURE, -1)), axis=1)
    parts = {k: np.nan_to_num(v, nan=0.0, posinf=0.0, neginf=0.0) for k, v in parts.items()}
    roots = vec_as_frames(parts["future_roots"], renormalize=True)
    rotations = orthonormalize_rotation(
        parts["future_rot"].reshape(FUTURE, model.n_joints, 3, 3)
    )
    contacts = (parts["future_contacts"] >= 0.5).astype(np.float64)
    return {
        "rel_roots": roots,
        "positions": parts["future_pos"],
        "rotations": rotations,
        "contacts": contacts,
        "valid": valid,
    }


def build_networks(
    in_dim: int, out_dim: int, cfg: TrainConfig, vanilla: bool, encoder_input: str
):
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xBEEF)))
    latent = cfg.latent_channels * cfg.latent_classes
    if vanilla:
        estimator = make_encoder_stack(in_dim, cfg, rng, "estimator")
        decoder = make_decoder_stack(latent, out_dim, cfg, rng, "decoder")
        return estimator, None, decoder
    estimator = make_encoder_stack(in_dim, cfg, rng, "estimator")
    enc_in = in_dim + out_dim if encoder_input == "xy" else in_dim
    encoder = make_encoder_stack(enc_in, cfg, rng, "encoder")
    decoder = make_decoder_stack(latent, out_dim, cfg, rng, "decoder")
    return estimator, encoder, decoder


def train_tracking(
    data,
    cfg: TrainConfig,
    variant: str = "duet",
    encoder_input: str = "xy",
    vanilla: bool = False,
    roles: tuple = ("leader", "follower"),
    rec_weight: float = 1.0,
    match_weight: float = 1.0,
    jitter_sigma: float = 0.0,
    log_path=None,
    log_every: int = 50,
) -> tuple[TrackingModel, list]:
    """Train the triplet (or the vanilla MLP ablation when vanilla=True).

    data is either a Dataset (train windows are assembled from the train
    split, teacher-forced from ground truth) or a raw (X, Y) pair.
    Returns (model, history of per-log-step loss dicts).
    """
    if isinstance(data, Dataset):
        X, Y = assemble_tracking(data, "train", variant, roles)
        n_joints = data.skeleton.n_joints
    else:
        X, Y = data
        n_joints = (
            tracking_joint_count(X.shape[1], variant)
        )
    stats_x, stats_y = Stats.fit(X), Stats.fit(Y)
    Xn, Yn = stats_x.normalize(X), stats_y.normalize(Y)

    estimator, encoder, decoder = build_networks(
        X.shape[1], Y.shape[1], cfg, vanilla, encoder_input
    )
    model = TrackingModel(
        estimator, encoder, decoder, stats_x, stats_y, cfg, n_joints,
        variant=variant, encoder_input=encoder_input, vanilla=vanilla,
    )

    params = {}
    for name, net in (("estimator", estimator), ("encoder", encoder), ("decoder", decoder)):
        if net is None:
            continue
        for k, v in net.params().items():
            params[f"{name}.{k}"] = v
    opt = Adam(params, cfg)
    order_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xDA7A)))
    n = X.shape[0]
    pose_width = n_joints * 12 + 4  # jitter applies to the pose/contact block

    history = []
    for step in range(cfg.total_steps):
        idx = order_rng.integers(0, n, size=min(cfg.batch_size, n))
        xb, yb = Xn[idx], Yn[idx]
        rng = step_rng(cfg.seed, step)
        if jitter_sigma > 0:
            xb = xb.copy()
            xb[:, :pose_width] += rng.normal(scale=jitter_sigma, size=(xb.shape[0], pose_width))

        if vanilla:
            z, tape_s = estimator.forward(xb, rng=rng, train=True)
            yhat, tape_d = decoder.forward(z, rng=rng, train=True)
            l_rec, dy = mse(yhat, yb)
            losses = {"rec": l_rec, "matching": 0.0}
            dz, gd = decoder.backward(tape_d, rec_weight * dy)
            _, gs = estimator.backward(tape_s, dz)
            grads = {f"decoder.{k}": v for k, v in gd.items()}
            grads.update({f"estimator.{k}": v for k, v in gs.items()})
        else:
            enc_in = np.concatenate([xb, yb], axis=1) if encoder_input == "xy" else xb
            z_e, tape_e = encoder.forward(enc_in, rng=rng, train=True)
            yhat, tape_d = decoder.forward(z_e, rng=rng, train=True)
            z_s, tape_s = estimator.forward(xb, rng=rng, train=True)
            l_rec, dy = mse(yhat, yb)
            l_match, dz_s = mse(z_s, z_e)  # z_e is a constant target here
            losses = {"rec": l_rec, "matching": l_match}
            dz_e, gd = decoder.backward(tape_d, rec_weight * dy)
            _, ge = encoder.backward(tape_e, dz_e)
            _, gs = estimator.backward(tape_s, match_weight * dz_s)
            grads = {f"decoder.{k}": v for k, v in gd.items()}
            grads.update({f"encoder.{k}": v for k, v in ge.items()})
            grads.update({f"estimator.{k}": v for k, v in gs.items()})

        total = rec_weight * losses["rec"] + match_weight * losses["matching"]
        if not np.isfinite(total):
            raise FloatingPointError(f"training diverged at step {step}: loss={total}")
        opt.step(params, grads, step_index=step)

        if step % log_every == 0 or step == cfg.total_steps - 1:
            history.append({"step": step, "lr": cfg.lr_at(step), **losses})

    if log_path is not None:
        with open(log_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(history[0].keys()))
            w.writeheader()
            w.writerows(history)
    return model, history


def tracking_joint_count(in_width: int, variant: str) -> int:
    """Recover J from an input width (inverse of the layout formula)."""
    from .dataset import PAST

    traj = PAST * 13 if variant == "no_future" else FUTURE * 13
    per_joint = 24 if variant == "fullbody_condition" else 12
    j = (in_width - 4 - traj) / per_joint
    if j != int(j) or j <= 0:
        raise LayoutMismatch(f"width {in_width} matches no joint count for {variant!r}")
    return int(j)


def save_tracking(model: TrackingModel, path):
    nets = {"estimator": model.estimator, "decoder": model.decoder}
    if model.encoder is not None:
        nets["encoder"] = model.encoder
    tensors = {}
    for name, net in nets.items():
        for k, v in net.params().items():
            tensors[f"{name}.{k}"] = v
    tensors.update(
        mean_x=model.stats_x.mean, std_x=model.stats_x.std,
        mean_y=model.stats_y.mean, std_y=model.stats_y.std,
    )
    meta = {
        "kind": "tracking",
        "variant": model.variant,
        "encoder_input": model.encoder_input,
        "vanilla": model.vanilla,
        "n_joints": model.n_joints,
        "layout_x": model.layout_x.hash(),
        "layout_y": model.layout_y.hash(),
        "cfg": {
            "hidden": model.cfg.hidden,
            "latent_channels": model.cfg.latent_channels,
            "latent_classes": model.cfg.latent_classes,
            "seed": model.cfg.seed,
            "learning_rate": model.cfg.learning_rate,
            "total_steps": model.cfg.total_steps,
            "dropout": model.cfg.dropout,
            "noise_sigma": model.cfg.noise_sigma,
        },
        "stats_hash": model.stats_x.hash() + model.stats_y.hash(),
    }
    save_container(path, tensors, meta=meta, dtype="f8")


def load_tracking(path) -> TrackingModel:
    tensors, meta = load_container(path)
    if meta.get("kind") != "tracking":
        raise ValueError(f"{path}: not a tracking model file")
    cfg = TrainConfig(**{**meta["cfg"], "batch_size": 1})
    stats_x = Stats(tensors["mean_x"], tensors["std_x"])
    stats_y = Stats(tensors["mean_y"], tensors["std_y"])
    in_dim = stats_x.mean.shape[0]
    out_dim = stats_y.mean.shape[0]
    estimator, encoder, decoder = build_networks(
        in_dim, out_dim, cfg, meta["vanilla"], meta["encoder_input"]
    )
    model = TrackingModel(
        estimator, encoder, decoder, stats_x, stats_y, cfg,
        n_joints=meta["n_joints"], variant=meta["variant"],
        encoder_input=meta["encoder_input"], vanilla=meta["vanilla"],
    )
    if model.layout_x.hash() != meta["layout_x"] or model.layout_y.hash() != meta["layout_y"]:
        raise LayoutMismatch(f"{path}: feature layout hash mismatch")
    for name, net in (("estimator", estimator), ("encoder", encoder), ("decoder", decoder)):
        if net is None:
            continue
        net.set_params({
            k[len(name) + 1:]: v for k, v in tensors.items() if k.startswith(name + ".")
        })
    return model
