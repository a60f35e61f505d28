"""Optimization loops for the label stage, image stage and joint fine-tuning.

The loop follows the alternating protocol: one discriminator step, then one
generator step per batch. All randomness flows through two captured sources
(the torch RNG for parameter init, the dataset RNG for ordering and masks),
which makes fixed-seed runs reproduce their loss logs bit-for-bit and lets a
checkpoint resume mid-epoch without divergence.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import data
from .discriminator import DiscriminatorConfig, MultiScaleDiscriminator, build_discriminator
from .generator import Generator, GeneratorConfig, build_generator, sg_config, sp_config, sg_forward, sp_forward
from .losses import (
    LossWeights,
    PerceptualNet,
    adversarial_loss_D,
    adversarial_loss_G,
    build_perceptual_net,
    masked_feature_matching_loss,
    perceptual_patch_loss,
    sg_objective,
    sp_objective,
)
from .pipeline import composite

CHECKPOINT_FORMAT = "seg-inpaint-checkpoint"
CHECKPOINT_VERSION = 1

STAGES = ("sp", "sg", "joint")


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    epochs: int
    decay_start: int
    lr: float = 2e-4
    batch_size: int = 1
    image_size: int = 256
    width_scale: float = 1.0
    seed: int = 0
    num_categories: int = 8
    weights: LossWeights = field(default_factory=LossWeights)
    betas: tuple[float, float] = (0.5, 0.999)
    norm: str = "instance"
    disc_base_channels: int = 64
    perceptual_seed: int = 0
    train_perceptual_weights: bool = False
    checkpoint_every: int = 0  # epochs between periodic checkpoints; 0 = final only

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if not 0 <= self.decay_start <= self.epochs:
            raise ValueError("decay_start must lie in [0, epochs]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def linear_lr(epoch: int, config: TrainConfig) -> float:
    """Constant lr before decay_start, then linear to 0 at `epochs`."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.decay_start:
        return config.lr
    return config.lr * (config.epochs - epoch) / (config.epochs - config.decay_start)


@dataclass
class TrainState:
    """Serializable snapshot sufficient to resume training bit-exactly."""

    config: TrainConfig
    epoch: int                       # epochs fully completed
    step: int                        # global optimizer steps taken
    pos_in_epoch: int                # items consumed in the open epoch
    epoch_order: Optional[list[int]] # visit order of the open epoch, if any
    models: dict                     # name -> {"config": dict, "state": state_dict}
    optimizers: dict                 # name -> optimizer state_dict
    torch_rng: torch.Tensor
    data_rng: Optional[dict]


def _scaled_base(base: int, scale: float) -> int:
    return max(1, math.ceil(base * scale))


def build_stage_models(config: TrainConfig) -> dict[str, torch.nn.Module]:
    """Construct the networks a stage needs, with seeds derived from config.seed."""
    c = config.num_categories
    disc_base = _scaled_base(config.disc_base_channels, config.width_scale)
    models: dict[str, torch.nn.Module] = {}
    if config.stage in ("sp", "joint"):
        models["sp_gen"] = build_generator(
            sp_config(c, config.width_scale, config.norm), seed=config.seed)
        models["sp_disc"] = build_discriminator(
            DiscriminatorConfig(input_depth=2 * c, base_channels=disc_base, norm=config.norm),
            seed=config.seed + 1)
    if config.stage in ("sg", "joint"):
        models["sg_gen"] = build_generator(
            sg_config(c, config.width_scale, config.norm), seed=config.seed + 2)
        models["sg_disc"] = build_discriminator(
            DiscriminatorConfig(input_depth=c + 6, base_channels=disc_base, norm=config.norm),
            seed=config.seed + 3)
        models["pnet"] = build_perceptual_net(
            seed=config.perceptual_seed, trainable_weights=config.train_perceptual_weights)
    return models


def _model_config_dict(model: torch.nn.Module) -> dict:
    if isinstance(model, Generator):
        return {"kind": "generator", **asdict(model.config)}
    if isinstance(model, MultiScaleDiscriminator):
        return {"kind": "discriminator", **asdict(model.config)}
    if isinstance(model, PerceptualNet):
        return {"kind": "perceptual", "input_size": model.input_size, "source": model.source,
                "trainable_weights": bool(model.layer_weights.requires_grad)}
    raise TypeError(f"unknown model type {type(model)}")


def model_from_config_dict(spec: dict, state: dict) -> torch.nn.Module:
    """Rebuild a network from its stored config and validate weights against it."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "generator":
        for key in ("down_channels", "res_dilations", "up_channels"):
            spec[key] = tuple(spec[key])
        model: torch.nn.Module = Generator(GeneratorConfig(**spec))
    elif kind == "discriminator":
        model = MultiScaleDiscriminator(DiscriminatorConfig(**spec))
    elif kind == "perceptual":
        model = PerceptualNet(**spec)
    else:
        raise CheckpointError(f"unknown model kind {kind!r}")
    try:
        model.load_state_dict({k: torch.as_tensor(v) for k, v in state.items()}, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint weights do not match their config: {e}") from e
    return model


def collate(samples: list[data.Sample], num_categories: int) -> dict[str, torch.Tensor]:
    return {
        "image": torch.stack([s.image for s in samples]),
        "labels": torch.stack([s.labels for s in samples]),
        "mask": torch.stack([s.mask for s in samples]).unsqueeze(1),
        "masked_image": torch.stack([s.masked_image for s in samples]),
        "masked_labels": torch.stack([s.masked_labels for s in samples]),
        "real_onehot": torch.stack([data.one_hot(s.labels, num_categories) for s in samples]),
    }


class _StageRunner:
    """Owns the mutable models/optimizers of one training run."""

    def __init__(self, config: TrainConfig, dataset, out_dir: Optional[Path] = None):
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        torch.manual_seed(config.seed)
        self.models = build_stage_models(config)
        gen_params = []
        disc_params = []
        for name, model in self.models.items():
            if name.endswith("_gen"):
                gen_params += list(model.parameters())
            elif name.endswith("_disc"):
                disc_params += list(model.parameters())
        if config.train_perceptual_weights and "pnet" in self.models:
            gen_params.append(self.models["pnet"].layer_weights)
        self.opt_g = torch.optim.Adam(gen_params, lr=config.lr, betas=config.betas)
        self.opt_d = torch.optim.Adam(disc_params, lr=config.lr, betas=config.betas)
        self.epoch = 0
        self.step = 0
        self.pos_in_epoch = 0
        self.epoch_order: Optional[list[int]] = None

    # -- state capture -----------------------------------------------------

    def snapshot(self) -> TrainState:
        return TrainState(
            config=self.config,
            epoch=self.epoch,
            step=self.step,
            pos_in_epoch=self.pos_in_epoch,
            epoch_order=list(self.epoch_order) if self.epoch_order is not None else None,
            models={name: {"config": _model_config_dict(m),
                           "state": copy.deepcopy(m.state_dict())}
                    for name, m in self.models.items()},
            optimizers={"g": copy.deepcopy(self.opt_g.state_dict()),
                        "d": copy.deepcopy(self.opt_d.state_dict())},
            torch_rng=torch.get_rng_state(),
            data_rng=self.dataset.rng_state() if hasattr(self.dataset, "rng_state") else None,
        )

    def restore(self, state: TrainState) -> None:
        if state.config.stage != self.config.stage:
            raise CheckpointError(
                f"checkpoint stage {state.config.stage!r} != configured {self.config.stage!r}")
        for name, model in self.models.items():
            model.load_state_dict(state.models[name]["state"], strict=True)
        self.opt_g.load_state_dict(state.optimizers["g"])
        self.opt_d.load_state_dict(state.optimizers["d"])
        torch.set_rng_state(state.torch_rng)
        if state.data_rng is not None and hasattr(self.dataset, "set_rng_state"):
            self.dataset.set_rng_state(state.data_rng)
        self.epoch = state.epoch
        self.step = state.step
        self.pos_in_epoch = state.pos_in_epoch
        self.epoch_order = list(state.epoch_order) if state.epoch_order is not None else None

    # -- the loop ----------------------------------------------------------

    def run(self, max_steps: Optional[int] = None, log_sink: Optional[list[str]] = None) -> TrainState:
        config = self.config
        log_file = None
        if self.out_dir is not None:
            log_file = open(self.out_dir / "loss_log.txt", "a")
        try:
            while self.epoch < config.epochs:
                lr = linear_lr(self.epoch, config)
                for group in (*self.opt_g.param_groups, *self.opt_d.param_groups):
                    group["lr"] = lr
                if self.epoch_order is None:
                    self.epoch_order = self._draw_epoch_order()
                    self.pos_in_epoch = 0
                while self.pos_in_epoch < len(self.epoch_order):
                    if max_steps is not None and self.step >= max_steps:
                        final = self.snapshot()
                        if self.out_dir is not None:
                            save_checkpoint(final, self.out_dir / "final.ckpt")
                        return final
                    idxs = self.epoch_order[self.pos_in_epoch:self.pos_in_epoch + config.batch_size]
                    batch = collate([self.dataset[i] for i in idxs], config.num_categories)
                    line = self._train_batch(batch, lr)
                    self.pos_in_epoch += len(idxs)
                    self.step += 1
                    if log_sink is not None:
                        log_sink.append(line)
                    if log_file is not None:
                        log_file.write(line + "\n")
                        log_file.flush()
                self.epoch += 1
                self.epoch_order = None
                self.pos_in_epoch = 0
                if (self.out_dir is not None and config.checkpoint_every
                        and self.epoch % config.checkpoint_every == 0
                        and self.epoch < config.epochs):
                    save_checkpoint(self.snapshot(), self.out_dir / f"epoch_{self.epoch:04d}.ckpt")
            final = self.snapshot()
            if self.out_dir is not None:
                save_checkpoint(final, self.out_dir / "final.ckpt")
            return final
        finally:
            if log_file is not None:
                log_file.close()

    def _draw_epoch_order(self) -> list[int]:
        n = len(self.dataset)
        if n == 0:
            raise ValueError("dataset is empty")
        if getattr(self.dataset, "split", "train") == "train" and hasattr(self.dataset, "rng"):
            return [int(i) for i in self.dataset.rng.permutation(n)]
        return list(range(n))

    def _train_batch(self, batch: dict[str, torch.Tensor], lr: float) -> str:
        config = self.config
        mask = batch["mask"]
        parts: list[tuple[str, object]] = [("step", self.step), ("epoch", self.epoch),
                                           ("stage", config.stage)]

        sp_fake = None
        if config.stage in ("sp", "joint"):
            probs = sp_forward(self.models["sp_gen"], batch["masked_labels"],
                               batch["masked_image"], mask)
            sp_fake = composite(probs, batch["real_onehot"], mask)

        sg_fake = None
        sg_cond = None
        if config.stage in ("sg", "joint"):
            label_cond = sp_fake if config.stage == "joint" else batch["real_onehot"]
            pred = sg_forward(self.models["sg_gen"], batch["masked_image"], label_cond, mask)
            sg_fake = composite(pred, batch["image"], mask)
            sg_cond = torch.cat([batch["masked_image"], label_cond], dim=1)

        # discriminator step
        self.opt_d.zero_grad(set_to_none=True)
        d_terms = {}
        if sp_fake is not None:
            real_preds, _ = self.models["sp_disc"](batch["masked_labels"], batch["real_onehot"])
            fake_preds, _ = self.models["sp_disc"](batch["masked_labels"], sp_fake.detach())
            d_terms["sp"] = adversarial_loss_D(real_preds, fake_preds)
        if sg_fake is not None:
            cond = sg_cond.detach()
            real_preds, _ = self.models["sg_disc"](cond, batch["image"])
            fake_preds, _ = self.models["sg_disc"](cond, sg_fake.detach())
            d_terms["sg"] = adversarial_loss_D(real_preds, fake_preds)
        d_loss = sum(d_terms.values())
        d_loss.backward()
        self.opt_d.step()

        # generator step (against the just-updated discriminators)
        self.opt_g.zero_grad(set_to_none=True)
        g_total = None
        if sp_fake is not None:
            fake_preds, fake_pyrs = self.models["sp_disc"](batch["masked_labels"], sp_fake)
            with torch.no_grad():
                _, real_pyrs = self.models["sp_disc"](batch["masked_labels"], batch["real_onehot"])
            adv = adversarial_loss_G(fake_preds)
            fm = masked_feature_matching_loss(real_pyrs, fake_pyrs, mask)
            total, report = sp_objective(adv, fm, config.weights)
            g_total = total if g_total is None else g_total + total
            prefix = "sp_" if config.stage == "joint" else ""
            parts += [(prefix + "adv", report.adversarial), (prefix + "fm", report.feature_matching),
                      (prefix + "total", report.total)]
        if sg_fake is not None:
            cond = sg_cond.detach() if config.stage == "joint" else sg_cond
            fake_preds, fake_pyrs = self.models["sg_disc"](cond, sg_fake)
            with torch.no_grad():
                _, real_pyrs = self.models["sg_disc"](cond, batch["image"])
            adv = adversarial_loss_G(fake_preds)
            fm = masked_feature_matching_loss(real_pyrs, fake_pyrs, mask)
            pp = perceptual_patch_loss(sg_fake, batch["image"], mask, self.models["pnet"])
            total, report = sg_objective(adv, fm, pp, config.weights)
            g_total = total if g_total is None else g_total + total
            prefix = "sg_" if config.stage == "joint" else ""
            parts += [(prefix + "adv", report.adversarial), (prefix + "fm", report.feature_matching),
                      (prefix + "pp", report.perceptual_patch), (prefix + "total", report.total)]
        g_total.backward()
        self.opt_g.step()
        if config.train_perceptual_weights and "pnet" in self.models:
            self.models["pnet"].project_weights()

        for name, value in d_terms.items():
            key = f"d_{name}" if config.stage == "joint" else "d"
            parts.append((key, float(value.detach())))
        parts.append(("lr", lr))

        values = [float(v) for _, v in parts[3:]]
        if not all(math.isfinite(v) for v in values):
            self._dump_divergence(batch, parts)
            raise TrainingDiverged(
                f"non-finite loss at step {self.step} (epoch {self.epoch}): "
                + " ".join(f"{k}={v!r}" for k, v in parts))
        return " ".join(
            f"{k}={v}" if isinstance(v, (int, str)) else f"{k}={float(v)!r}" for k, v in parts)

    def _dump_divergence(self, batch: dict[str, torch.Tensor], parts) -> None:
        if self.out_dir is None:
            return
        torch.save({"step": self.step, "epoch": self.epoch, "batch": batch,
                    "losses": {k: float(v) for k, v in parts[3:]}},
                   self.out_dir / f"diverged_step_{self.step}.pt")


def initialize_joint_state(config: TrainConfig, dataset,
                           sp_state: Optional[TrainState] = None,
                           sg_state: Optional[TrainState] = None) -> TrainState:
    """Fresh joint-stage state seeded with weights from separate-stage checkpoints."""
    if config.stage != "joint":
        raise ValueError("initialize_joint_state requires a joint-stage config")
    runner = _StageRunner(config, dataset)
    for source in (sp_state, sg_state):
        if source is None:
            continue
        for name, entry in source.models.items():
            if name in runner.models:
                runner.models[name].load_state_dict(entry["state"], strict=True)
    return runner.snapshot()


def train_stage(config: TrainConfig, dataset, resume: Optional[TrainState] = None,
                out_dir: Optional[Path] = None, max_steps: Optional[int] = None,
                log_sink: Optional[list[str]] = None) -> TrainState:
    """Run (or resume) one training stage and return the final state.

    `max_steps` stops after that many global optimizer steps, possibly
    mid-epoch; the returned state resumes exactly where it stopped.
    """
    runner = _StageRunner(config, dataset, out_dir)
    if resume is not None:
        runner.restore(resume)
    return runner.run(max_steps=max_steps, log_sink=log_sink)


# ---------------------------------------------------------------------------
# Checkpoint container: JSON header line + torch payload, digest-verified.

def _config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["weights"] = asdict(config.weights)
    d["betas"] = list(config.betas)
    return d


def _config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["weights"] = LossWeights(**d["weights"])
    d["betas"] = tuple(d["betas"])
    return TrainConfig(**d)


def save_checkpoint(state: TrainState, path: Path) -> None:
    """Atomic, digest-protected write of a training snapshot."""
    payload = {
        "config": _config_to_dict(state.config),
        "epoch": state.epoch,
        "step": state.step,
        "pos_in_epoch": state.pos_in_epoch,
        "epoch_order": state.epoch_order,
        "models": state.models,
        "optimizers": state.optimizers,
        "torch_rng": state.torch_rng,
        "data_rng": state.data_rng,
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    blob = buffer.getvalue()
    header = json.dumps({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "digest": hashlib.sha256(blob).hexdigest(),
        "payload_size": len(blob),
    }).encode() + b"\n"
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(blob)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: Path) -> TrainState:
    """Read, verify and deserialize a checkpoint written by save_checkpoint."""
    with open(path, "rb") as f:
        header_line = f.readline()
        blob = f.read()
    try:
        header = json.loads(header_line)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"not a checkpoint file: {path}") from e
    if not isinstance(header, dict):
        raise CheckpointError(f"not a checkpoint file: {path}")
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointVersionError(f"unknown checkpoint format {header.get('format')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {header.get('version')} != supported {CHECKPOINT_VERSION}")
    if len(blob) != header.get("payload_size"):
        raise CheckpointIntegrityError(f"payload truncated: {len(blob)} bytes")
    digest = hashlib.sha256(blob).hexdigest()
    if digest != header.get("digest"):
        raise CheckpointIntegrityError("payload digest mismatch; file is corrupt")
    payload = torch.load(io.BytesIO(blob), weights_only=False)
    return TrainState(
        config=_config_from_dict(payload["config"]),
        epoch=payload["epoch"],
        step=payload["step"],
        pos_in_epoch=payload["pos_in_epoch"],
        epoch_order=payload["epoch_order"],
        models=payload["models"],
        optimizers=payload["optimizers"],
        torch_rng=payload["torch_rng"],
        data_rng=payload["data_rng"],
    )


def load_model(state: TrainState, name: str) -> torch.nn.Module:
    """Rebuild one named network (e.g. 'sp_gen') from a training snapshot."""
    if name not in state.models:
        raise KeyError(f"checkpoint has no model {name!r}; available: {sorted(state.models)}")
    entry = state.models[name]
    model = model_from_config_dict(entry["config"], entry["state"])
    model.eval()
    return model
