"""Training loops for the editing GAN and the evaluation classifier.

One pass over the data performs a critic update on every batch and a
generator update on every n_critic-th batch, so the critic always sees
n_critic updates between consecutive generator updates. The learning rate
starts at `lr` and is divided by `lr_decay_divisor` every
`lr_decay_epochs` epochs; optimizer moments carry across decays.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from PIL import Image

from .checkpoint import load_checkpoint, save_checkpoint
from .data import ATTRIBUTE_NAMES, flip_attribute, iter_batches, to_uint8
from .errors import (
    CheckpointCorruptError,
    ConfigurationError,
    ContractViolation,
    NonFiniteLossError,
)
from .losses import (
    LossWeights,
    adversarial_loss_d,
    adversarial_loss_g,
    classification_loss,
    gradient_penalty,
    reconstruction_loss,
    total_loss_d,
    total_loss_g,
)
from .networks import AttributeClassifier, VariantSpec, build_variant

N_ATTRS = 13


@dataclass
class TrainConfig:
    variant: str = "M0"
    image_size: int = 128
    n_attrs: int = N_ATTRS
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.002
    lr_decay_epochs: int = 33
    lr_decay_divisor: float = 10.0
    beta1: float = 0.5
    beta2: float = 0.999
    n_critic: int = 5
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    split: str = "train+val"
    out_dir: str = "runs/mugan"
    checkpoint_every: int = 1  # epochs; 0 disables periodic checkpoints
    sample_every: int = 1  # epochs; 0 disables sample grids

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.n_critic < 1:
            raise ConfigurationError(f"n_critic must be >= 1, got {self.n_critic}")
        if not self.lr > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if self.lr_decay_epochs < 1:
            raise ConfigurationError(
                f"lr_decay_epochs must be >= 1, got {self.lr_decay_epochs}"
            )
        if not self.lr_decay_divisor >= 1:
            raise ConfigurationError(
                f"lr_decay_divisor must be >= 1, got {self.lr_decay_divisor}"
            )
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        VariantSpec.from_name(self.variant)  # fail fast on bad ids

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config key(s): {', '.join(sorted(extra))}")
        return cls(**d)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """LR for an epoch. Dividing (not multiplying by 0.1**k) keeps the
    decayed values exactly representable."""
    if epoch < 0:
        raise ContractViolation(f"epoch must be >= 0, got {epoch}")
    return config.lr / config.lr_decay_divisor ** (epoch // config.lr_decay_epochs)


class Trainer:
    """Owns the networks, optimizers, RNG streams, and counters for a run.

    `index` and `loader` supply the data (any DatasetIndex plus a callable
    Record -> image tensor). `g_hook`, when given, is called after every
    generator step with the label tensors that step used; tests use it to
    watch the reconstruction conditioning.
    """

    def __init__(self, config: TrainConfig, index=None, loader=None, g_hook=None):
        self.config = config
        self.index = index
        self.loader = loader
        self.g_hook = g_hook
        self.spec = VariantSpec.from_name(config.variant)
        torch.manual_seed(config.seed)
        self.generator, self.discriminator = build_variant(
            self.spec, image_size=config.image_size, n_attrs=config.n_attrs
        )
        betas = (config.beta1, config.beta2)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=config.lr, betas=betas)
        self.opt_d = torch.optim.Adam(
            self.discriminator.parameters(), lr=config.lr, betas=betas
        )
        # one private stream for GP interpolation weights and target-label
        # permutations, so a restored run replays the same draws
        self.noise_rng = torch.Generator()
        self.noise_rng.manual_seed((config.seed + 0x9E3779B9) % (2**63))
        self.epoch = 0
        self.step = 0
        self.g_steps = 0

    # -- single steps -------------------------------------------------

    def _critic(self, x):
        return self.discriminator(x)[0]

    def _finite(self, component, value):
        v = float(value.detach() if isinstance(value, torch.Tensor) else value)
        if not math.isfinite(v):
            raise NonFiniteLossError(self.step, component, v)
        return v

    def train_step_d(self, batch) -> dict:
        """One critic update. Returns {adv_d, cls_d, gp, total_d}."""
        x, a, b = batch.images, batch.source_labels, batch.target_labels
        w = self.config.weights
        with torch.no_grad():
            fake = self.generator(x, b)
        scores_real, logits_real = self.discriminator(x)
        scores_fake, _ = self.discriminator(fake)
        adv = adversarial_loss_d(scores_real, scores_fake)
        cls = classification_loss(logits_real, a)
        if w.gp > 0:
            gp = gradient_penalty(self._critic, x, fake, rng=self.noise_rng)
        else:
            gp = torch.zeros((), dtype=x.dtype)
        total = total_loss_d(adv, cls, gp, w)
        metrics = {
            "adv_d": self._finite("adv_d", adv),
            "cls_d": self._finite("cls_d", cls),
            "gp": self._finite("gp", gp),
            "total_d": self._finite("total_d", total),
        }
        self.opt_d.zero_grad(set_to_none=True)
        total.backward()
        self.opt_d.step()
        self.step += 1
        return metrics

    def train_step_g(self, batch) -> dict:
        """One generator update. Returns {adv_g, cls_g, rec, total_g}."""
        x, a, b = batch.images, batch.source_labels, batch.target_labels
        w = self.config.weights
        fake = self.generator(x, b)
        scores_fake, logits_fake = self.discriminator(fake)
        adv = adversarial_loss_g(scores_fake)
        cls = classification_loss(logits_fake, b)
        rec_labels = a
        x_rec = self.generator(x, rec_labels)
        rec = reconstruction_loss(x, x_rec)
        total = total_loss_g(adv, cls, rec, w)
        metrics = {
            "adv_g": self._finite("adv_g", adv),
            "cls_g": self._finite("cls_g", cls),
            "rec": self._finite("rec", rec),
            "total_g": self._finite("total_g", total),
        }
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()
        self.g_steps += 1
        if self.g_hook is not None:
            self.g_hook(
                {
                    "step": self.step,
                    "source_labels": a.detach().clone(),
                    "target_labels": b.detach().clone(),
                    "rec_labels": rec_labels.detach().clone(),
                }
            )
        return metrics

    # -- full runs ----------------------------------------------------

    def _set_lr(self, lr):
        for opt in (self.opt_d, self.opt_g):
            for group in opt.param_groups:
                group["lr"] = lr

    def _log_line(self, fh, phase, epoch, lr, metrics):
        vals = "\t".join(f"{k}={v:.10g}" for k, v in metrics.items())
        fh.write(f"{self.step}\t{epoch}\t{phase}\t{lr:.10g}\t{vals}\n")
        fh.flush()

    def run(self, log=None) -> list:
        """Train until config.epochs, returning per-epoch summaries.

        `log`, when given, receives one progress string per epoch.
        """
        if self.index is None or self.loader is None:
            raise ConfigurationError("trainer was built without a dataset")
        cfg = self.config
        os.makedirs(cfg.out_dir, exist_ok=True)
        metrics_path = os.path.join(cfg.out_dir, "metrics.tsv")
        new_log = not os.path.exists(metrics_path)
        history = []
        with open(metrics_path, "a", encoding="utf-8") as fh:
            if new_log:
                fh.write("step\tepoch\tphase\tlr\tmetrics\n")
            while self.epoch < cfg.epochs:
                e = self.epoch
                lr = learning_rate(cfg, e)
                self._set_lr(lr)
                rec_sum, rec_n = 0.0, 0
                batches = iter_batches(
                    self.index,
                    cfg.split,
                    cfg.batch_size,
                    self.loader,
                    seed=cfg.seed,
                    epoch=e,
                    rng=self.noise_rng,
                )
                for i, batch in enumerate(batches):
                    md = self.train_step_d(batch)
                    self._log_line(fh, "d", e, lr, md)
                    if (i + 1) % cfg.n_critic == 0:
                        mg = self.train_step_g(batch)
                        self._log_line(fh, "g", e, lr, mg)
                        rec_sum += mg["rec"]
                        rec_n += 1
                self.epoch += 1
                epoch_rec = rec_sum / rec_n if rec_n else float("nan")
                history.append({"epoch": e, "lr": lr, "rec": epoch_rec})
                if log is not None:
                    log(
                        f"epoch {e}: lr {lr:g}, mean rec {epoch_rec:.4f}, "
                        f"{self.step} critic steps total"
                    )
                if cfg.sample_every and self.epoch % cfg.sample_every == 0:
                    self.save_samples(os.path.join(cfg.out_dir, f"samples_{self.epoch:04d}.png"))
                if cfg.checkpoint_every and self.epoch % cfg.checkpoint_every == 0:
                    self.save(os.path.join(cfg.out_dir, f"epoch_{self.epoch:04d}.ckpt"))
        final_path = os.path.join(cfg.out_dir, "final.ckpt")
        self.save(final_path)
        return history

    @torch.no_grad()
    def save_samples(self, path, n_images=4):
        """Grid PNG: each row is source, reconstruction, then single-attribute flips."""
        records = self.index.split(self.config.split)[:n_images]
        if not records:
            return
        self.generator.eval()
        x = torch.stack([self.loader(r) for r in records])
        a = torch.tensor([r.labels for r in records], dtype=torch.float32)
        cols = [x, self.generator(x, a)]
        for k in range(self.config.n_attrs):
            cols.append(self.generator(x, flip_attribute(a, k)))
        self.generator.train()
        size = x.shape[-1]
        grid = np.zeros((len(records) * size, len(cols) * size, 3), dtype=np.uint8)
        for r in range(len(records)):
            for c, col in enumerate(cols):
                grid[r * size : (r + 1) * size, c * size : (c + 1) * size] = to_uint8(col[r])
        Image.fromarray(grid).save(path)

    # -- persistence --------------------------------------------------

    def state_payload(self) -> dict:
        return {
            "kind": "gan",
            "config": self.config.to_dict(),
            "variant": self.spec.to_dict(),
            "epoch": self.epoch,
            "step": self.step,
            "g_steps": self.g_steps,
            "generator": self.generator.state_dict(),
            "discriminator": self.discriminator.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "noise_rng": self.noise_rng.get_state(),
            "torch_rng": torch.get_rng_state(),
        }

    def save(self, path) -> str:
        save_checkpoint(self.state_payload(), path)
        return str(path)

    def load_payload(self, payload: dict):
        if payload.get("kind") != "gan":
            raise CheckpointCorruptError(
                f"expected a gan checkpoint, found kind {payload.get('kind')!r}"
            )
        ckpt_spec = VariantSpec.from_dict(payload["variant"])
        if ckpt_spec != self.spec:
            raise ConfigurationError(
                f"checkpoint holds variant {ckpt_spec.name} "
                f"({ckpt_spec.to_dict()}), trainer was built for {self.spec.name}"
            )
        missing = {
            "generator",
            "discriminator",
            "opt_g",
            "opt_d",
            "epoch",
            "step",
        } - set(payload)
        if missing:
            raise CheckpointCorruptError(
                f"checkpoint lacks field(s): {', '.join(sorted(missing))}"
            )
        self.generator.load_state_dict(payload["generator"])
        self.discriminator.load_state_dict(payload["discriminator"])
        self.opt_g.load_state_dict(payload["opt_g"])
        self.opt_d.load_state_dict(payload["opt_d"])
        self.epoch = int(payload["epoch"])
        self.step = int(payload["step"])
        self.g_steps = int(payload.get("g_steps", 0))
        if "noise_rng" in payload:
            self.noise_rng.set_state(payload["noise_rng"].to(torch.uint8))
        if "torch_rng" in payload:
            torch.set_rng_state(payload["torch_rng"].to(torch.uint8))

    @classmethod
    def from_checkpoint(cls, path, index=None, loader=None, g_hook=None) -> "Trainer":
        payload = load_checkpoint(path)
        if payload.get("kind") != "gan":
            raise CheckpointCorruptError(
                f"expected a gan checkpoint, found kind {payload.get('kind')!r}"
            )
        config = TrainConfig.from_dict(payload["config"])
        trainer = cls(config, index=index, loader=loader, g_hook=g_hook)
        trainer.load_payload(payload)
        return trainer


def load_generator(path, strict_kind=True):
    """Rebuild just the generator from a gan checkpoint, in eval mode."""
    payload = load_checkpoint(path)
    if payload.get("kind") != "gan" and strict_kind:
        raise CheckpointCorruptError(
            f"expected a gan checkpoint, found kind {payload.get('kind')!r}"
        )
    spec = VariantSpec.from_dict(payload["variant"])
    config = TrainConfig.from_dict(payload["config"])
    gen, _ = build_variant(spec, image_size=config.image_size, n_attrs=config.n_attrs)
    gen.load_state_dict(payload["generator"])
    gen.eval()
    return gen, config


# -- evaluation classifier -------------------------------------------


@dataclass
class ClassifierConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    split: str = "train"
    n_attrs: int = N_ATTRS

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")


def train_classifier(config: ClassifierConfig, index, loader, log=None) -> AttributeClassifier:
    """Fit the attribute classifier with plain BCE; returns it in eval mode."""
    torch.manual_seed(config.seed)
    model = AttributeClassifier(n_attrs=config.n_attrs)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    bce = torch.nn.BCEWithLogitsLoss()
    model.train()
    for epoch in range(config.epochs):
        running, n = 0.0, 0
        for batch in iter_batches(
            index, config.split, config.batch_size, loader, seed=config.seed, epoch=epoch
        ):
            logits = model(batch.images)
            loss = bce(logits, batch.source_labels)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise NonFiniteLossError(epoch, "classifier_bce", value)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            running += value
            n += 1
        if log is not None:
            log(f"classifier epoch {epoch}: bce {running / max(n, 1):.4f}")
    model.eval()
    return model


@torch.no_grad()
def classifier_accuracy(model, index, split, loader, batch_size=32):
    """Per-attribute label accuracy of the classifier on a split."""
    records = index.split(split)
    if not records:
        raise ContractViolation(f"split {split!r} is empty")
    model.eval()
    correct = torch.zeros(model.n_attrs)
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        x = torch.stack([loader(r) for r in chunk])
        labels = torch.tensor([r.labels for r in chunk], dtype=torch.float32)
        pred = (torch.sigmoid(model(x)) > 0.5).float()
        correct += (pred == labels).float().sum(dim=0)
    acc = correct / len(records)
    per_attr = {ATTRIBUTE_NAMES[i]: float(acc[i]) for i in range(model.n_attrs)}
    return per_attr, float(acc.mean())


def save_classifier(model: AttributeClassifier, path, config: ClassifierConfig = None):
    payload = {
        "kind": "classifier",
        "n_attrs": model.n_attrs,
        "model": model.state_dict(),
        "config": asdict(config) if config is not None else None,
    }
    save_checkpoint(payload, path)
    return str(path)


def load_classifier(path) -> AttributeClassifier:
    payload = load_checkpoint(path)
    if payload.get("kind") != "classifier":
        raise CheckpointCorruptError(
            f"expected a classifier checkpoint, found kind {payload.get('kind')!r}"
        )
    model = AttributeClassifier(n_attrs=int(payload["n_attrs"]))
    model.load_state_dict(payload["model"])
    model.eval()
    return model
