"""Joint optimization of the SDF network, the demography encoder and the
residual latent table.

Per step: two sequences, two frames each, a few thousand samples per
frame. The loss is the mean clamped-L1 between predicted and true signed
distances plus a weighted mean squared norm of the residual latents used
this step. With probability 0.2 a sequence's residual latent is zeroed
for the whole step (samples and regularizer alike), which forces the
network to carry demographic signal through the encoder path.

Batch composition, learning-rate schedule and dropout decisions derive
statelessly from (seed, step), so resuming from a checkpoint reproduces
an uninterrupted run exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import NUM_FRAMES, derive_rng
from .autodiff import (
    AdamState,
    AutodiffError,
    RowwiseAdamState,
    Tape,
    adam_step,
    clamp,
    rowwise_adam_step,
)
from .geometry import NormalizationInfo
from .io.checkpoint import Checkpoint
from .model import ConditionalSdfModel, ModelConfig, init_latent_table


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    delta: float = 0.1                 # loss clamp (unit-sphere units)
    reg_weight: float = 1e-4           # 1/sigma^2 on ||z_r||^2
    lr_net: float = 5e-4
    lr_latent: float = 1e-3
    lr_half_epochs: int = 500          # halve both rates every this many epochs
    epochs: int = 1000
    seqs_per_step: int = 2
    frames_per_step: int = 2
    samples_per_draw: int = 4096       # per (sequence, frame)
    zr_dropout: float = 0.2
    latent_sigma_init: float = 0.01
    zero_demography: bool = False      # ablation: c := 0 everywhere
    checkpoint_every: int = 0          # epochs; 0 = final only
    seed: int = 0

    def validate(self):
        if self.delta <= 0:
            raise TrainingError(f"clamp delta must be positive, got {self.delta}")
        if not 0.0 <= self.zr_dropout <= 1.0:
            raise TrainingError(f"dropout must lie in [0,1], got {self.zr_dropout}")
        for name in ("lr_net", "lr_latent"):
            if getattr(self, name) <= 0:
                raise TrainingError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class SequenceData:
    """One training sequence: demography vector + per-frame sample arrays."""

    demography: np.ndarray                  # (7,) float32
    coords: list                            # per frame (N,4) float32 (p,t)
    dists: list                             # per frame (N,) float32

    @classmethod
    def from_frames(cls, demography_vec, frames) -> "SequenceData":
        return cls(demography=np.asarray(demography_vec, dtype=np.float32),
                   coords=[f.coords() for f in frames],
                   dists=[np.asarray(f.d, dtype=np.float32) for f in frames])


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    reg: list = field(default_factory=list)
    latent_norm_mean: list = field(default_factory=list)
    latent_norm_max: list = field(default_factory=list)
    wall_seconds: list = field(default_factory=list)

    def add(self, epoch, l1, reg, lnorm_mean, lnorm_max, wall):
        self.epochs.append(epoch)
        self.l1.append(l1)
        self.reg.append(reg)
        self.latent_norm_mean.append(lnorm_mean)
        self.latent_norm_max.append(lnorm_max)
        self.wall_seconds.append(wall)

    def to_csv(self) -> str:
        lines = ["epoch,l1,reg,latent_norm_mean,latent_norm_max,wall_seconds"]
        for row in zip(self.epochs, self.l1, self.reg, self.latent_norm_mean,
                       self.latent_norm_max, self.wall_seconds):
            lines.append(",".join(f"{v:.8g}" if isinstance(v, float) else str(v)
                                  for v in row))
        return "\n".join(lines) + "\n"


def clamped_l1(pred, true, delta: float):
    """|clamp(pred, delta) - clamp(true, delta)|, elementwise."""
    return np.abs(clamp(np.asarray(pred), delta) - clamp(np.asarray(true), delta))


def apply_latent_dropout(z_r: np.ndarray, step_rng: np.random.Generator,
                         p: float = 0.2) -> np.ndarray:
    """Whole-latent dropout: with probability p the entire z_r becomes the
    zero vector for this step, so neither the network input nor the
    regularizer sees (or grads) the row."""
    if not 0.0 <= p <= 1.0:
        raise TrainingError(f"dropout probability must lie in [0,1], got {p}")
    if step_rng.random() < p:
        return np.zeros_like(z_r)
    return z_r


class Trainer:
    """Owns model, latent table and optimizer state across steps."""

    def __init__(self, dataset: list[SequenceData], config: TrainConfig,
                 model_config: ModelConfig | None = None,
                 norm_info: NormalizationInfo | None = None,
                 model: ConditionalSdfModel | None = None,
                 latent_table: np.ndarray | None = None,
                 start_step: int = 0):
        config.validate()
        if not dataset:
            raise TrainingError("empty dataset")
        for i, seq in enumerate(dataset):
            if len(seq.coords) != NUM_FRAMES:
                raise TrainingError(
                    f"sequence {i} has {len(seq.coords)} frames, expected {NUM_FRAMES}")
        self.dataset = dataset
        self.config = config
        self.model_config = model_config or ModelConfig()
        self.norm_info = norm_info
        self.model = model or ConditionalSdfModel(self.model_config, seed=config.seed)
        if latent_table is None:
            latent_table = init_latent_table(
                len(dataset), sigma=config.latent_sigma_init, seed=config.seed,
                latent_dim=self.model_config.latent_dim)
        if len(latent_table) != len(dataset):
            raise TrainingError(
                f"latent table has {len(latent_table)} rows but dataset has "
                f"{len(dataset)} sequences")
        self.latent_table = latent_table
        self.params = self.model.parameters()
        self.net_adam = AdamState(lr=config.lr_net)
        self.latent_adam = RowwiseAdamState.for_table(latent_table,
                                                      lr=config.lr_latent)
        self.global_step = start_step
        self.steps_per_epoch = max(1, int(np.ceil(
            len(dataset) / config.seqs_per_step)))

    # -- scheduling ------------------------------------------------------------

    def epoch_of(self, step: int) -> int:
        return step // self.steps_per_epoch

    def lr_factor(self, step: int) -> float:
        return 0.5 ** (self.epoch_of(step) // self.config.lr_half_epochs)

    def _step_sequences(self, step: int) -> np.ndarray:
        epoch = self.epoch_of(step)
        perm = derive_rng(self.config.seed, "epoch-perm", epoch).permutation(
            len(self.dataset))
        k = step - epoch * self.steps_per_epoch
        c = self.config.seqs_per_step
        chosen = perm[k * c:(k + 1) * c]
        if len(chosen) == 0:
            chosen = perm[:c]
        return chosen

    # -- the optimization step -----------------------------------------------------

    def training_step(self, step: int | None = None) -> dict:
        cfg = self.config
        step = self.global_step if step is None else step
        rng = derive_rng(cfg.seed, "step", step)
        seq_ids = self._step_sequences(step)
        n_seq = len(seq_ids)

        # assemble the batch: per sequence/frame sample draws + slot bookkeeping
        coords_blocks, dist_blocks, slot_of_sample = [], [], []
        for slot, sid in enumerate(seq_ids):
            seq = self.dataset[sid]
            frames = rng.choice(NUM_FRAMES, size=cfg.frames_per_step, replace=False)
            for f in frames:
                pool = len(seq.coords[f])
                take = min(cfg.samples_per_draw, pool)
                sel = rng.choice(pool, size=take, replace=False)
                coords_blocks.append(seq.coords[f][sel])
                dist_blocks.append(seq.dists[f][sel])
                slot_of_sample.append(np.full(take, slot, dtype=np.int64))
        coords = np.concatenate(coords_blocks)
        dists = np.concatenate(dist_blocks)
        slots = np.concatenate(slot_of_sample)

        # per-sequence dropout decision (shared by all its samples this step)
        keep = np.empty(n_seq, dtype=np.float32)
        for i, sid in enumerate(seq_ids):
            row = self.latent_table[sid]
            keep[i] = 1.0 if apply_latent_dropout(row, rng, cfg.zr_dropout) is row \
                else 0.0

        demog = np.stack([self.dataset[sid].demography for sid in seq_ids])
        if cfg.zero_demography:
            demog = np.zeros_like(demog)

        tape = Tape()
        zc_slots = self.model.encoder_tape(tape, demog)            # (n_seq, 64)
        table_rows = tape.leaf(self.latent_table[seq_ids], trainable=True)
        keep_col = tape.constant(np.repeat(keep[:, None],
                                           self.model_config.latent_dim, axis=1))
        zr_slots = tape.mul(table_rows, keep_col)                  # dropout
        zc = tape.gather_rows(zc_slots, slots)
        zr = tape.gather_rows(zr_slots, slots)
        pred = self.model.forward_tape(tape, zc, zr, coords)

        target = tape.constant(dists[:, None])
        l1 = tape.mean(tape.abs(tape.sub(tape.clamp(pred, cfg.delta),
                                         tape.clamp(target, cfg.delta))))
        # (1/sigma^2) * mean over distinct sequences of ||z_r||^2, taken on
        # the post-dropout rows so a dropped row contributes nothing
        reg = tape.scale(tape.sum(tape.square(zr_slots)),
                         cfg.reg_weight / n_seq)
        loss = tape.add(l1, reg)

        if not np.isfinite(loss.data):
            raise TrainingError(
                f"non-finite loss at step {step}; step aborted")
        grads = tape.backward(loss)

        lr_f = self.lr_factor(step)
        adam_step(self.net_adam, self.params, grads, lr=self.config.lr_net * lr_f)
        row_grads = table_rows.grad
        if row_grads is not None:
            live = keep > 0
            if np.any(live):
                rowwise_adam_step(self.latent_adam, self.latent_table,
                                  seq_ids[live], row_grads[live],
                                  lr=self.config.lr_latent * lr_f)
        self.global_step = step + 1
        return {"step": step, "l1": float(l1.data), "reg": float(reg.data),
                "loss": float(loss.data), "n_samples": len(coords)}

    # -- the full fit ------------------------------------------------------------------

    def fit(self, on_epoch=None, checkpoint_path=None) -> tuple[Checkpoint, TrainReport]:
        cfg = self.config
        report = TrainReport()
        t_start = time.time()
        start_epoch = self.epoch_of(self.global_step)
        for epoch in range(start_epoch, cfg.epochs):
            l1s, regs = [], []
            for _ in range(self.steps_per_epoch):
                stats = self.training_step()
                l1s.append(stats["l1"])
                regs.append(stats["reg"])
            norms = np.linalg.norm(self.latent_table, axis=1)
            report.add(epoch, float(np.mean(l1s)), float(np.mean(regs)),
                       float(norms.mean()), float(norms.max()),
                       time.time() - t_start)
            if on_epoch is not None:
                on_epoch(epoch, report)
            if (checkpoint_path is not None and cfg.checkpoint_every
                    and (epoch + 1) % cfg.checkpoint_every == 0):
                from .io.checkpoint import save_checkpoint
                save_checkpoint(checkpoint_path, self.to_checkpoint())
        return self.to_checkpoint(), report

    # -- checkpoint bridge ---------------------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        ck = Checkpoint(meta={
            "model_config": self.model_config.to_dict(),
            "train_config": self.config.to_dict(),
            "seed": self.config.seed,
            "step": self.global_step,
            "n_sequences": len(self.dataset),
        })
        if self.norm_info is not None:
            ck.tensors["norm.center"] = np.asarray(self.norm_info.center,
                                                   dtype=np.float64)
            ck.tensors["norm.scale"] = np.array([self.norm_info.scale],
                                                dtype=np.float64)
        for name in sorted(self.params):
            ck.tensors[name] = self.params[name].data
        ck.tensors["latent_table"] = self.latent_table
        ck.tensors["adam.latent.m"] = self.latent_adam.m
        ck.tensors["adam.latent.v"] = self.latent_adam.v
        ck.tensors["adam.latent.steps"] = self.latent_adam.steps
        for name in sorted(self.net_adam.m):
            ck.tensors[f"adam.m.{name}"] = self.net_adam.m[name]
            ck.tensors[f"adam.v.{name}"] = self.net_adam.v[name]
        ck.meta["adam_step"] = self.net_adam.step
        return ck

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint, dataset: list[SequenceData]
                        ) -> "Trainer":
        from .autodiff import Parameter
        model_config = ModelConfig.from_dict(ck.meta["model_config"])
        config = TrainConfig.from_dict(ck.meta["train_config"])
        params = {name: Parameter(name, arr)
                  for name, arr in ck.tensors.items()
                  if name.startswith(("g.", "f."))}
        model = ConditionalSdfModel(model_config, params=params)
        norm_info = checkpoint_norm_info(ck)
        trainer = cls(dataset, config, model_config, norm_info=norm_info,
                      model=model,
                      latent_table=ck.require("latent_table").copy(),
                      start_step=int(ck.meta["step"]))
        trainer.latent_adam.m = ck.require("adam.latent.m").copy()
        trainer.latent_adam.v = ck.require("adam.latent.v").copy()
        trainer.latent_adam.steps = ck.require("adam.latent.steps").copy()
        trainer.net_adam.step = int(ck.meta.get("adam_step", 0))
        for name in trainer.params:
            mkey, vkey = f"adam.m.{name}", f"adam.v.{name}"
            if mkey in ck.tensors:
                trainer.net_adam.m[name] = ck.tensors[mkey].copy()
                trainer.net_adam.v[name] = ck.tensors[vkey].copy()
        return trainer


def checkpoint_norm_info(ck: Checkpoint) -> NormalizationInfo | None:
    if "norm.center" not in ck.tensors:
        return None
    return NormalizationInfo(center=ck.tensors["norm.center"],
                             scale=float(ck.tensors["norm.scale"][0]))


def model_from_checkpoint(ck: Checkpoint):
    """(model, latent_table, norm_info) for inference-time use."""
    from .autodiff import Parameter
    model_config = ModelConfig.from_dict(ck.meta["model_config"])
    params = {name: Parameter(name, arr.copy())
              for name, arr in ck.tensors.items()
              if name.startswith(("g.", "f."))}
    model = ConditionalSdfModel(model_config, params=params)
    return model, ck.require("latent_table"), checkpoint_norm_info(ck)


def fit(dataset: list[SequenceData], config: TrainConfig,
        model_config: ModelConfig | None = None,
        norm_info: NormalizationInfo | None = None,
        on_epoch=None, checkpoint_path=None) -> tuple[Checkpoint, TrainReport]:
    """Train from scratch; returns the final checkpoint and the report."""
    trainer = Trainer(dataset, config, model_config, norm_info=norm_info)
    return trainer.fit(on_epoch=on_epoch, checkpoint_path=checkpoint_path)
