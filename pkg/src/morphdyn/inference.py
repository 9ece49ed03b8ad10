"""Inference against a trained checkpoint: sequence completion from one
(or more) observed frames, demography-conditioned generation, and
demography manipulation around a fixed residual latent.

Completion locks the network and encoder weights, samples space
coordinates against the observed frame, and optimizes only the residual
latent under the training objective. Generation draws the residual latent
from a zero-mean Gaussian whose per-dimension scale comes from the
trained latent table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import FRAME_PHASES, NUM_FRAMES, derive_rng
from .autodiff import AdamState, Parameter, Tape, adam_step
from .geometry import TriMesh, mesh_volume
from .geometry.sampling import sample_frame
from .io.checkpoint import Checkpoint
from .model import ConditionalSdfModel
from .synthdata import Demography
from .training import model_from_checkpoint


class InferenceError(ValueError):
    pass


@dataclass
class CompletionConfig:
    iterations: int = 600
    lr: float = 5e-3
    lr_half_at: int = 300              # halve the latent rate at this iteration
    reg_weight: float = 1e-4
    delta: float = 0.1
    n_uniform: int = 10_000            # frame sampling toward K = 110k total
    n_near: int = 100_000
    samples_per_iter: int = 0          # 0 = full batch every iteration
    extraction_resolution: int = 128
    sparse_extraction: bool = False
    seed: int = 0

    def validate(self):
        if self.iterations < 0:
            raise InferenceError("iterations must be >= 0")
        if self.lr <= 0 or self.delta <= 0:
            raise InferenceError("lr and delta must be positive")


@dataclass
class GenerationSpec:
    demography: Demography
    count: int = 1
    std_scale: float = 1.0             # scales the empirical latent stds
    seed: int = 0
    extraction_resolution: int = 128
    sparse_extraction: bool = False

    def validate(self):
        if self.count < 1:
            raise InferenceError("count must be >= 1")
        if self.std_scale < 0:
            raise InferenceError("std_scale must be >= 0")


@dataclass
class CompletionResult:
    meshes: list                        # 20 TriMesh in mm
    z_r: np.ndarray
    objective_trace: np.ndarray
    aborted: bool = False


def _snapshot(model: ConditionalSdfModel) -> dict:
    return {k: v.data.copy() for k, v in model.parameters().items()}


def optimize_residual_latent(model: ConditionalSdfModel, z_c: np.ndarray,
                             observations: list, config: CompletionConfig,
                             latent_dim: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Minimize the clamped-L1 + regularizer over z_r only.

    observations: list of (coords (N,4) float32, dists (N,) float32), one
    per given frame; multiple frames sum their losses. The network and
    encoder parameters are never touched.
    """
    z_r = Parameter("z_r", np.zeros((1, latent_dim), dtype=np.float32))
    adam = AdamState(lr=config.lr)
    rng = derive_rng(config.seed, "completion-batches")
    trace = []
    aborted = False
    for it in range(config.iterations):
        tape = Tape()
        zr_row = tape.param(z_r)
        total = None
        for coords, dists in observations:
            if config.samples_per_iter and config.samples_per_iter < len(coords):
                sel = rng.choice(len(coords), size=config.samples_per_iter,
                                 replace=False)
                coords, dists = coords[sel], dists[sel]
            slots = np.zeros(len(coords), dtype=np.int64)
            zc_node = tape.gather_rows(tape.leaf(z_c[None, :]), slots)
            zr_node = tape.gather_rows(zr_row, slots)
            pred = model.forward_tape(tape, zc_node, zr_node, coords,
                                      train_params=False)
            target = tape.constant(dists[:, None])
            l1 = tape.mean(tape.abs(tape.sub(tape.clamp(pred, config.delta),
                                             tape.clamp(target, config.delta))))
            total = l1 if total is None else tape.add(total, l1)
        reg = tape.scale(tape.sum(tape.square(zr_row)), config.reg_weight)
        loss = tape.add(total, reg)
        if not np.isfinite(loss.data):
            aborted = True
            break
        grads = tape.backward(loss)
        lr = config.lr * (0.5 if config.lr_half_at and it >= config.lr_half_at else 1.0)
        adam_step(adam, {"z_r": z_r}, grads, lr=lr)
        trace.append(float(loss.data))
    return z_r.data[0], np.asarray(trace), aborted


def complete_sequence(given, demography: Demography, checkpoint: Checkpoint,
                      config: CompletionConfig | None = None) -> CompletionResult:
    """Recover all 20 frames from one or more observed frames + demography.

    given: (mesh, t_given) or a list of such pairs; meshes must already be
    in the checkpoint's normalized coordinates. Returns meshes in mm.
    """
    config = config or CompletionConfig()
    config.validate()
    model, _, norm_info = model_from_checkpoint(checkpoint)
    if isinstance(given, tuple):
        given = [given]
    if not given:
        raise InferenceError("at least one observed frame is required")
    observations = []
    for k, (mesh, t_given) in enumerate(given):
        if mesh.is_empty:
            raise InferenceError("observed mesh is empty")
        if not any(abs(t_given - p) < 1e-9 for p in FRAME_PHASES):
            raise InferenceError(f"t_given {t_given} is not one of the 20 phases")
        frame = sample_frame(mesh, t_given, derive_rng(config.seed, "completion", k),
                             n_uniform=config.n_uniform, n_near=config.n_near)
        observations.append((frame.coords(), frame.d))

    before = _snapshot(model)
    z_c = model.embed_demography(demography)
    z_r, trace, aborted = optimize_residual_latent(
        model, z_c, observations, config, model.config.latent_dim)
    after = _snapshot(model)
    for k in before:
        if not np.array_equal(before[k], after[k]):
            raise InferenceError(f"completion mutated parameter {k}")

    meshes = []
    if not aborted:
        for t in FRAME_PHASES:
            meshes.append(model.extract_surface(
                z_c, z_r, t, norm_info=norm_info,
                resolution=config.extraction_resolution,
                sparse=config.sparse_extraction))
    return CompletionResult(meshes=meshes, z_r=z_r, objective_trace=trace,
                            aborted=aborted)


def latent_sampling_std(latent_table: np.ndarray) -> np.ndarray:
    """Per-dimension std of the trained residual latents (the Gaussian scale)."""
    return latent_table.std(axis=0)


def generate(spec: GenerationSpec, checkpoint: Checkpoint,
             max_resample: int = 5) -> list:
    """Sample residual latents from the zero-mean Gaussian and extract all
    frames; empty isosurfaces are resampled a bounded number of times."""
    spec.validate()
    model, latent_table, norm_info = model_from_checkpoint(checkpoint)
    stds = latent_sampling_std(latent_table) * spec.std_scale
    z_c = model.embed_demography(spec.demography)
    rng = derive_rng(spec.seed, "generation")
    results = []
    for _ in range(spec.count):
        for attempt in range(max_resample + 1):
            z_r = (rng.standard_normal(model.config.latent_dim) * stds).astype(
                np.float32)
            meshes = [model.extract_surface(z_c, z_r, t, norm_info=norm_info,
                                            resolution=spec.extraction_resolution,
                                            sparse=spec.sparse_extraction)
                      for t in FRAME_PHASES]
            if not any(m.is_empty for m in meshes):
                results.append((meshes, z_r))
                break
        else:
            raise InferenceError(
                f"empty isosurface persisted through {max_resample} resamples")
    return results


def manipulate_demography(z_r: np.ndarray, demographies: list,
                          checkpoint: Checkpoint,
                          extraction_resolution: int = 128,
                          sparse_extraction: bool = False) -> list:
    """One sequence per demography, all sharing the same residual latent."""
    z_r = np.asarray(z_r, dtype=np.float32).reshape(-1)
    model, _, norm_info = model_from_checkpoint(checkpoint)
    if len(z_r) != model.config.latent_dim:
        raise InferenceError(
            f"z_r must have dim {model.config.latent_dim}, got {len(z_r)}")
    sequences = []
    for demography in demographies:
        z_c = model.embed_demography(demography)
        sequences.append([model.extract_surface(
            z_c, z_r, t, norm_info=norm_info, resolution=extraction_resolution,
            sparse=sparse_extraction) for t in FRAME_PHASES])
    return sequences


@dataclass
class VolumeCurve:
    volumes_ml: np.ndarray
    v_max: float
    v_min: float
    fc: float
    cc: float


def reconstruct_volume_curve(meshes: list) -> VolumeCurve:
    """Per-frame volumes in mL plus V_max, FC = (V_max - V_min)/V_max and
    CC = V_max - V_min. Meshes are expected in mm."""
    if len(meshes) != NUM_FRAMES:
        raise InferenceError(f"expected {NUM_FRAMES} frames, got {len(meshes)}")
    vols = np.array([mesh_volume(m) for m in meshes]) / 1000.0
    v_max, v_min = float(vols.max()), float(vols.min())
    return VolumeCurve(volumes_ml=vols, v_max=v_max, v_min=v_min,
                       fc=(v_max - v_min) / v_max, cc=v_max - v_min)
