"""The conditional auto-decoder.

A demography encoder maps the 7-dim condition vector to a 64-dim latent
z_c; a residual 64-dim latent z_r is optimized per sequence (no encoder).
The SDF network consumes z_c + z_r + (p,t) = 132 inputs through 8 relu
layers of width 512 with the full input re-concatenated at layer 4, and a
tanh output scaled slightly above the training clamp so the whole clamp
band is expressible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import derive_rng
from .autodiff import (
    AutodiffError,
    Layer,
    Parameter,
    Tape,
    init_layer,
    mlp_infer,
)
from .geometry import NormalizationInfo, TriMesh, denormalize_mesh, marching_cubes
from .synthdata import Demography

DEMOG_DIM = 7
LATENT_DIM = 64
LATENT_INIT_SIGMA = 0.01
EXTRACTION_RESOLUTION = 128


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    latent_dim: int = LATENT_DIM
    encoder_hidden: tuple = (128, 128)
    sdf_depth: int = 8          # hidden layers
    sdf_width: int = 512
    sdf_skip: int = 4           # input re-concatenated entering this hidden layer
    delta_out: float = 0.15     # tanh output scale

    @property
    def input_dim(self) -> int:
        return 2 * self.latent_dim + 4

    def validate(self):
        if not 0 < self.sdf_skip < self.sdf_depth:
            raise ModelError(f"skip layer {self.sdf_skip} outside 1..{self.sdf_depth - 1}")
        if self.sdf_width <= self.input_dim:
            raise ModelError(
                f"width {self.sdf_width} must exceed input dim {self.input_dim}")

    def to_dict(self) -> dict:
        return {"latent_dim": self.latent_dim,
                "encoder_hidden": list(self.encoder_hidden),
                "sdf_depth": self.sdf_depth, "sdf_width": self.sdf_width,
                "sdf_skip": self.sdf_skip, "delta_out": self.delta_out}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(latent_dim=int(d["latent_dim"]),
                   encoder_hidden=tuple(d["encoder_hidden"]),
                   sdf_depth=int(d["sdf_depth"]), sdf_width=int(d["sdf_width"]),
                   sdf_skip=int(d["sdf_skip"]), delta_out=float(d["delta_out"]))


class ConditionalSdfModel:
    """Encoder g + SDF network f with named float32 parameters."""

    def __init__(self, config: ModelConfig, seed: int = 0, params=None):
        config.validate()
        self.config = config
        if params is not None:
            self.encoder_layers, self.sdf_layers = self._layers_from(params)
        else:
            rng = derive_rng(seed, "model-init")
            self.encoder_layers = self._init_encoder(rng)
            self.sdf_layers = self._init_sdf(rng)

    # -- construction -------------------------------------------------------

    def _init_encoder(self, rng) -> list[Layer]:
        dims = [DEMOG_DIM, *self.config.encoder_hidden, self.config.latent_dim]
        acts = ["relu"] * len(self.config.encoder_hidden) + ["identity"]
        return [init_layer(f"g.{i}", dims[i], dims[i + 1], acts[i], rng)
                for i in range(len(dims) - 1)]

    def _init_sdf(self, rng) -> list[Layer]:
        cfg = self.config
        in_dim, width = cfg.input_dim, cfg.sdf_width
        layers = []
        for i in range(cfg.sdf_depth):
            fan_in = in_dim if i == 0 else width
            fan_out = width - in_dim if i == cfg.sdf_skip - 1 else width
            layers.append(init_layer(f"f.{i}", fan_in, fan_out, "relu", rng))
        layers.append(init_layer(f"f.{cfg.sdf_depth}", width, 1, "tanh", rng))
        return layers

    def _layers_from(self, params: dict):
        def layer(prefix, i, act):
            return Layer(params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"], act)

        n_enc = len(self.config.encoder_hidden) + 1
        enc = [layer("g", i, "relu" if i < n_enc - 1 else "identity")
               for i in range(n_enc)]
        n_sdf = self.config.sdf_depth + 1
        sdf = [layer("f", i, "relu" if i < n_sdf - 1 else "tanh")
               for i in range(n_sdf)]
        return enc, sdf

    def parameters(self) -> dict[str, Parameter]:
        out = {}
        for layer in self.encoder_layers + self.sdf_layers:
            out[layer.weight.name] = layer.weight
            out[layer.bias.name] = layer.bias
        return out

    # -- demography encoder --------------------------------------------------

    def embed_demography(self, demography) -> np.ndarray:
        """z_c = g(c) for one Demography or one validated 7-vector."""
        c = self._demography_matrix([demography])
        return mlp_infer(self.encoder_layers, c)[0]

    def _demography_matrix(self, demographies) -> np.ndarray:
        rows = []
        for d in demographies:
            if isinstance(d, Demography):
                rows.append(d.vector())
            else:
                rows.append(Demography.from_vector(d).vector())
        return np.stack(rows).astype(np.float32)

    def embed_demography_raw(self, c_matrix: np.ndarray) -> np.ndarray:
        """Encoder on raw rows (used for the zero-demography ablation)."""
        c_matrix = np.asarray(c_matrix, dtype=np.float32)
        if c_matrix.ndim != 2 or c_matrix.shape[1] != DEMOG_DIM:
            raise ModelError(f"demography matrix must be (n,{DEMOG_DIM})")
        return mlp_infer(self.encoder_layers, c_matrix)

    # -- SDF network ----------------------------------------------------------

    def _check_latents(self, z_c, z_r):
        z_c = np.asarray(z_c, dtype=np.float32).reshape(-1)
        z_r = np.asarray(z_r, dtype=np.float32).reshape(-1)
        if len(z_c) != self.config.latent_dim or len(z_r) != self.config.latent_dim:
            raise ModelError(
                f"latents must have dim {self.config.latent_dim}, got "
                f"{len(z_c)} and {len(z_r)}")
        return z_c, z_r

    def predict_sdf(self, z_c, z_r, coords: np.ndarray,
                    chunk: int = 8192) -> np.ndarray:
        """d_hat for (p,t) rows under one fixed latent pair; batched, pure."""
        z_c, z_r = self._check_latents(z_c, z_r)
        coords = np.asarray(coords, dtype=np.float32)
        if coords.ndim != 2 or coords.shape[1] != 4:
            raise ModelError(f"coords must be (n,4) rows of (p,t), got {coords.shape}")
        evaluate = self.point_evaluator(z_c, z_r)
        out = np.empty(len(coords), dtype=np.float32)
        for s in range(0, len(coords), chunk):
            out[s:s + chunk] = evaluate(coords[s:s + chunk])
        return out

    def point_evaluator(self, z_c, z_r):
        """Fast per-chunk forward with the latent's layer contributions
        folded into per-layer offsets (the latents are constant per call)."""
        cfg = self.config
        z_c, z_r = self._check_latents(z_c, z_r)
        z = np.concatenate([z_c, z_r])
        nz = len(z)
        w0 = self.sdf_layers[0].weight.data
        off0 = z @ w0[:nz] + self.sdf_layers[0].bias.data        # (width0,)
        coord_w0 = np.ascontiguousarray(w0[nz:])                 # (4, width0)
        skip = cfg.sdf_skip
        ws = self.sdf_layers[skip].weight.data
        n_h = ws.shape[0] - cfg.input_dim
        skip_h = np.ascontiguousarray(ws[:n_h])
        off_s = z @ ws[n_h:n_h + nz] + self.sdf_layers[skip].bias.data
        coord_ws = np.ascontiguousarray(ws[n_h + nz:])

        def evaluate(block: np.ndarray) -> np.ndarray:
            h = block @ coord_w0
            h += off0
            np.maximum(h, np.float32(0), out=h)
            for i, layer in enumerate(self.sdf_layers[1:-1], start=1):
                if i == skip:
                    h = h @ skip_h
                    h += block @ coord_ws
                    h += off_s
                else:
                    h = h @ layer.weight.data
                    h += layer.bias.data
                np.maximum(h, np.float32(0), out=h)
            last = self.sdf_layers[-1]
            out = h @ last.weight.data
            out += last.bias.data
            np.tanh(out, out=out)
            out *= np.float32(cfg.delta_out)
            return out[:, 0]

        return evaluate

    def forward_tape(self, tape: Tape, zc_node, zr_node, coords: np.ndarray,
                     train_params: bool = True):
        """Training-path forward: latent rows are tape nodes per sample row.

        train_params=False locks the network weights (test-time latent
        optimization): they enter as constants, receive no gradients and
        skip their gradient GEMMs.
        """
        def wrap(p):
            return tape.param(p) if train_params else tape.constant(p.data)

        coords_node = tape.leaf(coords)
        x = tape.concat_cols(tape.concat_cols(zc_node, zr_node), coords_node)
        cfg = self.config
        h = x
        for i, layer in enumerate(self.sdf_layers[:-1]):
            if i == cfg.sdf_skip:
                h = tape.concat_cols(h, x)
            h = tape.relu(tape.add_bias(tape.matmul(h, wrap(layer.weight)),
                                        wrap(layer.bias)))
        last = self.sdf_layers[-1]
        out = tape.tanh(tape.add_bias(tape.matmul(h, wrap(last.weight)),
                                      wrap(last.bias)))
        return tape.scale(out, cfg.delta_out)

    def encoder_tape(self, tape: Tape, c_matrix: np.ndarray,
                     train_params: bool = True):
        from .autodiff import mlp_forward
        if not train_params:
            frozen = [Layer(weight=l.weight, bias=l.bias, activation=l.activation)
                      for l in self.encoder_layers]
            h = tape.leaf(c_matrix)
            for layer in frozen:
                h = tape.add_bias(tape.matmul(h, tape.constant(layer.weight.data)),
                                  tape.constant(layer.bias.data))
                if layer.activation == "relu":
                    h = tape.relu(h)
                elif layer.activation == "tanh":
                    h = tape.tanh(h)
            return h
        return mlp_forward(tape, self.encoder_layers, tape.leaf(c_matrix))

    # -- surface extraction ------------------------------------------------------

    def extract_surface(self, z_c, z_r, t: float,
                        norm_info: NormalizationInfo | None = None,
                        resolution: int = EXTRACTION_RESOLUTION,
                        sparse: bool = False) -> TriMesh:
        """Evaluate the SDF on the uniform grid over [-1,1]^3 at phase t,
        polygonize the zero level and (optionally) map back to mm."""
        field = evaluate_sdf_grid(self, z_c, z_r, t, resolution, sparse=sparse)
        mesh = marching_cubes(field)
        if norm_info is not None and not mesh.is_empty:
            mesh = denormalize_mesh(mesh, norm_info)
        return mesh


def _boundary_guard(field: np.ndarray, resolution: int) -> np.ndarray:
    """Force the field positive outside the unit ball.

    Normalization puts every training surface strictly inside the unit
    sphere, so the network is unconstrained out there; stray negative
    extrapolation would otherwise leave open sheets at the grid boundary.
    A well-trained model is unaffected.
    """
    xs = np.linspace(-1.0, 1.0, resolution, dtype=np.float32)
    r2 = (xs[:, None, None] ** 2 + xs[None, :, None] ** 2
          + xs[None, None, :] ** 2)
    floor = np.float32(2.0 / (resolution - 1))
    outside = r2 >= np.float32(1.0)
    field[outside] = np.maximum(field[outside], floor)
    return field


def evaluate_sdf_grid(model: ConditionalSdfModel, z_c, z_r, t: float,
                      resolution: int, sparse: bool = False,
                      boundary_guard: bool = True) -> np.ndarray:
    """The res^3 SDF grid at phase t.

    sparse mode evaluates a stride-2 subgrid, then exactly re-evaluates
    every fine point in (dilated) cells that straddle or approach zero;
    skipped far-field points inherit their nearest evaluated value, which
    preserves sign and therefore the extracted surface.
    """
    field = _evaluate_sdf_grid_raw(model, z_c, z_r, t, resolution, sparse)
    if boundary_guard:
        field = _boundary_guard(field, resolution)
    return field


def _evaluate_sdf_grid_raw(model: ConditionalSdfModel, z_c, z_r, t: float,
                           resolution: int, sparse: bool = False) -> np.ndarray:
    xs = np.linspace(-1.0, 1.0, resolution, dtype=np.float32)
    if not sparse:
        grid = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"),
                        axis=-1).reshape(-1, 3)
        coords = np.concatenate(
            [grid, np.full((len(grid), 1), np.float32(t))], axis=1)
        return model.predict_sdf(z_c, z_r, coords).reshape(
            resolution, resolution, resolution)

    idx = np.unique(np.concatenate([np.arange(0, resolution, 2),
                                    [resolution - 1]]))
    sub = xs[idx]
    g = np.stack(np.meshgrid(sub, sub, sub, indexing="ij"), axis=-1).reshape(-1, 3)
    coords = np.concatenate([g, np.full((len(g), 1), np.float32(t))], axis=1)
    coarse = model.predict_sdf(z_c, z_r, coords).reshape(len(sub), len(sub), len(sub))

    spacing = 2.0 / (resolution - 1)
    band = 3.5 * spacing
    near = np.abs(coarse) < band
    cell = near[:-1, :-1, :-1]
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                cell = cell | near[dx:dx + len(sub) - 1,
                                   dy:dy + len(sub) - 1,
                                   dz:dz + len(sub) - 1]
    sign = coarse > 0
    flip = np.zeros_like(cell)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                flip = flip | (sign[dx:dx + len(sub) - 1,
                                    dy:dy + len(sub) - 1,
                                    dz:dz + len(sub) - 1]
                               != sign[:-1, :-1, :-1])
    refine = cell | flip
    # dilate one coarse cell for safety
    pad = np.pad(refine, 1)
    dil = np.zeros_like(refine)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                dil = dil | pad[1 + dx:1 + dx + refine.shape[0],
                                1 + dy:1 + dy + refine.shape[1],
                                1 + dz:1 + dz + refine.shape[2]]

    # seed the fine grid with nearest coarse values (sign-preserving fill)
    field = np.empty((resolution, resolution, resolution), dtype=np.float32)
    reps = np.diff(idx, append=idx[-1] + 1)
    fill = np.repeat(np.repeat(np.repeat(coarse, reps, axis=0), reps, axis=1),
                     reps, axis=2)
    field[:] = fill[:resolution, :resolution, :resolution]

    cells = np.argwhere(dil)
    if len(cells):
        mask = np.zeros((resolution, resolution, resolution), dtype=bool)
        for ci, cj, ck in cells:
            mask[idx[ci]:idx[ci + 1] + 1,
                 idx[cj]:idx[cj + 1] + 1,
                 idx[ck]:idx[ck + 1] + 1] = True
        pts_idx = np.argwhere(mask)
        pts = xs[pts_idx].astype(np.float32)
        coords = np.concatenate([pts, np.full((len(pts), 1), np.float32(t))], axis=1)
        field[mask] = model.predict_sdf(z_c, z_r, coords)
    return field


def init_latent_table(n: int, sigma: float = LATENT_INIT_SIGMA, seed: int = 0,
                      latent_dim: int = LATENT_DIM) -> np.ndarray:
    """One trainable residual latent row per training sequence, N(0, sigma^2)."""
    if n < 1:
        raise ModelError(f"latent table needs n >= 1 rows, got {n}")
    rng = derive_rng(seed, "latent-table")
    return (rng.standard_normal((n, latent_dim)) * sigma).astype(np.float32)
