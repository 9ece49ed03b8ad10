"""Flat key=value run configuration with section prefixes.

One schema drives parsing, defaults, CLI overrides and the manifest dump.
Unknown keys are refused with the full list of valid ones.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def _bool(s):
    if isinstance(s, bool):
        return s
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


# key -> (type, default, help)
SCHEMA = {
    "synth.n": (int, 80, "cohort size"),
    "synth.train": (int, -1, "training split count (-1 = 80%)"),
    "synth.val": (int, -1, "validation split count (-1 = 5%)"),
    "synth.test": (int, -1, "test split count (-1 = remainder)"),
    "synth.resolution": (int, 96, "generator polygonization grid"),
    "synth.noise_scale": (float, 1.0, "residual individual variation scale"),
    "synth.trend_free": (_bool, False, "remove demographic trends (null control)"),

    "sample.n_uniform": (int, 10_000, "uniform-in-ball samples per frame"),
    "sample.n_near": (int, 100_000, "near-surface samples per frame"),

    "model.depth": (int, 8, "SDF network hidden layers"),
    "model.width": (int, 512, "SDF network hidden width"),
    "model.skip": (int, 4, "hidden layer receiving the input skip"),
    "model.latent_dim": (int, 64, "dimension of z_c and z_r"),
    "model.delta_out": (float, 0.15, "tanh output scale"),

    "train.epochs": (int, 1000, "training epochs"),
    "train.delta": (float, 0.1, "loss clamp width"),
    "train.reg_weight": (float, 1e-4, "latent regularization weight (1/sigma^2)"),
    "train.lr_net": (float, 5e-4, "network + encoder learning rate"),
    "train.lr_latent": (float, 1e-3, "latent table learning rate"),
    "train.lr_half_epochs": (int, 500, "halve learning rates every N epochs"),
    "train.seqs_per_step": (int, 2, "sequences per optimization step"),
    "train.frames_per_step": (int, 2, "frames per sequence per step"),
    "train.samples_per_draw": (int, 4096, "samples per (sequence, frame) draw"),
    "train.zr_dropout": (float, 0.2, "probability of zeroing z_r for a step"),
    "train.latent_sigma_init": (float, 0.01, "latent table init std"),
    "train.zero_demography": (_bool, False, "ablation: zero the condition vector"),
    "train.checkpoint_every": (int, 0, "checkpoint every N epochs (0 = final)"),

    "complete.t_given": (float, 0.0, "phase of the observed frame"),
    "complete.iterations": (int, 600, "test-time optimization iterations"),
    "complete.lr": (float, 5e-3, "latent learning rate"),
    "complete.lr_half_at": (int, 300, "halve the rate at this iteration"),
    "complete.samples_per_iter": (int, 0, "minibatch per iteration (0 = full)"),
    "complete.resolution": (int, 128, "extraction grid resolution"),
    "complete.sparse": (_bool, False, "sparse (banded) grid evaluation"),

    "generate.count": (int, 10, "sequences to generate"),
    "generate.std_scale": (float, 1.0, "latent sampling std multiplier"),
    "generate.resolution": (int, 128, "extraction grid resolution"),
    "generate.sparse": (_bool, False, "sparse (banded) grid evaluation"),

    "eval.metric_samples": (int, 10_000, "surface samples for CD/HD"),
}


def defaults() -> dict:
    return {k: v for k, (_, v, _) in SCHEMA.items()}


def parse_value(key: str, raw) -> object:
    if key not in SCHEMA:
        valid = "\n  ".join(sorted(SCHEMA))
        raise ConfigError(f"unknown config key {key!r}; valid keys:\n  {valid}")
    typ = SCHEMA[key][0]
    try:
        return typ(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {key}: {raw!r} ({e})")


def load_config_file(path) -> dict:
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = parse_value(key.strip(), value.strip())
    return values


def resolve(config_file=None, overrides=()) -> dict:
    """defaults <- config file <- --set overrides."""
    cfg = defaults()
    if config_file:
        cfg.update(load_config_file(config_file))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg[key.strip()] = parse_value(key.strip(), value.strip())
    return cfg
