"""Command-line surface.

    morphdyn synth      --out DIR [--n N] [--seed S]        build a cohort
    morphdyn preprocess --out DIR [--seed S]                align + normalize + sample
    morphdyn train      --out DIR [--seed S]                fit the model
    morphdyn complete   --out DIR [--seq IDS] [--seed S]    sequence completion
    morphdyn generate   --out DIR [--seed S]                conditioned generation
    morphdyn manipulate --out DIR --zr FILE [--seed S]      vary demography, fixed z_r
    morphdyn evaluate   --out DIR                           completion tables + figures
    morphdyn pca        --out DIR                           latent PCA CSV + scatter

All commands share one output root; each writes its artifacts under a
subdirectory with a manifest. Configuration comes from --config (flat
key=value lines) plus repeatable --set key=value overrides; every random
choice derives from the single --seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import FRAME_PHASES, NUM_FRAMES, __version__, derive_rng
from .config import ConfigError, resolve
from .evaluation import (
    EvaluationError,
    completion_table,
    completion_table_csv,
    latent_pca,
    pc_gender_separability,
    pca_csv,
    subgroup_fc,
    subgroup_fc_csv,
)
from .geometry import (
    GeometryError,
    NormalizationInfo,
    center_of_mass_align,
    compute_normalization,
    icp_align,
    normalize_mesh,
    sample_sequence,
)
from .inference import (
    CompletionConfig,
    GenerationSpec,
    InferenceError,
    complete_sequence,
    generate as run_generation,
    manipulate_demography,
    reconstruct_volume_curve,
)
from .io import (
    CheckpointError,
    load_checkpoint,
    load_sample_cache,
    read_obj,
    save_checkpoint,
    save_sample_cache,
    write_obj,
)
from .io.manifest import atomic_write_text, write_manifest
from .io.objio import read_sequence, write_sequence
from .model import ModelConfig
from .synthdata import AGE_GROUP_LABELS, Demography, SynthError, build_cohort
from .training import SequenceData, TrainConfig, Trainer, TrainingError


class UserError(Exception):
    """Bad input or configuration: exit status 1."""


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise UserError(f"missing input {path}; run `morphdyn {producer}` first")
    return path


def _model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(latent_dim=cfg["model.latent_dim"],
                       sdf_depth=cfg["model.depth"],
                       sdf_width=cfg["model.width"],
                       sdf_skip=cfg["model.skip"],
                       delta_out=cfg["model.delta_out"])


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        delta=cfg["train.delta"], reg_weight=cfg["train.reg_weight"],
        lr_net=cfg["train.lr_net"], lr_latent=cfg["train.lr_latent"],
        lr_half_epochs=cfg["train.lr_half_epochs"], epochs=cfg["train.epochs"],
        seqs_per_step=cfg["train.seqs_per_step"],
        frames_per_step=cfg["train.frames_per_step"],
        samples_per_draw=cfg["train.samples_per_draw"],
        zr_dropout=cfg["train.zr_dropout"],
        latent_sigma_init=cfg["train.latent_sigma_init"],
        zero_demography=cfg["train.zero_demography"],
        checkpoint_every=cfg["train.checkpoint_every"], seed=seed)


def _read_cohort_csv(out_root: Path) -> list[dict]:
    path = _require(out_root / "cohort" / "cohort.csv", "synth")
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _member_demography(row: dict) -> Demography:
    return Demography(gender=row["gender"],
                      age_group=AGE_GROUP_LABELS.index(row["age_group"]),
                      sbp=float(row["sbp"]))


def _load_norm(out_root: Path) -> NormalizationInfo:
    path = _require(out_root / "prep" / "norm.json", "preprocess")
    data = json.loads(path.read_text())
    return NormalizationInfo(center=np.array(data["center"]),
                             scale=float(data["scale"]))


# -- commands ---------------------------------------------------------------------

def cmd_synth(args, cfg) -> list[str]:
    out = Path(args.out) / "cohort"
    out.mkdir(parents=True, exist_ok=True)
    n = cfg["synth.n"] if args.n is None else args.n
    splits = None
    if cfg["synth.train"] >= 0:
        splits = (cfg["synth.train"], cfg["synth.val"], cfg["synth.test"])
        if sum(splits) != n:
            raise UserError(f"synth splits {splits} do not sum to n={n}")
    members = build_cohort(n, seed=args.seed, split_counts=splits,
                           noise_scale=cfg["synth.noise_scale"],
                           trend_free=cfg["synth.trend_free"],
                           resolution=cfg["synth.resolution"])
    rows = ["id,gender,age_group,sbp,split"]
    curve_rows = ["id," + ",".join(f"v{k:02d}" for k in range(NUM_FRAMES))]
    artifacts = []
    for m in members:
        meshes = m.meshes(cache=False)
        seq_dir = out / f"seq_{m.index:03d}"
        write_sequence(seq_dir, meshes)
        artifacts.append(str(seq_dir))
        rows.append(f"{m.index},{m.demography.gender},"
                    f"{AGE_GROUP_LABELS[m.demography.age_group]},"
                    f"{m.demography.sbp:.6g},{m.split}")
        vols = m.analytic_volumes() / 1000.0
        curve_rows.append(f"{m.index}," + ",".join(f"{v:.6g}" for v in vols))
        print(f"  seq {m.index:03d} [{m.split}] {m.demography.gender} "
              f"{AGE_GROUP_LABELS[m.demography.age_group]}")
    atomic_write_text(out / "cohort.csv", "\n".join(rows) + "\n")
    atomic_write_text(out / "analytic_volumes.csv", "\n".join(curve_rows) + "\n")
    return artifacts + [str(out / "cohort.csv")]


def cmd_preprocess(args, cfg) -> list[str]:
    out_root = Path(args.out)
    cohort_rows = _read_cohort_csv(out_root)
    prep = out_root / "prep"
    prep.mkdir(parents=True, exist_ok=True)

    train_ids = [int(r["id"]) for r in cohort_rows if r["split"] == "train"]
    if not train_ids:
        raise UserError("cohort has no training split")

    def load_seq(i):
        return read_sequence(out_root / "cohort" / f"seq_{i:03d}")

    # reference: first training sequence, frame 0 centered at the origin
    reference_seq, _ = center_of_mass_align(load_seq(train_ids[0]))
    reference = reference_seq[0]

    aligned = {}
    for row in cohort_rows:
        i = int(row["id"])
        seq, _ = center_of_mass_align(load_seq(i))
        if i != train_ids[0]:
            transform = icp_align(seq[0], reference)
            seq = [transform.apply_mesh(m) for m in seq]
        aligned[i] = seq

    info = compute_normalization([aligned[i] for i in train_ids])
    atomic_write_text(prep / "norm.json", json.dumps(
        {"center": list(info.center), "scale": info.scale}, sort_keys=True) + "\n")

    artifacts = [str(prep / "norm.json")]
    for row in cohort_rows:
        i = int(row["id"])
        normed = [normalize_mesh(m, info) for m in aligned[i]]
        if row["split"] in ("train", "val"):
            frames = sample_sequence(normed, seed=derive_rng(
                args.seed, "sample-seed", i).integers(1 << 31),
                n_uniform=cfg["sample.n_uniform"], n_near=cfg["sample.n_near"])
            cache = prep / f"samples_{i:03d}.msc"
            save_sample_cache(cache, frames)
            artifacts.append(str(cache))
        else:
            seq_dir = prep / f"test_seq_{i:03d}"
            write_sequence(seq_dir, normed)
            artifacts.append(str(seq_dir))
        print(f"  preprocessed seq {i:03d} [{row['split']}]")
    return artifacts


def cmd_train(args, cfg) -> list[str]:
    out_root = Path(args.out)
    cohort_rows = _read_cohort_csv(out_root)
    info = _load_norm(out_root)
    dataset = []
    for row in cohort_rows:
        if row["split"] != "train":
            continue
        i = int(row["id"])
        cache = _require(out_root / "prep" / f"samples_{i:03d}.msc", "preprocess")
        frames = load_sample_cache(cache)
        dataset.append(SequenceData.from_frames(
            _member_demography(row).vector(), frames))
    if not dataset:
        raise UserError("no training sample caches found; run `morphdyn preprocess`")

    model_dir = out_root / "model"
    model_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(dataset, _train_config(cfg, args.seed), _model_config(cfg),
                      norm_info=info)
    total_epochs = trainer.config.epochs

    def on_epoch(epoch, report):
        if (epoch + 1) % max(1, total_epochs // 20) == 0 or epoch == 0:
            print(f"  epoch {epoch + 1}/{total_epochs}: "
                  f"l1={report.l1[-1]:.5f} reg={report.reg[-1]:.3g}")

    ck, report = trainer.fit(on_epoch=on_epoch,
                             checkpoint_path=model_dir / "checkpoint.mdyn")
    save_checkpoint(model_dir / "checkpoint.mdyn", ck)
    atomic_write_text(model_dir / "train_report.csv", report.to_csv())
    from .reporting import save_training_curve
    save_training_curve(model_dir / "train_loss.svg", report)
    return [str(model_dir / "checkpoint.mdyn"),
            str(model_dir / "train_report.csv"),
            str(model_dir / "train_loss.svg")]


def _completion_config(cfg: dict, seed: int) -> CompletionConfig:
    return CompletionConfig(
        iterations=cfg["complete.iterations"], lr=cfg["complete.lr"],
        lr_half_at=cfg["complete.lr_half_at"],
        reg_weight=cfg["train.reg_weight"], delta=cfg["train.delta"],
        n_uniform=cfg["sample.n_uniform"], n_near=cfg["sample.n_near"],
        samples_per_iter=cfg["complete.samples_per_iter"],
        extraction_resolution=cfg["complete.resolution"],
        sparse_extraction=cfg["complete.sparse"], seed=seed)


def _write_curve_csv(path, curve):
    rows = ["frame,phase,volume_ml"]
    for k, v in enumerate(curve.volumes_ml):
        rows.append(f"{k},{FRAME_PHASES[k]:.2f},{v:.6g}")
    rows.append(f"# v_max,{curve.v_max:.6g}")
    rows.append(f"# fc,{curve.fc:.6g}")
    rows.append(f"# cc,{curve.cc:.6g}")
    atomic_write_text(path, "\n".join(rows) + "\n")


def cmd_complete(args, cfg) -> list[str]:
    out_root = Path(args.out)
    ck = load_checkpoint(_require(out_root / "model" / "checkpoint.mdyn", "train"))
    cohort_rows = _read_cohort_csv(out_root)
    test_rows = [r for r in cohort_rows if r["split"] == "test"]
    if args.seq:
        wanted = {int(s) for s in args.seq.split(",")}
        test_rows = [r for r in test_rows if int(r["id"]) in wanted]
    if not test_rows:
        raise UserError("no test sequences selected")
    t_given = cfg["complete.t_given"]
    frame_idx = int(round(t_given / 0.05))
    if not (0 <= frame_idx < NUM_FRAMES
            and abs(FRAME_PHASES[frame_idx] - t_given) < 1e-9):
        raise UserError(f"complete.t_given={t_given} is not one of the 20 phases")

    artifacts = []
    for row in test_rows:
        i = int(row["id"])
        seq_dir = _require(out_root / "prep" / f"test_seq_{i:03d}", "preprocess")
        observed = read_obj(seq_dir / f"frame_{frame_idx:02d}.obj")
        result = complete_sequence((observed, t_given), _member_demography(row),
                                   ck, _completion_config(cfg, args.seed))
        if result.aborted:
            raise UserError(f"completion diverged for sequence {i}")
        empty = [k for k, m in enumerate(result.meshes) if m.is_empty]
        if empty:
            raise UserError(
                f"completion of sequence {i} produced empty isosurfaces at "
                f"frames {empty}; the checkpoint is undertrained for this input")
        dest = out_root / "completions" / f"seq_{i:03d}"
        write_sequence(dest, result.meshes)
        atomic_write_text(dest / "zr.txt",
                          "\n".join(f"{v:.9g}" for v in result.z_r) + "\n")
        curve = reconstruct_volume_curve(result.meshes)
        _write_curve_csv(dest / "volumes.csv", curve)
        from .reporting import save_volume_curves
        save_volume_curves(dest / "volumes.svg", {"completed": curve.volumes_ml},
                           title=f"Completed sequence {i:03d}")
        artifacts.append(str(dest))
        print(f"  completed seq {i:03d}: FC={curve.fc:.3f} "
              f"(objective {result.objective_trace[-1]:.4f})")
    return artifacts


def cmd_generate(args, cfg) -> list[str]:
    out_root = Path(args.out)
    ck = load_checkpoint(_require(out_root / "model" / "checkpoint.mdyn", "train"))
    if args.demography:
        data = json.loads(Path(args.demography).read_text())
        demos = [Demography(gender=d["gender"],
                            age_group=AGE_GROUP_LABELS.index(d["age_group"]),
                            sbp=float(d["sbp"]))
                 for d in (data if isinstance(data, list) else [data])]
    else:
        rng = derive_rng(args.seed, "generate-demography")
        from .synthdata import sample_demography
        demos = [sample_demography(rng) for _ in range(cfg["generate.count"])]

    dest_root = out_root / "generated"
    dest_root.mkdir(parents=True, exist_ok=True)
    summary = ["id,gender,age_group,sbp,fc,cc,v_max"]
    artifacts = []
    fc_records = []
    for j, demo in enumerate(demos):
        spec = GenerationSpec(demography=demo, count=1,
                              std_scale=cfg["generate.std_scale"],
                              seed=int(derive_rng(args.seed, "gen", j).integers(1 << 31)),
                              extraction_resolution=cfg["generate.resolution"],
                              sparse_extraction=cfg["generate.sparse"])
        (meshes, z_r), = run_generation(spec, ck)
        dest = dest_root / f"gen_{j:03d}"
        write_sequence(dest, meshes)
        atomic_write_text(dest / "zr.txt", "\n".join(f"{v:.9g}" for v in z_r) + "\n")
        curve = reconstruct_volume_curve(meshes)
        _write_curve_csv(dest / "volumes.csv", curve)
        summary.append(f"{j},{demo.gender},{AGE_GROUP_LABELS[demo.age_group]},"
                       f"{demo.sbp:.6g},{curve.fc:.6g},{curve.cc:.6g},"
                       f"{curve.v_max:.6g}")
        fc_records.append((demo, curve.fc))
        artifacts.append(str(dest))
        print(f"  generated {j:03d} ({demo.gender}, "
              f"{AGE_GROUP_LABELS[demo.age_group]}): FC={curve.fc:.3f}")
    atomic_write_text(dest_root / "summary.csv", "\n".join(summary) + "\n")
    stats = subgroup_fc(fc_records)
    atomic_write_text(dest_root / "fc_subgroups.csv", subgroup_fc_csv(stats))
    from .reporting import save_fc_boxplot
    save_fc_boxplot(dest_root / "fc_subgroups.svg", stats,
                    title="Generated cohort FC by subgroup")
    return artifacts + [str(dest_root / "summary.csv"),
                        str(dest_root / "fc_subgroups.csv"),
                        str(dest_root / "fc_subgroups.svg")]


def cmd_manipulate(args, cfg) -> list[str]:
    out_root = Path(args.out)
    ck = load_checkpoint(_require(out_root / "model" / "checkpoint.mdyn", "train"))
    if not args.zr:
        raise UserError("manipulate requires --zr FILE (one float per line)")
    z_r = np.array([float(x) for x in Path(args.zr).read_text().split()],
                   dtype=np.float32)
    if args.demography:
        data = json.loads(Path(args.demography).read_text())
        demos = [Demography(gender=d["gender"],
                            age_group=AGE_GROUP_LABELS.index(d["age_group"]),
                            sbp=float(d["sbp"]))
                 for d in (data if isinstance(data, list) else [data])]
    else:
        demos = [Demography(g, a, 0.5) for g in ("male", "female")
                 for a in range(4)]
    sequences = manipulate_demography(
        z_r, demos, ck, extraction_resolution=cfg["generate.resolution"],
        sparse_extraction=cfg["generate.sparse"])
    dest_root = out_root / "manipulated"
    artifacts = []
    curves = {}
    for demo, meshes in zip(demos, sequences):
        label = f"{demo.gender}_{AGE_GROUP_LABELS[demo.age_group]}"
        dest = dest_root / label
        write_sequence(dest, meshes)
        curve = reconstruct_volume_curve(meshes)
        _write_curve_csv(dest / "volumes.csv", curve)
        curves[label] = curve.volumes_ml
        artifacts.append(str(dest))
        print(f"  manipulated -> {label}: FC={curve.fc:.3f}")
    from .reporting import save_volume_curves
    save_volume_curves(dest_root / "volumes.svg", curves,
                       title="Fixed residual latent, varying demography")
    return artifacts + [str(dest_root / "volumes.svg")]


def cmd_evaluate(args, cfg) -> list[str]:
    out_root = Path(args.out)
    cohort_rows = _read_cohort_csv(out_root)
    test_rows = [r for r in cohort_rows if r["split"] == "test"]
    info = _load_norm(out_root)
    pred_seqs, true_seqs, demos = [], [], []
    for row in test_rows:
        i = int(row["id"])
        pred_dir = out_root / "completions" / f"seq_{i:03d}"
        if not pred_dir.exists():
            continue
        true_dir = _require(out_root / "prep" / f"test_seq_{i:03d}", "preprocess")
        pred_seqs.append(read_sequence(pred_dir))
        true = read_sequence(true_dir)
        # ground truth back to mm for mm-scale metrics
        from .geometry import denormalize_mesh
        true_seqs.append([denormalize_mesh(m, info) for m in true])
        demos.append(_member_demography(row))
    if not pred_seqs:
        raise UserError("no completed sequences found; run `morphdyn complete`")

    table, rows = completion_table(pred_seqs, true_seqs,
                                   metric_samples=cfg["eval.metric_samples"])
    dest = out_root / "eval"
    dest.mkdir(parents=True, exist_ok=True)
    atomic_write_text(dest / "completion_table.csv",
                      completion_table_csv(table, rows))
    stats = subgroup_fc([(d, r.fc_pred) for d, r in zip(demos, rows)])
    atomic_write_text(dest / "fc_subgroups.csv", subgroup_fc_csv(stats))
    from .reporting import save_fc_boxplot, save_volume_curves
    save_fc_boxplot(dest / "fc_subgroups.svg", stats,
                    title="Completed test sequences: FC by subgroup")
    curves = {}
    for (d, pred, true) in list(zip(demos, pred_seqs, true_seqs))[:3]:
        curves[f"pred (CD row)"] = reconstruct_volume_curve(pred).volumes_ml
        curves[f"true"] = reconstruct_volume_curve(true).volumes_ml
        break
    if curves:
        save_volume_curves(dest / "volume_curves.svg", curves,
                           title="Completion vs ground truth (first test case)")
    print(f"  CD mean {table['cd_mean']:.3f} mm | HD mean {table['hd_mean']:.3f} mm"
          f" | FC diff {table['fc_diff_pct']:.2f}%")
    return [str(dest / "completion_table.csv"), str(dest / "fc_subgroups.csv"),
            str(dest / "fc_subgroups.svg")]


def cmd_pca(args, cfg) -> list[str]:
    out_root = Path(args.out)
    ck = load_checkpoint(_require(out_root / "model" / "checkpoint.mdyn", "train"))
    cohort_rows = _read_cohort_csv(out_root)
    train_rows = [r for r in cohort_rows if r["split"] == "train"]
    from .training import model_from_checkpoint
    model, table, _ = model_from_checkpoint(ck)
    genders = [r["gender"] for r in train_rows]
    zc = np.stack([model.embed_demography(_member_demography(r))
                   for r in train_rows])
    dest = out_root / "pca"
    dest.mkdir(parents=True, exist_ok=True)
    artifacts = []
    from .reporting import save_pca_scatter
    for name, vectors in (("zc", zc), ("zr", table)):
        res = latent_pca(vectors)
        atomic_write_text(dest / f"pca_{name}.csv", pca_csv(res, genders))
        save_pca_scatter(dest / f"pca_{name}.svg", res.projections, genders,
                         res.explained_variance_ratio,
                         title=f"{'Demography' if name == 'zc' else 'Residual'} "
                               f"latent space")
        acc = pc_gender_separability(res.projections, genders)
        print(f"  {name}: gender separability {acc:.2%}, "
              f"explained variance {res.explained_variance_ratio.round(3)}")
        artifacts += [str(dest / f"pca_{name}.csv"), str(dest / f"pca_{name}.svg")]
    return artifacts


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "complete": cmd_complete,
    "generate": cmd_generate,
    "manipulate": cmd_manipulate,
    "evaluate": cmd_evaluate,
    "pca": cmd_pca,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphdyn",
        description="Spatio-temporal neural distance fields for conditional "
                    "generative modeling of dynamic anatomies")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, help="output root directory")
        p.add_argument("--seed", type=int, default=0,
                       help="single seed controlling all randomness")
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="KEY=VALUE", help="override one config key")
        if name == "synth":
            p.add_argument("--n", type=int, default=None, help="cohort size")
        if name == "complete":
            p.add_argument("--seq", default=None,
                           help="comma-separated test sequence ids")
        if name in ("generate", "manipulate"):
            p.add_argument("--demography", default=None,
                           help="JSON demography record (or list)")
        if name == "manipulate":
            p.add_argument("--zr", default=None,
                           help="residual latent file (one float per line)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args.config, args.overrides)
        print(f"morphdyn {args.command} (seed {args.seed})")
        artifacts = COMMANDS[args.command](args, cfg)
        inputs = [args.config] if args.config else []
        out_dirs = {"synth": "cohort", "preprocess": "prep", "train": "model",
                    "complete": "completions", "generate": "generated",
                    "manipulate": "manipulated", "evaluate": "eval",
                    "pca": "pca"}
        root = Path(args.out).resolve()
        rel_artifacts = []
        for a in artifacts:
            p = Path(a).resolve()
            rel_artifacts.append(
                str(p.relative_to(root)) if p.is_relative_to(root) else str(p))
        write_manifest(Path(args.out) / out_dirs[args.command], args.command,
                       cfg, args.seed, inputs, rel_artifacts)
        return 0
    except (UserError, ConfigError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (GeometryError, SynthError, TrainingError, InferenceError,
            EvaluationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:   # internal error
        import traceback
        traceback.print_exc()
        print(f"internal error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
