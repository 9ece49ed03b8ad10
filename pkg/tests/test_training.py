import numpy as np
import pytest

from morphdyn.geometry import NormalizationInfo
from morphdyn.geometry.sampling import FrameSamples
from morphdyn.io import load_checkpoint, save_checkpoint
from morphdyn.model import ModelConfig
from morphdyn.synthdata import Demography
from morphdyn.training import (
    SequenceData,
    TrainConfig,
    Trainer,
    TrainingError,
    apply_latent_dropout,
    clamped_l1,
    model_from_checkpoint,
)

TINY_MODEL = ModelConfig(sdf_depth=2, sdf_width=160, sdf_skip=1)


def synthetic_dataset(n_seq=2, n_per_frame=300, seed=0):
    """Analytic moving-sphere SDF data: cheap, exact, learnable.

    Mirrors the production sampling mix: mostly near-surface points with
    a uniform-in-box remainder, so clamp gradients stay alive.
    """
    rng = np.random.default_rng(seed)
    data = []
    for i in range(n_seq):
        r0 = 0.45 + 0.1 * i
        demog = Demography("male" if i % 2 == 0 else "female", i % 4,
                           0.5).vector()
        frames = []
        n_near = int(0.8 * n_per_frame)
        n_far = n_per_frame - n_near
        for k in range(20):
            t = 0.05 * k
            radius = r0 * (1.0 + 0.1 * np.sin(2 * np.pi * t))
            dirs = rng.normal(size=(n_near, 3))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            near = dirs * (radius + rng.normal(0, 0.05, n_near))[:, None]
            far = rng.uniform(-1, 1, (n_far, 3))
            p = np.concatenate([near, far]).astype(np.float32)
            d = (np.linalg.norm(p, axis=1) - radius).astype(np.float32)
            frames.append(FrameSamples(p=p, t=t, d=d))
        data.append(SequenceData.from_frames(demog, frames))
    return data


def tiny_config(**kw):
    base = dict(epochs=2, seqs_per_step=2, frames_per_step=2,
                samples_per_draw=128, seed=3, lr_half_epochs=1000)
    base.update(kw)
    return TrainConfig(**base)


# -- clamped L1 ------------------------------------------------------------------

def test_clamped_l1_examples():
    assert clamped_l1(0.05, 0.03, 0.1) == pytest.approx(0.02)
    assert clamped_l1(0.5, 0.2, 0.1) == pytest.approx(0.0)
    assert clamped_l1(-0.15, 0.05, 0.1) == pytest.approx(0.15)


# -- dropout -----------------------------------------------------------------------

def test_dropout_p0_identity():
    z = np.ones(8, dtype=np.float32)
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert apply_latent_dropout(z, rng, 0.0) is z


def test_dropout_p1_zeroes():
    z = np.ones(8, dtype=np.float32)
    rng = np.random.default_rng(0)
    for _ in range(50):
        out = apply_latent_dropout(z, rng, 1.0)
        assert np.all(out == 0)


def test_dropout_frequency():
    z = np.ones(4, dtype=np.float32)
    rng = np.random.default_rng(1)
    drops = sum(np.all(apply_latent_dropout(z, rng, 0.2) == 0)
                for _ in range(10_000))
    assert abs(drops / 10_000 - 0.2) < 0.02


def test_dropout_rejects_bad_probability():
    with pytest.raises(TrainingError):
        apply_latent_dropout(np.ones(4), np.random.default_rng(0), 1.5)


# -- training steps -------------------------------------------------------------------

def test_two_steps_on_fixed_batch_decrease_loss():
    data = synthetic_dataset()
    tr = Trainer(data, tiny_config(zr_dropout=0.0, samples_per_draw=256),
                 TINY_MODEL)
    first = tr.training_step(step=0)
    # replay the same step index: identical batch, post-update parameters
    second = tr.training_step(step=0)
    assert second["loss"] < first["loss"]


def test_rows_absent_from_batch_bit_unchanged():
    data = synthetic_dataset(n_seq=6)
    tr = Trainer(data, tiny_config(seqs_per_step=2, zr_dropout=0.0), TINY_MODEL)
    before = tr.latent_table.copy()
    tr.training_step()
    used = tr._step_sequences(0)
    untouched = [i for i in range(6) if i not in used]
    assert untouched
    for i in untouched:
        assert np.array_equal(tr.latent_table[i], before[i])
    for i in used:
        assert not np.array_equal(tr.latent_table[i], before[i])


def test_zero_reg_zero_loss_leaves_latents():
    # targets equal predictions exactly -> l1 = 0; reg weight 0 -> the
    # latent gradient vanishes and a rowwise Adam step moves nothing
    from morphdyn.autodiff import RowwiseAdamState, Tape, rowwise_adam_step
    from morphdyn.model import ConditionalSdfModel, init_latent_table

    model = ConditionalSdfModel(TINY_MODEL, seed=2)
    table = init_latent_table(2, seed=2)
    rng = np.random.default_rng(0)
    coords = rng.uniform(-1, 1, (128, 4)).astype(np.float32)
    slots = rng.integers(0, 2, 128)
    demog = np.stack([Demography("male", 0, 0.5).vector(),
                      Demography("female", 1, 0.5).vector()])

    tape = Tape()
    zc_rows = model.encoder_tape(tape, demog)
    zr_rows = tape.leaf(table, trainable=True)
    pred = model.forward_tape(tape, tape.gather_rows(zc_rows, slots),
                              tape.gather_rows(zr_rows, slots), coords)
    target = tape.constant(pred.data.copy())
    loss = tape.mean(tape.abs(tape.sub(tape.clamp(pred, 0.1),
                                       tape.clamp(target, 0.1))))
    tape.backward(loss)
    assert float(loss.data) == 0.0
    assert np.all(zr_rows.grad == 0)

    before = table.copy()
    state = RowwiseAdamState.for_table(table, lr=1e-3)
    rowwise_adam_step(state, table, np.array([0, 1]), zr_rows.grad)
    assert np.array_equal(table, before)


def test_loss_equals_l1_plus_reg():
    data = synthetic_dataset()
    tr = Trainer(data, tiny_config(), TINY_MODEL)
    stats = tr.training_step()
    assert stats["loss"] == pytest.approx(stats["l1"] + stats["reg"], abs=1e-6)


def test_reg_term_matches_latent_norms():
    data = synthetic_dataset()
    cfg = tiny_config(zr_dropout=0.0, reg_weight=1e-2)
    tr = Trainer(data, cfg, TINY_MODEL)
    seq_ids = tr._step_sequences(0)
    expected = 1e-2 * np.mean(
        [np.sum(tr.latent_table[s].astype(np.float64) ** 2) for s in seq_ids])
    stats = tr.training_step(step=0)
    assert stats["reg"] == pytest.approx(expected, rel=1e-4)


def test_dataset_latent_table_mismatch_rejected():
    data = synthetic_dataset(n_seq=3)
    with pytest.raises(TrainingError, match="latent table"):
        Trainer(data, tiny_config(), TINY_MODEL,
                latent_table=np.zeros((5, 64), dtype=np.float32))


def test_wrong_frame_count_rejected():
    data = synthetic_dataset(n_seq=1)
    data[0].coords.pop()
    with pytest.raises(TrainingError, match="frames"):
        Trainer(data, tiny_config(), TINY_MODEL)


# -- fit / checkpoint / resume ----------------------------------------------------------

def test_fit_is_deterministic_and_resumable(tmp_path):
    data = synthetic_dataset()
    norm = NormalizationInfo(center=np.array([1.0, 2.0, 3.0]), scale=0.02)

    ck1, rep1 = Trainer(data, tiny_config(epochs=4), TINY_MODEL, norm_info=norm).fit()
    ck2, rep2 = Trainer(data, tiny_config(epochs=4), TINY_MODEL, norm_info=norm).fit()
    p1, p2 = tmp_path / "a.ck", tmp_path / "b.ck"
    save_checkpoint(p1, ck1)
    save_checkpoint(p2, ck2)
    assert p1.read_bytes() == p2.read_bytes()
    assert rep1.l1 == rep2.l1

    # train 2 epochs, checkpoint, resume 2 more: identical to 4 straight
    half = Trainer(data, tiny_config(epochs=2), TINY_MODEL, norm_info=norm)
    ck_half, _ = half.fit()
    p_half = tmp_path / "half.ck"
    save_checkpoint(p_half, ck_half)
    resumed = Trainer.from_checkpoint(load_checkpoint(p_half), data)
    resumed.config.epochs = 4
    ck_resumed, _ = resumed.fit()
    p3 = tmp_path / "resumed.ck"
    ck_resumed.meta["train_config"]["epochs"] = 4
    save_checkpoint(p3, ck_resumed)
    assert p3.read_bytes() == p1.read_bytes()


def test_model_from_checkpoint_roundtrip():
    data = synthetic_dataset()
    tr = Trainer(data, tiny_config(epochs=1), TINY_MODEL)
    ck, _ = tr.fit()
    model, table, norm = model_from_checkpoint(ck)
    assert np.array_equal(table, tr.latent_table)
    zc = model.embed_demography(Demography("male", 0, 0.5))
    assert zc.shape == (64,)
    assert norm is None


def test_zero_demography_ablation_zeroes_encoder_input():
    data = synthetic_dataset()
    cfg_on = tiny_config(epochs=1)
    cfg_off = tiny_config(epochs=1, zero_demography=True)
    assert [k for k in cfg_on.to_dict() if cfg_on.to_dict()[k]
            != cfg_off.to_dict()[k]] == ["zero_demography"]
    tr = Trainer(data, cfg_off, TINY_MODEL)
    tr.training_step()     # must run fine with zeroed condition vectors


def test_report_csv_shape():
    data = synthetic_dataset()
    _, rep = Trainer(data, tiny_config(epochs=3), TINY_MODEL).fit()
    csv = rep.to_csv()
    lines = csv.strip().split("\n")
    assert lines[0].startswith("epoch,l1,reg")
    assert len(lines) == 4
