import numpy as np
import pytest

from morphdyn.evaluation import (
    EvaluationError,
    ablation_configs,
    completion_table,
    completion_table_csv,
    latent_pca,
    pc_gender_separability,
    pca_csv,
    subgroup_fc,
    subgroup_fc_csv,
)
from morphdyn.geometry import TriMesh
from morphdyn.synthdata import Demography
from morphdyn.training import TrainConfig

from conftest import icosphere


def sphere_seq(radius_mm=30.0, n_frames=20, subdiv=2):
    base = icosphere(1.0, subdiv)
    return [TriMesh(base.vertices * radius_mm, base.faces)
            for _ in range(n_frames)]


def breathing_seq(r0=30.0, amp=0.1, subdiv=2):
    base = icosphere(1.0, subdiv)
    out = []
    for k in range(20):
        r = r0 * (1 + amp * np.sin(2 * np.pi * 0.05 * k))
        out.append(TriMesh(base.vertices * r, base.faces))
    return out


# -- completion table ---------------------------------------------------------------

def test_identical_sequences_give_zero_rows():
    seq = breathing_seq()
    table, rows = completion_table([seq], [seq], metric_samples=1500)
    assert table["cd_min"] == 0.0
    assert table["cd_mean"] == 0.0
    assert table["hd_max"] == 0.0
    assert table["vmax_diff_pct"] == 0.0
    assert table["fc_diff_pct"] == 0.0
    assert table["cc_diff_pct"] == 0.0


def test_uniform_dilation_vmax_percent():
    true = sphere_seq(30.0)
    pred = sphere_seq(30.3)      # +1% dilation about the center
    table, _ = completion_table([pred], [true], metric_samples=1500)
    assert table["vmax_diff_pct"] == pytest.approx(3.0301, rel=0.02)
    assert table["cd_mean"] == pytest.approx(0.3, rel=0.1)


def test_single_sequence_table_equals_row():
    pred, true = breathing_seq(30, 0.08), breathing_seq(31, 0.1)
    table, rows = completion_table([pred], [true], metric_samples=1000)
    assert len(rows) == 1
    for f in ("cd_mean", "hd_mean", "fc_diff_pct"):
        assert table[f] == getattr(rows[0], f)


def test_table_invariant_to_sequence_order():
    a_pred, a_true = breathing_seq(30, 0.08), breathing_seq(30.5, 0.09)
    b_pred, b_true = breathing_seq(26, 0.12), breathing_seq(26.5, 0.11)
    t1, _ = completion_table([a_pred, b_pred], [a_true, b_true],
                             metric_samples=800)
    t2, _ = completion_table([b_pred, a_pred], [b_true, a_true],
                             metric_samples=800)
    for f in ("vmax_diff_pct", "fc_diff_pct", "cc_diff_pct"):
        assert t1[f] == pytest.approx(t2[f], rel=1e-6)


def test_min_mean_max_ordering():
    pred, true = breathing_seq(30, 0.08), breathing_seq(30.5, 0.1)
    _, rows = completion_table([pred], [true], metric_samples=800)
    r = rows[0]
    assert r.cd_min <= r.cd_mean <= r.cd_max
    assert r.hd_min <= r.hd_mean <= r.hd_max


def test_unpaired_lengths_rejected():
    with pytest.raises(EvaluationError, match="unpaired"):
        completion_table([breathing_seq()], [])


def test_wrong_frame_count_rejected():
    with pytest.raises(EvaluationError, match="frames"):
        completion_table([sphere_seq(n_frames=19)], [sphere_seq(n_frames=19)])


def test_table_csv_shape():
    seq = breathing_seq()
    table, rows = completion_table([seq], [seq], metric_samples=500)
    csv = completion_table_csv(table, rows)
    lines = csv.strip().split("\n")
    assert lines[0].startswith("sequence,cd_min")
    assert lines[-1].startswith("mean,")


# -- subgroup FC -------------------------------------------------------------------

def test_subgroup_constant_fc_quartiles():
    records = [(Demography("male", a, 0.5), 0.3) for a in range(4)] * 3
    stats = subgroup_fc(records)
    for s in stats:
        if s.gender == "male":
            assert s.quartiles() == (0.3, 0.3, 0.3)
        else:
            assert len(s.fc_values) == 0


def test_subgroup_counts_partition():
    rng = np.random.default_rng(0)
    records = []
    for _ in range(40):
        d = Demography("male" if rng.random() < 0.5 else "female",
                       int(rng.integers(4)), 0.5)
        records.append((d, float(rng.uniform(0.2, 0.5))))
    stats = subgroup_fc(records)
    assert sum(len(s.fc_values) for s in stats) == 40
    assert len(stats) == 8
    csv = subgroup_fc_csv(stats)
    assert csv.startswith("gender,age_group,count")


def test_subgroup_rejects_fc_out_of_range():
    with pytest.raises(EvaluationError):
        subgroup_fc([(Demography("male", 0, 0.5), 1.5)])


def test_synthetic_cohort_age_trend_in_subgroups():
    from morphdyn import FRAME_PHASES
    from morphdyn.synthdata import build_cohort
    members = build_cohort(200, seed=17)
    records = []
    for m in members:
        v = m.params.curve.scale(np.asarray(FRAME_PHASES)) ** 3
        records.append((m.demography, float((v.max() - v.min()) / v.max())))
    stats = subgroup_fc(records)
    for gender in ("male", "female"):
        medians = [next(s for s in stats
                        if s.gender == gender and s.age_group == a).quartiles()[1]
                   for a in range(4)]
        assert all(b <= a + 1e-9 for a, b in zip(medians, medians[1:])), medians


# -- ablation harness ---------------------------------------------------------------

def test_ablation_configs_differ_in_exactly_one_field():
    base = TrainConfig(epochs=5, seed=3)
    on, off = ablation_configs(base)
    diff = [k for k in on.to_dict() if on.to_dict()[k] != off.to_dict()[k]]
    assert diff == ["zero_demography"]
    assert on.seed == off.seed


# -- PCA -------------------------------------------------------------------------------

def test_pca_recovers_axis_aligned_coordinates():
    # exactly decorrelated 2D data embedded in 6D: PCs must align with the
    # axes and projections recover the coordinates up to sign
    x = np.zeros((8, 6))
    x[:, 0] = np.tile([4.0, -4.0, 2.0, -2.0], 2)
    x[:, 1] = np.tile([1.0, 1.0, -1.0, -1.0], 2)
    res = latent_pca(x)
    assert abs(res.components[0, 0]) > 1 - 1e-12
    assert abs(res.components[1, 1]) > 1 - 1e-12
    assert np.allclose(np.abs(res.projections[:, 0]), np.abs(x[:, 0]), atol=1e-9)
    assert np.allclose(np.abs(res.projections[:, 1]), np.abs(x[:, 1]), atol=1e-9)


def test_pca_translation_invariance():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(40, 8))
    r1 = latent_pca(x)
    r2 = latent_pca(x + 13.5)
    assert np.allclose(np.abs(r1.projections), np.abs(r2.projections), atol=1e-8)


def test_pca_explained_variance_properties():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 5)) * np.array([3, 2, 1, 0.5, 0.1])
    res = latent_pca(x)
    evr = res.explained_variance_ratio
    assert np.all(evr >= 0)
    assert evr[0] >= evr[1]
    assert evr.sum() <= 1.0 + 1e-12


def test_pca_rank_deficient_input():
    x = np.ones((10, 4))
    res = latent_pca(x)
    assert np.all(res.projections == 0)
    assert np.all(res.explained_variance_ratio == 0)


def test_pca_requires_three_vectors():
    with pytest.raises(EvaluationError):
        latent_pca(np.zeros((2, 4)))


def test_pca_csv_labels():
    rng = np.random.default_rng(4)
    res = latent_pca(rng.normal(size=(6, 4)))
    csv = pca_csv(res, ["male", "female"] * 3)
    assert csv.startswith("pc1,pc2,gender")
    assert "# explained_variance_ratio" in csv


def test_separability_oracle_on_separated_clusters():
    rng = np.random.default_rng(5)
    proj = np.concatenate([rng.normal(-3, 0.3, (30, 2)),
                           rng.normal(3, 0.3, (30, 2))])
    genders = ["male"] * 30 + ["female"] * 30
    assert pc_gender_separability(proj, genders) >= 0.99
    # fully mixed clusters stay near chance
    mixed = rng.normal(0, 1.0, (60, 2))
    acc = pc_gender_separability(mixed, genders)
    assert acc < 0.7
