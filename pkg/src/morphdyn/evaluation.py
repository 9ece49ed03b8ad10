"""Quantitative evaluation on synthetic cohorts: completion tables
(surface distances at the best/mean/worst time instance plus volumetric
percent differences), subgroup fractional-change distributions, the
demography-ablation comparison, and latent-space PCA.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import NUM_FRAMES
from .geometry.metrics import surface_metrics
from .inference import reconstruct_volume_curve
from .synthdata import AGE_GROUP_LABELS, Demography


class EvaluationError(ValueError):
    pass


@dataclass
class CompletionRow:
    """Per-sequence completion quality: CD/HD over time + volume metrics."""

    cd_min: float
    cd_mean: float
    cd_max: float
    hd_min: float
    hd_mean: float
    hd_max: float
    vmax_diff_pct: float       # |pred - true| / true * 100
    fc_diff_pct: float
    cc_diff_pct: float
    fc_pred: float
    fc_true: float

    FIELDS = ("cd_min", "cd_mean", "cd_max", "hd_min", "hd_mean", "hd_max",
              "vmax_diff_pct", "fc_diff_pct", "cc_diff_pct",
              "fc_pred", "fc_true")


def _pct(pred: float, true: float) -> float:
    if true == 0:
        return 0.0 if pred == 0 else float("inf")
    return abs(pred - true) / abs(true) * 100.0


def completion_row(pred_seq, true_seq, metric_samples: int = 10_000,
                   seed: int = 0) -> CompletionRow:
    """Frame-wise CD/HD min/mean/max plus volumetric percent differences."""
    if len(pred_seq) != NUM_FRAMES or len(true_seq) != NUM_FRAMES:
        raise EvaluationError(
            f"sequences must have {NUM_FRAMES} frames, got "
            f"{len(pred_seq)}/{len(true_seq)}")
    cds, hds = [], []
    for k, (a, b) in enumerate(zip(pred_seq, true_seq)):
        cd, hd = surface_metrics(a, b, n=metric_samples, seed=seed * NUM_FRAMES + k)
        cds.append(cd)
        hds.append(hd)
    cds = np.asarray(cds)
    hds = np.asarray(hds)
    pred_curve = reconstruct_volume_curve(pred_seq)
    true_curve = reconstruct_volume_curve(true_seq)
    return CompletionRow(
        cd_min=float(cds.min()), cd_mean=float(cds.mean()), cd_max=float(cds.max()),
        hd_min=float(hds.min()), hd_mean=float(hds.mean()), hd_max=float(hds.max()),
        vmax_diff_pct=_pct(pred_curve.v_max, true_curve.v_max),
        fc_diff_pct=_pct(pred_curve.fc, true_curve.fc),
        cc_diff_pct=_pct(pred_curve.cc, true_curve.cc),
        fc_pred=pred_curve.fc, fc_true=true_curve.fc)


def completion_table(pred_seqs, true_seqs,
                     metric_samples: int = 10_000) -> tuple[dict, list]:
    """Average each CompletionRow field across test sequences (the paper's
    table protocol: collect per-sequence min/mean/max over time, then
    average across the test set)."""
    if len(pred_seqs) != len(true_seqs):
        raise EvaluationError(
            f"unpaired sequence lists: {len(pred_seqs)} vs {len(true_seqs)}")
    if not pred_seqs:
        raise EvaluationError("empty evaluation set")
    rows = [completion_row(p, t, metric_samples=metric_samples, seed=i)
            for i, (p, t) in enumerate(zip(pred_seqs, true_seqs))]
    table = {f: float(np.mean([getattr(r, f) for r in rows]))
             for f in CompletionRow.FIELDS}
    table["n_sequences"] = len(rows)
    return table, rows


def completion_table_csv(table: dict, rows: list[CompletionRow]) -> str:
    buf = io.StringIO()
    buf.write("sequence," + ",".join(CompletionRow.FIELDS) + "\n")
    for i, r in enumerate(rows):
        buf.write(f"{i}," + ",".join(f"{getattr(r, f):.6g}"
                                     for f in CompletionRow.FIELDS) + "\n")
    buf.write("mean," + ",".join(f"{table[f]:.6g}" for f in CompletionRow.FIELDS)
              + "\n")
    return buf.getvalue()


# -- subgroup FC ---------------------------------------------------------------------

@dataclass
class SubgroupStats:
    gender: str
    age_group: int
    fc_values: list = field(default_factory=list)

    @property
    def label(self) -> str:
        return f"{self.gender}/{AGE_GROUP_LABELS[self.age_group]}"

    def quartiles(self):
        if not self.fc_values:
            return (float("nan"),) * 3
        q1, q2, q3 = np.percentile(self.fc_values, [25, 50, 75])
        return float(q1), float(q2), float(q3)


def subgroup_fc(records) -> list[SubgroupStats]:
    """Partition (Demography, FC) pairs into the 8 gender x age cells."""
    cells = {(g, a): SubgroupStats(g, a)
             for g in ("male", "female") for a in range(4)}
    total = 0
    for demography, fc in records:
        if not isinstance(demography, Demography):
            demography = Demography.from_vector(demography)
        if not 0.0 <= fc < 1.0:
            raise EvaluationError(f"FC {fc} outside [0,1)")
        cells[(demography.gender, demography.age_group)].fc_values.append(float(fc))
        total += 1
    out = list(cells.values())
    if sum(len(c.fc_values) for c in out) != total:
        raise EvaluationError("subgroups failed to partition the cohort")
    return out


def subgroup_fc_csv(stats: list[SubgroupStats]) -> str:
    buf = io.StringIO()
    buf.write("gender,age_group,count,q1,median,q3,values\n")
    for s in stats:
        q1, q2, q3 = s.quartiles()
        vals = ";".join(f"{v:.6g}" for v in s.fc_values)
        buf.write(f"{s.gender},{AGE_GROUP_LABELS[s.age_group]},{len(s.fc_values)},"
                  f"{q1:.6g},{q2:.6g},{q3:.6g},{vals}\n")
    return buf.getvalue()


# -- demography ablation -----------------------------------------------------------------

def ablation_configs(base_config):
    """The two training arms: identical except the demography switch."""
    from dataclasses import replace
    on = replace(base_config, zero_demography=False)
    off = replace(base_config, zero_demography=True)
    diff = [k for k in on.to_dict() if on.to_dict()[k] != off.to_dict()[k]]
    if diff != ["zero_demography"]:
        raise EvaluationError(f"ablation arms diverge in {diff}")
    return on, off


# -- latent PCA ----------------------------------------------------------------------------

@dataclass
class PcaResult:
    projections: np.ndarray          # (n, 2)
    components: np.ndarray           # (2, d)
    explained_variance_ratio: np.ndarray
    mean: np.ndarray


def latent_pca(vectors: np.ndarray) -> PcaResult:
    """Top-2 principal directions via eigen-decomposition of the covariance."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or len(x) < 3:
        raise EvaluationError("PCA needs at least 3 vectors")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / len(x)
    total = float(np.trace(cov))
    if total <= 1e-300:
        # rank-deficient trivial input: all identical
        return PcaResult(projections=np.zeros((len(x), 2)),
                         components=np.zeros((2, x.shape[1])),
                         explained_variance_ratio=np.zeros(2), mean=mean)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1][:2]
    comps = v[:, order].T
    evr = np.maximum(w[order], 0.0) / total
    return PcaResult(projections=centered @ comps.T, components=comps,
                     explained_variance_ratio=evr, mean=mean)


def pca_csv(result: PcaResult, labels) -> str:
    buf = io.StringIO()
    buf.write("pc1,pc2,gender\n")
    for (p1, p2), lab in zip(result.projections, labels):
        buf.write(f"{p1:.6g},{p2:.6g},{lab}\n")
    buf.write(f"# explained_variance_ratio,"
              f"{result.explained_variance_ratio[0]:.6g},"
              f"{result.explained_variance_ratio[1]:.6g}\n")
    return buf.getvalue()


def pc_gender_separability(projections: np.ndarray, genders) -> float:
    """In-sample accuracy of a logistic regression on the top-2 PCs with the
    0.5 probability threshold fixed a priori."""
    from sklearn.linear_model import LogisticRegression
    y = np.array([1 if g == "female" else 0 for g in genders])
    if len(set(y)) < 2:
        return 1.0
    clf = LogisticRegression(max_iter=1000)
    clf.fit(projections, y)
    return float((clf.predict(projections) == y).mean())
