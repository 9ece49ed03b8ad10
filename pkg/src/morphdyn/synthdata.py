"""Procedural ground-truth 4D anatomy sequences with demography-linked
shape and motion.

Each subject is an ellipsoidal body with a bent, tapered capsule appendage,
unioned with a hard min so the implicit stays a lower bound of distance
near the surface. The body scales through the cycle by s(t), a sum of
three smooth compact bumps (filling, passive emptying, active emptying);
the appendage follows a reduced-amplitude copy of s(t). Demography enters
through a gender volume factor, an age factor on active emptying and an
SBP-linked appendage bend, so cohort-level trends (fractional change
falling with age, higher in women, smaller volumes in women) exist in the
ground truth before any learning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import FRAME_PHASES, NUM_FRAMES, derive_rng
from .geometry import TriMesh, connected_component_count, marching_cubes, mesh_volume

AGE_GROUP_LABELS = ("<50", "50-59", "60-69", ">69")
AGE_GROUP_PROBS = (0.2, 0.3, 0.3, 0.2)
AGE_ACTIVE_FACTORS = (1.0, 0.9, 0.75, 0.6)

FEMALE_VOLUME_FACTOR = 0.85
FEMALE_PASSIVE_BOOST = 1.10
FEMALE_ACTIVE_BOOST = 1.15
SBP_BEND_SPAN_DEG = 15.0

GENERATOR_RESOLUTION = 96


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Demography:
    """Condition vector: one-hot gender (2) + one-hot age group (4) + SBP (1)."""

    gender: str            # "male" | "female"
    age_group: int         # index into AGE_GROUP_LABELS
    sbp: float             # systolic blood pressure normalized to [0,1]

    def __post_init__(self):
        if self.gender not in ("male", "female"):
            raise SynthError(f"gender must be male/female, got {self.gender!r}")
        if self.age_group not in range(len(AGE_GROUP_LABELS)):
            raise SynthError(f"age_group must be 0..3, got {self.age_group}")
        if not 0.0 <= self.sbp <= 1.0:
            raise SynthError(f"sbp must lie in [0,1], got {self.sbp}")

    def vector(self) -> np.ndarray:
        v = np.zeros(7, dtype=np.float32)
        v[0 if self.gender == "male" else 1] = 1.0
        v[2 + self.age_group] = 1.0
        v[6] = np.float32(self.sbp)
        return v

    @classmethod
    def from_vector(cls, v) -> "Demography":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (7,):
            raise SynthError(f"demography vector must have length 7, got {v.shape}")
        if not (np.isclose(v[:2].sum(), 1.0) and np.isclose(v[2:6].sum(), 1.0)
                and np.all((np.isclose(v[:6], 0) | np.isclose(v[:6], 1)))):
            raise SynthError("malformed one-hot blocks in demography vector")
        return cls(gender="male" if v[0] == 1.0 else "female",
                   age_group=int(np.argmax(v[2:6])), sbp=float(v[6]))


def smooth_bump(t, center: float, width: float) -> np.ndarray:
    """Cyclic compactly-supported smooth bump: 1 at the center, 0 outside
    |t-center| >= width (distance measured around the cycle)."""
    t = np.asarray(t, dtype=np.float64)
    d = np.abs(t - center)
    d = np.minimum(d, 1.0 - d)
    u = d / width
    out = np.zeros_like(u)
    inside = u < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    return out


@dataclass(frozen=True)
class VolumeCurveSpec:
    """Cycle-scale s(t): filling bump up, passive and active bumps down."""

    a_fill: float
    a_passive: float
    a_active: float
    fill_center: float = 0.35
    passive_center: float = 0.55
    active_center: float = 0.90
    fill_width: float = 0.18
    passive_width: float = 0.16
    active_width: float = 0.085

    def scale(self, t) -> np.ndarray:
        return (1.0
                + self.a_fill * smooth_bump(t, self.fill_center, self.fill_width)
                - self.a_passive * smooth_bump(t, self.passive_center, self.passive_width)
                - self.a_active * smooth_bump(t, self.active_center, self.active_width))

    def appendage_scale(self, t, motion_factor: float) -> np.ndarray:
        return 1.0 + motion_factor * (self.scale(t) - 1.0)


@dataclass(frozen=True)
class AnatomyParams:
    """Geometry and motion of one synthetic subject (mm)."""

    axes: tuple                 # body semi-axes (a, b, c)
    app_length: float           # appendage centerline length
    app_radius: float           # base radius
    app_taper: float            # tip radius = base * (1 - taper)
    app_bend_deg: float         # total centerline bend
    app_azimuth: float          # bend plane orientation (radians)
    app_direction: tuple        # unit attach direction from body center
    app_motion_factor: float    # reduced-amplitude copy of s(t)
    volume_factor: float        # demographic + individual baseline scaling
    curve: VolumeCurveSpec

    def __post_init__(self):
        if min(self.axes) <= 0 or self.app_length <= 0 or self.app_radius <= 0:
            raise SynthError("geometric parameters must be positive")
        if not 0 <= self.app_taper < 1:
            raise SynthError(f"taper must lie in [0,1), got {self.app_taper}")
        if self.curve.a_passive + self.curve.a_active >= 0.5:
            raise SynthError("A_p + A_a must stay below 0.5 to keep volumes positive")


def sample_demography(rng: np.random.Generator) -> Demography:
    gender = "male" if rng.random() < 0.5 else "female"
    age_group = int(rng.choice(4, p=AGE_GROUP_PROBS))
    sbp = float(np.clip(rng.normal(0.5, 0.15), 0.0, 1.0))
    return Demography(gender=gender, age_group=age_group, sbp=sbp)


def params_from_demography(demography: Demography, rng: np.random.Generator,
                           noise_scale: float = 1.0,
                           trend_free: bool = False) -> AnatomyParams:
    """Map demography to anatomy, plus residual individual variation.

    Gender scales baseline volume (female 0.85x) and boosts both emptying
    amplitudes; age scales active emptying down (1.0/0.9/0.75/0.6); SBP
    tilts the appendage bend linearly over +-15 degrees. Everything else
    is drawn from fixed ranges independent of demography. trend_free
    removes every demographic factor (null-control cohorts); noise_scale=0
    removes the individual variation.
    """
    ns = float(noise_scale)
    female = demography.gender == "female" and not trend_free
    age_factor = 1.0 if trend_free else AGE_ACTIVE_FACTORS[demography.age_group]

    vol_factor = (FEMALE_VOLUME_FACTOR if female else 1.0) \
        * (1.0 + ns * float(np.clip(rng.normal(0.0, 0.1), -0.25, 0.25)))
    axes = tuple(base * (1.0 + ns * rng.uniform(-0.08, 0.08)) * vol_factor ** (1 / 3)
                 for base in (28.0, 22.0, 20.0))

    a_fill = 0.055 + ns * rng.uniform(-0.01, 0.01)
    a_passive = 0.05 * (FEMALE_PASSIVE_BOOST if female else 1.0) \
        * (1.0 + ns * rng.uniform(-0.10, 0.10))
    a_active = 0.11 * age_factor * (FEMALE_ACTIVE_BOOST if female else 1.0) \
        * (1.0 + ns * rng.uniform(-0.12, 0.12))
    curve = VolumeCurveSpec(
        a_fill=a_fill, a_passive=a_passive, a_active=a_active,
        fill_center=0.35 + ns * rng.uniform(-0.012, 0.012),
        passive_center=0.55 + ns * rng.uniform(-0.012, 0.012),
        active_center=0.90 + ns * rng.uniform(-0.012, 0.012))

    bend_trend = 0.0 if trend_free else (demography.sbp - 0.5) * 2.0 * SBP_BEND_SPAN_DEG
    direction = np.array([0.78, 0.48, 0.40])
    tilt = ns * rng.uniform(-0.12, 0.12, size=3)
    direction = direction + tilt
    direction /= np.linalg.norm(direction)

    return AnatomyParams(
        axes=axes,
        app_length=16.0 + ns * rng.uniform(-3.0, 5.0),
        app_radius=5.5 + ns * rng.uniform(-1.0, 1.0),
        app_taper=0.38 + ns * rng.uniform(-0.08, 0.08),
        app_bend_deg=22.0 + bend_trend + ns * rng.uniform(-5.0, 5.0),
        app_azimuth=rng.uniform(0.0, 2.0 * np.pi) if ns > 0 else 0.7,
        app_direction=tuple(direction),
        app_motion_factor=0.5 + ns * rng.uniform(-0.08, 0.08),
        volume_factor=vol_factor,
        curve=curve)


# -- implicit evaluation -----------------------------------------------------------

def _ellipsoid_sdf(p: np.ndarray, axes: np.ndarray) -> np.ndarray:
    """Close SDF approximation for an origin-centered ellipsoid."""
    q = p / axes
    k0 = np.linalg.norm(q, axis=1)
    k1 = np.linalg.norm(q / axes, axis=1)
    out = np.where(k1 > 1e-12, k0 * (k0 - 1.0) / np.maximum(k1, 1e-12),
                   -np.min(axes))
    return out


def _appendage_polyline(params: AnatomyParams, body_axes: np.ndarray,
                        app_scale: float, n_seg: int = 12):
    """Centerline points and radii of the bent tapered capsule at one frame."""
    u0 = np.asarray(params.app_direction)
    # attach point: where the ray along u0 crosses the scaled body surface,
    # pulled inward so the union stays connected
    b = u0 / np.linalg.norm(u0 / body_axes)
    start = b - u0 * (0.7 * params.app_radius * app_scale)
    # bend in the plane spanned by u0 and a perpendicular set by the azimuth
    ref = np.array([0.0, 0.0, 1.0]) if abs(u0[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(u0, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u0, e1)
    w = math.cos(params.app_azimuth) * e1 + math.sin(params.app_azimuth) * e2
    beta = math.radians(params.app_bend_deg)
    length = params.app_length * app_scale
    step = length / n_seg
    pts = [start]
    for k in range(n_seg):
        f = (k + 0.5) / n_seg
        d = math.cos(beta * f) * u0 + math.sin(beta * f) * w
        pts.append(pts[-1] + step * d)
    pts = np.asarray(pts)
    fr = (np.arange(n_seg + 1)) / n_seg
    radii = params.app_radius * app_scale * (1.0 - params.app_taper * fr)
    return pts, radii


def _capsule_chain_sdf(p: np.ndarray, pts: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Distance to a polyline with linearly varying radius (tapered capsule)."""
    best = np.full(len(p), np.inf)
    for k in range(len(pts) - 1):
        a, b = pts[k], pts[k + 1]
        ab = b - a
        denom = float(ab @ ab)
        tt = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
        closest = a + tt[:, None] * ab
        r = radii[k] + (radii[k + 1] - radii[k]) * tt
        d = np.linalg.norm(p - closest, axis=1) - r
        np.minimum(best, d, out=best)
    return best


def implicit_field(params: AnatomyParams, t: float, points: np.ndarray) -> np.ndarray:
    """min(body, appendage) implicit at one phase; negative inside."""
    s = float(params.curve.scale(t))
    s_app = float(params.curve.appendage_scale(t, params.app_motion_factor))
    axes = np.asarray(params.axes) * s
    body = _ellipsoid_sdf(points, axes)
    pts, radii = _appendage_polyline(params, axes, s_app)
    # appendage only matters near its bounding box
    lo = pts.min(axis=0) - radii.max() - 2.0
    hi = pts.max(axis=0) + radii.max() + 2.0
    mask = np.all((points >= lo) & (points <= hi), axis=1)
    if np.any(mask):
        app = _capsule_chain_sdf(points[mask], pts, radii)
        body[mask] = np.minimum(body[mask], app)
    return body


def _domain_radius(params: AnatomyParams) -> float:
    smax = float(params.curve.scale(np.asarray(FRAME_PHASES)).max())
    axes = np.asarray(params.axes) * smax
    u0 = np.asarray(params.app_direction)
    b = np.linalg.norm(u0 / np.linalg.norm(u0 / axes))
    reach = b + (params.app_length + params.app_radius) * (1.0 + params.app_motion_factor)
    return 1.15 * max(float(axes.max()), float(reach))


def generate_frame(params: AnatomyParams, t: float,
                   resolution: int = GENERATOR_RESOLUTION) -> TriMesh:
    r = _domain_radius(params)
    xs = np.linspace(-r, r, resolution)
    grid = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), axis=-1).reshape(-1, 3)
    field = implicit_field(params, t, grid).reshape(resolution, resolution, resolution)
    return marching_cubes(field, lo=-r, hi=r)


def generate_sequence(params: AnatomyParams,
                      resolution: int = GENERATOR_RESOLUTION,
                      max_retries: int = 3) -> list[TriMesh]:
    """20 frames at the cycle phases; regenerates with a fatter appendage
    base if the isosurface ever comes out disconnected."""
    current = params
    for attempt in range(max_retries + 1):
        meshes = []
        ok = True
        for t in FRAME_PHASES:
            mesh = generate_frame(current, t, resolution)
            if mesh.is_empty or connected_component_count(mesh) != 1:
                ok = False
                break
            meshes.append(mesh)
        if ok:
            return meshes
        current = replace(current, app_radius=current.app_radius * 1.1)
    raise SynthError(
        f"isosurface stayed disconnected after {max_retries} retries "
        "with enlarged appendage base")


def analytic_volume_curve(params: AnatomyParams,
                          resolution: int = GENERATOR_RESOLUTION) -> np.ndarray:
    """Predicted per-frame volumes from the two-component scale model.

    Component volumes are measured once at t=0 (body alone, union minus
    body); the body then scales as s(t)^3 and the exposed appendage as its
    reduced-amplitude copy cubed.
    """
    r = _domain_radius(params)
    xs = np.linspace(-r, r, resolution)
    grid = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), axis=-1).reshape(-1, 3)
    t0 = FRAME_PHASES[0]
    s0 = float(params.curve.scale(t0))
    body_only = _ellipsoid_sdf(grid, np.asarray(params.axes) * s0)
    v_body = mesh_volume(marching_cubes(
        body_only.reshape(resolution, resolution, resolution), lo=-r, hi=r))
    union = implicit_field(params, t0, grid)
    v_union = mesh_volume(marching_cubes(
        union.reshape(resolution, resolution, resolution), lo=-r, hi=r))
    v_app = max(v_union - v_body, 0.0)
    t = np.asarray(FRAME_PHASES)
    s = params.curve.scale(t) / s0
    s_app = params.curve.appendage_scale(t, params.app_motion_factor) \
        / float(params.curve.appendage_scale(t0, params.app_motion_factor))
    return v_body * s ** 3 + v_app * s_app ** 3


def fractional_change(volumes: np.ndarray) -> float:
    v = np.asarray(volumes, dtype=np.float64)
    return float((v.max() - v.min()) / v.max())


# -- cohorts ------------------------------------------------------------------------

@dataclass
class CohortMember:
    """One subject: demography and parameters are eager, meshes lazy."""

    index: int
    demography: Demography
    params: AnatomyParams
    split: str
    resolution: int = GENERATOR_RESOLUTION
    _meshes: list = field(default=None, repr=False)

    def meshes(self, cache: bool = True) -> list[TriMesh]:
        if self._meshes is not None:
            return self._meshes
        meshes = generate_sequence(self.params, self.resolution)
        if cache:
            self._meshes = meshes
        return meshes

    def analytic_volumes(self) -> np.ndarray:
        return analytic_volume_curve(self.params, self.resolution)


def build_cohort(n: int, seed: int, split_counts: tuple | None = None,
                 noise_scale: float = 1.0, trend_free: bool = False,
                 resolution: int = GENERATOR_RESOLUTION) -> list[CohortMember]:
    """n independent subjects, deterministic for a fixed seed.

    split_counts = (train, val, test) must sum to n; default is an
    80/5/15 split rounded to integers. Meshes are generated lazily per
    member so large cohorts never hold every mesh in memory.
    """
    if n < 1:
        raise SynthError(f"cohort size must be >= 1, got {n}")
    if split_counts is None:
        n_train = max(1, int(round(n * 0.8)))
        n_val = max(0, int(round(n * 0.05)))
        n_train = min(n_train, n - 1) if n > 1 else n
        n_val = min(n_val, n - n_train)
        split_counts = (n_train, n_val, n - n_train - n_val)
    if sum(split_counts) != n or any(c < 0 for c in split_counts):
        raise SynthError(f"split counts {split_counts} do not partition n={n}")
    labels = (["train"] * split_counts[0] + ["val"] * split_counts[1]
              + ["test"] * split_counts[2])
    order = derive_rng(seed, "split").permutation(n)
    split_of = dict(zip(order.tolist(), labels))
    members = []
    for i in range(n):
        rng = derive_rng(seed, "member", i)
        demography = sample_demography(rng)
        params = params_from_demography(demography, rng, noise_scale=noise_scale,
                                        trend_free=trend_free)
        members.append(CohortMember(index=i, demography=demography, params=params,
                                    split=split_of[i], resolution=resolution))
    return members
