"""Zero-training extrinsic calibration from segmentation-mask consistency.

The idea: project the attributed LiDAR cloud onto the image, collect the
points landing on each segmentation mask, and score how self-consistent each
mask's points are in reflectivity, normal direction, and cluster membership.
A correct extrinsic puts whole objects onto their own masks, so consistency
peaks at the true calibration. The search is brute force: a coarse rotation
grid around the initial guess, then greedy coordinate descent over all six
parameters on a finer lattice.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import Extrinsic, EulerAngles, Intrinsics, compose, euler_to_rotation
from .pointcloud import NOISE, AttributedCloud

__all__ = [
    "CalibrationError",
    "Mask",
    "Scene",
    "ConsistencyWeights",
    "SearchConfig",
    "MaskScore",
    "CalibrationResult",
    "points_in_mask",
    "reflectivity_consistency",
    "normal_consistency",
    "segmentation_consistency",
    "total_consistency",
    "coarse_search",
    "fine_search",
    "calibrate",
]


class CalibrationError(RuntimeError):
    """No scoreable mask: the extrinsic is hopeless or the masks are unusable."""


@dataclass
class Mask:
    """Binary image-plane membership matrix for one segment."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ValueError("mask must be a 2D binary matrix")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass
class Scene:
    """Everything the calibrator consumes for one frame.

    gt_extrinsic is evaluation-only metadata; the calibrator never reads it.
    """

    intrinsics: Intrinsics
    masks: list[Mask]
    cloud: AttributedCloud
    gt_extrinsic: Extrinsic | None = None

    def __post_init__(self):
        for m in self.masks:
            if (m.height, m.width) != (self.intrinsics.height, self.intrinsics.width):
                raise ValueError("mask dimensions do not match the image")


@dataclass(frozen=True)
class ConsistencyWeights:
    """Blend weights for the three per-mask sub-scores; must sum to 1."""

    w_reflect: float = 1.0 / 3.0
    w_normal: float = 1.0 / 3.0
    w_segment: float = 1.0 / 3.0

    def __post_init__(self):
        if min(self.w_reflect, self.w_normal, self.w_segment) < 0:
            raise ValueError("weights must be non-negative")
        if abs(self.w_reflect + self.w_normal + self.w_segment - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")


@dataclass(frozen=True)
class SearchConfig:
    """Grid geometry for the two search stages.

    Rotation quantities are degrees, translations meters. The coarse stage
    sweeps rotation only; the fine stage refines all six parameters.
    """

    coarse_rot_step: float = 5.0
    coarse_rot_range: float = 25.0
    fine_rot_step: float = 0.5
    fine_trans_step: float = 0.05
    fine_range_rot: float = 5.0
    fine_range_trans: float = 0.3
    min_points_per_mask: int = 20

    def __post_init__(self):
        for step, rng, name in (
            (self.coarse_rot_step, self.coarse_rot_range, "coarse rotation"),
            (self.fine_rot_step, self.fine_range_rot, "fine rotation"),
            (self.fine_trans_step, self.fine_range_trans, "fine translation"),
        ):
            if step <= 0:
                raise ValueError(f"{name} step must be positive")
            if rng < step:
                raise ValueError(f"{name} range must be >= its step")
        if self.min_points_per_mask < 1:
            raise ValueError("min_points_per_mask must be >= 1")


@dataclass
class MaskScore:
    """Per-mask breakdown at a given extrinsic."""

    mask_index: int
    point_count: int
    reflect: float
    normal: float
    segment: float
    score: float


@dataclass
class CalibrationResult:
    extrinsic: Extrinsic
    score: float
    candidates_evaluated: int
    per_mask_scores: list[MaskScore] = field(default_factory=list)


def points_in_mask(mask: Mask, cloud: AttributedCloud, k: Intrinsics, h: Extrinsic) -> np.ndarray:
    """Indices of cloud points whose rounded projection lands on the mask."""
    scorer = _SceneScorer.single_mask(mask, cloud, k)
    idx, member = scorer.project(h)
    return idx[member[0]]


def reflectivity_consistency(r: np.ndarray, min_points: int = 1) -> float | None:
    """1 / (1 + population std) of the normalized reflectivities, in (0, 1].

    Returns None (skip) for fewer than min_points values.
    """
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if r.size < max(min_points, 1):
        return None
    return 1.0 / (1.0 + float(np.std(r)))


def normal_consistency(normals: np.ndarray) -> float | None:
    """Mean pairwise dot product of unit normals, in [-1, 1].

    Uses the closed form (|sum n|^2 - m) / (m (m - 1)), which equals the
    O(m^2) pairwise mean because every |n_i|^2 term is 1. Returns None for
    fewer than 2 normals.
    """
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    m = normals.shape[0]
    if m < 2:
        return None
    s = normals.sum(axis=0)
    return (float(s @ s) - m) / (m * (m - 1))


def segmentation_consistency(classes: np.ndarray) -> float | None:
    """Squared-frequency purity of the non-noise class labels, in (0, 1].

    sum over classes of (count / total)^2: maximal when one cluster owns the
    mask, lower the more clusters mix. Returns None when every point is
    NOISE.
    """
    classes = np.asarray(classes).reshape(-1)
    kept = classes[classes != NOISE]
    if kept.size == 0:
        return None
    counts = np.bincount(kept)
    frac = counts[counts > 0] / kept.size
    return float(np.sum(frac * frac))


class _SceneScorer:
    """Precomputed projection/scoring state shared across many candidates."""

    def __init__(self, scene: Scene):
        self.cloud = scene.cloud
        self.k = scene.intrinsics
        self.width = scene.intrinsics.width
        self.height = scene.intrinsics.height
        self.mask_bits = [m.bits for m in scene.masks]

    @classmethod
    def single_mask(cls, mask: Mask, cloud: AttributedCloud, k: Intrinsics):
        scorer = cls.__new__(cls)
        scorer.cloud = cloud
        scorer.k = k
        scorer.width = k.width
        scorer.height = k.height
        scorer.mask_bits = [np.asarray(mask.bits, dtype=bool)]
        return scorer

    def project(self, h: Extrinsic):
        """Project the cloud; returns (valid indices, per-mask membership)."""
        cam = self.cloud.xyz @ h.rotation.T + h.translation
        z = cam[:, 2]
        front = z > 0.0
        u = np.rint(self.k.fx * cam[front, 0] / z[front] + self.k.u0)
        v = np.rint(self.k.fy * cam[front, 1] / z[front] + self.k.v0)
        inside = (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)
        idx = np.nonzero(front)[0][inside]
        ui = u[inside].astype(np.int64)
        vi = v[inside].astype(np.int64)
        member = [bits[vi, ui] for bits in self.mask_bits]
        return idx, member

    def score(self, h: Extrinsic, w: ConsistencyWeights, cfg: SearchConfig, details: bool = False):
        """Point-count-weighted mean of per-mask consistency scores.

        Masks with fewer than cfg.min_points_per_mask projected points (or
        with only NOISE points) contribute nothing. Returns -inf when no
        mask is scoreable, so hopeless candidates lose any argmax.
        """
        idx, member = self.project(h)
        weighted = 0.0
        total_points = 0
        breakdown: list[MaskScore] = []
        for mask_index, hit in enumerate(member):
            sel = idx[hit]
            m = sel.size
            if m < cfg.min_points_per_mask:
                continue
            s_reflect = reflectivity_consistency(self.cloud.reflectivity[sel])
            s_normal = normal_consistency(self.cloud.normals[sel])
            s_segment = segmentation_consistency(self.cloud.classes[sel])
            if s_reflect is None or s_normal is None or s_segment is None:
                continue
            blended = w.w_reflect * s_reflect + w.w_normal * s_normal + w.w_segment * s_segment
            weighted += m * blended
            total_points += m
            if details:
                breakdown.append(MaskScore(mask_index, m, s_reflect, s_normal, s_segment, blended))
        if total_points == 0:
            return (-math.inf, breakdown) if details else -math.inf
        total = weighted / total_points
        return (total, breakdown) if details else total


def total_consistency(scene: Scene, h: Extrinsic, w: ConsistencyWeights, cfg: SearchConfig) -> float:
    """Consistency score of one extrinsic; raises if no mask is scoreable."""
    score = _SceneScorer(scene).score(h, w, cfg)
    if score == -math.inf:
        raise CalibrationError("no mask passed the minimum point threshold")
    return score


def _offsets(half_range: float, step: float) -> np.ndarray:
    n = int(math.floor(half_range / step + 1e-9))
    return np.arange(-n, n + 1) * step


def _perturb(anchor: Extrinsic, rot_deg: np.ndarray, trans: np.ndarray) -> Extrinsic:
    """Left-compose a small Euler/translation perturbation onto an extrinsic."""
    delta = Extrinsic(
        euler_to_rotation(EulerAngles(*np.radians(rot_deg))),
        np.asarray(trans, dtype=np.float64),
    )
    return compose(delta, anchor)


class _CountingScorer:
    """Wraps _SceneScorer with a candidate counter and a lattice-point cache."""

    def __init__(self, scene: Scene, w: ConsistencyWeights, cfg: SearchConfig):
        self.scorer = _SceneScorer(scene)
        self.w = w
        self.cfg = cfg
        self.evaluations = 0
        self.cache: dict[tuple, float] = {}

    def score_offsets(self, anchor: Extrinsic, rot_deg, trans, key=None) -> float:
        if key is not None and key in self.cache:
            return self.cache[key]
        value = self.scorer.score(_perturb(anchor, np.asarray(rot_deg, dtype=np.float64), trans), self.w, self.cfg)
        self.evaluations += 1
        if key is not None:
            self.cache[key] = value
        return value


def coarse_search(
    scene: Scene,
    h_init: Extrinsic,
    w: ConsistencyWeights | None = None,
    cfg: SearchConfig | None = None,
    threads: int = 1,
    _counter: _CountingScorer | None = None,
) -> Extrinsic:
    """Exhaustive rotation grid around h_init; translation stays fixed.

    Returns the argmax extrinsic. Ties break toward the smallest rotation
    offset from h_init, then first in lexicographic (theta, omega, psi) grid
    order, so the result is deterministic however candidates are evaluated.
    """
    w = w or ConsistencyWeights()
    cfg = cfg or SearchConfig()
    counter = _counter or _CountingScorer(scene, w, cfg)

    values = _offsets(cfg.coarse_rot_range, cfg.coarse_rot_step)
    grid = [
        np.array([dt, dw, dp])
        for dt in values
        for dw in values
        for dp in values
    ]

    zero_trans = np.zeros(3)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(lambda g: counter.score_offsets(h_init, g, zero_trans), grid))
    else:
        scores = [counter.score_offsets(h_init, g, zero_trans) for g in grid]

    best = None
    for g, score in zip(grid, scores):
        offset = float(np.linalg.norm(g))
        if best is None or score > best[0] or (score == best[0] and offset < best[1]):
            best = (score, offset, g)
    if best[0] == -math.inf:
        raise CalibrationError("no grid candidate produced a scoreable mask")
    return _perturb(h_init, best[2], zero_trans)


def fine_search(
    scene: Scene,
    h_coarse: Extrinsic,
    w: ConsistencyWeights | None = None,
    cfg: SearchConfig | None = None,
    _counter: _CountingScorer | None = None,
) -> Extrinsic:
    """Greedy coordinate descent over all 6 parameters on a fine lattice.

    Parameters sweep in the fixed order theta, omega, psi, tx, ty, tz; a
    move is taken only if it strictly improves the score, so every sweep
    either improves or terminates. The lattice is anchored at h_coarse,
    which keeps the state space finite and guarantees termination.
    """
    w = w or ConsistencyWeights()
    cfg = cfg or SearchConfig()
    counter = _counter or _CountingScorer(scene, w, cfg)

    rot_values = _offsets(cfg.fine_range_rot, cfg.fine_rot_step)
    trans_values = _offsets(cfg.fine_range_trans, cfg.fine_trans_step)
    lattices = [rot_values] * 3 + [trans_values] * 3

    state = [int(np.argmin(np.abs(lat))) for lat in lattices]  # start at zero offset

    def candidate_key(s):
        return tuple(s)

    def score_state(s):
        rot = np.array([lattices[0][s[0]], lattices[1][s[1]], lattices[2][s[2]]])
        trans = np.array([lattices[3][s[3]], lattices[4][s[4]], lattices[5][s[5]]])
        return counter.score_offsets(h_coarse, rot, trans, key=candidate_key(s))

    best_score = score_state(state)
    improved = True
    while improved:
        improved = False
        for param in range(6):
            # Nearest improving value along this axis. Cautious single-step
            # moves track curved valleys that a jump to the axis argmax
            # would cut across; the termination condition (no improving
            # single-parameter move anywhere) is unaffected.
            for dist in range(1, len(lattices[param])):
                moved = False
                for idx in (state[param] - dist, state[param] + dist):
                    if idx < 0 or idx >= len(lattices[param]):
                        continue
                    trial = list(state)
                    trial[param] = idx
                    score = score_state(trial)
                    if score > best_score:
                        best_score = score
                        state[param] = idx
                        improved = True
                        moved = True
                        break
                if moved:
                    break

    rot = np.array([lattices[0][state[0]], lattices[1][state[1]], lattices[2][state[2]]])
    trans = np.array([lattices[3][state[3]], lattices[4][state[4]], lattices[5][state[5]]])
    return _perturb(h_coarse, rot, trans)


def calibrate(
    scene: Scene,
    h_init: Extrinsic,
    w: ConsistencyWeights | None = None,
    cfg: SearchConfig | None = None,
    threads: int = 1,
) -> CalibrationResult:
    """Full coarse-then-fine pipeline; returns the refined extrinsic + report."""
    if not scene.masks:
        raise CalibrationError("scene has no masks")
    if len(scene.cloud) == 0:
        raise CalibrationError("scene has an empty cloud")
    w = w or ConsistencyWeights()
    cfg = cfg or SearchConfig()

    counter = _CountingScorer(scene, w, cfg)
    h_coarse = coarse_search(scene, h_init, w, cfg, threads=threads, _counter=counter)
    h_fine = fine_search(scene, h_coarse, w, cfg, _counter=counter)

    score, breakdown = counter.scorer.score(h_fine, w, cfg, details=True)
    if score == -math.inf:
        raise CalibrationError("refined extrinsic has no scoreable mask")
    return CalibrationResult(
        extrinsic=h_fine,
        score=score,
        candidates_evaluated=counter.evaluations,
        per_mask_scores=breakdown,
    )
