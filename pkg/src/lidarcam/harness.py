"""Decalibration sampling, error evaluation, and benchmark reporting.

Decalibrations are deliberate perturbations composed on the LEFT of the
ground-truth extrinsic (perturbing in the camera frame): H_init = phi * H_gt.
Sampling uses a fixed SplitMix64 generator keyed by (seed, trial) so every
trial is reproducible bit for bit across runs, platforms, and thread counts.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    Extrinsic,
    EulerAngles,
    compose,
    euler_to_rotation,
    invert,
    rotation_error_deg,
    translation_error_cm,
)

__all__ = [
    "DecalibSpec",
    "TrialResult",
    "BenchmarkReport",
    "SplitMix64",
    "sample_decalibration",
    "apply_decalibration",
    "recover_decalibration",
    "evaluate",
    "run_benchmark",
    "write_report",
    "read_report",
    "prediction_filename",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """The reference SplitMix64 generator (Steele/Vigna constants).

    Draws map to [0, 1) by taking the top 53 bits of each 64-bit output over
    2^53. Fixed here as the toolkit's reproducibility contract: any
    implementation following the same recipe reproduces our trials exactly.
    """

    def __init__(self, state: int):
        self.state = state & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_unit(self) -> float:
        return (self.next_u64() >> 11) / float(1 << 53)


@dataclass(frozen=True)
class DecalibSpec:
    """Per-axis perturbation bounds: rotation in degrees, translation meters."""

    rot_max: float = 25.0
    trans_max: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.rot_max < 0 or self.trans_max < 0:
            raise ValueError("perturbation bounds must be non-negative")


@dataclass
class TrialResult:
    trial: int
    decalibration: Extrinsic
    predicted: Extrinsic | None
    trans_err_cm: float
    rot_err_deg: float
    failed: bool = False


@dataclass
class BenchmarkReport:
    spec: DecalibSpec
    trials: list[TrialResult] = field(default_factory=list)

    @property
    def succeeded(self) -> list[TrialResult]:
        return [t for t in self.trials if not t.failed]

    @property
    def mean_trans_err_cm(self) -> float:
        ok = self.succeeded
        return float(np.mean([t.trans_err_cm for t in ok])) if ok else math.nan

    @property
    def mean_rot_err_deg(self) -> float:
        ok = self.succeeded
        return float(np.mean([t.rot_err_deg for t in ok])) if ok else math.nan


def _trial_rng(seed: int, trial: int) -> SplitMix64:
    return SplitMix64((seed ^ ((trial * _GOLDEN) & _MASK64)) & _MASK64)


def sample_decalibration(spec: DecalibSpec, trial: int) -> Extrinsic:
    """Deterministic random perturbation for one trial.

    Euler offsets are uniform per axis in [-rot_max, rot_max] degrees, then
    translations uniform in [-trans_max, trans_max] meters, drawn in the
    fixed order theta, omega, psi, tx, ty, tz.
    """
    rng = _trial_rng(spec.seed, trial)
    angles = [math.radians((2.0 * rng.next_unit() - 1.0) * spec.rot_max) for _ in range(3)]
    trans = [(2.0 * rng.next_unit() - 1.0) * spec.trans_max for _ in range(3)]
    return Extrinsic(euler_to_rotation(EulerAngles(*angles)), np.array(trans))


def apply_decalibration(h_gt: Extrinsic, phi: Extrinsic) -> Extrinsic:
    """H_init = phi * H_gt (perturbation composed in the camera frame)."""
    return compose(phi, h_gt)


def recover_decalibration(h_init: Extrinsic, h_gt: Extrinsic) -> Extrinsic:
    """Inverse of apply_decalibration: phi = H_init * H_gt^-1."""
    return compose(h_init, invert(h_gt))


def evaluate(h_pred: Extrinsic, h_gt: Extrinsic) -> tuple[float, float]:
    """(translation error cm, geodesic rotation error deg) between extrinsics."""
    return (
        translation_error_cm(h_pred.translation, h_gt.translation),
        rotation_error_deg(h_pred.rotation, h_gt.rotation),
    )


def prediction_filename(trial: int) -> str:
    return f"pred_{trial:05}.txt"


def _resolve_method(method):
    """Turn the method spec into a callable (scene, h_init, trial) -> Extrinsic.

    Accepts 'oracle' (returns ground truth), 'identity' / 'identity-passthrough'
    (returns the decalibrated initial guess), a directory of per-trial
    prediction files named pred_{trial:05}.txt, or any callable taking
    (scene, h_init).
    """
    if callable(method):
        return lambda scene, h_init, trial: method(scene, h_init)
    if method == "oracle":
        return lambda scene, h_init, trial: scene.gt_extrinsic
    if method in ("identity", "identity-passthrough"):
        return lambda scene, h_init, trial: h_init

    pred_dir = Path(method)
    if not pred_dir.is_dir():
        raise ValueError(f"unknown benchmark method: {method!r}")

    def from_files(scene, h_init, trial):
        path = pred_dir / prediction_filename(trial)
        if not path.exists():
            raise FileNotFoundError(f"missing prediction file {path}")
        return Extrinsic.load(path)

    return from_files


def run_benchmark(scenes, method, spec: DecalibSpec, n_trials: int, threads: int = 1) -> BenchmarkReport:
    """Run n_trials decalibrate-predict-evaluate rounds over the scenes.

    Trial i uses scenes[i % len(scenes)] and the decalibration keyed by
    (spec.seed, i). A method that raises marks its trial failed; failed
    trials are excluded from the means but stay in the report so a crashing
    method cannot look accurate.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no scenes to benchmark")
    for scene in scenes:
        if scene.gt_extrinsic is None:
            raise ValueError("every benchmark scene needs gt_extrinsic")
    predictor = _resolve_method(method)

    def run_trial(trial: int) -> TrialResult:
        scene = scenes[trial % len(scenes)]
        phi = sample_decalibration(spec, trial)
        h_init = apply_decalibration(scene.gt_extrinsic, phi)
        try:
            predicted = predictor(scene, h_init, trial)
        except Exception:
            return TrialResult(trial, phi, None, math.nan, math.nan, failed=True)
        trans_err, rot_err = evaluate(predicted, scene.gt_extrinsic)
        return TrialResult(trial, phi, predicted, trans_err, rot_err)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trials = list(pool.map(run_trial, range(n_trials)))
    else:
        trials = [run_trial(i) for i in range(n_trials)]
    trials.sort(key=lambda t: t.trial)
    return BenchmarkReport(spec=spec, trials=trials)


def write_report(report: BenchmarkReport, path) -> None:
    """CSV with one row per trial plus a trailing mean row, 9 sig. digits."""
    lines = ["trial,tx_err_cm,rot_err_deg"]
    for t in report.trials:
        lines.append(f"{t.trial},{t.trans_err_cm:.9g},{t.rot_err_deg:.9g}")
    lines.append(f"mean,{report.mean_trans_err_cm:.9g},{report.mean_rot_err_deg:.9g}")
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def read_report(path) -> tuple[list[tuple[int, float, float]], tuple[float, float]]:
    """Parse a write_report CSV back into (trial rows, (mean_t, mean_r))."""
    with open(path) as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines or lines[0] != "trial,tx_err_cm,rot_err_deg":
        raise ValueError("not a benchmark report CSV")
    rows = []
    means = None
    for line in lines[1:]:
        label, t_err, r_err = line.split(",")
        if label == "mean":
            means = (float(t_err), float(r_err))
        else:
            rows.append((int(label), float(t_err), float(r_err)))
    if means is None:
        raise ValueError("report is missing its mean row")
    return rows, means
