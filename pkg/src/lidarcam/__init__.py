"""LiDAR-camera extrinsic calibration toolkit.

Modules:

* geometry       -- rotations, rigid transforms, pinhole projection, pose errors
* pointcloud     -- normals, intensity normalization, Euclidean clustering
* fusion_metrics -- depth-map rendering and the surveyed loss/cost operations
* calibrator     -- mask-consistency scoring and coarse-to-fine pose search
* harness        -- decalibration sampling and benchmark reporting
* ingest         -- KITTI readers, mask/scene I/O, synthetic scene generation
* cli            -- the `lidarcam` command-line front end
"""

from .calibrator import (
    CalibrationError,
    CalibrationResult,
    ConsistencyWeights,
    Mask,
    Scene,
    SearchConfig,
    calibrate,
)
from .geometry import Extrinsic, EulerAngles, Intrinsics, Pixel
from .harness import BenchmarkReport, DecalibSpec, run_benchmark
from .ingest import SyntheticSceneConfig, generate_synthetic_scene, load_scene
from .pointcloud import NOISE, AttributedCloud, attribute

__all__ = [
    "AttributedCloud",
    "BenchmarkReport",
    "CalibrationError",
    "CalibrationResult",
    "ConsistencyWeights",
    "DecalibSpec",
    "Extrinsic",
    "EulerAngles",
    "Intrinsics",
    "Mask",
    "NOISE",
    "Pixel",
    "Scene",
    "SearchConfig",
    "SyntheticSceneConfig",
    "attribute",
    "calibrate",
    "generate_synthetic_scene",
    "load_scene",
    "run_benchmark",
]

__version__ = "0.1.0"
