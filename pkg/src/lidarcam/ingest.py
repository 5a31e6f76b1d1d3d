"""KITTI-format readers, mask ingestion, synthetic scenes, overlay rendering.

Synthetic scenes are the toolkit's desk-scale test bed: a jittered grid of
constant-reflectivity planar objects at staggered depths, each with its own
near-tight segmentation mask rendered under the ground-truth extrinsic.
Because the masks tile the image densely and every object differs in
reflectivity, cluster id, and depth, any pose error beyond a few pixels
pushes points across mask boundaries and mixes objects, so the consistency
score peaks sharply at the true calibration instead of plateauing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibrator import Mask, Scene
from .geometry import Extrinsic, Intrinsics
from .pointcloud import attribute

__all__ = [
    "KittiCalib",
    "SyntheticSceneConfig",
    "read_velodyne_bin",
    "write_velodyne_bin",
    "read_kitti_calib",
    "kitti_intrinsics",
    "read_masks",
    "read_image",
    "write_ppm",
    "write_mask_png",
    "generate_synthetic_scene",
    "write_synthetic_scene",
    "load_manifest",
    "load_scene",
    "render_overlay",
]

_POINT_BYTES = 16  # four little-endian float32 per point


@dataclass
class KittiCalib:
    """Odometry-benchmark calib.txt content: P0..P3 plus the Tr transform."""

    p: list[np.ndarray]
    tr: np.ndarray

    def tr_extrinsic(self) -> Extrinsic:
        """Tr as an Extrinsic, re-orthonormalizing mild numeric drift.

        The rotation block must be within 1e-3 of orthonormal; anything
        worse is treated as a corrupt file.
        """
        r = self.tr[:, :3]
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > 1e-3 or np.linalg.det(r) < 0:
            raise ValueError("Tr rotation block is not close to orthonormal")
        u, _, vt = np.linalg.svd(r)
        r_fixed = u @ vt
        if np.linalg.det(r_fixed) < 0:
            u[:, -1] *= -1
            r_fixed = u @ vt
        return Extrinsic(r_fixed, self.tr[:, 3])


def read_velodyne_bin(data: bytes) -> np.ndarray:
    """Parse a velodyne .bin payload into an (N, 4) float32 array.

    Columns are x, y, z, reflectance. Point order is preserved and the
    parse is lossless: write_velodyne_bin(read_velodyne_bin(b)) == b.
    """
    if len(data) % _POINT_BYTES != 0:
        raise ValueError(f"payload length {len(data)} is not a multiple of {_POINT_BYTES}")
    points = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    bad = np.nonzero(np.isnan(points[:, :3]).any(axis=1))[0]
    if bad.size:
        raise ValueError(f"NaN coordinates at point index {bad[0]}")
    return points.copy()


def write_velodyne_bin(points: np.ndarray) -> bytes:
    points = np.ascontiguousarray(points, dtype="<f4").reshape(-1, 4)
    return points.tobytes()


def read_kitti_calib(text: str) -> KittiCalib:
    """Parse odometry-format calib.txt (P0..P3 and Tr, 12 floats each)."""
    values: dict[str, np.ndarray] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, payload = line.split(":", 1)
        fields = payload.split()
        if len(fields) != 12:
            raise ValueError(f"{key}: expected 12 values, got {len(fields)}")
        values[key.strip()] = np.array([float(v) for v in fields]).reshape(3, 4)
    missing = [k for k in ("P0", "P1", "P2", "P3", "Tr") if k not in values]
    if missing:
        raise ValueError(f"calib.txt is missing keys: {', '.join(missing)}")
    return KittiCalib(p=[values[f"P{i}"] for i in range(4)], tr=values["Tr"])


def kitti_intrinsics(calib: KittiCalib, width: int, height: int, camera: int = 0) -> Intrinsics:
    """Pinhole intrinsics from one of the calib's projection matrices."""
    p = calib.p[camera]
    return Intrinsics(width=width, height=height, fx=p[0, 0], fy=p[1, 1], u0=p[0, 2], v0=p[1, 2])


def read_masks(directory) -> list[Mask]:
    """Load all *.png in a directory as binary masks, lexicographic order.

    Pixels above 127 are members. All masks must share one image size.
    """
    from PIL import Image

    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise ValueError(f"no mask PNGs in {directory}")
    masks = []
    for path in paths:
        with Image.open(path) as img:
            gray = np.asarray(img.convert("L"))
        masks.append(Mask(gray > 127))
    shapes = {m.bits.shape for m in masks}
    if len(shapes) != 1:
        raise ValueError(f"mask dimensions differ across {directory}")
    return masks


def write_mask_png(path, bits: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.where(bits, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def read_image(path) -> np.ndarray:
    """Any common image file as an (H, W, 3) uint8 RGB array."""
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def write_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6) writer; byte-stable, no codec in the loop."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) uint8 image")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def _default_intrinsics() -> Intrinsics:
    return Intrinsics(width=640, height=480, fx=525.0, fy=525.0, u0=320.0, v0=240.0)


def _default_gt() -> Extrinsic:
    # KITTI-style sensor layout: LiDAR x-forward/y-left/z-up into camera
    # x-right/y-down/z-forward, plus a small mounting offset.
    r = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    return Extrinsic(r, np.array([0.02, -0.06, -0.25]))


@dataclass(frozen=True)
class SyntheticSceneConfig:
    """Deterministic desk-scale scene recipe.

    A canvas extending guard_margin_px beyond the image on every side is
    carved into object_count cells by a randomized binary space partition,
    one object per cell. Objects whose footprint lies fully inside the
    image get a segmentation mask; objects in the guard band get points but
    no mask. The guards are what keep the consistency score honest under
    large pose errors: a displaced pose drags unmasked guard objects onto
    the masks, so purity falls with displacement instead of points quietly
    leaking off the image. The BSP makes the layout aperiodic (no rigid
    shift lines objects up with wrong masks) and depth slots are
    anti-colored so adjacent objects never share a depth: every seam shears
    under any pose error, and each object stays its own Euclidean cluster.
    kinds entries are 'plane' (default) or 'box'; reflectivities are raw
    per-object intensity values, auto-spread and shuffled when omitted.
    """

    seed: int = 0
    object_count: int = 3
    kinds: tuple[str, ...] | None = None
    reflectivities: tuple[float, ...] | None = None
    points_per_object: int = 1667
    intrinsics: Intrinsics = field(default_factory=_default_intrinsics)
    gt_extrinsic: Extrinsic = field(default_factory=_default_gt)
    min_depth: float = 2.0
    min_depth_gap: float = 0.9
    mask_dilation_px: int = 3
    guard_margin_px: int = 0
    cluster_radius: float = 0.5
    normal_k: int = 10
    cluster_min_pts: int = 5

    def __post_init__(self):
        if self.object_count < 1:
            raise ValueError("need at least one object")
        if self.points_per_object < 16:
            raise ValueError("points_per_object too small for a stable grid")
        if self.kinds is not None and len(self.kinds) != self.object_count:
            raise ValueError("kinds must list one entry per object")
        if self.reflectivities is not None and len(self.reflectivities) != self.object_count:
            raise ValueError("reflectivities must list one entry per object")


def _plane_grid(cx, cy, z, half_w, half_h, n_points, shear_u=0.0, shear_v=0.0) -> np.ndarray:
    """Uniform fronto-parallel lattice filling the full rectangle.

    The optional shears offset each row's x by a fraction of the column
    pitch (mod the pitch, so the rectangle stays exactly filled) and
    likewise each column's y. Without them every lattice column shares one
    projected u, whole columns cross mask edges at once, and the
    consistency score degenerates into a staircase the search cannot
    descend.
    """
    g = max(2, round(math.sqrt(n_points)))
    pitch_x = 2 * half_w / g
    pitch_y = 2 * half_h / g
    i, j = np.meshgrid(np.arange(g, dtype=np.float64), np.arange(g, dtype=np.float64))
    xs = -half_w + (i + (j * shear_u) % 1.0) * pitch_x
    ys = -half_h + (j + (i * shear_v) % 1.0) * pitch_y
    return np.column_stack([cx + xs.ravel(), cy + ys.ravel(), np.full(g * g, z)])


def _box_grids(cx, cy, z, half_w, half_h, n_points) -> np.ndarray:
    """Front face plus top and right faces of a shallow axis-aligned box.

    The depth extent stays well below the default clustering radius so a
    box remains one cluster and never bridges the depth ladder to a
    neighboring object.
    """
    depth = min(0.2, 0.8 * min(half_w, half_h))
    front = _plane_grid(cx, cy, z, half_w, half_h, n_points // 2)
    g = max(2, round(math.sqrt(n_points // 4)))
    zs = np.linspace(z, z + depth, g)
    xs = np.linspace(cx - half_w, cx + half_w, g)
    ys = np.linspace(cy - half_h, cy + half_h, g)
    xg, zg = np.meshgrid(xs, zs)
    top = np.column_stack([xg.ravel(), np.full(xg.size, cy - half_h), zg.ravel()])
    yg, zg = np.meshgrid(ys, zs)
    right = np.column_stack([np.full(yg.size, cx + half_w), yg.ravel(), zg.ravel()])
    return np.vstack([front, top, right])


def _pixel_rect(u, v) -> tuple[int, int, int, int]:
    """Inclusive integer bbox (u_min, u_max, v_min, v_max) of rounded pixels."""
    ur = np.rint(u).astype(np.int64)
    vr = np.rint(v).astype(np.int64)
    return int(ur.min()), int(ur.max()), int(vr.min()), int(vr.max())




def _rects_overlap(a, b) -> bool:
    return not (a[1] < b[0] or b[1] < a[0] or a[3] < b[2] or b[3] < a[2])


_MIN_CELL_SIDE = 70.0  # px; refuse BSP splits that would create slivers


def _bsp_cells(rng, width: float, height: float, count: int) -> list[tuple[float, float, float, float]]:
    """Carve (0,0,width,height) into count cells with randomized splits.

    Always splits the largest remaining cell, cutting its longer side at a
    random 38..62% fraction: cell sizes stay comparable (no object can
    dominate the score) while the seams are aperiodic.
    """
    cells = [(0.0, 0.0, float(width), float(height))]
    while len(cells) < count:
        order = sorted(range(len(cells)), key=lambda j: -cells[j][2] * cells[j][3])
        i = next((j for j in order if max(cells[j][2], cells[j][3]) >= 2 * _MIN_CELL_SIDE), None)
        if i is None:
            raise ValueError("too many objects for the image: cells are too small")
        u, v, w, h = cells.pop(i)
        frac = rng.uniform(0.38, 0.62)
        if w >= h:
            cells += [(u, v, w * frac, h), (u + w * frac, v, w * (1 - frac), h)]
        else:
            cells += [(u, v, w, h * frac), (u, v + h * frac, w, h * (1 - frac))]
    return cells


def generate_synthetic_scene(cfg: SyntheticSceneConfig) -> Scene:
    """Build a Scene (attributed cloud + perfect masks + ground truth).

    Object geometry lives in the camera frame and is mapped into the LiDAR
    frame by the inverse ground-truth extrinsic; coordinates are snapped to
    float32 so an in-memory scene matches one round-tripped through the
    velodyne .bin format bit for bit.
    """
    points, intensities, masks, _ = _build_scene_parts(cfg)
    cloud = attribute(
        points[:, :3].astype(np.float64),
        points[:, 3].astype(np.float64),
        k=cfg.normal_k,
        radius=cfg.cluster_radius,
        min_pts=cfg.cluster_min_pts,
    )
    return Scene(
        intrinsics=cfg.intrinsics,
        masks=masks,
        cloud=cloud,
        gt_extrinsic=cfg.gt_extrinsic,
    )


_GRID_SPACING_CAP = 0.2  # m; keeps k-NN neighborhoods inside one object

_DEPTH_SLOTS = 16  # ladder length; slots are reused across distant cells


def _anticolor_slots(cells, n_slots: int, center=(0.0, 0.0)) -> np.ndarray:
    """Assign depth-ladder slots so adjacent cells get far-apart slots.

    Adjacent objects at similar depths share a displacement field under any
    pose error, letting small errors slide whole seams without mixing
    points across masks. Maximizing the slot gap between neighbors forces
    shear at every seam, which is what makes the consistency score sharp.
    Greedy: visit cells from the image periphery inward (peripheral cells
    claim the near slots first, where radial leverage makes depth errors
    visible), give each the slot that maximizes the minimum ladder distance
    to its assigned neighbors, avoiding reuse within two hops (slot reuse
    at two hops is safe: the cells are at least a cell apart laterally, so
    their clusters stay separate).
    """
    n = len(cells)
    adjacent = np.zeros((n, n), dtype=bool)
    for i in range(n):
        ui, vi, wi, hi = cells[i]
        for j in range(i + 1, n):
            uj, vj, wj, hj = cells[j]
            touch_u = ui < uj + wj + 2 and uj < ui + wi + 2
            touch_v = vi < vj + hj + 2 and vj < vi + hi + 2
            adjacent[i, j] = adjacent[j, i] = touch_u and touch_v
    two_hop = adjacent @ adjacent | adjacent

    def radius(i):
        u, v, w, h = cells[i]
        return math.hypot(u + w / 2 - center[0], v + h / 2 - center[1])

    order = sorted(range(n), key=lambda i: (-radius(i), i))
    slots = np.full(n, -1, dtype=np.int64)
    for i in order:
        neighbor_slots = [slots[j] for j in range(n) if adjacent[i, j] and slots[j] >= 0]
        blocked = {slots[j] for j in range(n) if two_hop[i, j] and slots[j] >= 0}
        candidates = [s for s in range(n_slots) if s not in blocked] or list(range(n_slots))
        if neighbor_slots:
            slots[i] = max(candidates, key=lambda s: (min(abs(s - t) for t in neighbor_slots), -s))
        else:
            slots[i] = candidates[0]
    return slots


def _build_scene_parts(cfg: SyntheticSceneConfig):
    rng = np.random.default_rng(cfg.seed)
    k = cfg.intrinsics
    width, height = k.width, k.height
    margin = cfg.guard_margin_px
    count = cfg.object_count

    kinds = cfg.kinds or tuple(["plane"] * count)
    if cfg.reflectivities is not None:
        reflect = list(cfg.reflectivities)
    else:
        spread = [20.0 + 220.0 * i / max(1, count - 1) for i in range(count)]
        reflect = [spread[j] for j in rng.permutation(count)]

    cells = _bsp_cells(rng, width + 2 * margin, height + 2 * margin, count)
    cells = [(u - margin, v - margin, w, h) for u, v, w, h in cells]
    depth_slot = _anticolor_slots(cells, min(count, _DEPTH_SLOTS), center=(k.u0, k.v0))

    clouds_cam: list[np.ndarray] = []
    for i, (cu0, cv0, cw, ch) in enumerate(cells):
        z = cfg.min_depth + cfg.min_depth_gap * depth_slot[i] + rng.uniform(-0.05, 0.05)
        shear_u = rng.uniform(0.3, 0.7)
        shear_v = rng.uniform(0.3, 0.7)
        inset_u = float(cfg.mask_dilation_px)
        inset_v = float(cfg.mask_dilation_px)
        if kinds[i] == "box":
            # The rear faces project inward; shrink so the footprint stays
            # inside the cell.
            r_max = max(
                math.hypot(cu - k.u0, cv - k.v0)
                for cu in (cu0, cu0 + cw)
                for cv in (cv0, cv0 + ch)
            )
            inset_u += r_max * 0.2 / z
            inset_v += r_max * 0.2 / z
        hw_px = cw / 2.0 - inset_u
        hh_px = ch / 2.0 - inset_v
        if min(hw_px, hh_px) < 12:
            raise ValueError("object cell too small after insets")
        cu = cu0 + cw / 2.0
        cv = cv0 + ch / 2.0
        cx = (cu - k.u0) / k.fx * z
        cy = (cv - k.v0) / k.fy * z
        half_w = hw_px * z / k.fx
        half_h = hh_px * z / k.fy

        # Near-equal counts keep any one mask from dominating the weighted
        # mean; the spacing cap adds points for far objects when needed.
        g_cap = math.ceil(1 + 2 * max(half_w, half_h) / _GRID_SPACING_CAP)
        n_points = max(cfg.points_per_object, g_cap * g_cap)
        if kinds[i] == "box":
            pts = _box_grids(cx, cy, z, half_w, half_h, n_points)
        else:
            pts = _plane_grid(cx, cy, z, half_w, half_h, n_points,
                              shear_u=shear_u, shear_v=shear_v)
        clouds_cam.append(pts)

    footprints = []
    for pts in clouds_cam:
        u = k.fx * pts[:, 0] / pts[:, 2] + k.u0
        v = k.fy * pts[:, 1] / pts[:, 2] + k.v0
        footprints.append(_pixel_rect(u, v))
    for i in range(count):
        for j in range(i + 1, count):
            if _rects_overlap(footprints[i], footprints[j]):
                raise ValueError("objects cannot be placed with disjoint image footprints")

    # Masks for objects fully inside the image: footprint rectangles grown
    # by the dilation, meeting at the cell seams with no dead gap between
    # them. Guard-band objects stay unmasked.
    masks = []
    masked_reflect = []
    d = cfg.mask_dilation_px
    for rect, value in zip(footprints, reflect):
        if rect[0] < 0 or rect[2] < 0 or rect[1] >= width or rect[3] >= height:
            continue
        bits = np.zeros((height, width), dtype=bool)
        bits[max(0, rect[2] - d) : rect[3] + 1 + d, max(0, rect[0] - d) : rect[1] + 1 + d] = True
        masks.append(Mask(bits))
        masked_reflect.append(value)
    if not masks:
        raise ValueError("no object lies fully inside the image; shrink guard_margin_px")

    # Assemble the LiDAR-frame cloud with per-object constant intensity.
    inv_gt = cfg.gt_extrinsic.inverse()
    parts = []
    intensities = []
    for pts, value in zip(clouds_cam, reflect):
        parts.append(inv_gt.apply(pts))
        intensities.append(np.full(pts.shape[0], value))
    xyz = np.vstack(parts)
    intensity = np.concatenate(intensities)
    points = np.column_stack([xyz, intensity]).astype(np.float32)
    points = np.ascontiguousarray(points)

    image = _render_scene_image(masks, masked_reflect, width, height)
    return points, intensity, masks, image


def _render_scene_image(masks, reflect, width, height) -> np.ndarray:
    """Flat gray rendering of the masks, just enough for overlay demos."""
    image = np.full((height, width, 3), 16, dtype=np.uint8)
    for mask, value in zip(masks, reflect):
        gray = int(np.clip(30 + value, 0, 255))
        image[mask.bits] = (gray, gray, gray)
    return image


def write_synthetic_scene(cfg: SyntheticSceneConfig, out_dir) -> Path:
    """Write the scene bundle (image, cloud, masks, calib, manifest) to disk.

    Deterministic: rerunning with the same cfg rewrites identical bytes.
    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points, _, masks, image = _build_scene_parts(cfg)

    write_ppm(out_dir / "image.ppm", image)
    with open(out_dir / "cloud.bin", "wb") as f:
        f.write(write_velodyne_bin(points))

    mask_dir = out_dir / "masks"
    mask_dir.mkdir(exist_ok=True)
    for i, mask in enumerate(masks):
        write_mask_png(mask_dir / f"mask_{i:03}.png", mask.bits)

    k = cfg.intrinsics
    proj = f"{k.fx:.17g} 0 {k.u0:.17g} 0 0 {k.fy:.17g} {k.v0:.17g} 0 0 0 1 0"
    tr = cfg.gt_extrinsic.as_matrix()[:3]
    tr_line = " ".join(f"{v:.17g}" for v in tr.ravel())
    with open(out_dir / "calib.txt", "w") as f:
        for i in range(4):
            f.write(f"P{i}: {proj}\n")
        f.write(f"Tr: {tr_line}\n")

    manifest = out_dir / "scene.manifest"
    with open(manifest, "w") as f:
        f.write("image=image.ppm\ncloud=cloud.bin\nmasks=masks\ncalib=calib.txt\n")
    return manifest


def load_manifest(path) -> dict[str, Path]:
    """Parse a scene manifest into absolute paths for image/cloud/masks/calib."""
    path = Path(path)
    entries: dict[str, Path] = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad manifest line: {line!r}")
            key, value = line.split("=", 1)
            entries[key.strip()] = (path.parent / value.strip()).resolve()
    missing = [k for k in ("image", "cloud", "masks", "calib") if k not in entries]
    if missing:
        raise ValueError(f"manifest is missing entries: {', '.join(missing)}")
    return entries


def load_scene(manifest_path, k: int = 10, radius: float = 0.5, min_pts: int = 5, camera: int = 0) -> Scene:
    """Load a scene bundle and run the attribution pipeline on its cloud."""
    paths = load_manifest(manifest_path)
    with open(paths["cloud"], "rb") as f:
        points = read_velodyne_bin(f.read())
    with open(paths["calib"]) as f:
        calib = read_kitti_calib(f.read())
    image = read_image(paths["image"])
    height, width = image.shape[:2]
    intrinsics = kitti_intrinsics(calib, width, height, camera=camera)
    masks = read_masks(paths["masks"])
    cloud = attribute(
        points[:, :3].astype(np.float64),
        points[:, 3].astype(np.float64),
        k=k,
        radius=radius,
        min_pts=min_pts,
    )
    return Scene(
        intrinsics=intrinsics,
        masks=masks,
        cloud=cloud,
        gt_extrinsic=calib.tr_extrinsic(),
    )


def render_overlay(image: np.ndarray, points: np.ndarray, k: Intrinsics, h: Extrinsic, path=None):
    """Draw the projected cloud over an RGB image, colored by depth.

    Colors run red (near) to blue (far), linear in inverse depth over the
    2..80 m range. Behind-camera and out-of-image points are skipped.
    Returns (overlay image, number of points drawn); writes a binary PPM
    when path is given.
    """
    from .geometry import project_points

    out = np.array(image, dtype=np.uint8, copy=True)
    height, width = out.shape[:2]
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    drawn = 0
    if points.shape[0]:
        u, v, z, valid = project_points(points, k, h)
        ui = np.rint(u[valid]).astype(np.int64)
        vi = np.rint(v[valid]).astype(np.int64)
        zi = z[valid]
        inside = (ui >= 0) & (ui < width) & (vi >= 0) & (vi < height)
        ui, vi, zi = ui[inside], vi[inside], zi[inside]
        t = np.clip((1.0 / zi - 1.0 / 80.0) / (1.0 / 2.0 - 1.0 / 80.0), 0.0, 1.0)
        colors = np.column_stack([
            np.rint(255.0 * t),
            np.zeros_like(t),
            np.rint(255.0 * (1.0 - t)),
        ]).astype(np.uint8)
        out[vi, ui] = colors
        drawn = int(ui.size)
    if path is not None:
        write_ppm(path, out)
    return out, drawn
