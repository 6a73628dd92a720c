"""Dataset storage, sequence preprocessing, and a synthetic scene generator.

On-disk layout of one dataset root:

    root/<seq_id>/camera.txt          pinhole parameters, one line
    root/<seq_id>/poses.csv           frame_index,px,py,pz,qw,qx,qy,qz
    root/<seq_id>/rgb/%06d.png        8-bit color frames
    root/<seq_id>/depth/%06d.pfm      float32 z-depth, grayscale PFM

Poses are world-frame camera positions plus camera-to-world orientation
quaternions.  Loading converts them to per-step relative motions; frame
0 always carries the identity motion.

The synthetic generator renders camera trajectories through analytic
scenes (textured plane, smooth height field, sphere sprites over a
backdrop), producing pixel-exact z-depth ground truth alongside the
procedurally textured renderings.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .exceptions import (
    CorruptDepth,
    DegenerateSpec,
    MissingFile,
    PoseCountMismatch,
    ShapeMismatch,
)
from .geometry import (
    Intrinsics,
    RigidTransform,
    compose,
    load_camera_file,
    relative_motion,
    rotation_from_quaternion,
    rotation_to_quaternion,
    save_camera_file,
)
from .ops import resize_bilinear, resize_nearest

POSES_HEADER = "frame_index,px,py,pz,qw,qx,qy,qz"


@dataclass
class Frame:
    rgb: np.ndarray          # (H, W, 3) float32 in [0, 1]
    gt_depth: np.ndarray     # (H, W) float32, strictly positive
    motion: RigidTransform   # maps this frame's camera coords to the previous frame's


@dataclass
class SequenceSample:
    frames: list
    intrinsics: Intrinsics
    seq_id: str = ""
    poses: np.ndarray = None  # optional (N, 7) world poses px..qz

    def __len__(self):
        return len(self.frames)


# ---------------------------------------------------------------------------
# File formats


def save_pfm(path, depth):
    """Grayscale PFM, scale -1.0 (little-endian), rows bottom-up."""
    arr = np.asarray(depth, dtype="<f4")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ShapeMismatch(f"depth map must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(arr).tobytes())


def load_pfm(path):
    if not os.path.exists(path):
        raise MissingFile(f"depth file not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        magic_end = blob.index(b"\n")
        dims_end = blob.index(b"\n", magic_end + 1)
        scale_end = blob.index(b"\n", dims_end + 1)
        magic = blob[:magic_end].strip()
        w, h = (int(v) for v in blob[magic_end + 1 : dims_end].split())
        scale = float(blob[dims_end + 1 : scale_end])
    except (ValueError, IndexError) as exc:
        raise CorruptDepth(f"{path}: unparseable PFM header") from exc
    if magic != b"Pf":
        raise CorruptDepth(f"{path}: expected grayscale PFM, magic was {magic!r}")
    data = blob[scale_end + 1 :]
    if len(data) != 4 * w * h:
        raise CorruptDepth(f"{path}: expected {4 * w * h} payload bytes, found {len(data)}")
    endian = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=endian).reshape(h, w).astype(np.float32)
    arr = np.flipud(arr).copy()
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise CorruptDepth(f"{path}: depth values must be finite and positive")
    return arr


def save_rgb_png(path, rgb):
    arr = np.asarray(rgb)
    arr8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr8, mode="RGB").save(path)


def load_rgb_png(path):
    if not os.path.exists(path):
        raise MissingFile(f"image not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float32) / np.float32(255.0)


def save_poses_csv(path, poses):
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim != 2 or poses.shape[1] != 7:
        raise ShapeMismatch(f"poses must be (N, 7), got shape {poses.shape}")
    with open(path, "w") as fh:
        fh.write(POSES_HEADER + "\n")
        for idx, row in enumerate(poses):
            fh.write(f"{idx}," + ",".join(repr(float(v)) for v in row) + "\n")


def load_poses_csv(path):
    if not os.path.exists(path):
        raise MissingFile(f"pose file not found: {path}")
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("frame_index"):
                continue
            parts = line.split(",")
            if len(parts) != 8:
                raise PoseCountMismatch(f"{path}: expected 8 columns, got {len(parts)}")
            rows.append((int(parts[0]), [float(v) for v in parts[1:]]))
    rows.sort(key=lambda r: r[0])
    for want, (got, _) in enumerate(rows):
        if got != want:
            raise PoseCountMismatch(f"{path}: frame indices not contiguous at {got}")
    return np.array([vals for _, vals in rows], dtype=np.float64).reshape(-1, 7)


def pose_row_to_transform(row) -> RigidTransform:
    """World pose row (px,py,pz,qw,qx,qy,qz) to a camera-to-world transform."""
    return RigidTransform.from_world_pose(np.asarray(row[:3]), np.asarray(row[3:7]))


def motions_from_pose_rows(poses):
    transforms = [pose_row_to_transform(row) for row in poses]
    motions = [RigidTransform.identity()]
    for prev, cur in zip(transforms[:-1], transforms[1:]):
        motions.append(relative_motion(prev, cur))
    return motions


# ---------------------------------------------------------------------------
# Dataset load/save


def save_sequence(root, seq_id, sample: SequenceSample):
    """Write one sequence in the on-disk layout; requires absolute poses."""
    if sample.poses is None:
        raise ValueError("sample has no absolute poses to serialize")
    if len(sample.poses) != len(sample.frames):
        raise PoseCountMismatch(
            f"{len(sample.poses)} poses for {len(sample.frames)} frames"
        )
    seq_dir = os.path.join(root, str(seq_id))
    os.makedirs(os.path.join(seq_dir, "rgb"), exist_ok=True)
    os.makedirs(os.path.join(seq_dir, "depth"), exist_ok=True)
    save_camera_file(sample.intrinsics, os.path.join(seq_dir, "camera.txt"))
    save_poses_csv(os.path.join(seq_dir, "poses.csv"), sample.poses)
    for idx, frame in enumerate(sample.frames):
        save_rgb_png(os.path.join(seq_dir, "rgb", f"{idx:06d}.png"), frame.rgb)
        save_pfm(os.path.join(seq_dir, "depth", f"{idx:06d}.pfm"), frame.gt_depth)


def _numbered_files(directory, suffix):
    if not os.path.isdir(directory):
        raise MissingFile(f"missing directory: {directory}")
    pat = re.compile(r"^(\d{6})\." + re.escape(suffix) + "$")
    found = {}
    for name in os.listdir(directory):
        m = pat.match(name)
        if m:
            found[int(m.group(1))] = os.path.join(directory, name)
    for want in range(len(found)):
        if want not in found:
            raise MissingFile(f"{directory}: frame {want:06d}.{suffix} is missing")
    return [found[i] for i in range(len(found))]


def load_sequence(seq_dir, seq_id="") -> SequenceSample:
    k = load_camera_file(os.path.join(seq_dir, "camera.txt"))
    poses = load_poses_csv(os.path.join(seq_dir, "poses.csv"))
    rgb_paths = _numbered_files(os.path.join(seq_dir, "rgb"), "png")
    depth_paths = _numbered_files(os.path.join(seq_dir, "depth"), "pfm")
    if not (len(poses) == len(rgb_paths) == len(depth_paths)):
        raise PoseCountMismatch(
            f"{seq_dir}: {len(poses)} poses, {len(rgb_paths)} images, "
            f"{len(depth_paths)} depth maps"
        )
    motions = motions_from_pose_rows(poses)
    frames = [
        Frame(rgb=load_rgb_png(rp), gt_depth=load_pfm(dp), motion=m)
        for rp, dp, m in zip(rgb_paths, depth_paths, motions)
    ]
    return SequenceSample(frames=frames, intrinsics=k, seq_id=seq_id, poses=poses)


def sequence_ids(root):
    """Sequence directory names under root, numerically when possible."""
    if not os.path.isdir(root):
        raise MissingFile(f"dataset root not found: {root}")
    names = [n for n in os.listdir(root) if os.path.isdir(os.path.join(root, n))]

    def key(name):
        return (0, int(name)) if name.isdigit() else (1, name)

    return sorted(names, key=key)


def load_dataset(root):
    """Iterate SequenceSamples for every sequence directory under root."""
    for name in sequence_ids(root):
        yield load_sequence(os.path.join(root, name), seq_id=name)


def split_midair_style(trajectory_ids):
    """Ids divisible by 3 (including 0) go to the test split."""
    train, test = [], []
    for tid in trajectory_ids:
        (test if int(tid) % 3 == 0 else train).append(tid)
    return train, test


# ---------------------------------------------------------------------------
# Preprocessing


def preprocess(sample: SequenceSample, subsample=4, clip_len=8, out_size=384):
    """Frame-rate subsampling, motion compounding, clipping, resizing.

    Keeps every subsample-th frame (the first kept frame is original
    index subsample-1), composes the skipped per-step motions into one
    transform per kept step, cuts the result into non-overlapping clips
    of clip_len frames (dropping the remainder), and resizes color maps
    bilinearly / depth maps by nearest neighbour to out_size x out_size
    with rescaled intrinsics.
    """
    if len(sample.frames) < 1:
        raise ShapeMismatch("sample has no frames")
    kept_idx = list(range(subsample - 1, len(sample.frames), subsample))
    kept = []
    for pos, m in enumerate(kept_idx):
        frame = sample.frames[m]
        if pos == 0:
            motion = RigidTransform.identity()
        else:
            motion = sample.frames[m].motion
            for i in range(m - 1, kept_idx[pos - 1], -1):
                motion = compose(sample.frames[i].motion, motion)
        kept.append((frame, motion, m))

    k_out = sample.intrinsics.scaled(out_size, out_size)
    clips = []
    for start in range(0, len(kept) - clip_len + 1, clip_len):
        chunk = kept[start : start + clip_len]
        frames = []
        for offset, (frame, motion, _) in enumerate(chunk):
            rgb = resize_bilinear(frame.rgb, out_size, out_size)
            depth = resize_nearest(frame.gt_depth[..., None], out_size, out_size)[..., 0]
            frames.append(
                Frame(
                    rgb=rgb,
                    gt_depth=depth,
                    motion=RigidTransform.identity() if offset == 0 else motion,
                )
            )
        poses = None
        if sample.poses is not None:
            poses = sample.poses[[m for _, _, m in chunk]]
        clips.append(
            SequenceSample(
                frames=frames,
                intrinsics=k_out,
                seq_id=f"{sample.seq_id}/clip{len(clips)}" if sample.seq_id else "",
                poses=poses,
            )
        )
    return clips


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass(frozen=True)
class SceneSpec:
    """Description of one synthetic camera flight through an analytic scene."""

    geometry: str = "plane"        # plane | height_field | sprites
    trajectory: str = "straight"   # straight | arc | spline
    texture_seed: int = 0
    speed: float = 1.0             # meters per second
    fps: float = 4.0
    frame_count: int = 8
    intrinsics: Intrinsics = field(
        default_factory=lambda: Intrinsics(
            fx=64.0, fy=64.0, s=0.0, cx=31.5, cy=31.5, width=64, height=64
        )
    )
    base_depth: float = 10.0       # nominal distance to the scene
    direction: tuple = (0.0, 0.0, 1.0)  # straight-trajectory heading, camera frame

    def __post_init__(self):
        if self.geometry not in ("plane", "height_field", "sprites"):
            raise DegenerateSpec(f"unknown geometry {self.geometry!r}")
        if self.trajectory not in ("straight", "arc", "spline"):
            raise DegenerateSpec(f"unknown trajectory {self.trajectory!r}")
        if self.frame_count < 1 or self.speed < 0 or self.fps <= 0 or self.base_depth <= 0:
            raise DegenerateSpec("frame_count, fps, base_depth must be positive")


class _Texture:
    """Smooth periodic RGB texture: a small bank of seeded sinusoids."""

    def __init__(self, seed, base_freq):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E8]))
        n = 4
        self.freq = rng.uniform(0.3, 1.0, size=(3, n, 2)) * base_freq
        self.phase = rng.uniform(0, 2 * np.pi, size=(3, n))
        self.amp = rng.uniform(0.5, 1.0, size=(3, n))

    def __call__(self, u, v):
        out = np.empty(u.shape + (3,), dtype=np.float64)
        for c in range(3):
            acc = np.zeros_like(u)
            for k in range(self.freq.shape[1]):
                acc += self.amp[c, k] * np.sin(
                    self.freq[c, k, 0] * u + self.freq[c, k, 1] * v + self.phase[c, k]
                )
            out[..., c] = 0.5 + 0.35 * acc / self.amp[c].sum()
        return out


def _quantize_rgb(rgb):
    """8-bit rounding applied at render time, so PNG storage is lossless."""
    arr8 = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    return arr8.astype(np.float32) / np.float32(255.0)


def _euler_to_quaternion(yaw, pitch, roll):
    """Z-Y-X Euler angles to a (qw, qx, qy, qz) camera-to-world quaternion."""
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    return np.array(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
    )


def _trajectory_poses(spec: SceneSpec, seed):
    """World positions + orientation quaternions for every frame."""
    step = spec.speed / spec.fps
    n = spec.frame_count
    rows = np.zeros((n, 7), dtype=np.float64)
    if spec.trajectory == "straight":
        d = np.asarray(spec.direction, dtype=np.float64)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise DegenerateSpec("straight trajectory needs a nonzero direction")
        d = d / norm
        for t in range(n):
            rows[t, :3] = step * t * d
            rows[t, 3] = 1.0
    elif spec.trajectory == "arc":
        # circular path in the x-z plane, yawing along the tangent
        radius = max(20.0 * step, 4.0 * spec.base_depth)
        dtheta = step / radius
        for t in range(n):
            th = dtheta * t
            rows[t, 0] = radius * (1.0 - np.cos(th))
            rows[t, 2] = radius * np.sin(th)
            rows[t, 3:7] = _euler_to_quaternion(yaw=th, pitch=0.0, roll=0.0)
    else:  # spline: smooth seeded low-frequency wander on all six axes
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5914]))
        freqs = rng.uniform(0.05, 0.25, size=(6, 2))
        phases = rng.uniform(0, 2 * np.pi, size=(6, 2))
        amps = rng.uniform(0.5, 1.0, size=(6, 2))
        amps /= amps.sum(axis=1, keepdims=True)
        ang_scale = 0.05  # radians; keeps the scene inside the frustum

        def channel(i, t):
            return float(np.sum(amps[i] * np.sin(freqs[i] * t + phases[i])))

        for t in range(n):
            base = np.array([channel(0, t), channel(1, t), channel(2, t)])
            drift = np.array([0.15, 0.08, 1.0])
            drift /= np.linalg.norm(drift)
            rows[t, :3] = step * (t * drift + 1.5 * base)
            rows[t, 3:7] = _euler_to_quaternion(
                yaw=ang_scale * channel(3, t),
                pitch=ang_scale * channel(4, t),
                roll=ang_scale * channel(5, t),
            )
    return rows


def _pixel_rays(k: Intrinsics):
    jj, ii = np.meshgrid(
        np.arange(k.height, dtype=np.float64),
        np.arange(k.width, dtype=np.float64),
        indexing="ij",
    )
    return np.stack(
        [(ii - k.cx) / k.fx, (jj - k.cy) / k.fy, np.ones_like(ii)], axis=-1
    )


class _PlaneScene:
    def __init__(self, spec, seed):
        self.z0 = spec.base_depth
        self.tex = _Texture(spec.texture_seed, base_freq=0.9)

    def trace(self, origin, dirs_world):
        wz = dirs_world[..., 2]
        if np.any(wz <= 1e-9):
            raise DegenerateSpec("camera ray parallel to or facing away from the plane")
        t = (self.z0 - origin[2]) / wz
        if np.any(t <= 0):
            raise DegenerateSpec("plane ended up behind the camera")
        px = origin[0] + t * dirs_world[..., 0]
        py = origin[1] + t * dirs_world[..., 1]
        return t, self.tex(px, py)


class _HeightFieldScene:
    """Surface z = z0 + relief(x, y), single-valued along the view axis."""

    def __init__(self, spec, seed):
        self.z0 = spec.base_depth
        self.amp = 0.18 * spec.base_depth
        rng = np.random.default_rng(np.random.SeedSequence([spec.texture_seed, 0xF1E1D]))
        self.freq = rng.uniform(0.15, 0.5, size=(3, 2))
        self.phase = rng.uniform(0, 2 * np.pi, size=3)
        self.tex = _Texture(spec.texture_seed, base_freq=0.8)

    def surface_z(self, x, y):
        acc = np.zeros_like(x)
        for k in range(3):
            acc += np.sin(self.freq[k, 0] * x + self.freq[k, 1] * y + self.phase[k])
        return self.z0 + self.amp * (acc / 3.0)

    def trace(self, origin, dirs_world):
        h, w = dirs_world.shape[:2]
        t_lo = np.full((h, w), 0.05)
        f_lo = self._above(origin, dirs_world, t_lo)
        if np.any(f_lo >= 0):
            raise DegenerateSpec("camera starts at or below the height field")
        t_hi = np.full((h, w), 0.05)
        found = np.zeros((h, w), dtype=bool)
        t_max = 4.0 * (self.z0 + self.amp)
        steps = 72
        dt = (t_max - 0.05) / steps
        cur = t_lo.copy()
        for _ in range(steps):
            nxt = cur + dt
            f_nxt = self._above(origin, dirs_world, nxt)
            newly = (~found) & (f_nxt >= 0)
            t_lo = np.where(newly, cur, t_lo)
            t_hi = np.where(newly, nxt, t_hi)
            found |= newly
            cur = nxt
        if not np.all(found):
            raise DegenerateSpec("height field does not cover the full frame")
        for _ in range(50):
            mid = 0.5 * (t_lo + t_hi)
            above = self._above(origin, dirs_world, mid) >= 0
            t_hi = np.where(above, mid, t_hi)
            t_lo = np.where(above, t_lo, mid)
        t = 0.5 * (t_lo + t_hi)
        px = origin[0] + t * dirs_world[..., 0]
        py = origin[1] + t * dirs_world[..., 1]
        return t, self.tex(px, py)

    def _above(self, origin, dirs_world, t):
        px = origin[0] + t * dirs_world[..., 0]
        py = origin[1] + t * dirs_world[..., 1]
        pz = origin[2] + t * dirs_world[..., 2]
        return pz - self.surface_z(px, py)


class _SpriteScene:
    """A few solid spheres floating in front of a textured backdrop."""

    def __init__(self, spec, seed):
        self.z0 = spec.base_depth
        rng = np.random.default_rng(np.random.SeedSequence([spec.texture_seed, 0x59123]))
        n = 5
        span = 0.35 * spec.base_depth
        self.centers = np.stack(
            [
                rng.uniform(-span, span, size=n),
                rng.uniform(-span, span, size=n),
                rng.uniform(0.45 * spec.base_depth, 0.8 * spec.base_depth, size=n),
            ],
            axis=-1,
        )
        self.radii = rng.uniform(0.06, 0.12, size=n) * spec.base_depth
        self.tex = _Texture(spec.texture_seed, base_freq=0.9)
        self.sphere_tex = _Texture(spec.texture_seed + 1, base_freq=2.5)

    def trace(self, origin, dirs_world):
        wz = dirs_world[..., 2]
        if np.any(wz <= 1e-9):
            raise DegenerateSpec("backdrop plane not visible from the camera")
        t = (self.z0 - origin[2]) / wz
        if np.any(t <= 0):
            raise DegenerateSpec("backdrop ended up behind the camera")
        px = origin[0] + t * dirs_world[..., 0]
        py = origin[1] + t * dirs_world[..., 1]
        rgb = self.tex(px, py)

        a = np.einsum("hwc,hwc->hw", dirs_world, dirs_world)
        for center, radius in zip(self.centers, self.radii):
            o = origin - center
            b = 2.0 * np.einsum("hwc,c->hw", dirs_world, o)
            c = float(o @ o) - radius * radius
            disc = b * b - 4.0 * a * c
            hit = disc > 0
            sq = np.sqrt(np.where(hit, disc, 0.0))
            t_hit = (-b - sq) / (2.0 * a)
            closer = hit & (t_hit > 1e-6) & (t_hit < t)
            if np.any(closer):
                hx = origin[0] + t_hit * dirs_world[..., 0]
                hy = origin[1] + t_hit * dirs_world[..., 1]
                hz = origin[2] + t_hit * dirs_world[..., 2]
                srgb = self.sphere_tex(hx + 3.1 * hz, hy - 1.7 * hz)
                t = np.where(closer, t_hit, t)
                rgb = np.where(closer[..., None], srgb, rgb)
        return t, rgb


_SCENES = {
    "plane": _PlaneScene,
    "height_field": _HeightFieldScene,
    "sprites": _SpriteScene,
}


def generate_synthetic(spec: SceneSpec, seed=0) -> SequenceSample:
    """Render one camera flight; depth maps are exact ray-intersection z."""
    scene = _SCENES[spec.geometry](spec, seed)
    poses = _trajectory_poses(spec, seed)
    k = spec.intrinsics
    rays = _pixel_rays(k)
    motions = motions_from_pose_rows(poses)
    frames = []
    for row, motion in zip(poses, motions):
        r_cw = rotation_from_quaternion(*row[3:7])
        origin = row[:3]
        dirs_world = rays @ r_cw.T
        depth, rgb = scene.trace(origin, dirs_world)
        if np.any(depth <= 0) or not np.all(np.isfinite(depth)):
            raise DegenerateSpec("trajectory produced non-positive or non-finite depth")
        frames.append(
            Frame(
                rgb=_quantize_rgb(rgb),
                gt_depth=depth.astype(np.float32),
                motion=motion,
            )
        )
    return SequenceSample(frames=frames, intrinsics=k, poses=poses)
