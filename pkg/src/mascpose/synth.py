"""Deterministic synthetic skeletal motion, camera projection and pose I/O.

Motion is generated by forward kinematics over the default 17-joint tree:
per-frame joint rotations applied to fixed bone offsets, so bone lengths are
constant by construction. Three motion families are provided: a periodic
gait cycle (walk in place), a smooth reach transition, and seeded
band-limited random motion. Sequences are projected to pixels through an
ideal pinhole camera with optional Gaussian pixel noise and a synthetic
confidence score.

World frame: Z up, X forward (the subject faces +X), millimetres.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileFormatError, GenerationError, ParameterError
from .skeleton import PARENTS_17, SkeletonTopology, default_h36m_topology

PSEQ_MAGIC = b"PSEQ"
PSEQ_VERSION = 1

MOTION_KINDS = ("gait_cycle", "reach_transition", "random_smooth")

# bone offsets (child relative to parent, mm) for the default 17-joint tree
REST_OFFSETS_17 = {
    1: (0.0, -130.0, 0.0),
    2: (0.0, 0.0, -450.0),
    3: (0.0, 0.0, -440.0),
    4: (0.0, 130.0, 0.0),
    5: (0.0, 0.0, -450.0),
    6: (0.0, 0.0, -440.0),
    7: (0.0, 0.0, 230.0),
    8: (0.0, 0.0, 250.0),
    9: (0.0, 0.0, 120.0),
    10: (0.0, 0.0, 130.0),
    11: (0.0, 190.0, 0.0),
    12: (0.0, 0.0, -280.0),
    13: (0.0, 0.0, -250.0),
    14: (0.0, -190.0, 0.0),
    15: (0.0, 0.0, -280.0),
    16: (0.0, 0.0, -250.0),
}
ROOT_HEIGHT_MM = 950.0
LEG_LENGTH_MM = 890.0


@dataclass
class PoseSequence:
    """A [T, J, C] coordinate array with frame-rate metadata."""

    data: np.ndarray
    fps: float = 50.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ParameterError(f"pose sequence must be [T, J, C], got shape {self.data.shape}")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_joints(self) -> int:
        return self.data.shape[1]


@dataclass
class MotionSpec:
    kind: str
    duration_frames: int
    fps: float = 50.0
    amplitude_mm: float = 250.0
    period_frames: int = 27
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MOTION_KINDS:
            raise ParameterError(f"unknown motion kind {self.kind!r}, expected one of {MOTION_KINDS}")
        if self.duration_frames < 3:
            raise ParameterError(f"duration_frames must be >= 3, got {self.duration_frames}")
        if self.period_frames < 2:
            raise ParameterError(f"period_frames must be >= 2, got {self.period_frames}")
        if self.amplitude_mm <= 0:
            raise ParameterError(f"amplitude_mm must be positive, got {self.amplitude_mm}")


@dataclass
class CameraSpec:
    focal_px: float = 1100.0
    principal_point: tuple[float, float] = (500.0, 500.0)
    position_mm: tuple[float, float, float] = (4000.0, 0.0, 1100.0)
    look_at_mm: tuple[float, float, float] = (0.0, 0.0, 1000.0)
    noise_std_px: float = 0.0
    confidence_model: str = "ideal"

    def __post_init__(self):
        if self.focal_px <= 0:
            raise ParameterError(f"focal_px must be positive, got {self.focal_px}")
        if tuple(self.position_mm) == tuple(self.look_at_mm):
            raise ParameterError("camera position must differ from its look-at point")
        if self.confidence_model not in ("ideal", "noise_inverse"):
            raise ParameterError(f"unknown confidence model {self.confidence_model!r}")


def _rot_y(theta: np.ndarray) -> np.ndarray:
    """Rotation about the lateral (Y) axis: swings Z-down limbs into X."""
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros(theta.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    return out


def _rot_x(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros(theta.shape + (3, 3))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = c
    out[..., 1, 2] = -s
    out[..., 2, 1] = s
    out[..., 2, 2] = c
    return out


def _forward_kinematics(local_rots: np.ndarray, root_pos: np.ndarray) -> np.ndarray:
    """Positions [T, 17, 3] from per-joint local rotations and root track."""
    t = local_rots.shape[0]
    pos = np.zeros((t, 17, 3))
    glob = np.zeros((t, 17, 3, 3))
    pos[:, 0] = root_pos
    glob[:, 0] = local_rots[:, 0]
    for j in range(1, 17):
        parent = PARENTS_17[j]
        off = np.asarray(REST_OFFSETS_17[j])
        pos[:, j] = pos[:, parent] + np.einsum("tab,b->ta", glob[:, parent], off)
        glob[:, j] = glob[:, parent] @ local_rots[:, j]
    return pos


def _identity_rots(t: int) -> np.ndarray:
    rots = np.zeros((t, 17, 3, 3))
    rots[:, :] = np.eye(3)
    return rots


def generate_motion(spec: MotionSpec, topo: SkeletonTopology | None = None) -> PoseSequence:
    """World-frame joint trajectory [T, J, 3] in mm with rigid bones."""
    topo = topo if topo is not None else default_h36m_topology()
    if topo.num_joints != 17:
        raise ParameterError("the synthetic generator supports the default 17-joint skeleton only")
    t = spec.duration_frames
    amp = spec.amplitude_mm / LEG_LENGTH_MM  # angular amplitude in radians
    rots = _identity_rots(t)
    root = np.zeros((t, 3))
    root[:, 2] = ROOT_HEIGHT_MM

    if spec.kind == "gait_cycle":
        # phase from the integer frame index mod period: frames one period
        # apart get bit-identical phases, hence bit-identical poses
        frames = np.arange(t)
        phase = 2.0 * np.pi * ((frames % spec.period_frames) / spec.period_frames)
        swing = amp * np.sin(phase)
        rots[:, 1] = _rot_y(swing)
        rots[:, 4] = _rot_y(-swing)
        rots[:, 2] = _rot_y(0.4 * amp * (1.0 - np.cos(phase)))
        rots[:, 5] = _rot_y(0.4 * amp * (1.0 + np.cos(phase)))
        rots[:, 14] = _rot_y(-0.5 * swing)
        rots[:, 11] = _rot_y(0.5 * swing)
        rots[:, 15] = _rot_y(np.full(t, 0.3))
        rots[:, 12] = _rot_y(np.full(t, 0.3))
        rots[:, 7] = _rot_x(0.05 * amp * np.sin(phase))
        root[:, 2] += 0.05 * spec.amplitude_mm * np.sin(2.0 * phase)
    elif spec.kind == "reach_transition":
        u = np.arange(t) / (t - 1)
        s = 3.0 * u * u - 2.0 * u**3  # smoothstep 0 -> 1
        rots[:, 14] = _rot_y(-1.2 * amp * s)
        rots[:, 15] = _rot_y(0.6 - 0.5 * s)
        rots[:, 11] = _rot_y(0.2 * amp * s)
        rots[:, 12] = _rot_y(np.full(t, 0.4))
        rots[:, 7] = _rot_y(0.15 * amp * s)
        root[:, 2] += -30.0 * s
    elif spec.kind == "random_smooth":
        rng = np.random.default_rng(spec.seed)
        u = np.arange(t)
        for j in range(1, 17):
            theta = np.zeros(t)
            for h in (1, 2, 3):
                coeff = rng.uniform(0.0, amp / h)
                phi = rng.uniform(0.0, 2.0 * np.pi)
                theta += coeff * np.sin(2.0 * np.pi * h * u / t + phi)
            axis = rng.integers(0, 2)
            rots[:, j] = _rot_x(theta) if axis == 0 else _rot_y(theta)
        root[:, 2] += 20.0 * np.sin(2.0 * np.pi * u / t + rng.uniform(0, 2 * np.pi))

    pos = _forward_kinematics(rots, root)
    return PoseSequence(pos, fps=spec.fps)


def root_relative(seq: PoseSequence, root_index: int = 0) -> PoseSequence:
    """Subtract the per-frame root position (the 3D regression target)."""
    centered = seq.data - seq.data[:, root_index : root_index + 1, :]
    return PoseSequence(centered, fps=seq.fps)


def _camera_basis(cam: CameraSpec) -> tuple[np.ndarray, np.ndarray]:
    pos = np.asarray(cam.position_mm, dtype=np.float64)
    fwd = np.asarray(cam.look_at_mm, dtype=np.float64) - pos
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])  # rows: image x, image y, optical axis
    return rot, pos


def project(seq3d: PoseSequence, cam: CameraSpec, seed=0) -> PoseSequence:
    """Pinhole projection to (x_px, y_px, confidence).

    Pixel noise is Gaussian with std ``cam.noise_std_px``; confidence is 1.0
    under the ideal model and 1/(1 + |noise|/std) under ``noise_inverse``.
    """
    rot, pos = _camera_basis(cam)
    world = seq3d.data
    cam_coords = (world - pos) @ rot.T
    depth = cam_coords[..., 2]
    if np.any(depth <= 1e-6):
        t_bad, j_bad = np.argwhere(depth <= 1e-6)[0]
        raise GenerationError(f"joint {j_bad} of frame {t_bad} is behind the camera")
    cx, cy = cam.principal_point
    u = cam.focal_px * cam_coords[..., 0] / depth + cx
    v = cam.focal_px * cam_coords[..., 1] / depth + cy
    t, j = u.shape
    if cam.noise_std_px > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, cam.noise_std_px, size=(t, j, 2))
        u = u + noise[..., 0]
        v = v + noise[..., 1]
        if cam.confidence_model == "noise_inverse":
            mag = np.linalg.norm(noise, axis=-1)
            conf = 1.0 / (1.0 + mag / cam.noise_std_px)
        else:
            conf = np.ones((t, j))
    else:
        conf = np.ones((t, j))
    out = np.stack([u, v, conf], axis=-1)
    return PoseSequence(out, fps=seq3d.fps)


# -- PSEQ binary format --------------------------------------------------------


def write_pseq(path, seq: PoseSequence) -> None:
    t, j, c = seq.data.shape
    with open(path, "wb") as fh:
        fh.write(PSEQ_MAGIC)
        fh.write(struct.pack("<IIII", PSEQ_VERSION, t, j, c))
        fh.write(struct.pack("<d", float(seq.fps)))
        fh.write(np.ascontiguousarray(seq.data, dtype="<f8").tobytes())


def read_pseq(path) -> PoseSequence:
    with open(path, "rb") as fh:
        raw = fh.read()
    header_len = 4 + 16 + 8
    if len(raw) < 4 or raw[:4] != PSEQ_MAGIC:
        raise FileFormatError(f"{path}: not a PSEQ file (bad magic)")
    if len(raw) < header_len:
        raise FileFormatError(f"{path}: truncated header at byte {len(raw)}")
    version, t, j, c = struct.unpack("<IIII", raw[4:20])
    if version != PSEQ_VERSION:
        raise FileFormatError(f"{path}: unsupported PSEQ version {version} (expected {PSEQ_VERSION})")
    (fps,) = struct.unpack("<d", raw[20:28])
    expected = header_len + 8 * t * j * c
    if len(raw) != expected:
        raise FileFormatError(
            f"{path}: payload ends at byte {len(raw)}, expected {expected} for shape ({t},{j},{c})"
        )
    data = np.frombuffer(raw[header_len:], dtype="<f8").reshape(t, j, c).astype(np.float64)
    return PoseSequence(data, fps=fps)


# -- dataset manifests -----------------------------------------------------------


@dataclass
class SequenceEntry:
    motion: MotionSpec
    camera: CameraSpec
    seed: int = 0


@dataclass
class DatasetManifest:
    name: str
    sequences: list[SequenceEntry]
    seed: int = 0
    topology: str | None = None

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(
            {
                "name": self.name,
                "seed": self.seed,
                "topology": self.topology,
                "sequences": [
                    {
                        "motion": {
                            "kind": e.motion.kind,
                            "duration_frames": e.motion.duration_frames,
                            "fps": e.motion.fps,
                            "amplitude_mm": e.motion.amplitude_mm,
                            "period_frames": e.motion.period_frames,
                            "seed": e.motion.seed,
                        },
                        "camera": {
                            "focal_px": e.camera.focal_px,
                            "principal_point": list(e.camera.principal_point),
                            "position_mm": list(e.camera.position_mm),
                            "look_at_mm": list(e.camera.look_at_mm),
                            "noise_std_px": e.camera.noise_std_px,
                            "confidence_model": e.camera.confidence_model,
                        },
                        "seed": e.seed,
                    }
                    for e in self.sequences
                ],
            },
            indent=indent,
        )

    @staticmethod
    def from_json(text: str) -> "DatasetManifest":
        obj = json.loads(text)
        entries = []
        for item in obj["sequences"]:
            cam = dict(item["camera"])
            for key in ("principal_point", "position_mm", "look_at_mm"):
                if key in cam:
                    cam[key] = tuple(cam[key])
            entries.append(
                SequenceEntry(
                    motion=MotionSpec(**item["motion"]),
                    camera=CameraSpec(**cam),
                    seed=int(item.get("seed", 0)),
                )
            )
        return DatasetManifest(
            name=obj["name"],
            sequences=entries,
            seed=int(obj.get("seed", 0)),
            topology=obj.get("topology"),
        )

    @staticmethod
    def load(path) -> "DatasetManifest":
        with open(path, "r", encoding="utf-8") as fh:
            return DatasetManifest.from_json(fh.read())


def _generate_entry(manifest: DatasetManifest, index: int, topo: SkeletonTopology):
    entry = manifest.sequences[index]
    motion = generate_motion(entry.motion, topo)
    x2d = project(motion, entry.camera, seed=[manifest.seed, index, entry.seed])
    y3d = root_relative(motion)
    return x2d, y3d


def generate_dataset(manifest: DatasetManifest, out_dir, threads: int = 1) -> list[tuple[str, str]]:
    """Materialize every sequence pair; returns the written (2d, 3d) paths.

    Each sequence's RNG stream is derived from (manifest seed, index, entry
    seed), so parallel and serial generation produce identical bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    topo = SkeletonTopology.load(manifest.topology) if manifest.topology else default_h36m_topology()
    n = len(manifest.sequences)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: _generate_entry(manifest, i, topo), range(n)))
    else:
        results = [_generate_entry(manifest, i, topo) for i in range(n)]
    paths = []
    for i, (x2d, y3d) in enumerate(results):
        p2d = out / f"{manifest.name}_{i:04d}_in2d.pseq"
        p3d = out / f"{manifest.name}_{i:04d}_gt3d.pseq"
        write_pseq(p2d, x2d)
        write_pseq(p3d, y3d)
        paths.append((str(p2d), str(p3d)))
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return paths


def load_dataset(data_dir) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """Load (2D input, 3D target, fps) triples from a generated directory."""
    root = Path(data_dir)
    pairs = []
    for p2d in sorted(root.glob("*_in2d.pseq")):
        p3d = Path(str(p2d).replace("_in2d.pseq", "_gt3d.pseq"))
        if not p3d.exists():
            raise FileFormatError(f"missing 3D companion file for {p2d}")
        s2d = read_pseq(p2d)
        s3d = read_pseq(p3d)
        pairs.append((s2d.data, s3d.data, s2d.fps))
    if not pairs:
        raise FileFormatError(f"no pose sequence pairs found in {data_dir}")
    return pairs
