"""Skeleton sequence data model, file formats, synthetic data, and corruption.

A sequence is T frames of J joints in 3D sensor coordinates plus a bone list.
Corruption (random rotation / joint removal / joint disturbance) is a pure
function of (sequence, spec): the spec's seed is mixed with a digest of the
input coordinates, so one spec applied across a dataset gives varied but
bit-reproducible noise.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptySequence, ParseError, SpecError, UnsupportedSkeleton

NTU_JOINT_COUNT = 25

# Kinect v2 skeleton tree (24 bones over 25 joints), the standard template
# used by graph-based recognizers on this data.
NTU_BONES: tuple[tuple[int, int], ...] = (
    (0, 1), (1, 20), (20, 2), (2, 3),
    (20, 4), (4, 5), (5, 6), (6, 7), (7, 21), (7, 22),
    (20, 8), (8, 9), (9, 10), (10, 11), (11, 23), (11, 24),
    (0, 12), (12, 13), (13, 14), (14, 15),
    (0, 16), (16, 17), (17, 18), (18, 19),
)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SkeletonSequence:
    """T x J x 3 joint coordinates with bone connectivity.

    Immutable after construction; `valid_mask[t, j]` is False where joint j
    is missing at frame t (its stored coordinates are then zero).
    """

    frames: np.ndarray
    bones: tuple[tuple[int, int], ...]
    label: int = -1
    valid_mask: np.ndarray | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise SpecError(f"frames must be (T, J, 3), got {frames.shape}")
        t, j, _ = frames.shape
        if t < 1:
            raise EmptySequence("sequence has zero frames")
        if j < 2:
            raise SpecError(f"need at least 2 joints, got {j}")
        bones = tuple((int(p), int(c)) for p, c in self.bones)
        for p, c in bones:
            if not (0 <= p < j and 0 <= c < j):
                raise SpecError(f"bone ({p}, {c}) out of range for J={j}")
        mask = self.valid_mask
        if mask is None:
            mask = np.ones((t, j), dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (t, j):
                raise SpecError(f"valid_mask must be (T, J), got {mask.shape}")
        if not np.all(np.isfinite(frames[mask])):
            raise SpecError("non-finite coordinates at valid joints")
        object.__setattr__(self, "frames", _frozen(frames))
        object.__setattr__(self, "bones", bones)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "valid_mask", _frozen(mask))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]

    def with_frames(self, frames, valid_mask=None) -> "SkeletonSequence":
        return replace(
            self,
            frames=frames,
            valid_mask=self.valid_mask if valid_mask is None else valid_mask,
        )


@dataclass(frozen=True)
class CorruptionSpec:
    """One of three corruption protocols, fully determined by its fields.

    kind='rotation': one uniform angle per axis in [-rotation_bound,
    +rotation_bound], composed X.Y.Z, applied to every frame of the sequence.
    kind='remove_joints': zero out `joints_per_frame` joints (and clear their
    mask) in round(affected_frame_fraction * T) frames.
    kind='disturb_joints': add Gaussian(noise_mean, noise_std) noise to the
    coordinates of `joints_per_frame` joints in the sampled frames.
    """

    kind: str
    rotation_bound: float = 0.0
    affected_frame_fraction: float = 0.0
    joints_per_frame: int = 0
    noise_mean: float = 0.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("rotation", "remove_joints", "disturb_joints"):
            raise SpecError(f"unknown corruption kind {self.kind!r}")
        if self.rotation_bound < 0:
            raise SpecError("rotation_bound must be >= 0")
        if not 0.0 <= self.affected_frame_fraction <= 1.0:
            raise SpecError("affected_frame_fraction must be in [0, 1]")
        if self.joints_per_frame < 0:
            raise SpecError("joints_per_frame must be >= 0")
        if self.noise_std < 0:
            raise SpecError("noise_std must be >= 0")


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    """Spec for the synthetic benchmark generator.

    Classes come in pairs sharing a base motion; the two classes of a pair
    differ only in the oscillation amplitude of one hand along a direction
    that `view_ambiguity` slides from the camera plane (0) to the depth
    axis (1), so high ambiguity makes the pair look identical from the
    canonical front view while remaining separable in 3D.
    """

    num_classes: int
    sequences_per_class: int
    frames: int
    joints: int
    view_ambiguity: float
    seed: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise SpecError("num_classes must be >= 2")
        if self.sequences_per_class < 1:
            raise SpecError("sequences_per_class must be >= 1")
        if self.frames < 2:
            raise SpecError("frames must be >= 2")
        if self.joints < 5:
            raise SpecError("need at least 5 joints (torso plus one limb)")
        if not 0.0 <= self.view_ambiguity <= 1.0:
            raise SpecError("view_ambiguity must be in [0, 1]")


# ---------------------------------------------------------------------------
# NTU raw .skeleton ingestion
# ---------------------------------------------------------------------------


class _LineReader:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next_line(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise ParseError(f"unexpected end of file, expected {what}",
                             line=self.pos + 1)
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def next_int(self, what: str) -> int:
        line = self.next_line(what)
        try:
            return int(line.strip())
        except ValueError:
            raise ParseError(f"expected {what}, got {line.strip()!r}",
                             line=self.pos) from None


def parse_ntu_skeleton(text: str) -> SkeletonSequence:
    """Parse raw NTU `.skeleton` text into a 25-joint sequence.

    Keeps the first body of every frame; frames with no tracked body are
    zero-filled with their mask cleared. Per-joint trailing fields (depth,
    color, orientation, tracking state) are ignored.
    """
    reader = _LineReader(text)
    num_frames = reader.next_int("frame count")
    if num_frames == 0:
        raise EmptySequence("skeleton file declares zero frames")
    if num_frames < 0:
        raise ParseError("negative frame count", line=1)

    frames = np.zeros((num_frames, NTU_JOINT_COUNT, 3))
    mask = np.zeros((num_frames, NTU_JOINT_COUNT), dtype=bool)
    for t in range(num_frames):
        num_bodies = reader.next_int("body count")
        if num_bodies < 0:
            raise ParseError("negative body count", line=reader.pos)
        for body in range(num_bodies):
            reader.next_line("body descriptor")
            num_joints = reader.next_int("joint count")
            if num_joints != NTU_JOINT_COUNT:
                raise UnsupportedSkeleton(
                    f"expected {NTU_JOINT_COUNT} joints, file declares "
                    f"{num_joints}")
            for j in range(num_joints):
                line = reader.next_line("joint coordinates")
                parts = line.split()
                if len(parts) < 3:
                    raise ParseError("joint line has fewer than 3 fields",
                                     line=reader.pos)
                try:
                    xyz = [float(parts[k]) for k in range(3)]
                except ValueError:
                    raise ParseError(
                        f"non-numeric joint coordinates {parts[:3]!r}",
                        line=reader.pos) from None
                if body == 0:
                    frames[t, j] = xyz
        if num_bodies > 0:
            mask[t] = True
    return SkeletonSequence(frames=frames, bones=NTU_BONES, valid_mask=mask)


# ---------------------------------------------------------------------------
# Native SKL1 format
# ---------------------------------------------------------------------------


def serialize_skl1(seq: SkeletonSequence) -> str:
    """Serialize to the SKL1 text format (exact float round-trip)."""
    t, j = seq.num_frames, seq.num_joints
    lines = [f"SKL1 {j} {t} {len(seq.bones)} {seq.label}"]
    lines.append(" ".join(f"{p}:{c}" for p, c in seq.bones))
    for frame in seq.frames:
        lines.append(" ".join(repr(v) for v in frame.ravel().tolist()))
    lines.append("".join("1" if v else "0" for v in seq.valid_mask.ravel()))
    return "\n".join(lines) + "\n"


def parse_skl1(text: str) -> SkeletonSequence:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    header = lines[0].split()
    if len(header) != 5 or header[0] != "SKL1":
        raise ParseError(f"bad SKL1 header {lines[0]!r}", line=1)
    try:
        j, t, num_bones, label = (int(v) for v in header[1:])
    except ValueError:
        raise ParseError("non-integer SKL1 header fields", line=1) from None
    if len(lines) < 2 + t:
        raise ParseError("truncated SKL1 file", line=len(lines))
    bones = []
    bone_fields = lines[1].split()
    if len(bone_fields) != num_bones:
        raise ParseError(f"expected {num_bones} bones, got {len(bone_fields)}",
                         line=2)
    for fieldstr in bone_fields:
        try:
            p, c = fieldstr.split(":")
            bones.append((int(p), int(c)))
        except ValueError:
            raise ParseError(f"bad bone entry {fieldstr!r}", line=2) from None
    frames = np.zeros((t, j, 3))
    for row in range(t):
        parts = lines[2 + row].split()
        if len(parts) != 3 * j:
            raise ParseError(f"expected {3 * j} values, got {len(parts)}",
                             line=3 + row)
        try:
            frames[row] = np.array([float(v) for v in parts]).reshape(j, 3)
        except ValueError:
            raise ParseError("non-numeric frame values", line=3 + row) from None
    mask = None
    if len(lines) > 2 + t and lines[2 + t].strip():
        mask_str = lines[2 + t].strip()
        if len(mask_str) != t * j or set(mask_str) - {"0", "1"}:
            raise ParseError("bad mask line", line=3 + t)
        mask = np.array([ch == "1" for ch in mask_str]).reshape(t, j)
    return SkeletonSequence(frames=frames, bones=tuple(bones), label=label,
                            valid_mask=mask)


def save_sequence(path, seq: SkeletonSequence) -> None:
    with open(path, "w") as f:
        f.write(serialize_skl1(seq))


def load_sequence(path) -> SkeletonSequence:
    with open(path) as f:
        return parse_skl1(f.read())


def write_manifest(path, entries) -> None:
    """Write `<relative-path> <label>` lines, one sequence per line."""
    with open(path, "w") as f:
        for rel, label in entries:
            f.write(f"{rel} {label}\n")


def read_manifest(path) -> list[tuple[str, int]]:
    entries = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rel, label = line.rsplit(" ", 1)
                entries.append((rel, int(label)))
            except ValueError:
                raise ParseError(f"bad manifest line {line!r}",
                                 line=lineno) from None
    return entries


def load_manifest_dataset(manifest_path) -> list[SkeletonSequence]:
    import os

    base = os.path.dirname(os.fspath(manifest_path))
    return [load_sequence(os.path.join(base, rel))
            for rel, _ in read_manifest(manifest_path)]


# ---------------------------------------------------------------------------
# Corruption protocols
# ---------------------------------------------------------------------------


def _corruption_rng(seq: SkeletonSequence, spec: CorruptionSpec):
    digest = hashlib.sha256(seq.frames.tobytes()).digest()
    content = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(
        [spec.seed & 0xFFFFFFFFFFFFFFFF, content, len(spec.kind)])


def _axis_rotations(angles):
    ax, ay, az = angles
    rx = np.array([[1, 0, 0],
                   [0, math.cos(ax), -math.sin(ax)],
                   [0, math.sin(ax), math.cos(ax)]])
    ry = np.array([[math.cos(ay), 0, math.sin(ay)],
                   [0, 1, 0],
                   [-math.sin(ay), 0, math.cos(ay)]])
    rz = np.array([[math.cos(az), -math.sin(az), 0],
                   [math.sin(az), math.cos(az), 0],
                   [0, 0, 1]])
    return rx @ ry @ rz


def _sample_affected(rng, t: int, j: int, spec: CorruptionSpec):
    n_frames = round_half_up(spec.affected_frame_fraction * t)
    frame_idx = np.sort(rng.choice(t, size=n_frames, replace=False))
    joint_idx = np.empty((n_frames, spec.joints_per_frame), dtype=np.int64)
    for k in range(n_frames):
        joint_idx[k] = np.sort(rng.choice(j, size=spec.joints_per_frame,
                                          replace=False))
    return frame_idx, joint_idx


def corrupt(seq: SkeletonSequence, spec: CorruptionSpec) -> SkeletonSequence:
    """Apply one corruption protocol; bit-deterministic in (seq, spec)."""
    t, j = seq.num_frames, seq.num_joints
    if spec.kind != "rotation" and spec.joints_per_frame > j:
        raise SpecError(
            f"joints_per_frame={spec.joints_per_frame} exceeds J={j}")
    rng = _corruption_rng(seq, spec)

    if spec.kind == "rotation":
        if spec.rotation_bound == 0.0:
            return seq
        angles = rng.uniform(-spec.rotation_bound, spec.rotation_bound, size=3)
        rot = _axis_rotations(angles)
        return seq.with_frames(seq.frames @ rot.T)

    frame_idx, joint_idx = _sample_affected(rng, t, j, spec)
    frames = np.array(seq.frames)
    mask = np.array(seq.valid_mask)
    if spec.kind == "remove_joints":
        for k, fi in enumerate(frame_idx):
            frames[fi, joint_idx[k]] = 0.0
            mask[fi, joint_idx[k]] = False
    else:  # disturb_joints
        for k, fi in enumerate(frame_idx):
            noise = rng.normal(spec.noise_mean, spec.noise_std,
                               size=(spec.joints_per_frame, 3))
            frames[fi, joint_idx[k]] += noise
    return seq.with_frames(frames, valid_mask=mask)


# ---------------------------------------------------------------------------
# Synthetic benchmark generator
# ---------------------------------------------------------------------------

# Body layout and motion constants. The distinguishing hand wiggle is
# zero-mean over time so that per-sequence translation stays orthogonal to
# the class discriminant; amplitudes and nuisance scales were fixed against
# the nearest-centroid oracle in the test suite and are frozen.
_TORSO_STEP = 0.3
_ARM_STEP = 0.25
_BASE_AMPLITUDE = 0.3
_WIGGLE_CYCLES = 3
_WIGGLE_AMPLITUDES = (0.08, 0.22)  # (even class, odd class) in each pair
_TRANSLATION_STD = 0.03
_SCALE_RANGE = (0.9, 1.1)
_YAW_BOUND = 0.1
_COORD_NOISE_STD = 0.015
_PHASE_JITTER = 0.3


def synthetic_bone_template(joints: int):
    """Torso chain plus two arm chains attached at the top torso joint."""
    arm_len = max(1, (joints - 3) // 2)
    torso = joints - 2 * arm_len
    top = torso - 1
    bones = [(k - 1, k) for k in range(1, torso)]
    left = list(range(torso, torso + arm_len))
    right = list(range(torso + arm_len, joints))
    for chain in (left, right):
        prev = top
        for idx in chain:
            bones.append((prev, idx))
            prev = idx
    return tuple(bones), left, right, top


def _rest_pose(joints: int) -> np.ndarray:
    """Slightly forward-leaning pose. The depth structure matters: with a
    perfectly planar body every anchor would lie in the body plane and the
    angle of an in-plane joint is stationary in its depth coordinate, which
    would blind the view stream to out-of-plane motion."""
    arm_len = max(1, (joints - 3) // 2)
    torso = joints - 2 * arm_len
    pose = np.zeros((joints, 3))
    for k in range(torso):
        pose[k] = (0.0, _TORSO_STEP * k, 0.08 * k)
    y_top = _TORSO_STEP * (torso - 1)
    z_top = 0.08 * (torso - 1)
    for i in range(arm_len):
        reach = (i + 1) / arm_len
        pose[torso + i] = (-_ARM_STEP * (i + 1), y_top, z_top + 0.25 * reach)
        pose[torso + arm_len + i] = (_ARM_STEP * (i + 1), y_top,
                                     z_top + 0.25 * reach)
    return pose


def generate_synthetic(spec: SyntheticDatasetSpec) -> list[SkeletonSequence]:
    """Generate the full dataset, ordered by class then sequence index."""
    rng = np.random.default_rng([spec.seed & 0xFFFFFFFFFFFFFFFF, spec.joints])
    t, j = spec.frames, spec.joints
    bones, left, right, _ = synthetic_bone_template(j)
    rest = _rest_pose(j)
    arm_len = len(left)
    chain_frac = (np.arange(arm_len) + 1) / arm_len

    a = spec.view_ambiguity
    u = np.array([1.0 - a, 0.0, a])
    u /= np.linalg.norm(u)
    time = np.arange(t) / t
    wiggle = np.sin(2 * np.pi * _WIGGLE_CYCLES * time)

    sequences = []
    for cls in range(spec.num_classes):
        pair = cls // 2
        amp = _WIGGLE_AMPLITUDES[cls % 2]
        base_freq = pair + 1
        for _ in range(spec.sequences_per_class):
            phase = rng.uniform(-_PHASE_JITTER, _PHASE_JITTER)
            swing = _BASE_AMPLITUDE * np.sin(
                2 * np.pi * base_freq * time + phase)
            frames = np.tile(rest, (t, 1, 1))
            # base motion on the left arm identifies the class pair
            offs_l = swing[:, None] * np.array([0.6, 0.8, 0.0])
            frames[:, left, :] += chain_frac[None, :, None] * offs_l[:, None, :]
            # hand wiggle along u separates the two classes of a pair
            offs_r = (amp * wiggle)[:, None] * u
            frames[:, right, :] += chain_frac[None, :, None] * offs_r[:, None, :]

            scale = rng.uniform(*_SCALE_RANGE)
            yaw = rng.uniform(-_YAW_BOUND, _YAW_BOUND)
            rot = _axis_rotations((0.0, yaw, 0.0))
            translation = rng.normal(0.0, _TRANSLATION_STD, size=3)
            frames = scale * (frames @ rot.T) + translation
            frames += rng.normal(0.0, _COORD_NOISE_STD, size=frames.shape)
            sequences.append(
                SkeletonSequence(frames=frames, bones=bones, label=cls))
    return sequences


def split_dataset(sequences, eval_fraction: float):
    """Deterministic per-class split: the trailing fraction is held out."""
    by_class: dict[int, list[SkeletonSequence]] = {}
    for seq in sequences:
        by_class.setdefault(seq.label, []).append(seq)
    train, evalset = [], []
    for cls in sorted(by_class):
        group = by_class[cls]
        n_eval = round_half_up(eval_fraction * len(group))
        n_eval = min(n_eval, len(group))
        cut = len(group) - n_eval
        train.extend(group[:cut])
        evalset.extend(group[cut:])
    return train, evalset


def resample_time(seq: SkeletonSequence, t_fixed: int) -> SkeletonSequence:
    """Linear interpolation along time onto a fixed frame count."""
    t = seq.num_frames
    if t == t_fixed:
        return seq
    src = np.arange(t, dtype=np.float64)
    dst = np.linspace(0.0, t - 1, t_fixed)
    flat = seq.frames.reshape(t, -1)
    out = np.empty((t_fixed, flat.shape[1]))
    for col in range(flat.shape[1]):
        out[:, col] = np.interp(dst, src, flat[:, col])
    nearest = np.clip(np.rint(dst).astype(int), 0, t - 1)
    mask = seq.valid_mask[nearest]
    return seq.with_frames(out.reshape(t_fixed, seq.num_joints, 3),
                           valid_mask=mask)
