"""Triplet angle features: a view is an anchor pair (A, B), and each joint C
maps to cos of the angle at C between the rays C->A and C->B.

The degenerate branch (joint within eps of an anchor) returns 0 with zero
gradient, so training stays finite when a learned anchor crosses a joint.
All values are clamped to [-1, 1] before use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SkeletonSequence
from .errors import GeometryError

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class AnchorPair:
    """Two 3D anchor points defining one view. Swapping a and b is a no-op
    for every angle value."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).reshape(3)
        b = np.asarray(self.b, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise GeometryError("anchor coordinates must be finite")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def swapped(self) -> "AnchorPair":
        return AnchorPair(self.b, self.a)


@dataclass(frozen=True)
class AngleTensor:
    """M x T x J angle cosines plus the views and bone graph they came from."""

    values: np.ndarray
    source_views: tuple[AnchorPair, ...]
    bones: tuple[tuple[int, int], ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[0] != len(self.source_views):
            raise GeometryError(
                f"values must be (M, T, J) with M={len(self.source_views)}, "
                f"got {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "source_views", tuple(self.source_views))
        object.__setattr__(self, "bones", tuple(self.bones))

    @property
    def num_views(self) -> int:
        return self.values.shape[0]


def angle_of(joint, pair: AnchorPair, eps: float = DEFAULT_EPS) -> float:
    """Cosine of the angle at `joint` subtended by the anchor pair."""
    c = np.asarray(joint, dtype=np.float64)
    u = c - pair.a
    v = c - pair.b
    p = float(np.linalg.norm(u))
    q = float(np.linalg.norm(v))
    if p < eps or q < eps:
        return 0.0
    return float(np.clip(np.dot(u, v) / (p * q), -1.0, 1.0))


def angle_of_gradient(joint, pair: AnchorPair, eps: float = DEFAULT_EPS):
    """Analytic gradients of angle_of w.r.t. (C, A, B).

    Returns (value, dC, dA, dB). The degenerate and clamped branches are
    locally constant, so their gradient is zero.
    """
    c = np.asarray(joint, dtype=np.float64)
    u = c - pair.a
    v = c - pair.b
    p = float(np.linalg.norm(u))
    q = float(np.linalg.norm(v))
    zero = np.zeros(3)
    if p < eps or q < eps:
        return 0.0, zero, zero, zero
    s = float(np.dot(u, v))
    f = s / (p * q)
    if abs(f) > 1.0:
        return float(np.clip(f, -1.0, 1.0)), zero, zero, zero
    df_du = v / (p * q) - f * u / (p * p)
    df_dv = u / (p * q) - f * v / (q * q)
    return f, df_du + df_dv, -df_du, -df_dv


def _angles_batch(frames: np.ndarray, a: np.ndarray, b: np.ndarray,
                  eps: float):
    """Vectorized core: frames (T, J, 3), one anchor pair -> (T, J) values
    plus intermediates reused by the backward pass."""
    u = frames - a
    v = frames - b
    p = np.linalg.norm(u, axis=2)
    q = np.linalg.norm(v, axis=2)
    s = np.einsum("tjc,tjc->tj", u, v)
    ok = (p >= eps) & (q >= eps)
    pq = np.where(ok, p * q, 1.0)
    raw = np.where(ok, s / pq, 0.0)
    clamped = np.abs(raw) > 1.0
    values = np.clip(raw, -1.0, 1.0)
    live = ok & ~clamped
    return values, u, v, p, q, raw, live


def view_translate(seq: SkeletonSequence, views, eps: float = DEFAULT_EPS
                   ) -> AngleTensor:
    """Map a sequence to its M x T x J angle tensor, one slice per view.

    The bone graph rides along unchanged so graph-structured backbones can
    consume the angle stream exactly like the joint stream.
    """
    views = tuple(views)
    if not views:
        raise GeometryError("need at least one view")
    t, j = seq.num_frames, seq.num_joints
    values = np.empty((len(views), t, j))
    for m, pair in enumerate(views):
        values[m] = _angles_batch(seq.frames, pair.a, pair.b, eps)[0]
    return AngleTensor(values=values, source_views=views, bones=seq.bones)


def view_translate_backward(seq: SkeletonSequence, views, upstream,
                            eps: float = DEFAULT_EPS) -> np.ndarray:
    """Gradient of sum(upstream * angles) w.r.t. the anchors.

    upstream: (M, T, J). Returns (M, 2, 3): per view, gradients for anchor a
    and anchor b. Frames are data, not parameters, so their gradient is not
    materialized here.
    """
    views = tuple(views)
    upstream = np.asarray(upstream, dtype=np.float64)
    grads = np.zeros((len(views), 2, 3))
    for m, pair in enumerate(views):
        _, u, v, p, q, raw, live = _angles_batch(
            seq.frames, pair.a, pair.b, eps)
        w = np.where(live, upstream[m], 0.0)
        p = np.where(live, p, 1.0)
        q = np.where(live, q, 1.0)
        f = np.where(live, raw, 0.0)
        inv_pq = 1.0 / (p * q)
        # d f / d u and d f / d v, weighted by upstream
        du = w[..., None] * (v * inv_pq[..., None]
                             - (f / (p * p))[..., None] * u)
        dv = w[..., None] * (u * inv_pq[..., None]
                             - (f / (q * q))[..., None] * v)
        grads[m, 0] = -du.sum(axis=(0, 1))
        grads[m, 1] = -dv.sum(axis=(0, 1))
    return grads


def rigid_transform(obj, rotation, translation):
    """Apply x -> R x + t to a sequence, anchor pair(s), or raw points.

    Raises GeometryError unless R is orthonormal to 1e-9.
    """
    rot = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64).reshape(3)
    if rot.shape != (3, 3) or not np.allclose(
            rot.T @ rot, np.eye(3), atol=1e-9):
        raise GeometryError("rotation must be a 3x3 orthonormal matrix")
    if isinstance(obj, SkeletonSequence):
        return obj.with_frames(obj.frames @ rot.T + t)
    if isinstance(obj, AnchorPair):
        return AnchorPair(rot @ obj.a + t, rot @ obj.b + t)
    if isinstance(obj, (list, tuple)):
        moved = [rigid_transform(item, rot, t) for item in obj]
        return type(obj)(moved)
    pts = np.asarray(obj, dtype=np.float64)
    return pts @ rot.T + t


def angle_tensor_csv(angles: AngleTensor) -> str:
    """CSV export: one row per (view, frame, joint) value."""
    lines = ["view,frame,joint,value"]
    m, t, j = angles.values.shape
    for vi in range(m):
        for ti in range(t):
            row = angles.values[vi, ti]
            for ji in range(j):
                lines.append(f"{vi},{ti},{ji},{row[ji]!r}")
    return "\n".join(lines) + "\n"
