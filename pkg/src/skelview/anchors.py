"""Anchor proposal: turn a sequence into M learned anchor pairs.

Per head, time-averaged joint coordinates go through query/key maps to an
alignment score per joint, a softmax over joints, and a weighted sum of
(optionally value-mapped) joint positions. Heads 2k and 2k+1 form view
pair k. A dispersion scalar multiplies the scores and controls how sharply
the softmax concentrates:

  on_joints     large fixed dispersion, anchors snap onto single joints
  within_body   small fixed dispersion, anchors are convex combinations
  around_body   value map active and dispersion trainable, anchors may
                leave the body's convex hull
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .angles import AnchorPair
from .data import SkeletonSequence
from .errors import ModelError, SpecError

MODES = ("on_joints", "within_body", "around_body")
DISPERSION_SNAP = 20.0
DEFAULT_DISPERSION = {
    "on_joints": DISPERSION_SNAP,
    "within_body": 1.0,
    "around_body": 1.0,
}


@dataclass
class HeadParams:
    """One attention head producing one anchor point."""

    query_w: np.ndarray  # (d, 3)
    query_b: np.ndarray  # (d,)
    key_w: np.ndarray    # (d, 3)
    key_b: np.ndarray    # (d,)
    value_w: np.ndarray | None = None  # (3, 3), around_body only


@dataclass
class AnchorProposalParams:
    num_views: int
    attn_dim: int
    mode: str
    dispersion: np.ndarray  # 0-d array; trainable only in around_body mode
    heads: list[HeadParams]

    def __post_init__(self):
        if self.mode not in MODES:
            raise SpecError(f"unknown anchor mode {self.mode!r}")
        if self.num_views < 1 or self.attn_dim < 1:
            raise SpecError("num_views and attn_dim must be >= 1")
        if len(self.heads) != 2 * self.num_views:
            raise SpecError("need exactly two heads per view pair")
        self.dispersion = np.asarray(self.dispersion, dtype=np.float64)
        if self.dispersion.ndim != 0 or self.dispersion <= 0:
            raise SpecError("dispersion must be a positive scalar")
        if self.mode == "on_joints" and self.dispersion < DISPERSION_SNAP:
            raise SpecError(
                f"on_joints mode requires dispersion >= {DISPERSION_SNAP}")
        if self.mode == "around_body":
            for head in self.heads:
                if head.value_w is None:
                    raise SpecError("around_body heads need a value map")


@dataclass(frozen=True)
class ViewSet:
    """M anchor pairs plus the softmax weights that produced each anchor."""

    pairs: tuple[AnchorPair, ...]
    provenance: np.ndarray  # (M, 2, J)

    def __post_init__(self):
        prov = np.asarray(self.provenance, dtype=np.float64)
        if prov.shape[:2] != (len(self.pairs), 2):
            raise ModelError(f"provenance shape {prov.shape} does not match "
                             f"{len(self.pairs)} pairs")
        if np.any(prov < 0) or np.any(
                np.abs(prov.sum(axis=2) - 1.0) > 1e-6):
            raise ModelError("provenance rows must be probability vectors")
        prov.flags.writeable = False
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "provenance", prov)

    @property
    def num_views(self) -> int:
        return len(self.pairs)


def init_proposal(num_views: int, attn_dim: int, mode: str, seed: int,
                  dispersion: float | None = None) -> AnchorProposalParams:
    """Seeded initialization: fan-in-scaled uniform query/key maps and a
    near-identity value map, so initial anchors sit near the body centroid."""
    rng = np.random.default_rng([0x5EED, seed & 0xFFFFFFFFFFFFFFFF])
    bound = 1.0 / np.sqrt(3.0)
    heads = []
    for _ in range(2 * num_views):
        value_w = None
        if mode == "around_body":
            value_w = np.eye(3) + rng.normal(0.0, 0.01, size=(3, 3))
        heads.append(HeadParams(
            query_w=rng.uniform(-bound, bound, size=(attn_dim, 3)),
            query_b=rng.uniform(-bound, bound, size=attn_dim),
            key_w=rng.uniform(-bound, bound, size=(attn_dim, 3)),
            key_b=rng.uniform(-bound, bound, size=attn_dim),
            value_w=value_w,
        ))
    if dispersion is None:
        dispersion = DEFAULT_DISPERSION[mode]
    return AnchorProposalParams(
        num_views=num_views, attn_dim=attn_dim, mode=mode,
        dispersion=np.asarray(float(dispersion)), heads=heads)


def proposal_parameters(params: AnchorProposalParams) -> dict[str, np.ndarray]:
    """Trainable tensors by name. The dispersion scalar and value maps are
    parameters only in around_body mode; elsewhere they are fixed knobs."""
    out: dict[str, np.ndarray] = {}
    for h, head in enumerate(params.heads):
        out[f"head{h}/query_w"] = head.query_w
        out[f"head{h}/query_b"] = head.query_b
        out[f"head{h}/key_w"] = head.key_w
        out[f"head{h}/key_b"] = head.key_b
        if params.mode == "around_body":
            out[f"head{h}/value_w"] = head.value_w
    if params.mode == "around_body":
        out["dispersion"] = params.dispersion
    return out


def time_average(seq) -> np.ndarray:
    """Mean joint coordinates over frames, (J, 3). Masked joints contribute
    their stored (zeroed) coordinates, matching what a model fed corrupted
    data would see."""
    frames = seq.frames if isinstance(seq, SkeletonSequence) else np.asarray(seq)
    return frames.mean(axis=0)


def _softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max())
    return e / e.sum()


def anchor_scores(xbar: np.ndarray, head: HeadParams,
                  dispersion: float) -> np.ndarray:
    """Raw alignment scores before softmax.

    The per-joint score is dispersion * <query(xbar_i), sum_j key(xbar_j)>;
    the sum over j is factored out of the inner product, which is O(J d)
    instead of the O(J^2 d) double loop it equals.
    """
    q = xbar @ head.query_w.T + head.query_b
    ksum = (xbar @ head.key_w.T + head.key_b).sum(axis=0)
    return float(dispersion) * (q @ ksum)


def anchor_center(xbar: np.ndarray, scores: np.ndarray, head: HeadParams,
                  mode: str):
    """Softmax the scores and take the weighted sum of (value-mapped) joint
    positions. Returns (anchor, weights)."""
    weights = _softmax(scores)
    if mode == "around_body":
        gx = xbar @ head.value_w.T
    else:
        gx = xbar
    return weights @ gx, weights


def propose_views(seq, params: AnchorProposalParams) -> ViewSet:
    views, _ = propose_views_cached(time_average(seq), params)
    return views


def propose_views_cached(xbar: np.ndarray, params: AnchorProposalParams):
    """Forward pass keeping per-head intermediates for the backward pass."""
    m = params.num_views
    j = xbar.shape[0]
    pairs = []
    prov = np.empty((m, 2, j))
    cache = {"xbar": xbar, "heads": []}
    disp = float(params.dispersion)
    for h, head in enumerate(params.heads):
        q = xbar @ head.query_w.T + head.query_b
        ksum = (xbar @ head.key_w.T + head.key_b).sum(axis=0)
        raw = q @ ksum
        weights = _softmax(disp * raw)
        if params.mode == "around_body":
            gx = xbar @ head.value_w.T
        else:
            gx = xbar
        anchor = weights @ gx
        cache["heads"].append(
            {"q": q, "ksum": ksum, "raw": raw, "weights": weights, "gx": gx,
             "anchor": anchor})
        prov[h // 2, h % 2] = weights
    for k in range(m):
        pairs.append(AnchorPair(cache["heads"][2 * k]["anchor"],
                                cache["heads"][2 * k + 1]["anchor"]))
    return ViewSet(pairs=tuple(pairs), provenance=prov), cache


def propose_views_backward(params: AnchorProposalParams, cache,
                           upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of the anchors w.r.t. every trainable tensor.

    upstream: (M, 2, 3) gradient of the loss w.r.t. each pair's anchors, in
    the same head order as the forward pass.
    """
    xbar = cache["xbar"]
    j = xbar.shape[0]
    disp = float(params.dispersion)
    grads: dict[str, np.ndarray] = {}
    d_disp = 0.0
    for h, head in enumerate(params.heads):
        hc = cache["heads"][h]
        danchor = upstream[h // 2, h % 2]
        weights, gx, q, ksum = hc["weights"], hc["gx"], hc["q"], hc["ksum"]
        dw = gx @ danchor
        if params.mode == "around_body":
            grads[f"head{h}/value_w"] = np.outer(danchor, weights @ xbar)
        dscore = weights * (dw - weights @ dw)
        d_disp += dscore @ hc["raw"]
        dq = disp * np.outer(dscore, ksum)
        dksum = disp * (dscore @ q)
        grads[f"head{h}/query_w"] = dq.T @ xbar
        grads[f"head{h}/query_b"] = dq.sum(axis=0)
        grads[f"head{h}/key_w"] = np.outer(dksum, xbar.sum(axis=0))
        grads[f"head{h}/key_b"] = j * dksum
    if params.mode == "around_body":
        grads["dispersion"] = np.asarray(d_disp)
    return grads


def fixed_pair_views(seq, joint_pairs) -> ViewSet:
    """Views anchored at the time-averaged positions of given joint pairs.

    The non-learned baseline: provenance rows are one-hot at the chosen
    joints.
    """
    xbar = time_average(seq)
    j = xbar.shape[0]
    pairs = []
    prov = np.zeros((len(joint_pairs), 2, j))
    for k, (p, c) in enumerate(joint_pairs):
        if not (0 <= p < j and 0 <= c < j):
            raise SpecError(f"fixed pair ({p}, {c}) out of range for J={j}")
        pairs.append(AnchorPair(xbar[p], xbar[c]))
        prov[k, 0, p] = 1.0
        prov[k, 1, c] = 1.0
    return ViewSet(pairs=tuple(pairs), provenance=prov)


def default_fixed_pairs(joints: int) -> tuple[tuple[int, int], ...]:
    """Seven stand-in joint pairs for the fixed-anchor baseline.

    On the 25-joint template these are the conventional symmetric pairs
    (head-hips, hand-hand, foot-foot, elbow-elbow, knee-knee,
    shoulder-shoulder, wrist-wrist); for other joint counts, evenly spread
    index pairs are used instead.
    """
    if joints == 25:
        return ((3, 0), (7, 11), (15, 19), (5, 9), (13, 17), (4, 8), (6, 10))
    return tuple((k % joints, (joints - 1 - k) % joints) for k in range(7))


def viewset_csv(views: ViewSet) -> str:
    lines = ["view,anchor,x,y,z"]
    for k, pair in enumerate(views.pairs):
        for name, pt in (("a", pair.a), ("b", pair.b)):
            lines.append(f"{k},{name},{pt[0]!r},{pt[1]!r},{pt[2]!r}")
    return "\n".join(lines) + "\n"


def provenance_csv(views: ViewSet) -> str:
    lines = ["view,anchor,joint,weight"]
    m, _, j = views.provenance.shape
    for k in range(m):
        for ai, name in enumerate(("a", "b")):
            for ji in range(j):
                lines.append(
                    f"{k},{name},{ji},{views.provenance[k, ai, ji]!r}")
    return "\n".join(lines) + "\n"
