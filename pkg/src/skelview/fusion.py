"""Aggregate the M-view angle tensor into the backbone input.

sum / max collapse the view axis to one channel, concatenate keeps all M,
and attention rescales each view channel by a gate derived from mean- and
max-pooled descriptors pushed through a shared squeeze-excite bottleneck.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpecError

STRATEGIES = ("sum", "max", "concatenate", "attention")


@dataclass
class FusionParams:
    strategy: str
    squeeze_w: np.ndarray | None = None  # (squeeze_dim, M)
    squeeze_b: np.ndarray | None = None
    excite_w: np.ndarray | None = None   # (M, squeeze_dim)
    excite_b: np.ndarray | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise SpecError(f"unknown fusion strategy {self.strategy!r}")
        has_maps = self.squeeze_w is not None
        if (self.strategy == "attention") != has_maps:
            raise SpecError(
                "attention parameters are required exactly for the "
                "attention strategy")


def fused_channels(strategy: str, num_views: int) -> int:
    return 1 if strategy in ("sum", "max") else num_views


def init_fusion(strategy: str, num_views: int, seed: int) -> FusionParams:
    if strategy != "attention":
        return FusionParams(strategy=strategy)
    squeeze = max(num_views // 2, 1)
    rng = np.random.default_rng([0xF05E, seed & 0xFFFFFFFFFFFFFFFF])
    bound_in = 1.0 / np.sqrt(num_views)
    bound_sq = 1.0 / np.sqrt(squeeze)
    return FusionParams(
        strategy="attention",
        squeeze_w=rng.uniform(-bound_in, bound_in, size=(squeeze, num_views)),
        squeeze_b=rng.uniform(-bound_in, bound_in, size=squeeze),
        excite_w=rng.uniform(-bound_sq, bound_sq, size=(num_views, squeeze)),
        excite_b=rng.uniform(-bound_sq, bound_sq, size=num_views),
    )


def fusion_parameters(params: FusionParams) -> dict[str, np.ndarray]:
    if params.strategy != "attention":
        return {}
    return {
        "squeeze_w": params.squeeze_w,
        "squeeze_b": params.squeeze_b,
        "excite_w": params.excite_w,
        "excite_b": params.excite_b,
    }


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def fuse(values, params: FusionParams) -> np.ndarray:
    out, _ = fuse_cached(np.asarray(values, dtype=np.float64), params)
    return out


def fuse_cached(values: np.ndarray, params: FusionParams):
    """Forward fusion of (M, T, J) -> (C, T, J), keeping intermediates."""
    if values.ndim != 3 or values.shape[0] < 1:
        raise SpecError(f"expected (M, T, J) with M >= 1, got {values.shape}")
    cache = {"values": values}
    if params.strategy == "sum":
        return values.sum(axis=0, keepdims=True), cache
    if params.strategy == "max":
        cache["winner"] = values.argmax(axis=0)  # first max = lowest view
        return values.max(axis=0, keepdims=True), cache
    if params.strategy == "concatenate":
        return values.copy(), cache

    mean_desc = values.mean(axis=(1, 2))
    max_flat = values.reshape(values.shape[0], -1)
    max_pos = max_flat.argmax(axis=1)
    max_desc = max_flat[np.arange(values.shape[0]), max_pos]
    pre1 = params.squeeze_w @ mean_desc + params.squeeze_b
    pre2 = params.squeeze_w @ max_desc + params.squeeze_b
    h1, h2 = np.maximum(pre1, 0.0), np.maximum(pre2, 0.0)
    z = (params.excite_w @ h1 + params.excite_b
         + params.excite_w @ h2 + params.excite_b)
    gate = _sigmoid(z)
    cache.update(mean_desc=mean_desc, max_desc=max_desc, max_pos=max_pos,
                 pre1=pre1, pre2=pre2, h1=h1, h2=h2, gate=gate)
    return gate[:, None, None] * values, cache


def fuse_backward(params: FusionParams, cache, upstream: np.ndarray):
    """Gradients of sum(upstream * fused) w.r.t. the input angle values and
    the fusion parameters. Max uses the argmax subgradient."""
    values = cache["values"]
    m = values.shape[0]
    upstream = np.asarray(upstream, dtype=np.float64)
    if params.strategy == "sum":
        return np.broadcast_to(upstream[0], values.shape).copy(), {}
    if params.strategy == "max":
        dvalues = np.zeros_like(values)
        winner = cache["winner"]
        np.put_along_axis(dvalues, winner[None], upstream, axis=0)
        return dvalues, {}
    if params.strategy == "concatenate":
        return upstream.copy(), {}

    gate, h1, h2 = cache["gate"], cache["h1"], cache["h2"]
    dvalues = gate[:, None, None] * upstream
    dgate = np.einsum("mtj,mtj->m", upstream, values)
    dz = dgate * gate * (1.0 - gate)
    dh1 = params.excite_w.T @ dz
    dh2 = params.excite_w.T @ dz
    dpre1 = dh1 * (cache["pre1"] > 0)
    dpre2 = dh2 * (cache["pre2"] > 0)
    grads = {
        "excite_w": np.outer(dz, h1) + np.outer(dz, h2),
        "excite_b": 2.0 * dz,
        "squeeze_w": (np.outer(dpre1, cache["mean_desc"])
                      + np.outer(dpre2, cache["max_desc"])),
        "squeeze_b": dpre1 + dpre2,
    }
    dmean = params.squeeze_w.T @ dpre1
    dvalues += dmean[:, None, None] / (values.shape[1] * values.shape[2])
    dmax = params.squeeze_w.T @ dpre2
    flat = dvalues.reshape(m, -1)
    flat[np.arange(m), cache["max_pos"]] += dmax
    return dvalues, grads
