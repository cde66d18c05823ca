"""Full recognizer: per-stream backbones over joints / bones / angles,
combined at the score level (weighted sum of per-stream class scores,
default) or at the feature level (concatenated pooled features into one
classifier).

The angle stream runs anchor proposal -> angle translation -> fusion ->
backbone; its backward pass threads gradients all the way back to the
proposal parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import anchors as anc
from . import fusion as fus
from .angles import view_translate_backward, _angles_batch, DEFAULT_EPS
from .data import SkeletonSequence
from .errors import ModelError, SpecError
from .network import (BackboneParams, backbone_backward, backbone_forward,
                      backbone_parameters, init_backbone, init_linear,
                      linear_backward, linear_forward, normalized_adjacency,
                      softmax_cross_entropy)

STREAM_NAMES = ("joints", "bones", "angles")
DEFAULT_GRAPH_CHANNELS = (16, 32)
DEFAULT_TEMPORAL_CHANNELS = (32, 32)


def bones_of(seq: SkeletonSequence) -> np.ndarray:
    """Per frame, per bone: child minus parent coordinates,
    (T, num_bones, 3)."""
    if not seq.bones:
        raise SpecError("sequence has no bones")
    parents = np.array([p for p, _ in seq.bones])
    children = np.array([c for _, c in seq.bones])
    return seq.frames[:, children] - seq.frames[:, parents]


def bone_stream(seq: SkeletonSequence) -> np.ndarray:
    """Bone vectors scattered onto their child joints, (3, T, J); joints
    that are nobody's child (the root) stay zero. This keeps the bone
    stream on the same graph as the joint stream."""
    out = np.zeros((3, seq.num_frames, seq.num_joints))
    vecs = bones_of(seq)
    for k, (_, c) in enumerate(seq.bones):
        out[:, :, c] = vecs[:, k].T
    return out


@dataclass
class ActionModel:
    num_classes: int
    num_joints: int
    bones: tuple[tuple[int, int], ...]
    streams: tuple[str, ...]
    combine: str  # "score" | "feature"
    a_hat: np.ndarray
    backbones: dict[str, BackboneParams]
    classifiers: dict[str, tuple[np.ndarray, np.ndarray]]
    ensemble: dict[str, np.ndarray]
    proposal: anc.AnchorProposalParams | None = None
    fixed_pairs: tuple[tuple[int, int], ...] | None = None
    fusion: fus.FusionParams | None = None
    shared_classifier: tuple[np.ndarray, np.ndarray] | None = None
    eps: float = DEFAULT_EPS

    def parameters(self) -> dict[str, np.ndarray]:
        """All trainable tensors by stable name; values are live views."""
        out: dict[str, np.ndarray] = {}
        if "angles" in self.streams:
            if self.proposal is not None:
                for name, arr in anc.proposal_parameters(self.proposal).items():
                    out[f"proposal/{name}"] = arr
            if self.fusion is not None:
                for name, arr in fus.fusion_parameters(self.fusion).items():
                    out[f"fusion/{name}"] = arr
        for stream in self.streams:
            prefix = f"streams/{stream}/"
            out.update(backbone_parameters(self.backbones[stream], prefix))
            if self.combine == "score":
                w, b = self.classifiers[stream]
                out[f"{prefix}classifier/w"] = w
                out[f"{prefix}classifier/b"] = b
                out[f"ensemble/{stream}"] = self.ensemble[stream]
        if self.combine == "feature":
            out["classifier/w"] = self.shared_classifier[0]
            out["classifier/b"] = self.shared_classifier[1]
        return out


def build_model(num_classes: int, num_joints: int, bones, *,
                streams=("joints",), combine: str = "score",
                num_views: int = 5, attn_dim: int = 8,
                anchor_mode: str = "around_body",
                dispersion: float | None = None,
                fixed_pairs=None,
                fusion_strategy: str = "attention",
                graph_channels=DEFAULT_GRAPH_CHANNELS,
                temporal_channels=DEFAULT_TEMPORAL_CHANNELS,
                seed: int = 0, eps: float = DEFAULT_EPS) -> ActionModel:
    streams = tuple(streams)
    if not streams:
        raise SpecError("at least one stream must be enabled")
    for s in streams:
        if s not in STREAM_NAMES:
            raise SpecError(f"unknown stream {s!r}")
    if combine not in ("score", "feature"):
        raise SpecError(f"unknown combine mode {combine!r}")

    proposal = None
    fusion_params = None
    if "angles" in streams:
        if fixed_pairs is not None:
            fixed_pairs = tuple((int(p), int(c)) for p, c in fixed_pairs)
            m = len(fixed_pairs)
        else:
            proposal = anc.init_proposal(num_views, attn_dim, anchor_mode,
                                         seed, dispersion)
            m = num_views
        fusion_params = fus.init_fusion(fusion_strategy, m, seed)

    backbones = {}
    classifiers = {}
    ensemble = {}
    feat_dims = []
    for k, stream in enumerate(streams):
        rng = np.random.default_rng(
            [0xB0D7, seed & 0xFFFFFFFFFFFFFFFF, k])
        if stream == "angles":
            in_ch = fus.fused_channels(fusion_strategy, m)
        else:
            in_ch = 3
        bb = init_backbone(rng, in_ch, graph_channels, temporal_channels)
        backbones[stream] = bb
        feat_dims.append(bb.feature_dim)
        if combine == "score":
            classifiers[stream] = init_linear(rng, bb.feature_dim, num_classes)
            ensemble[stream] = np.asarray(1.0)

    shared = None
    if combine == "feature":
        rng = np.random.default_rng([0xC1A5, seed & 0xFFFFFFFFFFFFFFFF])
        shared = init_linear(rng, sum(feat_dims), num_classes)

    return ActionModel(
        num_classes=num_classes, num_joints=num_joints,
        bones=tuple((int(p), int(c)) for p, c in bones),
        streams=streams, combine=combine,
        a_hat=normalized_adjacency(bones, num_joints),
        backbones=backbones, classifiers=classifiers, ensemble=ensemble,
        proposal=proposal, fixed_pairs=fixed_pairs, fusion=fusion_params,
        shared_classifier=shared, eps=eps)


def _angle_values(seq, views, eps):
    values = np.empty((len(views), seq.num_frames, seq.num_joints))
    for k, pair in enumerate(views):
        values[k] = _angles_batch(seq.frames, pair.a, pair.b, eps)[0]
    return values


def forward_sample(model: ActionModel, seq: SkeletonSequence):
    """Class scores for one sequence, plus the full backward cache."""
    if seq.num_joints != model.num_joints:
        raise ModelError(f"model built for J={model.num_joints}, "
                         f"sequence has J={seq.num_joints}")
    cache: dict = {"streams": {}}
    feats = {}
    for stream in model.streams:
        sc: dict = {}
        if stream == "joints":
            x = np.ascontiguousarray(seq.frames.transpose(2, 0, 1))
        elif stream == "bones":
            x = bone_stream(seq)
        else:
            xbar = anc.time_average(seq)
            if model.proposal is not None:
                viewset, sap_cache = anc.propose_views_cached(
                    xbar, model.proposal)
                sc["sap_cache"] = sap_cache
            else:
                viewset = anc.fixed_pair_views(seq, model.fixed_pairs)
            sc["views"] = viewset.pairs
            values = _angle_values(seq, viewset.pairs, model.eps)
            x, fuse_cache = fus.fuse_cached(values, model.fusion)
            sc["fuse_cache"] = fuse_cache
        feat, bb_cache = backbone_forward(x, model.backbones[stream],
                                          model.a_hat)
        sc["bb_cache"] = bb_cache
        feats[stream] = feat
        cache["streams"][stream] = sc

    if model.combine == "score":
        logits = np.zeros(model.num_classes)
        for stream in model.streams:
            w, b = model.classifiers[stream]
            s_logits = linear_forward(feats[stream], w, b)
            cache["streams"][stream]["logits"] = s_logits
            logits = logits + float(model.ensemble[stream]) * s_logits
    else:
        concat = np.concatenate([feats[s] for s in model.streams])
        cache["concat"] = concat
        w, b = model.shared_classifier
        logits = linear_forward(concat, w, b)
    cache["feats"] = feats
    return logits, cache


def backward_sample(model: ActionModel, seq: SkeletonSequence, cache,
                    dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every trainable tensor, keyed like parameters()."""
    grads: dict[str, np.ndarray] = {}
    dfeats = {}
    if model.combine == "score":
        for stream in model.streams:
            sc = cache["streams"][stream]
            weight = float(model.ensemble[stream])
            grads[f"ensemble/{stream}"] = np.asarray(
                float(sc["logits"] @ dlogits))
            d_stream_logits = weight * dlogits
            w, _ = model.classifiers[stream]
            dw, db, dfeat = linear_backward(cache["feats"][stream], w,
                                            d_stream_logits)
            grads[f"streams/{stream}/classifier/w"] = dw
            grads[f"streams/{stream}/classifier/b"] = db
            dfeats[stream] = dfeat
    else:
        w, _ = model.shared_classifier
        dw, db, dconcat = linear_backward(cache["concat"], w, dlogits)
        grads["classifier/w"] = dw
        grads["classifier/b"] = db
        offset = 0
        for stream in model.streams:
            dim = model.backbones[stream].feature_dim
            dfeats[stream] = dconcat[offset:offset + dim]
            offset += dim

    for stream in model.streams:
        sc = cache["streams"][stream]
        bb_grads, dx = backbone_backward(
            model.backbones[stream], model.a_hat, sc["bb_cache"],
            dfeats[stream], prefix=f"streams/{stream}/")
        grads.update(bb_grads)
        if stream != "angles":
            continue
        dvalues, fuse_grads = fus.fuse_backward(model.fusion,
                                                sc["fuse_cache"], dx)
        for name, g in fuse_grads.items():
            grads[f"fusion/{name}"] = g
        if model.proposal is None:
            continue
        danchors = view_translate_backward(seq, sc["views"], dvalues,
                                           eps=model.eps)
        sap_grads = anc.propose_views_backward(model.proposal,
                                               sc["sap_cache"], danchors)
        for name, g in sap_grads.items():
            grads[f"proposal/{name}"] = g
    return grads


def loss_and_grads(model: ActionModel, batch):
    """Mean cross-entropy over (sequence, label) pairs plus summed-scaled
    gradients and the number of correct argmax predictions."""
    total_loss = 0.0
    correct = 0
    acc: dict[str, np.ndarray] = {}
    scale = 1.0 / len(batch)
    for seq in batch:
        logits, cache = forward_sample(model, seq)
        loss, dlogits = softmax_cross_entropy(logits, seq.label)
        total_loss += loss * scale
        if int(np.argmax(logits)) == seq.label:
            correct += 1
        grads = backward_sample(model, seq, cache, dlogits * scale)
        for name, g in grads.items():
            if name in acc:
                acc[name] += g
            else:
                acc[name] = np.array(g, dtype=np.float64)
    return total_loss, acc, correct


def predict_scores(model: ActionModel, sequences) -> np.ndarray:
    scores = np.empty((len(sequences), model.num_classes))
    for i, seq in enumerate(sequences):
        scores[i] = forward_sample(model, seq)[0]
    return scores


def evaluate(model: ActionModel, sequences) -> dict[str, float]:
    """Top-1 accuracy, and top-5 when there are more than 5 classes."""
    scores = predict_scores(model, sequences)
    labels = np.array([s.label for s in sequences])
    top1 = float((scores.argmax(axis=1) == labels).mean())
    out = {"top1": top1}
    if model.num_classes > 5:
        order = np.argsort(-scores, axis=1)[:, :5]
        out["top5"] = float((order == labels[:, None]).any(axis=1).mean())
    return out


# ---------------------------------------------------------------------------
# Checkpoint format: versioned text key-value with shape headers
# ---------------------------------------------------------------------------


def serialize_checkpoint(params: dict[str, np.ndarray]) -> str:
    lines = [f"SKLCKPT1 {len(params)}"]
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float64)
        shape = " ".join(str(d) for d in arr.shape)
        lines.append(f"{name} {arr.ndim}{' ' + shape if arr.ndim else ''}")
        lines.append(" ".join(repr(v) for v in arr.ravel().tolist()))
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str) -> dict[str, np.ndarray]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("SKLCKPT1"):
        raise ModelError("not a SKLCKPT1 checkpoint")
    count = int(lines[0].split()[1])
    params: dict[str, np.ndarray] = {}
    row = 1
    for _ in range(count):
        head = lines[row].split()
        name, ndim = head[0], int(head[1])
        shape = tuple(int(v) for v in head[2:2 + ndim])
        values = np.array([float(v) for v in lines[row + 1].split()])
        params[name] = values.reshape(shape)
        row += 2
    return params


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    with open(path, "w") as f:
        f.write(serialize_checkpoint(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path) as f:
        return parse_checkpoint(f.read())


def apply_checkpoint(model: ActionModel, stored: dict[str, np.ndarray]) -> None:
    live = model.parameters()
    if set(live) != set(stored):
        missing = set(live) ^ set(stored)
        raise ModelError(f"checkpoint does not match model: {sorted(missing)}")
    for name, arr in live.items():
        if arr.shape != stored[name].shape:
            raise ModelError(f"shape mismatch for {name}: "
                             f"{arr.shape} vs {stored[name].shape}")
        arr[...] = stored[name]
