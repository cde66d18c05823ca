"""Experiment orchestration shared by the CLI and the test harness.

A run directory always ends up with the resolved config (config.cfg) next
to whatever the command produced (checkpoint.txt, metrics.csv, report CSVs),
so re-running from that config reproduces the outputs byte for byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import data as dat
from . import anchors as anc
from .angles import angle_tensor_csv, view_translate
from .config import ExperimentConfig, config_to_text, save_config
from .errors import RefusedOverwrite, SpecError
from .model import (ActionModel, apply_checkpoint, build_model, evaluate,
                    load_checkpoint, save_checkpoint)
from .train import metrics_csv, train

CHECKPOINT_NAME = "checkpoint.txt"
CONFIG_NAME = "config.cfg"
METRICS_NAME = "metrics.csv"

# Corruption grid mirroring the robustness benchmark layout: three kinds,
# three levels each, plus the clean baseline. Joint counts are stated for
# the 25-joint template and scaled proportionally for other skeletons.
ROTATION_LEVELS = (0.1, 0.2, 0.3)
REMOVE_LEVELS = (1, 10, 15)     # joints, in 10% of frames
DISTURB_LEVELS = (1, 10, 25)    # joints, in 1% of frames
REMOVE_FRAME_FRACTION = 0.10
DISTURB_FRAME_FRACTION = 0.01

HEAD_ARMS = (1, 3, 5, 7, 10, 15)
FUSION_ARMS = ("sum", "max", "concatenate", "attention")
LOCATION_ARMS = ("fixed_pairs", "on_joints", "within_body", "around_body")


def scaled_joint_count(count_at_25: int, joints: int) -> int:
    return max(1, dat.round_half_up(count_at_25 * joints / 25))


def robustness_grid(joints: int, seed: int):
    """(kind, level-label, CorruptionSpec-or-None) rows, clean row first."""
    rows = [("clean", "0", None)]
    for bound in ROTATION_LEVELS:
        rows.append(("rotation", repr(bound), dat.CorruptionSpec(
            kind="rotation", rotation_bound=bound, seed=seed)))
    for count in REMOVE_LEVELS:
        scaled = scaled_joint_count(count, joints)
        rows.append(("remove_joints", str(count), dat.CorruptionSpec(
            kind="remove_joints",
            affected_frame_fraction=REMOVE_FRAME_FRACTION,
            joints_per_frame=scaled, seed=seed)))
    for count in DISTURB_LEVELS:
        scaled = scaled_joint_count(count, joints)
        rows.append(("disturb_joints", str(count), dat.CorruptionSpec(
            kind="disturb_joints",
            affected_frame_fraction=DISTURB_FRAME_FRACTION,
            joints_per_frame=scaled, noise_mean=0.0, noise_std=1.0,
            seed=seed)))
    return rows


def ensure_out_dir(path, force: bool) -> str:
    path = os.fspath(path)
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise RefusedOverwrite(
            f"output directory {path!r} is not empty (use --force)")
    os.makedirs(path, exist_ok=True)
    return path


def load_dataset(cfg: ExperimentConfig) -> list[dat.SkeletonSequence]:
    if cfg.synthetic is not None:
        return dat.generate_synthetic(cfg.synthetic)
    return dat.load_manifest_dataset(cfg.manifest)


def prepare_split(cfg: ExperimentConfig):
    """Load, split, corrupt (per config), and resample the dataset.

    Corruption applies to the eval split; the corrupt_train flag extends it
    to the training split as well.
    """
    sequences = load_dataset(cfg)
    train_seqs, eval_seqs = dat.split_dataset(sequences, cfg.eval_fraction)
    if cfg.corruption is not None:
        eval_seqs = [dat.corrupt(s, cfg.corruption) for s in eval_seqs]
        if cfg.corrupt_train:
            train_seqs = [dat.corrupt(s, cfg.corruption) for s in train_seqs]
    train_seqs = [dat.resample_time(s, cfg.t_fixed) for s in train_seqs]
    eval_seqs = [dat.resample_time(s, cfg.t_fixed) for s in eval_seqs]
    return train_seqs, eval_seqs


def _num_classes(cfg: ExperimentConfig, sequences) -> int:
    if cfg.synthetic is not None:
        return cfg.synthetic.num_classes
    return max(s.label for s in sequences) + 1


def build_model_from_config(cfg: ExperimentConfig, num_classes: int,
                            num_joints: int, bones) -> ActionModel:
    fixed_pairs = None
    anchor_mode = cfg.anchor_mode
    if cfg.anchor_mode == "fixed":
        fixed_pairs = cfg.fixed_pairs or anc.default_fixed_pairs(num_joints)
        anchor_mode = "within_body"  # unused when pairs are fixed
    return build_model(
        num_classes, num_joints, bones,
        streams=cfg.streams, combine=cfg.combine,
        num_views=cfg.num_views, attn_dim=cfg.attn_dim,
        anchor_mode=anchor_mode, dispersion=cfg.dispersion,
        fixed_pairs=fixed_pairs, fusion_strategy=cfg.fusion,
        graph_channels=cfg.graph_channels,
        temporal_channels=cfg.temporal_channels,
        seed=cfg.seed)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def run_generate(cfg: ExperimentConfig, out_dir, force: bool = False) -> str:
    """Write the synthetic dataset as SKL1 files plus a manifest."""
    if cfg.synthetic is None:
        raise SpecError("generate requires a synthetic dataset config")
    out_dir = ensure_out_dir(out_dir, force)
    sequences = dat.generate_synthetic(cfg.synthetic)
    entries = []
    for i, seq in enumerate(sequences):
        name = f"seq_{i:05d}.skl"
        dat.save_sequence(os.path.join(out_dir, name), seq)
        entries.append((name, seq.label))
    manifest = os.path.join(out_dir, "manifest.txt")
    dat.write_manifest(manifest, entries)
    save_config(os.path.join(out_dir, CONFIG_NAME),
                cfg.with_updates(output_dir=os.fspath(out_dir)))
    return manifest


def run_train(cfg: ExperimentConfig, out_dir, force: bool = False):
    """Train per the config; writes checkpoint, metrics, resolved config."""
    out_dir = ensure_out_dir(out_dir, force)
    resolved = cfg.with_updates(output_dir=os.fspath(out_dir))
    train_seqs, eval_seqs = prepare_split(resolved)
    num_classes = _num_classes(resolved, train_seqs)
    sample = train_seqs[0]
    model = build_model_from_config(resolved, num_classes,
                                    sample.num_joints, sample.bones)
    metrics = train(model, train_seqs, eval_seqs, resolved.optimizer,
                    seed=resolved.seed)
    save_checkpoint(os.path.join(out_dir, CHECKPOINT_NAME),
                    model.parameters())
    with open(os.path.join(out_dir, METRICS_NAME), "w") as f:
        f.write(metrics_csv(metrics))
    save_config(os.path.join(out_dir, CONFIG_NAME), resolved)
    return model, metrics


def load_run(checkpoint_path):
    """Rebuild the trained model from a run directory or checkpoint file.

    The checkpoint holds tensors only; topology comes from the resolved
    config stored beside it.
    """
    path = os.fspath(checkpoint_path)
    if os.path.isdir(path):
        run_dir = path
        path = os.path.join(path, CHECKPOINT_NAME)
    else:
        run_dir = os.path.dirname(path) or "."
    from .config import load_config

    cfg = load_config(os.path.join(run_dir, CONFIG_NAME))
    train_seqs, eval_seqs = prepare_split(cfg)
    sample = (train_seqs or eval_seqs)[0]
    model = build_model_from_config(cfg, _num_classes(cfg, train_seqs),
                                    sample.num_joints, sample.bones)
    apply_checkpoint(model, load_checkpoint(path))
    return model, cfg, (train_seqs, eval_seqs)


def run_eval(checkpoint_path, corruption=None, split: str = "eval",
             manifest: str | None = None) -> dict[str, float]:
    """Accuracy of a stored run on a dataset split, optionally corrupted.

    Corruption passed here replaces whatever the stored config applied to
    the eval split; it is applied before time resampling, like the stored
    pipeline does.
    """
    model, cfg, _ = load_run(checkpoint_path)
    base = cfg.with_updates(corruption=None)
    if manifest is not None:
        base = base.with_updates(synthetic=None, manifest=manifest)
    sequences = load_dataset(base)
    train_seqs, eval_seqs = dat.split_dataset(sequences, base.eval_fraction)
    chosen = {"train": train_seqs, "eval": eval_seqs,
              "all": sequences}[split]
    if corruption is not None:
        chosen = [dat.corrupt(s, corruption) for s in chosen]
    chosen = [dat.resample_time(s, base.t_fixed) for s in chosen]
    return evaluate(model, chosen)


@dataclass
class RobustnessReport:
    """Accuracy grid: (kind, level) rows by model columns."""

    models: tuple[str, ...]
    rows: list[tuple[str, str, dict[str, float]]]

    def to_csv(self) -> str:
        lines = ["kind,level," + ",".join(self.models)]
        for kind, level, accs in self.rows:
            cells = ",".join(repr(accs[m]) for m in self.models)
            lines.append(f"{kind},{level},{cells}")
        return "\n".join(lines) + "\n"

    def series(self, model: str, kind: str) -> list[float]:
        """Clean accuracy followed by this kind's levels, in grid order."""
        out = [accs[model] for k, _, accs in self.rows if k == "clean"]
        out += [accs[model] for k, _, accs in self.rows if k == kind]
        return out

    def monotonic_ok(self, model: str, kind: str,
                     slack: float = 0.01) -> bool:
        """Non-increasing accuracy over levels, allowing one inversion of
        at most `slack` (fraction, i.e. 0.01 = one point)."""
        series = self.series(model, kind)
        rises = [b - a for a, b in zip(series, series[1:]) if b > a]
        return len(rises) <= 1 and all(r <= slack + 1e-12 for r in rises)


def run_robustness(checkpoint_paths, out_dir=None,
                   force: bool = False) -> RobustnessReport:
    """Evaluate each stored model over the corruption grid (eval split)."""
    if not checkpoint_paths:
        raise SpecError("need at least one checkpoint")
    names = []
    loaded = []
    for path in checkpoint_paths:
        model, cfg, (_, eval_seqs_raw) = load_run(path)
        run_dir = path if os.path.isdir(path) else os.path.dirname(path)
        names.append(os.path.basename(os.path.normpath(run_dir)))
        # re-prepare without the stored eval corruption: the grid owns it
        base = cfg.with_updates(corruption=None)
        sequences = load_dataset(base)
        _, eval_seqs = dat.split_dataset(sequences, base.eval_fraction)
        loaded.append((model, base, eval_seqs))

    joints = loaded[0][2][0].num_joints
    seed = loaded[0][1].seed
    rows = []
    for kind, level, spec in robustness_grid(joints, seed):
        accs = {}
        for name, (model, base, eval_seqs) in zip(names, loaded):
            seqs = eval_seqs
            if spec is not None:
                seqs = [dat.corrupt(s, spec) for s in seqs]
            seqs = [dat.resample_time(s, base.t_fixed) for s in seqs]
            accs[name] = evaluate(model, seqs)["top1"]
        rows.append((kind, level, accs))
    report = RobustnessReport(models=tuple(names), rows=rows)
    if out_dir is not None:
        out_dir = ensure_out_dir(out_dir, force)
        with open(os.path.join(out_dir, "robustness.csv"), "w") as f:
            f.write(report.to_csv())
    return report


def _ablation_configs(cfg: ExperimentConfig, axis: str):
    if axis == "heads":
        yield "fixed7", cfg.with_updates(anchor_mode="fixed",
                                         fixed_pairs=None)
        for m in HEAD_ARMS:
            yield str(m), cfg.with_updates(num_views=m)
    elif axis == "fusion":
        for strategy in FUSION_ARMS:
            yield strategy, cfg.with_updates(fusion=strategy)
    elif axis == "location":
        for mode in LOCATION_ARMS:
            if mode == "fixed_pairs":
                yield mode, cfg.with_updates(anchor_mode="fixed",
                                             fixed_pairs=None)
            else:
                yield mode, cfg.with_updates(anchor_mode=mode,
                                             dispersion=None)
    else:
        raise SpecError(f"unknown ablation axis {axis!r}")


def run_ablate(cfg: ExperimentConfig, axis: str, out_dir,
               force: bool = False):
    """Train one model per arm (shared seed) and emit accuracy per arm."""
    out_dir = ensure_out_dir(out_dir, force)
    rows = []
    for arm, arm_cfg in _ablation_configs(cfg, axis):
        arm_dir = os.path.join(out_dir, f"{axis}_{arm}")
        model, _ = run_train(arm_cfg, arm_dir, force=True)
        _, eval_seqs = prepare_split(
            arm_cfg.with_updates(output_dir=arm_dir))
        acc = evaluate(model, eval_seqs)["top1"]
        rows.append((axis, arm, acc))
    csv = "axis,arm,accuracy\n" + "".join(
        f"{a},{arm},{acc!r}\n" for a, arm, acc in rows)
    with open(os.path.join(out_dir, f"ablate_{axis}.csv"), "w") as f:
        f.write(csv)
    return rows


# ---------------------------------------------------------------------------
# View export
# ---------------------------------------------------------------------------


def _svg_panel(points_sets, x_axis, y_axis, origin_x, label):
    """One 200x200 scatter panel projecting 3D points on two axes."""
    all_pts = np.concatenate([p for p, _, _ in points_sets])
    lo = all_pts[:, [x_axis, y_axis]].min(axis=0)
    hi = all_pts[:, [x_axis, y_axis]].max(axis=0)
    span = np.maximum(hi - lo, 1e-9)

    def place(pt):
        u = (pt[x_axis] - lo[0]) / span[0]
        v = (pt[y_axis] - lo[1]) / span[1]
        return origin_x + 20 + 160 * u, 180 - 160 * v

    parts = [f'<rect x="{origin_x + 10}" y="10" width="180" height="180" '
             f'fill="none" stroke="#999"/>',
             f'<text x="{origin_x + 95}" y="198" font-size="10" '
             f'text-anchor="middle">{label}</text>']
    for pts, color, radius in points_sets:
        for pt in pts:
            x, y = place(pt)
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}" '
                         f'fill="{color}"/>')
    return parts


def anchors_svg(xbar: np.ndarray, views) -> str:
    """Scatter of time-averaged joints and anchors on the xy/xz/yz planes."""
    anchors_a = np.array([pair.a for pair in views])
    anchors_b = np.array([pair.b for pair in views])
    sets = [(xbar, "#888888", 3),
            (anchors_a, "#d62728", 4),
            (anchors_b, "#1f77b4", 4)]
    parts = ['<?xml version="1.0" encoding="UTF-8"?>',
             '<svg xmlns="http://www.w3.org/2000/svg" width="620" '
             'height="205" viewBox="0 0 620 205">']
    for i, (xa, ya, label) in enumerate(((0, 1, "xy"), (0, 2, "xz"),
                                         (1, 2, "yz"))):
        parts.extend(_svg_panel(sets, xa, ya, 205 * i, label))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def run_export_views(checkpoint_path, sequence_path, out_dir,
                     force: bool = False) -> dict[str, str]:
    """Write anchor, provenance, and angle CSVs plus an SVG scatter."""
    model, cfg, _ = load_run(checkpoint_path)
    with open(sequence_path) as f:
        text = f.read()
    if text.startswith("SKL1"):
        seq = dat.parse_skl1(text)
    else:
        seq = dat.parse_ntu_skeleton(text)
    seq = dat.resample_time(seq, cfg.t_fixed)
    if model.proposal is not None:
        views = anc.propose_views(seq, model.proposal)
    else:
        views = anc.fixed_pair_views(seq, model.fixed_pairs)
    angles = view_translate(seq, views.pairs, eps=model.eps)
    out_dir = ensure_out_dir(out_dir, force)
    outputs = {
        "anchors.csv": anc.viewset_csv(views),
        "provenance.csv": anc.provenance_csv(views),
        "angles.csv": angle_tensor_csv(angles),
        "views.svg": anchors_svg(anc.time_average(seq), views.pairs),
    }
    for name, content in outputs.items():
        with open(os.path.join(out_dir, name), "w") as f:
            f.write(content)
    return outputs
