"""Experiment configuration and its on-disk format.

The format is a versioned, sectioned key-value text file (header line
`SAPCFG1`). Writing then parsing is lossless, and every run writes its
resolved config next to its outputs so the run can be reproduced from the
output directory alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .data import CorruptionSpec, SyntheticDatasetSpec
from .errors import ParseError, SpecError
from .train import OptimizerConfig

_SECTION_ORDER = ("dataset", "streams", "proposal", "fusion", "backbone",
                  "optimizer", "corruption", "run")


@dataclass(frozen=True)
class ExperimentConfig:
    synthetic: SyntheticDatasetSpec | None = None
    manifest: str | None = None
    streams: tuple[str, ...] = ("joints", "bones", "angles")
    combine: str = "score"
    num_views: int = 5
    attn_dim: int = 8
    anchor_mode: str = "around_body"  # or "fixed" for non-learned anchors
    dispersion: float | None = None
    fixed_pairs: tuple[tuple[int, int], ...] | None = None
    fusion: str = "attention"
    graph_channels: tuple[int, ...] = (16, 32)
    temporal_channels: tuple[int, ...] = (32, 32)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    corruption: CorruptionSpec | None = None
    corrupt_train: bool = False
    eval_fraction: float = 0.25
    t_fixed: int = 64
    seed: int = 0
    output_dir: str = ""

    def __post_init__(self):
        if (self.synthetic is None) == (self.manifest is None):
            raise SpecError(
                "exactly one of synthetic spec or manifest path is required")
        if self.anchor_mode not in ("on_joints", "within_body", "around_body",
                                    "fixed"):
            raise SpecError(f"unknown anchor mode {self.anchor_mode!r}")

    def with_updates(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _fmt_list(values) -> str:
    return ",".join(_fmt(v) for v in values) if values else "none"


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = ["SAPCFG1", "[dataset]"]
    if cfg.synthetic is not None:
        s = cfg.synthetic
        lines += [f"kind = synthetic",
                  f"num_classes = {s.num_classes}",
                  f"sequences_per_class = {s.sequences_per_class}",
                  f"frames = {s.frames}",
                  f"joints = {s.joints}",
                  f"view_ambiguity = {_fmt(float(s.view_ambiguity))}",
                  f"seed = {s.seed}"]
    else:
        lines += ["kind = manifest", f"path = {cfg.manifest}"]
    lines += ["[streams]",
              f"enabled = {_fmt_list(cfg.streams)}",
              f"combine = {cfg.combine}"]
    pairs = "none"
    if cfg.fixed_pairs is not None:
        pairs = ",".join(f"{p}:{c}" for p, c in cfg.fixed_pairs)
    lines += ["[proposal]",
              f"num_views = {cfg.num_views}",
              f"attn_dim = {cfg.attn_dim}",
              f"mode = {cfg.anchor_mode}",
              f"dispersion = {_fmt(cfg.dispersion)}",
              f"fixed_pairs = {pairs}"]
    lines += ["[fusion]", f"strategy = {cfg.fusion}"]
    lines += ["[backbone]",
              f"graph_channels = {_fmt_list(cfg.graph_channels)}",
              f"temporal_channels = {_fmt_list(cfg.temporal_channels)}"]
    opt = cfg.optimizer
    lines += ["[optimizer]",
              f"lr = {_fmt(float(opt.lr))}",
              f"momentum = {_fmt(float(opt.momentum))}",
              f"decay_epochs = {_fmt_list(opt.decay_epochs)}",
              f"decay_factor = {_fmt(float(opt.decay_factor))}",
              f"epochs = {opt.epochs}",
              f"batch_size = {opt.batch_size}"]
    lines.append("[corruption]")
    if cfg.corruption is None:
        lines.append("kind = none")
    else:
        c = cfg.corruption
        lines += [f"kind = {c.kind}",
                  f"rotation_bound = {_fmt(float(c.rotation_bound))}",
                  f"affected_frame_fraction = "
                  f"{_fmt(float(c.affected_frame_fraction))}",
                  f"joints_per_frame = {c.joints_per_frame}",
                  f"noise_mean = {_fmt(float(c.noise_mean))}",
                  f"noise_std = {_fmt(float(c.noise_std))}",
                  f"seed = {c.seed}"]
    lines += ["[run]",
              f"seed = {cfg.seed}",
              f"eval_fraction = {_fmt(float(cfg.eval_fraction))}",
              f"t_fixed = {cfg.t_fixed}",
              f"corrupt_train = {_fmt(cfg.corrupt_train)}",
              f"output_dir = {cfg.output_dir}"]
    return "\n".join(lines) + "\n"


def _sections_of(text: str) -> dict[str, dict[str, str]]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "SAPCFG1":
        raise ParseError("missing SAPCFG1 header", line=1)
    sections: dict[str, dict[str, str]] = {}
    current: dict[str, str] | None = None
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1]
            if name not in _SECTION_ORDER:
                raise ParseError(f"unknown section {name!r}", line=lineno)
            current = sections.setdefault(name, {})
            continue
        if current is None or "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}",
                             line=lineno)
        key, _, value = line.partition("=")
        current[key.strip()] = value.strip()
    return sections


def _get(section: dict[str, str], key: str, lineno_hint: str):
    if key not in section:
        raise ParseError(f"missing key {key!r} in [{lineno_hint}]")
    return section[key]


def _parse_optional_float(text: str):
    return None if text == "none" else float(text)


def _parse_int_list(text: str) -> tuple[int, ...]:
    return () if text == "none" else tuple(int(v) for v in text.split(","))


def config_from_text(text: str) -> ExperimentConfig:
    sec = _sections_of(text)
    ds = sec.get("dataset", {})
    kind = _get(ds, "kind", "dataset")
    synthetic = None
    manifest = None
    if kind == "synthetic":
        synthetic = SyntheticDatasetSpec(
            num_classes=int(_get(ds, "num_classes", "dataset")),
            sequences_per_class=int(_get(ds, "sequences_per_class", "dataset")),
            frames=int(_get(ds, "frames", "dataset")),
            joints=int(_get(ds, "joints", "dataset")),
            view_ambiguity=float(_get(ds, "view_ambiguity", "dataset")),
            seed=int(_get(ds, "seed", "dataset")))
    elif kind == "manifest":
        manifest = _get(ds, "path", "dataset")
    else:
        raise ParseError(f"unknown dataset kind {kind!r}")

    st = sec.get("streams", {})
    pr = sec.get("proposal", {})
    pairs_text = pr.get("fixed_pairs", "none")
    fixed_pairs = None
    if pairs_text != "none":
        fixed_pairs = tuple(
            tuple(int(v) for v in item.split(":"))
            for item in pairs_text.split(","))
    bb = sec.get("backbone", {})
    op = sec.get("optimizer", {})
    optimizer = OptimizerConfig(
        lr=float(op.get("lr", 0.05)),
        momentum=float(op.get("momentum", 0.9)),
        decay_epochs=_parse_int_list(op.get("decay_epochs", "30,40")),
        decay_factor=float(op.get("decay_factor", 0.1)),
        epochs=int(op.get("epochs", 50)),
        batch_size=int(op.get("batch_size", 16)))
    co = sec.get("corruption", {"kind": "none"})
    corruption = None
    if co.get("kind", "none") != "none":
        corruption = CorruptionSpec(
            kind=co["kind"],
            rotation_bound=float(co.get("rotation_bound", 0.0)),
            affected_frame_fraction=float(
                co.get("affected_frame_fraction", 0.0)),
            joints_per_frame=int(co.get("joints_per_frame", 0)),
            noise_mean=float(co.get("noise_mean", 0.0)),
            noise_std=float(co.get("noise_std", 0.0)),
            seed=int(co.get("seed", 0)))
    run = sec.get("run", {})
    return ExperimentConfig(
        synthetic=synthetic,
        manifest=manifest,
        streams=tuple(_get(st, "enabled", "streams").split(",")),
        combine=st.get("combine", "score"),
        num_views=int(pr.get("num_views", 5)),
        attn_dim=int(pr.get("attn_dim", 8)),
        anchor_mode=pr.get("mode", "around_body"),
        dispersion=_parse_optional_float(pr.get("dispersion", "none")),
        fixed_pairs=fixed_pairs,
        fusion=sec.get("fusion", {}).get("strategy", "attention"),
        graph_channels=_parse_int_list(bb.get("graph_channels", "16,32")),
        temporal_channels=_parse_int_list(
            bb.get("temporal_channels", "32,32")),
        optimizer=optimizer,
        corruption=corruption,
        corrupt_train=run.get("corrupt_train", "false") == "true",
        eval_fraction=float(run.get("eval_fraction", 0.25)),
        t_fixed=int(run.get("t_fixed", 64)),
        seed=int(run.get("seed", 0)),
        output_dir=run.get("output_dir", ""))


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w") as f:
        f.write(config_to_text(cfg))


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return config_from_text(f.read())
