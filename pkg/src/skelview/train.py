"""SGD-with-momentum training loop, metrics, and gradient verification.

The update is v <- momentum * v + grad; p <- p - lr * v, with the learning
rate stepped down by a fixed factor at the configured epochs. Shuffling is
owned by a seeded generator, so a full run is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingDiverged
from .model import ActionModel, forward_sample, loss_and_grads
from .network import softmax_cross_entropy


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.05
    momentum: float = 0.9
    decay_epochs: tuple[int, ...] = (30, 40)
    decay_factor: float = 0.1
    epochs: int = 50
    batch_size: int = 16


def learning_rate(cfg: OptimizerConfig, epoch: int) -> float:
    steps = sum(1 for e in cfg.decay_epochs if epoch >= e)
    return cfg.lr * cfg.decay_factor ** steps


def sgd_step(params, grads, velocity, lr: float, momentum: float) -> None:
    """In-place momentum update on the live parameter arrays."""
    for name, p in params.items():
        v = velocity[name]
        v *= momentum
        v += grads[name]
        p -= lr * v


def evaluate_loss(model: ActionModel, sequences):
    """Mean cross-entropy and top-1 accuracy, forward only."""
    total = 0.0
    correct = 0
    for seq in sequences:
        logits, _ = forward_sample(model, seq)
        loss, _ = softmax_cross_entropy(logits, seq.label)
        total += loss
        if int(np.argmax(logits)) == seq.label:
            correct += 1
    n = max(len(sequences), 1)
    return total / n, correct / n


def train(model: ActionModel, train_seqs, val_seqs,
          cfg: OptimizerConfig, seed: int = 0) -> list[dict]:
    """Train in place; returns per-epoch metric rows (train and val)."""
    params = model.parameters()
    velocity = {name: np.zeros_like(p) for name, p in params.items()}
    rng = np.random.default_rng([0x7124, seed & 0xFFFFFFFFFFFFFFFF])
    metrics: list[dict] = []
    n = len(train_seqs)
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        order = rng.permutation(n)
        run_loss = 0.0
        run_correct = 0
        for start in range(0, n, cfg.batch_size):
            batch = [train_seqs[i] for i in order[start:start + cfg.batch_size]]
            loss, grads, correct = loss_and_grads(model, batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}")
            run_loss += loss * len(batch)
            run_correct += correct
            sgd_step(params, grads, velocity, lr, cfg.momentum)
        metrics.append({"epoch": epoch, "split": "train",
                        "loss": run_loss / max(n, 1),
                        "accuracy": run_correct / max(n, 1), "lr": lr})
        if val_seqs:
            val_loss, val_acc = evaluate_loss(model, val_seqs)
            metrics.append({"epoch": epoch, "split": "val", "loss": val_loss,
                            "accuracy": val_acc, "lr": lr})
    return metrics


def metrics_csv(metrics) -> str:
    lines = ["epoch,split,loss,accuracy,lr"]
    for row in metrics:
        lines.append(f"{row['epoch']},{row['split']},{row['loss']!r},"
                     f"{row['accuracy']!r},{row['lr']!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def _batch_loss(model: ActionModel, batch) -> float:
    total = 0.0
    for seq in batch:
        logits, _ = forward_sample(model, seq)
        loss, _ = softmax_cross_entropy(logits, seq.label)
        total += loss
    return total / len(batch)


def verify_gradients(model: ActionModel, batch, h: float = 1e-5,
                     tol: float = 1e-4, sample_size: int | None = None,
                     seed: int = 0, sign_flip: str | None = None) -> dict:
    """Central finite differences against the analytic gradients.

    Checks every parameter entry, or a seeded random subsample of
    `sample_size` entries. `sign_flip` negates one named analytic gradient
    before comparing; it exists as a fault-injection self-test of the
    checker. Relative error uses max(|analytic|, |numeric|, 1e-6) as the
    denominator so vanishing gradients compare cleanly.
    """
    params = model.parameters()
    _, grads, _ = loss_and_grads(model, batch)
    if sign_flip is not None:
        grads[sign_flip] = -grads[sign_flip]

    entries = [(name, idx) for name, p in params.items()
               for idx in range(max(p.size, 1))]
    if sample_size is not None and sample_size < len(entries):
        rng = np.random.default_rng([0xFD, seed & 0xFFFFFFFFFFFFFFFF])
        pick = rng.choice(len(entries), size=sample_size, replace=False)
        entries = [entries[i] for i in sorted(pick)]

    max_rel = 0.0
    worst = None
    for name, idx in entries:
        p = params[name]
        orig = float(p.flat[idx] if p.ndim else p)
        _assign(p, idx, orig + h)
        plus = _batch_loss(model, batch)
        _assign(p, idx, orig - h)
        minus = _batch_loss(model, batch)
        _assign(p, idx, orig)
        numeric = (plus - minus) / (2.0 * h)
        analytic = float(np.asarray(grads[name]).flat[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        if rel > max_rel:
            max_rel = rel
            worst = (name, idx, analytic, numeric)
    return {"max_rel_error": max_rel, "passed": max_rel <= tol,
            "checked": len(entries), "tol": tol, "h": h, "worst": worst}


def _assign(p: np.ndarray, idx: int, value: float) -> None:
    if p.ndim:
        p.flat[idx] = value
    else:
        p[...] = value
