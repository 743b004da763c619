"""SGD training and evaluation loops.

One protocol: shuffled mini-batches, SGD with optional momentum and weight
decay, and a learning rate that decays linearly from its peak to zero over
the run.  Binary targets use the logistic link on the scalar output;
multiclass targets use softmax cross-entropy; the quadratic loss serves the
pooling-model landscape study.

Everything is deterministic given the config seed: shuffling comes from a
dedicated stream, and the loss history of a repeated run is bit-identical.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .datasets import LabeledDataset
from .models import ModelSpec, ParamSet
from .rng import Rng


class TrainingDiverged(RuntimeError):
    """Loss became NaN; carries the report prefix gathered so far."""

    def __init__(self, message: str, report: "TrainReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr_peak: float = 0.5
    momentum: float = 0.0
    weight_decay: float = 0.0
    loss: str = "cross-entropy"  # or "quadratic"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if self.lr_peak < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.loss not in ("cross-entropy", "quadratic"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass
class TrainReport:
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    epoch_train_accuracy: list = field(default_factory=list)
    epoch_test_accuracy: list = field(default_factory=list)
    final_params_hash: str = ""
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.losses)


def smoothed_losses(losses: np.ndarray, window: int = 50) -> np.ndarray:
    """Trailing moving average; shorter prefix windows use what exists."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        return losses
    csum = np.concatenate([[0.0], np.cumsum(losses)])
    idx = np.arange(1, losses.size + 1)
    start = np.maximum(idx - window, 0)
    return (csum[idx] - csum[start]) / (idx - start)


def iterations_to_threshold(report: TrainReport, tau: float, window: int = 50):
    """First iteration whose smoothed loss is <= tau, or None if never."""
    smooth = smoothed_losses(report.losses, window)
    hits = np.flatnonzero(smooth <= tau)
    return int(hits[0]) if hits.size else None


def _inputs_for(spec: ModelSpec, x_rows: np.ndarray) -> np.ndarray:
    return x_rows.reshape((x_rows.shape[0],) + tuple(spec.input_shape))


def _batch_loss(spec: ModelSpec, pnodes: dict, xb: np.ndarray, yb: np.ndarray, kind: str):
    out = spec.apply(pnodes, Node(xb))
    if spec.n_outputs == 1:
        if kind == "quadratic":
            return ad.nmean(ad.square(ad.sub(yb, out)))
        return ad.nmean(ad.softplus(ad.mul(out, -yb)))
    if kind == "quadratic":
        onehot = np.equal(np.arange(spec.n_outputs)[None, :], yb[:, None]).astype(float)
        return ad.nmean(ad.nsum(ad.square(ad.sub(out, onehot)), axis=-1))
    shift = ad.sub(out, np.max(out.value, axis=-1, keepdims=True))
    log_z = ad.log(ad.nsum(ad.exp(shift), axis=-1))
    true_logit = ad.nsum(ad.mul(shift, _onehot(yb, spec.n_outputs)), axis=-1)
    return ad.nmean(ad.sub(log_z, true_logit))


def _onehot(y: np.ndarray, n: int) -> np.ndarray:
    return np.equal(np.arange(n)[None, :], np.asarray(y).astype(int)[:, None]).astype(
        np.float64
    )


def sgd_train(
    spec: ModelSpec,
    params0: ParamSet,
    dataset: LabeledDataset,
    cfg: TrainConfig,
    test_dataset: LabeledDataset | None = None,
    track_epoch_accuracy: bool = False,
) -> tuple[ParamSet, TrainReport]:
    """Run SGD on the dataset; returns final parameters and the run report.

    lr_t = lr_peak * (1 - t / total_steps).  Shuffling is one full
    permutation per epoch from the seeded stream, and the last short batch
    is kept.  A NaN loss aborts with the partial report attached.
    """
    n = dataset.n
    x_all = _inputs_for(spec, dataset.x)
    y_all = np.asarray(dataset.y, dtype=np.float64)
    if spec.n_outputs > 1 and dataset.label_set and min(dataset.label_set) < 0:
        raise ValueError("multiclass training expects 0-based labels")
    shuffle_rng = Rng(cfg.seed, stream=101)
    blocks = {k: v.copy() for k, v in params0.blocks.items()}
    velocity = {k: np.zeros_like(v) for k, v in blocks.items()}
    batches_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * batches_per_epoch
    losses = []
    report = TrainReport()
    start = time.perf_counter()
    step = 0
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        for b in range(batches_per_epoch):
            rows = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            xb, yb = x_all[rows], y_all[rows]
            pnodes = {k: Node(v) for k, v in blocks.items()}
            loss = _batch_loss(spec, pnodes, xb, yb, cfg.loss)
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                report.losses = np.asarray(losses)
                report.wall_time = time.perf_counter() - start
                raise TrainingDiverged(
                    f"loss diverged at iteration {step}", report
                )
            losses.append(loss_val)
            order = [pnodes[info.name] for info in spec.layout()]
            grads = ad.grad(loss, order, create_graph=False)
            lr = cfg.lr_peak * (1.0 - step / total_steps)
            for info, g in zip(spec.layout(), grads):
                name = info.name
                update = g.value
                if cfg.weight_decay:
                    update = update + cfg.weight_decay * blocks[name]
                if cfg.momentum:
                    velocity[name] = cfg.momentum * velocity[name] + update
                    update = velocity[name]
                blocks[name] = blocks[name] - lr * update
            step += 1
        if track_epoch_accuracy:
            current = ParamSet(dict(blocks), spec.layout())
            report.epoch_train_accuracy.append(evaluate(spec, current, dataset))
            if test_dataset is not None:
                report.epoch_test_accuracy.append(
                    evaluate(spec, current, test_dataset)
                )
    final = ParamSet(blocks, spec.layout())
    report.losses = np.asarray(losses)
    report.wall_time = time.perf_counter() - start
    report.final_params_hash = hashlib.sha256(
        np.ascontiguousarray(final.flat(), dtype="<f8").tobytes()
    ).hexdigest()[:16]
    return final, report


def predict(spec: ModelSpec, params: ParamSet, x_rows: np.ndarray, chunk: int = 1024):
    """Class predictions: sign of the scalar output, or argmax of logits."""
    preds = []
    for lo in range(0, x_rows.shape[0], chunk):
        xb = _inputs_for(spec, x_rows[lo : lo + chunk])
        out = spec.apply(
            {k: Node(v) for k, v in params.blocks.items()}, Node(xb)
        ).value
        if spec.n_outputs == 1:
            preds.append(np.where(out > 0, 1.0, -1.0))
        else:
            preds.append(np.argmax(out, axis=-1).astype(np.float64))
    return np.concatenate(preds)


def evaluate(spec: ModelSpec, params: ParamSet, dataset: LabeledDataset) -> float:
    """Fraction of correct predictions."""
    if dataset.n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = predict(spec, params, dataset.x)
    return float(np.mean(preds == np.asarray(dataset.y, dtype=np.float64)))
