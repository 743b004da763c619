"""Experiment orchestration: sweeps, poisoning, flip arms, and rendering.

A sweep trains one fresh model per (direction, repeat) cell on data drawn
from the separable family aligned with that direction, and collects keyed
accuracy rows.  Each cell derives its own random streams from the sweep
seed, so results are independent of execution order and worker count, and
any row can be re-derived from the table metadata alone.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import spectral, tensorio
from .datasets import (
    LabeledDataset,
    LinearSepSpec,
    carrier_only_accuracy,
    flip_representation,
    poison,
    sample_linear,
)
from .models import ModelSpec, init_params, spec_from_dict
from .nads import NadBasis
from .rng import Rng
from .training import (
    TrainConfig,
    evaluate,
    iterations_to_threshold,
    sgd_train,
)

CSV_COLUMNS = [
    "direction_id",
    "label",
    "k1",
    "k2",
    "repeat",
    "n_train",
    "sigma",
    "train_accuracy",
    "test_accuracy",
    "iterations_to_threshold",
    "seed",
    "error",
]


@dataclass(frozen=True)
class SweepSpec:
    """Declarative description of one direction sweep."""

    model: ModelSpec
    source: dict  # direction source, see resolve_directions
    indices: tuple
    epsilon: float = 1.0
    sigma: float = 3.0
    n_train: int = 10000
    n_test: int = 10000
    train: TrainConfig = field(default_factory=TrainConfig)
    repeats: int = 3
    seed: int = 0
    loss_threshold: float = 0.01

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "source": _source_to_dict(self.source),
            "indices": list(self.indices),
            "epsilon": self.epsilon,
            "sigma": self.sigma,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "train": self.train.__dict__ | {},
            "repeats": self.repeats,
            "seed": self.seed,
            "loss_threshold": self.loss_threshold,
        }


def _source_to_dict(source: dict) -> dict:
    out = {k: v for k, v in source.items() if k != "basis"}
    if "basis" in source:
        out["basis"] = "<in-memory>"
    return out


def sweep_from_dict(doc: dict) -> SweepSpec:
    doc = dict(doc)
    doc["model"] = spec_from_dict(doc["model"])
    doc["train"] = TrainConfig(**doc["train"])
    doc["indices"] = tuple(doc["indices"])
    return SweepSpec(**doc)


@dataclass
class ExperimentTable:
    rows: list
    metadata: dict

    def column(self, name: str) -> list:
        return [row.get(name) for row in self.rows]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            out = {}
            for col in CSV_COLUMNS:
                val = row.get(col)
                if isinstance(val, float):
                    val = repr(val)
                out[col] = "" if val is None else val
            writer.writerow(out)
        return buf.getvalue()

    def save(self, base_path) -> None:
        tensorio.atomic_write_text(str(base_path) + ".csv", self.to_csv_text())
        tensorio.atomic_write_text(
            str(base_path) + ".json",
            json.dumps(self.metadata, sort_keys=True, indent=1, default=str),
        )

    def median_by_direction(self, column: str = "test_accuracy") -> dict:
        grouped: dict = {}
        for row in self.rows:
            if row.get("error"):
                continue
            grouped.setdefault(row["direction_id"], []).append(row[column])
        return {k: float(np.median(v)) for k, v in grouped.items()}


def stratified_indices(total: int, count: int) -> tuple:
    """Deterministic evenly spread index subset including both endpoints."""
    if count >= total:
        return tuple(range(total))
    return tuple(int(i) for i in np.unique(np.round(np.linspace(0, total - 1, count))))


def random_orthonormal(dim: int, seed: int) -> np.ndarray:
    """Haar-ish orthonormal matrix from a seeded QR factorization."""
    g = Rng(seed, stream=7).gaussian((dim, dim))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))[None, :]


def resolve_directions(source: dict) -> tuple:
    """(matrix (d, n), labels, extras) for a direction source description.

    Kinds: "fourier" (height/width/part), "nad-file" (path), "nad"
    (in-memory basis under key "basis"), "random-orthonormal" (dim/seed).
    """
    kind = source.get("kind")
    if kind == "fourier":
        basis = spectral.real_basis(source["height"], source["width"])
        part = source.get("part", "re")
        cols, labels, extras = [], [], []
        for vec, (k1, k2, p) in zip(basis.vectors, basis.index):
            if p != part:
                continue
            cols.append(vec.ravel())
            labels.append(f"{p}({k1},{k2})")
            extras.append({"k1": k1, "k2": k2})
        return np.stack(cols, axis=1), labels, extras
    if kind == "nad-file":
        basis = NadBasis.load(source["path"])
        n = basis.k
        return (
            basis.matrix(),
            [f"nad-{i}" for i in range(n)],
            [{} for _ in range(n)],
        )
    if kind == "nad":
        basis = source["basis"]
        return (
            basis.matrix(),
            [f"nad-{i}" for i in range(basis.k)],
            [{} for _ in range(basis.k)],
        )
    if kind == "random-orthonormal":
        mat = random_orthonormal(source["dim"], source.get("seed", 0))
        return (
            mat,
            [f"rand-{i}" for i in range(mat.shape[1])],
            [{} for _ in range(mat.shape[1])],
        )
    raise ValueError(f"unknown direction source kind {kind!r}")


def _row_seed(rng: Rng) -> int:
    return rng.stream & ((1 << 63) - 1)


def _run_cell(sweep: SweepSpec, directions, labels, extras, idx: int, rep: int) -> dict:
    row = {
        "direction_id": idx,
        "label": labels[idx],
        "repeat": rep,
        "n_train": sweep.n_train,
        "sigma": sweep.sigma,
        **extras[idx],
    }
    cell = Rng(sweep.seed).child(idx).child(rep)
    row["seed"] = _row_seed(cell)
    try:
        v = directions[:, idx]
        train = sample_linear(
            LinearSepSpec(v, sweep.epsilon, sweep.sigma, sweep.n_train), cell.child(0)
        )
        test = sample_linear(
            LinearSepSpec(v, sweep.epsilon, sweep.sigma, sweep.n_test), cell.child(1)
        )
        params0 = init_params(sweep.model, cell.child(2))
        cfg = sweep.train.with_seed(_row_seed(cell.child(3)))
        params, report = sgd_train(sweep.model, params0, train, cfg)
        row["train_accuracy"] = evaluate(sweep.model, params, train)
        row["test_accuracy"] = evaluate(sweep.model, params, test)
        row["iterations_to_threshold"] = iterations_to_threshold(
            report, sweep.loss_threshold
        )
        row["error"] = None
    except Exception as exc:  # keep sweeping; the row records its failure
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def direction_sweep(sweep: SweepSpec, workers: int = 1) -> ExperimentTable:
    directions, labels, extras = resolve_directions(sweep.source)
    for idx in sweep.indices:
        if not 0 <= idx < directions.shape[1]:
            raise IndexError(f"direction index {idx} out of range")
    jobs = [(idx, rep) for idx in sweep.indices for rep in range(sweep.repeats)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(
                pool.map(
                    lambda job: _run_cell(sweep, directions, labels, extras, *job),
                    jobs,
                )
            )
    else:
        rows = [_run_cell(sweep, directions, labels, extras, *job) for job in jobs]
    return ExperimentTable(rows, {"sweep": sweep.to_dict(), "kind": "direction-sweep"})


def rerun_row(sweep: SweepSpec, direction_id: int, repeat: int) -> dict:
    """Re-derive a single table row from the sweep spec (provenance check)."""
    directions, labels, extras = resolve_directions(sweep.source)
    return _run_cell(sweep, directions, labels, extras, direction_id, repeat)


def noise_sweep(sweep: SweepSpec, sigmas, workers: int = 1) -> dict:
    return {
        float(s): direction_sweep(replace(sweep, sigma=float(s)), workers)
        for s in sigmas
    }


def samples_sweep(sweep: SweepSpec, counts, workers: int = 1) -> ExperimentTable:
    rows = []
    for count in counts:
        table = direction_sweep(replace(sweep, n_train=int(count)), workers)
        rows.extend(table.rows)
    return ExperimentTable(
        rows,
        {
            "sweep": sweep.to_dict(),
            "kind": "samples-sweep",
            "counts": [int(c) for c in counts],
        },
    )


def poisoning_experiment(
    model: ModelSpec,
    train_ds: LabeledDataset,
    test_ds: LabeledDataset,
    basis: NadBasis,
    carrier_starts,
    epsilon: float,
    train_cfg: TrainConfig,
    seed: int = 0,
) -> ExperimentTable:
    """Train on carrier-poisoned data, evaluate on the clean test set.

    Every arm also records the carrier-template accuracy on its poisoned
    training set, which must be 1.0 by construction.
    """
    rows = []
    for arm, start in enumerate(carrier_starts):
        cell = Rng(seed).child(arm)
        poisoned = poison(train_ds, basis, start, epsilon)
        carrier_acc = carrier_only_accuracy(poisoned, basis, start, epsilon)
        params0 = init_params(model, cell.child(0))
        cfg = train_cfg.with_seed(_row_seed(cell.child(1)))
        params, _ = sgd_train(model, params0, poisoned, cfg)
        rows.append(
            {
                "carrier_start": int(start),
                "carrier_only_train_accuracy": carrier_acc,
                "train_accuracy": evaluate(model, params, poisoned),
                "clean_test_accuracy": evaluate(model, params, test_ds),
                "seed": _row_seed(cell),
            }
        )
    return ExperimentTable(
        rows,
        {
            "kind": "poisoning",
            "epsilon": epsilon,
            "carrier_starts": [int(c) for c in carrier_starts],
            "model": model.to_dict(),
            "train": train_cfg.__dict__ | {},
            "seed": seed,
        },
    )


def flip_experiment(
    model: ModelSpec,
    train_ds: LabeledDataset,
    test_ds: LabeledDataset,
    basis: NadBasis,
    train_cfg: TrainConfig,
    seed: int = 0,
) -> ExperimentTable:
    """Train on the dataset and on its basis-flipped representation."""
    u_matrix = basis.matrix()
    arms = {
        "original": (train_ds, test_ds),
        "flipped": (
            flip_representation(u_matrix, train_ds),
            flip_representation(u_matrix, test_ds),
        ),
    }
    rows = []
    for arm_idx, (name, (tr, te)) in enumerate(arms.items()):
        cell = Rng(seed).child(arm_idx)
        params0 = init_params(model, cell.child(0))
        cfg = train_cfg.with_seed(_row_seed(cell.child(1)))
        params, _ = sgd_train(model, params0, tr, cfg)
        rows.append(
            {
                "arm": name,
                "train_accuracy": evaluate(model, params, tr),
                "test_accuracy": evaluate(model, params, te),
                "seed": _row_seed(cell),
            }
        )
    return ExperimentTable(
        rows,
        {
            "kind": "flip",
            "model": model.to_dict(),
            "train": train_cfg.__dict__ | {},
            "seed": seed,
        },
    )


# ---------------------------------------------------------------------------
# rendering

SENTINEL_BYTE = 0


def _accuracy_to_byte(a: float) -> int:
    frac = min(max((a - 0.5) / 0.5, 0.0), 1.0)
    return 1 + int(round(254 * frac))


def render_heatmap(
    table: ExperimentTable, height: int, width: int
) -> tuple[bytes, str]:
    """Fourier-grid accuracy image: one pixel per direction, low freqs centered.

    Accuracy 0.5 maps to near-black (byte 1), 1.0 to white (255); pixels with
    no measurement (unswept directions and the imaginary-part gaps at
    self-conjugate bins) carry the sentinel byte 0.  Returns (PGM bytes, SVG
    text); both renderings are byte-stable for identical tables.
    """
    grid = np.full((height, width), -1.0)
    has_grid_keys = False
    medians: dict = {}
    for row in table.rows:
        if row.get("error") or row.get("k1") is None:
            continue
        has_grid_keys = True
        key = (int(row["k1"]), int(row["k2"]))
        medians.setdefault(key, []).append(row["test_accuracy"])
    if not has_grid_keys:
        raise ValueError("table has no Fourier grid keys (k1, k2)")
    for (k1, k2), vals in medians.items():
        r, c = spectral.centered_position(k1, k2, height, width)
        grid[r, c] = float(np.median(vals))
    pixels = np.full((height, width), SENTINEL_BYTE, dtype=np.uint8)
    mask = grid >= 0
    pixels[mask] = [
        _accuracy_to_byte(a) for a in grid[mask]
    ]
    header = (
        f"P5\n# accuracy heatmap: 0.5->1, 1.0->255, sentinel=0\n{width} {height}\n255\n"
    )
    pgm = header.encode() + pixels.tobytes()

    cell = 8
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{width * cell + 60}" height="{height * cell + 60}">',
        f'<text x="{30 + width * cell / 2:.0f}" y="20" text-anchor="middle" '
        f'font-size="12">test accuracy by frequency (centered)</text>',
    ]
    for r in range(height):
        for c in range(width):
            val = pixels[r, c]
            fill = f"rgb({val},{val},{val})" if val != SENTINEL_BYTE else "rgb(40,10,10)"
            parts.append(
                f'<rect x="{30 + c * cell}" y="{30 + r * cell}" '
                f'width="{cell}" height="{cell}" fill="{fill}"/>'
            )
    parts.append(
        f'<text x="{30 + width * cell / 2:.0f}" y="{height * cell + 50}" '
        f'text-anchor="middle" font-size="11">k2 (low at center)</text>'
    )
    parts.append(
        f'<text x="12" y="{30 + height * cell / 2:.0f}" font-size="11" '
        f'transform="rotate(-90 12 {30 + height * cell / 2:.0f})">k1 (low at center)</text>'
    )
    parts.append("</svg>")
    return pgm, "\n".join(parts)
