"""Command-line entry point.

Commands: gen-basis, compute-nads, sweep, noise-sweep, poison, flip,
samples-sweep, oracles, render.  Every run resolves a declarative JSON
config (overridable by flags), writes a manifest before doing work, writes
all artifacts atomically, and exits 0 only if the requested suite's
assertions hold.  The dataset root comes from --data or $NADLAB_DATA.

All file outputs are deterministic in (config, seed, workers); wall-clock
information lives only in the manifest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, datasets, experiments, models, nads, oracles, spectral, tensorio
from .rng import Rng
from .training import TrainConfig, evaluate, sgd_train


class ConfigError(ValueError):
    """Schema violation, reported with the JSON path of the offending field."""


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()[:16]


class Manifest:
    """Run provenance written before work starts and finalized after."""

    def __init__(self, path, command: str, config: dict, seed, inputs=()):
        self.path = path
        self.doc = {
            "command": command,
            "config": config,
            "master_seed": seed,
            "code_version": __version__,
            "inputs": {str(p): _file_hash(p) for p in inputs if os.path.exists(p)},
            "outputs": [],
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "status": "running",
        }
        self._write()

    def _write(self):
        tensorio.atomic_write_text(
            self.path, json.dumps(self.doc, sort_keys=True, indent=1, default=str)
        )

    def add_output(self, path):
        self.doc["outputs"].append(str(path))

    def finish(self, status="complete"):
        self.doc["status"] = status
        self.doc["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        self.doc["output_hashes"] = {
            p: _file_hash(p) for p in self.doc["outputs"] if os.path.exists(p)
        }
        self._write()


def _expect(doc, path: str, key: str, kind, required=True, default=None):
    if key not in doc:
        if required:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    val = doc[key]
    kinds = kind if isinstance(kind, tuple) else (kind,)
    bad = isinstance(val, bool) and bool not in kinds or not isinstance(val, kinds)
    if bad:
        names = "/".join(k.__name__ for k in kinds)
        raise ConfigError(f"{path}.{key}: expected {names}, got {type(val).__name__}")
    return val


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"$: config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"$: invalid JSON in {path}: {exc}") from None
    version = _expect(doc, "$", "version", int)
    if version != 1:
        raise ConfigError(f"$.version: unsupported config version {version}")
    return doc


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def _data_root(args) -> str | None:
    return getattr(args, "data", None) or os.environ.get("NADLAB_DATA")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_basis(args) -> int:
    out = args.out
    manifest = Manifest(
        str(out) + ".manifest.json",
        "gen-basis",
        {"height": args.height, "width": args.width},
        None,
    )
    basis = spectral.real_basis(args.height, args.width)
    basis.save(out)
    manifest.add_output(out)
    manifest.finish()
    print(f"wrote {out}: {basis.dim} vectors for {args.height}x{args.width}")
    return 0


def cmd_compute_nads(args) -> int:
    spec = models.load_spec(args.model)
    eval_point = None
    if args.eval_point:
        eval_point, _ = tensorio.read_tensor(args.eval_point)
    cfg = nads.NadConfig(
        t=args.samples, h=args.fd_scale, top_k=args.top_k, eval_point=eval_point
    )
    rng = Rng(args.seed)
    manifest = Manifest(
        str(args.out) + ".manifest.json",
        "compute-nads",
        {"model": args.model, "algo": args.algo, "T": args.samples, "h": args.fd_scale,
         "top_k": args.top_k},
        args.seed,
        inputs=[args.model] + ([args.eval_point] if args.eval_point else []),
    )
    if args.algo == "grad-cov":
        basis = nads.nads_gradient_covariance(spec, cfg, rng)
    else:
        basis = nads.nads_mixed_second_derivative(spec, cfg, rng)
    basis.save(args.out)
    manifest.add_output(args.out)
    manifest.finish()
    warnings = basis.provenance.get("warnings") or []
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {args.out}: {basis.k} directions ({args.algo})")
    return 0


def _sweep_from_config(doc, args) -> experiments.SweepSpec:
    sweep_doc = _expect(doc, "$", "sweep", dict)
    model_doc = _expect(sweep_doc, "$.sweep", "model", dict)
    try:
        model = models.spec_from_dict(model_doc)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"$.sweep.model: {exc}") from None
    source = _expect(sweep_doc, "$.sweep", "source", dict)
    if source.get("kind") == "nad-file" and not os.path.isabs(source.get("path", "")):
        source = dict(source)
        source["path"] = os.path.join(os.path.dirname(args.config), source["path"])
    indices = _expect(sweep_doc, "$.sweep", "indices", list)
    train = TrainConfig(**_expect(sweep_doc, "$.sweep", "train", dict, required=False, default={}))
    spec = experiments.SweepSpec(
        model=model,
        source=source,
        indices=tuple(indices),
        epsilon=float(_expect(sweep_doc, "$.sweep", "epsilon", (int, float), False, 1.0)),
        sigma=float(_expect(sweep_doc, "$.sweep", "sigma", (int, float), False, 3.0)),
        n_train=_expect(sweep_doc, "$.sweep", "n_train", int, False, 10000),
        n_test=_expect(sweep_doc, "$.sweep", "n_test", int, False, 10000),
        train=train,
        repeats=_expect(sweep_doc, "$.sweep", "repeats", int, False, 3),
        seed=args.seed if args.seed is not None else _expect(sweep_doc, "$.sweep", "seed", int, False, 0),
        loss_threshold=float(
            _expect(sweep_doc, "$.sweep", "loss_threshold", (int, float), False, 0.01)
        ),
    )
    return spec


def _out_dir(args, default: str) -> str:
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def cmd_sweep(args) -> int:
    doc = _load_config(args.config)
    sweep = _sweep_from_config(doc, args)
    out = _out_dir(args, "sweep-run")
    manifest = Manifest(
        os.path.join(out, "manifest.json"), "sweep", doc, sweep.seed, inputs=[args.config]
    )
    table = experiments.direction_sweep(sweep, workers=args.workers)
    base = os.path.join(out, doc.get("name", "sweep"))
    table.save(base)
    manifest.add_output(base + ".csv")
    manifest.add_output(base + ".json")
    render = doc.get("render")
    if render and sweep.source.get("kind") == "fourier":
        pgm, svg = experiments.render_heatmap(
            table, render.get("height", 32), render.get("width", 32)
        )
        tensorio.atomic_write_bytes(base + ".pgm", pgm)
        tensorio.atomic_write_text(base + ".svg", svg)
        manifest.add_output(base + ".pgm")
        manifest.add_output(base + ".svg")
    manifest.finish()
    errors = [r for r in table.rows if r.get("error")]
    print(f"{len(table.rows)} rows ({len(errors)} failed) -> {base}.csv")
    return 0 if not errors else 1


def cmd_noise_sweep(args) -> int:
    doc = _load_config(args.config)
    sweep = _sweep_from_config(doc, args)
    sigmas = [float(s) for s in args.sigmas.split(",")] if args.sigmas else doc.get(
        "sigmas", [0.0, 1.0, 3.0]
    )
    out = _out_dir(args, "noise-sweep-run")
    manifest = Manifest(
        os.path.join(out, "manifest.json"), "noise-sweep", doc, sweep.seed,
        inputs=[args.config],
    )
    tables = experiments.noise_sweep(sweep, sigmas, workers=args.workers)
    failed = 0
    for sigma, table in tables.items():
        base = os.path.join(out, f"{doc.get('name', 'noise')}-sigma{sigma:g}")
        table.save(base)
        manifest.add_output(base + ".csv")
        failed += sum(1 for r in table.rows if r.get("error"))
    manifest.finish()
    print(f"{len(tables)} sigma tables -> {out}")
    return 0 if not failed else 1


def cmd_samples_sweep(args) -> int:
    doc = _load_config(args.config)
    sweep = _sweep_from_config(doc, args)
    counts = [int(c) for c in args.counts.split(",")] if args.counts else doc.get(
        "counts", [500, 2000, 10000]
    )
    out = _out_dir(args, "samples-sweep-run")
    manifest = Manifest(
        os.path.join(out, "manifest.json"), "samples-sweep", doc, sweep.seed,
        inputs=[args.config],
    )
    table = experiments.samples_sweep(sweep, counts, workers=args.workers)
    base = os.path.join(out, doc.get("name", "samples"))
    table.save(base)
    manifest.add_output(base + ".csv")
    manifest.finish()
    errors = [r for r in table.rows if r.get("error")]
    print(f"{len(table.rows)} rows ({len(errors)} failed) -> {base}.csv")
    return 0 if not errors else 1


def _resolve_dataset(doc, args, seed: int) -> datasets.Cifar10:
    ds_doc = _expect(doc, "$", "dataset", dict)
    kind = _expect(ds_doc, "$.dataset", "kind", str)
    subset = _expect(ds_doc, "$.dataset", "subset", int, False, 10000)
    test_subset = _expect(ds_doc, "$.dataset", "test_subset", int, False, 10000)
    if kind == "cifar10":
        root = _data_root(args)
        if not root:
            raise ConfigError(
                "$.dataset: kind cifar10 needs --data or $NADLAB_DATA pointing at the "
                "binary batches"
            )
        pair = datasets.load_cifar10(root)
    elif kind == "synthetic":
        pair = datasets.synthetic_cifar_like(
            _expect(ds_doc, "$.dataset", "n_train", int, False, 50000),
            _expect(ds_doc, "$.dataset", "n_test", int, False, 10000),
            Rng(seed, stream=11),
            signal=float(_expect(ds_doc, "$.dataset", "signal", (int, float), False, 0.35)),
            noise=float(_expect(ds_doc, "$.dataset", "noise", (int, float), False, 0.25)),
        )
    else:
        raise ConfigError(f"$.dataset.kind: expected 'cifar10' or 'synthetic', got {kind!r}")
    train, test = pair
    if subset and subset < train.n:
        train = train.subset(np.arange(subset))
    if test_subset and test_subset < test.n:
        test = test.subset(np.arange(test_subset))
    return datasets.Cifar10(train, test)


def _resolve_nad_basis(doc, args, seed: int) -> nads.NadBasis:
    nad_doc = _expect(doc, "$", "nads", dict)
    if "path" in nad_doc:
        path = nad_doc["path"]
        if not os.path.isabs(path):
            path = os.path.join(os.path.dirname(args.config), path)
        return nads.NadBasis.load(path)
    model = models.spec_from_dict(_expect(nad_doc, "$.nads", "model", dict))
    cfg = nads.NadConfig(
        t=_expect(nad_doc, "$.nads", "t", int, False, 2000),
        h=float(_expect(nad_doc, "$.nads", "h", (int, float), False, 100.0)),
        top_k=nad_doc.get("top_k"),
    )
    return nads.nads_gradient_covariance(model, cfg, Rng(seed, stream=23))


def cmd_poison(args) -> int:
    doc = _load_config(args.config)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    out = _out_dir(args, "poison-run")
    manifest = Manifest(
        os.path.join(out, "manifest.json"), "poison", doc, seed, inputs=[args.config]
    )
    pair = _resolve_dataset(doc, args, seed)
    basis = _resolve_nad_basis(doc, args, seed)
    model = models.spec_from_dict(_expect(doc, "$", "model", dict))
    train_cfg = TrainConfig(**doc.get("train", {}))
    carrier_starts = _expect(doc, "$", "carrier_starts", list)
    epsilon = float(_expect(doc, "$", "epsilon", (int, float), False, 0.05))
    table = experiments.poisoning_experiment(
        model, pair.train, pair.test, basis, carrier_starts, epsilon, train_cfg, seed
    )
    base = os.path.join(out, doc.get("name", "poison"))
    _save_generic_table(table, base)
    manifest.add_output(base + ".csv")
    manifest.finish()
    bad = [r for r in table.rows if r["carrier_only_train_accuracy"] < 1.0]
    print(f"{len(table.rows)} arms -> {base}.csv")
    return 0 if not bad else 1


def cmd_flip(args) -> int:
    doc = _load_config(args.config)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    out = _out_dir(args, "flip-run")
    manifest = Manifest(
        os.path.join(out, "manifest.json"), "flip", doc, seed, inputs=[args.config]
    )
    pair = _resolve_dataset(doc, args, seed)
    basis = _resolve_nad_basis(doc, args, seed)
    if basis.k != basis.dim:
        raise ConfigError(
            f"$.nads: flip needs a complete square basis, got {basis.k} of {basis.dim} "
            "directions"
        )
    model = models.spec_from_dict(_expect(doc, "$", "model", dict))
    train_cfg = TrainConfig(**doc.get("train", {}))
    table = experiments.flip_experiment(
        model, pair.train, pair.test, basis, train_cfg, seed
    )
    base = os.path.join(out, doc.get("name", "flip"))
    _save_generic_table(table, base)
    manifest.add_output(base + ".csv")
    manifest.finish()
    print(f"{len(table.rows)} arms -> {base}.csv")
    return 0


def _save_generic_table(table: experiments.ExperimentTable, base: str) -> None:
    columns = sorted({k for row in table.rows for k in row})
    lines = [",".join(columns)]
    for row in table.rows:
        cells = []
        for col in columns:
            val = row.get(col)
            cells.append("" if val is None else (repr(val) if isinstance(val, float) else str(val)))
        lines.append(",".join(cells))
    tensorio.atomic_write_text(base + ".csv", "\n".join(lines) + "\n")
    tensorio.atomic_write_text(
        base + ".json", json.dumps(table.metadata, sort_keys=True, indent=1, default=str)
    )


def cmd_oracles(args) -> int:
    report = oracles.run_oracle_suite(suite=args.suite, seed=args.seed, fast=args.fast)
    text = json.dumps(report, sort_keys=True, indent=1)
    if args.out:
        manifest = Manifest(
            str(args.out) + ".manifest.json", "oracles",
            {"suite": args.suite, "fast": args.fast}, args.seed,
        )
        tensorio.atomic_write_text(args.out, text)
        manifest.add_output(args.out)
        manifest.finish("complete" if report["pass"] else "failed")
    else:
        print(text)
    for check in report["checks"]:
        status = "pass" if check["pass"] else "FAIL"
        print(f"[{status}] {check['quantity']}")
    print(f"suite {args.suite}: {'pass' if report['pass'] else 'FAIL'}")
    return 0 if report["pass"] else 1


def cmd_render(args) -> int:
    rows = _read_csv_rows(args.table)
    table = experiments.ExperimentTable(rows, {"kind": "loaded"})
    pgm, svg = experiments.render_heatmap(table, args.height, args.width)
    tensorio.atomic_write_bytes(args.out, pgm)
    tensorio.atomic_write_text(os.path.splitext(args.out)[0] + ".svg", svg)
    print(f"wrote {args.out}")
    return 0


def _read_csv_rows(path) -> list:
    import csv as _csv

    rows = []
    with open(path) as fh:
        for record in _csv.DictReader(fh):
            row = dict(record)
            for key in ("k1", "k2", "direction_id", "repeat"):
                if row.get(key):
                    row[key] = int(float(row[key]))
                else:
                    row[key] = None
            for key in ("train_accuracy", "test_accuracy"):
                row[key] = float(row[key]) if row.get(key) else None
            row["error"] = row.get("error") or None
            rows.append(row)
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nadlab",
        description="directional inductive bias toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-basis", help="write the real 2D Fourier basis")
    p.add_argument("--height", type=_positive_int, required=True)
    p.add_argument("--width", type=_positive_int, required=True)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(fn=cmd_gen_basis)

    p = sub.add_parser("compute-nads", help="identify anisotropy directions")
    p.add_argument("--model", required=True, help="model spec JSON file")
    p.add_argument("--algo", choices=["grad-cov", "mixed"], default="grad-cov")
    p.add_argument("--samples", type=_positive_int, default=5000,
                   help="Monte-Carlo draws T (default 5000)")
    p.add_argument("--fd-scale", type=float, default=100.0,
                   help="finite-difference scale h (default 100)")
    p.add_argument("--top-k", type=_positive_int, default=None)
    p.add_argument("--eval-point", default=None, help="tensor file; default zeros")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(fn=cmd_compute_nads)

    for name, fn in (
        ("sweep", cmd_sweep),
        ("noise-sweep", cmd_noise_sweep),
        ("samples-sweep", cmd_samples_sweep),
    ):
        p = sub.add_parser(name, help=f"run a {name.replace('-', ' ')} from a config")
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--workers", type=_positive_int, default=1)
        p.add_argument("-o", "--out", default=None)
        if name == "noise-sweep":
            p.add_argument("--sigmas", default=None, help="comma list, e.g. 0,1,3")
        if name == "samples-sweep":
            p.add_argument("--counts", default=None, help="comma list of n_train values")
        p.set_defaults(fn=fn)

    for name, fn in (("poison", cmd_poison), ("flip", cmd_flip)):
        p = sub.add_parser(name, help=f"run the {name} experiment from a config")
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=_positive_int, default=1)
        p.add_argument("--data", default=None, help="dataset root (or $NADLAB_DATA)")
        p.add_argument("-o", "--out", default=None)
        p.set_defaults(fn=fn)

    p = sub.add_parser("oracles", help="closed-form vs Monte-Carlo verification")
    p.add_argument("--suite", choices=["all", "thm1", "lemma1", "covariances"],
                   default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fast", action="store_true", help="smoke-scale draw counts")
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(fn=cmd_oracles)

    p = sub.add_parser("render", help="render a sweep table as a PGM heatmap")
    p.add_argument("--table", required=True, help="sweep CSV file")
    p.add_argument("--height", type=_positive_int, default=32)
    p.add_argument("--width", type=_positive_int, default=32)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(fn=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
