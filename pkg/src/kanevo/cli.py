"""Command-line entry point: ``kanevo search | eval | symbolic | toy``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
3 symbolic extraction not ready.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, interpret
from ._accel import backend
from .data import DataLoadError, Dataset, SplitSpec, load_csv, read_sidecar, save_csv, split, toy_generate, toy_sample
from .evolution import GaConfig, run
from .genome import SearchSpace, chromosome_length, decode, genome_to_dict, save_genome
from .losses import metrics
from .network import (
    ContractError,
    KanSpec,
    ModelFormatError,
    forward,
    init_model,
    load_model,
    param_count,
    save_model,
    spec_param_count,
    to_dot,
)
from .trainer import TrainConfig, train

log = logging.getLogger("kanevo")

REPORT_VERSION = "1.0"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_NOT_READY = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class ReportVersionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class DataSource:
    csv: str | None = None
    label: str | int = -1
    toy: str | None = None
    n_train: int = 1000
    n_val: int = 1000
    n_test: int = 1000


@dataclass
class RunConfig:
    data: DataSource
    split: dict = field(default_factory=dict)
    space: dict = field(default_factory=dict)
    ga: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    out: str = "runs/latest"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _known(cls, rec: dict, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(rec) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {unknown}; allowed: {sorted(names)}")
    return rec


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """File values, then flag overrides (flag > file > default)."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
    allowed = {"data", "split", "space", "ga", "train", "out", "seed"}
    if set(doc) - allowed:
        raise ConfigError(f"config: unknown section(s) {sorted(set(doc) - allowed)}; allowed: {sorted(allowed)}")
    for key in ("data", "split", "space", "ga", "train"):
        if not isinstance(doc.get(key, {}), dict):
            raise ConfigError(f"config.{key} must be an object")
    data = dict(doc.get("data", {}))
    for k in ("csv", "label", "toy"):
        if overrides.get(k) is not None:
            data[k] = overrides[k]
    cfg = RunConfig(
        data=DataSource(**_known(DataSource, data, "config.data")),
        split=dict(doc.get("split", {})),
        space=dict(doc.get("space", {})),
        ga=dict(doc.get("ga", {})),
        train=dict(doc.get("train", {})),
        out=str(overrides.get("out") or doc.get("out", "runs/latest")),
        seed=int(overrides["seed"] if overrides.get("seed") is not None else doc.get("seed", 0)),
    )
    for k in ("workers", "population", "generations"):
        if overrides.get(k) is not None:
            cfg.ga[k] = overrides[k]
    if overrides.get("steps") is not None:
        cfg.train["steps"] = overrides["steps"]
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    d = cfg.data
    if (d.csv is None) == (d.toy is None):
        raise ConfigError("config.data: give exactly one of 'csv' or 'toy'")
    if d.csv is not None and not Path(d.csv).is_file():
        raise ConfigError(f"config.data.csv: file {d.csv} does not exist")
    if d.toy is not None and d.toy not in ("eq6a", "eq6b"):
        raise ConfigError(f"config.data.toy: unknown formula {d.toy!r}; expected eq6a or eq6b")
    for name in ("n_train", "n_val", "n_test"):
        if int(getattr(d, name)) < 1:
            raise ConfigError(f"config.data.{name} must be >= 1")
    for section, cls in (("split", SplitSpec), ("ga", GaConfig), ("train", TrainConfig)):
        rec = _known(cls, getattr(cfg, section), f"config.{section}")
        try:
            cls(**rec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.{section}: {exc}") from None
    _known(SearchSpace, cfg.space, "config.space")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _label_arg(v):
    return int(v) if isinstance(v, str) and v.lstrip("-").isdigit() else v


def _load_for_eval(path: str, label) -> Dataset:
    side = read_sidecar(path)
    task = "classification"
    classes = None
    if side is not None:
        task = side.get("task", task)
        mapping = side.get("class_mapping") or {}
        classes = [name for name, _ in sorted(mapping.items(), key=lambda kv: kv[1])] or None
    return load_csv(path, _label_arg(label), task=task, class_names=classes)


def _prepare_data(cfg: RunConfig) -> tuple[Dataset, Dataset, Dataset]:
    d = cfg.data
    if d.toy is not None:
        tr, va = toy_generate(d.toy, d.n_train, d.n_val, seed=cfg.seed)
        te = toy_sample(d.toy, d.n_test, np.random.default_rng([cfg.seed, 1]))
        return tr, va, te
    ds = load_csv(d.csv, _label_arg(d.label))
    spec = SplitSpec(**{"seed": cfg.seed, **cfg.split})
    return split(ds, spec)


def _evaluate(model, ds: Dataset) -> dict:
    scores = forward(model, ds.X)
    if ds.task == "classification":
        out = metrics(scores, ds.y)
        # AUC is only defined for binary tasks; omit it otherwise
        return {k: (float(v) if math.isfinite(v) else None) for k, v in out.items() if v is not None}
    return {"mse": float(np.mean((scores[:, 0] - ds.y) ** 2))}


def _json_num(v):
    return v if (not isinstance(v, float) or math.isfinite(v)) else ("inf" if v > 0 else "nan")


def read_report(path) -> dict:
    doc = json.loads(Path(path).read_text())
    ver = str(doc.get("report_version", ""))
    if ver.split(".")[0] != REPORT_VERSION.split(".")[0]:
        raise ReportVersionError(f"unsupported report_version {ver!r} (this build reads {REPORT_VERSION})")
    return doc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_search(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    t0 = time.perf_counter()
    tr, va, te = _prepare_data(cfg)
    if tr.task == "classification" and tr.n_classes < 2:
        raise ConfigError("config.data: classification needs at least two classes")
    space = SearchSpace(**{"n": tr.n_features, "m": tr.n_outputs, **cfg.space})
    if space.n != tr.n_features or space.m != tr.n_outputs:
        raise ConfigError(f"config.space: n={space.n}, m={space.m} does not match the data ({tr.n_features}, {tr.n_outputs})")
    ga = GaConfig(**{"seed": cfg.seed, "workers": os.cpu_count() or 1, **cfg.ga})
    tc = TrainConfig(**{"loss_kind": tr.loss_kind, **cfg.train})

    snap = out / "data"
    snap.mkdir(exist_ok=True)
    label_name = "target" if tr.task == "regression" else "label"
    for name, part in (("train", tr), ("val", va), ("test", te)):
        idx = {name: part.indices} if part.indices is not None else None
        save_csv(part, snap / f"{name}.csv", idx, label_name)

    log.info("search space %s, %d-bit chromosomes", space, chromosome_length(space))
    result = run(space, tr.as_pair(), va.as_pair(), ga, tc)
    result.save_history_csv(out / "history.csv")
    save_genome(space, result.best.bits, out / "genome.json")
    dec = decode(space, result.best.bits)

    report = {
        "report_version": REPORT_VERSION,
        "package_version": __version__,
        "backend": backend(),
        "config": cfg.to_dict(),
        "best_genome": genome_to_dict(space, result.best.bits),
        "best_fitness": _json_num(result.best.fitness),
        "history": [{k: _json_num(v) for k, v in h.items()} for h in result.history_dicts()],
        "evaluations": result.evaluations,
        "cache_hits": result.cache_hits,
        "formulas": None,
    }
    if dec.valid:
        # retrain the winner once with the run seed so test metrics do not
        # come from a fitness-time snapshot
        model = init_model(dec.spec, tr.X, seed=cfg.seed)
        final = train(model, tr.as_pair(), va.as_pair(), tc)
        save_model(model, out / "model.json")
        (out / "architecture.dot").write_text(to_dot(model, tr.feature_names))
        sizes = space.max_spec_layer_sizes()
        dense = KanSpec(sizes, tuple(np.ones((b, a), np.uint8) for a, b in zip(sizes[:-1], sizes[1:])), dec.spec.grid)
        report.update(
            {
                "final_min_val_loss": _json_num(final.min_val_loss),
                "test": _evaluate(model, te),
                "param_count": param_count(model),
                "full_param_count": spec_param_count(dense),
                "layer_sizes": list(dec.spec.layer_sizes),
                "grid": dec.spec.grid,
                "n_edges": dec.spec.n_edges(),
            }
        )
    else:
        report.update({"test": None, "param_count": None})
    report["wall_clock"] = time.perf_counter() - t0
    (out / "report.json").write_text(json.dumps(report, indent=1) + "\n")
    return report


def cmd_eval(model_path: str, data_path: str, label) -> dict:
    if not Path(model_path).is_file():
        raise FileNotFoundError(f"model file {model_path} does not exist")
    if not Path(data_path).is_file():
        raise FileNotFoundError(f"data file {data_path} does not exist")
    model = load_model(model_path)
    ds = _load_for_eval(data_path, label)
    if ds.n_features != model.spec.n_inputs:
        raise ContractError(f"model expects {model.spec.n_inputs} features, {data_path} has {ds.n_features}")
    if ds.task == "classification" and ds.n_classes > model.spec.n_outputs:
        raise ContractError(f"data has {ds.n_classes} classes, model has {model.spec.n_outputs} outputs")
    res = _evaluate(model, ds)
    res["param_count"] = param_count(model)
    res["n_samples"] = len(ds)
    return res


def parse_fix(text: str) -> tuple[tuple[int, int, int], str]:
    try:
        edge, prim = text.split("=", 1)
        l, j, i = (int(v) for v in edge.split(","))
    except ValueError:
        raise ConfigError(f"--fix expects l,j,i=primitive, got {text!r}") from None
    return (l, j, i), prim.strip()


def cmd_symbolic(
    model_path: str,
    data_path: str,
    label=-1,
    fixes=(),
    force: bool = False,
    out: str | None = None,
    tune_steps: int = 20,
    threshold: float = interpret.R2_THRESHOLD,
) -> dict:
    for p in (model_path, data_path):
        if not Path(p).is_file():
            raise FileNotFoundError(f"file {p} does not exist")
    model = load_model(model_path)
    ds = _load_for_eval(data_path, label)
    if ds.n_features != model.spec.n_inputs:
        raise ContractError(f"model expects {model.spec.n_inputs} features, {data_path} has {ds.n_features}")
    out_dir = Path(out) if out else Path(model_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)

    scores = interpret.feature_scores(model, ds.X)
    interpret.write_attribution_csv(scores, ds.feature_names, out_dir / "attribution.csv")

    for edge, prim in fixes:
        interpret.fix_edge(model, edge, prim, ds.X)
    fits = interpret.auto_symbolic(model, ds.X, threshold=threshold)
    flagged = [f for f in fits if not f.applied]
    if flagged and force:
        for f in flagged:
            if f.primitive is not None:
                layer = model.layers[f.l]
                layer.set_symbolic(layer.edge_index(f.j, f.i), f.primitive, f.params)
    tc = TrainConfig(steps=tune_steps, loss_kind=ds.loss_kind) if tune_steps > 0 else None
    if tc is not None:
        train(model, ds.as_pair(), ds.as_pair(), tc)
    save_model(model, out_dir / "model_symbolic.json")

    result = {
        "attribution": dict(zip(ds.feature_names, (float(s) for s in scores))),
        "flagged_edges": [list(f.edge) for f in flagged],
        "edges": [
            {"edge": list(f.edge), "primitive": f.primitive, "r2": _json_num(float(f.r2)), "applied": f.applied}
            for f in fits
        ],
    }
    try:
        formulas = interpret.extract_formula(model, ds.feature_names)
    except interpret.SymbolicNotReadyError as exc:
        result["not_ready"] = [list(e) for e in exc.edges]
        (out_dir / "symbolic.json").write_text(json.dumps(result, indent=1) + "\n")
        raise
    interpret.write_formulas_txt(formulas, out_dir / "formulas.txt", ds.class_names or None)
    interpret.write_formulas_json(formulas, out_dir / "formulas.json", fits)
    result["formulas"] = [f.text for f in formulas]
    if ds.task == "regression":
        pred = formulas[0].evaluate(ds.X)
        result["formula_mse"] = float(np.mean((pred - ds.y) ** 2))
    else:
        Z = np.stack([f.evaluate(ds.X) for f in formulas], axis=1)
        result["formula_accuracy"] = float(np.mean(np.argmax(Z, axis=1) == ds.y))
    (out_dir / "symbolic.json").write_text(json.dumps(result, indent=1) + "\n")
    return result


def cmd_toy(formula: str, n: int, out: str, seed: int = 0) -> Path:
    if n < 1:
        raise ConfigError("--n must be >= 1")
    ds = toy_generate(formula, n, 1, seed=seed)[0]
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_csv(ds, path, None, "target")
    return path


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    ap = argparse.ArgumentParser(prog="kanevo", description="Evolve sparse KAN architectures.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", help="run the genetic architecture search", parents=[common])
    s.add_argument("--config", help="JSON config file")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    s.add_argument("--data", dest="csv", help="CSV dataset (overrides config)")
    s.add_argument("--label", help="label column name or index")
    s.add_argument("--toy", choices=["eq6a", "eq6b"])
    s.add_argument("--population", type=int)
    s.add_argument("--generations", type=int)
    s.add_argument("--steps", type=int, help="training steps per candidate")

    e = sub.add_parser("eval", help="evaluate a saved model on a CSV file", parents=[common])
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--label", default="-1")

    y = sub.add_parser("symbolic", help="fit symbolic edges and extract formulas", parents=[common])
    y.add_argument("--model", required=True)
    y.add_argument("--data", required=True)
    y.add_argument("--label", default="-1")
    y.add_argument("--fix", action="append", default=[], metavar="L,J,I=PRIMITIVE")
    y.add_argument("--force", action="store_true", help="convert low-r2 edges anyway")
    y.add_argument("--out")
    y.add_argument("--tune-steps", type=int, default=20)
    y.add_argument("--threshold", type=float, default=interpret.R2_THRESHOLD)

    t = sub.add_parser("toy", help="write a toy regression dataset", parents=[common])
    t.add_argument("--formula", required=True, choices=["eq6a", "eq6b"])
    t.add_argument("--n", type=int, default=1000)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out_dir = None
    try:
        if args.command == "search":
            cfg = load_config(args.config, vars(args))
            out_dir = Path(cfg.out)
            rep = cmd_search(cfg)
            summary = {k: rep.get(k) for k in ("best_fitness", "test", "param_count", "wall_clock")}
            print(json.dumps(summary))
        elif args.command == "eval":
            print(json.dumps(cmd_eval(args.model, args.data, args.label)))
        elif args.command == "symbolic":
            fixes = [parse_fix(f) for f in args.fix]
            res = cmd_symbolic(
                args.model, args.data, args.label, fixes, args.force, args.out, args.tune_steps, args.threshold
            )
            print("\n".join(res["formulas"]))
        else:
            print(cmd_toy(args.formula, args.n, args.out, args.seed))
    except interpret.SymbolicNotReadyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_READY
    except (ConfigError, ContractError, DataLoadError, ModelFormatError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - top-level failure boundary
        print(f"error: {exc}", file=sys.stderr)
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "FAILED").write_text(traceback.format_exc())
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
