"""CSV ingestion, deterministic stratified splits and the two toy regressions."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataLoadError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    class_names: list[str] = field(default_factory=list)
    task: str = "classification"
    indices: np.ndarray | None = None  # rows of the parent dataset, if this is a split

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_outputs(self) -> int:
        return self.n_classes if self.task == "classification" else 1

    @property
    def loss_kind(self) -> str:
        return "cross_entropy" if self.task == "classification" else "mse"

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], list(self.feature_names), list(self.class_names), self.task, idx)

    def as_pair(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X, self.y


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fr}")

    @classmethod
    def holdout(cls, test: float, val_of_train: float, stratified: bool = True, seed: int = 0) -> "SplitSpec":
        """Test share of the whole set, then a validation share carved out of the rest."""
        rest = 1.0 - test
        return cls(rest * (1.0 - val_of_train), rest * val_of_train, test, stratified, seed)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _looks_numeric(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(
    path, label_column=-1, header: bool | None = None, task: str = "classification", class_names=None
) -> Dataset:
    """Read a comma-separated file; features stay raw, labels become 0..C-1.

    ``label_column`` is a column name (needs a header) or an integer index.
    ``header=None`` sniffs: a first row containing any non-numeric feature cell
    is treated as a header.  Labels are numbered in order of first appearance
    unless ``class_names`` fixes the order (unlisted labels are an error).
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataLoadError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataLoadError(f"{path} is empty")
    ncol = len(rows[0])

    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is False:
            raise DataLoadError("a named label column requires a header row")
        header = True
        names = [c.strip() for c in rows[0]]
        if label_column not in names:
            raise DataLoadError(f"unknown label column {label_column!r}; header has {names}")
        label_idx = names.index(label_column)
    else:
        label_idx = int(label_column)
        if not -ncol <= label_idx < ncol:
            raise DataLoadError(f"label column {label_idx} out of range for {ncol} columns")
        label_idx %= ncol
        if header is None:
            header = any(not _looks_numeric(c) for k, c in enumerate(rows[0]) if k != label_idx)

    if header:
        names = [c.strip() for c in rows[0]]
        body = rows[1:]
        first_line = 2
    else:
        names = [f"x{k + 1}" for k in range(ncol)]
        body = rows
        first_line = 1
    feat_idx = [k for k in range(ncol) if k != label_idx]
    feature_names = [names[k] for k in feat_idx]

    X = np.empty((len(body), len(feat_idx)))
    raw_labels = []
    for r, row in enumerate(body):
        line = r + first_line
        if len(row) != ncol:
            raise DataLoadError(f"line {line}: expected {ncol} cells, found {len(row)}")
        for out_k, k in enumerate(feat_idx):
            cell = row[k].strip()
            if cell == "" or cell == "?":
                raise DataLoadError(f"line {line}, column {names[k]!r}: missing value")
            try:
                v = float(cell)
            except ValueError:
                raise DataLoadError(f"line {line}, column {names[k]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataLoadError(f"line {line}, column {names[k]!r}: non-finite value {cell!r}")
            X[r, out_k] = v
        lab = row[label_idx].strip()
        if lab == "":
            raise DataLoadError(f"line {line}, column {names[label_idx]!r}: missing label")
        raw_labels.append(lab)

    if task == "regression":
        try:
            y = np.array([float(v) for v in raw_labels])
        except ValueError as exc:
            raise DataLoadError(f"non-numeric regression target: {exc}") from None
        return Dataset(X, y, feature_names, [], "regression")

    mapping: dict[str, int] = {}
    if class_names is not None:
        mapping = {str(name): k for k, name in enumerate(class_names)}
        unknown = sorted(set(raw_labels) - set(mapping))
        if unknown:
            raise DataLoadError(f"labels {unknown} are not among the known classes {list(mapping)}")
    for lab in raw_labels:
        mapping.setdefault(lab, len(mapping))
    y = np.array([mapping[lab] for lab in raw_labels], dtype=np.int64)
    return Dataset(X, y, feature_names, list(mapping), "classification")


def read_sidecar(path) -> dict | None:
    """The ``.json`` sidecar written by :func:`save_csv`, if present."""
    side = Path(path).with_suffix(".json")
    if not side.is_file():
        return None
    try:
        return json.loads(side.read_text())
    except json.JSONDecodeError:
        return None


def save_csv(dataset: Dataset, path, split_indices: dict | None = None, label_name: str = "label") -> None:
    """Write the CSV plus a ``.json`` sidecar with names, class mapping and split indices."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(dataset.feature_names) + [label_name])
        for row, lab in zip(dataset.X, dataset.y):
            label = dataset.class_names[int(lab)] if dataset.task == "classification" else repr(float(lab))
            w.writerow([repr(float(v)) for v in row] + [label])
    sidecar = {
        "feature_names": list(dataset.feature_names),
        "class_mapping": {name: k for k, name in enumerate(dataset.class_names)},
        "task": dataset.task,
        "split_indices": {k: [int(i) for i in v] for k, v in (split_indices or {}).items()},
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1) + "\n")


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def _apportion(target: int, sizes: np.ndarray, frac: float, cap: np.ndarray) -> np.ndarray:
    # largest-remainder allocation of `target` rows across classes
    quota = frac * sizes
    alloc = np.minimum(np.floor(quota).astype(np.int64), cap)
    rem = quota - np.floor(quota)
    order = sorted(range(len(sizes)), key=lambda c: (-rem[c], c))
    k = 0
    while alloc.sum() < target and k < 4 * len(sizes) + target:
        c = order[k % len(order)]
        if alloc[c] < cap[c]:
            alloc[c] += 1
        k += 1
    return alloc


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffled (by default stratified) train/val/test partition.

    Part sizes are ``round(fraction * n)`` for val and test; train takes the
    remainder.  Falls back to an unstratified split (with a warning) when some
    class has fewer rows than there are non-empty parts.
    """
    n = len(dataset)
    rng = np.random.default_rng(spec.seed)
    n_val = int(round(spec.val * n))
    n_test = int(round(spec.test * n))
    if n_val + n_test > n:
        n_test = n - n_val

    stratified = spec.stratified and dataset.task == "classification"
    if stratified:
        parts = sum(1 for f in (spec.train, spec.val, spec.test) if f > 0)
        counts = np.bincount(dataset.y, minlength=max(dataset.n_classes, 1))
        if np.any(counts[counts > 0] < parts):
            warnings.warn("a class has fewer samples than split parts; using an unstratified split")
            stratified = False

    if not stratified:
        perm = rng.permutation(n)
        val_idx = perm[:n_val]
        test_idx = perm[n_val : n_val + n_test]
        train_idx = perm[n_val + n_test :]
    else:
        classes = np.unique(dataset.y)
        members = [rng.permutation(np.nonzero(dataset.y == c)[0]) for c in classes]
        sizes = np.array([m.size for m in members])
        val_alloc = _apportion(n_val, sizes, spec.val, sizes)
        test_alloc = _apportion(n_test, sizes, spec.test, sizes - val_alloc)
        val_idx, test_idx, train_idx = [], [], []
        for m, nv, nt in zip(members, val_alloc, test_alloc):
            val_idx.append(m[:nv])
            test_idx.append(m[nv : nv + nt])
            train_idx.append(m[nv + nt :])
        val_idx, test_idx, train_idx = (np.concatenate(p) for p in (val_idx, test_idx, train_idx))

    return tuple(dataset.subset(np.sort(idx)) for idx in (train_idx, val_idx, test_idx))


# ---------------------------------------------------------------------------
# toy regressions
# ---------------------------------------------------------------------------


def eq6a(x, y):
    return np.exp(np.sin(np.pi * x) + y * y)


def eq6b(x, y):
    return x * y


TOY_FORMULAS = {"eq6a": eq6a, "eq6b": eq6b}


def toy_sample(formula: str, n: int, rng: np.random.Generator) -> Dataset:
    fn = TOY_FORMULAS[formula]
    X = rng.uniform(-1.0, 1.0, size=(n, 2))
    return Dataset(X, fn(X[:, 0], X[:, 1]), ["x", "y"], [], "regression")


def toy_generate(formula: str, n_train: int = 1000, n_val: int = 1000, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Uniform samples on [-1, 1]^2 with exact targets for ``eq6a`` / ``eq6b``."""
    if formula not in TOY_FORMULAS:
        raise ValueError(f"unknown toy formula {formula!r}; expected one of {sorted(TOY_FORMULAS)}")
    if n_train < 1 or n_val < 1:
        raise ValueError("sample counts must be >= 1")
    rng = np.random.default_rng(seed)
    return toy_sample(formula, n_train, rng), toy_sample(formula, n_val, rng)
