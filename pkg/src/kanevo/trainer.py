"""Full-batch training with L-BFGS and validation-loss tracking."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .losses import loss, metrics  # noqa: F401  (re-exported)
from .network import KanModel, TrainingError, forward, gradients

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 20
    optimizer: str = "lbfgs"
    history_size: int = 10
    # L-BFGS iterations inside one step; a "step" follows the torch/pykan
    # convention of one optimizer.step() call with max_iter inner iterations
    max_iter: int = 20
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 20
    fallback_lr: float = 1e-2
    tolerance_grad: float = 1e-32
    tolerance_change: float = 1e-32
    loss_kind: str = "cross_entropy"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.optimizer.lower() not in ("lbfgs", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.max_iter < 1 or self.history_size < 1 or self.max_ls < 1:
            raise ValueError("max_iter, history_size and max_ls must be >= 1")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    min_val_loss: float = math.inf
    best_step: int = -1
    best_parameters: np.ndarray | None = None
    evaluations: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("best_parameters")
        d["train_loss"] = [_json_float(v) for v in self.train_loss]
        d["val_loss"] = [_json_float(v) for v in self.val_loss]
        d["min_val_loss"] = _json_float(self.min_val_loss)
        return d

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "train_loss", "val_loss"])
            for k, (a, b) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                w.writerow([k, repr(a), repr(b)])


def _json_float(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))


class _Objective:
    def __init__(self, model: KanModel, X, y, loss_kind: str):
        self.model = model
        self.X = X
        self.y = y
        self.loss_kind = loss_kind
        self.calls = 0

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        self.calls += 1
        self.model.set_flat(theta)
        try:
            with np.errstate(all="ignore"):
                g = gradients(self.model, self.X, self.y, self.loss_kind)
        except TrainingError:
            return math.inf, np.full(theta.shape, np.nan)
        flat = g.flat(self.model)
        if not np.all(np.isfinite(flat)):
            return math.inf, flat
        return g.loss, flat


def _cubic_interpolate(x1, f1, g1, x2, f2, g2, lo, hi):
    # minimiser of the cubic through (x1, f1, g1), (x2, f2, g2), clipped to [lo, hi]
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    d2_sq = d1 * d1 - g1 * g2
    if d2_sq >= 0 and math.isfinite(d2_sq):
        d2 = math.sqrt(d2_sq)
        if x1 <= x2:
            pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        else:
            pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        if math.isfinite(pos):
            return min(max(pos, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe(obj, x, t, d, f, g, gtd, c1=1e-4, c2=0.9, max_ls=20, tolerance_change=1e-9):
    """Line search along ``d`` satisfying the strong Wolfe conditions.

    Returns ``(f_new, g_new, t, n_evals, ok)``; ``ok`` is False when no point
    with sufficient decrease was found within ``max_ls`` evaluations.
    """
    d_norm = float(np.max(np.abs(d)))
    f_new, g_new = obj(x + t * d)
    ls_iter = 1
    gtd_new = float(g_new @ d) if math.isfinite(f_new) else math.nan
    t_prev, f_prev, g_prev, gtd_prev = 0.0, f, g, gtd
    done = False
    bracket = bracket_f = bracket_g = bracket_gtd = None

    while ls_iter < max_ls:
        if not math.isfinite(f_new) or f_new > f + c1 * t * gtd or (ls_iter > 1 and f_new >= f_prev):
            bracket, bracket_f = [t_prev, t], [f_prev, f_new]
            bracket_g, bracket_gtd = [g_prev, g_new], [gtd_prev, gtd_new]
            break
        if abs(gtd_new) <= -c2 * gtd:
            bracket, bracket_f, bracket_g = [t], [f_new], [g_new]
            done = True
            break
        if gtd_new >= 0:
            bracket, bracket_f = [t_prev, t], [f_prev, f_new]
            bracket_g, bracket_gtd = [g_prev, g_new], [gtd_prev, gtd_new]
            break
        min_step = t + 0.01 * (t - t_prev)
        max_step = t * 10.0
        tmp = t
        t = _cubic_interpolate(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, min_step, max_step)
        t_prev, f_prev, g_prev, gtd_prev = tmp, f_new, g_new, gtd_new
        f_new, g_new = obj(x + t * d)
        ls_iter += 1
        gtd_new = float(g_new @ d) if math.isfinite(f_new) else math.nan

    if bracket is None:
        bracket, bracket_f, bracket_g = [0.0, t], [f, f_new], [g, g_new]
        bracket_gtd = [gtd, gtd_new]

    insuf_progress = False
    lo_pos, hi_pos = (0, 1) if len(bracket) == 2 and bracket_f[0] <= bracket_f[-1] else (1, 0)
    while not done and ls_iter < max_ls and len(bracket) == 2:
        if abs(bracket[1] - bracket[0]) * d_norm < tolerance_change:
            break
        a, b = bracket
        if all(math.isfinite(v) for v in (bracket_f[0], bracket_f[1], bracket_gtd[0], bracket_gtd[1])):
            t = _cubic_interpolate(a, bracket_f[0], bracket_gtd[0], b, bracket_f[1], bracket_gtd[1], min(a, b), max(a, b))
        else:
            t = 0.5 * (a + b)
        # keep away from the bracket ends
        eps = 0.1 * (max(bracket) - min(bracket))
        if min(max(bracket) - t, t - min(bracket)) < eps:
            if insuf_progress or t >= max(bracket) or t <= min(bracket):
                t = max(bracket) - eps if abs(t - max(bracket)) < abs(t - min(bracket)) else min(bracket) + eps
                insuf_progress = False
            else:
                insuf_progress = True
        else:
            insuf_progress = False

        f_new, g_new = obj(x + t * d)
        ls_iter += 1
        gtd_new = float(g_new @ d) if math.isfinite(f_new) else math.nan

        if not math.isfinite(f_new) or f_new > f + c1 * t * gtd or f_new >= bracket_f[lo_pos]:
            bracket[hi_pos], bracket_f[hi_pos], bracket_g[hi_pos], bracket_gtd[hi_pos] = t, f_new, g_new, gtd_new
            lo_pos, hi_pos = (0, 1) if bracket_f[0] <= bracket_f[1] else (1, 0)
        else:
            if abs(gtd_new) <= -c2 * gtd:
                done = True
            elif gtd_new * (bracket[hi_pos] - bracket[lo_pos]) >= 0:
                bracket[hi_pos], bracket_f[hi_pos] = bracket[lo_pos], bracket_f[lo_pos]
                bracket_g[hi_pos], bracket_gtd[hi_pos] = bracket_g[lo_pos], bracket_gtd[lo_pos]
            bracket[lo_pos], bracket_f[lo_pos], bracket_g[lo_pos], bracket_gtd[lo_pos] = t, f_new, g_new, gtd_new

    if len(bracket) == 1:
        lo_pos = 0
    t = bracket[lo_pos]
    f_new, g_new = bracket_f[lo_pos], bracket_g[lo_pos]
    ok = math.isfinite(f_new) and t > 0 and f_new < f
    return f_new, g_new, t, ls_iter, ok


class LBFGS:
    """L-BFGS with strong-Wolfe line search; state persists across steps."""

    def __init__(self, config: TrainConfig):
        self.cfg = config
        self.reset()

    def reset(self):
        self.old_dirs: list[np.ndarray] = []
        self.old_stps: list[np.ndarray] = []
        self.ro: list[float] = []
        self.H_diag = 1.0
        self.d = None
        self.t = None
        self.prev_g = None
        self.n_iter = 0

    def _direction(self, g: np.ndarray) -> np.ndarray:
        if self.n_iter == 1 or self.d is None:
            self.H_diag = 1.0
            return -g
        y = g - self.prev_g
        s = self.d * self.t
        ys = float(y @ s)
        if ys > 1e-10:
            if len(self.old_dirs) == self.cfg.history_size:
                self.old_dirs.pop(0)
                self.old_stps.pop(0)
                self.ro.pop(0)
            self.old_dirs.append(y)
            self.old_stps.append(s)
            self.ro.append(1.0 / ys)
            self.H_diag = ys / float(y @ y)
        q = -g
        al = [0.0] * len(self.old_dirs)
        for k in range(len(self.old_dirs) - 1, -1, -1):
            al[k] = float(self.old_stps[k] @ q) * self.ro[k]
            q = q - al[k] * self.old_dirs[k]
        r = q * self.H_diag
        for k in range(len(self.old_dirs)):
            be = float(self.old_dirs[k] @ r) * self.ro[k]
            r = r + self.old_stps[k] * (al[k] - be)
        return r

    def step(self, obj, x: np.ndarray) -> tuple[np.ndarray, float]:
        """Up to ``max_iter`` iterations from ``x``; returns new point and its loss."""
        cfg = self.cfg
        f, g = obj(x)
        if not math.isfinite(f):
            return x, f
        if float(np.max(np.abs(g), initial=0.0)) <= cfg.tolerance_grad:
            return x, f
        for _ in range(cfg.max_iter):
            self.n_iter += 1
            d = self._direction(g)
            self.prev_g = g.copy()
            prev_f = f
            if self.n_iter == 1:
                t = min(1.0, 1.0 / max(float(np.abs(g).sum()), 1e-300))
            else:
                t = 1.0
            gtd = float(g @ d)
            if gtd > -cfg.tolerance_change:
                break
            f_new, g_new, t, _, ok = strong_wolfe(obj, x, t, d, f, g, gtd, cfg.c1, cfg.c2, cfg.max_ls)
            if not ok:
                # plain gradient step, history discarded
                x = x - cfg.fallback_lr * g
                f, g = obj(x)
                self.reset()
                if not math.isfinite(f):
                    return x, f
                continue
            self.d, self.t = d, t
            x = x + t * d
            f, g = f_new, g_new
            if float(np.max(np.abs(g))) <= cfg.tolerance_grad:
                break
            if float(np.max(np.abs(d * t))) <= cfg.tolerance_change:
                break
            if abs(f - prev_f) < cfg.tolerance_change:
                break
        return x, f


def _gd_step(obj, x, cfg: TrainConfig):
    f, g = obj(x)
    if not math.isfinite(f):
        return x, f
    for _ in range(cfg.max_iter):
        x = x - cfg.fallback_lr * g
        f, g = obj(x)
        if not math.isfinite(f):
            break
    return x, f


def train(model: KanModel, train_set, val_set, config: TrainConfig | None = None) -> TrainReport:
    """Run ``config.steps`` optimizer steps on the full training batch.

    Validation loss is measured after every step; the parameters with the
    lowest validation loss are restored into ``model`` before returning.
    """
    cfg = config or TrainConfig()
    Xtr, ytr = train_set
    Xva, yva = val_set
    Xtr = np.ascontiguousarray(Xtr, dtype=float)
    Xva = np.ascontiguousarray(Xva, dtype=float)
    if len(Xtr) == 0 or len(Xva) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if Xtr.shape[1] != Xva.shape[1]:
        raise ValueError("training and validation sets have different column counts")

    obj = _Objective(model, Xtr, ytr, cfg.loss_kind)
    opt = LBFGS(cfg) if cfg.optimizer.lower() == "lbfgs" else None
    report = TrainReport()
    theta = model.get_flat()
    last_finite = theta.copy()

    for step in range(1, cfg.steps + 1):
        if opt is not None:
            theta, f = opt.step(obj, theta)
        else:
            theta, f = _gd_step(obj, theta, cfg)
        val = math.inf
        if math.isfinite(f) and np.all(np.isfinite(theta)):
            model.set_flat(theta)
            with np.errstate(all="ignore"):
                val = loss(forward(model, Xva), yva, cfg.loss_kind)
        if not math.isfinite(val):
            f = math.inf
            val = math.inf
            theta = last_finite.copy()
            model.set_flat(theta)
            if opt is not None:
                opt.reset()
        else:
            last_finite = theta.copy()
        report.train_loss.append(float(f))
        report.val_loss.append(float(val))
        if val < report.min_val_loss:
            report.min_val_loss = float(val)
            report.best_step = step
            report.best_parameters = theta.copy()

    report.evaluations = obj.calls
    if report.best_parameters is not None:
        model.set_flat(report.best_parameters)
    else:
        model.set_flat(last_finite)
    return report
