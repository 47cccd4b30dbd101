"""Round optima, dynamic and static regret, and the drift measure C_R.

Regret is evaluated on the released global models ``x^0 .. x^(R-1)``: round
``r`` charges ``tau * (f^r(x^r) - min f^r)`` where ``f^r`` is the average
loss over the ``n * tau`` samples of that round.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

from .streams import LOGISTIC, QUADRATIC, DataStream, batch_losses


@dataclasses.dataclass(frozen=True)
class RoundOptimum:
    value: float
    minimizer: Optional[np.ndarray]
    converged: bool
    iterations: int = 0
    separable: bool = False


def _flatten(stream: DataStream, r: Optional[int] = None):
    pts = stream.points if r is None else stream.points[r]
    lab = stream.labels if r is None else stream.labels[r]
    d = stream.dim
    return pts.reshape(-1, d), lab.reshape(-1)


def quadratic_optimum(points: np.ndarray) -> RoundOptimum:
    center = points.mean(axis=0)
    value = float(np.mean(0.5 * np.sum((points - center) ** 2, axis=1)))
    return RoundOptimum(value, center, True)


def _logistic_objective(x, A, y):
    m = y * (A @ x)
    val = float(np.mean(np.logaddexp(0.0, -m)))
    s = expit(-m)
    grad = -(A.T @ (y * s)) / len(y)
    return val, grad, s


def is_separable(A: np.ndarray, y: np.ndarray) -> bool:
    """True when some ``x`` has ``y_j a_j . x >= 1`` for every sample."""
    res = linprog(np.zeros(A.shape[1]), A_ub=-(y[:, None] * A), b_ub=-np.ones(len(y)),
                  bounds=[(None, None)] * A.shape[1], method="highs")
    return res.status == 0


def logistic_optimum(A: np.ndarray, y: np.ndarray, x_init: Optional[np.ndarray] = None,
                     gtol: float = 1e-8, max_iter: int = 100_000,
                     method: str = "newton", check_separable: bool = True) -> RoundOptimum:
    """Minimize the mean logistic loss over one batch.

    Linearly separable batches have infimum 0, which no finite model attains;
    they return ``value=0`` with ``minimizer=None`` and ``separable=True``.
    Otherwise the loss is minimized by backtracking line search along the
    Newton direction (``method="newton"``) or the negative gradient
    (``method="gd"``) until the gradient norm drops to ``gtol``.
    """
    if check_separable and is_separable(A, y):
        return RoundOptimum(0.0, None, True, 0, separable=True)
    x = np.zeros(A.shape[1]) if x_init is None else np.array(x_init, dtype=float)
    val, grad, s = _logistic_objective(x, A, y)
    step = 1.0
    for it in range(max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= gtol:
            return RoundOptimum(val, x, True, it)
        if method == "newton":
            w = s * (1.0 - s)
            H = (A.T * w) @ A / len(y) + 1e-12 * np.eye(A.shape[1])
            try:
                direction = -np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                direction = -grad
            if direction @ grad >= 0:
                direction = -grad
            step = 1.0
        else:
            direction = -grad
            step = min(step * 2.0, 1e6)
        slope = float(direction @ grad)
        while True:
            x_new = x + step * direction
            val_new, grad_new, s_new = _logistic_objective(x_new, A, y)
            if val_new <= val + 1e-4 * step * slope or step < 1e-16:
                break
            step *= 0.5
        if val_new > val:
            return RoundOptimum(val, x, False, it)
        x, val, grad, s = x_new, val_new, grad_new, s_new
    return RoundOptimum(val, x, float(np.linalg.norm(grad)) <= gtol, max_iter)


def round_optimum(stream: DataStream, r: int, **kwargs) -> RoundOptimum:
    """Optimum of the average loss over the ``n * tau`` samples of round ``r``."""
    pts, lab = _flatten(stream, r)
    if pts.shape[0] == 0:
        raise ValueError("round has no samples")
    if stream.kind == QUADRATIC:
        return quadratic_optimum(pts)
    return logistic_optimum(pts, lab, **kwargs)


def global_optimum(stream: DataStream, **kwargs) -> RoundOptimum:
    """Minimizer of the loss averaged over every retained sample."""
    pts, lab = _flatten(stream)
    if stream.kind == QUADRATIC:
        return quadratic_optimum(pts)
    return logistic_optimum(pts, lab, **kwargs)


def round_optima(stream: DataStream, **kwargs) -> list[RoundOptimum]:
    return [round_optimum(stream, r, **kwargs) for r in range(stream.R)]


def round_losses(models: np.ndarray, stream: DataStream) -> np.ndarray:
    """``f^r(x^r)`` for every round with a model."""
    R = min(len(models), stream.R)
    out = np.empty(R)
    for r in range(R):
        out[r] = float(np.mean(batch_losses(stream.kind, models[r], stream.points[r],
                                            stream.labels[r])))
    return out


@dataclasses.dataclass
class RegretTrace:
    tau: int
    avg_round_loss: np.ndarray
    round_opt: np.ndarray
    cum_dyn_regret: np.ndarray
    cum_static_regret: Optional[np.ndarray] = None
    cr_analog: Optional[np.ndarray] = None
    models: Optional[np.ndarray] = None

    @property
    def rounds(self) -> int:
        return len(self.avg_round_loss)

    @property
    def final_dynamic(self) -> float:
        return float(self.cum_dyn_regret[-1]) if self.rounds else 0.0

    @property
    def final_normalized(self) -> float:
        return self.final_dynamic / (self.rounds * self.tau) if self.rounds else 0.0

    def normalized(self) -> np.ndarray:
        return self.cum_dyn_regret / (self.tau * np.arange(1, self.rounds + 1))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "avg_round_loss", "round_opt", "cum_dyn_regret",
                    "cum_static_regret", "cr_analog"])
        for r in range(self.rounds):
            w.writerow([
                r,
                repr(float(self.avg_round_loss[r])),
                repr(float(self.round_opt[r])),
                repr(float(self.cum_dyn_regret[r])),
                "" if self.cum_static_regret is None else repr(float(self.cum_static_regret[r])),
                "" if self.cr_analog is None else repr(float(self.cr_analog[r])),
            ])
        return buf.getvalue()


def dynamic_regret(models: np.ndarray, stream: DataStream,
                   optima: Optional[Sequence[RoundOptimum]] = None) -> RegretTrace:
    """Cumulative dynamic regret of ``models[r]`` against each round's optimum.

    ``models`` must hold at least one model per round of ``stream``; extra
    trailing models (the final ``x^R``) are ignored.
    """
    if len(models) < stream.R:
        raise ValueError(f"missing models: got {len(models)} for {stream.R} rounds")
    if optima is None:
        optima = round_optima(stream)
    if len(optima) != stream.R:
        raise ValueError(f"missing round data: {len(optima)} optima for {stream.R} rounds")
    losses = round_losses(models, stream)
    opt = np.array([o.value for o in optima])
    cum = np.cumsum(stream.tau * (losses - opt))
    return RegretTrace(stream.tau, losses, opt, cum, models=np.asarray(models[: stream.R]))


def static_regret_trace(models: np.ndarray, stream: DataStream,
                        x_star: Optional[np.ndarray] = None) -> np.ndarray:
    """Cumulative static regret against one comparator ``x_star``."""
    if stream.R == 0:
        return np.zeros(0)
    if x_star is None:
        opt = global_optimum(stream)
        if opt.minimizer is None:
            raise ValueError("global optimum is not attained (separable data)")
        x_star = opt.minimizer
    losses = round_losses(models, stream)
    ref = np.array([np.mean(batch_losses(stream.kind, x_star, stream.points[r], stream.labels[r]))
                    for r in range(stream.R)])
    return np.cumsum(stream.tau * (losses - ref))


def static_regret(models: np.ndarray, stream: DataStream,
                  x_star: Optional[np.ndarray] = None) -> float:
    trace = static_regret_trace(models, stream, x_star)
    return float(trace[-1]) if len(trace) else 0.0


def cr_analog(round_minimizers: Sequence[np.ndarray], global_minimizer: np.ndarray) -> float:
    """``sum_r ||x_r* - x*||^2`` for singleton solution sets."""
    if any(m is None for m in round_minimizers) or global_minimizer is None:
        raise ValueError("C_R needs attained round and global minimizers (quadratic streams)")
    if len(round_minimizers) == 0:
        return 0.0
    diffs = np.asarray(round_minimizers) - np.asarray(global_minimizer)
    return float(np.sum(diffs**2))


def full_trace(models: np.ndarray, stream: DataStream,
               optima: Optional[Sequence[RoundOptimum]] = None,
               with_static: bool = False) -> RegretTrace:
    """Dynamic regret plus, where defined, static regret and running C_R."""
    trace = dynamic_regret(models, stream, optima)
    if stream.kind == QUADRATIC:
        g = global_optimum(stream)
        mins = np.array([o.minimizer for o in (optima or round_optima(stream))])
        trace.cr_analog = np.cumsum(np.sum((mins - g.minimizer) ** 2, axis=1))
        trace.cum_static_regret = static_regret_trace(models, stream, g.minimizer)
    elif with_static:
        trace.cum_static_regret = static_regret_trace(models, stream)
    return trace


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std
