"""Online federated learning with correlated local DP noise.

Each round every learner starts from the global model, takes ``tau`` noisy
local gradient steps on newly arriving samples, and reports the average
noisy gradient ``g_hat = (x - z) / (eta tau)``.  The server moves the global
model by ``eta_tilde = eta * eta_g * tau`` times the learners' mean report.

Two equivalent local-update paths are implemented:

* ``"increment"``: add ``(b^k - b^(k-1)) xi_i`` to the clipped gradient.
* ``"prefix"``: release the noisy prefix sum ``S^k`` and step along
  ``S^k - S^(k-1)``.

Both draw from the same channel, so their trajectories agree up to
floating-point rounding.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import mf_mechanism as mfm
from .noise import NoiseChannel, open_channel
from .privacy import PrivacyBudget, calibrate
from .streams import DataStream, StreamSample, clip_gradient, loss_grad, make_stream

NOISELESS = "noiseless"
UPDATE_PATHS = ("increment", "prefix")


class NumericalError(RuntimeError):
    pass


class DiagnosticsError(RuntimeError):
    def __init__(self, message: str, round_index: int, residual: float):
        super().__init__(message)
        self.round_index = round_index
        self.residual = residual


@dataclasses.dataclass
class SimConfig:
    n: int
    R: int
    tau: int
    dim: int
    eta: float
    eta_g: float = 1.0
    clip_bound: float = 1.0
    mechanism: str = "toeplitz"
    budget: Optional[dict] = None
    master_seed: int = 0
    data_spec: dict = dataclasses.field(
        default_factory=lambda: {"kind": "logistic", "alpha": 0.1, "beta": 0.1, "seed": 0}
    )
    diagnostics: dict = dataclasses.field(
        default_factory=lambda: {"virtual_iterate": False, "dual_form_check": False}
    )
    x0: Optional[list] = None
    update_path: str = "increment"
    parallel: bool = False

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("invalid SimConfig: " + "; ".join(errors))

    @property
    def eta_tilde(self) -> float:
        return self.eta * self.eta_g * self.tau

    @property
    def steps(self) -> int:
        return self.R * self.tau

    def validate(self) -> list[str]:
        errors = []
        for name in ("n", "R", "tau", "dim"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                errors.append(f"{name}: must be a positive integer, got {v!r}")
        for name in ("eta", "eta_g", "clip_bound"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                errors.append(f"{name}: must be a positive number, got {v!r}")
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            errors.append(f"master_seed: must be a nonnegative integer, got {self.master_seed!r}")
        if self.update_path not in UPDATE_PATHS:
            errors.append(f"update_path: must be one of {UPDATE_PATHS}, got {self.update_path!r}")
        if self.budget is not None:
            if not isinstance(self.budget, dict):
                errors.append("budget: must be an object with epsilon/delta or std")
            elif "std" in self.budget:
                std = self.budget["std"]
                if not isinstance(std, (int, float)) or std < 0:
                    errors.append(f"budget.std: must be a nonnegative number, got {std!r}")
            elif not {"epsilon", "delta"} <= set(self.budget):
                errors.append("budget: needs both epsilon and delta, or std")
            else:
                eps, delta = self.budget["epsilon"], self.budget["delta"]
                if not isinstance(eps, (int, float)) or not eps > 0:
                    errors.append(f"budget.epsilon: must be positive, got {eps!r}")
                if not isinstance(delta, (int, float)) or not 0 < delta <= 1:
                    errors.append(f"budget.delta: must lie in (0, 1], got {delta!r}")
        elif self.mechanism != NOISELESS:
            errors.append("budget: required unless mechanism is 'noiseless'")
        if not isinstance(self.mechanism, str):
            errors.append("mechanism: must be a kind name or a file path")
        if not isinstance(self.data_spec, dict) or "kind" not in self.data_spec:
            errors.append("data_spec: must be an object with a 'kind' key")
        if self.x0 is not None and (not isinstance(self.x0, list) or len(self.x0) != self.dim):
            errors.append(f"x0: must be a list of {self.dim} numbers")
        unknown = set(self.diagnostics) - {"virtual_iterate", "dual_form_check"}
        if unknown:
            errors.append(f"diagnostics: unknown flags {sorted(unknown)}")
        return errors

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - fields)
        missing = sorted(
            f.name for f in dataclasses.fields(cls)
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
            and f.name not in data
        )
        errors = [f"{k}: unknown field" for k in unknown] + [f"{k}: missing" for k in missing]
        if errors:
            raise ValueError("invalid SimConfig: " + "; ".join(errors))
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def resolve_factorization(cfg: SimConfig) -> mfm.Factorization:
    if cfg.mechanism == NOISELESS:
        return mfm.build_identity(cfg.steps)
    try:
        kind = mfm.Kind.parse(cfg.mechanism)
    except ValueError:
        if not Path(cfg.mechanism).exists():
            raise
        f = mfm.load_factorization(cfg.mechanism)
        if f.steps != cfg.steps:
            raise ValueError(
                f"mechanism file has steps={f.steps}, config needs R*tau={cfg.steps}"
            )
        return f
    return mfm.build(kind, cfg.steps)


def resolve_noise(cfg: SimConfig, f: mfm.Factorization) -> tuple[float, Optional[PrivacyBudget]]:
    """Per-coordinate noise std; an explicit ``budget.std`` beats calibration."""
    if cfg.mechanism == NOISELESS:
        return 0.0, None
    if "std" in cfg.budget:
        return float(cfg.budget["std"]), None
    pb = calibrate(cfg.budget["epsilon"], cfg.budget["delta"], cfg.clip_bound, f)
    return pb.noise_std, pb


@dataclasses.dataclass
class LearnerState:
    learner_id: int
    z: np.ndarray
    channel: NoiseChannel
    round_start: np.ndarray
    grad_prefix: np.ndarray
    last_release: np.ndarray
    round_grad_sum: np.ndarray


@dataclasses.dataclass
class GlobalState:
    x: np.ndarray
    round: int = 0
    virtual_x: Optional[np.ndarray] = None


def new_learner(learner_id: int, x: np.ndarray, channel: NoiseChannel) -> LearnerState:
    d = len(x)
    return LearnerState(learner_id, x.copy(), channel, x.copy(), np.zeros(d), np.zeros(d),
                        np.zeros(d))


def local_step(ls: LearnerState, sample: StreamSample, eta: float, clip_bound: float,
               update_path: str = "increment",
               loss_fn: Callable = loss_grad) -> LearnerState:
    """One local update ``z <- z - eta * noisy_gradient``, in place."""
    _, g = loss_fn(ls.z, sample)
    if not np.all(np.isfinite(g)):
        raise NumericalError(
            f"non-finite gradient for learner {ls.learner_id} at round {sample.round}, "
            f"step {sample.step}"
        )
    g = clip_gradient(g, clip_bound)
    ls.grad_prefix = ls.grad_prefix + g
    ls.round_grad_sum = ls.round_grad_sum + g
    if update_path == "prefix":
        release = ls.channel.noisy_prefix(ls.grad_prefix)
        noisy = release - ls.last_release
        ls.last_release = release
        ls.channel.next_increment()
    else:
        noisy = g + ls.channel.next_increment()
    ls.z = ls.z - eta * noisy
    return ls


def pairwise_sum(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise summation in the given order."""
    if len(vectors) == 1:
        return np.array(vectors[0], dtype=float)
    mid = len(vectors) // 2
    return pairwise_sum(vectors[:mid]) + pairwise_sum(vectors[mid:])


def _run_learner(ls: LearnerState, x: np.ndarray, samples: Sequence[StreamSample],
                 cfg: SimConfig) -> np.ndarray:
    ls.z = x.copy()
    ls.round_start = x.copy()
    ls.round_grad_sum = np.zeros_like(x)
    for s in samples:
        local_step(ls, s, cfg.eta, cfg.clip_bound, cfg.update_path)
    return (x - ls.z) / (cfg.eta * cfg.tau)


def run_round(gs: GlobalState, learners: list[LearnerState],
              round_data: Sequence[Sequence[StreamSample]], cfg: SimConfig,
              pool: Optional[ThreadPoolExecutor] = None) -> GlobalState:
    if len(round_data) != len(learners):
        raise ValueError(f"got data for {len(round_data)} learners, expected {len(learners)}")
    for i, samples in enumerate(round_data):
        if len(samples) != cfg.tau:
            raise ValueError(
                f"learner {i} received {len(samples)} samples in round {gs.round}, expected {cfg.tau}"
            )
    if pool is None:
        reports = [_run_learner(ls, gs.x, d, cfg) for ls, d in zip(learners, round_data)]
    else:
        futures = [pool.submit(_run_learner, ls, gs.x, d, cfg) for ls, d in zip(learners, round_data)]
        reports = [f.result() for f in futures]
    mean_report = pairwise_sum(reports) / len(learners)
    x_next = gs.x - cfg.eta_tilde * mean_report
    virtual = None
    if gs.virtual_x is not None:
        virtual = x_next + (cfg.eta_tilde / cfg.tau) * _mean_noise(learners)
    return GlobalState(x_next, gs.round + 1, virtual)


def _mean_noise(learners: Sequence[LearnerState]) -> np.ndarray:
    return pairwise_sum([ls.channel.prev_row_product for ls in learners]) / len(learners)


@dataclasses.dataclass
class SimResult:
    models: np.ndarray  # x^0 .. x^R, shape (R + 1, d)
    noise_std: float
    budget: Optional[PrivacyBudget]
    factorization: mfm.Factorization
    diagnostics: dict

    @property
    def final_model(self) -> np.ndarray:
        return self.models[-1]


def _round_samples(stream: DataStream, r: int) -> list[list[StreamSample]]:
    return [[stream.sample(r, i, t) for t in range(stream.tau)] for i in range(stream.n)]


def check_stream(cfg: SimConfig, stream: DataStream) -> None:
    shape = (stream.R, stream.n, stream.tau, stream.dim)
    if shape != (cfg.R, cfg.n, cfg.tau, cfg.dim):
        raise ValueError(f"stream shape (R, n, tau, d) = {shape} does not match config "
                         f"{(cfg.R, cfg.n, cfg.tau, cfg.dim)}")


def run_simulation(cfg: SimConfig, stream: Optional[DataStream] = None,
                   factorization: Optional[mfm.Factorization] = None,
                   virtual_tol: float = 1e-8, dual_tol: float = 1e-6) -> SimResult:
    """Run ``R`` rounds and return every global model ``x^0 .. x^R``.

    With ``diagnostics.virtual_iterate`` the noise-free shadow sequence
    ``x^r + (eta_tilde / tau) mean_i(b^(r tau - 1) xi_i)`` is tracked and its
    recursion checked each round.  With ``diagnostics.dual_form_check`` (and
    ``x0 = 0``) each global model is checked against the closed form as a
    function of the learners' noisy prefix sums.  A violation raises
    :class:`DiagnosticsError` naming the round.
    """
    if stream is None:
        stream = make_stream(cfg.data_spec, cfg.n, cfg.R, cfg.tau, cfg.dim)
    check_stream(cfg, stream)
    f = factorization if factorization is not None else resolve_factorization(cfg)
    if f.steps != cfg.steps:
        raise ValueError(f"factorization has {f.steps} steps, config needs {cfg.steps}")
    std, budget = resolve_noise(cfg, f)

    x0 = np.zeros(cfg.dim) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
    learners = [new_learner(i, x0, open_channel(f, cfg.dim, std, cfg.master_seed, i))
                for i in range(cfg.n)]
    check_virtual = bool(cfg.diagnostics.get("virtual_iterate"))
    check_dual = bool(cfg.diagnostics.get("dual_form_check")) and not np.any(x0)
    gs = GlobalState(x0.copy(), 0, x0.copy() if check_virtual else None)

    models = np.empty((cfg.R + 1, cfg.dim))
    models[0] = gs.x
    report = {"virtual_iterate": None, "dual_form_check": None}
    worst_virtual = 0.0
    worst_dual = 0.0
    pool = ThreadPoolExecutor(max_workers=min(cfg.n, 8)) if cfg.parallel else None
    try:
        for r in range(cfg.R):
            prev = gs
            gs = run_round(gs, learners, _round_samples(stream, r), cfg, pool)
            if not np.all(np.isfinite(gs.x)):
                raise NumericalError(f"global model became non-finite in round {r}")
            models[r + 1] = gs.x
            if check_virtual:
                g = pairwise_sum([ls.round_grad_sum for ls in learners]) / (cfg.n * cfg.tau)
                res = float(np.max(np.abs(gs.virtual_x - prev.virtual_x + cfg.eta_tilde * g)))
                worst_virtual = max(worst_virtual, res)
                if res > virtual_tol:
                    raise DiagnosticsError(
                        f"virtual iterate recursion violated in round {r}: residual {res:.3g}",
                        r, res)
            if check_dual:
                prefix = pairwise_sum([ls.grad_prefix + ls.channel.prev_row_product
                                       for ls in learners])
                res = float(np.max(np.abs(gs.x + cfg.eta_tilde / (cfg.n * cfg.tau) * prefix)))
                worst_dual = max(worst_dual, res)
                if res > dual_tol:
                    raise DiagnosticsError(
                        f"prefix-sum identity violated after round {r}: residual {res:.3g}",
                        r + 1, res)
    finally:
        if pool is not None:
            pool.shutdown()
    if check_virtual:
        report["virtual_iterate"] = {"passed": True, "max_residual": worst_virtual}
    if check_dual:
        report["dual_form_check"] = {"passed": True, "max_residual": worst_dual}
    return SimResult(models, std, budget, f, report)


# -- step-size rules -----------------------------------------------------------


def correlated_regime_max_step(n: int, R: int, tau: int, eta_g: float) -> float:
    """Largest ``eta_tilde`` for which the correlated-noise bound beats the
    independent-noise bound: ``tau / ((1 + n / eta_g^2) ln(R tau)^2)``."""
    return tau / ((1.0 + n / eta_g**2) * math.log(R * tau) ** 2)


def sublinear_step(R: int, tau: int, scale: float = 1.0) -> float:
    """``eta_tilde = scale * R^(-1/3) * ln(R tau)^(-2/3)``."""
    return scale * R ** (-1.0 / 3.0) * math.log(max(R * tau, 2)) ** (-2.0 / 3.0)
