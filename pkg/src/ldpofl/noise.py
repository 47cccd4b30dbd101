"""Per-learner correlated noise stream.

A channel owns the learner's ``W x d`` table of i.i.d. ``N(0, std^2)`` draws
and hands out, one local step at a time, the noise increment
``(b^k - b^(k-1)) @ xi`` that turns a raw gradient into the difference of two
consecutive noisy prefix sums.

Row ``j`` of the table is drawn from a Philox stream keyed by
``(master_seed, learner_id)`` with the counter positioned at ``j``, so any row
can be materialized on its own, in any order, and always comes out the same.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy import signal

from .mf_mechanism import Factorization, Kind


class ChannelExhausted(RuntimeError):
    """Raised when a channel is asked for more steps than its factorization has."""


def _key(master_seed: int, learner_id: int) -> np.ndarray:
    if master_seed < 0 or learner_id < 0:
        raise ValueError("master_seed and learner_id must be nonnegative")
    return np.random.SeedSequence([int(master_seed), int(learner_id)]).generate_state(2, np.uint64)


def standard_normal_row(key: np.ndarray, node: int, dim: int) -> np.ndarray:
    """Row ``node`` of the standard-normal table for ``key``."""
    bitgen = np.random.Philox(key=key, counter=[0, 0, node, 0])
    return np.random.Generator(bitgen).standard_normal(dim)


class NoiseChannel:
    def __init__(self, factorization: Factorization, dim: int, std: float,
                 master_seed: int, learner_id: int):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        if not std >= 0:
            raise ValueError(f"std must be nonnegative, got {std}")
        self.factorization = factorization
        self.dim = int(dim)
        self.std = float(std)
        self.master_seed = int(master_seed)
        self.learner_id = int(learner_id)
        self.step_index = 0
        self.prev_row_product = np.zeros(self.dim)
        self._key = _key(master_seed, learner_id)
        self._rows = np.zeros((factorization.width, self.dim))
        self._have = np.zeros(factorization.width, dtype=bool)
        self._toeplitz_incs: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return self.factorization.steps

    @property
    def exhausted(self) -> bool:
        return self.step_index >= self.steps

    # -- noise table -----------------------------------------------------

    def noise_row(self, node: int) -> np.ndarray:
        if not self._have[node]:
            self._rows[node] = self.std * standard_normal_row(self._key, node, self.dim)
            self._have[node] = True
        return self._rows[node]

    def noise_table(self) -> np.ndarray:
        for node in np.flatnonzero(~self._have):
            self.noise_row(int(node))
        return self._rows

    def row_product(self, k: int) -> np.ndarray:
        """``b^k @ xi`` computed directly from row ``k`` of ``B``."""
        f = self.factorization
        if self.std == 0.0:
            return np.zeros(self.dim)
        if f.kind is Kind.BINARY_TREE:
            return self._sum_rows(f.row_nodes[k])
        if f.kind is Kind.IDENTITY:
            return self._sum_rows(range(k + 1))
        row = f.dense_B()[k] if f.kind is Kind.EXTERNAL else np.asarray(f.B[k])
        return row @ self.noise_table()

    def _sum_rows(self, nodes) -> np.ndarray:
        out = np.zeros(self.dim)
        for j in nodes:
            out += self.noise_row(j)
        return out

    # -- increments ------------------------------------------------------

    def increment_at(self, k: int) -> np.ndarray:
        """``(b^k - b^(k-1)) @ xi`` without touching the channel position."""
        if not 0 <= k < self.steps:
            raise ChannelExhausted(f"step {k} outside [0, {self.steps})")
        if self.std == 0.0:
            return np.zeros(self.dim)
        f = self.factorization
        if f.kind is Kind.IDENTITY:
            return self.noise_row(k).copy()
        if f.kind is Kind.BINARY_TREE:
            now = f.row_nodes[k]
            before = f.row_nodes[k - 1] if k > 0 else ()
            added = sorted(set(now) - set(before))
            dropped = sorted(set(before) - set(now))
            return self._sum_rows(added) - self._sum_rows(dropped)
        if f.kind is Kind.TOEPLITZ:
            if self._toeplitz_incs is None:
                self._toeplitz_incs = self._toeplitz_increments()
            return self._toeplitz_incs[k].copy()
        return f.row_diff(k) @ self.noise_table()

    def _toeplitz_increments(self) -> np.ndarray:
        # Differences of consecutive Toeplitz rows are themselves Toeplitz with
        # first column diff(h); one convolution along time yields every step.
        h = self.factorization.toeplitz_coefs
        dh = np.diff(h, prepend=0.0)
        table = self.noise_table()
        if self.steps <= 64:
            return np.array([dh[k::-1] @ table[: k + 1] for k in range(self.steps)])
        return signal.fftconvolve(dh[:, None], table, axes=0)[: self.steps]

    def next_increment(self) -> np.ndarray:
        if self.exhausted:
            raise ChannelExhausted(
                f"learner {self.learner_id}: channel exhausted after {self.steps} steps"
            )
        inc = self.increment_at(self.step_index)
        # prev_row_product is the running sum of increments in step order,
        # so telescoping is exact.
        self.prev_row_product = self.prev_row_product + inc
        self.step_index += 1
        return inc

    def noisy_prefix(self, gradient_prefix: np.ndarray) -> np.ndarray:
        """``gradient_prefix + b^k @ xi`` at the current step ``k``; does not advance."""
        gradient_prefix = np.asarray(gradient_prefix, dtype=float)
        if gradient_prefix.shape != (self.dim,):
            raise ValueError(
                f"gradient prefix has shape {gradient_prefix.shape}, expected ({self.dim},)"
            )
        if self.exhausted:
            raise ChannelExhausted(f"learner {self.learner_id}: no step left to release")
        return gradient_prefix + (self.prev_row_product + self.increment_at(self.step_index))


def open_channel(f: Factorization, dim: int, std: float, master_seed: int,
                 learner_id: int) -> NoiseChannel:
    return NoiseChannel(f, dim, std, master_seed, learner_id)
