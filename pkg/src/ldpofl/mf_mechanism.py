"""Matrix factorizations ``A = B @ C`` of the prefix-sum matrix.

``A`` is the ``steps x steps`` lower-triangular all-ones matrix. Noise drawn
i.i.d. per row of ``C @ G`` and mapped through ``B`` becomes temporally
correlated noise on the released prefix sums.

Four kinds are supported:

* ``binary-tree``: dyadic tree over the inputs, post-order node numbering.
* ``toeplitz``: ``B = C`` lower-triangular Toeplitz with the square-root
  coefficients ``h(0) = 1, h(j) = (1 - 1/(2j)) h(j-1)``.
* ``identity``: ``C = I, B = A`` (independent noise per step).
* ``external``: factors loaded from a CSV file produced elsewhere.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

INTERNAL_TOL = 1e-9
LOAD_TOL = 1e-6


class Kind(str, enum.Enum):
    BINARY_TREE = "binary-tree"
    TOEPLITZ = "toeplitz"
    IDENTITY = "identity"
    EXTERNAL = "external"

    @classmethod
    def parse(cls, name: str) -> "Kind":
        key = name.strip().lower().replace("_", "-")
        aliases = {"binarytree": "binary-tree", "tree": "binary-tree", "independent": "identity"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unknown mechanism {name!r}; expected one of {[k.value for k in cls]}"
            ) from None


class FactorizationError(ValueError):
    """Base class for malformed or inexact factorizations."""


class FactorizationParseError(FactorizationError):
    pass


class FactorizationShapeError(FactorizationError):
    pass


class FactorizationResidualError(FactorizationError):
    def __init__(self, message, row, col, residual):
        super().__init__(message)
        self.row = row
        self.col = col
        self.residual = residual


@dataclasses.dataclass(frozen=True, eq=False)
class Factorization:
    """One factorization ``B @ C = A``.

    ``B`` has shape ``(steps, width)`` and ``C`` has shape ``(width, steps)``.
    Binary-tree factors are stored as CSR arrays, the others dense. Use
    :meth:`dense_B` / :meth:`dense_C` when a dense copy is needed.

    ``row_nodes`` is populated for the binary tree: ``row_nodes[k]`` lists the
    node indices with a one in row ``k`` of ``B`` (the prefix cover).
    ``toeplitz_coefs`` holds ``h(0..steps-1)`` for the Toeplitz kind.
    """

    kind: Kind
    steps: int
    width: int
    B: object
    C: object
    row_nodes: Optional[tuple] = None
    toeplitz_coefs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.B.shape != (self.steps, self.width):
            raise FactorizationShapeError(
                f"B has shape {self.B.shape}, expected ({self.steps}, {self.width})"
            )
        if self.C.shape != (self.width, self.steps):
            raise FactorizationShapeError(
                f"C has shape {self.C.shape}, expected ({self.width}, {self.steps})"
            )
        for m in (self.B, self.C):
            if isinstance(m, np.ndarray):
                m.setflags(write=False)
        if self.toeplitz_coefs is not None:
            self.toeplitz_coefs.setflags(write=False)

    def dense_B(self) -> np.ndarray:
        return _dense(self.B)

    def dense_C(self) -> np.ndarray:
        return _dense(self.C)

    def product(self):
        """``B @ C``; sparse when both factors are sparse."""
        out = self.B @ self.C
        return out

    def residual(self) -> tuple[float, int, int]:
        """Largest ``|B @ C - A|`` entry as ``(value, row, col)``."""
        return _residual(self.B, self.C, self.steps)

    def col_sq_norms(self) -> np.ndarray:
        """``||c^k||^2`` for each column ``k`` of ``C``."""
        if self.kind is Kind.TOEPLITZ:
            h2 = np.square(self.toeplitz_coefs)
            return np.cumsum(h2)[::-1].copy()
        if self.kind is Kind.IDENTITY:
            return np.ones(self.steps)
        return _sq_norms(self.C, axis=0)

    def row_sq_norms(self) -> np.ndarray:
        """``||b^k||^2`` for each row ``k`` of ``B``."""
        if self.kind is Kind.TOEPLITZ:
            return np.cumsum(np.square(self.toeplitz_coefs))
        if self.kind is Kind.IDENTITY:
            return np.arange(1, self.steps + 1, dtype=float)
        return _sq_norms(self.B, axis=1)

    def row_diff(self, k: int) -> np.ndarray:
        """Dense ``b^k - b^(k-1)`` with ``b^(-1) = 0``."""
        row = _dense_row(self.B, k)
        if k > 0:
            row = row - _dense_row(self.B, k - 1)
        return row


def _dense(m) -> np.ndarray:
    if sp.issparse(m):
        return m.toarray()
    return np.array(m, dtype=float)


def _dense_row(m, k: int) -> np.ndarray:
    if sp.issparse(m):
        return m[[k], :].toarray().ravel()
    return np.asarray(m[k], dtype=float)


def _sq_norms(m, axis: int) -> np.ndarray:
    if sp.issparse(m):
        return np.asarray(m.multiply(m).sum(axis=axis), dtype=float).ravel()
    return np.sum(np.square(m), axis=axis)


def _residual(B, C, steps: int) -> tuple[float, int, int]:
    prod = B @ C
    if sp.issparse(prod):
        prod = prod.toarray()
    prod = np.asarray(prod, dtype=float)
    diff = np.abs(np.tril(prod - 1.0) + np.triu(prod, 1))
    if diff.size == 0:
        return 0.0, 0, 0
    flat = int(np.argmax(diff))
    i, j = divmod(flat, steps)
    return float(diff[i, j]), i, j


def _check_steps(steps) -> int:
    if isinstance(steps, bool) or int(steps) != steps or steps < 1:
        raise ValueError(f"steps must be a positive integer, got {steps!r}")
    return int(steps)


def dyadic_nodes(steps: int) -> list[tuple[int, int]]:
    """Dyadic intervals ``[start, end)`` lying inside ``[0, steps)``, post-order.

    Sorting by ``(end, size)`` puts children before their parent and matches
    the left-to-right, bottom-up numbering of a complete binary tree.
    """
    nodes = []
    size = 1
    while size <= steps:
        for start in range(0, steps - size + 1, size):
            nodes.append((start, start + size))
        size *= 2
    nodes.sort(key=lambda iv: (iv[1], iv[1] - iv[0]))
    return nodes


def prefix_cover(k: int) -> list[tuple[int, int]]:
    """Greedy dyadic cover of ``[0, k]`` by maximal aligned blocks."""
    cover = []
    start = 0
    remaining = k + 1
    while remaining:
        size = 1 << (remaining.bit_length() - 1)
        cover.append((start, start + size))
        start += size
        remaining -= size
    return cover


def build_binary_tree(steps: int) -> Factorization:
    steps = _check_steps(steps)
    nodes = dyadic_nodes(steps)
    index = {iv: j for j, iv in enumerate(nodes)}
    width = len(nodes)

    c_rows, c_cols = [], []
    for j, (start, end) in enumerate(nodes):
        c_rows.extend([j] * (end - start))
        c_cols.extend(range(start, end))
    C = sp.csr_array(
        (np.ones(len(c_rows)), (c_rows, c_cols)), shape=(width, steps)
    )

    row_nodes = []
    b_rows, b_cols = [], []
    for k in range(steps):
        cover = tuple(index[iv] for iv in prefix_cover(k))
        row_nodes.append(cover)
        b_rows.extend([k] * len(cover))
        b_cols.extend(cover)
    B = sp.csr_array((np.ones(len(b_rows)), (b_rows, b_cols)), shape=(steps, width))
    return Factorization(Kind.BINARY_TREE, steps, width, B, C, row_nodes=tuple(row_nodes))


def toeplitz_coefficients(steps: int) -> np.ndarray:
    h = np.empty(steps)
    h[0] = 1.0
    for j in range(1, steps):
        h[j] = (1.0 - 1.0 / (2 * j)) * h[j - 1]
    return h


def lower_toeplitz(first_col: np.ndarray) -> np.ndarray:
    n = len(first_col)
    idx = np.arange(n)
    lag = idx[:, None] - idx[None, :]
    out = np.where(lag >= 0, first_col[np.clip(lag, 0, None)], 0.0)
    return out


def build_toeplitz(steps: int) -> Factorization:
    steps = _check_steps(steps)
    h = toeplitz_coefficients(steps)
    T = lower_toeplitz(h)
    return Factorization(Kind.TOEPLITZ, steps, steps, T, T, toeplitz_coefs=h)


def build_identity(steps: int) -> Factorization:
    steps = _check_steps(steps)
    A = np.tril(np.ones((steps, steps)))
    C = sp.identity(steps, format="csr").tocsr()
    C = sp.csr_array(C)
    return Factorization(Kind.IDENTITY, steps, steps, A, C)


BUILDERS = {
    Kind.BINARY_TREE: build_binary_tree,
    Kind.TOEPLITZ: build_toeplitz,
    Kind.IDENTITY: build_identity,
}


def build(kind, steps: int) -> Factorization:
    kind = Kind.parse(kind) if isinstance(kind, str) else kind
    if kind is Kind.EXTERNAL:
        raise ValueError("external factorizations must be loaded from a file")
    return BUILDERS[kind](steps)


# -- file format -------------------------------------------------------------


def _fmt(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def dumps_factorization(f: Factorization) -> str:
    lines = [f"kind={f.kind.value}", f"steps={f.steps}", f"width={f.width}"]
    C = f.dense_C()
    B = f.dense_B()
    lines.extend(",".join(_fmt(v) for v in row) for row in C)
    lines.append("---")
    lines.extend(",".join(_fmt(v) for v in row) for row in B)
    return "\n".join(lines) + "\n"


def save_factorization(f: Factorization, path) -> None:
    Path(path).write_text(dumps_factorization(f))


def _header(line: str, key: str, lineno: int) -> str:
    name, sep, value = line.partition("=")
    if not sep or name.strip() != key:
        raise FactorizationParseError(f"line {lineno}: expected '{key}=<value>', got {line!r}")
    return value.strip()


def _parse_int(text: str, key: str, lineno: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise FactorizationParseError(f"line {lineno}: {key} must be an integer, got {text!r}") from None
    if value < 1:
        raise FactorizationParseError(f"line {lineno}: {key} must be positive, got {value}")
    return value


def _parse_rows(lines: Sequence[tuple[int, str]], n_cols: int, label: str) -> np.ndarray:
    out = np.empty((len(lines), n_cols))
    for r, (lineno, line) in enumerate(lines):
        cells = line.split(",")
        if len(cells) != n_cols:
            raise FactorizationShapeError(
                f"line {lineno}: {label} row {r} has {len(cells)} entries, expected {n_cols}"
            )
        for c, cell in enumerate(cells):
            try:
                out[r, c] = float(cell)
            except ValueError:
                raise FactorizationParseError(
                    f"line {lineno}: {label}[{r},{c}] is not a number: {cell.strip()!r}"
                ) from None
    if not np.all(np.isfinite(out)):
        raise FactorizationParseError(f"{label} contains non-finite values")
    return out


def loads_factorization(text: str, tol: float = LOAD_TOL) -> Factorization:
    raw = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    raw = [(i, ln) for i, ln in raw if ln]
    if len(raw) < 3:
        raise FactorizationParseError("missing header: need kind=, steps=, width= lines")
    _header(raw[0][1], "kind", raw[0][0])
    steps = _parse_int(_header(raw[1][1], "steps", raw[1][0]), "steps", raw[1][0])
    width = _parse_int(_header(raw[2][1], "width", raw[2][0]), "width", raw[2][0])
    body = raw[3:]
    seps = [j for j, (_, ln) in enumerate(body) if ln == "---"]
    if len(seps) != 1:
        raise FactorizationParseError(f"expected exactly one '---' separator, found {len(seps)}")
    c_lines, b_lines = body[: seps[0]], body[seps[0] + 1:]
    if len(c_lines) != width:
        raise FactorizationShapeError(f"C has {len(c_lines)} rows, expected width={width}")
    if len(b_lines) != steps:
        raise FactorizationShapeError(f"B has {len(b_lines)} rows, expected steps={steps}")
    C = _parse_rows(c_lines, steps, "C")
    B = _parse_rows(b_lines, width, "B")
    worst, i, j = _residual(B, C, steps)
    if worst > tol:
        expected = 1.0 if i >= j else 0.0
        got = float(B[i] @ C[:, j])
        raise FactorizationResidualError(
            f"B@C differs from the prefix-sum matrix at entry ({i},{j}): "
            f"got {got:.6g}, expected {expected:g} (residual {worst:.3g} > {tol:g})",
            i, j, worst,
        )
    return Factorization(Kind.EXTERNAL, steps, width, B, C)


def load_factorization(path, tol: float = LOAD_TOL) -> Factorization:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FactorizationParseError(f"cannot read factorization file {path}: {exc}") from exc
    return loads_factorization(text, tol=tol)


# -- statistics --------------------------------------------------------------


def factorization_stats(f: Factorization, tau: Optional[int] = None) -> dict:
    """Norm statistics driving sensitivity (columns) and utility (rows).

    ``prefix_row_sq_norms`` lists ``||b^k||^2`` at the last local step of each
    round (``k = r*tau + tau - 1``); it is empty unless ``tau`` divides
    ``steps``.
    """
    cols = f.col_sq_norms()
    rows = f.row_sq_norms()
    prefix = []
    if tau is not None:
        if tau < 1 or f.steps % tau:
            raise ValueError(f"tau={tau} does not divide steps={f.steps}")
        prefix = rows[tau - 1::tau].tolist()
    return {
        "kind": f.kind.value,
        "steps": f.steps,
        "width": f.width,
        "max_col_sq_norm": float(cols.max()),
        "max_row_sq_norm": float(rows.max()),
        "frobenius_sq_B_rounds": float(sum(prefix)),
        "prefix_row_sq_norms": prefix,
    }


def toeplitz_safe_bound(steps: int) -> float:
    """Upper bound on ``sum_j h(j)^2`` from ``h(j)^2 <= 1/(pi j)``."""
    if steps < 2:
        return 1.0
    return 1.0 + (1.0 + math.log(steps - 1)) / math.pi


def toeplitz_published_bound(steps: int) -> float:
    """``1 + ln(4 steps / 5) / pi`` as stated for the Toeplitz construction."""
    return 1.0 + math.log(4.0 * steps / 5.0) / math.pi


def toeplitz_norm_report(sizes: Sequence[int]) -> list[dict]:
    """Exact Toeplitz column norm against both closed-form bounds.

    The published bound is reported, never asserted: it is below the exact
    value at small sizes.
    """
    report = []
    for n in sizes:
        exact = float(np.sum(np.square(toeplitz_coefficients(n))))
        published = toeplitz_published_bound(n)
        report.append(
            {
                "steps": int(n),
                "exact": exact,
                "safe_bound": toeplitz_safe_bound(n),
                "published_bound": published,
                "published_violated": exact > published,
            }
        )
    return report
