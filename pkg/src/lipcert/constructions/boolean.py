"""Boolean functions as truth tables.

Row index ``i`` of a table encodes the input with ``x_1`` as the most
significant bit, so for d=3 row 6 is ``(1, 1, 0)``.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np


def boolean_cube(d: int) -> np.ndarray:
    """All 2^d points of {0,1}^d as float rows, in truth-table order."""
    if d < 0:
        raise ValueError("d must be non-negative")
    idx = np.arange(2**d)
    shifts = np.arange(d - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).astype(np.float64)


def row_index(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X))
    d = X.shape[1]
    return (X.astype(np.int64) << np.arange(d - 1, -1, -1)).sum(axis=1)


class BooleanFunction:
    def __init__(self, d: int, table):
        table = np.asarray(table).astype(np.int64).reshape(-1)
        if d < 1:
            raise ValueError("arity must be at least 1")
        if table.size != 2**d:
            raise ValueError(f"truth table must have length 2^{d} = {2**d}, got {table.size}")
        if np.any((table != 0) & (table != 1)):
            raise ValueError("truth table entries must be 0 or 1")
        self.d = int(d)
        self.table = table.astype(np.uint8)
        self.name = None

    def __call__(self, X):
        X = np.asarray(X)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.d:
            raise ValueError(f"expected {self.d} inputs")
        if np.any((X != 0) & (X != 1)):
            raise ValueError("inputs must be Boolean")
        out = self.table[row_index(X)]
        return int(out[0]) if single else out

    def inputs(self):
        return boolean_cube(self.d)

    def minterms(self):
        """Boolean points where the function is 1."""
        return self.inputs()[self.table == 1]

    @property
    def is_constant(self):
        return bool(self.table.min() == self.table.max())

    def is_symmetric(self):
        counts = self.inputs().sum(axis=1).astype(int)
        return all(len(set(self.table[counts == k])) == 1 for k in range(self.d + 1))

    def to_symmetric(self) -> "SymmetricBooleanFunction":
        if not self.is_symmetric():
            raise ValueError("function is not symmetric")
        counts = self.inputs().sum(axis=1).astype(int)
        g = [int(self.table[counts == k][0]) for k in range(self.d + 1)]
        return SymmetricBooleanFunction(self.d, g)

    def __eq__(self, other):
        return isinstance(other, BooleanFunction) and self.d == other.d and np.array_equal(self.table, other.table)

    def __repr__(self):
        tag = self.name or "".join(map(str, self.table[:32]))
        return f"{type(self).__name__}(d={self.d}, {tag})"


class SymmetricBooleanFunction(BooleanFunction):
    """Symmetric function given by ``g[k]`` = output when exactly ``k`` inputs are 1."""

    def __init__(self, d: int, g):
        g = np.asarray(g).astype(np.int64).reshape(-1)
        if g.size != d + 1:
            raise ValueError(f"value vector must have length d+1 = {d + 1}")
        if np.any((g != 0) & (g != 1)):
            raise ValueError("g entries must be 0 or 1")
        counts = boolean_cube(d).sum(axis=1).astype(int)
        super().__init__(d, g[counts])
        self.g = g.astype(np.uint8)

    def to_symmetric(self):
        return self


_SYMMETRIC = {
    "and": lambda d, k: [int(c == d) for c in range(d + 1)],
    "or": lambda d, k: [int(c >= 1) for c in range(d + 1)],
    "nand": lambda d, k: [int(c < d) for c in range(d + 1)],
    "nor": lambda d, k: [int(c == 0) for c in range(d + 1)],
    "xor": lambda d, k: [c % 2 for c in range(d + 1)],
    "parity": lambda d, k: [c % 2 for c in range(d + 1)],
    "majority": lambda d, k: [int(2 * c > d) for c in range(d + 1)],
    "threshold": lambda d, k: [int(c >= k) for c in range(d + 1)],
}

BUILTINS = tuple(_SYMMETRIC)


def builtin(name: str, d: int, k: int | None = None) -> SymmetricBooleanFunction:
    """Named symmetric function: and, or, nand, nor, xor/parity, majority, threshold-k."""
    key = name.lower()
    m = re.fullmatch(r"threshold-?(\d+)", key)
    if m:
        key, k = "threshold", int(m.group(1))
    if key not in _SYMMETRIC:
        raise ValueError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}")
    if key == "threshold":
        if k is None or not 0 <= k <= d + 1:
            raise ValueError("threshold needs 0 <= k <= d+1")
    f = SymmetricBooleanFunction(d, _SYMMETRIC[key](d, k))
    f.name = name
    return f


def from_truth_table(text: str) -> BooleanFunction:
    """Parse a 0/1 string of length 2^d (whitespace ignored)."""
    bits = "".join(text.split())
    if not bits or set(bits) - {"0", "1"}:
        raise ValueError("truth table must contain only 0/1 characters")
    d = len(bits).bit_length() - 1
    if 2**d != len(bits) or d < 1:
        raise ValueError(f"truth table length {len(bits)} is not a power of two >= 2")
    return BooleanFunction(d, [int(c) for c in bits])


def read_truth_table(path) -> BooleanFunction:
    f = from_truth_table(Path(path).read_text())
    f.name = Path(path).name
    return f


def random_function(d: int, rng) -> BooleanFunction:
    return BooleanFunction(d, rng.integers(0, 2, size=2**d))
