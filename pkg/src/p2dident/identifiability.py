"""Log-linear identifiability analysis of the grouped parameters.

Each grouped parameter is a monomial in the physical parameters, so taking
logarithms turns the grouping into a linear map ``log g = M log p``. Any
nullspace direction of ``M`` is a one-parameter family of physical sets that
share the same grouped set, i.e. an unidentifiable combination.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import sympy as sp

ELECTROLYTE_ROWS = (
    "tau_d_e.pos", "tau_d_e.sep", "tau_d_e.neg",
    "nu_e.pos", "nu_e.sep", "nu_e.neg",
    "tau_c_s.pos", "tau_c_s.neg",
)
# Columns 5 and 6 are ordered (sep, neg) so that the printed matrix rows for
# the separator and negative electrode hit their own volume fraction.
ELECTROLYTE_COLUMNS = (
    "L.pos", "L.sep", "L.neg",
    "eps_e.pos", "eps_e.sep", "eps_e.neg",
    "D_e", "eps_s.pos", "eps_s.neg", "A",
)

SOLID_ROWS = ("tau_d_s", "tau_k_bar")
SOLID_COLUMNS = ("R_s", "D_s", "k_n")


def _exact(value):
    if isinstance(value, sp.Basic):
        return value
    if isinstance(value, Fraction):
        return sp.Rational(value.numerator, value.denominator)
    if isinstance(value, int):
        return sp.Integer(value)
    return sp.nsimplify(Fraction(value).limit_denominator(10**9))


@dataclass(frozen=True)
class ExponentMatrix:
    """Exponents of physical parameters (columns) in grouped parameters (rows)."""

    matrix: sp.Matrix
    rows: tuple[str, ...]
    columns: tuple[str, ...]

    @classmethod
    def from_rows(cls, data, rows=None, columns=None) -> "ExponentMatrix":
        m = sp.Matrix([[_exact(v) for v in row] for row in data])
        rows = tuple(rows) if rows is not None else tuple(f"g{i}" for i in range(m.rows))
        columns = tuple(columns) if columns is not None else tuple(f"p{j}" for j in range(m.cols))
        if len(rows) != m.rows or len(columns) != m.cols:
            raise ValueError("row/column labels do not match matrix shape")
        return cls(m, rows, columns)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def rank(self) -> int:
        return int(self.matrix.rank())

    def to_numpy(self) -> np.ndarray:
        return np.array(self.matrix.evalf(), dtype=float)

    def subs(self, **symbols) -> "ExponentMatrix":
        return ExponentMatrix(self.matrix.subs(symbols), self.rows, self.columns)

    def row(self, label: str) -> dict[str, sp.Expr]:
        i = self.rows.index(label)
        return {c: self.matrix[i, j] for j, c in enumerate(self.columns) if self.matrix[i, j] != 0}

    def format(self) -> str:
        width = max(len(c) for c in self.columns) + 1
        head = " " * 12 + "".join(f"{c:>{width}}" for c in self.columns)
        lines = [head]
        for i, r in enumerate(self.rows):
            cells = "".join(f"{str(self.matrix[i, j]):>{width}}" for j in range(self.matrix.cols))
            lines.append(f"{r:<12}{cells}")
        return "\n".join(lines)


@dataclass(frozen=True)
class ScalingDirection:
    """A log-space direction ``d`` with ``M d = 0``.

    Exponentiated, it scales parameter ``p_j`` by ``mu ** d_j`` for any
    ``mu > 0`` without changing any grouped parameter.
    """

    columns: tuple[str, ...]
    vector: tuple[sp.Expr, ...]

    def exponents(self) -> dict[str, sp.Expr]:
        return dict(zip(self.columns, self.vector))

    def as_float(self) -> np.ndarray:
        return np.array([float(v) for v in self.vector])

    def apply(self, values: dict[str, float], mu: float) -> dict[str, float]:
        out = dict(values)
        for c, d in zip(self.columns, self.vector):
            out[c] = values[c] * mu ** float(d)
        return out

    def normalized(self) -> "ScalingDirection":
        """Rescale so the first nonzero entry is 1."""
        pivot = next(v for v in self.vector if v != 0)
        return ScalingDirection(self.columns, tuple(sp.nsimplify(v / pivot) for v in self.vector))


def identifiability_matrix(b=Fraction(3, 2)) -> ExponentMatrix:
    """Exponent matrix of the electrolyte-related grouped parameters.

    ``b`` is the Bruggeman coefficient; pass a sympy symbol for the symbolic
    form. Rows are log tau_d_e (pos, sep, neg), log nu_e (pos, sep, neg) and
    log tau_c_s (pos, neg), with the constant factors dropped.
    """
    bb = b if isinstance(b, sp.Basic) else _exact(b)
    c = 1 - bb
    data = [
        [2, 0, 0, c, 0, 0, -1, 0, 0, 0],
        [0, 2, 0, 0, c, 0, -1, 0, 0, 0],
        [0, 0, 2, 0, 0, c, -1, 0, 0, 0],
        [1, 0, 0, 1, 0, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 1, 0, 0, 0, 0, 0],
        [0, 0, 1, 0, 0, 1, 0, 0, 0, 0],
        [1, 0, 0, 0, 0, 0, 0, 1, 0, 1],
        [0, 0, 1, 0, 0, 0, 0, 0, 1, 1],
    ]
    return ExponentMatrix.from_rows(data, ELECTROLYTE_ROWS, ELECTROLYTE_COLUMNS)


def solid_matrix() -> ExponentMatrix:
    """log tau_d_s and log(R_s/k_n) in terms of log (R_s, D_s, k_n)."""
    return ExponentMatrix.from_rows([[2, -1, 0], [1, 0, -1]], SOLID_ROWS, SOLID_COLUMNS)


def nullspace_scalings(m: ExponentMatrix) -> list[ScalingDirection]:
    """Basis of scaling directions leaving every grouped parameter fixed."""
    basis = m.matrix.nullspace()
    out = []
    for v in basis:
        v = sp.simplify(v)
        out.append(ScalingDirection(m.columns, tuple(sp.nsimplify(x) for x in v)).normalized())
    return out


def electrolyte_generators(b=Fraction(3, 2)) -> tuple[ScalingDirection, ScalingDirection]:
    """Thickness (mu1) and area (mu2) scaling families written out by hand."""
    bb = b if isinstance(b, sp.Basic) else _exact(b)
    cols = ELECTROLYTE_COLUMNS
    mu1 = {"L.pos": 1, "L.sep": 1, "L.neg": 1,
           "eps_e.pos": -1, "eps_e.sep": -1, "eps_e.neg": -1,
           "D_e": bb + 1, "eps_s.pos": -1, "eps_s.neg": -1, "A": 0}
    mu2 = {c: 0 for c in cols}
    mu2.update({"eps_s.pos": -1, "eps_s.neg": -1, "A": 1})
    return (
        ScalingDirection(cols, tuple(sp.sympify(mu1[c]) for c in cols)),
        ScalingDirection(cols, tuple(sp.sympify(mu2[c]) for c in cols)),
    )


def same_span(a: list[ScalingDirection], b: list[ScalingDirection]) -> bool:
    """True when two direction lists span the same subspace."""
    if len(a) != len(b):
        return False
    if not a:
        return True
    ma = sp.Matrix([list(d.vector) for d in a])
    mb = sp.Matrix([list(d.vector) for d in b])
    r = ma.rank()
    return r == mb.rank() == sp.Matrix.vstack(ma, mb).rank()


def identifiability_class(m: ExponentMatrix) -> str:
    """Classify by the nullspace: empty means no scaling freedom."""
    if not nullspace_scalings(m):
        return "globally identifiable (no scaling freedom)"
    return "unidentifiable (continuous scaling families)"
