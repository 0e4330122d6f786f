"""Open-circuit potential curves U(stoichiometry).

Two representations are supported: a sum of analytic terms (constant,
exponential and tanh sigmoid) and a monotone table interpolated with a
shape-preserving piecewise cubic.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .constants import STOICH_EPS


class OcpError(ValueError):
    """Malformed OCP definition."""


_ARITY = {"const": 1, "exp": 3, "tanh": 3}


@dataclass(frozen=True)
class OcpCurve:
    """OCP of one electrode.

    ``terms`` is a tuple of ``(kind, coefficients)`` with

    * ``("const", (c,))``           -> ``c``
    * ``("exp", (a, b, x0))``       -> ``a * exp(b * (x - x0))``
    * ``("tanh", (a, x0, w))``      -> ``a * tanh((x - x0) / w)``

    Alternatively ``table`` holds ``(stoich, volts)`` sample arrays.
    """

    electrode: str
    terms: tuple = ()
    table: tuple | None = None
    _interp: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.electrode not in ("neg", "pos"):
            raise OcpError(f"electrode tag must be 'neg' or 'pos', got {self.electrode!r}")
        if self.table is not None:
            if self.terms:
                raise OcpError("give either analytic terms or a table, not both")
            x, v = (np.asarray(a, dtype=float) for a in self.table)
            if x.ndim != 1 or x.size < 2 or x.shape != v.shape:
                raise OcpError("OCP table needs at least two (stoich, volts) rows")
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
                raise OcpError("OCP table contains non-finite values")
            if np.any(np.diff(x) <= 0):
                raise OcpError("OCP table stoichiometry must be strictly increasing")
            object.__setattr__(self, "table", (x, v))
            object.__setattr__(self, "_interp", PchipInterpolator(x, v, extrapolate=True))
        else:
            if not self.terms:
                raise OcpError("OCP curve has no terms")
            clean = []
            for term in self.terms:
                try:
                    kind, coef = term
                    coef = tuple(float(c) for c in coef)
                except (TypeError, ValueError):
                    raise OcpError(f"malformed OCP term {term!r}") from None
                if kind not in _ARITY or len(coef) != _ARITY[kind]:
                    raise OcpError(f"malformed OCP term {term!r}")
                if kind == "tanh" and coef[2] == 0.0:
                    raise OcpError("tanh term width must be nonzero")
                if not all(np.isfinite(coef)):
                    raise OcpError(f"non-finite coefficient in {term!r}")
                clean.append((kind, coef))
            object.__setattr__(self, "terms", tuple(clean))

    def __call__(self, stoich):
        return evaluate(self, stoich)

    def value(self, x: float) -> float:
        """Scalar evaluation without array overhead."""
        x = min(max(float(x), STOICH_EPS), 1.0 - STOICH_EPS)
        if self._interp is not None:
            return float(self._interp(x))
        out = 0.0
        for kind, c in self.terms:
            if kind == "const":
                out += c[0]
            elif kind == "exp":
                out += c[0] * math.exp(c[1] * (x - c[2]))
            else:
                out += c[0] * math.tanh((x - c[1]) / c[2])
        return out

    def derivative(self, stoich):
        x = np.clip(stoich, STOICH_EPS, 1.0 - STOICH_EPS)
        if self._interp is not None:
            return self._interp(x, 1)
        out = np.zeros_like(np.asarray(x, dtype=float))
        for kind, c in self.terms:
            if kind == "exp":
                out = out + c[0] * c[1] * np.exp(c[1] * (x - c[2]))
            elif kind == "tanh":
                out = out + c[0] / c[2] / np.cosh((x - c[1]) / c[2]) ** 2
        return out


def evaluate(curve: OcpCurve, stoich):
    """OCP in volts; stoichiometry is clamped to [1e-6, 1 - 1e-6]."""
    x = np.clip(stoich, STOICH_EPS, 1.0 - STOICH_EPS)
    if curve._interp is not None:
        out = curve._interp(x)
        return float(out) if np.ndim(out) == 0 else out
    out = 0.0
    for kind, c in curve.terms:
        if kind == "const":
            out = out + c[0]
        elif kind == "exp":
            out = out + c[0] * np.exp(c[1] * (x - c[2]))
        else:
            out = out + c[0] * np.tanh((x - c[1]) / c[2])
    if np.ndim(out) == 0:
        return float(out)
    return out + np.zeros_like(x)


def default_negative() -> OcpCurve:
    """Graphite-like curve: steep at low lithiation, staged plateaus above."""
    return OcpCurve(
        "neg",
        terms=(
            ("const", (0.12,)),
            ("exp", (0.7, -40.0, 0.0)),
            ("tanh", (-0.02, 0.5, 0.04)),
            ("tanh", (-0.03, 0.18, 0.05)),
            ("exp", (-0.04, 40.0, 1.0)),
        ),
    )


def default_positive() -> OcpCurve:
    """Layered-oxide-like curve, smoothly decreasing with a drop near full lithiation."""
    return OcpCurve(
        "pos",
        terms=(
            ("const", (3.95,)),
            ("tanh", (-0.45, 0.65, 0.35)),
            ("exp", (-0.3, 25.0, 1.0)),
        ),
    )


def format_terms(curve: OcpCurve) -> str:
    """Config encoding: ``kind:c1,c2,...`` joined by ``;``."""
    return "; ".join(f"{k}:" + ",".join(repr(c) for c in coef) for k, coef in curve.terms)


def parse_terms(electrode: str, text: str) -> OcpCurve:
    terms = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise OcpError(f"malformed OCP term {chunk!r}")
        kind, rest = chunk.split(":", 1)
        try:
            coef = tuple(float(c) for c in rest.split(","))
        except ValueError:
            raise OcpError(f"malformed OCP coefficients in {chunk!r}") from None
        terms.append((kind.strip(), coef))
    return OcpCurve(electrode, terms=tuple(terms))


def load_table(electrode: str, path) -> OcpCurve:
    """Two-column CSV (stoichiometry, volts); a non-numeric header row is skipped."""
    xs, vs = [], []
    with open(Path(path), newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                x, v = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue
                raise OcpError(f"{path}:{lineno}: expected two numeric columns") from None
            xs.append(x)
            vs.append(v)
    if not xs:
        raise OcpError(f"{path}: empty OCP table")
    return OcpCurve(electrode, table=(xs, vs))
