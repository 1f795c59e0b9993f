"""Discrete backdoor adjustment over an empirical joint distribution.

Given a joint P(X, Y, Z) with Z a (possibly multi-variable) confounder,
the interventional distribution is

    P(Y | do(X=x)) = sum_z P(Y | x, z) P(z)

which is only identified when P(x, z) > 0 for every z carrying mass
(positivity). Estimation is plain maximum likelihood from counts; there
is deliberately no silent smoothing, a positivity failure raises and
names the offending z, though a pseudocount can be opted into.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np


class PositivityError(ValueError):
    """P(x, z) = 0 for some z with P(z) > 0; the adjusted query is undefined."""


def _as_z(value) -> tuple:
    """Normalize a confounder value to a tuple (Z may be several variables)."""
    if isinstance(value, tuple):
        return value
    if isinstance(value, list):
        return tuple(value)
    return (value,)


@dataclass
class DiscreteJoint:
    """Probability table over the product domain of X, Y, and Z."""

    x_domain: tuple
    y_domain: tuple
    z_domain: tuple  # tuple of z-tuples
    table: np.ndarray  # shape (|X|, |Y|, |Z|)
    x_name: str = "x"
    y_name: str = "y"
    z_names: tuple[str, ...] = ("z",)

    def __post_init__(self):
        expected = (len(self.x_domain), len(self.y_domain), len(self.z_domain))
        if self.table.shape != expected:
            raise ValueError(f"table shape {self.table.shape} != domain sizes {expected}")
        if np.any(self.table < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(float(self.table.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {self.table.sum()}, expected 1")

    def p_x_z(self, xi: int, zi: int) -> float:
        return float(self.table[xi, :, zi].sum())

    def p_z(self, zi: int) -> float:
        return float(self.table[:, :, zi].sum())

    def zero_xz_cells(self) -> list[tuple]:
        """Every (x, z) pair with no mass; useful for positivity triage."""
        return [(self.x_domain[xi], self.z_domain[zi])
                for xi in range(len(self.x_domain))
                for zi in range(len(self.z_domain))
                if self.p_x_z(xi, zi) == 0.0]


def from_counts(records, *, x_domain=None, y_domain=None, z_domain=None,
                pseudocount: float = 0.0,
                x_name: str = "x", y_name: str = "y",
                z_names: tuple[str, ...] = ("z",)) -> DiscreteJoint:
    """Maximum-likelihood joint from (x, y, z) records.

    Domains default to the sorted observed values; when given explicitly,
    out-of-domain records raise. ``pseudocount`` adds that many virtual
    observations to every cell of the full product domain.
    """
    records = [(x, y, _as_z(z)) for x, y, z in records]
    if not records and pseudocount == 0.0:
        raise ValueError("from_counts needs at least one record")
    xd = tuple(x_domain) if x_domain is not None else tuple(sorted({r[0] for r in records}))
    yd = tuple(y_domain) if y_domain is not None else tuple(sorted({r[1] for r in records}))
    zd = (tuple(_as_z(z) for z in z_domain) if z_domain is not None
          else tuple(sorted({r[2] for r in records})))
    xi = {v: i for i, v in enumerate(xd)}
    yi = {v: i for i, v in enumerate(yd)}
    zi = {v: i for i, v in enumerate(zd)}

    counts = np.full((len(xd), len(yd), len(zd)), float(pseudocount))
    for n, (x, y, z) in enumerate(records):
        for value, index, name in ((x, xi, x_name), (y, yi, y_name), (z, zi, "z")):
            if value not in index:
                raise ValueError(
                    f"record {n}: value {value!r} outside declared {name} domain")
        counts[xi[x], yi[y], zi[z]] += 1.0
    return DiscreteJoint(x_domain=xd, y_domain=yd, z_domain=zd,
                         table=counts / counts.sum(),
                         x_name=x_name, y_name=y_name, z_names=z_names)


def backdoor_adjust(joint: DiscreteJoint, x) -> dict:
    """P(Y | do(X=x)) by averaging P(Y | x, z) over the marginal of z."""
    if x not in joint.x_domain:
        raise ValueError(f"value {x!r} not in X domain {joint.x_domain}")
    xi = joint.x_domain.index(x)
    result = np.zeros(len(joint.y_domain))
    for zi, z in enumerate(joint.z_domain):
        pz = joint.p_z(zi)
        if pz == 0.0:
            continue
        pxz = joint.p_x_z(xi, zi)
        if pxz == 0.0:
            raise PositivityError(
                f"P({joint.x_name}={x!r}, z={z!r}) = 0 while P(z={z!r}) = {pz:g}; "
                f"backdoor adjustment is undefined")
        result += joint.table[xi, :, zi] / pxz * pz
    return {y: float(result[yi]) for yi, y in enumerate(joint.y_domain)}


def conditional(joint: DiscreteJoint, x) -> dict:
    """Plain P(Y | X=x), the unadjusted contrast to the do-query."""
    if x not in joint.x_domain:
        raise ValueError(f"value {x!r} not in X domain {joint.x_domain}")
    xi = joint.x_domain.index(x)
    px = float(joint.table[xi].sum())
    if px == 0.0:
        raise ValueError(f"P({joint.x_name}={x!r}) = 0; conditional undefined")
    return {y: float(joint.table[xi, yi].sum() / px)
            for yi, y in enumerate(joint.y_domain)}


def joint_from_csv(path) -> DiscreteJoint:
    """Read record-per-row CSV with header ``x,y,z[,z2…]``."""
    import csv

    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError("joint CSV is empty")
        if header[:2] != ["x", "y"] or len(header) < 3 \
                or not all(h.startswith("z") for h in header[2:]):
            raise ValueError(f"joint CSV header must be x,y,z[,z2…]; got {header}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"joint CSV row {lineno}: expected "
                                 f"{len(header)} cells, got {len(row)}")
            records.append((row[0], row[1], tuple(row[2:])))
    if not records:
        raise ValueError("joint CSV has no records")
    return from_counts(records, z_names=tuple(header[2:]))
