"""Selection-event algebra on a line through the data.

Every condition a segmentation algorithm checks is (at most) quadratic in the
image, so its restriction to the line ``x(tau) = z + tau*y`` is a degree-<=2
polynomial in the scalar ``tau``. This module represents those polynomials
(:class:`TauPoly`), the inequalities on them (:class:`TauConstraint`), and the
sets of ``tau > 0`` where they hold (:class:`TruncationSet`), together with
the three operations everything else is built from: reducing a structured
quadratic form to the line, solving one constraint, and intersecting solution
sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import TrackingBugError

INF = math.inf

#: default tolerance for degenerate-coefficient detection and endpoint merging
DEFAULT_EPS = 1e-12

#: relations a constraint may carry; strict forms are widened to closed
#: intervals when solved (the boundary is Lebesgue-null under the noise model)
RELATIONS = ("<=", "<", ">=", ">")


class TauPoly(NamedTuple):
    """Coefficients of ``q(tau) = a*tau^2 + b*tau + c``."""

    a: float
    b: float
    c: float

    def __call__(self, tau: float) -> float:
        return (self.a * tau + self.b) * tau + self.c

    def __add__(self, other: "TauPoly") -> "TauPoly":  # type: ignore[override]
        return TauPoly(self.a + other.a, self.b + other.b, self.c + other.c)

    def __sub__(self, other: "TauPoly") -> "TauPoly":
        return TauPoly(self.a - other.a, self.b - other.b, self.c - other.c)

    def __neg__(self) -> "TauPoly":
        return TauPoly(-self.a, -self.b, -self.c)

    @property
    def is_identically_zero(self) -> bool:
        return self.a == 0.0 and self.b == 0.0 and self.c == 0.0


@dataclass(frozen=True)
class TauConstraint:
    """One selection-event condition: ``poly(tau) relation 0``.

    ``origin`` tags where the condition came from (e.g. ``"gc:augment"``,
    ``"th:local"``, ``"seed:max"``) so tracking bugs can be attributed.
    """

    poly: TauPoly
    relation: str
    origin: str = ""

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        if not all(math.isfinite(v) for v in self.poly):
            raise ValueError(f"non-finite constraint coefficients ({self.origin})")

    def satisfied_at(self, tau: float, slack: float = 0.0) -> bool:
        """Whether the constraint holds at ``tau``, allowing ``slack`` of violation."""
        v = self.poly(tau)
        if self.relation in ("<=", "<"):
            return v <= slack
        return v >= -slack


@dataclass(frozen=True)
class TruncationSet:
    """Finite union of disjoint intervals of ``tau`` within ``(0, inf)``.

    Intervals are stored closed (open/strict boundaries are widened; they
    carry no probability mass). The empty set is representable so partial
    results can be inspected, but a finished selection event must contain
    the observed statistic and therefore be nonempty.
    """

    intervals: tuple[tuple[float, float], ...]

    @staticmethod
    def full() -> "TruncationSet":
        return TruncationSet(((0.0, INF),))

    @staticmethod
    def empty() -> "TruncationSet":
        return TruncationSet(())

    @staticmethod
    def from_intervals(pairs: Iterable[tuple[float, float]],
                       eps: float = DEFAULT_EPS) -> "TruncationSet":
        """Normalize raw ``(lo, hi)`` pairs: clip to [0, inf), sort, merge.

        Pairs narrower than ``eps`` are dropped; gaps narrower than ``eps``
        are fused so float noise cannot produce sliver intervals.
        """
        clipped = []
        for lo, hi in pairs:
            lo = max(lo, 0.0)
            if hi - lo <= eps and hi != INF:
                continue
            clipped.append((lo, hi))
        clipped.sort()
        merged: list[list[float]] = []
        for lo, hi in clipped:
            if merged and lo <= merged[-1][1] + eps:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        return TruncationSet(tuple((lo, hi) for lo, hi in merged))

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def measure(self) -> float:
        return sum(hi - lo for lo, hi in self.intervals)

    def contains(self, tau: float, eps: float = 0.0) -> bool:
        return any(lo - eps <= tau <= hi + eps for lo, hi in self.intervals)

    def to_json(self) -> list[list]:
        return [[float(lo), "inf" if hi == INF else float(hi)]
                for lo, hi in self.intervals]

    @staticmethod
    def from_json(data: Sequence[Sequence]) -> "TruncationSet":
        return TruncationSet(tuple(
            (float(lo), INF if hi == "inf" else float(hi)) for lo, hi in data))


def solve_constraint(constraint: TauConstraint,
                     eps: float = DEFAULT_EPS) -> TruncationSet:
    """Exact solution set of one constraint over ``(0, inf)``.

    Degenerate coefficients are collapsed (|a| < eps -> linear; |a|,|b| < eps
    -> constant). A constant constraint that is violated raises
    :class:`TrackingBugError` because the observed statistic satisfies every
    recorded constraint by construction; a nonconstant constraint may
    legitimately have an empty solution set only through caller error, so the
    empty set is returned for the caller to diagnose against the observed tau.
    """
    poly, rel = constraint.poly, constraint.relation
    if rel in (">=", ">"):
        poly = -poly
    a, b, c = poly

    if abs(a) < eps and abs(b) < eps:
        if c <= eps:
            return TruncationSet.full()
        raise TrackingBugError(
            f"constant constraint violated by {c:.3e}", constraint.origin)

    if abs(a) < eps:
        root = -c / b
        if b > 0:
            return (TruncationSet.from_intervals([(0.0, root)], eps)
                    if root > 0 else TruncationSet.empty())
        return TruncationSet.from_intervals([(max(root, 0.0), INF)], eps)

    disc = b * b - 4.0 * a * c
    if disc <= 0.0:
        # no real roots: sign of q is the sign of a everywhere (touch points
        # are measure-zero and ignored)
        return TruncationSet.empty() if a > 0 else TruncationSet.full()

    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b)) if b != 0.0 else 0.5 * sq
    r1, r2 = q / a, (c / q if q != 0.0 else -b / (2.0 * a))
    lo, hi = (r1, r2) if r1 <= r2 else (r2, r1)
    if a > 0:
        return TruncationSet.from_intervals([(lo, hi)], eps)
    return TruncationSet.from_intervals([(0.0, lo), (hi, INF)], eps)


def intersect(sets: Iterable[TruncationSet],
              eps: float = DEFAULT_EPS) -> TruncationSet:
    """Intersection of truncation sets (identity element: all of ``(0, inf)``)."""
    result = TruncationSet.full()
    for other in sets:
        result = _intersect_pair(result, other, eps)
        if result.is_empty:
            break
    return result


def _intersect_pair(s1: TruncationSet, s2: TruncationSet,
                    eps: float) -> TruncationSet:
    out = []
    i = j = 0
    a, b = s1.intervals, s2.intervals
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi >= lo:
            out.append((lo, hi))
        if a[i][1] <= b[j][1]:
            i += 1
        else:
            j += 1
    return TruncationSet.from_intervals(out, eps)


def reduce_quadratic_form(a_terms, b, c, z, y) -> TauPoly:
    """Restrict ``x'Ax + b'x + c`` to the line ``x = z + tau*y``.

    ``A`` is never materialized: it is passed as a list of structural terms,
    each either ``("outer", s, u, v)`` for ``s * u v'`` (u, v dense vectors)
    or ``("eye", s)`` for ``s * I``. ``b`` may be None or a dense vector.
    Returns the coefficients ``(y'Ay, z'Ay + y'Az + b'y, z'Az + b'z + c)``.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    qa = 0.0
    qb = 0.0
    qc = float(c)
    for term in a_terms:
        kind = term[0]
        if kind == "outer":
            _, s, u, v = term
            uy, uz = float(u @ y), float(u @ z)
            vy, vz = float(v @ y), float(v @ z)
            qa += s * uy * vy
            qb += s * (uz * vy + uy * vz)
            qc += s * uz * vz
        elif kind == "eye":
            s = term[1]
            qa += s * float(y @ y)
            qb += s * 2.0 * float(z @ y)
            qc += s * float(z @ z)
        else:
            raise ValueError(f"unknown structural term kind {kind!r}")
    if b is not None:
        bv = np.asarray(b, dtype=float)
        qb += float(bv @ y)
        qc += float(bv @ z)
    return TauPoly(qa, qb, qc)


def solve_all(constraints: Iterable[TauConstraint], tau_hat: float,
              eps: float = DEFAULT_EPS,
              slack: float = 1e-8) -> TruncationSet:
    """Solve and intersect a batch of constraints, checking each at ``tau_hat``.

    Every recorded constraint must hold at the observed statistic; a violation
    beyond ``slack`` (or a final set excluding ``tau_hat``) is a tracking bug
    and is reported with the offending origin tag.
    """
    result = TruncationSet.full()
    for con in constraints:
        if not con.satisfied_at(tau_hat, slack=slack * _scale(con.poly)):
            raise TrackingBugError(
                f"recorded constraint violated at tau={tau_hat:.6g} "
                f"(value {con.poly(tau_hat):.3e})", con.origin)
        result = _intersect_pair(result, solve_constraint(con, eps), eps)
        if not result.contains(tau_hat, eps=slack * max(1.0, abs(tau_hat))):
            raise TrackingBugError(
                f"truncation set excludes tau={tau_hat:.6g} after constraint",
                con.origin)
    return result


def _scale(poly: TauPoly) -> float:
    return max(1.0, abs(poly.a), abs(poly.b), abs(poly.c))
