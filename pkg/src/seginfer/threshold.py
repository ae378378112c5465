"""Threshold segmentation with selection-event recording.

Two algorithms: a global threshold chosen by maximizing the between-region
variance over the 256 8-bit candidates, and a per-pixel local threshold that
compares each pixel against the mean of its square window divided by theta.
Both record every data-dependent choice as linear/quadratic conditions that
can be restricted to a line through the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, SegmentationError
from .events import TauConstraint, TauPoly, TruncationSet, solve_all
from .images import Image, SegmentationResult


# ---------------------------------------------------------------------------
# local (window-mean) thresholding

@dataclass(frozen=True)
class LocalThresholdParams:
    """Square window half-size and threshold divisor theta.

    A pixel joins the object region iff ``theta * x_p >= mean(window)``.
    ``omit_theta_in_event`` reproduces a published event form that drops
    theta from the recorded inequalities; it deliberately mismatches the
    classification whenever theta != 1 and exists only for comparison.
    """

    half_width: int
    theta: float = 1.0
    omit_theta_in_event: bool = False

    def __post_init__(self):
        if self.half_width < 1:
            raise InputError("window half-width must be >= 1")
        if not self.theta > 0:
            raise InputError("theta must be positive")


def _window_means(arr2d: np.ndarray, half: int) -> tuple[np.ndarray, np.ndarray]:
    """Clipped-window sums/counts for every pixel via an integral image."""
    h, w = arr2d.shape
    integ = np.zeros((h + 1, w + 1))
    integ[1:, 1:] = np.cumsum(np.cumsum(arr2d, axis=0), axis=1)
    r = np.arange(h)
    c = np.arange(w)
    r0 = np.maximum(r - half, 0)
    r1 = np.minimum(r + half, h - 1) + 1
    c0 = np.maximum(c - half, 0)
    c1 = np.minimum(c + half, w - 1) + 1
    sums = (integ[np.ix_(r1, c1)] - integ[np.ix_(r0, c1)]
            - integ[np.ix_(r1, c0)] + integ[np.ix_(r0, c0)])
    counts = np.outer(r1 - r0, c1 - c0)
    return sums.reshape(-1), counts.reshape(-1).astype(float)


@dataclass(frozen=True)
class LocalThresholdEvent:
    """Recorded classification directions, one linear condition per pixel."""

    signs: np.ndarray          # +1 object, -1 background
    width: int
    height: int
    params: LocalThresholdParams

    def functional(self, v: np.ndarray, for_event: bool = True) -> np.ndarray:
        """theta*v_p - window_mean_p(v) for every pixel (linear in v)."""
        sums, counts = _window_means(
            v.reshape(self.height, self.width), self.params.half_width)
        theta = self.params.theta
        if for_event and self.params.omit_theta_in_event:
            theta = 1.0
        return theta * v - sums / counts

    def constraints_on_line(self, z: np.ndarray, y: np.ndarray) -> list[TauConstraint]:
        fz = self.functional(z)
        fy = self.functional(y)
        s = self.signs
        return [TauConstraint(TauPoly(0.0, float(s[p] * fy[p]), float(s[p] * fz[p])),
                              ">=", origin="th:local")
                for p in range(s.size)]

    def signature(self) -> tuple:
        return ("th-local", tuple(int(v) for v in self.signs))


def local_threshold_segment(img: Image, params: LocalThresholdParams
                            ) -> tuple[SegmentationResult, LocalThresholdEvent]:
    """Classify every pixel against its window mean; ties go to the object."""
    sums, counts = _window_means(img.to_2d(), params.half_width)
    obj = params.theta * img.pixels >= sums / counts
    signs = np.where(obj, 1, -1)
    result = SegmentationResult(
        object_idx=np.flatnonzero(obj),
        background_idx=np.flatnonzero(~obj),
        algo="th-local",
        params={"half_width": params.half_width, "theta": params.theta},
    )
    event = LocalThresholdEvent(signs=signs, width=img.width,
                                height=img.height, params=params)
    return result, event


# ---------------------------------------------------------------------------
# global (between-region variance) thresholding

_N_LEVELS = 256


@dataclass(frozen=True)
class GlobalThresholdEvent:
    """Chosen threshold plus everything that pins the selection.

    Holds the 255 variance-dominance conditions implicitly (they are rebuilt
    from the frozen per-threshold memberships), the pixel-intensity order,
    and the per-pixel integer brackets that freeze those memberships.
    ``scale`` maps pixel units to the 0..255 candidate grid.
    """

    t_star: int
    order: np.ndarray          # pixel ids sorted by intensity, stable
    cells: np.ndarray          # floor(scale*x) clipped to [-1, 255]
    scale: float
    # brackets the observed pixel sits exactly on (quantized data); such a
    # constraint would pin the statistic to a boundary point, and the set of
    # images producing it has measure zero under the continuous noise model,
    # so it is dropped rather than recorded
    tight_lo: np.ndarray = None
    tight_hi: np.ndarray = None

    def _splits(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Prefix machinery: counts below t and sums of v below t, per t."""
        sorted_cells = self.cells[self.order]
        pref = np.concatenate(([0.0], np.cumsum(v[self.order])))
        t_grid = np.arange(_N_LEVELS)
        n_lo = np.searchsorted(sorted_cells, t_grid, side="left")
        return t_grid, n_lo, pref[n_lo]

    def form_polys(self, z: np.ndarray, y: np.ndarray) -> list[TauPoly]:
        """Unscaled between-region quadratic, per threshold, on the line."""
        n = self.cells.size
        _, n_lo, lo_z = self._splits(z)
        _, _, lo_y = self._splits(y)
        tot_z, tot_y = float(z.sum()), float(y.sum())
        polys = []
        for t in range(_N_LEVELS):
            nl = int(n_lo[t])
            nh = n - nl
            if nl == 0 or nh == 0:
                polys.append(TauPoly(0.0, 0.0, 0.0))
                continue
            lz, ly = float(lo_z[t]), float(lo_y[t])
            hz, hy = tot_z - lz, tot_y - ly
            alpha, beta = nl / nh, nh / nl
            polys.append(TauPoly(
                alpha * hy * hy + beta * ly * ly - 2.0 * hy * ly,
                2.0 * (alpha * hz * hy + beta * lz * ly) - 2.0 * (hz * ly + hy * lz),
                alpha * hz * hz + beta * lz * lz - 2.0 * hz * lz,
            ))
        return polys

    def constraints_on_line(self, z: np.ndarray, y: np.ndarray) -> list[TauConstraint]:
        cons = []
        # variance dominance at the chosen threshold
        forms = self.form_polys(z, y)
        star = forms[self.t_star]
        for t in range(_N_LEVELS):
            if t == self.t_star:
                continue
            cons.append(TauConstraint(star - forms[t], ">=", origin="th:otsu-bet"))
        # intensity order
        zo, yo = z[self.order], y[self.order]
        for i in range(self.order.size - 1):
            cons.append(TauConstraint(
                TauPoly(0.0, float(yo[i] - yo[i + 1]), float(zo[i] - zo[i + 1])),
                "<=", origin="th:otsu-order"))
        # integer brackets freezing every threshold membership
        inv = 1.0 / self.scale
        tight_lo = (self.tight_lo if self.tight_lo is not None
                    else np.zeros(self.cells.size, dtype=bool))
        tight_hi = (self.tight_hi if self.tight_hi is not None
                    else np.zeros(self.cells.size, dtype=bool))
        for p in range(self.cells.size):
            cell = int(self.cells[p])
            zp, yp = float(z[p]), float(y[p])
            if cell >= 0 and not tight_lo[p]:
                cons.append(TauConstraint(
                    TauPoly(0.0, yp, zp - cell * inv), ">=", origin="th:otsu-cell"))
            if cell <= _N_LEVELS - 2 and not tight_hi[p]:
                cons.append(TauConstraint(
                    TauPoly(0.0, yp, zp - (cell + 1) * inv), "<", origin="th:otsu-cell"))
        return cons

    def signature(self) -> tuple:
        return ("th-global", self.t_star,
                tuple(int(v) for v in self.order),
                tuple(int(v) for v in self.cells))


def _cells_of(scaled: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(scaled), -1, _N_LEVELS - 1).astype(int)


def between_class_values(x: np.ndarray, scale: float) -> np.ndarray:
    """n_lo*n_hi*(mean_hi - mean_lo)^2 for each candidate threshold.

    This is the between-region variance up to the constant 1/n^2, which does
    not move the argmax and keeps the recorded dominance conditions in the
    unscaled quadratic form.
    """
    scaled = x * scale
    cells = _cells_of(scaled)
    order = np.argsort(scaled, kind="stable")
    sorted_cells = cells[order]
    pref = np.concatenate(([0.0], np.cumsum(x[order] * scale)))
    tot = pref[-1]
    n = x.size
    t_grid = np.arange(_N_LEVELS)
    n_lo = np.searchsorted(sorted_cells, t_grid, side="left")
    values = np.zeros(_N_LEVELS)
    valid = (n_lo > 0) & (n_lo < n)
    nl = n_lo[valid].astype(float)
    nh = n - nl
    s_lo = pref[n_lo[valid]]
    s_hi = tot - s_lo
    values[valid] = nl * nh * (s_hi / nh - s_lo / nl) ** 2
    return values


def otsu_segment(img: Image) -> tuple[SegmentationResult, GlobalThresholdEvent]:
    """Global threshold maximizing the between-region variance.

    Normalized images (range within [0, 1]) are examined on the 0..255 grid
    by scaling up; the recorded conditions stay in original pixel units.
    Ties among maximizers resolve to the smallest threshold; the threshold's
    upper side is the object region.
    """
    x = img.pixels
    scale = 255.0 if (x.min() >= 0.0 and x.max() <= 1.0) else 1.0
    values = between_class_values(x, scale)
    if not np.any(values > 0.0):
        raise SegmentationError("no threshold splits the image into two regions")
    t_star = int(np.argmax(values))
    scaled = x * scale
    cells = _cells_of(scaled)
    obj = cells >= t_star  # identical to scaled >= t_star on the integer grid
    result = SegmentationResult(
        object_idx=np.flatnonzero(obj),
        background_idx=np.flatnonzero(~obj),
        algo="th-global",
        params={"t_star": t_star, "scale": scale},
    )
    qeps = 1e-9
    event = GlobalThresholdEvent(
        t_star=t_star,
        order=np.argsort(scaled, kind="stable"),
        cells=cells,
        scale=scale,
        tight_lo=np.abs(scaled - cells) <= qeps,
        tight_hi=np.abs(cells + 1 - scaled) <= qeps,
    )
    return result, event


def build_th_event_on_line(event, z: np.ndarray, y: np.ndarray,
                           tau_hat: float, eps: float = 1e-12,
                           slack: float = 1e-8) -> TruncationSet:
    """Reduce a threshold event to the line and intersect its conditions."""
    return solve_all(event.constraints_on_line(z, y), tau_hat,
                     eps=eps, slack=slack)
