"""End-to-end conditional inference for one segmentation result.

Pipeline: segment the (optionally filtered) image, form the mean-difference
contrast, decompose the data into the statistic direction and its
complement, collect the algorithm's selection event along that line,
intersect it into a truncation set, and evaluate the selective and naive
p-values.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from . import graphcut, threshold
from .errors import InputError, SegmentationError
from .events import TruncationSet, solve_all
from .images import Image, LinearPreprocess, NoiseModel, SegmentationResult
from .truncnorm import selective_pvalue

ALGORITHMS = ("gc", "th-global", "th-local")


@dataclass(frozen=True)
class Contrast:
    """Mean-difference contrast eta for a two-region partition.

    eta carries the observed sign, so eta'x is the nonnegative statistic
    |mean(object) - mean(background)|.
    """

    object_idx: np.ndarray
    background_idx: np.ndarray
    sign: int
    n: int

    @staticmethod
    def from_result(result: SegmentationResult, pixels: np.ndarray) -> "Contrast":
        obj, bkg = result.object_idx, result.background_idx
        if obj.size == 0 or bkg.size == 0:
            raise SegmentationError(
                f"degenerate partition: |object|={obj.size}, |background|={bkg.size}")
        diff = pixels[obj].mean() - pixels[bkg].mean()
        return Contrast(obj, bkg, 1 if diff >= 0 else -1, pixels.size)

    def eta(self) -> np.ndarray:
        v = np.zeros(self.n)
        v[self.object_idx] = self.sign / self.object_idx.size
        v[self.background_idx] = -self.sign / self.background_idx.size
        return v


def decompose(x: np.ndarray, contrast: Contrast, cov_mul
              ) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Split x into the statistic direction and its independent complement.

    ``cov_mul`` applies the (effective) noise covariance to a vector.
    Returns ``(y, z, delta_hat, eta_sigma_eta)`` with ``x = z + delta_hat*y``,
    ``eta'y = 1`` and ``eta'z = 0``.
    """
    eta = contrast.eta()
    sigma_eta = cov_mul(eta)
    ese = float(eta @ sigma_eta)
    if not ese > 0.0:
        raise InputError("eta'Sigma,eta must be positive")
    y = sigma_eta / ese
    delta_hat = float(eta @ x)
    z = x - delta_hat * y
    return y, z, delta_hat, ese


def naive_pvalue(delta_hat: float, eta_sigma_eta: float) -> float:
    """Two-sided Gaussian tail ignoring the selection event."""
    if not eta_sigma_eta > 0.0:
        raise InputError("eta_sigma_eta must be positive")
    return float(erfc(delta_hat / math.sqrt(2.0 * eta_sigma_eta)))


@dataclass
class InferenceReport:
    """Everything a caller needs to interpret (and reproduce) one test."""

    delta_hat: float
    eta_sigma_eta: float
    selective_p: float
    naive_p: float
    intervals: list
    n_constraints: int
    algo: str
    params: dict
    seed_pixels: dict | None
    constraint_counts: dict = field(default_factory=dict)
    n_object: int = 0
    n_background: int = 0
    boundary_mode: str = "replicate"
    preprocess: list = field(default_factory=list)
    elapsed_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "delta_hat": self.delta_hat,
            "eta_sigma_eta": self.eta_sigma_eta,
            "selective_p": self.selective_p,
            "naive_p": self.naive_p,
            "intervals": self.intervals,
            "n_constraints": self.n_constraints,
            "algo": self.algo,
            "params": self.params,
            "seed_pixels": self.seed_pixels,
            "constraint_counts": self.constraint_counts,
            "n_object": self.n_object,
            "n_background": self.n_background,
            "boundary_mode": self.boundary_mode,
            "preprocess": self.preprocess,
            "elapsed_s": self.elapsed_s,
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


@dataclass
class LineDetails:
    """Internals of one run, for oracles and diagnostics."""

    processed: Image
    result: SegmentationResult
    contrast: Contrast
    y: np.ndarray
    z: np.ndarray
    tau_hat: float
    eta_sigma_eta: float
    truncation: TruncationSet
    signature: tuple


def _segment(img: Image, algo: str, params):
    if algo == "gc":
        raise AssertionError("gc handled separately")  # pragma: no cover
    if algo == "th-local":
        return threshold.local_threshold_segment(img, params)
    if algo == "th-global":
        return threshold.otsu_segment(img)
    raise InputError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")


def run_inference(img: Image, algo: str, params, noise: NoiseModel,
                  preprocess: LinearPreprocess | None = None,
                  eps: float = 1e-12, slack: float = 1e-8,
                  want_details: bool = False):
    """Segment an image and test the object/background mean difference.

    Returns an :class:`InferenceReport`; with ``want_details`` a
    ``(report, LineDetails)`` pair. ``params`` is a
    :class:`~seginfer.threshold.LocalThresholdParams`,
    :class:`~seginfer.graphcut.GraphCutParams`, or None for ``th-global``.
    """
    t0 = time.perf_counter()
    if preprocess is None:
        preprocess = LinearPreprocess.identity()
    processed = preprocess.apply(img)
    x = processed.pixels

    if preprocess.is_identity:
        cov_mul = noise.mul
    else:
        lmat = preprocess.matrix(img.width, img.height)
        lmat_t = lmat.T.tocsr()

        def cov_mul(v, _l=lmat, _lt=lmat_t, _noise=noise):
            return _l @ _noise.mul(_lt @ v)

    if algo == "gc":
        graph = graphcut.build_graph(processed, params, noise_for_graph(noise))
        numeric = graphcut.run_flow(graph, graphcut._numeric_caps(graph), 0.0)
        result = graphcut._result_from_mask(graph, numeric.obj_mask)
    else:
        result, event = _segment(processed, algo, params)

    contrast = Contrast.from_result(result, x)
    y, z, delta_hat, ese = decompose(x, contrast, cov_mul)

    if algo == "gc":
        result, trace = graphcut.trace_segment(graph, z, y, delta_hat,
                                               expected=numeric)
        constraints = trace.constraints
        signature = ("gc", graph.obj_seeds, graph.bkg_seeds,
                     tuple(graph.pair_pieces), graph.kmax_node,
                     tuple(numeric.decisions),
                     tuple(bool(b) for b in numeric.obj_mask))
    else:
        constraints = event.constraints_on_line(z, y)
        signature = event.signature()

    truncation = solve_all(constraints, delta_hat, eps=eps, slack=slack)
    counts: dict[str, int] = {}
    for con in constraints:
        counts[con.origin] = counts.get(con.origin, 0) + 1

    report = InferenceReport(
        delta_hat=delta_hat,
        eta_sigma_eta=ese,
        selective_p=selective_pvalue(delta_hat, ese, truncation, eps=slack),
        naive_p=naive_pvalue(delta_hat, ese),
        intervals=truncation.to_json(),
        n_constraints=len(constraints),
        algo=algo,
        params=_params_dict(algo, params),
        seed_pixels=result.seeds,
        constraint_counts=counts,
        n_object=int(result.object_idx.size),
        n_background=int(result.background_idx.size),
        boundary_mode=preprocess.boundary,
        preprocess=preprocess.describe(),
        elapsed_s=time.perf_counter() - t0,
    )
    if not want_details:
        return report
    details = LineDetails(processed=processed, result=result, contrast=contrast,
                          y=y, z=z, tau_hat=delta_hat, eta_sigma_eta=ese,
                          truncation=truncation, signature=signature)
    return report, details


def noise_for_graph(noise: NoiseModel) -> NoiseModel:
    if noise.kind != "isotropic":
        raise InputError("graph-cut segmentation requires an isotropic noise model")
    return noise


def event_signature(img: Image, algo: str, params, noise: NoiseModel) -> tuple:
    """Identify the selection event of a plain run on ``img`` (no inference)."""
    if algo == "gc":
        return graphcut.gc_signature(img, params, noise)
    _, event = _segment(img, algo, params)
    return event.signature()


def _params_dict(algo: str, params) -> dict:
    if algo == "gc":
        return params.to_dict()
    if algo == "th-local":
        return {"half_width": params.half_width, "theta": params.theta}
    return {}
