"""Synthetic data generators and Monte Carlo calibration experiments.

False-positive-rate runs draw object-free images and count how often each
p-value falls below the significance level; true-positive-rate runs plant a
mean-shifted block. Trials get independent seeds from a splittable scheme,
run in a small process pool, and are reduced in trial order so the output
never depends on scheduling.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, SegmentationError
from .events import TruncationSet
from .graphcut import GraphCutParams
from .images import Image, NoiseModel
from .inference import event_signature, run_inference
from .threshold import LocalThresholdParams
from .truncnorm import TruncatedNormal

#: override the worker-pool size (0 or 1 disables the pool)
WORKERS_ENV = "SEGINFER_WORKERS"

#: graph-cut trace recording gets slow beyond this many pixels
GC_SIZE_CAP = 225

CSV_COLUMNS = ["setting", "selective", "naive", "trials",
               "selective_ci_lo", "selective_ci_hi",
               "naive_ci_lo", "naive_ci_hi", "degenerate_count"]


def gen_null_image(n: int, seed, mean: float = 0.5,
                   sigma2: float = 0.5) -> Image:
    """Square i.i.d. normal image with no object; reproducible under seed."""
    side = math.isqrt(n)
    if side * side != n:
        raise InputError(f"n={n} is not a perfect square")
    rng = np.random.default_rng(seed)
    pixels = rng.normal(mean, math.sqrt(sigma2), size=n)
    return Image(pixels, width=side, height=side)


def gen_signal_image(mu_s: float, mu_t: float, sigma: float, seed,
                     size: int = 20, block: int = 10) -> Image:
    """Image whose upper-left block-by-block corner has mean mu_s, rest mu_t."""
    rng = np.random.default_rng(seed)
    mean = np.full((size, size), mu_t)
    mean[:block, :block] = mu_s
    pixels = mean + rng.normal(0.0, sigma, size=(size, size))
    return Image(pixels.reshape(-1), width=size, height=size)


def wilson_interval(successes: int, trials: int,
                    z: float = 1.959963984540054) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials
                         + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class ExperimentSpec:
    """One calibration run: what to simulate and how many times."""

    experiment: str                  # "fpr" or "tpr"
    algo: str = "th-local"
    sizes: tuple[int, ...] = (9, 25, 100)
    mus: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    trials: int = 2000
    alpha: float = 0.05
    seed: int = 0
    # null-image model (fpr)
    null_mean: float = 0.5
    null_sigma2: float = 0.5
    # signal-image model (tpr)
    signal_sigma: float = 0.1
    signal_size: int = 20
    signal_block: int = 10
    mu_t: float = 0.0
    # algorithm parameters
    th_half_width: int = 1
    th_theta: float = 1.0
    gc_sigma: float = 0.1
    gc_lam: float = 1.0
    workers: int | None = None
    allow_large_gc: bool = False

    def __post_init__(self):
        if self.experiment not in ("fpr", "tpr"):
            raise InputError(f"unknown experiment {self.experiment!r}")
        if self.trials < 1:
            raise InputError("trials must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must be in (0, 1)")

    def algo_params(self):
        if self.algo == "th-local":
            return LocalThresholdParams(half_width=self.th_half_width,
                                        theta=self.th_theta)
        if self.algo == "gc":
            return GraphCutParams(sigma=self.gc_sigma, lam=self.gc_lam)
        if self.algo == "th-global":
            return None
        raise InputError(f"unknown algorithm {self.algo!r}")


def _trial(task) -> tuple[float, float, bool]:
    """One Monte Carlo trial; returns (selective_p, naive_p, degenerate)."""
    spec, setting, child = task
    if spec.experiment == "fpr":
        img = gen_null_image(setting, child, mean=spec.null_mean,
                             sigma2=spec.null_sigma2)
        sigma2 = spec.null_sigma2
    else:
        img = gen_signal_image(spec.mu_t + setting, spec.mu_t,
                               spec.signal_sigma, child,
                               size=spec.signal_size, block=spec.signal_block)
        sigma2 = spec.signal_sigma ** 2
    try:
        report = run_inference(img, spec.algo, spec.algo_params(),
                               NoiseModel.isotropic(sigma2))
    except SegmentationError:
        return 1.0, 1.0, True
    return report.selective_p, report.naive_p, False


def _resolve_workers(spec: ExperimentSpec) -> int:
    if spec.workers is not None:
        return max(spec.workers, 0)
    env = os.environ.get(WORKERS_ENV)
    if env is not None:
        return max(int(env), 0)
    return os.cpu_count() or 1


def run_experiment(spec: ExperimentSpec) -> list[dict]:
    """Run every (setting, trial) cell and aggregate rejection rates.

    Rows come back one per setting (image size for fpr, mean shift for tpr)
    with both estimators, Wilson 95% intervals, and the count of degenerate
    trials (counted as non-rejections, never dropped).
    """
    settings = spec.sizes if spec.experiment == "fpr" else spec.mus
    if spec.experiment == "fpr" and spec.algo == "gc" and not spec.allow_large_gc:
        too_big = [n for n in spec.sizes if n > GC_SIZE_CAP]
        if too_big:
            raise InputError(
                f"graph-cut fpr sizes {too_big} exceed the default cap "
                f"{GC_SIZE_CAP}; set allow_large_gc to override")
    children = np.random.SeedSequence(spec.seed).spawn(
        len(settings) * spec.trials)
    tasks = [(spec, setting, children[i * spec.trials + t])
             for i, setting in enumerate(settings)
             for t in range(spec.trials)]
    n_workers = _resolve_workers(spec)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_trial, tasks, chunksize=64))
    else:
        results = [_trial(t) for t in tasks]

    rows = []
    for i, setting in enumerate(settings):
        cell = results[i * spec.trials:(i + 1) * spec.trials]
        sel_rej = sum(1 for s, _, _ in cell if s < spec.alpha)
        nai_rej = sum(1 for _, nv, _ in cell if nv < spec.alpha)
        degen = sum(1 for _, _, d in cell if d)
        s_lo, s_hi = wilson_interval(sel_rej, spec.trials)
        n_lo, n_hi = wilson_interval(nai_rej, spec.trials)
        rows.append({
            "setting": setting,
            "selective": sel_rej / spec.trials,
            "naive": nai_rej / spec.trials,
            "trials": spec.trials,
            "selective_ci_lo": s_lo,
            "selective_ci_hi": s_hi,
            "naive_ci_lo": n_lo,
            "naive_ci_hi": n_hi,
            "degenerate_count": degen,
        })
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# conditional sampling oracle

def sample_line_conditional(img: Image, algo: str, params, noise: NoiseModel,
                            n_accept: int, seed,
                            max_draws: int = 5_000_000
                            ) -> tuple[np.ndarray, TruncatedNormal, int]:
    """Rejection-sample the statistic along the observed line.

    Fixes the complement z of the observed image, draws the statistic from
    its unconditional null law, rebuilds the image on the line, and keeps
    draws whose full re-run reproduces the observed selection event (and
    sign). The kept statistics follow the truncated normal over the
    computed truncation set whenever that set is recorded correctly, which
    is exactly what callers assert.
    """
    _, det = run_inference(img, algo, params, noise, want_details=True)
    rng = np.random.default_rng(seed)
    s = math.sqrt(det.eta_sigma_eta)
    accepted: list[float] = []
    draws = 0
    batch = 512
    while len(accepted) < n_accept and draws < max_draws:
        for delta in rng.normal(0.0, s, size=batch):
            draws += 1
            if delta <= 0.0:
                continue
            candidate = img.with_pixels(det.z + delta * det.y)
            try:
                sig = event_signature(candidate, algo, params, noise)
            except SegmentationError:
                continue
            if sig == det.signature:
                accepted.append(float(delta))
                if len(accepted) >= n_accept:
                    break
    if len(accepted) < n_accept:
        raise RuntimeError(
            f"only {len(accepted)}/{n_accept} draws accepted in {draws} tries")
    tn = TruncatedNormal(0.0, det.eta_sigma_eta, det.truncation)
    return np.asarray(accepted), tn, draws
