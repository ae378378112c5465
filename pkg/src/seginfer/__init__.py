"""Selective p-values for individual image segmentation results.

Testing the object/background mean difference after segmenting the same
image inflates the difference (the algorithm adapts to the noise), so naive
Gaussian p-values are wildly anti-conservative. This package conditions the
null distribution on the segmentation event instead: the event is recorded
as quadratic inequalities in the pixels, restricted to the line spanned by
the test statistic, and the p-value comes from a normal distribution
truncated to the event's feasible set.
"""

from .errors import (DegenerateEventError, InputError, SegInferError,
                     SegmentationError, TrackingBugError)
from .events import (TauConstraint, TauPoly, TruncationSet, intersect,
                     reduce_quadratic_form, solve_constraint)
from .graphcut import (AlgorithmTrace, GraphCutParams, SegGraph, build_graph,
                       maxflow_segment, trace_segment)
from .harness import (ExperimentSpec, gen_null_image, gen_signal_image,
                      run_experiment, sample_line_conditional, wilson_interval)
from .images import (Image, LinearPreprocess, NoiseModel, SegmentationResult,
                     estimate_noise, load_image, save_pgm)
from .inference import (Contrast, InferenceReport, decompose, naive_pvalue,
                        run_inference)
from .threshold import (GlobalThresholdEvent, LocalThresholdEvent,
                        LocalThresholdParams, build_th_event_on_line,
                        local_threshold_segment, otsu_segment)
from .truncnorm import TruncatedNormal, selective_pvalue

__version__ = "0.1.0"

__all__ = [
    "AlgorithmTrace", "Contrast", "DegenerateEventError", "ExperimentSpec",
    "GlobalThresholdEvent", "GraphCutParams", "Image", "InferenceReport",
    "InputError", "LinearPreprocess", "LocalThresholdEvent",
    "LocalThresholdParams", "NoiseModel", "SegGraph", "SegInferError",
    "SegmentationError", "SegmentationResult", "TauConstraint", "TauPoly",
    "TrackingBugError", "TruncatedNormal", "TruncationSet", "build_graph",
    "build_th_event_on_line", "decompose", "estimate_noise", "gen_null_image",
    "gen_signal_image", "intersect", "load_image", "local_threshold_segment",
    "maxflow_segment", "naive_pvalue", "otsu_segment",
    "reduce_quadratic_form", "run_experiment", "run_inference",
    "sample_line_conditional", "save_pgm", "selective_pvalue",
    "solve_constraint", "trace_segment", "wilson_interval",
]
