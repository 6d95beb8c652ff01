"""The two pruning objectives: retained-filter fraction and the
intensity-compensated feature-map reconstruction error of a two-layer
sub-network.

The evaluation context caches the unmasked first-layer output so that each
mask evaluation only zeroes channels and forwards the tail; it never
re-runs the first conv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import ArgumentError, MaskError, ShapeError
from .network import FilterMask, SubNetwork, subnetwork_tail_forward

ALPHA_MODES = ("optimized", "fixed_one")


@dataclass(frozen=True)
class ObjectiveVector:
    filter_pct: float
    error: float

    def __post_init__(self):
        object.__setattr__(self, "filter_pct", float(self.filter_pct))
        object.__setattr__(self, "error", float(self.error))

    def as_tuple(self) -> tuple[float, float]:
        return (self.filter_pct, self.error)


@dataclass
class EvaluationContext:
    sub: SubNetwork
    map_l: np.ndarray
    reference: np.ndarray  # unmasked sub-network output on map_l
    first_layer_full_output: np.ndarray  # unmasked first-conv output on map_l
    alpha_mode: str = "optimized"

    @classmethod
    def build(
        cls, sub: SubNetwork, map_l: np.ndarray, alpha_mode: str = "optimized"
    ) -> "EvaluationContext":
        if alpha_mode not in ALPHA_MODES:
            raise ArgumentError(f"alpha_mode must be one of {ALPHA_MODES}")
        first_out = T.conv2d_forward(map_l, sub.first.params)
        reference = subnetwork_tail_forward(sub, first_out)
        return cls(sub, map_l, reference, first_out, alpha_mode)

    @property
    def num_filters(self) -> int:
        return self.sub.first.params.out_channels


def filter_pct(mask: FilterMask) -> float:
    """Fraction of retained filters, ||M||_0 / #(M)."""
    return float(mask.bits.sum()) / mask.bits.shape[0]


def optimal_alpha(reference: np.ndarray, approx: np.ndarray) -> float:
    """Closed-form minimizer of ||reference - a*approx||_2 over scalar a.

    The 1-D least-squares solution <ref, approx> / <approx, approx>;
    returns 0 for an all-zero approx.
    """
    if tuple(reference.shape) != tuple(approx.shape):
        raise ShapeError(
            f"alpha shapes {tuple(reference.shape)} vs {tuple(approx.shape)}"
        )
    denom = T.inner_product(approx, approx)
    if denom == 0.0:
        return 0.0
    return T.inner_product(reference, approx) / denom


def reconstruction_error(ctx: EvaluationContext, approx: np.ndarray) -> float:
    if tuple(approx.shape) != tuple(ctx.reference.shape):
        raise ShapeError(
            f"approx shape {tuple(approx.shape)} != reference "
            f"{tuple(ctx.reference.shape)}"
        )
    if ctx.alpha_mode == "optimized":
        a = optimal_alpha(ctx.reference, approx)
    else:
        a = 1.0
    return T.frobenius_norm(ctx.reference - a * approx)


def evaluate_individual(ctx: EvaluationContext, mask: FilterMask) -> ObjectiveVector:
    """Objective vector (filter_pct, error) for one mask, via the fast path:
    zero the pruned channels of the cached first-layer output and forward
    through interstitial + second layer only."""
    if mask.bits.shape[0] != ctx.num_filters:
        raise MaskError(
            f"mask length {mask.bits.shape[0]} != {ctx.num_filters} filters"
        )
    masked_first = (
        ctx.first_layer_full_output * mask.bits.astype(np.float64)[None, :, None, None]
    )
    approx = subnetwork_tail_forward(ctx.sub, masked_first)
    return ObjectiveVector(filter_pct(mask), reconstruction_error(ctx, approx))
