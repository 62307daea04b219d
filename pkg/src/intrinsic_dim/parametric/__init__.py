"""Estimators built on dimension-dependent distributions of distances, counts and angles."""
from .angles import danco_estimate, ess_estimate
from .counting import corrint_estimate, doubling_dp, packing_dimension, wodcap_estimate
from .distances import (NeighborhoodSpec, gride_estimate, idea_estimate, idea_jackknife, mind_ml,
                        mle_estimate, mle_local, pettis_estimate, tle_estimate, twonn_estimate,
                        volume_growth_local)
from ..report import aggregate

__all__ = [
    "NeighborhoodSpec", "aggregate", "corrint_estimate", "danco_estimate", "doubling_dp", "ess_estimate",
    "gride_estimate", "idea_estimate", "idea_jackknife", "mind_ml", "mle_estimate", "mle_local",
    "packing_dimension", "pettis_estimate", "tle_estimate", "twonn_estimate", "volume_growth_local",
    "wodcap_estimate",
]
