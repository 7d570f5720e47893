"""Variational p-means and the ball-averaging scheme for p-harmonious functions."""

from .errors import *  # noqa: F401,F403
from .pmean import (
    Exponent,
    PMeanResult,
    WeightedSample,
    as_exponent,
    compute_pmean,
    pmean_oracle,
    signed_power,
    weighted_median,
)
from .geometry import (
    Annulus,
    BallQuadrature,
    Disk,
    Polygon,
    Rectangle,
    build_ball_quadrature,
    dist_to_boundary,
    domain_from_dict,
    r_eps,
)

__version__ = "0.1.0"
