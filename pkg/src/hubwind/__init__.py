"""Hub-height wind speed estimation at unmonitored sites.

Two stages: 10 m station winds are extrapolated vertically with a penalized
additive model, then interpolated in space with a replicated Matern-1
Gaussian process whose observation noise carries the extrapolation error.
"""

from hubwind.core import (
    GeoLocation,
    HeightLevel,
    TimeStamp,
    WindSample,
    direction_components,
    euclidean_distance,
    square_back,
    sqrt_transform,
)
from hubwind.distrib import (
    EmpiricalCdf,
    VerticalProfile,
    WeibullParams,
    build_empirical_cdf,
    densify_profile,
    gwa_mean_at_height,
    mean_sqrt_wind,
    quantile_map,
    weibull_cdf,
    weibull_quantile,
)

__version__ = "0.1.0"
