"""Small-ball probabilities of mixed fractional Brownian motion with a trend.

The package splits a trend ``g`` between the Wiener and the fractional part
of ``W + B^H`` (``H < 1/2``) by solving a Fredholm equation of the second
kind, turns the split into lower and upper bounds for
``P(|W + B^H + g| <= eps f on [0, T])``, and checks everything against exact
Gaussian simulation.
"""

__version__ = "0.1.0"

from .bounds import BoundsReport, UpperBoundCertificate, bounds_report, certificate, lower_bound, smooth_h
from .errors import *  # noqa: F401,F403
from .fractional import K_0, K_T, K_star_0, K_star_T, OperatorConstants, constants, rl_left, rl_right
from .grid import (
    FunctionSpec,
    GridFunction,
    HurstIndex,
    TimeGrid,
    l2_inner,
    l2_norm,
    make_grid,
    sample,
)
from .kernel import KernelMatrix, TrendSplit, assemble, kappa, kappa_oracle, oracle_minimize, solve_split
from .simulate import (
    MCEstimate,
    PathBatch,
    gen_fbm,
    gen_mixed,
    girsanov_consistency,
    integration_by_parts_check,
    mc_small_ball,
    novikov_identity_check,
)
from .asymptotics import ScalingFit, fit_scaling, sandwich_scaling_report
