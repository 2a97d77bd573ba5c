"""Multitype Gibbs point process models for tissue cell maps.

Fits log-linear Gibbs models with Fiksel, Strauss and hardcore pair
interactions to replicated marked point patterns by maximum
pseudolikelihood, and provides the supporting pieces: polygonal windows,
adaptive kernel intensities, inhomogeneous cross K/L functions, residual
diagnostics and a Metropolis-Hastings sampler.
"""
__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    PolygonalWindow,
    TileGrid,
    convex_hull,
    erode_border,
    intersect_windows,
    ripley_rasson_window,
    tile_grid,
)
from .patterns import (  # noqa: E402
    ClinicalCovariates,
    Cohort,
    MarkSet,
    MarkedPointPattern,
    load_covariates,
    load_manifest,
    load_pattern,
    save_pattern,
)
from .intensity import IntensitySurface, adaptive_bandwidths, estimate_intensity, mark_intensities  # noqa: E402
from .interactions import InteractionKind, InteractionSpec, estimate_hardcore, fiksel_phi  # noqa: E402
from .fitting import FitConfig, FittedModel, fit_cohort, irls_fit, profile_pl  # noqa: E402
from .summaries import k_inhom_cross, l_from_k, pool_functions  # noqa: E402
from .diagnostics import comparison_table, fit_menu, model_menu, residual_total, rmse  # noqa: E402
from .simulation import GibbsModel, SimulationConfig, mh_sample, simulate_cohort  # noqa: E402
