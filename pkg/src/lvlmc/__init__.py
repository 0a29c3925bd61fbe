"""Riemannian geometry of SPD and correlation matrices with a locally varying
linear model of coregionalization for multivariate geostatistical simulation."""

__version__ = "0.1.0"

from .anamorphosis import (  # noqa: E402
    ALRTransformer,
    Anamorphosis,
    NeighborIndex,
    NormalScoreTransformer,
    alr_inverse,
    alr_transform,
    back_transform,
    local_correlation,
    local_gaussianize,
    normal_score,
)
from .corr import (  # noqa: E402
    CorrMean,
    dist_corr,
    fiber_optimize,
    frechet_mean_corr_weighted,
    geodesic_corr,
    pairwise_dist_corr,
    project_to_corr,
)
from .exceptions import (  # noqa: E402
    ConvergenceError,
    LVLMCError,
    NumericalError,
    ValidationError,
)
from .kmeans import ClusterState, CorrKMeans, cluster_objective, kmeans_corr  # noqa: E402
from .matfun import (  # noqa: E402
    cholesky_lower,
    mat_exp_sym,
    mat_log_spd,
    sym_eig,
)
from .pipeline import (  # noqa: E402
    CorrelationField,
    GridSpec,
    SampleTable,
    accuracy_plot,
    back_transform_grid,
    decorrelate,
    estimate_local_correlations,
    interpolate_correlations,
    recorrelate,
)
from .simulation import SimulationEnsemble, simulate_factors  # noqa: E402
from .spd import SPDMean, dist_spd, exp_map, frechet_mean_weighted, geodesic, log_map  # noqa: E402
from .variography import (  # noqa: E402
    VariogramModel,
    experimental_variogram,
    fit_exponential,
    ordinary_kriging_weights,
)
from .workflow import export_ellipses, run_pipeline  # noqa: E402
