"""Penalised GLMs with calibrated per-feature prior effects, combined by stacking."""

from .calibration import (CalibratedSource, CumsumDesign, PriorEffects,
                          build_cumsum_design, calibrate_exponential,
                          calibrate_isotonic, filter_source, rescale_prior)
from .folds import FoldPlan, make_fold_plan
from .glm import (Dataset, Family, deviance_residuals, intercept_only_mu,
                  link_inverse, mean_deviance)
from .numerics import (CorrelationSpec, RngStream, cholesky_upper,
                       mvnormal_sample, standardize_columns)
from .simulation import (ExternalSimConfig, InternalSimConfig, SimOutput,
                         concordance_index, relative_test_loss, run_replicate,
                         simulate_external, simulate_internal)
from .solver import (CvFit, PathFit, PenaltySpec, cv_fit, fit_path,
                     predict_linear, soft_threshold)
from .stacking import (MetaDesign, StackConfig, StackedModel, build_meta_design,
                       fit_simultaneous_stack, fit_standard_stack,
                       fit_transfer_model, load_model, predict, save_model)
from .wilcoxon import wilcoxon_signed_rank_one_sided

__version__ = "0.1.0"
