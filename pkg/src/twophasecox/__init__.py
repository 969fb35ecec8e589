"""Cox prediction models with a covariate measured only in a subsample."""

from .cox import (CoxFit, CvResult, FitConfig, PenaltySpec, SeparationWarning, cross_validate,
                  fit_adaptive_lasso, fit_cox, fit_penalized_cox, lambda_max, lambda_path,
                  partial_loglik)
from .methods import (METHODS, DomainKnowledge, FitError, FittedMethod, MethodConfig,
                      TwoPhaseDataset, fit_complete_case, fit_expert_guided, fit_method,
                      fit_mi_bartlett, fit_mi_wood, fit_naive_imputation, select_variables)
from .metrics import (MetricReport, brier_score, c_index, calibration_slope,
                      integrated_brier_score, mcc, risk_stratify)
from .survival import (BreslowBaseline, Dataset, KaplanMeierCurve, SurvivalRecord,
                       breslow_baseline, kaplan_meier, log_rank_test, pairwise_log_rank,
                       read_survival_csv, write_survival_csv)

__version__ = "0.1.0"
