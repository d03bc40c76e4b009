"""Leverage determinants and partial-adjustment estimation on unbalanced firm panels."""
from .adjustment import (AdjustmentReport, RegimeCoefficients, SpeedEstimates, TargetModelParams, adjustment_report,
                         adjustment_speeds, fit_adjustment, recover_targets, test_state_dummies)
from .features import DesignMatrix, build_design, compute_firm_factors, compute_leverage_ratios, derive_rows
from .ipm import ConvergenceError
from .mean_panel import (EstimationError, MeanFit, TestResult, fit_fixed_effects, fit_pooled, fit_random_effects,
                         hausman_test, wald_test)
from .numerics import RandomSource, check_loss, chi_square_sf, empirical_quantile
from .panel_quantreg import PanelQrFit, fit_panel_quantile, fit_tau_grid, predict_conditional_quantile, quantile_at_mean
from .panel_store import DataError, PanelDataset, load_macro_csv, load_panel_csv, validate_and_merge
from .quantreg import QrFit, brute_force_qr, certify_optimality, fit_quantile
from .reporting import CorrelationTable, StudyReport, YearMeansTable, correlation_matrix, yearly_means
from .simulate import DgpConfig, SimulatedPanel, simulate_panel, true_speeds
from .study import StudyConfig, run_study

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
