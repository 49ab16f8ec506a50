"""Design-consistent bootstrap tests for complex survey data.

Generate bootstrap replicate weights for common sampling designs, fit
survey-weighted regression models, and calibrate likelihood-ratio,
quasi-score, goodness-of-fit, and independence tests against the
bootstrap distribution of the statistic instead of a chi-square table.
"""

__version__ = "0.1.0"

from .errors import (DataError, DiagnosticError, SingularInformationError,
                     SvybootError)
from .data import (BootstrapWeightMatrix, CellTable, CsvSchema, DesignKind,
                   SurveyDataset, load_csv, weighted_proportions,
                   weighted_two_way_table, write_csv)
from .bootstrap import bootstrap_weights, ppswr_population_counts
from .models import (GAUSSIAN, LOGISTIC, MODELS, QUASI_GAUSSIAN, ModelFit,
                     fit, fit_profile)
from .regression import (NullSpec, lrt, quasi_score, run_regression_test,
                         wald)
from .results import TestResult, empirical_p
from .simulation import PowerTable, ScenarioConfig, run_scenario

__all__ = [
    "__version__",
    "SvybootError", "DataError", "DiagnosticError", "SingularInformationError",
    "DesignKind", "SurveyDataset", "BootstrapWeightMatrix", "CellTable",
    "CsvSchema", "load_csv", "write_csv", "weighted_proportions",
    "weighted_two_way_table",
    "bootstrap_weights",
    "ppswr_population_counts",
    "MODELS", "GAUSSIAN", "LOGISTIC", "QUASI_GAUSSIAN", "ModelFit",
    "fit", "fit_profile",
    "NullSpec", "lrt", "quasi_score", "wald", "run_regression_test",
    "TestResult", "empirical_p",
    "ScenarioConfig", "PowerTable", "run_scenario",
]
