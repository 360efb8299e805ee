"""Line-flow regression on DC power flow data, interventional SHAP, and PTDF recovery."""

from .exceptions import (
    CaseFormatError,
    DataError,
    ModelFormatError,
    ModelVersionError,
    NetworkValidationError,
    NumericalError,
    ShapPtdfError,
)
from .gbtree import (
    GradientBoostedTreesRegressor,
    LinearLeastSquaresRegressor,
    TrainConfig,
    Tree,
    fit_gbt,
    fit_linear,
    load_model,
    predict,
    save_model,
)
from .grid import Branch, Bus, Network, builtin_case9, parse_case, serialize_case, susceptance_matrices
from .powerflow import PtdfMatrix, Scenario, analytical_ptdf, run_scenario, solve_dc
from .recovery import (
    RecoveryResult,
    ShapLibrary,
    build_library,
    compare_ptdf,
    recover_all,
    recover_ptdf,
)
from .scenarios import Dataset, read_csv, sample_scenarios, split, write_csv
from .shapley import (
    BackgroundSet,
    ExactExplainer,
    Explanation,
    ExplanationSet,
    LinearExplainer,
    TreeExplainer,
    explain_dataset,
    feature_importance,
    shap_derivative,
    shap_exact,
    shap_linear,
    shap_tree,
)

__version__ = "0.1.0"
