"""Bayesian expected power of a planned trial from individual-level pilot data."""

from .analytic import (
    NormalPilotSummary,
    conjugate_mvn_bep,
    conjugate_normal_bep,
    misspecified_normal_bep,
    plugin_normal_power,
    survival_power,
    z_power_two_sided,
)
from .core import (
    BepEstimate,
    BepError,
    DegeneratePosteriorError,
    DirichletPrior,
    EstimationError,
    InvalidDataError,
    InvalidDatasetError,
    PilotDataset,
    PowerDistribution,
    ResampleWeights,
    TestOutcome,
    TrialPlan,
    make_rng_stream,
)
from .estimators import bbs_bep, bbs_power_distribution, bootstrap_power, bs2_power_distribution
from .resampling import (
    StudyCollection,
    draw_dirichlet_weights,
    simple_resample,
    two_stage_resample,
    weighted_resample,
)
from .rules import (
    IntersectionUnionRule,
    OneSampleRule,
    TostRule,
    intersection_onesided_t,
    one_sample_test,
    parse_rule,
    tost_equivalence,
)
from .simstudy import SimStudyConfig, SimStudyReport, ecdf_crossing, run_sim_study, summarize_cdf_crossing
from .io import load_config, load_pilot_csv, write_pilot_csv

__version__ = "0.1.0"
