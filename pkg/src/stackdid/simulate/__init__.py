"""Simulation lab: generator, Monte Carlo experiments and count-table recomputation."""

from .cannabis import (OUTCOME_PARAMS, CannabisFixture, CannabisResult,
                       cannabis_correlations, load_fixture)
from .experiments import (ExperimentRow, MethodStats, closed_form_W,
                          run_correlation_experiment, run_coverage_experiment,
                          table1_config, true_correlation)
from .generator import (PRNG_ID, FastSimulator, SimConfig, cohort_specs,
                        replicate_rng, simulate_panel)

__all__ = [
    "OUTCOME_PARAMS", "CannabisFixture", "CannabisResult",
    "cannabis_correlations", "load_fixture", "ExperimentRow", "MethodStats",
    "closed_form_W", "run_correlation_experiment", "run_coverage_experiment",
    "table1_config", "true_correlation", "PRNG_ID", "FastSimulator",
    "SimConfig", "cohort_specs", "replicate_rng", "simulate_panel",
]
