"""Shared fixtures: small hand-built datasets and the reference simulation."""
from __future__ import annotations

import numpy as np
import pytest

from survbayes import SimSpec, TrialDataset, dataset_from_arrays, simulate_trial

# Reference simulation used across modules: two-arm trial sized like the
# motivating study, roughly half the subjects censored by the cutoff.
REF_SPEC = SimSpec(
    n_control=232,
    n_treatment=233,
    true_log_hr=0.3661,
    rate=0.025,
    cutoff=24.0,
    seed=20260819,
)
TRUE_LOG_HR = REF_SPEC.true_log_hr


@pytest.fixture(scope="session")
def ref_trial() -> TrialDataset:
    return simulate_trial(REF_SPEC)


@pytest.fixture(scope="session")
def interleaved_trial() -> TrialDataset:
    """Six subjects, event times alternating between arms; the Cox partial
    likelihood has an interior maximum (no arm dominates every risk set)."""
    return dataset_from_arrays(
        times=np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        events=np.ones(6, dtype=bool),
        arms=np.array([1, 0, 1, 0, 1, 0]),
    )


@pytest.fixture(scope="session")
def separated_trial() -> TrialDataset:
    """All treatment events strictly before every control event: the partial
    likelihood is monotone in beta and the MLE diverges."""
    return dataset_from_arrays(
        times=np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        events=np.ones(6, dtype=bool),
        arms=np.array([1, 1, 1, 0, 0, 0]),
    )


@pytest.fixture(scope="session")
def small_trial() -> TrialDataset:
    """Quick mixed dataset: 30 per arm, some censoring, fixed seed."""
    return simulate_trial(
        SimSpec(
            n_control=30,
            n_treatment=30,
            true_log_hr=0.5,
            rate=0.2,
            cutoff=8.0,
            seed=7,
        )
    )


@pytest.fixture(scope="session")
def recovery_trial() -> TrialDataset:
    """Trial-sized simulation with ~50% events (rate 0.05 censored at
    log(2)/0.05), used for posterior-recovery and concordance checks."""
    return simulate_trial(
        SimSpec(
            n_control=232,
            n_treatment=233,
            true_log_hr=0.35,
            rate=0.05,
            cutoff=14.0,
            seed=314,
        )
    )
