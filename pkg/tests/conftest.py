import numpy as np
import pytest

from gesture_forge.events import AUEvent
from gesture_forge.synth import CohortConfig, generate_cohort


def make_event(au_id="AU12", onset=0.0, apex=None, offset=None, apex_i=2.0,
               onset_i=0.5, offset_i=0.5, rise=None, fall=None):
    apex = onset + 0.5 if apex is None else apex
    offset = apex + 0.5 if offset is None else offset
    if rise is None:
        rise = (apex_i - onset_i) / (apex - onset) if apex > onset else 0.0
    if fall is None:
        fall = (apex_i - offset_i) / (offset - apex) if offset > apex else 0.0
    return AUEvent(au_id, onset, apex, offset, onset_i, apex_i, offset_i, rise, fall)


@pytest.fixture
def event_factory():
    return make_event


@pytest.fixture(scope="session")
def noise_free_cohort():
    return generate_cohort(CohortConfig(n_subjects=4, distractor_count=20), master_seed=7)


@pytest.fixture(scope="session")
def noisy_cohort():
    cfg = CohortConfig(n_subjects=8, distractor_count=30, time_jitter=0.1, intensity_jitter=0.3)
    return generate_cohort(cfg, master_seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
