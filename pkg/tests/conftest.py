import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cohort():
    """60-student planted cohort run through ingest, categorize and featurize."""
    from simlearn.features import build_feature_set
    from simlearn.ingest import ingest, parse_log
    from simlearn.schema import builtin_schema, categorize
    from simlearn.synth import GeneratorConfig, generate_cohort

    cohort = generate_cohort(GeneratorConfig(n_students=60, seed=3))
    seqs = ingest(parse_log(cohort.log_lines()))
    schema = builtin_schema("beers_law")
    cats = [categorize(s, schema) for s in seqs]
    labels = [cohort.labels[s.student_id] for s in seqs]
    return cohort, seqs, build_feature_set(cats, labels, schema)
