import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nof1causal import synth
from nof1causal.pipeline import fit_all
from nof1causal.series import Schema, from_arrays

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def default_synthetic():
    return synth.generate(synth.TruthSpec(T=400, seed=0))


@pytest.fixture(scope="session")
def default_fit(default_synthetic):
    return fit_all(default_synthetic.series)


@pytest.fixture
def schema():
    return Schema(("A",), "Y", ("C",))


def make_series(schema, A, Y, C, baseline=None):
    return from_arrays(schema, np.asarray(A, float), np.asarray(Y, float), np.asarray(C, float), baseline)


def random_frame(rng, n=12, covariates=("C",), constant=False, scale=0.5, se=None, exposures=("A",)):
    """Frame with random coefficients on the default DAG."""
    from nof1causal.frame import from_values
    from nof1causal.series import COVARIATE, OUTCOME, DagConfig, design_columns
    from nof1causal.ssm import coefficient_name

    sch = Schema(tuple(exposures), "Y", tuple(covariates))
    values, ses = {}, {}
    for resp, role in [("Y", OUTCOME)] + [(c, COVARIATE) for c in covariates]:
        names = [coefficient_name(sch, role, resp, k) for k in design_columns(sch, DagConfig(), role)]
        values[resp] = {nm: (rng.uniform(-scale, scale) if constant else rng.uniform(-scale, scale, n))
                        for nm in names}
        ses[resp] = {nm: se for nm in names}
    noise = {"Y": 1.0, **{c: 1.0 for c in covariates}}
    return from_values(sch, values, n, start=1, noise=noise, se=ses if se is not None else None)
