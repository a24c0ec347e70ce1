import numpy as np
import pytest
from sklearn.base import clone

from careerssm.errors import ValidationError
from careerssm.estimator import LatentClassSSM, check_panel, check_panel_careers
from careerssm.synthgen import desk_config, generate


@pytest.fixture(scope="module")
def data():
    panel, careers, _ = generate(desk_config(n_runners=16, n_years=6))
    return panel, careers


@pytest.fixture(scope="module")
def fitted(data):
    panel, careers = data
    return LatentClassSSM(n_components=5, n_iter=40, n_keep=10, random_state=3).fit(panel, careers)


def test_params_and_clone():
    est = LatentClassSSM(variant="history_only", n_components=7, random_state=1)
    assert est.get_params()["n_components"] == 7
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    est.set_params(n_iter=10)
    assert est.n_iter == 10


def test_fit_attributes(fitted, data):
    panel = data[0]
    assert fitted.draws_.n_kept == 10
    assert fitted.labels_.shape == (panel.n_runners,)
    assert fitted.co_clustering_.shape == (panel.n_runners,) * 2
    assert 1 <= fitted.n_clusters_ <= 5
    assert fitted.disciplines_ == panel.disciplines


def test_fit_deterministic(data, fitted):
    panel, careers = data
    again = clone(fitted).fit(panel, careers)
    np.testing.assert_array_equal(again.draws_.allocation, fitted.draws_.allocation)


def test_predict_shapes(fitted, data):
    panel, careers = data
    med = fitted.predict(panel, careers, n_samples=50, random_state=0)
    assert med.shape == panel.shape
    np.testing.assert_array_equal(~np.isnan(med), panel.mask)
    bands = fitted.predict_interval(panel, careers, alpha=0.2, n_samples=50, random_state=0)
    assert all((b.lower <= b.median).all() and (b.median <= b.upper).all() for b in bands)
    assert fitted.score(panel, careers, n_samples=50, random_state=0) < 0


def test_bare_array_input(fitted, data):
    panel = data[0]
    arr = np.where(panel.mask, panel.values, np.nan)
    med = fitted.predict(arr, n_samples=20, random_state=0)
    np.testing.assert_array_equal(~np.isnan(med), panel.mask)


def test_unfitted_and_shape_errors(fitted):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        LatentClassSSM().predict(np.ones((3, 2, 6)))
    with pytest.raises(ValidationError):
        fitted.predict(np.ones((3, 2, 4)))
    with pytest.raises(ValidationError):
        check_panel(np.ones((3, 4)))


def test_career_checks(data):
    panel, careers = data
    derived = check_panel_careers(panel)
    assert derived.shape == careers.shape
    # derived careers are in career on every observed year, like the generated ones
    assert (derived[panel.mask.any(axis=0)] == 1).all()
    np.testing.assert_array_equal(check_panel_careers(panel, careers), careers)
    with pytest.raises(ValidationError):
        check_panel_careers(panel, careers[:, :-1])


def test_from_draws_matches(fitted, data):
    panel, careers = data
    rebuilt = LatentClassSSM.from_draws(fitted.draws_, panel.disciplines, panel.base_year)
    a = fitted.sample_predictive(panel, careers, 30, 5)
    b = rebuilt.sample_predictive(panel, careers, 30, 5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.draws, y.draws)
