import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from dnnaf.errors import BoundUndefinedError, EstimationError, InstabilityPredictedError, ParameterError
from dnnaf.kde import KdeModel
from dnnaf.noise import PRESETS, GaussianMixture, PointMass, preset, sample
from dnnaf.theory import (
    THEORY_COLUMNS,
    NoiseExpectations,
    denominator_root,
    estimate_expectations,
    max_step_size,
    steady_state_msd,
    theory_rows,
    write_theory_csv,
)

STD_NORMAL = GaussianMixture(((1.0, 0.0, 1.0),))
SQRT_2PI = math.sqrt(2 * math.pi)


def _phi(v):
    return math.exp(-0.5 * v * v) / SQRT_2PI


@pytest.fixture(scope="module")
def gaussian_exp():
    return estimate_expectations(STD_NORMAL, "analytic", 400_000, seed=3)


def _exp(e_ratio=-1.0, e_ratio_sq=2.0, e_deriv_sq=0.5):
    return NoiseExpectations(e_ratio, e_ratio_sq, e_deriv_sq, "analytic", 1000)


# -- quadrature oracles for the standard Gaussian ---------------------------------------------

def test_gaussian_ratio_expectation(gaussian_exp):
    # E[-p'(v)/v] = E[p(v)] = int p^2 = 1 / (2 sqrt(pi))
    quad = integrate.quad(lambda v: _phi(v) ** 2, -np.inf, np.inf)[0]
    assert quad == pytest.approx(0.282095, abs=1e-6)
    assert -gaussian_exp.e_ratio == pytest.approx(quad, rel=0.01)


def test_gaussian_derivative_square_expectation(gaussian_exp):
    quad = integrate.quad(lambda v: v * v * _phi(v) ** 3, -np.inf, np.inf)[0]
    assert gaussian_exp.e_deriv_sq == pytest.approx(quad, rel=0.01)


def test_gaussian_ratio_square_expectation(gaussian_exp):
    quad = integrate.quad(lambda v: _phi(v) ** 3, -np.inf, np.inf)[0]
    assert gaussian_exp.e_ratio_sq == pytest.approx(quad, rel=0.01)


def test_gaussian_bound():
    exact = NoiseExpectations(-1 / (2 * math.sqrt(math.pi)), 0.0, 0.0, "analytic", 1000)
    assert max_step_size(exact, 1.0) == pytest.approx(7.0899, abs=1e-4)


@given(st.floats(-100, -1e-6), st.floats(0.01, 100))
def test_bound_inverse_in_input_power(e_ratio, s2):
    exp = _exp(e_ratio)
    assert max_step_size(exp, 2 * s2) == pytest.approx(max_step_size(exp, s2) / 2, rel=1e-12)


@pytest.mark.parametrize("e_ratio", [0.0, 0.3])
def test_bound_undefined(e_ratio):
    with pytest.raises(BoundUndefinedError):
        max_step_size(_exp(e_ratio), 1.0)
    with pytest.raises(BoundUndefinedError):
        denominator_root(_exp(e_ratio), 1.0)


def test_symmetric_unimodal_ratio_negative():
    for m in (STD_NORMAL, preset("impulse")):
        assert estimate_expectations(m, "analytic", 10_000).e_ratio < 0


def test_skewed_bound_withheld():
    exp = estimate_expectations(preset("skewed"), "analytic", 20_000)
    assert exp.e_ratio > 0
    with pytest.raises(BoundUndefinedError):
        max_step_size(exp, 1.0)


# -- steady-state formula --------------------------------------------------------------------

def test_steady_state_closed_form():
    exp = _exp(-1.0, 2.0, 0.5)
    eta, M, s2 = 0.1, 5, 1.5
    factor = 1 + 2 * eta * s2 * -1.0 + (eta * s2) ** 2 * 2.0
    expected = eta**2 * M * s2 * 0.5 / (1 - factor)
    got = steady_state_msd(exp, eta, M, s2)
    assert got.msd == pytest.approx(expected, rel=1e-14)
    assert got.msd_db == pytest.approx(10 * math.log10(expected), rel=1e-14)


def test_small_step_limit(gaussian_exp):
    values = [steady_state_msd(gaussian_exp, eta, 5, 1.0).msd for eta in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert values[-1] < 1e-8
    assert all(a > b for a, b in zip(values, values[1:]))


def test_monotone_in_step(gaussian_exp):
    root = denominator_root(gaussian_exp, 1.0)
    etas = np.linspace(1e-4, 0.99 * root, 200)
    msd = [steady_state_msd(gaussian_exp, e, 5, 1.0).msd for e in etas]
    assert np.all(np.diff(msd) > 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, -0.01), st.floats(1.0, 1e4), st.floats(0.01, 10), st.floats(0.01, 0.99))
def test_finite_inside_root_and_blows_up_at_it(e_ratio, extra, s2, frac):
    exp = _exp(e_ratio, e_ratio**2 + extra, 1.0)
    root = denominator_root(exp, s2)
    assert steady_state_msd(exp, frac * root, 5, s2).msd > 0
    near = steady_state_msd(exp, root * (1 - 1e-9), 5, s2).msd
    assert near > 1e3 * steady_state_msd(exp, 0.5 * root, 5, s2).msd
    with pytest.raises(InstabilityPredictedError) as info:
        steady_state_msd(exp, root * 1.01, 5, s2)
    assert info.value.denominator <= 0


def test_denominator_root_never_exceeds_bound(gaussian_exp):
    # E[r^2] >= E[r]^2, so the steady-state root lies inside the mean bound
    assert denominator_root(gaussian_exp, 1.0) <= max_step_size(gaussian_exp, 1.0)


def test_steady_state_rejects_nonpositive_step():
    with pytest.raises(ParameterError):
        steady_state_msd(_exp(), 0.0, 5, 1.0)


# -- estimation --------------------------------------------------------------------------------

def test_estimation_is_seeded():
    a = estimate_expectations(preset("impulse"), "analytic", 5000, seed=4)
    b = estimate_expectations(preset("impulse"), "analytic", 5000, seed=4)
    assert a == b
    assert a != estimate_expectations(preset("impulse"), "analytic", 5000, seed=5)


def test_estimation_validation():
    with pytest.raises(ParameterError):
        estimate_expectations(STD_NORMAL, "analytic", 999)
    with pytest.raises(ParameterError):
        estimate_expectations(STD_NORMAL, "numeric", 1000)
    with pytest.raises(EstimationError):
        estimate_expectations(PointMass(0.0), lambda v: v, 1000)
    with pytest.raises(EstimationError):
        estimate_expectations(STD_NORMAL, lambda v: np.full_like(v, np.inf), 1000)


def test_kde_source_matches_analytic_on_gaussian():
    kde = KdeModel(sample(STD_NORMAL, 5000, 1).samples)
    a = estimate_expectations(STD_NORMAL, "analytic", 100_000)
    k = estimate_expectations(STD_NORMAL, kde, 100_000)
    assert k.source == "kde"
    assert k.e_deriv_sq == pytest.approx(a.e_deriv_sq, rel=0.10)
    assert k.e_ratio == pytest.approx(a.e_ratio, rel=0.10)
    assert k.e_ratio_sq == pytest.approx(a.e_ratio_sq, rel=0.10)


@pytest.mark.parametrize("source", ["kde", "gradnet"])
@pytest.mark.parametrize("name", sorted(PRESETS))
def test_sources_agree(name, source, trained_nets, preset_datasets):
    m = PRESETS[name]
    est = KdeModel(preset_datasets[name].inputs) if source == "kde" else trained_nets[name][0]
    a = estimate_expectations(m, "analytic", 100_000)
    b = estimate_expectations(m, est, 100_000)
    for field in ("e_ratio", "e_ratio_sq", "e_deriv_sq"):
        assert getattr(b, field) == pytest.approx(getattr(a, field), rel=0.15), field


# -- report rows ---------------------------------------------------------------------------------

def test_theory_rows_and_csv(tmp_path):
    m = preset("impulse")
    exp = estimate_expectations(m, "analytic", 20_000)
    rows = theory_rows(m, exp, [1e-4, 1e-3, 0.05], 5, 1.0)
    assert len(rows) == 3
    assert rows[0][5] == steady_state_msd(exp, 1e-4, 5, 1.0).msd
    assert math.isnan(rows[2][5]) and math.isnan(rows[2][6])
    assert rows[0][7] == max_step_size(exp, 1.0)
    write_theory_csv(tmp_path / "t.csv", rows)
    with open(tmp_path / "t.csv", newline="") as fh:
        parsed = list(csv.reader(fh))
    assert tuple(parsed[0]) == THEORY_COLUMNS
    assert parsed[1][0] == m.descriptor()
    assert float(parsed[1][5]) == rows[0][5]


def test_theory_rows_without_bound():
    m = preset("skewed")
    exp = estimate_expectations(m, "analytic", 5000)
    rows = theory_rows(m, exp, [0.1], 5, 1.0)
    assert math.isnan(rows[0][7])
