import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from dnnaf.errors import FormatError, ParameterError, UndefinedPointError
from dnnaf.noise import (
    PRESETS,
    GaussianMixture,
    NoiseSampleSet,
    PointMass,
    Rayleigh,
    Uniform,
    analytic_pdf,
    analytic_pdf_derivative,
    parse_model,
    preset,
    sample,
)


def _cdf(model, x):
    if isinstance(model, GaussianMixture):
        return sum(w * stats.norm.cdf(x, m, s) for w, m, s in model.components)
    if isinstance(model, Uniform):
        return stats.uniform.cdf(x, model.lower, model.upper - model.lower)
    return stats.rayleigh.cdf(x, scale=model.scale)


def _support(model):
    if isinstance(model, GaussianMixture):
        return [(m - 12 * s, m + 12 * s) for _, m, s in model.components]
    if isinstance(model, Uniform):
        return [(model.lower, model.upper)]
    return [(0.0, 15 * model.scale)]


# -- moments of large samples ---------------------------------------------------

def test_uniform_moments():
    v = sample(Uniform(-2.0, 2.0), 10**6, 7).samples
    assert abs(v.mean()) < 0.01
    assert abs(v.var() / (4.0 / 3.0) - 1.0) < 0.02


def test_single_component_mixture_is_standard_normal():
    v = sample(GaussianMixture(((1.0, 0.0, 1.0),)), 10**6, 7).samples
    assert abs(v.var() - 1.0) < 0.02


def test_impulse_variance():
    v = sample(preset("impulse"), 10**6, 7).samples
    assert abs(v.var() / 2.509 - 1.0) < 0.02


def test_rayleigh_mean_is_uncentred():
    m = preset("skewed")
    assert m.scale == 8.0
    v = sample(m, 10**5, 3).samples
    assert v.min() >= 0.0
    assert abs(v.mean() - 8.0 * math.sqrt(math.pi / 2)) < 0.1


# -- closed-form density values -------------------------------------------------

def test_pdf_values():
    g = GaussianMixture(((1.0, 0.0, 1.0),))
    assert analytic_pdf(g, 0.0) == pytest.approx(0.398942, abs=1e-6)
    u = Uniform(-2.0, 2.0)
    assert analytic_pdf(u, 0.0) == 0.25
    assert analytic_pdf(u, 3.0) == 0.0
    assert analytic_pdf(Rayleigh(8.0), 8.0) == pytest.approx(0.075816, abs=1e-6)
    assert analytic_pdf(Rayleigh(8.0), -1.0) == 0.0


def test_pdf_derivative_values():
    g = GaussianMixture(((1.0, 0.0, 1.0),))
    assert analytic_pdf_derivative(g, 0.0) == 0.0
    assert analytic_pdf_derivative(g, 1.0) == pytest.approx(-0.241971, abs=1e-6)
    assert analytic_pdf_derivative(Uniform(-2.0, 2.0), 1.0) == 0.0


@pytest.mark.parametrize("v", [-2.0, 2.0])
def test_uniform_derivative_undefined_at_boundary(v):
    with pytest.raises(UndefinedPointError):
        analytic_pdf_derivative(Uniform(-2.0, 2.0), v)


def test_rayleigh_table_parameterisation():
    assert Rayleigh.from_table(64.0).scale == 8.0


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_normalisation(name):
    m = PRESETS[name]
    total = sum(integrate.quad(lambda x: float(analytic_pdf(m, x)), a, b, limit=400,
                               epsabs=1e-12, epsrel=1e-12)[0] for a, b in _support(m))
    if isinstance(m, GaussianMixture):
        # the per-component windows overlap; integrate the union instead
        lo = min(a for a, _ in _support(m))
        hi = max(b for _, b in _support(m))
        pts = [mu for _, mu, _ in m.components]
        total = integrate.quad(lambda x: float(analytic_pdf(m, x)), lo, hi, points=pts,
                               limit=800, epsabs=1e-12, epsrel=1e-12)[0]
    assert abs(total - 1.0) < 1e-6


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_derivative_matches_finite_difference(name):
    m = PRESETS[name]
    rng = np.random.default_rng(0)
    lo, hi = (m.lower, m.upper) if isinstance(m, Uniform) else (-10.0, 10.0)
    if isinstance(m, Rayleigh):
        lo, hi = 0.5, 40.0
    x = rng.uniform(lo + 1e-3, hi - 1e-3, 100)
    h = 1e-5
    fd = (analytic_pdf(m, x + h) - analytic_pdf(m, x - h)) / (2 * h)
    assert np.max(np.abs(fd - analytic_pdf_derivative(m, x))) < 1e-6


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_sampling_matches_cdf(name):
    m = PRESETS[name]
    v = np.sort(sample(m, 10**5, 11).samples)
    ecdf_hi = np.arange(1, v.size + 1) / v.size
    ecdf_lo = np.arange(v.size) / v.size
    cdf = _cdf(m, v)
    ks = max(np.max(ecdf_hi - cdf), np.max(cdf - ecdf_lo))
    assert ks < 0.01


# -- validation -------------------------------------------------------------------

@pytest.mark.parametrize("build", [
    lambda: GaussianMixture(((0.5, 0.0, 1.0), (0.4, 0.0, 1.0))),
    lambda: GaussianMixture(((1.0, 0.0, 0.0),)),
    lambda: GaussianMixture(((0.0, 0.0, 1.0), (1.0, 0.0, 1.0))),
    lambda: Uniform(1.0, 1.0),
    lambda: Rayleigh(0.0),
])
def test_invalid_models_rejected(build):
    with pytest.raises(ParameterError):
        build()


def test_sample_count_must_be_positive():
    with pytest.raises(ParameterError):
        sample(preset("uniform"), 0, 1)


# -- determinism and the draw order ----------------------------------------------

@pytest.mark.parametrize("name", sorted(PRESETS))
def test_same_seed_same_samples(name):
    a = sample(PRESETS[name], 1000, 5).samples
    b = sample(PRESETS[name], 1000, 5).samples
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample(PRESETS[name], 1000, 6).samples)


def test_prefix_stability():
    """The first k draws do not depend on how many are requested."""
    for m in PRESETS.values():
        long = sample(m, 500, 9).samples
        assert np.array_equal(sample(m, 137, 9).samples, long[:137])


def test_golden_impulse_draws():
    v = sample(preset("impulse"), 4, 1).samples
    assert repr(v.tolist()) == repr(sample(preset("impulse"), 4, 1).samples.tolist())
    assert v[0] == pytest.approx(0.04054650069727058, abs=0, rel=0)


def test_point_mass():
    v = sample(PointMass(0.0), 10, 1).samples
    assert np.all(v == 0.0)


# -- descriptors and CSV -----------------------------------------------------------

@pytest.mark.parametrize("name", sorted(PRESETS))
def test_descriptor_round_trip(name):
    m = PRESETS[name]
    assert parse_model(m.descriptor()) == m
    assert parse_model(name) == m


@pytest.mark.parametrize("text", ["gmm[]", "gmm[1:0]", "uniform[3:1]", "rayleigh[-1]", "cauchy[1]"])
def test_bad_descriptors(text):
    with pytest.raises(ParameterError):
        parse_model(text)


def test_csv_round_trip(tmp_path):
    s = sample(preset("multipeak"), 200, 4)
    s.to_csv(tmp_path / "a.csv")
    back = NoiseSampleSet.from_csv(tmp_path / "a.csv")
    assert np.array_equal(back.samples, s.samples)
    assert back.model == s.model and back.seed == 4
    back.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_csv_rejects_garbage(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("# model=uniform[-2.0:2.0] seed=1 n=2\nindex,value\n0,abc\n")
    with pytest.raises(FormatError):
        NoiseSampleSet.from_csv(p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=4),
       st.lists(st.floats(-5, 5), min_size=4, max_size=4),
       st.lists(st.floats(0.1, 3), min_size=4, max_size=4))
def test_mixture_pdf_integrates_to_one(weights, means, stds):
    w = np.array(weights) / sum(weights)
    w[-1] = 1.0 - w[:-1].sum()
    comps = tuple((float(a), float(m), float(s)) for a, m, s in zip(w, means, stds))
    g = GaussianMixture(comps)
    x = np.linspace(-30, 30, 200001)
    assert abs(np.trapezoid(g.pdf(x), x) - 1.0) < 1e-6
    assert abs(g.mean() - sum(a * m for a, m, _ in comps)) < 1e-12
