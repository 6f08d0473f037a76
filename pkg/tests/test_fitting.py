import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vsic.dynamics import central_frequency
from vsic.fitting import (PER_COMPONENT, SHARED, FitError, GaussianPeakModel, RabiModel, RamseyModel,
                          fit_curve, fit_ramsey, fit_spectrum, matrix_pencil, model_select_t2_sharing,
                          read_trace_csv, write_fit_json)
from vsic.hamiltonian import profile
from vsic.spectra import COMPOSITIONS, odmr_spectrum, spectrum_peaks

T = np.linspace(0.0, 10.0, 400)


def _noisy(model, p, t, level, seed):
    y = model.value(t, p)
    scale = np.max(np.abs(y - np.mean(y)))
    return y + level * scale * np.random.default_rng(seed).standard_normal(len(t))


def test_single_component_noise_free_recovery():
    m = RamseyModel(1)
    truth = m.pack(0.1, 1.0, 1.0, 0.0, 3.2)
    res = fit_ramsey(T, m.value(T, truth), 1)
    assert res.converged
    c = res.components()
    assert c["a"][0] == pytest.approx(1.0, rel=1e-6)
    assert c["f"][0] == pytest.approx(1.0, rel=1e-6)
    assert c["T2"][0] == pytest.approx(3.2, rel=1e-6)
    # phase 0 may come back as 2 pi after canonicalization
    assert min(c["phi"][0], 2 * np.pi - c["phi"][0]) < 1e-6


def _jac_fd(model, x, p, h=1e-6):
    cols = []
    for k in range(len(p)):
        dp = np.zeros_like(p)
        dp[k] = h * max(1.0, abs(p[k]))
        cols.append((model.value(x, p + dp) - model.value(x, p - dp)) / (2 * dp[k]))
    return np.column_stack(cols)


amp = st.floats(0.1, 2.0)
freq = st.floats(0.1, 3.0)
phase = st.floats(0, 6.28)
t2 = st.floats(0.3, 10.0)


@given(st.lists(st.tuples(amp, freq, phase, t2), min_size=1, max_size=3), st.sampled_from([SHARED, PER_COMPONENT]))
def test_ramsey_jacobian_matches_finite_differences(comps, sharing):
    m = RamseyModel(len(comps), sharing)
    a, f, ph, tt = map(np.array, zip(*comps))
    p = m.pack(0.3, a, f, ph, tt)
    x = np.linspace(0, 5, 60)
    assert np.max(np.abs(m.jacobian(x, p) - _jac_fd(m, x, p))) < 1e-5


@given(st.lists(st.tuples(amp, st.floats(-3, 3), st.floats(0.1, 2)), min_size=1, max_size=3))
def test_gaussian_jacobian_matches_finite_differences(peaks):
    m = GaussianPeakModel(len(peaks))
    p = np.array([0.05] + [v for pk in peaks for v in pk])
    x = np.linspace(-5, 5, 80)
    assert np.max(np.abs(m.jacobian(x, p) - _jac_fd(m, x, p))) < 1e-5


@given(st.floats(0.5, 1.5), st.floats(0.5, 2.5), st.floats(0.5, 5), st.floats(-1.0, 1.0),
       st.floats(-2, 2), st.integers(0, 1000))
def test_residual_never_exceeds_initial(a, f, t2_, df, dphi, seed):
    m = RamseyModel(1)
    y = _noisy(m, m.pack(0.0, a, f, 0.4, t2_), T, 0.05, seed)
    guess = m.pack(0.1, a * 0.5, f + df, 0.4 + dphi, t2_ * 2)
    res = fit_curve(m, T, y, guess)
    assert res.residual_norm <= res.initial_residual_norm * (1 + 1e-12)


@given(st.floats(1e-3, 1e3))
def test_scale_equivariance(c):
    m = RamseyModel(2)
    truth = m.pack(0.2, [1.0, 0.6], [0.8, 1.9], [0.3, 2.0], [2.0, 5.0])
    y = _noisy(m, truth, T, 0.05, 3)
    base = fit_ramsey(T, y, 2)
    assert base.converged
    comp = base.components()
    start = m.pack(c * comp["c"], c * comp["a"], comp["f"], comp["phi"], comp["T2"])
    scaled = fit_curve(m, T, c * y, start)
    sc = scaled.components()
    assert np.allclose(sc["a"], c * comp["a"], rtol=1e-8)
    assert sc["c"] == pytest.approx(c * comp["c"], rel=1e-8)
    for k in ("f", "phi", "T2"):
        assert np.allclose(sc[k], comp[k], rtol=1e-8)


def test_deterministic():
    m = RamseyModel(2)
    y = _noisy(m, m.pack(0.2, [1.0, 0.6], [0.8, 1.9], [0.3, 2.0], [2.0, 5.0]), T, 0.05, 8)
    a, b = fit_ramsey(T, y, 2), fit_ramsey(T, y, 2)
    assert a.estimates == b.estimates and a.ci95 == b.ci95


def test_confidence_interval_covers_truth():
    m = RamseyModel(1)
    truth = m.pack(0.0, 1.0, 1.2, 0.5, 3.0)
    y = _noisy(m, truth, T, 0.05, 12)
    res = fit_ramsey(T, y, 1)
    for name, v in zip(m.names, truth):
        assert abs(res.estimates[name] - v) < 3 * res.ci95[name]


def test_non_convergence_flagged():
    m = RamseyModel(1)
    y = _noisy(m, m.pack(0.0, 1.0, 1.0, 0.2, 3.0), T, 0.05, 1)
    res = fit_curve(m, T, y, m.pack(0.0, 0.5, 1.3, 1.0, 1.0), max_nfev=2)
    assert not res.converged
    assert res.to_dict()["status"] == "non-converged"


def test_singular_jacobian_flagged():
    m = RamseyModel(2, SHARED)
    p = m.pack(0.0, [0.5, 0.5], [1.0, 1.0], [0.2, 0.2], 3.0)
    res = fit_curve(m, T, m.value(T, p), p)
    assert not res.converged
    assert "singular" in res.message


def test_preconditions():
    m = RamseyModel(5)
    with pytest.raises(FitError):
        fit_curve(m, T[:30], np.zeros(30), np.ones(m.n_params))
    y = np.zeros_like(T)
    y[3] = np.nan
    with pytest.raises(FitError):
        fit_curve(RamseyModel(1), T, y, np.ones(5))
    with pytest.raises(FitError):
        fit_curve(RamseyModel(1), T, np.zeros_like(T), np.ones(5), weight=-np.ones_like(T))


def test_rabi_model_shares_t2():
    assert RabiModel(3).names[-1] == "T2"
    with pytest.raises(ValueError):
        RabiModel(2, sharing=PER_COMPONENT)


def test_matrix_pencil_exact():
    t = np.linspace(0, 8, 321)
    y = 0.7 * np.exp(-t / 2.0) * np.sin(2 * np.pi * 1.1 * t + 0.4) + \
        0.3 * np.exp(-t / 6.0) * np.sin(2 * np.pi * 2.3 * t + 1.7)
    comps = sorted((c for c in matrix_pencil(t, y) if c.frequency > 0), key=lambda c: c.frequency)
    assert [c.frequency for c in comps] == pytest.approx([1.1, 2.3], rel=1e-8)
    assert [1 / c.damping for c in comps] == pytest.approx([2.0, 6.0], rel=1e-8)


@pytest.mark.xfail(strict=True, reason="0.27 MHz spacing with 0.7 us components at 5% noise is "
                                       "below the Cramer-Rao bound for 0.02 MHz; see the decisions ledger")
def test_five_components_spaced_027():
    m = RamseyModel(5)
    f = 1.0 + 0.27 * np.arange(5)
    t2s = np.array([0.7, 7.2, 0.7, 7.2, 0.7])
    truth = m.pack(0.5, [0.3, 0.2, 0.3, 0.2, 0.3], f, [0.3, 1.0, 2.0, 0.5, 1.5], t2s)
    t = np.arange(0, 15, 0.02)
    res = fit_ramsey(t, _noisy(m, truth, t, 0.05, 1), 5)
    c = res.components()
    assert np.all(np.abs(c["f"] - f) < 0.02)
    assert np.all(np.abs(c["T2"] / t2s - 1) < 0.2)


def test_five_gaussian_odmr_centres():
    models = [profile(n_si=n) for n in range(3)]
    f0 = central_frequency(models[0], 33.0)
    f = np.linspace(f0 - 4, f0 + 4, 801)
    tr = odmr_spectrum(models, 33.0, COMPOSITIONS["1278.76 nm"], 0.5, f)
    truth = np.array([p[0] for p in spectrum_peaks(tr)])
    assert len(truth) == 5
    y = tr.intensity + 0.02 * np.random.default_rng(0).standard_normal(len(f))
    res = fit_spectrum(f, y, 5)
    assert res.converged
    assert np.all(np.abs(res.components()["center"] - truth) < 0.05)


def _three_component(t2s, seed):
    m = RamseyModel(3)
    truth = m.pack(0.4, [0.3, 0.25, 0.3], [0.6, 1.4, 2.3], [0.2, 1.1, 2.5], t2s)
    t = np.arange(0, 12, 0.02)
    return t, _noisy(m, truth, t, 0.05, seed)


def test_selection_shared():
    t, y = _three_component([2.0, 2.0, 2.0], 5)
    sel = model_select_t2_sharing(t, y, 3)
    assert sel.choice == SHARED
    assert sel.residual_per_component <= sel.residual_shared + 1e-9


def test_selection_split():
    t, y = _three_component([0.7, 7.2, 0.7], 5)
    assert model_select_t2_sharing(t, y, 3).choice == PER_COMPONENT


def test_selection_abstains_on_constant_data():
    sel = model_select_t2_sharing(T, np.zeros_like(T), 2)
    assert sel.choice is None
    assert sel.to_dict()["choice"] == "abstain"


def test_json_and_csv_io(tmp_path):
    m = RamseyModel(1)
    y = m.value(T, m.pack(0.0, 1.0, 1.0, 0.5, 3.0))
    res = fit_ramsey(T, y, 1)
    path = tmp_path / "fit.json"
    write_fit_json(res, path)
    data = json.loads(path.read_text())
    assert data["status"] == "converged" and data["estimates"]["f_1"] == pytest.approx(1.0)
    csv = tmp_path / "trace.csv"
    csv.write_text("swept_parameter,signal,stderr_over_samples\n" +
                   "".join(f"{float(a)!r},{float(b)!r},0.0\n" for a, b in zip(T, y)))
    x, yy, err = read_trace_csv(csv)
    assert np.array_equal(x, T) and np.array_equal(yy, y) and np.all(err == 0)
