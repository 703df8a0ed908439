import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ncspec.ncpoly import block_diag_poly, build_poly, constant, generator
from ncspec.rmt import (
    EnsembleSpec,
    confinement_check,
    empirical_spectrum,
    exact_second_moment,
    gn_bias_scan,
    gue_even_moments,
    jackknife,
    map_trials,
    master_equation_residual,
    normalize_kind,
    resolvent_traces,
    sample_ensemble,
    sample_matrix,
    sample_mix,
    separation_check,
    trial_rng,
    variance_scan,
)
from ncspec.spectrum import TestFunction

X1 = generator(1, 1)
KINDS = ("SGRM", "GOE", "GOEstar", "GSE", "GSEstar")


def semicircle_cdf(x):
    x = np.clip(x, -2, 2)
    return 0.5 + (x * np.sqrt(4 - x * x) / 4 + np.arcsin(x / 2)) / np.pi


def test_kind_aliases():
    assert normalize_kind("gue") == "SGRM"
    assert normalize_kind("GOE*") == "GOEstar"
    assert normalize_kind("GSE*") == "GSEstar"
    with pytest.raises(ValueError):
        normalize_kind("LUE")


def test_structures():
    rng = trial_rng(1, 0, 0)
    goe = sample_matrix("GOE", 30, 1 / 30, rng)
    assert goe.dtype.kind == "f" and np.array_equal(goe, goe.T)
    star = sample_matrix("GOE*", 30, 1 / 30, rng)
    assert np.all(star.real == 0) and np.allclose(star.imag, -star.imag.T)
    sgrm = sample_matrix("SGRM", 30, 1 / 30, rng)
    assert np.array_equal(sgrm, sgrm.conj().T)
    for kind in ("GSE", "GSE*"):
        q = sample_matrix(kind, 30, 1 / 30, rng)
        assert q.shape == (60, 60)
        np.testing.assert_allclose(q, q.conj().T, atol=1e-15)


def test_gse_kramers_pairs():
    e = np.linalg.eigvalsh(sample_matrix("GSE", 20, 1 / 20, trial_rng(2, 0, 0)))
    np.testing.assert_allclose(e[0::2], e[1::2], atol=1e-8)
    assert np.min(np.diff(e[1::2])) > 1e-6


def test_gse_star_spectrum_is_symmetric():
    # the 1/i factor is not a quaternion scalar, so GSE* pairs +e with -e instead
    e = np.linalg.eigvalsh(sample_matrix("GSE*", 20, 1 / 20, trial_rng(2, 0, 0)))
    np.testing.assert_allclose(e, -e[::-1], atol=1e-8)


def test_sample_ensemble_is_reproducible_per_slot():
    spec = EnsembleSpec("GOE", 10, seed=5, slots=3, trial=2)
    a, b = sample_ensemble(spec), sample_ensemble(spec)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], a[1])
    assert spec.variance == pytest.approx(0.1)
    with pytest.raises(ValueError):
        sample_ensemble(EnsembleSpec("GOE", 0))


def test_gse_cannot_mix_with_square_kinds():
    with pytest.raises(ValueError):
        sample_mix(["GSE", "GOE"], 5, 0, 0)


@pytest.mark.parametrize("kind", KINDS)
def test_second_moment_normalization(kind):
    n, trials = 200, 200
    vals = np.empty(trials)
    for t in range(trials):
        x = sample_matrix(kind, n, 1 / n, trial_rng(8, t, 0))
        vals[t] = np.trace(x @ x).real / x.shape[0]
    mean, se = jackknife(vals)
    assert abs(mean - exact_second_moment(kind, n)) <= 3 * se
    assert abs(mean - 1) <= 3 * se + 1 / n


def test_exact_second_moments():
    assert exact_second_moment("GUE", 10) == pytest.approx(1.0)
    assert exact_second_moment("GOE", 10) == pytest.approx(1.1)
    assert exact_second_moment("GOE*", 10) == pytest.approx(0.9)
    assert exact_second_moment("GSE", 10) == pytest.approx(0.95)
    assert exact_second_moment("GSE*", 10) == pytest.approx(1.05)


def test_gue_even_moments():
    n = 7
    m = gue_even_moments(n, 3)
    np.testing.assert_allclose(m, [1, 1, 2 + 1 / n**2, 5 + 10 / n**2])


@pytest.mark.parametrize("kind, bound", [("SGRM", 3.0), ("GOE", 3 * np.sqrt(2)), ("GOE*", 3 * np.sqrt(2))])
def test_norm_tails(kind, bound):
    norms = [np.abs(np.linalg.eigvalsh(sample_matrix(kind, 100, 0.01, trial_rng(4, t, 0)))).max()
             for t in range(50)]
    assert max(norms) <= bound


def test_semicircle_empirical_cdf():
    eigs = empirical_spectrum(X1, ["GUE"], 500, 1, seed=3)[0]
    ks = stats.kstest(eigs, semicircle_cdf).statistic
    assert ks <= 0.05


def test_constant_polynomial_spectrum():
    c = np.array([[1.0, 2.0], [2.0, -1.0]])
    p = build_poly(2, 2, 1, [([], c)])
    eigs = empirical_spectrum(p, ["GUE"], 4, 2, seed=0)
    np.testing.assert_allclose(eigs[0], np.repeat(np.linalg.eigvalsh(c), 4), atol=1e-12)


def test_empirical_spectrum_thread_independent():
    p = X1 @ X1 + generator(1, 1)
    a = empirical_spectrum(p, ["GOE"], 40, 6, seed=9, threads=1)
    b = empirical_spectrum(p, ["GOE"], 40, 6, seed=9, threads=3)
    assert np.array_equal(a, b)


def test_map_trials_preserves_order():
    assert map_trials(lambda t: t * t, 7, threads=3) == [t * t for t in range(7)]


def test_jackknife_mean_matches_textbook_error():
    v = np.random.default_rng(0).standard_normal(50)
    mean, se = jackknife(v)
    assert mean == pytest.approx(v.mean())
    assert se == pytest.approx(v.std(ddof=1) / np.sqrt(50))
    est, se_stat = jackknife(v, np.mean)
    assert est == pytest.approx(mean) and se_stat == pytest.approx(se)
    assert np.isnan(jackknife(v[:1])[1])


def test_resolvent_traces_shape_and_reflection():
    tr = resolvent_traces(X1, [2j, -2j], 30, 4, seed=1)
    assert tr.shape == (4, 2)
    np.testing.assert_allclose(tr[:, 1], np.conj(tr[:, 0]), atol=1e-14)


def test_master_equation_gue():
    res = master_equation_residual(X1, 2j, 50, 400, seed=2)
    assert res.norm <= max(0.05, 5 * res.stderr)
    assert not res.flagged and res.R_n is None


def test_master_equation_single_trial_is_flagged():
    res = master_equation_residual(X1, 2j, 20, 1, seed=2)
    assert np.isfinite(res.norm) and res.flagged and np.isnan(res.stderr)


def test_master_equation_goe_matches_R_over_n():
    x, y = generator(1, 2), generator(2, 2)
    res = master_equation_residual(x @ y + y @ x, 1j, 40, 600, seed=4, mix=["GOE", "GOE"])
    assert res.corrected_norm <= 5 * res.corrected_stderr
    assert res.norm > res.corrected_norm


def test_master_equation_requires_upper_half_plane():
    with pytest.raises(ValueError):
        master_equation_residual(X1, -1j, 10, 2, seed=0)


def test_confinement_trivial_and_square():
    report = confinement_check(X1, ["GUE"], 100, 10.0, 5, seed=1)
    assert report.passed and report.estimates["trials_passed"] == 5
    square = confinement_check(X1 @ X1, ["GUE"], 300, 0.25, 10, seed=1)
    assert square.estimates["trials_passed"] >= 9
    assert square.estimates["min_eig"] >= -0.25
    json.dumps(square.to_dict())


def test_separation_counts():
    p = block_diag_poly(X1, X1 + constant(np.array([[5.0]]), 1))
    report = separation_check(p, ["GOE"], 100, 0.3, 5, seed=2)
    assert report.estimates["expected_counts"] == [100, 100]
    assert report.passed


def test_separation_single_component_is_vacuous():
    report = separation_check(X1, ["GUE"], 50, 0.3, 2, seed=2)
    assert report.passed and report.notes


def test_bias_scan_constant_pencil_is_exact():
    p = build_poly(1, 1, 1, [([], np.array([[0.5]]))])
    report = gn_bias_scan(p, ["GUE"], 1j, [10, 20, 40], 2, seed=0)
    assert all(r["abs_bias"] <= 1e-15 for r in report.estimates["rows"])


def test_bias_scan_needs_spread_sizes():
    with pytest.raises(ValueError):
        gn_bias_scan(X1, ["GUE"], 2j, [100, 200], 10, seed=0)
    with pytest.raises(ValueError):
        gn_bias_scan(X1, ["GUE"], 2j, [100, 150, 200], 10, seed=0)


def test_bias_scan_gue_slope():
    report = gn_bias_scan(X1, ["GUE"], 2j, [25, 50, 100, 200], 100, seed=5)
    assert -2.6 <= report.estimates["slope"] <= -1.4


def test_variance_scan_zero_and_gap():
    p = block_diag_poly(X1, X1 + constant(np.array([[5.0]]), 1))
    far = variance_scan(X1, ["GUE"], TestFunction.bump(50, 1), [20, 40, 80], 4, seed=1)
    assert all(r["mean"] == 0 and r["variance"] == 0 for r in far.estimates["rows"])
    gap = variance_scan(p, ["GUE"], TestFunction.bump(2.5, 0.2), [50, 100, 200], 20, seed=1)
    means = [r["mean"] for r in gap.estimates["rows"]]
    assert means[-1] <= means[0]
    assert gap.passed is None


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), trial=st.integers(0, 10**6), slot=st.integers(0, 8))
def test_trial_rng_is_a_pure_function(seed, trial, slot):
    a = trial_rng(seed, trial, slot).standard_normal(4)
    b = trial_rng(seed, trial, slot).standard_normal(4)
    c = trial_rng(seed, trial + 1, slot).standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


@settings(max_examples=20, deadline=None)
@given(kind=st.sampled_from(KINDS + ("GUE", "GOE*", "GSE*")), n=st.integers(1, 12), seed=st.integers(0, 2**32))
def test_samples_are_self_adjoint(kind, n, seed):
    x = sample_matrix(kind, n, 1.0 / n, trial_rng(seed, 0, 0))
    assert np.allclose(x, x.conj().T, atol=1e-14)
    assert x.shape[0] == (2 * n if normalize_kind(kind).startswith("GSE") else n)
