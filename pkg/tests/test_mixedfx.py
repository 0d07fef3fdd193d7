import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_mvn_loglik, grid_argmax_loglik
from sparsegmpe import mixedfx as M
from sparsegmpe.errors import DomainError, EstimationError


def draw_groups(rng, n_events, n_records, tau, phi, prefix="E"):
    out = {}
    for i in range(n_events):
        k = n_records if isinstance(n_records, int) else int(rng.integers(*n_records))
        out[f"{prefix}{i:04d}"] = rng.normal(0, tau) + rng.normal(0, phi, k)
    return out


def test_loglik_standard_normal_at_zero():
    assert M.marginal_log_likelihood({"a": [0.0]}, 0.0, 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)


def test_loglik_tau_zero_is_iid():
    rng = np.random.default_rng(0)
    g = draw_groups(rng, 4, 3, 0.3, 0.7)
    r = np.concatenate(list(g.values()))
    iid = sum(-0.5 * math.log(2 * math.pi * 0.49) - x * x / (2 * 0.49) for x in r)
    assert M.marginal_log_likelihood(g, 0.0, 0.7) == pytest.approx(iid, abs=1e-11)


def test_loglik_dense_two_by_three():
    rng = np.random.default_rng(1)
    g = {"a": rng.normal(size=3), "b": rng.normal(size=3)}
    assert M.marginal_log_likelihood(g, 0.5, 0.8) == pytest.approx(dense_mvn_loglik(g.values(), 0.5, 0.8), abs=1e-10)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.lists(st.floats(-3, 3), min_size=1, max_size=5), min_size=1, max_size=3),
       st.floats(0, 2), st.floats(0.05, 2))
def test_loglik_matches_dense_property(groups, tau, phi):
    g = {f"e{i}": r for i, r in enumerate(groups)}
    assert M.marginal_log_likelihood(g, tau, phi) == pytest.approx(dense_mvn_loglik(groups, tau, phi), abs=1e-10)


def test_loglik_errors():
    with pytest.raises(DomainError):
        M.marginal_log_likelihood({"a": [1.0, math.nan]}, 0.1, 1.0)
    with pytest.raises(DomainError):
        M.marginal_log_likelihood({"a": [1.0]}, 0.1, 0.0)
    with pytest.raises(DomainError):
        M.marginal_log_likelihood({"a": [1.0]}, -0.1, 1.0)


@pytest.mark.parametrize("seed", range(4))
def test_estimate_matches_grid_search(seed):
    rng = np.random.default_rng(seed)
    g = draw_groups(rng, 3, (2, 6), 0.5, 0.4)
    est = M.estimate_variance_components(g)
    t, p, ll = grid_argmax_loglik(list(g.values()))
    assert abs(est.tau - t) <= 1e-3 + 1e-9 and abs(est.phi - p) <= 1e-3 + 1e-9
    assert est.log_likelihood >= ll - 1e-9


def test_estimate_boundary_tau_zero():
    # Event means spread less than chance: ML sits on tau = 0.
    g = {"a": [1.0, -1.0, 0.5], "b": [-0.5, 0.4, 0.1]}
    est = M.estimate_variance_components(g)
    t, p, _ = grid_argmax_loglik(list(g.values()))
    assert est.tau == 0.0 and t == 0.0
    assert est.phi == pytest.approx(p, abs=1e-3)


def test_estimate_degenerate():
    est = M.estimate_variance_components({"a": [0.0, 0.0], "b": [0.0]})
    assert est.degenerate and est.tau == 0.0 and est.phi == M.PHI_FLOOR


@pytest.mark.parametrize("g", [{"a": [1.0, 2.0]}, {"a": [1.0], "b": [2.0]}])
def test_estimate_preconditions(g):
    with pytest.raises(EstimationError):
        M.estimate_variance_components(g)


def test_estimate_recovers_synthetic():
    g = draw_groups(np.random.default_rng(7), 200, 20, 0.4, 0.6)
    tau, phi, _ = M.estimate_variance_components(g)
    assert abs(tau - 0.4) <= 0.05 and abs(phi - 0.6) <= 0.05


def test_estimate_ordering_invariant():
    rng = np.random.default_rng(3)
    g = draw_groups(rng, 30, (2, 8), 0.3, 0.5)
    a = M.estimate_variance_components(g)
    keys = list(g)
    rng.shuffle(keys)
    h = {k: rng.permutation(g[k]) for k in keys}
    b = M.estimate_variance_components(h)
    assert (a.tau, a.phi, a.log_likelihood) == (b.tau, b.phi, b.log_likelihood)


def test_decompose_hand_example():
    d = M.decompose({"a": [1.0, 1.0]}, 1.0, 1.0)
    assert d.eta["a"] == pytest.approx(2 / 3, abs=1e-15)
    np.testing.assert_allclose(d.epsilon["a"], [1 / 3, 1 / 3], atol=1e-15)


def test_decompose_tau_zero():
    g = {"a": [0.3, -0.2], "b": [1.5]}
    d = M.decompose(g, 0.0, 0.5)
    assert d.eta == {"a": 0.0, "b": 0.0}
    np.testing.assert_array_equal(d.epsilon["a"], g["a"])


def test_decompose_large_n_limit():
    r = np.random.default_rng(0).normal(0.7, 0.5, 1_000_000)
    d = M.decompose({"a": r}, 0.4, 0.5)
    assert abs(d.eta["a"] - r.mean()) < 1e-4


def test_decompose_unknown_event():
    with pytest.raises(KeyError):
        M.decompose({"z": [1.0]}, 0.1, 0.1, events={"a"})


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.floats(-5, 5), min_size=1, max_size=8), min_size=1, max_size=6),
       st.floats(0, 2), st.floats(0.01, 2))
def test_decomposition_identity_and_shrinkage(groups, tau, phi):
    g = {f"e{i}": np.array(r) for i, r in enumerate(groups)}
    d = M.decompose(g, tau, phi)
    for k, r in g.items():
        assert np.all(np.abs(d.eta[k] + d.epsilon[k] - r) <= 1e-12)
        assert abs(d.eta[k]) <= abs(r.mean()) + 1e-12


def test_flat_epsilon_order():
    d = M.decompose({"a": [1.0, 2.0], "b": [3.0]}, 0.0, 1.0)
    np.testing.assert_array_equal(d.flat_epsilon(["a", "b", "a"]), [1.0, 3.0, 2.0])


@pytest.mark.parametrize("im, m, expected", [
    ("pga", 4.0, (0.511, 0.756)), ("pga", 4.5, (0.511, 0.756)), ("pga", 5.5, (0.392, 0.576)),
    ("pga", 7.0, (0.392, 0.576)), ("pgv", 3.0, (0.374, 0.670)), ("pgv", 6.5, (0.438, 0.547)),
])
def test_sigma_plateaus(im, m, expected):
    assert M.sigma_at_magnitude(M.TABLE_SIGMA[im], m) == expected


def test_sigma_pga_midpoint():
    tau, phi = M.sigma_at_magnitude(M.TABLE_SIGMA["pga"], 5.0)
    assert tau == pytest.approx(0.4515, abs=1e-12) and phi == pytest.approx(0.666, abs=1e-12)


@pytest.mark.parametrize("im", ["pga", "pgv"])
@pytest.mark.parametrize("brk", [4.5, 5.5])
def test_sigma_continuity(im, brk):
    lo = M.sigma_at_magnitude(M.TABLE_SIGMA[im], brk - 1e-9)
    hi = M.sigma_at_magnitude(M.TABLE_SIGMA[im], brk + 1e-9)
    assert np.allclose(lo, hi, atol=1e-9)


def test_sigma_nonfinite():
    with pytest.raises(DomainError):
        M.sigma_at_magnitude(M.TABLE_SIGMA["pga"], math.nan)


def synthetic_sigma_data(model, seed=0, n_events=1500, n_records=40):
    rng = np.random.default_rng(seed)
    groups, mags = {}, {}
    for i in range(n_events):
        m = float(rng.uniform(3.0, 7.5))
        tau, phi = M.sigma_at_magnitude(model, m)
        key = f"E{i:04d}"
        groups[key] = rng.normal(0, tau) + rng.normal(0, phi, n_records)
        mags[key] = m
    return groups, mags


def test_fit_sigma_model_recovers_table_values():
    truth = M.TABLE_SIGMA["pga"]
    groups, mags = synthetic_sigma_data(truth)
    tau, phi, _ = M.estimate_variance_components(groups)
    fit = M.fit_sigma_model(M.decompose(groups, tau, phi), mags)
    for name in ("tau1", "tau2", "phi1", "phi2"):
        assert abs(getattr(fit, name) - getattr(truth, name)) <= 0.05, name


def test_fit_sigma_model_missing_low_bin():
    groups = {f"e{i}": [0.1 * i, -0.1 * i] for i in range(5)}
    d = M.decompose(groups, 0.3, 0.4)
    with pytest.raises(EstimationError, match="low"):
        M.fit_sigma_model(d, {k: 6.0 for k in groups})


def test_fit_sigma_model_equal_eta_gives_zero_tau():
    groups = {"a": [1.0, -1.0], "b": [2.0, -2.0], "c": [0.5, 0.7], "d": [0.1, 0.3]}
    d = M.decompose(groups, 0.3, 0.4)
    fit = M.fit_sigma_model(d, {"a": 4.0, "b": 4.2, "c": 6.0, "d": 6.5})
    assert fit.tau1 == 0.0 and fit.tau2 > 0


def test_binned_single_value():
    (b,) = M.binned_residual_stats([0.3], [5.0], [1.0, 10.0])
    assert (b.mean, b.sd, b.count) == (0.3, 0.0, 1)
    assert b.center == pytest.approx(math.sqrt(10.0))


def test_binned_empty_and_uniform():
    stats = M.binned_residual_stats([2.0, 2.0, 2.0], [1.5, 1.5, 150.0], M.log_bin_edges(1, 1000, 3))
    assert [s.count for s in stats] == [2, 0, 1]
    assert math.isnan(stats[1].mean) and stats[0].mean == stats[2].mean == 2.0


def test_binned_range_check():
    with pytest.raises(ValueError):
        M.binned_residual_stats([1.0], [0.5], [1.0, 10.0])


def test_binned_unbiased_residuals():
    rng = np.random.default_rng(4)
    x = np.exp(rng.uniform(0, math.log(400), 5000))
    v = rng.normal(0, 0.6, 5000)
    for b in M.binned_residual_stats(v, x, M.log_bin_edges(1, 400, 10)):
        assert abs(b.mean) <= 3 * b.sd / math.sqrt(b.count)
