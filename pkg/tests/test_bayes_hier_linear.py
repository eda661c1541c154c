"""Hierarchical random-intercept sampler: likelihood, blocks, chains."""

import numpy as np
import pytest

import ks_checks
from sltb.bayes_hier_linear import (
    HIER_SPEC,
    ChainState,
    HierLinearModel,
    Tuning,
    block_names,
    build_hier_model,
    gen_alcohol_fixture,
    hier_linear_loglik,
    initial_state,
    mh_step,
    posterior_predictive_mse,
    run_chain,
)
from sltb.distributions import DEFAULT_L, DEFAULT_S, SltbParams, sltb_logpdf
from sltb.errors import ValidationError
from sltb.kernel import Rng


def tiny_model(n_rows=30, n_groups=3, k=2, seed=7):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n_rows), rng.normal(size=n_rows)])[:, :k]
    gi = np.arange(n_rows) % n_groups
    return HierLinearModel(
        X=X, coef_names=tuple(f"b{i}" for i in range(k)),
        group_index=gi, n_groups=n_groups,
        group_labels=tuple(f"g{i}" for i in range(n_groups)))


def tiny_y(model, seed=8):
    rng = np.random.default_rng(seed)
    return np.clip(rng.uniform(0.05, 0.95, model.n_rows), 0.0, 1.0)


@pytest.fixture(scope="module")
def small_fixture():
    return gen_alcohol_fixture(n_counties=12, rows=320, seed=424242)


# ------------------------------------------------------------- validation

def test_model_validation():
    with pytest.raises(ValidationError):
        HierLinearModel(X=np.ones((4, 1)), coef_names=("a", "b"),
                        group_index=np.zeros(4, dtype=int), n_groups=1,
                        group_labels=("g",))
    with pytest.raises(ValidationError):
        # group 1 never appears
        HierLinearModel(X=np.ones((3, 1)), coef_names=("a",),
                        group_index=np.array([0, 0, 2]), n_groups=3,
                        group_labels=("g0", "g1", "g2"))
    with pytest.raises(ValidationError):
        HierLinearModel(X=np.ones((2, 1)), coef_names=("a",),
                        group_index=np.zeros(2, dtype=int), n_groups=1,
                        group_labels=("g",), prior_variance=0.0)


def test_state_validation():
    with pytest.raises(ValidationError):
        ChainState(beta=np.array([np.nan]), u=np.zeros(1), eta=0.0, sigma2=1.0)
    with pytest.raises(ValidationError):
        ChainState(beta=np.zeros(1), u=np.zeros(1), eta=0.0, sigma2=0.0)


def test_tuning_validation():
    with pytest.raises(ValidationError):
        Tuning(beta_scales=np.array([-0.1]), eta_scale=0.1,
               u_scales=np.zeros(0), sigma_scale=0.1)
    model = tiny_model()
    t = Tuning.default(model)
    assert t.beta_scales.shape == (model.n_coefs,)
    assert t.u_scales.shape == (model.n_groups,)


# ------------------------------------------------------------- likelihood

def test_loglik_uniform_case():
    """mu = 1/2 with both beta shapes at 1 makes the density flat (~0 total)."""
    model = tiny_model(n_rows=6, k=1)
    state = ChainState(beta=np.zeros(1), u=np.zeros(3), eta=np.log(2.0),
                       sigma2=1.0)
    ll = hier_linear_loglik(state, model, tiny_y(model))
    assert ll == pytest.approx(0.0, abs=1e-6)


def test_loglik_matches_rowwise_sum():
    model = tiny_model(n_rows=25)
    y = tiny_y(model)
    state = ChainState(beta=np.array([0.3, -0.6]), u=np.array([0.2, -0.1, 0.4]),
                       eta=1.7, sigma2=0.8)
    lp = model.X @ state.beta + state.u[model.group_index]
    mu = 1.0 / (1.0 + np.exp(-lp))
    phi = float(np.exp(state.eta))
    manual = sum(
        sltb_logpdf(SltbParams(float(m), phi, DEFAULT_S, DEFAULT_L), float(g))
        for m, g in zip(mu, y))
    assert hier_linear_loglik(state, model, y) == pytest.approx(manual, abs=1e-12)


def test_loglik_finite_with_boundary_zeros():
    # rounding collapses the smallest draws onto exact zeros
    fx = gen_alcohol_fixture(n_counties=12, rows=320, seed=424242,
                             rounding_decimals=3)
    model, y = build_hier_model(fx.data)
    assert (y == 0.0).sum() > 0
    state = initial_state(model, y)
    assert np.isfinite(hier_linear_loglik(state, model, y))


def test_loglik_shape_mismatch():
    model = tiny_model()
    state = initial_state(model, tiny_y(model))
    with pytest.raises(ValidationError):
        hier_linear_loglik(state, model, np.zeros(model.n_rows + 1))


# ----------------------------------------------------------------- blocks

def test_degenerate_scales_accept_and_hold():
    model = tiny_model()
    y = tiny_y(model)
    state = initial_state(model, y)
    frozen = Tuning(beta_scales=np.zeros(model.n_coefs), eta_scale=0.0,
                    u_scales=np.zeros(model.n_groups), sigma_scale=0.0)
    rng = Rng(5)
    cur = state
    for _ in range(100):
        cur = mh_step(cur, model, y, rng, frozen)
    assert cur.iteration == 100
    assert np.array_equal(cur.beta, state.beta)
    assert np.array_equal(cur.u, state.u)
    assert cur.eta == state.eta and cur.sigma2 == state.sigma2
    assert cur.accept_counts == cur.proposal_counts  # every proposal accepted


def test_mh_step_counts_every_block():
    model = tiny_model()
    y = tiny_y(model)
    state = initial_state(model, y)
    rng = Rng(6)
    out = mh_step(state, model, y, rng, Tuning.default(model))
    out = mh_step(out, model, y, rng, Tuning.default(model))
    names = block_names(model)
    assert len(out.proposal_counts) == len(names)
    assert all(p == 2 for p in out.proposal_counts)
    assert all(0 <= a <= 2 for a in out.accept_counts)


def test_sigma_stays_inside_prior_support():
    model = tiny_model()
    y = tiny_y(model)
    cur = initial_state(model, y)
    wild = Tuning(beta_scales=np.full(model.n_coefs, 0.3), eta_scale=0.2,
                  u_scales=np.full(model.n_groups, 0.5), sigma_scale=5.0)
    rng = Rng(7)
    for _ in range(300):
        cur = mh_step(cur, model, y, rng, wild)
        assert 0.0 < np.sqrt(cur.sigma2) < model.sigma_upper


# ----------------------------------------------------------------- chains

def test_chain_determinism(small_fixture):
    model, y = build_hier_model(small_fixture.data)
    a = run_chain(model, y, iters=250, burnin=150, thin=2, seed=99)
    b = run_chain(model, y, iters=250, burnin=150, thin=2, seed=99)
    assert np.array_equal(a.draws, b.draws)
    assert a.summary.acceptance_rates == b.summary.acceptance_rates
    c = run_chain(model, y, iters=250, burnin=150, thin=2, seed=100)
    assert not np.array_equal(a.draws, c.draws)


def test_quartiles_ordered(small_fixture):
    model, y = build_hier_model(small_fixture.data)
    res = run_chain(model, y, iters=300, burnin=200, thin=1, seed=3)
    s = res.summary
    assert np.all(s.q1 <= s.median) and np.all(s.median <= s.q3)
    assert np.all(s.q025 <= s.q1) and np.all(s.q3 <= s.q975)
    assert s.n_draws == 100
    assert res.draws.shape == (100, len(res.columns))


def test_no_adaptation_after_burnin():
    model = tiny_model()
    y = tiny_y(model)
    start = Tuning.default(model)
    res = run_chain(model, y, iters=600, burnin=0, thin=5, seed=11,
                    tuning=start)
    assert np.array_equal(res.tuning.beta_scales, start.beta_scales)
    assert res.tuning.sigma_scale == start.sigma_scale
    adapted = run_chain(model, y, iters=600, burnin=400, thin=5, seed=11,
                        tuning=start)
    moved = (not np.allclose(adapted.tuning.beta_scales, start.beta_scales)
             or adapted.tuning.eta_scale != start.eta_scale
             or not np.allclose(adapted.tuning.u_scales, start.u_scales)
             or adapted.tuning.sigma_scale != start.sigma_scale)
    assert moved


def test_extreme_scales_flagged():
    model = tiny_model()
    y = tiny_y(model)
    bad = Tuning(beta_scales=np.full(model.n_coefs, 1e6), eta_scale=1e6,
                 u_scales=np.full(model.n_groups, 1e6), sigma_scale=0.0)
    res = run_chain(model, y, iters=300, burnin=0, thin=1, seed=2, tuning=bad)
    assert res.summary.warnings
    assert any("b0" in w for w in res.summary.warnings)


def test_chain_validation():
    model = tiny_model()
    y = tiny_y(model)
    with pytest.raises(ValidationError):
        run_chain(model, y, iters=100, burnin=100)
    with pytest.raises(ValidationError):
        run_chain(model, y, iters=100, burnin=10, thin=0)
    with pytest.raises(ValidationError):
        run_chain(model, np.append(y, 0.5), iters=100, burnin=10)


# ---------------------------------------------------------------- fixture

def test_fixture_structure():
    fx = gen_alcohol_fixture()
    y = fx.data.numeric("y")
    assert fx.data.n_rows == 1340
    assert len(set(fx.data.factor("county"))) == 56
    # default draws come straight from the fitted law: strictly interior
    assert np.all((y > 0.0) & (y < 1.0))
    med = fx.data.numeric("medDays")
    assert abs(med.mean()) < 1e-12
    assert abs(med.std(ddof=1) - 1.0) < 1e-12
    again = gen_alcohol_fixture()
    assert np.array_equal(y, again.data.numeric("y"))
    other = gen_alcohol_fixture(seed=1)
    assert not np.array_equal(y, other.data.numeric("y"))


def test_fixture_rounding_collapses_small_draws_to_zero():
    fx = gen_alcohol_fixture(rounding_decimals=3)
    y = fx.data.numeric("y")
    assert (y == 0.0).sum() >= 20
    assert (y == 1.0).sum() == 0
    assert y.min() == 0.0 and y.max() < 1.0


def test_build_hier_model(small_fixture):
    model, y = build_hier_model(small_fixture.data)
    assert model.coef_names[0] == "(Intercept)"
    assert set(model.coef_names) == {
        "(Intercept)", "medDays", "genderM", "grade9", "grade11",
        "grade9:genderM", "grade11:genderM"}
    assert model.n_groups == 12
    assert y.shape == (model.n_rows,)
    assert HIER_SPEC.response == "y"


def test_recovery_and_predictive_mse(small_fixture):
    """Moderate chain on a small fixture recovers most generator effects."""
    model, y = build_hier_model(small_fixture.data)
    res = run_chain(model, y, iters=4000, burnin=1500, thin=5, seed=12)
    s = res.summary
    hits = 0
    for name in model.coef_names:
        row = s.row(name)
        truth = small_fixture.beta[name]
        hits += row["q025"] <= truth <= row["q975"]
    assert hits >= 5
    ppm = posterior_predictive_mse(res, model, y)
    assert 0.0 < ppm < np.var(y)  # beats the trivial flat predictor


# -------------------------------------------------------------- KS checks

def test_prior_only_intercept_ks():
    r = ks_checks.hier_beta0_prior_ks()
    assert r.pvalue > ks_checks.KS_LEVEL


def test_pinned_sigma_u_prior_ks():
    r = ks_checks.hier_u_prior_ks()
    assert r.pvalue > ks_checks.KS_LEVEL


def test_sigma_uniform_prior_ks():
    r = ks_checks.hier_sigma_prior_ks()
    assert r.pvalue > ks_checks.KS_LEVEL
