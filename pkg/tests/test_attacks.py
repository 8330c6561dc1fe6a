"""Attack runners on the blob task: invariants, budgets, replay."""

import numpy as np
import pytest

from evasionlab.attacks import (AttackSetting, EnsConfig, PrismConfig,
                                QoConfig, run_ens, run_prism, run_prism_r,
                                run_qo)

EPS = 0.05
TOL = 1e-9


def _settings(zoo_obj, budget, k=1, limit=None):
    """Attackable (goal, start) pairs from consecutive eval items."""
    oracle = zoo_obj.oracle_api()
    items = zoo_obj.eval_ds.items
    out = []
    for i in range(len(items)):
        x_goal = items[i][0]
        x_start, target = items[(i + 1) % len(items)]
        if oracle.peek_label(x_start) != target:
            continue
        if oracle.peek_label(x_goal) == target:
            continue
        api = zoo_obj.victim_api(budget=budget, k=k)
        out.append(AttackSetting(
            x_start=x_start, x_goal=x_goal, target=target, api=api,
            epsilon=EPS, start_label=target, setting_id=i,
        ))
        if limit and len(out) >= limit:
            break
    return out


def _check_outcome(outcome, setting, zoo_obj):
    assert outcome.ball_violations == 0
    assert outcome.x_adv.min() >= 0.0 and outcome.x_adv.max() <= 1.0
    assert setting.api.ledger.used == outcome.queries_used
    if setting.budget is not None:
        assert outcome.queries_used <= setting.budget
    if outcome.success:
        # the claimed point must replay: inside the ball, victim says target
        assert np.abs(outcome.x_adv - setting.x_goal).max() <= EPS + TOL
        assert zoo_obj.oracle_api().peek_label(outcome.x_adv) == setting.target


def test_setting_validation(blob_zoo):
    api = blob_zoo.victim_api(budget=10)
    ok = np.full((1, 1, 2), 0.5)
    with pytest.raises(ValueError, match="shapes differ"):
        AttackSetting(x_start=ok, x_goal=np.full((1, 2, 2), 0.5), target=0, api=api)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        AttackSetting(x_start=ok - 2.0, x_goal=ok, target=0, api=api)
    with pytest.raises(ValueError, match="epsilon"):
        AttackSetting(x_start=ok, x_goal=ok, target=0, api=api, epsilon=1.5)
    with pytest.raises(ValueError, match="target"):
        AttackSetting(x_start=ok, x_goal=ok, target=-1, api=api)
    s = AttackSetting(x_start=ok, x_goal=ok, target=0, api=api, budget=7)
    assert s.api.ledger.budget == 7


def test_pi_methods_reject_bad_start(blob_zoo):
    setting = _settings(blob_zoo, budget=100, limit=1)[0]
    setting.start_label = (setting.target + 1) % blob_zoo.n_classes
    with pytest.raises(ValueError, match="classifies as"):
        run_prism(setting, blob_zoo.ensemble())
    with pytest.raises(ValueError, match="classifies as"):
        run_qo(setting)


def test_ens_succeeds_somewhere_and_replays(blob_zoo):
    ens = blob_zoo.ensemble()
    wins = 0
    for setting in _settings(blob_zoo, budget=1000, limit=6):
        outcome = run_ens(setting, ens)
        assert outcome.method == "ENS"
        _check_outcome(outcome, setting, blob_zoo)
        wins += outcome.success
    assert wins >= 1


def test_ens_budget_one_spends_one(blob_zoo):
    setting = _settings(blob_zoo, budget=1, limit=1)[0]
    outcome = run_ens(setting, blob_zoo.ensemble())
    assert outcome.queries_used <= 1
    # warmup steps are query-free
    assert sum(1 for r in outcome.trace if not r.queried) >= EnsConfig().warmup


def test_prism_succeeds_and_free_phase_is_free(blob_zoo):
    ens = blob_zoo.ensemble()
    wins = 0
    for setting in _settings(blob_zoo, budget=1000, limit=6):
        outcome = run_prism(setting, ens)
        _check_outcome(outcome, setting, blob_zoo)
        wins += outcome.success
        # while d > epsilon no trace step may carry a charge
        free = [r for r in outcome.trace if r.d > EPS + TOL]
        assert free and all(not r.queried for r in free)
        assert sum(1 for r in outcome.trace if r.queried) == outcome.queries_used
        # ball radius never grows
        ds = [r.d for r in outcome.trace]
        assert all(b <= a + TOL for a, b in zip(ds, ds[1:]))
    assert wins >= 1


def test_prism_r_deterministic_per_seed(blob_zoo):
    ens = blob_zoo.ensemble()
    a = run_prism_r(_settings(blob_zoo, budget=500, limit=1)[0], ens, rng=42)
    b = run_prism_r(_settings(blob_zoo, budget=500, limit=1)[0], ens, rng=42)
    c = run_prism_r(_settings(blob_zoo, budget=500, limit=1)[0], ens, rng=43)
    np.testing.assert_array_equal(a.x_adv, b.x_adv)
    assert a.queries_used == b.queries_used
    assert a.success == b.success
    assert (a.queries_used != c.queries_used
            or not np.array_equal(a.x_adv, c.x_adv)
            or a.success == c.success)  # different seed may still tie


def test_prism_momentum_reset_flag(blob_zoo):
    ens = blob_zoo.ensemble()
    setting = _settings(blob_zoo, budget=200, limit=1)[0]
    cfg = PrismConfig(reset_momentum_on_backtrack=True)
    outcome = run_prism(setting, ens, cfg)
    _check_outcome(outcome, setting, blob_zoo)


def test_qo_small_budget_cannot_finish_ladder(blob_zoo):
    # the radius ladder needs ~90 accepted rounds of ~101 queries each,
    # so a 1000-query cap can never reach the epsilon ball
    setting = _settings(blob_zoo, budget=1000, limit=1)[0]
    outcome = run_qo(setting)
    assert not outcome.success
    assert outcome.queries_used <= 1000


def test_qo_generous_budget_succeeds(blob_zoo):
    wins = 0
    for setting in _settings(blob_zoo, budget=100000, limit=3):
        outcome = run_qo(setting, rng=1)
        _check_outcome(outcome, setting, blob_zoo)
        if outcome.success:
            wins += 1
            assert outcome.queries_used >= 9000  # ladder cost floor
    assert wins >= 1


def test_qo_deterministic_per_seed(blob_zoo):
    a = run_qo(_settings(blob_zoo, budget=3000, limit=1)[0], rng=5)
    b = run_qo(_settings(blob_zoo, budget=3000, limit=1)[0], rng=5)
    np.testing.assert_array_equal(a.x_adv, b.x_adv)
    assert a.queries_used == b.queries_used


def test_config_validation():
    with pytest.raises(ValueError, match="eta"):
        EnsConfig(eta=0.0)
    with pytest.raises(ValueError, match="warmup"):
        EnsConfig(warmup=0)
    with pytest.raises(ValueError, match="positive"):
        PrismConfig(delta_eps=0.0)
    with pytest.raises(ValueError, match="patience"):
        PrismConfig(patience=0)
    with pytest.raises(ValueError, match="eta_min"):
        QoConfig(eta0=1e-5, eta_min=1e-2)
    with pytest.raises(ValueError, match="positive"):
        QoConfig(d0=0.0)


def test_prism_iteration_cap():
    cfg = PrismConfig(max_iterations=7)
    assert cfg.iteration_cap(0.05) == 7
    auto = PrismConfig()
    assert auto.iteration_cap(0.05) == int(5 * (0.45 / 0.005)) + 1000


def test_outcome_perturbation(blob_zoo):
    setting = _settings(blob_zoo, budget=50, limit=1)[0]
    outcome = run_ens(setting, blob_zoo.ensemble())
    np.testing.assert_allclose(
        outcome.perturbation(setting.x_goal), outcome.x_adv - setting.x_goal)
