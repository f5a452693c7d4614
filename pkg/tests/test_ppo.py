import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppoher.env import EnvConfig, PredatorPreyEnv, goal_slices
from ppoher.nn import LOG_STD_CEILING, LOG_STD_FLOOR, GaussianPolicy, ValueNet
from ppoher.ppo import (
    Episode,
    NonFiniteLossError,
    PpoConfig,
    RolloutBuffer,
    approx_kl,
    collect_rollout,
    compute_gae,
    evaluate,
    make_optimizer,
    normalize_advantages,
    ppo_losses_and_grads,
    ppo_update,
)


def agent(cfg, seed=0, hidden=(64, 64)):
    rng = np.random.default_rng(seed)
    return GaussianPolicy(cfg.obs_dim, cfg.dims, hidden, rng=rng), ValueNet(cfg.obs_dim, hidden, rng=rng)


def brute_force_gae(rewards, values, last_value, bootstrap, gamma, lam):
    """Double loop over the explicit TD-residual sum."""
    n = len(rewards)
    nxt = [values[t + 1] if t + 1 < n else (last_value if bootstrap else 0.0) for t in range(n)]
    deltas = [rewards[t] + gamma * nxt[t] - values[t] for t in range(n)]
    return [sum((gamma * lam) ** (k - t) * deltas[k] for k in range(t, n)) for t in range(n)]


def synthetic_episode(rewards, values, terminated, bootstrap_value=None, dims=1):
    n = len(rewards)
    term = np.zeros(n, dtype=bool)
    trunc = np.zeros(n, dtype=bool)
    term[-1] = terminated
    trunc[-1] = not terminated
    return Episode(
        dims=dims,
        obs=np.zeros((n + 1, 5 * dims)),
        actions=np.zeros((n, dims)),
        log_probs=np.zeros(n),
        values=np.asarray(values, dtype=float),
        rewards=np.asarray(rewards, dtype=float),
        terminated=term,
        truncated=trunc,
        bootstrap_value=bootstrap_value,
    )


def test_ppo_config_defaults_and_validation():
    c = PpoConfig()
    assert (c.n_steps, c.minibatch_size, c.n_epochs, c.lr) == (2048, 64, 10, 3e-4)
    assert (c.gamma, c.gae_lambda, c.clip_range, c.target_kl) == (0.99, 0.95, 0.2, 0.05)
    for bad in (dict(gamma=0), dict(gae_lambda=1.5), dict(clip_range=0), dict(target_kl=0)):
        with pytest.raises(ValueError):
            PpoConfig(**bad)


def test_collect_whole_episodes_arithmetic():
    cfg = EnvConfig(size=100, prey_policy="static", spawn_policy="apart")
    pol, vn = agent(cfg)
    env = PredatorPreyEnv(cfg)
    buf = collect_rollout(pol, vn, env, PpoConfig(n_steps=100), np.random.default_rng(0))
    assert len(buf.episodes) == 5
    assert buf.n_transitions == 100
    for ep in buf.episodes:
        ep.validate()
        assert ep.ended_truncated and ep.rewards[-1] == -1.0


def test_collect_trivial_success():
    cfg = EnvConfig(size=0.5, prey_policy="static", spawn_policy="random")
    pol, vn = agent(cfg)
    buf = collect_rollout(pol, vn, PredatorPreyEnv(cfg), PpoConfig(n_steps=50), np.random.default_rng(1))
    assert len(buf.episodes) == 50
    for ep in buf.episodes:
        assert len(ep) == 1 and ep.ended_terminated and ep.rewards[0] == 1.0
        assert ep.bootstrap_value == 0.0


def test_collected_log_probs_replay():
    cfg = EnvConfig(prey_policy="repel", spawn_policy="random")
    pol, vn = agent(cfg, seed=2)
    pol.log_std[:] = [-0.3, 0.2, 0.0]
    buf = collect_rollout(pol, vn, PredatorPreyEnv(cfg), PpoConfig(n_steps=300), np.random.default_rng(2))
    data = buf.flat()
    np.testing.assert_allclose(pol.log_prob(data["obs"], data["actions"]), data["log_probs"], rtol=0, atol=1e-12)
    np.testing.assert_allclose(vn(data["obs"]), data["values"], rtol=0, atol=1e-12)
    # the achieved-goal slice is the predator position inside the state
    _, ach, _ = goal_slices(3)
    np.testing.assert_array_equal(data["obs"][:, ach], data["obs"][:, :3])


def test_gae_single_terminated_transition():
    buf = RolloutBuffer([synthetic_episode([1.0], [0.3], terminated=True)])
    compute_gae(buf, gamma=0.99, lam=0.95)
    ep = buf.episodes[0]
    assert ep.advantages[0] == pytest.approx(0.7, abs=1e-15)
    assert ep.returns[0] == pytest.approx(1.0, abs=1e-15)


def test_gae_undiscounted_sum():
    rng = np.random.default_rng(0)
    r = rng.normal(size=12)
    v = rng.normal(size=12)
    buf = RolloutBuffer([synthetic_episode(r, v, terminated=False, bootstrap_value=0.8)])
    compute_gae(buf, gamma=1.0, lam=1.0)
    adv = buf.episodes[0].advantages
    for t in range(12):
        assert adv[t] == pytest.approx(r[t:].sum() + 0.8 - v[t], abs=1e-12)


def test_gae_lambda_zero_is_td_residual():
    r, v = [0.0, 0.0, -1.0], [0.1, 0.2, 0.3]
    buf = RolloutBuffer([synthetic_episode(r, v, terminated=False, bootstrap_value=0.5)])
    compute_gae(buf, gamma=0.9, lam=0.0)
    expected = [0.0 + 0.9 * 0.2 - 0.1, 0.0 + 0.9 * 0.3 - 0.2, -1.0 + 0.9 * 0.5 - 0.3]
    np.testing.assert_array_equal(buf.episodes[0].advantages, expected)


def test_gae_matches_brute_force_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 21))
        term = bool(rng.integers(2))
        r, v, last = rng.normal(size=n), rng.normal(size=n), float(rng.normal())
        gamma, lam = float(rng.uniform(0.5, 1)), float(rng.uniform(0, 1))
        buf = RolloutBuffer([synthetic_episode(r, v, term, None if term else last)])
        compute_gae(buf, gamma=gamma, lam=lam)
        oracle = brute_force_gae(r, v, last, not term, gamma, lam)
        np.testing.assert_allclose(buf.episodes[0].advantages, oracle, rtol=0, atol=1e-10)
        np.testing.assert_allclose(buf.episodes[0].returns, np.array(oracle) + v, rtol=0, atol=1e-10)


def test_gae_missing_bootstrap():
    buf = RolloutBuffer([synthetic_episode([0.0], [0.0], terminated=False, bootstrap_value=None)])
    with pytest.raises(ValueError):
        compute_gae(buf)


def fresh_buffer(cfg, pol, vn, n_steps=256, seed=0):
    buf = collect_rollout(pol, vn, PredatorPreyEnv(cfg, np.random.default_rng(seed)), PpoConfig(n_steps=n_steps),
                          np.random.default_rng(seed))
    return compute_gae(buf, vn, 0.99, 0.95)


def test_identical_policy_ratio_one():
    cfg = EnvConfig(prey_policy="attract", spawn_policy="random")
    pol, vn = agent(cfg)
    buf = fresh_buffer(cfg, pol, vn)
    data = buf.flat()
    data["advantages"] = normalize_advantages(data["advantages"])
    info, _ = ppo_losses_and_grads(pol, vn, data, PpoConfig())
    assert info["approx_kl"] == pytest.approx(0.0, abs=1e-12)
    assert info["clip_fraction"] == 0.0
    assert info["policy_loss"] == pytest.approx(-np.mean(data["advantages"]), abs=1e-12)


def test_clip_arithmetic():
    cfg = EnvConfig(dims=1)
    pol, vn = agent(cfg, hidden=(4,))
    obs = np.zeros((1, 5))
    act = np.array([[0.3]])
    new_lp = pol.log_prob(obs, act)
    batch = {
        "obs": obs,
        "actions": act,
        "log_probs": new_lp - math.log(1.5),
        "advantages": np.array([2.0]),
        "returns": np.array([0.0]),
    }
    info, grads = ppo_losses_and_grads(pol, vn, batch, PpoConfig(clip_range=0.2))
    assert info["policy_loss"] == pytest.approx(-1.2 * 2.0, abs=1e-12)
    # clipped branch carries no policy gradient
    assert all(np.all(g == 0) for g in grads[: len(pol.parameters())])


def test_approx_kl_nonnegative_random_pairs():
    rng = np.random.default_rng(3)
    cfg = EnvConfig()
    for i in range(50):
        p1, _ = agent(cfg, seed=i, hidden=(8,))
        p2, _ = agent(cfg, seed=1000 + i, hidden=(8,))
        p2.log_std[:] = rng.uniform(-2, 1, 3)
        obs = rng.normal(size=(32, 15))
        act = rng.normal(size=(32, 3))
        assert approx_kl(p2.log_prob(obs, act) - p1.log_prob(obs, act)) >= -1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=200))
def test_advantage_normalization(values):
    adv = np.array(values)
    out = normalize_advantages(adv)
    assert abs(out.mean()) < 1e-10
    if adv.std() > 1e-6:
        assert abs(out.std() - 1) < 1e-6


def test_early_stop_after_first_epoch():
    cfg = EnvConfig(prey_policy="attract", spawn_policy="random")
    pol, vn = agent(cfg)
    buf = fresh_buffer(cfg, pol, vn)
    pc = PpoConfig(target_kl=1e-12, n_epochs=10)
    stats = ppo_update(pol, vn, buf, pc, make_optimizer(pol, vn, pc), np.random.default_rng(0))
    assert stats.epochs_run == 1
    assert stats.kl_history[0] > 1e-12


def test_epochs_run_contract():
    cfg = EnvConfig(prey_policy="static")
    pol, vn = agent(cfg)
    buf = fresh_buffer(cfg, pol, vn, n_steps=512)
    pc = PpoConfig(lr=3e-3, target_kl=0.01, n_epochs=8)
    stats = ppo_update(pol, vn, buf, pc, make_optimizer(pol, vn, pc), np.random.default_rng(1))
    assert 1 <= stats.epochs_run <= 8
    assert len(stats.kl_history) == stats.epochs_run
    assert all(k <= pc.target_kl for k in stats.kl_history[:-1])
    if stats.epochs_run < 8:
        assert stats.kl_history[-1] > pc.target_kl


def test_log_std_stays_in_bounds_during_updates():
    cfg = EnvConfig(prey_policy="static")
    pol, vn = agent(cfg)
    pol.log_std[:] = [LOG_STD_FLOOR + 1e-3, 0.0, LOG_STD_CEILING - 1e-3]
    buf = fresh_buffer(cfg, pol, vn)
    pc = PpoConfig(lr=0.05, ent_coef=5.0, target_kl=None, n_epochs=2)
    opt = make_optimizer(pol, vn, pc)
    ppo_update(pol, vn, buf, pc, opt, np.random.default_rng(0))
    assert np.all(pol.log_std >= LOG_STD_FLOOR) and np.all(pol.log_std <= LOG_STD_CEILING)


def test_ppo_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    cfg = EnvConfig(dims=2)
    pc = PpoConfig(ent_coef=0.01, clip_range=0.2)
    for case in range(5):
        pol, vn = agent(cfg, seed=case, hidden=(6, 5))
        pol.log_std[:] = rng.uniform(-0.5, 0.5, 2)
        n = 8
        obs = rng.normal(size=(n, 10))
        act = rng.normal(size=(n, 2))
        batch = {
            "obs": obs,
            "actions": act,
            "log_probs": pol.log_prob(obs, act) + rng.normal(0, 0.3, n),
            "advantages": rng.normal(size=n),
            "returns": rng.normal(size=n),
        }
        params = pol.parameters() + vn.parameters()
        _, grads = ppo_losses_and_grads(pol, vn, batch, pc)

        def loss():
            return ppo_losses_and_grads(pol, vn, batch, pc)[0]["total"]

        h = 1e-5
        for p, g in zip(params, grads):
            num = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                fp = loss()
                p[idx] = old - h
                fm = loss()
                p[idx] = old
                num[idx] = (fp - fm) / (2 * h)
            err = np.abs(num - g) / np.maximum(np.maximum(np.abs(num), np.abs(g)), 1e-6)
            assert err.max() < 1e-4


def test_nonfinite_loss_raises():
    cfg = EnvConfig()
    pol, vn = agent(cfg, hidden=(4,))
    batch = {
        "obs": np.zeros((2, 15)),
        "actions": np.zeros((2, 3)),
        "log_probs": np.array([np.nan, 0.0]),
        "advantages": np.ones(2),
        "returns": np.zeros(2),
    }
    with pytest.raises(NonFiniteLossError):
        ppo_losses_and_grads(pol, vn, batch, PpoConfig())


class _Pursuer:
    """Mean network stand-in that heads straight for the desired goal."""

    def __init__(self, dims, gain=1.0):
        self.dims = dims
        self.gain = gain

    def predict_one(self, obs):
        d = self.dims
        return self.gain * (obs[4 * d:] - obs[3 * d:4 * d])


class _Policy:
    def __init__(self, mean_net):
        self.mean_net = mean_net


def test_evaluate_direct_pursuit_static_prey():
    cfg = EnvConfig(prey_policy="static", spawn_policy="random")
    rate, ret = evaluate(_Policy(_Pursuer(3)), PredatorPreyEnv(cfg, np.random.default_rng(0)), 50)
    assert rate == 1.0 and ret == 1.0


def test_evaluate_zero_action_prey_within_reach():
    cfg = EnvConfig(prey_policy="static", spawn_policy="random", size=0.5)
    rate, ret = evaluate(_Policy(_Pursuer(3, gain=0.0)), PredatorPreyEnv(cfg, np.random.default_rng(0)), 20)
    assert rate == 1.0 and ret == 1.0


def test_untrained_policy_fails_straight_away_apart():
    cfg = EnvConfig(prey_policy="straight_away", spawn_policy="apart")
    pol, vn = agent(cfg)
    rate, _ = evaluate(pol, PredatorPreyEnv(cfg, np.random.default_rng(0)), 100)
    assert rate < 0.05
    # stochastic untrained rollouts as well
    buf = collect_rollout(pol, vn, PredatorPreyEnv(cfg, np.random.default_rng(1)), PpoConfig(n_steps=2000),
                          np.random.default_rng(1))
    assert np.mean([ep.ended_terminated for ep in buf.episodes]) < 0.05


def test_evaluate_requires_episodes():
    with pytest.raises(ValueError):
        evaluate(_Policy(_Pursuer(3)), PredatorPreyEnv(), 0)
