import numpy as np
import pytest

from mars.envs import (EnvConfig, GoalGridworldEnv, PredatorPreyEnv, make_env,
                       obs_dim, optimal_return_bound,
                       optimal_return_bound_from)
from mars.errors import ConfigError, UsageError


def cfg(**kw):
    base = dict(grid_size=5, n_agents=3, episode_limit=10)
    base.update(kw)
    return EnvConfig(**base)


def test_reset_deterministic():
    a = PredatorPreyEnv(cfg())
    b = PredatorPreyEnv(cfg())
    oa = a.reset(123)
    ob = b.reset(123)
    for x, y in zip(oa, ob):
        np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.target, b.target)


def test_reset_places_agents_and_target_distinct():
    env = PredatorPreyEnv(cfg())
    env.reset(7)
    cells = {tuple(p) for p in env.positions} | {tuple(env.target)}
    assert len(cells) == env.n + 1


def test_max_density_placement_is_valid():
    env = PredatorPreyEnv(EnvConfig(grid_size=3, n_agents=8, episode_limit=5))
    obs = env.reset(0)
    assert len(obs) == 8


def test_observation_dimension():
    assert obs_dim(3) == 9
    env = PredatorPreyEnv(cfg(n_agents=3))
    obs = env.reset(1)
    assert all(o.shape == (9,) for o in obs)


def test_observation_layout():
    env = PredatorPreyEnv(cfg(grid_size=5, n_agents=2))
    obs = env.set_state([[1, 2], [3, 0]], [4, 4])
    s = 4.0
    np.testing.assert_allclose(obs[0][:2], [1 / s, 2 / s])
    np.testing.assert_allclose(obs[0][2:4], [(4 - 1) / s, (4 - 2) / s])
    np.testing.assert_allclose(obs[0][4:6], [(3 - 1) / s, (0 - 2) / s])
    assert obs[0][-1] == 0.0


def test_wall_rule_left_edge():
    env = PredatorPreyEnv(cfg(n_agents=2))
    env.set_state([[2, 0], [4, 4]], [0, 0])
    env.step([3, 4])  # left, stay
    np.testing.assert_array_equal(env.positions[0], [2, 0])


def test_two_predators_on_prey_capture():
    env = PredatorPreyEnv(cfg(n_agents=2, reward_capture=1.0))
    env.set_state([[2, 1], [2, 3]], [2, 2])
    res = env.step([1, 3])  # both move onto the prey
    assert res.reward == 1.0
    assert res.done
    assert res.info["success"]


def test_single_predator_is_not_a_capture():
    env = PredatorPreyEnv(cfg(n_agents=2))
    env.set_state([[2, 1], [0, 0]], [2, 2])
    res = env.step([1, 4])
    assert res.reward == -0.01
    assert not res.done


def test_step_after_done_raises():
    env = PredatorPreyEnv(cfg(n_agents=2, episode_limit=1))
    env.set_state([[0, 0], [4, 4]], [2, 2])
    env.step([4, 4])
    with pytest.raises(UsageError):
        env.step([4, 4])


def test_bad_actions_rejected():
    env = PredatorPreyEnv(cfg())
    env.reset(0)
    with pytest.raises(UsageError):
        env.step([0, 1])  # wrong arity
    with pytest.raises(UsageError):
        env.step([0, 1, 9])  # out of range


def test_episode_never_exceeds_limit():
    env = PredatorPreyEnv(cfg(n_agents=1, episode_limit=4))
    env.reset(3)
    steps = 0
    while not env.done:
        env.step([4])
        steps += 1
    assert steps <= 4


def test_prey_flees_nearest_predator_with_tie_order():
    env = PredatorPreyEnv(cfg(n_agents=1))
    # predator below the prey: fleeing up (away) is the best move
    env.set_state([[3, 2]], [2, 2])
    env.step([4])
    np.testing.assert_array_equal(env.target, [1, 2])


def test_action_sequence_fully_deterministic():
    rng = np.random.default_rng(5)
    acts = rng.integers(0, 5, size=(8, 3))
    rewards = []
    for _ in range(2):
        env = PredatorPreyEnv(cfg())
        env.reset(99)
        rs = []
        for a in acts:
            if env.done:
                break
            rs.append(env.step(a).reward)
        rewards.append(rs)
    assert rewards[0] == rewards[1]


def test_gridworld_requires_all_agents_on_goal():
    env = GoalGridworldEnv(cfg(n_agents=2))
    env.set_state([[2, 1], [0, 0]], [2, 2])
    res = env.step([1, 4])  # only one agent reaches the goal
    assert res.reward == -0.01
    env2 = GoalGridworldEnv(cfg(n_agents=2))
    env2.set_state([[2, 1], [2, 3]], [2, 2])
    res2 = env2.step([1, 3])
    assert res2.reward == 1.0 and res2.done


def test_make_env_rejects_unknown_kind():
    with pytest.raises(ConfigError):
        make_env("space_invaders", cfg())


def test_config_validation():
    with pytest.raises(ConfigError):
        EnvConfig(grid_size=2, n_agents=1, episode_limit=5).validate()
    with pytest.raises(ConfigError):
        EnvConfig(grid_size=3, n_agents=9, episode_limit=5).validate()


# --- optimal return bound -------------------------------------------------

def test_bound_zero_horizon():
    assert optimal_return_bound("predator_prey",
                                cfg(episode_limit=0, grid_size=3), 0) == 0.0


def test_bound_adjacent_capture_three_by_three():
    c = EnvConfig(grid_size=3, n_agents=2, episode_limit=2)
    bound = optimal_return_bound_from("predator_prey", c,
                                      [[1, 0], [1, 2]], [1, 1])
    assert bound == 1.0  # both predators one step from the prey: capture now


def test_bound_refuses_large_instances():
    with pytest.raises(ConfigError):
        optimal_return_bound("predator_prey",
                             EnvConfig(grid_size=6, n_agents=2,
                                       episode_limit=3), 0)
    with pytest.raises(ConfigError):
        optimal_return_bound("predator_prey",
                             EnvConfig(grid_size=4, n_agents=4,
                                       episode_limit=3), 0)


def test_bound_nonincreasing_in_grid_size():
    # same placement, bigger arena: the prey has more room, bound cannot rise
    for T in (3, 5):
        small = optimal_return_bound_from(
            "predator_prey", EnvConfig(grid_size=4, n_agents=2, episode_limit=T),
            [[0, 0], [3, 3]], [2, 2])
        large = optimal_return_bound_from(
            "predator_prey", EnvConfig(grid_size=5, n_agents=2, episode_limit=T),
            [[0, 0], [3, 3]], [2, 2])
        assert large <= small + 1e-12


def test_bound_is_an_upper_bound_for_random_play():
    c = EnvConfig(grid_size=4, n_agents=2, episode_limit=5)
    env = PredatorPreyEnv(c)
    env.reset(17)
    pos, tgt = env.positions.copy(), env.target.copy()
    bound = optimal_return_bound_from("predator_prey", c, pos, tgt)
    rng = np.random.default_rng(0)
    for _ in range(30):
        env2 = PredatorPreyEnv(c)
        env2.set_state(pos, tgt)
        total = 0.0
        while not env2.done:
            total += env2.step(rng.integers(0, 5, size=2)).reward
        assert total <= bound + 1e-12
