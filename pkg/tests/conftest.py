import numpy as np
import pytest

from mars.envs import EnvConfig
from mars.teams import pretrain_team, save_pool


@pytest.fixture(scope="session")
def small_env_config():
    return EnvConfig(grid_size=5, n_agents=4, episode_limit=20)


@pytest.fixture(scope="session")
def tiny_pool(small_env_config):
    """Three quickly pretrained team policies for composition tests."""
    return [
        pretrain_team("greedy_chaser", 2, 11, small_env_config, episodes=120),
        pretrain_team("cautious_explorer", 2, 12, small_env_config, episodes=120),
        pretrain_team("myopic_rusher", 2, 13, small_env_config, episodes=120),
    ]


@pytest.fixture(scope="session")
def tiny_pool_dir(tiny_pool, tmp_path_factory):
    path = tmp_path_factory.mktemp("pool")
    save_pool(str(path), tiny_pool)
    return str(path)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
