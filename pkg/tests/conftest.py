import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import pompg


@pytest.fixture(scope="session")
def matiger():
    return pompg.build_matiger(pompg.EnvParams())


@pytest.fixture(scope="session")
def mabc():
    return pompg.build_mabc(pompg.EnvParams(env_id="mabc"))


@pytest.fixture(scope="session")
def mabc_spaces(mabc):
    """Shared chain spaces for MABC at t_w = 0, 1."""
    from pompg import oracle
    return {
        t_w: oracle.enumerate_chain_space(mabc, pompg.make_window_spec(mabc, t_w))
        for t_w in (0, 1)
    }


def single_agent_bandit(rewards, beta=0.5, n_obs=1):
    """One state, one agent, len(rewards) actions, uninformative observations."""
    rewards = np.asarray(rewards, dtype=float)
    n_act = rewards.size
    trans = np.ones((1, n_act, 1))
    obs = np.full((1, n_act, n_obs), 1.0 / n_obs)
    reward = rewards.reshape(1, 1, n_act)
    return pompg.make_pomg(
        ["s"], [[f"o{k}" for k in range(n_obs)]],
        [[f"a{k}" for k in range(n_act)]],
        trans, [obs], reward, reward[0], beta, np.ones(1))


def fully_observable_game(rng, n_states=2, n_actions=2, beta=0.5,
                          n_agents=2, reward_table=None):
    """Common-reward Markov game with identity observations (Y_i = X)."""
    u_count = n_actions ** n_agents
    trans = rng.dirichlet(np.ones(n_states), size=(n_states, u_count))
    if reward_table is None:
        reward_table = rng.random((n_states, u_count))
    obs = np.zeros((n_states, u_count, n_states))
    for x in range(n_states):
        obs[x, :, x] = 1.0
    reward = np.stack([reward_table] * n_agents)
    names = [f"x{k}" for k in range(n_states)]
    return pompg.make_pomg(
        names, [names] * n_agents,
        [[f"a{k}" for k in range(n_actions)]] * n_agents,
        trans, [obs.copy() for _ in range(n_agents)], reward, reward_table,
        beta, np.full(n_states, 1.0 / n_states))


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
