import numpy as np
import pytest

from qplex_lab.envs import PAYOFFS, EnvSpec, MatrixGame, TwoStateMMDP, make_env, optimal_return_oracle
from qplex_lab.errors import ContractError


def test_payoff_tables():
    assert PAYOFFS["harder"].tolist() == [[8, -12, -12], [-12, 6, 0], [-12, 0, 6]]
    assert PAYOFFS["original"].tolist() == [[8, -12, -12], [-12, 0, 0], [-12, 0, 0]]


def test_matrix_reset_and_step():
    env = MatrixGame("harder")
    res = env.reset()
    assert env.t == 0 and not res.done and res.reward == 0.0
    assert len(res.obs) == 2 and all(o.tolist() == [0.0] for o in res.obs)
    res = env.step((1, 1))
    assert res.reward == 6.0 and res.done
    with pytest.raises(ContractError):
        env.step((0, 0))


def test_matrix_rewards_match_payoff():
    env = MatrixGame("original")
    for a in env.joint_actions():
        env.reset()
        assert env.step(a).reward == PAYOFFS["original"][a]


def test_mmdp_reset_starts_in_s2():
    env = TwoStateMMDP()
    res = env.reset()
    assert res.state.tolist() == [0.0, 1.0]
    assert all(o.tolist() == [0.0, 1.0] for o in res.obs)
    assert env.t == 0


def test_mmdp_dynamics():
    env = TwoStateMMDP()
    assert env.transition(1, (0, 0)) == (1.0, 1)
    assert env.transition(1, (1, 1)) == (0.0, 0)
    assert env.transition(1, (0, 1)) == (0.0, 1)
    for a in env.joint_actions():
        assert env.transition(0, a) == (0.0, 0)


def test_mmdp_horizon():
    env = TwoStateMMDP(horizon=100)
    env.reset()
    total = 0.0
    for t in range(100):
        res = env.step((0, 0))
        total += res.reward
        assert res.done == (t == 99)
    assert total == 100.0


def test_invalid_actions():
    env = MatrixGame()
    env.reset()
    with pytest.raises(ContractError):
        env.step((0, 3))
    with pytest.raises(ContractError):
        env.step((0,))


def test_env_spec_validation():
    with pytest.raises(ContractError):
        EnvSpec(n_agents=1, n_actions=2, obs_dim=1, state_dim=1, horizon=1, gamma=0.9)
    with pytest.raises(ContractError):
        EnvSpec(n_agents=2, n_actions=2, obs_dim=1, state_dim=1, horizon=1, gamma=1.0)


def test_make_env_names():
    assert make_env("matrix/original").variant == "original"
    assert make_env("matrix", "harder").variant == "harder"
    assert isinstance(make_env("mmdp"), TwoStateMMDP)
    with pytest.raises(ContractError):
        make_env("smac")
    with pytest.raises(ContractError):
        make_env("matrix/easy")


def test_optimal_return_oracle():
    assert optimal_return_oracle(MatrixGame("harder")) == 8.0
    expected = sum(0.99 ** i for i in range(100))
    assert optimal_return_oracle(TwoStateMMDP()) == pytest.approx(expected, rel=1e-12)
    assert optimal_return_oracle(TwoStateMMDP()) == pytest.approx(63.4, abs=0.01)
