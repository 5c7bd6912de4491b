from collections import Counter

import numpy as np
import pytest

from qplex_lab.dataset import make_uniform_dataset, make_uniform_episodes, read_dataset, write_dataset
from qplex_lab.envs import MatrixGame, TwoStateMMDP
from qplex_lab.errors import ContractError, UsageError


def test_exhaustive_nine_episodes_cover_each_joint_action_once():
    eps = make_uniform_episodes(MatrixGame("harder"), 9, 0, exhaustive=True)
    counts = Counter(tuple(e.actions[0]) for e in eps)
    assert len(counts) == 9 and set(counts.values()) == {1}


def test_exhaustive_multiple_is_balanced():
    eps = make_uniform_episodes(MatrixGame("original"), 27, 4, exhaustive=True)
    assert set(Counter(tuple(e.actions[0]) for e in eps).values()) == {3}


def test_exhaustive_errors():
    with pytest.raises(ContractError):
        make_uniform_episodes(MatrixGame(), 8, 0, exhaustive=True)
    with pytest.raises(ContractError):
        make_uniform_episodes(TwoStateMMDP(), 9, 0, exhaustive=True)
    with pytest.raises(ContractError):
        make_uniform_episodes(MatrixGame(), 0, 0)


def test_file_rewards_match_payoff(tmp_path):
    path = tmp_path / "d.txt"
    make_uniform_dataset("matrix/harder", 50, 1, path)
    env = MatrixGame("harder")
    for line in path.read_text().splitlines()[1:]:
        f = line.split()
        a1, a2, r = int(f[-4]), int(f[-3]), float(f[-2])
        assert r == env.payoff[a1, a2]
        assert f[-1] == "1.0"


def test_round_trip_is_exact(tmp_path):
    env = TwoStateMMDP(horizon=7)
    eps = make_uniform_episodes(env, 5, 3)
    path = tmp_path / "mmdp.txt"
    write_dataset(path, env.name, env.spec, eps)
    name, spec, back = read_dataset(path)
    assert name == "mmdp" and spec == env.spec and len(back) == 5
    for a, b in zip(eps, back):
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.rewards, b.rewards)
        np.testing.assert_array_equal(a.dones, b.dones)
        np.testing.assert_array_equal(a.obs[:-1], b.obs[:-1])
        np.testing.assert_array_equal(a.state[:-1], b.state[:-1])


def test_mmdp_occupancy_matches_chain():
    # uniform joint actions: from s2 the pair (1, 1) ends in s1 with probability 1/4
    horizon, n = 20, 4000
    P = np.array([[1.0, 0.0], [0.25, 0.75]])
    start = np.array([0.0, 1.0])
    expected = sum(start @ np.linalg.matrix_power(P, t) for t in range(horizon)) * n
    eps = make_uniform_episodes(TwoStateMMDP(horizon=horizon), n, 11)
    visits = sum(ep.state[:-1].sum(axis=0) for ep in eps)
    assert visits.sum() == horizon * n
    # per-episode s2 visits are a truncated geometric count with std below 4
    assert abs(visits[1] - expected[1]) < 5 * 4 * np.sqrt(n)


def test_malformed_files(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("hello\n")
    with pytest.raises(UsageError):
        read_dataset(bad)
    bad.write_text("")
    with pytest.raises(UsageError):
        read_dataset(bad)
    good = tmp_path / "good.txt"
    make_uniform_dataset("matrix/harder", 2, 0, good)
    lines = good.read_text().splitlines()
    bad.write_text("\n".join(lines[:1] + [lines[1] + " 7"]) + "\n")
    with pytest.raises(UsageError, match="fields"):
        read_dataset(bad)
    bad.write_text(lines[0] + "\n")
    with pytest.raises(UsageError, match="no transitions"):
        read_dataset(bad)
    bad.write_text(lines[0].replace(" horizon=1", "") + "\n" + lines[1] + "\n")
    with pytest.raises(UsageError, match="horizon"):
        read_dataset(bad)
