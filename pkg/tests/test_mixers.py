import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qplex_lab import autodiff as ad
from qplex_lab.errors import ContractError, DimensionError
from qplex_lab.mixers import (EPS_POSITIVE, QMIXMixer, QPLEXMixer, VDNMixer, joint_greedy, make_mixer, qmix_mix,
                              vdn_mix)

JOINT = np.array([(i, j) for i in range(3) for j in range(3)])


def _grid(mixer, q, state):
    n = len(JOINT)
    with ad.no_grad():
        return mixer.forward(ad.tensor(np.repeat(q[None], n, axis=0)), JOINT,
                             ad.tensor(np.repeat(state[None], n, axis=0)))


def test_vdn_is_a_sum():
    assert vdn_mix(ad.tensor([[1.0, 2.5]])).data.tolist() == [3.5]
    q = ad.tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert VDNMixer(2)(q, np.array([[1, 0]])).data.tolist() == [5.0]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_qplex_igm_and_advantage_signs(seed):
    rng = np.random.default_rng(seed)
    mixer = QPLEXMixer(2, 2, 3, rng, n_layers=2, n_heads=3, hidden=16)
    q, state = rng.normal(0, 3, size=(2, 3)), rng.standard_normal(2)
    out = _grid(mixer, q, state)
    greedy = joint_greedy(q)
    assert tuple(JOINT[np.argmax(out.q_tot.data)]) == greedy
    g = [k for k, a in enumerate(JOINT) if tuple(a) == greedy][0]
    assert out.a_tot.data[g] == 0.0
    assert np.all(np.delete(out.a_tot.data, g) < 0)
    np.testing.assert_allclose(out.q_tot.data, out.v_tot.data + out.a_tot.data, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_qplex_positivity(seed):
    rng = np.random.default_rng(seed)
    mixer = QPLEXMixer(3, 2, 3, rng, n_layers=1, n_heads=2, hidden=8)
    state = ad.tensor(rng.standard_normal((5, 3)))
    assert np.all(mixer.trans.weights(state).data >= EPS_POSITIVE)
    q = ad.tensor(rng.standard_normal((5, 2, 3)))
    out = mixer.forward(q, rng.integers(0, 3, size=(5, 2)), state)
    assert np.all(out.lam.data > 0)


def test_qatten_ablation_is_transformed_sum():
    rng = np.random.default_rng(3)
    mixer = make_mixer("qatten-ablation", 2, 2, 3, rng, lambda_layers=2, hidden=8)
    q, state = rng.standard_normal((2, 3)), rng.standard_normal(2)
    out = _grid(mixer, q, state)
    s = ad.tensor(state[None])
    w, b = mixer.trans.weights(s).data[0], mixer.trans.biases(s).data[0]
    expect = [(w * q[[0, 1], a] + b).sum() for a in JOINT]
    np.testing.assert_allclose(out.q_tot.data, expect, atol=1e-12)
    assert np.all(out.lam.data == 1.0)


def test_qplex_learning_graph_blocks_advantage_gradient():
    rng = np.random.default_rng(4)
    mixer = QPLEXMixer(1, 2, 3, rng, n_layers=1, n_heads=2, hidden=8)
    q = ad.tensor(rng.standard_normal((1, 2, 3)), requires_grad=True)
    acts = np.array([[int(np.argmin(q.data[0, 0])), int(np.argmin(q.data[0, 1]))]])
    state = ad.tensor(np.zeros((1, 1)))
    ad.backward(mixer(q, acts, state).sum())
    w = mixer.trans.weights(state).data[0]
    # only the chosen (non-greedy) entries receive gradient, with weight w_i as in the value path
    expect = np.zeros((2, 3))
    expect[0, acts[0, 0]], expect[1, acts[0, 1]] = w
    np.testing.assert_allclose(q.grad[0], expect)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_qmix_monotone(seed):
    rng = np.random.default_rng(seed)
    mixer = QMIXMixer(3, 3, 2, rng, embed_dim=8)
    q = ad.tensor(rng.normal(0, 10, size=(4, 3)), requires_grad=True)
    ad.backward(qmix_mix(mixer, ad.tensor(rng.standard_normal((4, 3))), q).sum())
    assert np.all(q.grad >= 0)


def test_shape_errors():
    rng = np.random.default_rng(5)
    mixer = QPLEXMixer(2, 2, 3, rng, n_layers=1, n_heads=1, hidden=4)
    with pytest.raises(DimensionError):
        mixer(ad.tensor(np.zeros((1, 2, 3))), np.array([[0, 0, 0]]), ad.tensor(np.zeros((1, 2))))
    with pytest.raises(DimensionError):
        qmix_mix(QMIXMixer(2, 2, 3, rng), ad.tensor(np.zeros((1, 2))), ad.tensor(np.zeros((1, 3))))


def test_unknown_algorithm():
    with pytest.raises(ContractError):
        make_mixer("qtran", 1, 2, 3, np.random.default_rng(0))
    with pytest.raises(ContractError):
        QPLEXMixer(1, 2, 3, np.random.default_rng(0), lambda_mode="two")
