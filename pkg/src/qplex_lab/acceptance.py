"""Acceptance criteria as callable checks, shared by ``qplex-lab accept`` and the test suite.

Each check returns a :class:`CriterionResult`; :func:`run_criteria` prints one
``PASS``/``FAIL`` line per criterion.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .agents import AgentNetwork
from .config import parse_pairs
from .envs import PAYOFFS, MatrixGame, optimal_return_oracle, TwoStateMMDP
from .experiment import OUT_ROOT_ENV, run_experiment
from .gradcheck import check_function, check_parameters
from .mixers import QMIXMixer, QPLEXMixer, joint_greedy, qmix_mix
from .trainer import Batch, Learner, LearnerConfig
from .dataset import make_uniform_episodes

SEEDS = tuple(range(6))
MIN_SEEDS = 5
RANDOM_CASES = 1000
FD_PROBES = 100
FD_TOL = 1e-4

# budgets (overridable through the environment for quick smoke runs)
MATRIX_ITERATIONS = int(os.environ.get("QPLEX_LAB_MATRIX_ITERATIONS", "50"))
ONLINE_MATRIX_STEPS = 200_000
MMDP_STEPS = int(os.environ.get("QPLEX_LAB_MMDP_STEPS", "2000000"))
MMDP_BAND = (60.0, 67.0)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"criterion {self.number} [{'PASS' if self.passed else 'FAIL'}] {self.title}: {self.detail}"


def _out_root(out_root) -> Path:
    if out_root is not None:
        return Path(out_root)
    env_root = os.environ.get(OUT_ROOT_ENV)
    if env_root:
        return Path(env_root) / "acceptance"
    return Path(tempfile.mkdtemp(prefix="qplex-accept-"))


def _run(preset: str, seed: int, out: Path, **overrides):
    pairs = [("preset", preset), ("seed", str(seed)), ("out", str(out))]
    pairs += [(k, str(v)) for k, v in overrides.items()]
    run, _ = run_experiment(parse_pairs(pairs))
    return run


# ---------------------------------------------------------------------------
# 1, 2, 8: matrix games


def criterion_1(out_root=None) -> CriterionResult:
    root = _out_root(out_root)
    lines, ok = [], True
    for algo, want_opt in (("qplex", True), ("vdn", False), ("qmix", False)):
        hits = 0
        for s in SEEDS:
            run = _run(f"harder-matrix-{algo}", s, root / "c1" / algo / f"seed{s}",
                       total_iterations=MATRIX_ITERATIONS)
            ev = run.final_eval
            if want_opt:
                hit = ev.mean_return == 8.0 and all(a == (0, 0) for a in ev.joint_actions)
            else:
                hit = ev.mean_return <= 6.0
            hits += hit
        ok &= hits >= MIN_SEEDS
        lines.append(f"{algo} {hits}/{len(SEEDS)} {'optimal' if want_opt else 'return<=6'}")
    return CriterionResult(1, "harder matrix game optimality (offline)", ok, ", ".join(lines))


def criterion_2(out_root=None) -> CriterionResult:
    root = _out_root(out_root)
    payoff = PAYOFFS["original"]
    hits, worst = 0, []
    for s in SEEDS:
        run = _run("original-matrix-qplex", s, root / "c2" / f"seed{s}", total_iterations=MATRIX_ITERATIONS)
        err = float(np.max(np.abs(run.q_table - payoff)))
        greedy = run.final_eval.joint_actions[0]
        worst.append(err)
        hits += err <= 0.3 and greedy == (0, 0)
    ok = hits >= MIN_SEEDS
    return CriterionResult(2, "original matrix game Q-table", ok,
                           f"{hits}/{len(SEEDS)} seeds within 0.3 with greedy (0,0); "
                           f"max abs errors {[round(e, 3) for e in worst]}")


def criterion_8(out_root=None) -> CriterionResult:
    root = _out_root(out_root)
    hits, when = 0, []
    for s in SEEDS:
        run = _run("harder-matrix-qplex-online", s, root / "c8" / f"seed{s}", total_env_steps=ONLINE_MATRIX_STEPS,
                   stop_at_return=8.0)
        reached = [r.step for r in run.rows if r.mean_return >= 8.0]
        hits += bool(reached)
        when.append(reached[0] if reached else None)
    ok = hits >= MIN_SEEDS
    return CriterionResult(8, "online/offline parity on the harder game", ok,
                           f"{hits}/{len(SEEDS)} seeds reach return 8 within {ONLINE_MATRIX_STEPS} steps "
                           f"(first hit at {when})")


# ---------------------------------------------------------------------------
# 3: two-state MMDP


def criterion_3(out_root=None) -> CriterionResult:
    root = _out_root(out_root)
    optimum = optimal_return_oracle(TwoStateMMDP())
    lo, hi = MMDP_BAND
    q_hits, v_hits, q_tails, v_peaks = 0, 0, [], []
    for s in SEEDS:
        run = _run("mmdp-qplex", s, root / "c3" / "qplex" / f"seed{s}", total_env_steps=MMDP_STEPS)
        norms = [r.q_inf_norm for r in run.rows]
        tail = norms[int(np.floor(0.75 * (len(norms) - 1))):]
        q_tails.append((round(min(tail), 1), round(max(tail), 1)))
        q_hits += all(lo <= x <= hi for x in tail)
        run = _run("mmdp-vdn", s, root / "c3" / "vdn" / f"seed{s}", total_env_steps=MMDP_STEPS)
        peak = max(r.q_inf_norm for r in run.rows)
        v_peaks.append(round(peak, 1))
        v_hits += peak > 5 * optimum
    ok = q_hits >= MIN_SEEDS and v_hits >= MIN_SEEDS
    return CriterionResult(3, "two-state MMDP stability", ok,
                           f"qplex {q_hits}/{len(SEEDS)} in [{lo}, {hi}] over the last quarter (tail ranges {q_tails}); "
                           f"vdn {v_hits}/{len(SEEDS)} above {5 * optimum:.1f} (peaks {v_peaks})")


# ---------------------------------------------------------------------------
# 4-7: construction properties


def _random_qplex(rng: np.random.Generator, state_dim: int = 3, n_agents: int = 2, n_actions: int = 3):
    layers = int(rng.integers(1, 4))
    heads = int(rng.integers(1, 11))
    mixer = QPLEXMixer(state_dim, n_agents, n_actions, rng, n_layers=layers, n_heads=heads,
                       hidden=int(rng.integers(4, 33)))
    scale = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
    for p in mixer.parameters():
        p.data *= scale
    return mixer


def _agent_q(rng: np.random.Generator, n_agents: int, n_actions: int) -> np.ndarray:
    net = AgentNetwork(5, n_actions, rng, hidden_dim=16)
    with ad.no_grad():
        return net(ad.tensor(rng.standard_normal((n_agents, 5))))[0].data


def criterion_4(cases: int = RANDOM_CASES) -> CriterionResult:
    rng = np.random.default_rng(4)
    n_agents, n_actions = 2, 3
    joint = np.array([(i, j) for i in range(n_actions) for j in range(n_actions)])
    argmax_ok = zero_ok = neg_ok = 0
    for _ in range(cases):
        mixer = _random_qplex(rng)
        q = _agent_q(rng, n_agents, n_actions)
        state = np.repeat(rng.standard_normal((1, 3)), len(joint), axis=0)
        with ad.no_grad():
            out = mixer.forward(ad.tensor(np.repeat(q[None], len(joint), axis=0)), joint, ad.tensor(state))
        q_tot, a_tot = out.q_tot.data, out.a_tot.data
        greedy = joint_greedy(q)
        best = tuple(int(x) for x in joint[int(np.argmax(q_tot))])
        argmax_ok += best == greedy
        g_idx = [k for k, a in enumerate(joint) if tuple(a) == greedy][0]
        zero_ok += abs(a_tot[g_idx]) <= 1e-9
        nongreedy = [k for k, a in enumerate(joint)
                     if any(q[i, a[i]] < q[i].max() for i in range(n_agents))]
        neg_ok += all(a_tot[k] < 0 for k in nongreedy)
    ok = argmax_ok == zero_ok == neg_ok == cases
    return CriterionResult(4, "IGM by construction", ok,
                           f"argmax {argmax_ok}/{cases}, A_tot=0 at greedy {zero_ok}/{cases}, "
                           f"A_tot<0 off greedy {neg_ok}/{cases}")


def criterion_5(cases: int = RANDOM_CASES) -> CriterionResult:
    rng = np.random.default_rng(5)
    good, worst = 0, np.inf
    for _ in range(cases):
        n_agents = int(rng.integers(2, 6))
        state_dim = int(rng.integers(1, 6))
        mixer = QMIXMixer(state_dim, n_agents, 3, rng, embed_dim=int(rng.integers(2, 33)))
        q = ad.tensor(rng.normal(0.0, 10.0, size=(8, n_agents)), requires_grad=True)
        state = ad.tensor(rng.standard_normal((8, state_dim)))
        ad.backward(qmix_mix(mixer, state, q).sum())
        worst = min(worst, float(q.grad.min()))
        good += bool(np.all(q.grad >= 0))
    return CriterionResult(5, "QMIX monotonicity", good == cases,
                           f"{good}/{cases} parameterizations with every dQ_tot/dQ_i >= 0 (min {worst:.3g})")


def criterion_6(cases: int = RANDOM_CASES) -> CriterionResult:
    rng = np.random.default_rng(6)
    worst, good = 0.0, 0
    for _ in range(cases):
        n_agents = int(rng.integers(2, 5))
        n_actions = int(rng.integers(2, 6))
        mixer = _random_qplex(rng, 3, n_agents, n_actions)
        n = 4
        q = rng.normal(0.0, 5.0, size=(n, n_agents, n_actions))
        acts = rng.integers(0, n_actions, size=(n, n_agents))
        state = ad.tensor(rng.standard_normal((n, 3)))
        with ad.no_grad():
            out = mixer.forward(ad.tensor(q), acts, state)
            w = mixer.trans.weights(state).data
            b = mixer.trans.biases(state).data
        duplex = out.v_tot.data + out.a_tot.data
        # reformulation from raw pieces: sum_i Q_i(s, a_i) + sum_i (lambda_i - 1) A_i(s, a_i)
        chosen = np.take_along_axis(q, acts[..., None], axis=-1)[..., 0]
        q_i = w * chosen + b
        a_i = w * (chosen - q.max(axis=-1))
        reform = q_i.sum(axis=1) + ((out.lam.data - 1.0) * a_i).sum(axis=1)
        err = float(np.max(np.abs(duplex - reform)))
        worst = max(worst, err)
        good += err < 1e-9
    return CriterionResult(6, "duplex dueling reformulation identity", good == cases,
                           f"{good}/{cases} cases, max abs error {worst:.2e}")


def _primitive_cases() -> dict[str, Callable]:
    """name -> builder(rng) returning (fn, inputs) for a scalar-valued probe."""

    def away(rng, shape, gap=1e-2):
        x = rng.standard_normal(shape)
        return np.where(np.abs(x) < gap, x + np.copysign(gap, x), x)

    def weighted(op):
        def build(rng):
            shape = tuple(rng.integers(1, 5, size=int(rng.integers(1, 4))))
            r = rng.standard_normal(shape)
            return (lambda ts: (op(ts[0]) * ad.tensor(r)).sum()), [away(rng, shape)]
        return build

    def binary(op, positive_rhs=False):
        def build(rng):
            shape = tuple(rng.integers(1, 5, size=int(rng.integers(1, 4))))
            r = rng.standard_normal(shape)
            b = rng.uniform(0.5, 2.0, shape) * (1 if positive_rhs else rng.choice([-1, 1], shape))
            return (lambda ts: (op(ts[0], ts[1]) * ad.tensor(r)).sum()), [rng.standard_normal(shape), b]
        return build

    def scalar_rhs(rng):
        shape = tuple(rng.integers(1, 5, size=2))
        r = rng.standard_normal(shape)
        return (lambda ts: (ts[0] * ts[1] * ad.tensor(r)).sum()), [rng.standard_normal(shape), rng.standard_normal()]

    def matmul2(rng):
        m, k, n = rng.integers(1, 6, size=3)
        r = rng.standard_normal((m, n))
        return (lambda ts: (ad.matmul(ts[0], ts[1]) * ad.tensor(r)).sum()), [rng.standard_normal((m, k)),
                                                                             rng.standard_normal((k, n))]

    def matmul3(rng):
        bsz, m, k, n = rng.integers(1, 5, size=4)
        r = rng.standard_normal((bsz, m, n))
        return (lambda ts: (ad.matmul(ts[0], ts[1]) * ad.tensor(r)).sum()), [rng.standard_normal((bsz, m, k)),
                                                                             rng.standard_normal((bsz, k, n))]

    def affine(rng):
        m, k, n = rng.integers(1, 6, size=3)
        r = rng.standard_normal((m, n))
        return (lambda ts: (ad.affine(ts[0], ts[1], ts[2]) * ad.tensor(r)).sum()), [
            rng.standard_normal((m, k)), rng.standard_normal((k, n)), rng.standard_normal(n)]

    def affine_batched(rng):
        h, m, k, n = rng.integers(1, 5, size=4)
        r = rng.standard_normal((h, m, n))
        return (lambda ts: (ad.affine(ts[0], ts[1], ts[2]) * ad.tensor(r)).sum()), [
            rng.standard_normal((h, m, k)), rng.standard_normal((h, k, n)), rng.standard_normal((h, 1, n))]

    def reshape(rng):
        a, b = rng.integers(1, 5, size=2)
        r = rng.standard_normal((b, a))
        return (lambda ts: (ad.reshape(ts[0], (b, a)) * ad.tensor(r)).sum()), [rng.standard_normal((a, b))]

    def transpose(rng):
        shape = tuple(rng.integers(1, 5, size=3))
        axes = tuple(rng.permutation(3))
        r = rng.standard_normal(tuple(shape[i] for i in axes))
        return (lambda ts: (ad.transpose(ts[0], axes) * ad.tensor(r)).sum()), [rng.standard_normal(shape)]

    def broadcast(rng):
        a, b = rng.integers(1, 5, size=2)
        r = rng.standard_normal((a, b))
        return (lambda ts: (ad.broadcast_to(ts[0], (a, b)) * ad.tensor(r)).sum()), [rng.standard_normal((a, 1))]

    def concat(rng):
        a, b, c = rng.integers(1, 5, size=3)
        r = rng.standard_normal((a, b + c))
        return (lambda ts: (ad.concat([ts[0], ts[1]], axis=1) * ad.tensor(r)).sum()), [
            rng.standard_normal((a, b)), rng.standard_normal((a, c))]

    def getitem(rng):
        n = int(rng.integers(2, 7))
        idx = rng.integers(0, n, size=5)
        r = rng.standard_normal(5)
        return (lambda ts: (ts[0][idx] * ad.tensor(r)).sum()), [rng.standard_normal(n)]

    def reduction(op):
        def build(rng):
            shape = tuple(rng.integers(1, 5, size=2))
            axis = int(rng.integers(0, 2))
            out_n = shape[1 - axis]
            r = rng.standard_normal(out_n)
            # distinct entries keep max differentiable at the probe
            x = rng.permutation(np.prod(shape)).reshape(shape) * 0.1 + rng.uniform(0, 0.01, shape)
            return (lambda ts: (ad.reduce(op, ts[0], axis=axis) * ad.tensor(r)).sum()), [x]
        return build

    def stop_grad(rng):
        shape = (int(rng.integers(1, 6)),)
        return (lambda ts: (ad.stop_gradient(ts[0]) * ts[0]).sum()), [rng.standard_normal(shape)]

    return {
        "add": binary(ad.add), "sub": binary(ad.sub), "mul": binary(ad.mul), "mul-scalar": scalar_rhs,
        "div": binary(ad.div), "neg": weighted(ad.neg), "relu": weighted(ad.relu), "sigmoid": weighted(ad.sigmoid),
        "tanh": weighted(ad.tanh), "abs": weighted(ad.absolute), "exp": weighted(ad.exp), "elu": weighted(ad.elu),
        "square": weighted(ad.square), "matmul": matmul2, "matmul-batched": matmul3, "affine": affine,
        "affine-batched": affine_batched, "reshape": reshape, "transpose": transpose, "broadcast_to": broadcast,
        "concat": concat, "getitem": getitem, "sum": reduction("sum"), "mean": reduction("mean"),
        "max": reduction("max"), "stop_gradient": stop_grad,
    }


def qplex_loss_probe(rng: np.random.Generator) -> float:
    """Random QPLEX learner on a random multi-step batch; gradient of the full TD loss vs differences."""
    env = TwoStateMMDP(horizon=int(rng.integers(2, 6))) if rng.random() < 0.5 else MatrixGame("harder")
    cfg = LearnerConfig(algo="qplex", lambda_layers=int(rng.integers(1, 4)), lambda_heads=int(rng.integers(1, 5)),
                        mixer_hidden=16, hidden_dim=16, recurrent=bool(rng.random() < 0.3))
    learner = Learner(env, cfg, rng)
    # move targets away from the online nets so the bootstrap term is not trivial
    for p in learner.target_agent.parameters() + learner.target_mixer.parameters():
        p.data += rng.normal(0.0, 0.1, p.shape)
    batch = Batch.from_episodes(make_uniform_episodes(env, int(rng.integers(1, 5)), int(rng.integers(1 << 30))))
    return check_parameters(lambda: learner.td_loss(batch), learner.params, rng)


def criterion_7(probes: int = FD_PROBES) -> CriterionResult:
    rng = np.random.default_rng(7)
    failures = []
    worst_name, worst = "", 0.0
    for name, build in _primitive_cases().items():
        for _ in range(probes):
            fn, inputs = build(rng)
            err = check_function(fn, inputs, rng)
            if err > worst:
                worst_name, worst = name, err
            if not err < FD_TOL:
                failures.append(name)
    for _ in range(probes):
        err = qplex_loss_probe(rng)
        if err > worst:
            worst_name, worst = "qplex-loss", err
        if not err < FD_TOL:
            failures.append("qplex-loss")
    n_checks = probes * (len(_primitive_cases()) + 1)
    detail = f"{n_checks - len(failures)}/{n_checks} probes below {FD_TOL:g} (worst {worst:.2e} on {worst_name})"
    if failures:
        detail += f"; failing: {sorted(set(failures))}"
    return CriterionResult(7, "autodiff soundness", not failures, detail)


CRITERIA: dict[int, Callable[..., CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
    5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8,
}
_NEEDS_OUT = {1, 2, 3, 8}


def run_criteria(only=None, echo: bool = False, out_root=None) -> list[CriterionResult]:
    results = []
    for k in sorted(only or CRITERIA):
        res = CRITERIA[k](out_root) if k in _NEEDS_OUT else CRITERIA[k]()
        if echo:
            print(res.line(), flush=True)
        results.append(res)
    return results
