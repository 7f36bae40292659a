"""Shared fixtures and brute-force oracles.

The oracles enumerate hidden-state trajectories explicitly and share no code
with the library's filtering or operator routines.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from optenet.estimation import TripleDataset, exact_triple_laws, tuple_index
from optenet.model import ParameterFamily, Policy, TabularModel

ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def rand_simplex(rng, shape, axis, floor=0.0):
    x = rng.random(shape) + floor
    return x / x.sum(axis=axis, keepdims=True)


def random_model(rng, H=3, S=2, O=3, A=2, sharp=2.0) -> TabularModel:  # noqa: E741
    """Random model with diagonally dominant (hence injective) emissions."""
    E = rng.random((H, O, S))
    for s in range(S):
        E[:, s % O, s] += sharp
    E /= E.sum(axis=1, keepdims=True)
    return TabularModel(
        mu=rand_simplex(rng, S, 0, 0.1),
        T=rand_simplex(rng, (H - 1, S, S, A), 1, 0.05),
        E=E,
        r=rng.random((O, A)),
    )


def random_family(rng, n=4, H=3, S=2, O=3, A=2) -> ParameterFamily:  # noqa: E741
    """Candidates sharing mu, r and E_1 (and T_1, E_2 when H >= 3)."""
    base = random_model(rng, H, S, O, A)
    cands = [base]
    for _ in range(n - 1):
        m = random_model(rng, H, S, O, A)
        T, E = m.T.copy(), m.E.copy()
        E[0] = base.E[0]
        if H >= 3:
            T[0], E[1] = base.T[0], base.E[1]
        cands.append(TabularModel(base.mu, T, E, base.r))
    return ParameterFamily(tuple(cands), int(rng.integers(n)))


def sampled_dataset(model, policy, n, rng) -> TripleDataset:
    """Dataset with ``n`` exact-law draws per tuple."""
    H, A, O = model.H, model.A, model.O  # noqa: E741
    ds = TripleDataset(H, A, O)
    laws = exact_triple_laws(model, policy)
    for h, a, a2 in tuple_index(H, A):
        law = laws[h - 2, a, a2]
        for flat in rng.choice(O**3, size=n, p=law / law.sum()):
            ds.add(h, a, a2, np.unravel_index(flat, (O, O, O)))
    return ds


# -- brute-force oracles ------------------------------------------------------


def brute_history_joint(model: TabularModel, history) -> np.ndarray:
    """``p(tau_bar_h, s_h)`` by summing over every hidden state path."""
    obs, acts = history[0::2], history[1::2]
    h = len(obs)
    out = np.zeros(model.S)
    for path in itertools.product(range(model.S), repeat=h):
        p = model.mu[path[0]] * model.E[0, obs[0], path[0]]
        for i in range(1, h):
            p *= model.T[i - 1, path[i], path[i - 1], acts[i - 1]] * model.E[i, obs[i], path[i]]
        out[path[-1]] += p
    return out


def brute_trajectories(model: TabularModel, choose):
    """Yield ``(prob, states, obs, acts)`` over all trajectories; ``choose(h, obs)`` picks actions."""
    H, S, O = model.H, model.S, model.O
    for states in itertools.product(range(S), repeat=H):
        for obs in itertools.product(range(O), repeat=H):
            p = model.mu[states[0]] * model.E[0, obs[0], states[0]]
            acts = []
            for h in range(H):
                a = choose(h + 1, obs[: h + 1])
                acts.append(a)
                if h + 1 < H:
                    p *= model.T[h, states[h + 1], states[h], a] * model.E[h + 1, obs[h + 1], states[h + 1]]
            if p > 0:
                yield p, states, obs, tuple(acts)


def brute_J(model: TabularModel, policy: Policy) -> float:
    total = 0.0
    for p, _, obs, acts in brute_trajectories(model, lambda h, o: policy(o)):
        total += p * sum(model.r[o, a] for o, a in zip(obs, acts))
    return total


def brute_conditional_return(model: TabularModel, policy: Policy, history):
    """``E[sum_h r | tau_bar_h]`` with the history's actions forced; None on zero mass."""
    obs_h, acts_h = tuple(history[0::2]), tuple(history[1::2])
    h = len(obs_h)

    def choose(step, obs):
        return acts_h[step - 1] if step < h else policy(obs)

    num = den = 0.0
    for p, _, obs, acts in brute_trajectories(model, choose):
        if obs[:h] == obs_h:
            num += p * sum(model.r[o, a] for o, a in zip(obs, acts))
            den += p
    return None if den == 0 else num / den


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
