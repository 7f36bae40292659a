"""Seeded generators of candidate families.

All candidates of a generated family share ``mu``, ``r`` and ``E_1``; when
``H >= 3`` they also share ``T_1`` and ``E_2``, the components treated as
known at initialization.  With ``H = 2`` sharing ``T_1`` and ``E_2`` as well
would make every candidate identical, so only ``mu``, ``r`` and ``E_1`` are
shared there.

Every candidate must pass :func:`~optenet.linear.build_bridge` with
``lambda_min(Lambda_h) >= min_eig`` at every step.
"""

from __future__ import annotations

import numpy as np

from .linear import SingularLambdaError, build_bridge
from .model import ParameterFamily, TabularModel

MAX_TRIES = 1000
MIN_EIG = 1e-3


class GenerationError(RuntimeError):
    pass


def _dirichlet(rng, n, shape, conc=1.0):
    """Dirichlet draws along a new axis 0 of length ``n``."""
    x = rng.gamma(conc, size=(n,) + shape)
    return x / x.sum(axis=0, keepdims=True)


def _ok(m: TabularModel, min_eig: float) -> bool:
    try:
        return bool(build_bridge(m).min_eig.min() >= min_eig)
    except SingularLambdaError:
        return False


def _share(base: TabularModel, T: np.ndarray, E: np.ndarray) -> TabularModel:
    """Overwrite the shared initial components with those of ``base``."""
    T, E = T.copy(), E.copy()
    E[0] = base.E[0]
    if base.H >= 3:
        T[0] = base.T[0]
        E[1] = base.E[1]
    return TabularModel(base.mu, T, E, base.r)


def _random_T(rng, H, S, A):
    return np.moveaxis(_dirichlet(rng, S, (H - 1, S, A)), 0, 1)  # (H-1, S', S, A)


def _random_E(rng, H, O, S, sharp=4.0):
    # a dominant diagonal keeps emissions informative
    E = np.moveaxis(_dirichlet(rng, O, (H, S)), 0, 1)  # (H, O, S)
    for s in range(S):
        E[:, s % O, s] += sharp
    return E / E.sum(axis=1, keepdims=True)


def random_family(rng, S, A, O, H, n_candidates=4, min_eig=MIN_EIG) -> ParameterFamily:  # noqa: E741
    if O < S:
        raise GenerationError(f"O = {O} < S = {S}: emissions cannot have full column rank")
    for _ in range(MAX_TRIES):
        mu = _dirichlet(rng, S, ())
        r = rng.random((O, A))
        base = TabularModel(mu, _random_T(rng, H, S, A), _random_E(rng, H, O, S), r)
        cands = [base] + [
            _share(base, _random_T(rng, H, S, A), _random_E(rng, H, O, S)) for _ in range(n_candidates - 1)
        ]
        if all(_ok(c, min_eig) for c in cands):
            return ParameterFamily(tuple(cands), int(rng.integers(n_candidates)))
    raise GenerationError(f"no well-conditioned family after {MAX_TRIES} attempts")


def mdp_family(rng, S, A, H, n_candidates=4) -> ParameterFamily:
    """Fully observed: ``O = S`` and identity emissions, so ``gamma = S``."""
    E = np.broadcast_to(np.eye(S), (H, S, S))
    mu = _dirichlet(rng, S, ())
    r = rng.random((S, A))
    base = TabularModel(mu, _random_T(rng, H, S, A), E, r)
    cands = [base] + [_share(base, _random_T(rng, H, S, A), E) for _ in range(n_candidates - 1)]
    return ParameterFamily(tuple(cands), int(rng.integers(n_candidates)))


def noisy_ring_family(rng, S=2, A=2, O=None, H=3, n_candidates=4) -> ParameterFamily:  # noqa: E741
    """States on a ring; action 0 stays, other actions step forward.

    Candidates differ in the transition slip probability.  Observations
    report the state with noise, plus an extra uninformative symbol.
    """
    O = S + 1 if O is None else O
    if O < S:
        raise GenerationError(f"O = {O} < S = {S}: emissions cannot have full column rank")
    for _ in range(MAX_TRIES):
        noise = rng.uniform(0.05, 0.2)
        E1 = np.full((O, S), noise / (O - 1))
        E1[np.arange(S), np.arange(S)] = 1 - noise
        E = np.broadcast_to(E1, (H, O, S)).copy()
        mu = np.full(S, 1.0 / S)
        r = rng.random((O, A))
        slips = rng.uniform(0.0, 0.4, size=n_candidates)
        cands = []
        for slip in slips:
            T = np.zeros((H - 1, S, S, A))
            for s in range(S):
                for a in range(A):
                    nxt = (s + a) % S
                    T[:, nxt, s, a] += 1 - slip
                    T[:, s, s, a] += slip
            cands.append(TabularModel(mu, T, E, r))
        cands = [cands[0]] + [_share(cands[0], c.T, c.E) for c in cands[1:]]
        if all(_ok(c, MIN_EIG) for c in cands):
            return ParameterFamily(tuple(cands), int(rng.integers(n_candidates)))
    raise GenerationError(f"no well-conditioned family after {MAX_TRIES} attempts")


def trap_family(emission=0.9) -> ParameterFamily:
    """Two states, two actions, two observations, horizon three, four candidates.

    The candidates differ only in ``T_2``.  Candidate 0 is the truth: action 0
    at step 2 reaches the rewarding state with probability 0.8 and action 1
    with 0.2.  Candidate 1 claims action 1 reaches it with probability 0.95,
    which makes it the most optimistic model while its optimal policy loses
    about 0.53 under the truth.  Candidates 2 and 3 are pessimistic variants
    whose optimal policy coincides with the true one.
    """
    E1 = np.array([[emission, 1 - emission], [1 - emission, emission]])
    E = np.stack([E1] * 3)
    mu = np.array([0.5, 0.5])
    r = np.array([[0.1, 0.0], [1.0, 0.9]])
    T1 = np.zeros((2, 2, 2))
    T1[:, :, 0] = [[0.7, 0.3], [0.3, 0.7]]
    T1[:, :, 1] = [[0.3, 0.7], [0.7, 0.3]]

    def T2(p0, p1):
        t = np.zeros((2, 2, 2))
        for a, p in ((0, p0), (1, p1)):
            t[:, :, a] = [[1 - p, 1 - p], [p, p]]
        return t

    variants = [T2(0.8, 0.2), T2(0.8, 0.95), T2(0.7, 0.2), T2(0.6, 0.2)]
    return ParameterFamily(tuple(TabularModel(mu, np.stack([T1, t]), E, r) for t in variants), 0)


GENERATORS = ("random", "mdp", "noisy-ring", "trap")


def generate_family(name: str, sizes: dict, rng: np.random.Generator) -> ParameterFamily:
    """Build a named family; ``sizes`` holds ``S, A, O, H`` and ``candidates``."""
    S, A, H = int(sizes.get("S", 2)), int(sizes.get("A", 2)), int(sizes.get("H", 3))
    n = int(sizes.get("candidates", 4))
    if name == "random":
        return random_family(rng, S, A, int(sizes.get("O", S + 1)), H, n)
    if name == "mdp":
        return mdp_family(rng, S, A, H, n)
    if name == "noisy-ring":
        return noisy_ring_family(rng, S, A, sizes.get("O"), H, n)
    if name == "trap":
        return trap_family()
    raise ValueError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")
