"""Finite POMDPs: parameters, histories, policies, filtering and simulation.

Steps are 1-based in every public signature (``h = 1..H``) and 0-based in
array storage, so ``model.T[h - 1]`` is the step-``h`` transition tensor.

Full histories of step ``h`` are stored densely as arrays with axes
``(o_1, a_1, o_2, a_2, ..., o_h)``; see :func:`history_shape`.  Step ``H + 1``
carries a dummy observation, index :data:`DUMMY_OBS`, emitted with
probability one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

PROB_TOL = 1e-12
DUMMY_OBS = 0


class InvalidModelError(ValueError):
    pass


class StepOutOfRangeError(IndexError):
    pass


def _check_simplex(x: np.ndarray, axis: int, what: str) -> None:
    if np.any(x < -PROB_TOL) or not np.all(np.isfinite(x)):
        raise InvalidModelError(f"{what} has negative or non-finite entries")
    if np.max(np.abs(x.sum(axis=axis) - 1.0), initial=0.0) > PROB_TOL:
        raise InvalidModelError(f"{what} does not sum to one along axis {axis}")


@dataclass(frozen=True, eq=False)
class TabularModel:
    """Finite episodic POMDP.

    Parameters
    ----------
    mu : (S,) array
        Initial state distribution.
    T : (H-1, S, S, A) array
        ``T[h-1, s', s, a] = p(s_{h+1} = s' | s_h = s, a_h = a)``.
    E : (H, O, S) array
        ``E[h-1, o, s] = p(o_h = o | s_h = s)``.
    r : (O, A) array
        Known reward ``r(o, a)`` in ``[0, 1]``.
    """

    mu: np.ndarray
    T: np.ndarray
    E: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name in ("mu", "T", "E", "r"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        mu, T, E, r = self.mu, self.T, self.E, self.r
        if mu.ndim != 1 or E.ndim != 3 or T.ndim != 4 or r.ndim != 2:
            raise InvalidModelError("mu, T, E, r must have 1, 4, 3, 2 dimensions")
        H, O, S = E.shape
        if H < 1:
            raise InvalidModelError("horizon must be positive")
        if T.shape[:3] != (H - 1, S, S) or mu.shape != (S,) or r.shape[0] != O:
            raise InvalidModelError(
                f"inconsistent shapes mu{mu.shape} T{T.shape} E{E.shape} r{r.shape}"
            )
        if H > 1 and T.shape[3] != r.shape[1]:
            raise InvalidModelError("T and r disagree on the number of actions")
        _check_simplex(mu, 0, "mu")
        _check_simplex(E, 1, "E")
        if H > 1:
            _check_simplex(T, 1, "T")
        if np.any(r < 0) or np.any(r > 1):
            raise InvalidModelError("rewards must lie in [0, 1]")

    @property
    def H(self) -> int:
        return self.E.shape[0]

    @property
    def S(self) -> int:
        return self.E.shape[2]

    @property
    def O(self) -> int:  # noqa: E743
        return self.E.shape[1]

    @property
    def A(self) -> int:
        return self.r.shape[1]

    def obs_kernel(self, h: int) -> np.ndarray:
        """``K[o', s, a] = p(o_{h+1} = o' | s_h = s, a_h = a)``; dummy at ``h = H``."""
        if not 1 <= h <= self.H:
            raise StepOutOfRangeError(f"step {h} outside 1..{self.H}")
        if h == self.H:
            K = np.zeros((self.O, self.S, self.A))
            K[DUMMY_OBS] = 1.0
            return K
        return np.einsum("ot,tsa->osa", self.E[h], self.T[h - 1])

    def pair_kernel(self, h: int) -> np.ndarray:
        """``P[o, o', s, a] = p(o_h = o, o_{h+1} = o' | s_h = s, a_h = a)``."""
        return np.einsum("os,psa->opsa", self.E[h - 1], self.obs_kernel(h))

    def same_spaces(self, other: "TabularModel") -> bool:
        return (self.H, self.S, self.A, self.O) == (other.H, other.S, other.A, other.O)


@dataclass(frozen=True, eq=False)
class ParameterFamily:
    """Finite candidate list sharing ``(S, A, O, H, mu, r)``.

    ``true_index`` belongs to the environment; learners only read
    ``candidates``.
    """

    candidates: tuple
    true_index: int

    def __post_init__(self):
        cands = tuple(self.candidates)
        if not cands:
            raise InvalidModelError("a family needs at least one candidate")
        first = cands[0]
        for c in cands[1:]:
            if not (
                c.same_spaces(first)
                and np.array_equal(c.mu, first.mu)
                and np.array_equal(c.r, first.r)
            ):
                raise InvalidModelError("candidates must share S, A, O, H, mu and r")
        if not 0 <= self.true_index < len(cands):
            raise InvalidModelError(f"true_index {self.true_index} out of range")
        object.__setattr__(self, "candidates", cands)

    def __len__(self):
        return len(self.candidates)

    @property
    def true_model(self) -> TabularModel:
        return self.candidates[self.true_index]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        m = self.candidates[0]
        return m.H, m.S, m.A, m.O


# -- histories ---------------------------------------------------------------


def history_shape(O: int, A: int, h: int) -> tuple[int, ...]:
    """Axes ``(o_1, a_1, ..., o_{h-1}, a_{h-1}, o_h)`` of a step-``h`` array."""
    return (O, A) * (h - 1) + (O,)


def iter_full_histories(O: int, A: int, h: int) -> Iterator[tuple[int, ...]]:
    return itertools.product(*(range(n) for n in history_shape(O, A, h)))


def obs_part(full_history: Sequence[int]) -> tuple[int, ...]:
    return tuple(full_history[0::2])


def check_history(model: TabularModel, history: Sequence[int]) -> int:
    """Validate an interleaved full history and return its step index."""
    n = len(history)
    if n % 2 == 0:
        raise IndexError("a full history has odd length (ends with an observation)")
    h = (n + 1) // 2
    if h > model.H + 1:
        raise IndexError(f"history of step {h} exceeds horizon {model.H} + 1")
    for i, x in enumerate(history):
        bound = model.O if i % 2 == 0 else model.A
        if not 0 <= int(x) < bound:
            raise IndexError(f"history entry {i} = {x} out of range [0, {bound})")
    return h


# -- policies ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Policy:
    """Deterministic map from observation histories to actions.

    ``actions[h-1]`` has shape ``(O,) * h``; its entry at ``(o_1, ..., o_h)``
    is the action taken after observing that history.
    """

    actions: tuple

    def __post_init__(self):
        acts = tuple(np.array(a, dtype=np.int64) for a in self.actions)
        for h, a in enumerate(acts, start=1):
            if a.ndim != h:
                raise ValueError(f"step-{h} action table must have {h} axes")
            a.setflags(write=False)
        object.__setattr__(self, "actions", acts)

    @classmethod
    def constant(cls, H: int, O: int, action: int = 0) -> "Policy":
        return cls(tuple(np.full((O,) * h, action, dtype=np.int64) for h in range(1, H + 1)))

    @classmethod
    def random(cls, H: int, O: int, A: int, rng: np.random.Generator) -> "Policy":
        return cls(tuple(rng.integers(A, size=(O,) * h) for h in range(1, H + 1)))

    @property
    def H(self) -> int:
        return len(self.actions)

    def __call__(self, obs_history: Sequence[int]) -> int:
        return int(self.actions[len(obs_history) - 1][tuple(obs_history)])

    def full_table(self, h: int, A: int) -> np.ndarray:
        """``pi(tau_h)`` broadcast over every full history of step ``h``."""
        a = self.actions[h - 1]
        O = a.shape[0]
        expanded = a.reshape(sum(((O, 1) for _ in range(h - 1)), ()) + (O,))
        return np.broadcast_to(expanded, history_shape(O, A, h))

    def key(self) -> bytes:
        return b"".join(a.tobytes() for a in self.actions)

    def __eq__(self, other):
        return isinstance(other, Policy) and len(self.actions) == len(other.actions) and all(
            np.array_equal(x, y) for x, y in zip(self.actions, other.actions)
        )

    __hash__ = None


@dataclass(frozen=True)
class MixingPolicy:
    """Uniform mixture: one component is drawn per episode."""

    policies: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.policies) == 0:
            raise ValueError("a mixing policy needs at least one component")
        object.__setattr__(self, "policies", tuple(self.policies))

    def draw(self, rng: np.random.Generator) -> Policy:
        return self.policies[int(rng.integers(len(self.policies)))]


def mix(policies: Sequence[Policy]) -> MixingPolicy:
    return MixingPolicy(tuple(policies))


def components(policy: Policy | MixingPolicy) -> tuple:
    return policy.policies if isinstance(policy, MixingPolicy) else (policy,)


# -- exact filtering ---------------------------------------------------------


def forward_belief(model: TabularModel, history: Sequence[int]) -> np.ndarray:
    """Unnormalized joint ``p(tau_bar_h, s_h = s)`` for one full history.

    Actions in the history are treated as interventions, so the result is the
    probability of the observations given those actions.
    """
    h = check_history(model, history)
    if h > model.H:
        raise IndexError("beliefs are defined for steps 1..H")
    b = model.mu * model.E[0, history[0]]
    for i in range(1, h):
        a, o = history[2 * i - 1], history[2 * i]
        b = model.E[i, o] * (model.T[i - 1, :, :, a] @ b)
    return b


def belief_table(model: TabularModel, h: int) -> np.ndarray:
    """:func:`forward_belief` for every full history of step ``h`` at once.

    Shape ``history_shape(O, A, h) + (S,)``.
    """
    if not 1 <= h <= model.H:
        raise StepOutOfRangeError(f"step {h} outside 1..{model.H}")
    b = model.E[0] * model.mu[None, :]  # (O, S)
    for i in range(1, h):
        # b[..., s] -> b[..., a, o, s']
        b = np.einsum("...s,tsa,ot->...aot", b, model.T[i - 1], model.E[i])
    return b


def obs_given_sigma(model: TabularModel, h: int) -> np.ndarray:
    """Joint ``p(tau_bar_{h-1}, do(a_{h-1}), o_h)`` over every full history of step ``h``.

    Summing out ``o_h`` gives the mass of the conditioning event
    ``sigma_{h-1}``; for ``h = 1`` this is the marginal of ``o_1``.
    """
    if h == 1:
        return model.E[0] @ model.mu
    b = belief_table(model, h - 1)
    return np.einsum("...s,osa->...ao", b, model.obs_kernel(h - 1))


def policy_obs_law(model: TabularModel, policy: Policy, h: int) -> np.ndarray:
    """Joint ``p(o_1..o_h, s_h)`` when actions follow ``policy``; shape ``(O,)*h + (S,)``."""
    b = model.E[0] * model.mu[None, :]
    for i in range(1, h):
        acts = policy.actions[i - 1]  # (O,)*i
        Ta = np.moveaxis(model.T[i - 1], 2, 0)[acts]  # (O,)*i + (S', S)
        nxt = np.einsum("...ts,...s->...t", Ta, b)
        b = nxt[..., None, :] * model.E[i][(None,) * i]
    return b


def interventional_law(
    model: TabularModel, policy: Policy | MixingPolicy, h: int, a: int, a2: int
) -> np.ndarray:
    """Exact law of ``(o_{h-1}, o_h, o_{h+1})`` under ``do(a_{h-1}=a, a_h=a2)``.

    Returns an ``(O, O, O)`` array.  Mixing policies average their components.
    """
    if not 2 <= h <= model.H:
        raise StepOutOfRangeError(f"triples exist for steps 2..H, got {h}")
    out = np.zeros((model.O,) * 3)
    comps = components(policy)
    for pol in comps:
        joint = policy_obs_law(model, pol, h - 1)
        prev = joint.reshape(-1, model.O, model.S).sum(axis=0)  # (o_{h-1}, s_{h-1})
        state_h = np.einsum("xs,ts->xt", prev, model.T[h - 2, :, :, a])
        out += np.einsum("xt,yt,zt->xyz", state_h, model.E[h - 1], model.obs_kernel(h)[:, :, a2])
    return out / len(comps)


# -- simulation --------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    observations: tuple
    actions: tuple
    rewards: tuple

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))


def _draw(rng: np.random.Generator, p: np.ndarray) -> int:
    return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))


def _run(model, rng, choose, steps):
    s = _draw(rng, model.mu)
    states, obs, acts = [s], [_draw(rng, model.E[0, :, s])], []
    for h in range(1, steps + 1):
        a = choose(h, obs)
        acts.append(a)
        if h == model.H:
            obs.append(DUMMY_OBS)
            break
        s = _draw(rng, model.T[h - 1, :, s, a])
        states.append(s)
        obs.append(_draw(rng, model.E[h, :, s]))
    return states, obs, acts


def sample_episode(
    env: ParameterFamily | TabularModel,
    policy: Policy | MixingPolicy,
    rng: np.random.Generator,
) -> Trajectory:
    """One episode of the true model (``env.true_model`` for a family)."""
    model = env.true_model if isinstance(env, ParameterFamily) else env
    pol = policy.draw(rng) if isinstance(policy, MixingPolicy) else policy
    states, obs, acts = _run(model, rng, lambda h, o: pol(o), model.H)
    obs = obs[: model.H]
    rewards = tuple(float(model.r[o, a]) for o, a in zip(obs, acts))
    return Trajectory(tuple(states), tuple(obs), tuple(acts), rewards)


def sample_intervention_triple(
    env: ParameterFamily | TabularModel,
    policy: Policy | MixingPolicy,
    h: int,
    a: int,
    a2: int,
    rng: np.random.Generator,
) -> tuple[int, int, int]:
    """Run ``policy`` for ``h - 2`` actions, force ``a`` then ``a2``; return ``(o_{h-1}, o_h, o_{h+1})``."""
    model = env.true_model if isinstance(env, ParameterFamily) else env
    if not 2 <= h <= model.H:
        raise StepOutOfRangeError(f"triples exist for steps 2..H, got {h}")
    pol = policy.draw(rng) if isinstance(policy, MixingPolicy) else policy

    def choose(step, obs):
        if step == h - 1:
            return a
        if step == h:
            return a2
        return pol(obs)

    _, obs, _ = _run(model, rng, choose, h)
    return obs[h - 2], obs[h - 1], obs[h]
