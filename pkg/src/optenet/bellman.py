"""Value recursion over full histories.

A history function of step ``h`` is a dense array of shape
``history_shape(O, A, h)``; every full history is covered, including those a
given policy never visits, because conditional identities are stated for
arbitrary ``(tau_bar_{h-1}, a_{h-1})``.

``B[h-1, a, o, o1, o2]`` holds the finite-memory tensor
``sum_s p(o_h = o1, o_{h+1} = o2 | s, a) * Z_h(s, o)``.
"""

from __future__ import annotations

import numpy as np

from .linear import Bridge, build_bridge
from .model import (
    MixingPolicy,
    Policy,
    StepOutOfRangeError,
    TabularModel,
    belief_table,
    components,
    history_shape,
    policy_obs_law,
)


def total_reward(model: TabularModel, history) -> float:
    """Sum of ``r(o_h, a_h)`` along a complete history of step ``H + 1``."""
    if len(history) != 2 * model.H + 1:
        raise ValueError(f"incomplete history: need length {2 * model.H + 1}, got {len(history)}")
    obs, acts = history[0:-1:2], history[1::2]
    return float(sum(model.r[o, a] for o, a in zip(obs, acts)))


def reward_function(model: TabularModel) -> np.ndarray:
    """``R`` as a history function of step ``H + 1``."""
    H, O, A = model.H, model.O, model.A
    R = np.zeros(history_shape(O, A, H + 1))
    for h in range(H):
        shape = [1] * R.ndim
        shape[2 * h], shape[2 * h + 1] = O, A
        R = R + model.r.reshape(shape)
    return R


def _select_action(x: np.ndarray, pi: np.ndarray, axis_from_end: int) -> np.ndarray:
    """Pick ``x[..., pi, ...]`` along an action axis aligned after ``pi``'s axes."""
    idx = pi.reshape(pi.shape + (1,) * axis_from_end)
    idx = np.expand_dims(idx, pi.ndim)
    return np.take_along_axis(x, idx, axis=pi.ndim).squeeze(pi.ndim)


def apply_P(model: TabularModel, policy: Policy, h: int, f: np.ndarray) -> np.ndarray:
    """Full-memory operator: conditional expectation of ``f`` one step ahead.

    Zero-mass histories map to 0.
    """
    if not 1 <= h <= model.H:
        raise StepOutOfRangeError(f"step {h} outside 1..{model.H}")
    shape = history_shape(model.O, model.A, h)
    f = np.asarray(f).reshape(shape + (model.A, model.O))
    b = belief_table(model, h)
    joint = np.einsum("...s,psa->...ap", b, model.obs_kernel(h))
    pi = np.ascontiguousarray(policy.full_table(h, model.A))
    num = (_select_action(f, pi, 1) * _select_action(joint, pi, 1)).sum(-1)
    mass = b.sum(-1)
    out = np.zeros(shape)
    np.divide(num, mass, out=out, where=mass > 0)
    return out


def build_B_tensor(model: TabularModel, bridge: Bridge, h: int, a: int) -> np.ndarray:
    """``B[o, o1, o2]`` for step ``h`` and action ``a``."""
    P = model.pair_kernel(h)[..., a]  # (o1, o2, s)
    return np.einsum("xys,so->oxy", P, bridge.Z[h - 1])


def build_all_B(model: TabularModel, bridge: Bridge | None = None) -> np.ndarray:
    """Stack of every ``B`` tensor, shape ``(H, A, O, O, O)``."""
    bridge = build_bridge(model) if bridge is None else bridge
    B = np.einsum("hxysa,hso->haoxy", np.stack([model.pair_kernel(h) for h in range(1, model.H + 1)]), bridge.Z)
    B.setflags(write=False)
    return B


def apply_B(
    model: TabularModel, policy: Policy, btensors: np.ndarray, h: int, f: np.ndarray
) -> np.ndarray:
    """Finite-memory operator.

    ``(Bf)(tau_bar_h) = sum_{x, y} f(tau_bar_{h-1}, a_{h-1}, x, pi(tau_{h-1}, x), y)
    * B_{h, pi(tau_{h-1}, x)}(o_h, x, y)``; the last observation of the history
    only enters through the bridge.
    """
    if not 1 <= h <= model.H:
        raise StepOutOfRangeError(f"step {h} outside 1..{model.H}")
    O, A = model.O, model.A
    shape = history_shape(O, A, h)
    f = np.asarray(f).reshape(shape + (A, O))  # prefix + (x, a, y)
    # g[prefix, o, x, a] = sum_y f[prefix, x, a, y] * B[a, o, x, y]
    g = np.einsum("...xay,aoxy->...xao", f, btensors[h - 1])
    pi = np.ascontiguousarray(policy.full_table(h, A))  # prefix + (x,)
    g = _select_action(g, pi, 1)  # prefix + (x, o)
    return g.sum(axis=-2)


def compute_values(model: TabularModel, policy: Policy, btensors: np.ndarray) -> list[np.ndarray]:
    """``[V_1, ..., V_{H+1}]`` with ``V_{H+1} = R`` and ``V_h = B V_{h+1}``."""
    V = [reward_function(model)]
    for h in range(model.H, 0, -1):
        V.append(apply_B(model, policy, btensors, h, V[-1]))
    return V[::-1]


def on_policy(policy: Policy, g: np.ndarray, h: int) -> np.ndarray:
    """Restrict a step-``h`` history function to the histories ``policy`` generates.

    Returns an array over observation histories, shape ``(O,) * h``.
    """
    O = policy.actions[0].shape[0]
    grids = np.indices((O,) * h, sparse=True)
    idx = []
    for i in range(h):
        idx.append(grids[i])
        if i < h - 1:
            idx.append(policy.actions[i][tuple(grids[: i + 1])])
    return g[tuple(idx)]


def expect_on_policy(model: TabularModel, policy: Policy | MixingPolicy, h: int, g: np.ndarray) -> float:
    """``E_{theta, pi}[g(tau_bar_h)]`` by exact enumeration."""
    total = 0.0
    comps = components(policy)
    for pol in comps:
        law = policy_obs_law(model, pol, h).sum(-1)
        total += float((law * on_policy(pol, g, h)).sum())
    return total / len(comps)


def evaluate_J(model: TabularModel, policy: Policy | MixingPolicy) -> float:
    """Expected total reward by enumerating observation histories."""
    comps = components(policy)
    total = 0.0
    for pol in comps:
        for h in range(1, model.H + 1):
            law = policy_obs_law(model, pol, h).sum(-1)
            last = np.indices(law.shape, sparse=True)[-1]
            total += float((law * model.r[last, pol.actions[h - 1]]).sum())
    return total / len(comps)


def value_J(model: TabularModel, policy: Policy, btensors: np.ndarray) -> float:
    """``E[V_1(o_1)]`` from the finite-memory recursion."""
    V1 = compute_values(model, policy, btensors)[0]
    return float((model.E[0] @ model.mu) @ V1)
