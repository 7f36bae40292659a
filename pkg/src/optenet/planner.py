"""Exact planning, optimistic model selection and the exploration loop."""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .bellman import build_all_B, compute_values, evaluate_J
from .estimation import (
    TripleDataset,
    expected_error,
    loss_from_projected,
    project_dataset,
    tuple_index,
)
from .linear import build_bridge
from .model import ParameterFamily, Policy, TabularModel, sample_intervention_triple
from .rkhs import RKHSContext, default_context

BUDGET_ENV = "OPTENET_PLAN_BUDGET"
DEFAULT_BUDGET = 10**6
TIE_TOL = 1e-12


class BudgetExceededError(RuntimeError):
    pass


def plan_budget() -> int:
    raw = os.environ.get(BUDGET_ENV)
    return int(raw) if raw else DEFAULT_BUDGET


def plan_exact(model: TabularModel, budget: int | None = None) -> Policy:
    """Optimal deterministic policy by backward induction over observation histories.

    Each node carries the unnormalized belief ``p(tau_h, s_h)`` so values add
    up without normalization.  Ties go to the lowest action.
    """
    budget = plan_budget() if budget is None else budget
    H, O, A = model.H, model.O, model.A
    if (O * A) ** H > budget:
        raise BudgetExceededError(f"(O*A)^H = {(O * A) ** H} exceeds the planning budget {budget}")
    actions = [np.zeros((O,) * h, dtype=np.int64) for h in range(1, H + 1)]
    T = np.moveaxis(model.T, 3, 1) if H > 1 else None  # (H-1, A, S', S)

    def solve(h: int, obs: tuple, b: np.ndarray) -> float:
        mass = b.sum()
        best, best_a = -np.inf, 0
        for a in range(A):
            val = model.r[obs[-1], a] * mass
            if h < H:
                nxt = T[h - 1, a] @ b
                for o in range(O):
                    val += solve(h + 1, obs + (o,), model.E[h, o] * nxt)
            if val > best + TIE_TOL:
                best, best_a = val, a
        actions[h - 1][obs] = best_a
        return best

    for o in range(O):
        solve(1, (o,), model.E[0, o] * model.mu)
    return Policy(tuple(actions))


def optimistic_plan(
    family: ParameterFamily,
    confidence_indices,
    planner=plan_exact,
    cache: dict | None = None,
) -> tuple[int, Policy]:
    """Member of the confidence set with the largest optimal value; lowest index on ties."""
    idx = list(confidence_indices)
    if not idx:
        raise ValueError("empty confidence set")
    cache = {} if cache is None else cache
    best, best_val = None, -np.inf
    for i in idx:
        if i not in cache:
            pol = planner(family.candidates[i])
            cache[i] = (pol, evaluate_J(family.candidates[i], pol))
        val = cache[i][1]
        if val > best_val + TIE_TOL:
            best, best_val = i, val
    return best, cache[best][0]


def beta_min(d_o, gamma, alpha, K, H, A, delta) -> float:
    """Smallest confidence level covered by the sample-complexity guarantee."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    for name, v in (("d_o", d_o), ("alpha", alpha), ("K", K), ("H", H), ("A", A)):
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return d_o**1.5 * (gamma + 1) / alpha * math.sqrt(8 * math.log(2 * K * H * A**2 / delta))


def regret_guarantee(d_s, gamma, beta, H, A, K) -> float:
    """Right-hand side of the average-suboptimality guarantee."""
    return 4 * d_s * gamma**2 * beta * H**2 * A**2 * math.log(K) / math.sqrt(K) + 4 * d_s * gamma * H**2 / K


def family_constants(family: ParameterFamily, ctx: RKHSContext) -> dict:
    """``gamma`` (max over candidates), ``d_s``, ``d_o`` and ``alpha``."""
    bridges = [build_bridge(c) for c in family.candidates]
    return {
        "gamma": max(b.gamma for b in bridges),
        "d_s": bridges[0].d_s,
        "d_o": ctx.d_o,
        "alpha": ctx.alpha,
    }


def triple_rng(seed: int, k: int, h: int, a: int, a2: int) -> np.random.Generator:
    """Independent stream per collection tuple, stable under reordering."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k, h, a, a2)))


@dataclass
class IterationLog:
    k: int
    theta_index: int
    policy_id: int
    set_size: int
    true_in_set: bool
    fallback: bool
    L_true: float
    L_chosen: float
    suboptimality: float
    optimism_gap: float
    regret_bound: float
    decomposition_ok: bool
    wall_time: float
    losses: tuple = ()
    argmax: tuple = ()


@dataclass
class RunRecord:
    seed: int
    K: int
    beta: float
    gamma: float
    alpha: float
    d_s: int
    d_o: int
    H: int
    A: int
    optimal_value: float
    iterations: list = field(default_factory=list)
    dataset: TripleDataset | None = None

    @property
    def suboptimality(self) -> np.ndarray:
        return np.array([it.suboptimality for it in self.iterations])

    @property
    def membership(self) -> np.ndarray:
        return np.array([it.true_in_set for it in self.iterations])

    @property
    def episodes(self) -> int:
        return (self.H - 1) * self.A**2 * len(self.iterations)

    def average_suboptimality(self, upto: int | None = None) -> float:
        s = self.suboptimality[:upto]
        return float(s.mean()) if len(s) else 0.0


def run_optenet(
    family: ParameterFamily,
    K: int,
    beta: float,
    seed: int,
    planner=plan_exact,
    ctx: RKHSContext | None = None,
    selector=None,
    check_decomposition: bool = True,
) -> RunRecord:
    """Optimistic exploration with interventional data collection.

    Iteration ``k`` collects one triple per ``(h, a, a2)`` under the previous
    policy, keeps the candidates with loss at most ``beta / sqrt(k)`` (the
    minimizer alone if none qualifies), and plays the optimal policy of the
    most optimistic survivor.  ``selector(k, datasets, losses)`` can replace
    the exact model choice; it must return a candidate index.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    H, S, A, O = family.shape
    ctx = default_context(O) if ctx is None else ctx
    consts = family_constants(family, ctx)
    truth = family.true_model
    star = family.true_index
    Bs = [build_all_B(c) for c in family.candidates]
    cache: dict = {}
    pi_star = planner(truth)
    J_star = evaluate_J(truth, pi_star)
    record = RunRecord(seed, K, beta, consts["gamma"], consts["alpha"], consts["d_s"], consts["d_o"], H, A, J_star)

    data = TripleDataset(H, A, O)
    policy = Policy.constant(H, O, 0)
    policy_ids: dict[bytes, int] = {}
    values_cache: dict = {}
    for k in range(1, K + 1):
        t0 = time.perf_counter()
        for h, a, a2 in tuple_index(H, A):
            data.add(h, a, a2, sample_intervention_triple(family, policy, h, a, a2, triple_rng(seed, k, h, a, a2)))
        rho_hat = project_dataset(data, ctx)
        reports = [loss_from_projected(B, rho_hat) for B in Bs]
        losses = np.array([rep.L for rep in reports])
        thr = beta / math.sqrt(k)
        conf = [i for i, L in enumerate(losses) if L <= thr]
        fallback = not conf
        if fallback:
            conf = [int(np.argmin(losses))]
        if selector is not None:
            theta_k = int(selector(k, data, losses))
            if theta_k not in cache:
                pol = planner(family.candidates[theta_k])
                cache[theta_k] = (pol, evaluate_J(family.candidates[theta_k], pol))
            policy = cache[theta_k][0]
        else:
            theta_k, policy = optimistic_plan(family, conf, planner, cache)
        pid = policy_ids.setdefault(policy.key(), len(policy_ids))
        J_k = evaluate_J(truth, policy)
        sub = J_star - J_k
        in_set = star in conf
        gap = cache[theta_k][1] - J_star
        bound, ok = float("nan"), True
        if check_decomposition and in_set:
            key = (theta_k, pid)
            if key not in values_cache:
                V = compute_values(family.candidates[theta_k], policy, Bs[theta_k])
                values_cache[key] = expected_error(family.candidates[theta_k], truth, policy, Bs[theta_k], Bs[star], V)
            bound = values_cache[key]
            ok = sub <= bound + 1e-8
        record.iterations.append(
            IterationLog(
                k, theta_k, pid, len(conf), in_set, fallback, float(losses[star]), float(losses[theta_k]),
                sub, gap, bound, ok, time.perf_counter() - t0,
                tuple(float(x) for x in losses), tuple(rep.argmax_label() for rep in reports),
            )
        )
    record.dataset = data
    return record
