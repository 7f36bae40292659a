"""Seeded experiments and CSV output.

Files written to the output directory:

``seed_<s>.csv``      one row per iteration (columns :data:`RUN_COLUMNS`)
``losses_<s>.csv``    one row per (iteration, candidate): ``iter, theta_index, L, argmax_tuple``
``dataset_<s>.json``  the collected triples, readable by ``optenet loss``
``aggregate.csv``     per-iteration quantiles of suboptimality across seeds and the
                      rate at which the true model was in the confidence set
``summary.txt``       run constants, per-seed results and timing

CSV files depend only on the configuration, never on timing.
"""

from __future__ import annotations

import csv
import functools
import io
import math
import os
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .modelio import load_family
from .model import ParameterFamily
from .planner import BUDGET_ENV, RunRecord, beta_min, family_constants, plan_exact, regret_guarantee, run_optenet
from .rkhs import compute_G, delta_triple_kernel, rbf_triple_kernel
from .solver import DualState, SmoothFamily, nearest_candidate, solve_minimax
from .zoo import generate_family

RUN_COLUMNS = (
    "iter",
    "theta_index",
    "policy_id",
    "set_size",
    "theta_star_in_set",
    "fallback",
    "L_true",
    "L_chosen",
    "suboptimality",
    "optimism_gap",
    "decomposition_bound",
    "decomposition_ok",
)
AGGREGATE_COLUMNS = ("iter", "median_suboptimality", "q25_suboptimality", "q75_suboptimality", "membership_rate")
LOSS_COLUMNS = ("iter", "theta_index", "L", "argmax_tuple")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def build_family(cfg: RunConfig) -> ParameterFamily:
    fam = cfg.family
    if "path" in fam:
        return load_family(fam["path"])
    rng = np.random.default_rng(int(fam.get("seed", 0)))
    return generate_family(fam["generator"], fam, rng)


def build_context(cfg: RunConfig, O: int):  # noqa: E741
    K = delta_triple_kernel(O) if cfg.kernel == "delta" else rbf_triple_kernel(O, cfg.kernel_bandwidth)
    return compute_G(K, np.eye(O**3))


def make_planner(cfg: RunConfig):
    if os.environ.get(BUDGET_ENV):
        return plan_exact
    return functools.partial(plan_exact, budget=cfg.plan_budget)


def resolve_beta(cfg: RunConfig, family: ParameterFamily, ctx) -> float:
    if cfg.beta is not None:
        return float(cfg.beta)
    c = family_constants(family, ctx)
    H, _, A, _ = family.shape
    return beta_min(c["d_o"], c["gamma"], c["alpha"], cfg.K, H, A, cfg.delta)


def stochastic_selector(cfg: RunConfig, family: ParameterFamily, beta: float, seed: int, planner, ctx):
    """Choose each iterate with the primal-dual solver, then snap to the nearest candidate."""
    H, _, A, O = family.shape
    state = {"theta_index": 0}

    def select(k, data, losses):
        smooth = SmoothFamily.full(family.candidates[state["theta_index"]])
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k, 1 << 20)))
        dual = DualState.initial(H, A, O, eta_theta=cfg.eta, eta_lambda=cfg.eta, eta_w=cfg.eta, n_dual=cfg.n_dual)
        res = solve_minimax(
            smooth, np.zeros(smooth.dim), data, beta, k, dual, cfg.solver_iterations, rng, planner, ctx, cfg.solver_batch
        )
        state["theta_index"] = nearest_candidate(smooth, res.theta, family.candidates)
        return state["theta_index"]

    return select


def run_seed(cfg: RunConfig, family: ParameterFamily, seed: int, beta: float, ctx, planner) -> RunRecord:
    selector = None
    if cfg.solver == "stochastic":
        selector = stochastic_selector(cfg, family, beta, seed, planner, ctx)
    return run_optenet(family, cfg.K, beta, seed, planner, ctx, selector, cfg.check_decomposition)


def record_csv(rec: RunRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_COLUMNS)
    for it in rec.iterations:
        w.writerow(
            _fmt(x)
            for x in (
                it.k, it.theta_index, it.policy_id, it.set_size, it.true_in_set, it.fallback, it.L_true,
                it.L_chosen, it.suboptimality, it.optimism_gap, it.regret_bound, it.decomposition_ok,
            )
        )
    return buf.getvalue()


def losses_csv(rec: RunRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOSS_COLUMNS)
    for it in rec.iterations:
        for i, (L, arg) in enumerate(zip(it.losses, it.argmax)):
            w.writerow((it.k, i, _fmt(L), arg))
    return buf.getvalue()


def aggregate_csv(records: list[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    if records:
        sub = np.stack([r.suboptimality for r in records])
        mem = np.stack([r.membership for r in records]).astype(float)
        for k in range(sub.shape[1]):
            q25, med, q75 = np.quantile(sub[:, k], [0.25, 0.5, 0.75])
            w.writerow((k + 1, _fmt(med), _fmt(q25), _fmt(q75), _fmt(mem[:, k].mean())))
    return buf.getvalue()


@dataclass
class ExperimentResult:
    exit_code: int
    records: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    summary: str = ""


def run_experiment(cfg: RunConfig, out: str | os.PathLike | None = None) -> ExperimentResult:
    """Run every seed, isolating failures; exit code 1 if any seed failed."""
    t0 = time.perf_counter()
    outdir = Path(cfg.out if out is None else out)
    outdir.mkdir(parents=True, exist_ok=True)
    family = build_family(cfg)
    H, S, A, O = family.shape
    ctx = build_context(cfg, O)
    beta = resolve_beta(cfg, family, ctx)
    planner = make_planner(cfg)
    result = ExperimentResult(0)

    for seed in cfg.seeds:
        try:
            rec = run_seed(cfg, family, seed, beta, ctx, planner)
        except Exception as e:  # isolate the failing seed
            result.failures[seed] = f"{type(e).__name__}: {e}\n{traceback.format_exc()}"
            continue
        result.records[seed] = rec
        for name, text in ((f"seed_{seed}.csv", record_csv(rec)), (f"losses_{seed}.csv", losses_csv(rec))):
            (outdir / name).write_text(text)
            result.files.append(outdir / name)
        rec.dataset.save(outdir / f"dataset_{seed}.json")
        result.files.append(outdir / f"dataset_{seed}.json")

    records = [result.records[s] for s in cfg.seeds if s in result.records]
    (outdir / "aggregate.csv").write_text(aggregate_csv(records))
    result.files.append(outdir / "aggregate.csv")
    result.exit_code = 1 if result.failures else 0
    result.summary = summarize(cfg, family, beta, records, result.failures, time.perf_counter() - t0)
    (outdir / "summary.txt").write_text(result.summary)
    result.files.append(outdir / "summary.txt")
    return result


def summarize(cfg, family, beta, records, failures, elapsed) -> str:
    H, S, A, O = family.shape
    lines = [f"candidates = {len(family)}, H = {H}, S = {S}, A = {A}, O = {O}", f"K = {cfg.K}, beta = {beta:.6g}"]
    if records:
        r0 = records[0]
        bound = regret_guarantee(r0.d_s, r0.gamma, beta, H, A, cfg.K) if cfg.K > 1 else math.inf
        lines += [
            f"gamma = {r0.gamma:.6g}, alpha = {r0.alpha:.6g}, d_s = {r0.d_s}, d_o = {r0.d_o}",
            f"guarantee on average suboptimality = {bound:.6g}",
            f"episodes per seed = {r0.episodes}",
        ]
    for rec in records:
        decomp = all(it.decomposition_ok for it in rec.iterations)
        lines.append(
            f"seed {rec.seed}: average suboptimality = {rec.average_suboptimality():.6g}, "
            f"membership = {rec.membership.mean():.4f}, decomposition holds = {decomp}"
        )
    for seed, msg in failures.items():
        lines.append(f"seed {seed}: FAILED {msg.splitlines()[0]}")
    lines.append(f"wall time = {elapsed:.3f} s")
    return "\n".join(lines) + "\n"
