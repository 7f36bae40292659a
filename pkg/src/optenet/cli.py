"""Command line entry point: ``optenet {validate,run,plan,loss}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bellman import build_all_B, evaluate_J
from .config import ConfigError, load_config
from .estimation import TripleDataset, loss_from_projected, project_dataset
from .experiment import build_context, build_family, make_planner, resolve_beta, run_experiment
from .linear import SingularLambdaError, build_bridge
from .modelio import load_family, load_model
from .model import InvalidModelError
from .planner import BudgetExceededError, family_constants, plan_exact
from .rkhs import SingularGramError


def _family_from_args(args):
    if args.model:
        return load_family(args.model), None
    if not args.config:
        raise ConfigError("give --config or --model")
    cfg = load_config(args.config)
    return build_family(cfg), cfg


def cmd_validate(args) -> int:
    family, cfg = _family_from_args(args)
    H, S, A, O = family.shape
    print(f"family: {len(family)} candidate(s), H = {H}, S = {S}, A = {A}, O = {O}")
    ok = True
    for i, c in enumerate(family.candidates):
        try:
            print(f"candidate {i}:\n  " + build_bridge(c).report().replace("\n", "\n  "))
        except SingularLambdaError as e:
            ok = False
            print(f"candidate {i}: {e}")
    if not ok:
        return 2
    if cfg is not None:
        ctx = build_context(cfg, O)
        c = family_constants(family, ctx)
        print(f"gamma = {c['gamma']:.6g}, alpha = {c['alpha']:.6g}, d_s = {c['d_s']}, d_o = {c['d_o']}")
        print(f"beta = {resolve_beta(cfg, family, ctx):.6g}")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.out is not None:
        cfg.out = args.out
    print(cfg.describe(), file=sys.stderr)
    res = run_experiment(cfg)
    sys.stdout.write(res.summary)
    for seed, msg in res.failures.items():
        print(f"seed {seed} failed:\n{msg}", file=sys.stderr)
    return res.exit_code


def cmd_plan(args) -> int:
    if args.model:
        model = load_model(args.model)
        planner = plan_exact
    else:
        cfg = load_config(args.config)
        model = build_family(cfg).true_model
        planner = make_planner(cfg)
    pol = planner(model)
    print(f"J = {evaluate_J(model, pol):.12g}")
    for h, acts in enumerate(pol.actions, start=1):
        for idx in np.ndindex(acts.shape):
            print(f"h={h} obs={','.join(map(str, idx))} action={acts[idx]}")
    return 0


def cmd_loss(args) -> int:
    cfg = load_config(args.config)
    family = build_family(cfg)
    data = TripleDataset.load(args.dataset)
    ctx = build_context(cfg, family.shape[3])
    rho_hat = project_dataset(data, ctx)
    k = data.k
    beta = resolve_beta(cfg, family, ctx)
    rows = ["theta_index,L,argmax_tuple,in_set"]
    for i, c in enumerate(family.candidates):
        rep = loss_from_projected(build_all_B(c), rho_hat)
        rows.append(f"{i},{rep.L!r},{rep.argmax_label()},{int(rep.L <= beta / np.sqrt(k))}")
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "loss.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optenet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=False):
        sp.add_argument("--config", help="run configuration (JSON)")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--out", help="output directory")
        if model:
            sp.add_argument("--model", help="model or family file (JSON)")

    common(sub.add_parser("validate", help="check assumptions and report gamma, alpha"), model=True)
    common(sub.add_parser("run", help="run the exploration experiment"))
    common(sub.add_parser("plan", help="optimal policy of one model"), model=True)
    sp = sub.add_parser("loss", help="candidate losses on a saved dataset")
    common(sp)
    sp.add_argument("--dataset", required=True, help="dataset JSON written by 'run'")
    return p


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "plan": cmd_plan, "loss": cmd_loss}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("run", "loss") and not args.config:
        print("error: --config is required", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidModelError, SingularGramError, BudgetExceededError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
