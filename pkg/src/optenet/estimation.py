"""Adversarial estimation of the model from interventional observation triples.

Data tuples are indexed by ``(h, a, a2)`` with ``h in 2..H``: the triple
``(o_{h-1}, o_h, o_{h+1})`` is recorded after forcing ``a_{h-1} = a`` and
``a_h = a2``.  For a candidate model the truncated operator

    (F f)(x, o, y) = sum_{x2, y2} f(x, x2, y2) * B_{h, a2}(o, x2, y2)

should leave the triple law invariant, so the loss of a candidate is the
largest l1 residual ``|| V rho_hat - rho_hat ||_1`` over tuples, where ``V`` is
the adjoint of ``F`` and ``rho_hat`` the projected empirical law.  On a finite
triple space this is exactly the supremum of the discriminator objective over
``||f||_inf <= 1``, attained at ``f = sign(residual)``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bellman import apply_B, build_all_B, compute_values, on_policy
from .linear import Bridge
from .model import (
    ParameterFamily,
    Policy,
    StepOutOfRangeError,
    TabularModel,
    policy_obs_law,
)
from .rkhs import RKHSContext, project_distribution

TIE_TOL = 1e-12


class EmptyDatasetError(ValueError):
    pass


def tuple_index(H: int, A: int) -> list[tuple[int, int, int]]:
    """Data tuples in collection order."""
    return [(h, a, a2) for h in range(2, H + 1) for a in range(A) for a2 in range(A)]


class TripleDataset:
    """Append-only lists of triples per ``(h, a, a2)``."""

    def __init__(self, H: int, A: int, O: int):  # noqa: E741
        self.H, self.A, self.O = H, A, O
        self.triples: dict[tuple[int, int, int], list[tuple[int, int, int]]] = {
            t: [] for t in tuple_index(H, A)
        }
        self._counts = np.zeros((max(H - 1, 0), A, A, O, O, O))

    def add(self, h: int, a: int, a2: int, triple) -> None:
        key = (h, a, a2)
        if key not in self.triples:
            raise StepOutOfRangeError(f"no data tuple {key}")
        x, o, y = (int(v) for v in triple)
        if not all(0 <= v < self.O for v in (x, o, y)):
            raise IndexError(f"triple {triple} out of range for O = {self.O}")
        self.triples[key].append((x, o, y))
        self._counts[h - 2, a, a2, x, o, y] += 1

    def count(self, h: int, a: int, a2: int) -> int:
        return len(self.triples[(h, a, a2)])

    @property
    def k(self) -> int:
        """Common per-tuple size (minimum if the lists are uneven)."""
        return min((len(v) for v in self.triples.values()), default=0)

    def counts(self) -> np.ndarray:
        """Counts of shape ``(H-1, A, A, O, O, O)``."""
        return self._counts.copy()

    def to_json(self) -> dict:
        return {
            "H": self.H,
            "A": self.A,
            "O": self.O,
            "triples": [
                {"h": h, "a": a, "a2": a2, "data": [list(t) for t in self.triples[(h, a, a2)]]}
                for (h, a, a2) in self.triples
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "TripleDataset":
        ds = cls(int(d["H"]), int(d["A"]), int(d["O"]))
        for entry in d["triples"]:
            for t in entry["data"]:
                ds.add(int(entry["h"]), int(entry["a"]), int(entry["a2"]), t)
        return ds

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "TripleDataset":
        return cls.from_json(json.loads(Path(path).read_text()))


def empirical_distribution(triples, O: int) -> np.ndarray:  # noqa: E741
    """Normalized counts as a flat vector over ``O^3``."""
    if len(triples) == 0:
        raise EmptyDatasetError("empirical distribution of an empty dataset")
    t = np.asarray(triples, dtype=np.int64)
    flat = np.ravel_multi_index(t.T, (O, O, O))
    return np.bincount(flat, minlength=O**3) / len(t)


def _btensor(model, bridge, h, a2):
    if not 2 <= h <= model.H:
        raise StepOutOfRangeError(f"triples exist for steps 2..H, got {h}")
    from .bellman import build_B_tensor

    return build_B_tensor(model, bridge, h, a2)


def apply_F(model: TabularModel, bridge: Bridge, h: int, a2: int, f: np.ndarray) -> np.ndarray:
    O = model.O
    B = _btensor(model, bridge, h, a2)
    f = np.asarray(f, dtype=float).reshape(O, O, O)
    out = np.einsum("xij,oij->xo", f, B)
    return np.repeat(out[:, :, None], O, axis=2).ravel()


def apply_F_adjoint(model: TabularModel, bridge: Bridge, h: int, a2: int, rho: np.ndarray) -> np.ndarray:
    O = model.O
    B = _btensor(model, bridge, h, a2)
    rho = np.asarray(rho, dtype=float).reshape(O, O, O)
    return np.einsum("oij,xo->xij", B, rho.sum(axis=2)).ravel()


@dataclass(frozen=True)
class LossReport:
    tuples: tuple  # ((h, a, a2), ...)
    residuals: np.ndarray  # (n_tuples, O**3)
    values: np.ndarray  # (n_tuples,)
    L: float
    argmax: tuple

    @property
    def discriminators(self) -> np.ndarray:
        return np.sign(self.residuals)

    def argmax_label(self) -> str:
        return ";".join(f"{h}-{a}-{a2}" for h, a, a2 in self.argmax)


def project_dataset(datasets: TripleDataset, ctx: RKHSContext) -> np.ndarray:
    """Projected empirical laws, shape ``(H-1, A, A, O**3)``."""
    counts = datasets.counts()
    n = counts.sum(axis=(3, 4, 5), keepdims=True)
    if np.any(n == 0):
        raise EmptyDatasetError("every data tuple needs at least one triple")
    emp = (counts / n).reshape(counts.shape[:3] + (-1,))
    P = ctx.phi @ ctx.solve(ctx.phi.T @ ctx.kernel)
    return emp @ P.T


def loss_from_projected(B: np.ndarray, rho_hat: np.ndarray) -> LossReport:
    """Loss given the ``(H, A, O, O, O)`` tensor stack of a candidate."""
    Hm1, A = rho_hat.shape[:2]
    O = B.shape[-1]
    rho = rho_hat.reshape(Hm1, A, A, O, O, O)
    # residual[h, a, a2, x, i, j] = sum_o B[h+1, a2, o, i, j] * rho[h, a, a2, x, o, :].sum()
    Vrho = np.einsum("hcoij,hacxo->hacxij", B[1:], rho.sum(axis=-1))
    res = (Vrho - rho).reshape(Hm1 * A * A, -1)
    vals = np.abs(res).sum(axis=1)
    keys = tuple(tuple_index(Hm1 + 1, A))
    L = float(vals.max()) if len(vals) else 0.0
    arg = tuple(k for k, v in zip(keys, vals) if v >= L - TIE_TOL)
    return LossReport(keys, res, vals, L, arg)


def compute_loss(
    candidate: TabularModel,
    datasets: TripleDataset,
    ctx: RKHSContext,
    bridge: Bridge | None = None,
) -> LossReport:
    B = build_all_B(candidate, bridge)
    return loss_from_projected(B, project_dataset(datasets, ctx))


def confidence_set(
    family: ParameterFamily,
    datasets: TripleDataset,
    beta: float,
    k: int,
    ctx: RKHSContext,
    btensors: list | None = None,
) -> list[int]:
    """Candidates whose loss is at most ``beta / sqrt(k)`` (possibly empty)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    losses = candidate_losses(family, datasets, ctx, btensors)
    thr = beta / np.sqrt(k)
    return [i for i, L in enumerate(losses) if L <= thr]


def candidate_losses(family, datasets, ctx, btensors=None) -> np.ndarray:
    rho_hat = project_dataset(datasets, ctx)
    Bs = btensors if btensors is not None else [build_all_B(c) for c in family.candidates]
    return np.array([loss_from_projected(B, rho_hat).L for B in Bs])


# -- per-step error of an estimated model ------------------------------------


def _error_parts(theta_hat, theta_star, policy: Policy, B_hat, B_star, h, V_hat=None):
    if not theta_hat.same_spaces(theta_star):
        raise ValueError("models must share spaces")
    V_hat = compute_values(theta_hat, policy, B_hat) if V_hat is None else V_hat
    g = apply_B(theta_hat, policy, B_hat, h, V_hat[h]) - apply_B(theta_star, policy, B_star, h, V_hat[h])
    S = theta_star.S
    if h == 1:
        p1 = theta_star.E[0] @ theta_star.mu
        val = float(p1 @ g)
        return np.full(S, val), np.ones(S)
    b = policy_obs_law(theta_star, policy, h - 1)  # (O,)*(h-1) + (S,)
    K = theta_star.obs_kernel(h - 1)  # (o', s, a)
    acts = policy.actions[h - 2]
    Ksel = np.moveaxis(K[:, :, acts], (0, 1), (-1, -2))  # (O,)*(h-1) + (S, o')
    q = b[..., None] * Ksel
    g_on = on_policy(policy, g, h)  # (O,)*h
    lead = tuple(range(h - 1))
    num = (q * g_on[..., None, :]).sum(axis=lead).sum(-1)
    mass = q.sum(axis=lead).sum(-1)
    return num, mass


def compute_error_e(theta_hat, theta_star, policy, B_hat, B_star, h, V_hat=None) -> np.ndarray:
    """State-conditional error of the estimated operator at step ``h``, over ``s_{h-1}``.

    Entries for zero-mass states are 0; see :func:`error_mass` to detect them.
    """
    num, mass = _error_parts(theta_hat, theta_star, policy, B_hat, B_star, h, V_hat)
    out = np.zeros_like(num)
    np.divide(np.abs(num), mass, out=out, where=mass > 0)
    return out


def error_mass(theta_star: TabularModel, policy: Policy, h: int) -> np.ndarray:
    """Law of ``s_{h-1}`` under ``(theta_star, policy)``; ones for ``h = 1``."""
    if h == 1:
        return np.ones(theta_star.S)
    b = policy_obs_law(theta_star, policy, h - 1)
    return b.reshape(-1, theta_star.S).sum(axis=0)


def expected_error(theta_hat, theta_star, policy, B_hat, B_star, V_hat=None) -> float:
    """``sum_h E_{theta_star, policy}[e_h(s_{h-1})]``."""
    V_hat = compute_values(theta_hat, policy, B_hat) if V_hat is None else V_hat
    total = 0.0
    for h in range(1, theta_star.H + 1):
        num, _ = _error_parts(theta_hat, theta_star, policy, B_hat, B_star, h, V_hat)
        total += abs(num[0]) if h == 1 else float(np.abs(num).sum())
    return total


def exact_triple_laws(model: TabularModel, policy) -> np.ndarray:
    """Exact interventional laws for every tuple, shape ``(H-1, A, A, O**3)``."""
    from .model import interventional_law

    H, A = model.H, model.A
    out = np.zeros((max(H - 1, 0), A, A, model.O**3))
    for h, a, a2 in itertools.product(range(2, H + 1), range(A), range(A)):
        out[h - 2, a, a2] = interventional_law(model, policy, h, a, a2).ravel()
    return out
