"""Primal-dual stochastic solver for the relaxed optimistic model selection.

The confidence constraint is moved into the objective

    L(theta, lam, w) = -J(theta, pi_hat(theta))
                       + sum_t lam_t * (Lw_t(theta) - beta / sqrt(k)),

    Lw_t(theta) = E_{X ~ D_t}[(S F_t f_t - S f_t)(X)],   f_t = tanh(w_t),

and ``(lam, w)`` ascend while ``theta`` descends.  All three gradient
estimators are unbiased; each comes with a ``*_samples`` variant returning
one row per independent draw so callers can form standard errors.

Model parameters enter through :class:`SmoothFamily`, a softmax of affine
logits per transition and emission column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bellman import build_all_B, evaluate_J
from .estimation import EmptyDatasetError, TripleDataset, tuple_index
from .linear import build_bridge
from .model import Policy, TabularModel
from .planner import plan_exact
from .rkhs import RKHSContext, default_context

LOGIT_FLOOR = 1e-6


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class SmoothFamily:
    """``T = softmax(base_T + dT . theta)`` over next states, likewise ``E`` over observations."""

    base_T: np.ndarray  # (H-1, S, S, A)
    dT: np.ndarray  # (p, H-1, S, S, A)
    base_E: np.ndarray  # (H, O, S)
    dE: np.ndarray  # (p, H, O, S)
    mu: np.ndarray
    r: np.ndarray

    @property
    def dim(self) -> int:
        return self.dT.shape[0]

    def probs(self, theta):
        theta = np.asarray(theta, dtype=float)
        T = _softmax(self.base_T + np.tensordot(theta, self.dT, axes=1), axis=1)
        E = _softmax(self.base_E + np.tensordot(theta, self.dE, axes=1), axis=1)
        return T, E

    def model(self, theta) -> TabularModel:
        T, E = self.probs(theta)
        return TabularModel(self.mu, T, E, self.r)

    def scores(self, theta):
        """``d log T`` of shape ``(p, H-1, S, S, A)`` and ``d log E`` of shape ``(p, H, O, S)``."""
        T, E = self.probs(theta)
        sT = self.dT - (T[None] * self.dT).sum(axis=2, keepdims=True)
        sE = self.dE - (E[None] * self.dE).sum(axis=2, keepdims=True)
        return sT, sE

    def derivatives(self, theta):
        T, E = self.probs(theta)
        sT, sE = self.scores(theta)
        return T[None] * sT, E[None] * sE

    @classmethod
    def full(cls, model: TabularModel, floor: float = LOGIT_FLOOR) -> "SmoothFamily":
        """One coordinate per logit, centred so that ``theta = 0`` reproduces ``model``.

        Zero probabilities are floored at ``floor`` before taking logs.
        """
        bT = np.log(np.maximum(model.T, floor))
        bE = np.log(np.maximum(model.E, floor))
        nT, nE = bT.size, bE.size
        dT = np.zeros((nT + nE,) + bT.shape)
        dE = np.zeros((nT + nE,) + bE.shape)
        dT.reshape(nT + nE, -1)[np.arange(nT), np.arange(nT)] = 1.0
        dE.reshape(nT + nE, -1)[nT + np.arange(nE), np.arange(nE)] = 1.0
        return cls(bT, dT, bE, dE, model.mu, model.r)

    @classmethod
    def interpolate(cls, m0: TabularModel, m1: TabularModel, floor: float = LOGIT_FLOOR) -> "SmoothFamily":
        """One parameter moving the logits from ``m0`` (``theta = 0``) to ``m1`` (``theta = 1``)."""
        l0T, l1T = np.log(np.maximum(m0.T, floor)), np.log(np.maximum(m1.T, floor))
        l0E, l1E = np.log(np.maximum(m0.E, floor)), np.log(np.maximum(m1.E, floor))
        return cls(l0T, (l1T - l0T)[None], l0E, (l1E - l0E)[None], m0.mu, m0.r)


def B_jvp(smooth: SmoothFamily, theta, kernel_tilde: np.ndarray | None = None):
    """Tensor stack ``B`` and its derivative, shapes ``(H, A, O, O, O)`` and ``(p, H, A, O, O, O)``.

    The derivative is propagated analytically through ``Lambda``, ``Z`` and the
    pair kernel; the state basis is the one-hot basis.
    """
    model = smooth.model(theta)
    bridge = build_bridge(model, kernel_tilde=kernel_tilde)
    dT, dE = smooth.derivatives(theta)
    H, S, A, O = model.H, model.S, model.A, model.O
    Kt, psi = bridge.kernel, bridge.psi
    nu, Li = bridge.nu, bridge.Lambda_inv
    dnu = np.einsum("phos,si->phoi", dE, psi)
    dLam = np.einsum("phoi,oq,hqj->phij", dnu, Kt, nu)
    dLam = dLam + np.swapaxes(dLam, -1, -2)
    # dZ = psi (-Li dLam Li nu^T Kt + Li dnu^T Kt)
    t1 = -np.einsum("hij,phjk,hkl,hol,oq->phiq", Li, dLam, Li, nu, Kt)
    t2 = np.einsum("hij,phoj,oq->phiq", Li, dnu, Kt)
    dZ = np.einsum("si,phiq->phsq", psi, t1 + t2)

    K = np.stack([model.obs_kernel(h) for h in range(1, H + 1)])  # (H, O, S, A)
    dK = np.zeros((smooth.dim,) + K.shape)
    if H > 1:
        dK[:, :-1] = np.einsum("phot,htsa->phosa", dE[:, 1:], model.T) + np.einsum(
            "hot,phtsa->phosa", model.E[1:], dT
        )
    P = np.einsum("hxs,hysa->hxysa", model.E, K)
    dP = np.einsum("phxs,hysa->phxysa", dE, K) + np.einsum("hxs,physa->phxysa", model.E, dK)
    B = np.einsum("hxysa,hso->haoxy", P, bridge.Z)
    dB = np.einsum("phxysa,hso->phaoxy", dP, bridge.Z) + np.einsum("hxysa,phso->phaoxy", P, dZ)
    return B, dB


@dataclass
class DualState:
    lam: np.ndarray
    w: np.ndarray
    eta_theta: float = 1e-2
    eta_lambda: float = 1e-2
    eta_w: float = 1e-2
    n_dual: int = 50
    n_primal: int = 1

    @classmethod
    def initial(cls, H: int, A: int, O: int, lam0: float = 1.0, **kw) -> "DualState":  # noqa: E741
        n = (H - 1) * A * A
        return cls(np.full(n, lam0), np.zeros((n, O**3)), **kw)


def discriminators(w: np.ndarray) -> np.ndarray:
    """``f_t(x) = tanh(w[t, x])``, bounded by one for every ``w``."""
    return np.tanh(w)


class _Problem:
    """Data-dependent pieces shared by the objective and the estimators."""

    def __init__(self, data: TripleDataset, ctx: RKHSContext | None):
        self.H, self.A, self.O = data.H, data.A, data.O
        self.ctx = default_context(self.O) if ctx is None else ctx
        self.tuples = tuple_index(self.H, self.A)
        counts = data.counts()
        n = counts.sum(axis=(3, 4, 5))
        if np.any(n == 0):
            raise EmptyDatasetError("every data tuple needs at least one triple")
        self.emp = (counts / n[..., None, None, None]).reshape(len(self.tuples), -1)
        self.cdf = np.cumsum(self.emp, axis=1)
        ctx = self.ctx
        self.Ginv = ctx.solve(np.eye(ctx.d_o))
        self.Smat = ctx.kernel @ ctx.phi @ self.Ginv @ ctx.phi.T
        self.phi_cdf = np.cumsum(ctx.phi, axis=0).T  # (d_o, O**3)
        self.steps = np.array([h for h, _, _ in self.tuples])
        self.a2 = np.array([a2 for _, _, a2 in self.tuples])


def _F(B: np.ndarray, prob: _Problem, f: np.ndarray) -> np.ndarray:
    """``F_t f_t`` for every tuple, shape ``(n_tuples, O**3)``."""
    O = prob.O
    out = np.empty_like(f)
    for t, (h, a, a2) in enumerate(prob.tuples):
        g = np.einsum("xij,oij->xo", f[t].reshape(O, O, O), B[h - 1, a2])
        out[t] = np.repeat(g[:, :, None], O, axis=2).ravel()
    return out


def constraint_values(B: np.ndarray, prob: _Problem, w: np.ndarray) -> np.ndarray:
    """``Lw_t(theta)`` for every tuple, computed exactly from the empirical laws."""
    f = discriminators(w)
    g = _F(B, prob, f) - f
    return np.einsum("tx,xy,ty->t", prob.emp, prob.Smat, g)


def lagrangian(
    smooth: SmoothFamily,
    theta,
    lam,
    w,
    data: TripleDataset,
    beta: float,
    k: int,
    planner=plan_exact,
    ctx: RKHSContext | None = None,
    policy: Policy | None = None,
) -> float:
    """Exact objective; ``policy`` defaults to the planner's output at ``theta``."""
    prob = _Problem(data, ctx)
    model = smooth.model(theta)
    pol = planner(model) if policy is None else policy
    B = build_all_B(model)
    cons = constraint_values(B, prob, np.asarray(w, dtype=float)) - beta / math.sqrt(k)
    return -evaluate_J(model, pol) + float(np.dot(lam, cons))


# -- sampling ----------------------------------------------------------------


def _draw_rows(cdf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a cumulative table."""
    u = rng.random(cdf.shape[:-1]) * cdf[..., -1]
    return np.minimum((cdf < u[..., None]).sum(-1), cdf.shape[-1] - 1)


@dataclass
class _Draws:
    x: np.ndarray  # (n, T) data points
    Y: np.ndarray  # (n, T, d, d) draws from phi_i
    Yp: np.ndarray  # (n, T, d, d) draws from phi_j
    ot: np.ndarray  # (n, T, d, d) importance draws over O^2, uniform


def _categorical(cdf: np.ndarray, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from ``cdf[rows[...]]`` for every entry of ``rows``."""
    u = rng.random(rows.shape)
    out = np.empty(rows.shape, dtype=np.int64)
    for r in range(cdf.shape[0]):
        m = rows == r
        out[m] = np.searchsorted(cdf[r], u[m] * cdf[r, -1], side="right")
    return np.minimum(out, cdf.shape[1] - 1)


def _sample(prob: _Problem, n: int, rng: np.random.Generator) -> _Draws:
    T, d, O = len(prob.tuples), prob.ctx.d_o, prob.O
    x = _categorical(prob.cdf, np.broadcast_to(np.arange(T), (n, T)), rng)
    i_rows = np.broadcast_to(np.arange(d)[:, None], (n, T, d, d))
    Y = _categorical(prob.phi_cdf, i_rows, rng)
    Yp = _categorical(prob.phi_cdf, np.swapaxes(i_rows, -1, -2), rng)
    ot = rng.integers(O * O, size=(n, T, d, d))
    return _Draws(x, Y, Yp, ot)


CHUNK = 2048


def _chunked(fn, n: int):
    return np.concatenate([fn(min(CHUNK, n - i)) for i in range(0, n, CHUNK)], axis=0)


def _pieces(prob: _Problem, dr: _Draws, f: np.ndarray):
    """Per-draw weights and the importance-sampled terms for every tuple."""
    O = prob.O
    coef = prob.Ginv[None, None] * prob.ctx.kernel[dr.x[..., None, None], dr.Y]  # (n, T, d, d)
    x_prev, o_mid, _ = np.unravel_index(dr.Yp, (O, O, O))
    z1 = x_prev * O * O + dr.ot  # triple (o_{h-1}, o~_h, o~_{h+1})
    tix = np.arange(len(prob.tuples))[None, :, None, None]
    B_idx = (prob.steps - 1)[tix], prob.a2[tix], o_mid, dr.ot // O, dr.ot % O
    ip = O * O  # 1 / phi_ip
    return coef, z1, tix, B_idx, ip


def grad_lambda_samples(smooth, theta, w, data, beta, k, n, rng, ctx=None) -> np.ndarray:
    """``n`` independent draws of ``g_lambda``, shape ``(n, n_tuples)``."""
    prob = _Problem(data, ctx)
    B = build_all_B(smooth.model(theta))
    f = discriminators(np.asarray(w, dtype=float))

    def chunk(m):
        dr = _sample(prob, m, rng)
        coef, z1, tix, B_idx, ip = _pieces(prob, dr, f)
        return (coef * (f[tix, z1] * B[B_idx] * ip - f[tix, dr.Yp])).sum(axis=(2, 3))

    return _chunked(chunk, n) - beta / math.sqrt(k)


def grad_lambda_hat(smooth, theta, w, data, beta, k, batch, rng, ctx=None) -> np.ndarray:
    return grad_lambda_samples(smooth, theta, w, data, beta, k, batch, rng, ctx).mean(axis=0)


def grad_w_samples(smooth, theta, lam, w, data, n, rng, ctx=None) -> np.ndarray:
    """``n`` draws of ``g_w``, shape ``(n, n_tuples, O**3)``."""
    prob = _Problem(data, ctx)
    B = build_all_B(smooth.model(theta))
    w = np.asarray(w, dtype=float)
    f = discriminators(w)
    df = 1.0 - f**2
    lam = np.asarray(lam, dtype=float)[None, :, None, None]
    T, N = len(prob.tuples), prob.O**3

    def chunk(m):
        dr = _sample(prob, m, rng)
        coef, z1, tix, B_idx, ip = _pieces(prob, dr, f)
        plus = lam * coef * df[tix, z1] * B[B_idx] * ip
        minus = lam * coef * df[tix, dr.Yp]
        rows = np.arange(m)[:, None, None, None] * (T * N) + tix * N
        out = np.bincount((rows + z1).ravel(), weights=plus.ravel(), minlength=m * T * N)
        out -= np.bincount((rows + dr.Yp).ravel(), weights=minus.ravel(), minlength=m * T * N)
        return out.reshape(m, T, N)

    return _chunked(chunk, n)


def grad_w_hat(smooth, theta, lam, w, data, batch, rng, ctx=None) -> np.ndarray:
    return grad_w_samples(smooth, theta, lam, w, data, batch, rng, ctx).mean(axis=0)


def simulate_scores(smooth: SmoothFamily, theta, policy: Policy, n: int, rng: np.random.Generator):
    """Total rewards and log-likelihood scores of ``n`` simulated episodes at ``theta``.

    The score covers every parametrized factor: transitions and all emissions.
    """
    model = smooth.model(theta)
    sT, sE = smooth.scores(theta)
    H = model.H
    Tcdf = np.cumsum(model.T, axis=1)  # (H-1, S', S, A)
    Ecdf = np.cumsum(model.E, axis=1)  # (H, O, S)
    s = _draw_rows(np.broadcast_to(np.cumsum(model.mu), (n, model.S)), rng)
    o = _draw_rows(np.moveaxis(Ecdf[0], 0, -1)[s], rng)
    obs = [o]
    R = np.zeros(n)
    score = sE[:, 0, o, s].T.copy()
    for h in range(1, H + 1):
        a = policy.actions[h - 1][tuple(obs)]
        R += model.r[o, a]
        if h == H:
            break
        s_next = _draw_rows(np.moveaxis(Tcdf[h - 1], 0, -1)[s, a], rng)
        o = _draw_rows(np.moveaxis(Ecdf[h], 0, -1)[s_next], rng)
        score += sT[:, h - 1, s_next, s, a].T + sE[:, h, o, s_next].T
        s = s_next
        obs.append(o)
    return R, score


def grad_theta_samples(smooth, theta, lam, w, data, n, rng, planner=plan_exact, ctx=None, policy=None) -> np.ndarray:
    """``n`` draws of ``g_theta``, shape ``(n, p)``, holding the planned policy fixed."""
    prob = _Problem(data, ctx)
    model = smooth.model(theta)
    pol = planner(model) if policy is None else policy
    _, dB = B_jvp(smooth, theta)
    f = discriminators(np.asarray(w, dtype=float))
    lam = np.asarray(lam, dtype=float)[None, :, None, None]

    def chunk(m):
        R, score = simulate_scores(smooth, theta, pol, m, rng)
        dr = _sample(prob, m, rng)
        coef, z1, tix, B_idx, ip = _pieces(prob, dr, f)
        wgt = lam * coef * f[tix, z1] * ip  # (m, T, d, d)
        dBv = dB[(slice(None),) + B_idx]  # (p, m, T, d, d)
        return -R[:, None] * score + np.einsum("ntij,pntij->np", wgt, dBv)

    return _chunked(chunk, n)


def grad_theta_hat(smooth, theta, lam, w, data, batch, rng, planner=plan_exact, ctx=None, policy=None) -> np.ndarray:
    return grad_theta_samples(smooth, theta, lam, w, data, batch, rng, planner, ctx, policy).mean(axis=0)


# -- primal-dual loop ---------------------------------------------------------


@dataclass
class SolverResult:
    theta: np.ndarray
    dual: DualState
    trace: list = field(default_factory=list)
    policy_switches: int = 0

    TRACE_COLUMNS = ("step", "lagrangian", "grad_theta_norm", "grad_lambda_norm", "grad_w_norm", "max_constraint", "policy_switch")


def solve_minimax(
    smooth: SmoothFamily,
    theta0,
    data: TripleDataset,
    beta: float,
    k: int,
    dual: DualState,
    iterations: int,
    rng: np.random.Generator,
    planner=plan_exact,
    ctx: RKHSContext | None = None,
    batch: int = 32,
) -> SolverResult:
    """Alternate ``n_dual`` ascent steps on ``(lam, w)`` with ``n_primal`` descent steps on ``theta``.

    ``lam`` is clipped at zero after every update.  The planner is rerun after
    each primal step and policy changes are counted.
    """
    theta = np.array(theta0, dtype=float)
    lam, w = dual.lam.astype(float).copy(), dual.w.astype(float).copy()
    res = SolverResult(theta, dual)
    prev_key = None
    for step in range(1, iterations + 1):
        for _ in range(dual.n_dual):
            gl = grad_lambda_hat(smooth, theta, w, data, beta, k, batch, rng, ctx)
            gw = grad_w_hat(smooth, theta, lam, w, data, batch, rng, ctx)
            lam = np.maximum(0.0, lam + dual.eta_lambda * gl)
            w = w + dual.eta_w * gw
        for _ in range(dual.n_primal):
            pol = planner(smooth.model(theta))
            key = pol.key()
            switched = prev_key is not None and key != prev_key
            res.policy_switches += int(switched)
            prev_key = key
            gt = grad_theta_hat(smooth, theta, lam, w, data, batch, rng, planner, ctx, pol)
            theta = theta - dual.eta_theta * gt
        prob = _Problem(data, ctx)
        B = build_all_B(smooth.model(theta))
        cons = constraint_values(B, prob, w) - beta / math.sqrt(k)
        res.trace.append(
            (
                step,
                lagrangian(smooth, theta, lam, w, data, beta, k, planner, ctx),
                float(np.linalg.norm(gt)),
                float(np.linalg.norm(gl)),
                float(np.linalg.norm(gw)),
                float(cons.max()),
                int(switched),
            )
        )
    res.theta = theta
    res.dual = DualState(lam, w, dual.eta_theta, dual.eta_lambda, dual.eta_w, dual.n_dual, dual.n_primal)
    return res


def nearest_candidate(smooth: SmoothFamily, theta, candidates) -> int:
    """Index of the candidate closest in l1 over transitions and emissions."""
    T, E = smooth.probs(theta)
    d = [np.abs(c.T - T).sum() + np.abs(c.E - E).sum() for c in candidates]
    return int(np.argmin(d))
