"""Linear kernel structure: basis distributions, observation operator, bridge.

The bridge ``Z_h`` is a left inverse of the emission map ``E_h`` on the span
of the state basis ``psi``.  It is built in closed form from

    nu_h     = E_h psi                       (O x d_s)
    Lambda_h = nu_h^T Kt nu_h                 (d_s x d_s)
    Z_h      = psi Lambda_h^{-1} nu_h^T Kt    (S x O)

where ``Kt`` is an auxiliary kernel on observations (Kronecker delta by
default).  ``gamma = d_s * max_h max_j sum_i |Lambda_h^{-1}[i, j]|`` bounds
the l1 -> l1 norm of every ``Z_h``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import InvalidModelError, PROB_TOL, TabularModel, _check_simplex

BRIDGE_TOL = 1e-9
EIG_TOL = 1e-10
DEDUP_TOL = 1e-12


class SingularLambdaError(ValueError):
    def __init__(self, msg: str, min_eig: float):
        super().__init__(msg)
        self.min_eig = min_eig


@dataclass(frozen=True, eq=False)
class LinearKernelModel:
    """POMDP whose kernels factor through low-dimensional bases.

    ``T_h(s' | s, a) = u[s'] @ M[h-1, a] @ v[s]`` and
    ``E_h(o | s) = q[o] @ g[h-1][:, s]``.
    """

    u: np.ndarray  # (S, d_u)
    v: np.ndarray  # (S, d_v)
    q: np.ndarray  # (O, d_q)
    M: np.ndarray  # (H-1, A, d_u, d_v)
    g: np.ndarray  # (H, d_q, S)
    mu: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name in ("u", "v", "q", "M", "g", "mu", "r"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        _check_simplex(self.u, 0, "u")
        _check_simplex(self.q, 0, "q")
        if np.any(self.M < 0) or np.any(self.g < 0):
            raise InvalidModelError("M and g must be nonnegative")
        # mu must be a convex combination of the columns of u
        from scipy.optimize import linprog

        res = linprog(
            np.zeros(self.u.shape[1]),
            A_eq=np.vstack([self.u, np.ones(self.u.shape[1])]),
            b_eq=np.append(self.mu, 1.0),
            bounds=(0, None),
            method="highs",
        )
        if res.status != 0:
            raise InvalidModelError("mu is not in the convex hull of the columns of u")
        self.to_tabular()  # validates reconstructed kernels

    @property
    def H(self) -> int:
        return self.g.shape[0]

    def to_tabular(self) -> TabularModel:
        T = np.einsum("xi,haij,sj->hxsa", self.u, self.M, self.v)
        E = np.einsum("oi,his->hos", self.q, self.g)
        if T.shape[0] == 0:
            T = np.zeros((0, self.u.shape[0], self.u.shape[0], self.r.shape[1]))
        return TabularModel(mu=self.mu, T=T, E=E, r=self.r)


def embed_tabular(model: TabularModel) -> LinearKernelModel:
    """One-hot embedding: ``u = v = I_S``, ``q = I_O``, ``M = T``, ``g = E``."""
    return LinearKernelModel(
        u=np.eye(model.S),
        v=np.eye(model.S),
        q=np.eye(model.O),
        M=np.transpose(model.T, (0, 3, 1, 2)),
        g=model.E,
        mu=model.mu,
        r=model.r,
    )


def _dedup_columns(cols: list[np.ndarray]) -> np.ndarray:
    kept: list[np.ndarray] = []
    for c in cols:
        if all(np.abs(c - k).sum() > DEDUP_TOL for k in kept):
            kept.append(c)
    return np.stack(kept, axis=1)


@dataclass(frozen=True)
class StateBases:
    psi: np.ndarray  # (S, d_s)

    @property
    def d_s(self) -> int:
        return self.psi.shape[1]


@dataclass(frozen=True)
class ObsBases:
    phi: np.ndarray  # (O**3, d_o), rows in C order over (o_1, o_2, o_3)

    @property
    def d_o(self) -> int:
        return self.phi.shape[1]


def build_state_bases(model: LinearKernelModel) -> StateBases:
    """Columns of ``u`` plus the normalized products ``u_i * v_j`` with positive mass."""
    cols = [model.u[:, i] for i in range(model.u.shape[1])]
    for i in range(model.u.shape[1]):
        for j in range(model.v.shape[1]):
            p = model.u[:, i] * model.v[:, j]
            mass = p.sum()
            if mass > PROB_TOL:
                cols.append(p / mass)
    return StateBases(_dedup_columns(cols))


def build_obs_bases(model: LinearKernelModel) -> ObsBases:
    """Triple products ``q_i (x) q_j (x) q_l`` over ``O^3``."""
    q = model.q
    O, d = q.shape
    phi = np.einsum("xi,yj,zl->xyzijl", q, q, q).reshape(O**3, d**3)
    return ObsBases(phi)


def apply_O(model: TabularModel, h: int, f: np.ndarray) -> np.ndarray:
    """Push a signed measure over states through the step-``h`` emission."""
    return model.E[h - 1] @ f


def delta_kernel(n: int) -> np.ndarray:
    return np.eye(n)


@dataclass(frozen=True, eq=False)
class Bridge:
    psi: np.ndarray  # (S, d_s)
    nu: np.ndarray  # (H, O, d_s)
    Lambda: np.ndarray  # (H, d_s, d_s)
    Lambda_inv: np.ndarray  # (H, d_s, d_s)
    Z: np.ndarray  # (H, S, O)
    gamma: float
    min_eig: np.ndarray  # (H,)
    kernel: np.ndarray  # (O, O)

    @property
    def d_s(self) -> int:
        return self.psi.shape[1]

    def report(self) -> str:
        lines = [f"d_s = {self.d_s}", f"gamma = {self.gamma:.6g}"]
        for h in range(self.Lambda.shape[0]):
            cond = np.linalg.cond(self.Lambda[h])
            lines.append(
                f"step {h + 1}: lambda_min(Lambda) = {self.min_eig[h]:.6g}, cond = {cond:.6g}"
            )
        return "\n".join(lines)


def build_bridge(
    model: TabularModel,
    bases: StateBases | None = None,
    kernel_tilde: np.ndarray | None = None,
) -> Bridge:
    """Closed-form left inverse of every emission map on ``span(psi)``.

    Raises :class:`SingularLambdaError` when some ``Lambda_h`` is not positive
    definite, i.e. the emission map is not injective on ``span(psi)`` as seen
    through the kernel.
    """
    psi = np.eye(model.S) if bases is None else np.asarray(bases.psi, dtype=float)
    Kt = delta_kernel(model.O) if kernel_tilde is None else np.asarray(kernel_tilde, dtype=float)
    if Kt.shape != (model.O, model.O):
        raise ValueError(f"auxiliary kernel must be {model.O}x{model.O}")
    if np.max(np.abs(Kt)) > 1 + PROB_TOL or not np.allclose(Kt, Kt.T, atol=1e-12):
        raise ValueError("auxiliary kernel must be symmetric with entries bounded by 1")

    nu = np.einsum("hos,si->hoi", model.E, psi)
    Lam = np.einsum("hoi,op,hpj->hij", nu, Kt, nu)
    min_eig = np.array([np.linalg.eigvalsh(L)[0] for L in Lam])
    worst = int(np.argmin(min_eig))
    if min_eig[worst] <= EIG_TOL:
        raise SingularLambdaError(
            f"Lambda at step {worst + 1} is singular (min eigenvalue {min_eig[worst]:.3g})",
            float(min_eig[worst]),
        )
    Lam_inv = np.linalg.inv(Lam)
    Z = np.einsum("si,hij,hoj,op->hsp", psi, Lam_inv, nu, Kt)
    gamma = psi.shape[1] * float(np.abs(Lam_inv).sum(axis=1).max())

    resid = np.abs(np.einsum("hso,hot,ti->hsi", Z, model.E, psi) - psi[None]).sum(axis=1).max()
    if resid > BRIDGE_TOL:
        raise SingularLambdaError(
            f"bridge fails the left-inverse check (l1 residual {resid:.3g})", float(min_eig[worst])
        )
    for arr in (nu, Lam, Lam_inv, Z, min_eig):
        arr.setflags(write=False)
    return Bridge(psi, nu, Lam, Lam_inv, Z, gamma, min_eig, Kt)
