"""Q-value estimators: per-user LSTDQ and the two graph-coupled solvers.

Stacking convention: ``vec(W) = [w_1; ...; w_N]`` (column-major), so the
per-user operators sum_n E_n (x) B_n are block diagonal with block n = B_n and
the graph term (mu L + zeta I_N) (x) I_u couples block n to its neighbours.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .policy import next_value_feature, value_feature


class CriticError(np.linalg.LinAlgError):
    pass


@dataclass
class UserDesign:
    """Per-user design: X (u x t), Y (u x t) and rewards r (t,)."""

    X: np.ndarray
    Y: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        if self.X.shape != self.Y.shape or self.X.shape[1] != self.r.shape[0]:
            raise ValueError(f"inconsistent design shapes {self.X.shape}, {self.Y.shape}, {self.r.shape}")


def build_design(states, actions, rewards, next_states, theta) -> UserDesign:
    """Design matrices for one user's tuples under policy ``theta``."""
    X = value_feature(states, actions).T
    Y = next_value_feature(theta, next_states).T
    return UserDesign(X, Y, np.asarray(rewards, dtype=float))


def lstdq_separate(X, Y, r, gamma: float, zeta: float) -> np.ndarray:
    """w = [X (X - gamma Y)^T + zeta I]^{-1} X r."""
    X = np.asarray(X, dtype=float)
    A = X @ (X - gamma * np.asarray(Y)).T + zeta * np.eye(X.shape[0])
    try:
        return np.linalg.solve(A, X @ np.asarray(r, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise CriticError(f"singular LSTDQ system: {exc}") from exc


@dataclass
class BlockOperators:
    """Per-user blocks of F1 = sum E_n (x) X_n X_n^T, F2 = sum E_n (x) X_n and
    F3 = sum E_n (x) X_n Y_n^T.

    Blocks are stored stacked on a leading user axis; the full matrices are
    only formed (sparse) on request.
    """

    XX: np.ndarray  # (N, u, u)
    XY: np.ndarray  # (N, u, u)
    X: np.ndarray  # (N, u, t)

    @property
    def n_users(self) -> int:
        return self.XX.shape[0]

    @property
    def u(self) -> int:
        return self.XX.shape[1]

    def F1(self) -> sp.csr_matrix:
        return sp.block_diag(list(self.XX), format="csr")

    def F3(self) -> sp.csr_matrix:
        return sp.block_diag(list(self.XY), format="csr")

    def F2(self) -> sp.csr_matrix:
        return sp.block_diag(list(self.X), format="csr")

    def F2R(self, R) -> np.ndarray:
        """F2 vec(R) for the t x N reward matrix R."""
        R = np.asarray(R, dtype=float)
        if R.shape != (self.X.shape[2], self.n_users):
            raise ValueError(f"reward matrix must be {(self.X.shape[2], self.n_users)}, got {R.shape}")
        return np.einsum("nut,tn->nu", self.X, R).reshape(-1)


def assemble_block_operators(designs: Sequence[UserDesign]) -> BlockOperators:
    if not designs:
        raise ValueError("no user designs")
    shape = designs[0].X.shape
    if any(d.X.shape != shape for d in designs):
        raise ValueError("all users must share u and t")
    X = np.stack([d.X for d in designs])
    Y = np.stack([d.Y for d in designs])
    return BlockOperators(
        XX=np.einsum("nut,nvt->nuv", X, X),
        XY=np.einsum("nut,nvt->nuv", X, Y),
        X=X,
    )


def reward_matrix(designs: Sequence[UserDesign]) -> np.ndarray:
    """R = [r_1, ..., r_N], shape t x N."""
    return np.column_stack([d.r for d in designs])


def graph_kron(L, mu: float, zeta: float, u: int) -> sp.csr_matrix:
    """(mu L^T + zeta I_N) (x) I_u as a sparse matrix."""
    L = np.asarray(L, dtype=float)
    if not np.allclose(L, L.T):
        raise ValueError("graph Laplacian must be symmetric")
    N = L.shape[0]
    G = mu * L.T + zeta * np.eye(N)
    return sp.kron(sp.csr_matrix(G), sp.identity(u), format="csr")


def _laplacian_or_empty(L, n):
    return np.zeros((n, n)) if L is None else np.asarray(L, dtype=float)


def _unvec(x: np.ndarray, u: int, N: int) -> np.ndarray:
    return x.reshape(N, u).T


def projection_operator(ops: BlockOperators, L, gamma, mu1, zeta1) -> sp.csr_matrix:
    """P = F1 + L_kron(mu1, zeta1) - gamma F3."""
    L = _laplacian_or_empty(L, ops.n_users)
    return (ops.F1() + graph_kron(L, mu1, zeta1, ops.u) - gamma * ops.F3()).tocsr()


def critic_update_alg1(ops: BlockOperators, L, R, gamma, mu1, zeta1, mu2, zeta2) -> np.ndarray:
    """Projection + fixed-point critic; returns W (u x N).

    vec(W) = [P^T P + L_kron(mu2, zeta2)]^{-1} P^T F2 vec(R), solved by Cholesky.
    """
    _check_weights(gamma, mu1, zeta1, mu2, zeta2)
    L = _laplacian_or_empty(L, ops.n_users)
    P = projection_operator(ops, L, gamma, mu1, zeta1)
    B = (P.T @ P + graph_kron(L, mu2, zeta2, ops.u)).toarray()
    rhs = P.T @ ops.F2R(R)
    try:
        factor = scipy.linalg.cho_factor(B, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise CriticError(f"fixed-point system not positive definite: {exc}") from exc
    return _unvec(scipy.linalg.cho_solve(factor, rhs), ops.u, ops.n_users)


def critic_update_alg2(ops: BlockOperators, L, R, gamma, mu1, zeta1) -> np.ndarray:
    """Single-solve critic: vec(W) = [F1 - gamma F3 + L_kron(mu1, zeta1)]^{-1} F2 vec(R).

    The system is not symmetric (F3 is not), so a sparse LU is used.
    """
    _check_weights(gamma, mu1, zeta1)
    L = _laplacian_or_empty(L, ops.n_users)
    if mu1 == 0 or not np.any(L):
        # no coupling: the system is block diagonal, solve user by user
        return _solve_blocks(ops, R, gamma, zeta1)
    A = projection_operator(ops, L, gamma, mu1, zeta1).tocsc()
    try:
        x = spla.splu(A).solve(ops.F2R(R))
    except RuntimeError as exc:  # splu reports exact singularity this way
        raise CriticError(f"singular critic system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise CriticError("non-finite critic solution")
    return _unvec(x, ops.u, ops.n_users)


def _solve_blocks(ops: BlockOperators, R, gamma, zeta) -> np.ndarray:
    """Per-user w_n = [X_n X_n^T - gamma X_n Y_n^T + zeta I]^{-1} X_n r_n."""
    A = ops.XX - gamma * ops.XY + zeta * np.eye(ops.u)
    b = ops.F2R(R).reshape(ops.n_users, ops.u)
    try:
        W = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise CriticError(f"singular LSTDQ system: {exc}") from exc
    return W.T


def critic_update_separate(designs: Sequence[UserDesign], gamma, zeta) -> np.ndarray:
    """Independent LSTDQ per user, shape u x N."""
    _check_weights(gamma, zeta)
    return _solve_blocks(assemble_block_operators(designs), reward_matrix(designs), gamma, zeta)


def _check_weights(gamma, *weights):
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if any(w < 0 for w in weights):
        raise ValueError("regularisation weights must be non-negative")


def check_spd(P, L, mu2: float, zeta2: float, u: int) -> tuple[bool, float]:
    """Is B = P^T P + L_kron(mu2, zeta2) symmetric positive definite?

    Returns (ok, smallest eigenvalue of B).
    """
    P = P.toarray() if sp.issparse(P) else np.asarray(P, dtype=float)
    B = P.T @ P + graph_kron(L, mu2, zeta2, u).toarray()
    sym_defect = np.max(np.abs(B - B.T)) if B.size else 0.0
    min_eig = float(np.linalg.eigvalsh(0.5 * (B + B.T)).min())
    if sym_defect >= 1e-10:
        return False, min_eig
    try:
        np.linalg.cholesky(B)
    except np.linalg.LinAlgError:
        return False, min_eig
    return True, min_eig
