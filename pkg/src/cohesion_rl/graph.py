"""User-similarity graph learned from warm-start trajectories."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sim import ConfigurationError, Trajectory


def wst_feature(traj: Trajectory, T0: int | None = None) -> np.ndarray:
    """Stack [s_1, r_1, ..., s_T0, r_T0] and sort ascending.

    Sorting drops temporal order so the random warm-start actions matter less.
    """
    if T0 is not None and len(traj) != T0:
        raise ConfigurationError(f"expected a warm-start trajectory of length {T0}, got {len(traj)}")
    stacked = np.column_stack([traj.states, traj.rewards]).ravel()
    return np.sort(stacked)


def laplacian(C: np.ndarray) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    return np.diag(C.sum(axis=1)) - C


@dataclass(frozen=True)
class CohesionGraph:
    C: np.ndarray
    K: int

    @property
    def L(self) -> np.ndarray:
        return laplacian(self.C)

    @property
    def n_nodes(self) -> int:
        return self.C.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.C, 1))
        return list(zip(i.tolist(), j.tolist()))

    def to_edge_list(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# nodes={self.n_nodes} K={self.K}\n")
            for i, j in self.edges():
                fh.write(f"{i} {j}\n")

    @classmethod
    def from_edge_list(cls, path) -> "CohesionGraph":
        with open(path) as fh:
            header = fh.readline().lstrip("# ").split()
            meta = dict(kv.split("=") for kv in header)
            n = int(meta["nodes"])
            C = np.zeros((n, n))
            for line in fh:
                if line.strip():
                    i, j = map(int, line.split())
                    C[i, j] = C[j, i] = 1.0
        return cls(C, int(meta["K"]))


def knn_indices(features: np.ndarray, K: int) -> np.ndarray:
    """K nearest neighbours of each row, excluding the row itself.

    Ties go to the lower index (stable sort on the distance row).
    """
    V = np.asarray(features, dtype=float)
    # explicit differences, not the Gram expansion: exact zeros for duplicates
    d2 = np.sum((V[:, None, :] - V[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :K]


def build_graph(features: Sequence[np.ndarray], K: int) -> CohesionGraph:
    """Symmetrised KNN adjacency: c_ij = 1 if i is a KNN of j or j of i."""
    V = np.asarray(features, dtype=float)
    N = V.shape[0]
    if K < 1 or K >= N:
        raise ConfigurationError(f"need 1 <= K < N, got K={K}, N={N}")
    nbrs = knn_indices(V, K)
    C = np.zeros((N, N))
    C[np.repeat(np.arange(N), K), nbrs.ravel()] = 1.0
    C = np.maximum(C, C.T)
    np.fill_diagonal(C, 0.0)
    return CohesionGraph(C, K)


def laplacian_quadratic(L: np.ndarray, M: np.ndarray) -> float:
    """Tr(M L M^T) for M with one column per node."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    L = np.asarray(L, dtype=float)
    if M.shape[1] != L.shape[0]:
        raise ValueError(f"M has {M.shape[1]} columns but L is {L.shape}")
    return float(np.einsum("ui,ij,uj->", M, L, M))


def pairwise_cohesion(C: np.ndarray, M: np.ndarray) -> float:
    """Sum of c_ij ||m_i - m_j||^2 over unordered pairs i < j.

    Equals ``laplacian_quadratic(laplacian(C), M)``; the sum over all ordered
    pairs is twice this.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    C = np.asarray(C, dtype=float)
    diff = M[:, :, None] - M[:, None, :]
    return float(0.5 * np.einsum("ij,uij->", C, diff**2))
