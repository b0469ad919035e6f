"""Laplacian and random-walk positional encodings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph

PE_KINDS = ("none", "lappe", "rwpe")


@dataclass
class PosEncConfig:
    kind: str = "none"
    k: int = 8
    sign_flip: bool = False

    def validate(self) -> None:
        if self.kind not in PE_KINDS:
            raise ValueError(f"pe.kind must be one of {PE_KINDS}, got {self.kind!r}")
        if self.kind != "none" and self.k < 1:
            raise ValueError("pe.k must be at least 1")


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint index pairs for each round of a cyclic tournament on n players."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.int64), np.array(qs, dtype=np.int64)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def sym_eig(a, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so
    that the rotations of one round act on disjoint index pairs and can be
    applied together. Sweeps stop once the off-diagonal Frobenius norm drops
    below ``tol``.

    Returns:
        Eigenvalues in ascending order and the matching orthonormal
        eigenvectors as columns. Ties keep the solver's diagonal order.
    """
    A = np.array(getattr(a, "data", a), dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"sym_eig needs a square matrix, got shape {A.shape}")
    asym = float(np.max(np.abs(A - A.T))) if A.size else 0.0
    if asym > 1e-10:
        raise ValueError(f"sym_eig: matrix is not symmetric (max |A - A^T| = {asym:.3g})")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    rounds = _round_robin(n) if n > 1 else []
    for _ in range(max_sweeps):
        off = float(np.sqrt(2.0 * np.sum(np.triu(A, 1) ** 2)))
        if off < tol:
            break
        for p, q in rounds:
            apq = A[p, q]
            # rotations for pairs already below roundoff would only add noise
            live = np.abs(apq) > 1e-300
            live &= np.abs(apq) > 1e-18 * np.sqrt(np.abs(A[p, p] * A[q, q]))
            if not live.any():
                continue
            p, q, apq = p[live], q[live], apq[live]
            theta = (A[q, q] - A[p, p]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rp, rq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * rp - s[:, None] * rq
            A[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = cp * c - cq * s
            A[:, q] = cp * s + cq * c
            vp, vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = vp * c - vq * s
            V[:, q] = vp * s + vq * c
    else:
        raise RuntimeError(f"sym_eig did not converge in {max_sweeps} sweeps")
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def normalized_laplacian(g: Graph) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2``; isolated nodes get a zero ``D^-1/2`` entry."""
    A = g.adjacency()
    deg = A.sum(axis=1)
    dinv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return np.eye(g.n) - dinv[:, None] * A * dinv[None, :]


def canonical_signs(vecs: np.ndarray, atol: float = 1e-10) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    Near-ties in magnitude go to the lowest row index.
    """
    out = vecs.copy()
    for j in range(out.shape[1]):
        mag = np.abs(out[:, j])
        i = int(np.nonzero(mag >= mag.max() - atol)[0][0])
        if out[i, j] < 0:
            out[:, j] = -out[:, j]
    return out


def lap_pe(g: Graph, k: int) -> np.ndarray:
    """Eigenvectors of eigenvalue rank 1..k of the normalised Laplacian (n x k)."""
    if k < 1 or k >= g.n:
        raise ValueError(f"lap_pe needs 1 <= k < n, got k={k}, n={g.n}")
    _, V = sym_eig(normalized_laplacian(g))
    return canonical_signs(V[:, 1 : k + 1])


def rwpe(g: Graph, k: int) -> np.ndarray:
    """Return probabilities ``[M_ii, (M^2)_ii, ..., (M^k)_ii]`` with ``M = A D^-1``."""
    if k < 1:
        raise ValueError("rwpe needs k >= 1")
    A = g.adjacency()
    deg = A.sum(axis=0)
    M = A * np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)[None, :]
    out = np.empty((g.n, k))
    P = M
    for i in range(k):
        if i:
            P = P @ M
        out[:, i] = np.diag(P)
    return out


def random_sign_flip(pe: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Multiply every column by an independent random sign."""
    return pe * rng.choice([-1.0, 1.0], size=(1, pe.shape[1]))


def positional_encoding(g: Graph, cfg: PosEncConfig) -> np.ndarray | None:
    if cfg.kind == "none":
        return None
    if cfg.kind == "rwpe":
        return rwpe(g, cfg.k)
    # graphs smaller than k + 1 nodes are zero-padded
    k = min(cfg.k, g.n - 1)
    out = np.zeros((g.n, cfg.k))
    if k >= 1:
        out[:, :k] = lap_pe(g, k)
    return out


def attach_pe(graphs, cfg: PosEncConfig) -> None:
    """Store ``positional_encoding`` on each graph's ``pe`` slot."""
    for g in graphs:
        g.pe = positional_encoding(g, cfg)
