"""Small dense semidefinite programming solver.

Minimizes a linear objective over an intersection of affine matrix
inequalities (each block F_0 + sum_i x_i F_i must stay positive definite
with margin eps) and scalar affine inequalities G x <= h. Uses a log-det
barrier interior-point method with Newton steps and backtracking line
search, plus a big-slack phase-1 to find a strictly feasible start.

Blocks may carry a leading batch axis so that families of same-sized
constraints (e.g. one matrix inequality per grid point) factorize and
differentiate in single vectorized calls.

Deterministic: no randomness anywhere, identical inputs give identical
iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, NumericError, ValidationError

#: Default positive-definiteness margin enforced on every block.
PSD_MARGIN = 1e-7


@dataclass(frozen=True)
class SdpBlock:
    """Affine matrix constraints F0[c] + sum_i x_i Fi[c, i] >= eps * I.

    ``F0`` has shape (k, k) or (C, k, k); ``Fi`` has shape (n, k, k) or
    (C, n, k, k). A missing batch axis means a single constraint.
    """

    F0: np.ndarray
    Fi: np.ndarray

    def __post_init__(self):
        F0 = np.asarray(self.F0, dtype=float)
        Fi = np.asarray(self.Fi, dtype=float)
        if F0.ndim == 2:
            F0 = F0[None]
        if Fi.ndim == 3:
            Fi = Fi[None]
        if (F0.ndim != 3 or Fi.ndim != 4 or Fi.shape[2:] != F0.shape[1:]
                or F0.shape[1] != F0.shape[2] or Fi.shape[0] != F0.shape[0]):
            raise ValidationError("block shapes inconsistent")
        F0 = 0.5 * (F0 + np.swapaxes(F0, 1, 2))
        Fi = 0.5 * (Fi + np.swapaxes(Fi, 2, 3))
        object.__setattr__(self, "F0", F0)
        object.__setattr__(self, "Fi", Fi)
        # (C, k*k, n) layout so eval() is one batched matrix-vector product
        flat = np.ascontiguousarray(Fi.transpose(0, 2, 3, 1))
        object.__setattr__(self, "_Fi_flat",
                           flat.reshape(Fi.shape[0], -1, Fi.shape[1]))

    @property
    def batch(self) -> int:
        return self.F0.shape[0]

    @property
    def size(self) -> int:
        return self.F0.shape[1]

    @property
    def n_var(self) -> int:
        return self.Fi.shape[1]

    def eval(self, x: np.ndarray) -> np.ndarray:
        """Constraint matrices at x, shape (C, k, k)."""
        k = self.size
        return self.F0 + (self._Fi_flat @ x).reshape(self.batch, k, k)


@dataclass(frozen=True)
class SdpProblem:
    """min c^T x  s.t.  every block is PD with margin, and G x <= h."""

    c: np.ndarray
    blocks: tuple
    G: np.ndarray | None = None
    h: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValidationError("at least one matrix block required")
        n = len(c)
        for b in self.blocks:
            if b.n_var != n:
                raise ValidationError("block variable count mismatch")
        if self.G is not None:
            G = np.atleast_2d(np.asarray(self.G, dtype=float))
            h = np.atleast_1d(np.asarray(self.h, dtype=float))
            if G.shape != (len(h), n):
                raise ValidationError("scalar constraint shapes inconsistent")
            object.__setattr__(self, "G", G)
            object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def total_size(self) -> int:
        m = sum(b.batch * b.size for b in self.blocks)
        if self.G is not None:
            m += len(self.h)
        return m


@dataclass(frozen=True)
class SdpSolution:
    x: np.ndarray
    objective: float
    status: str
    newton_iters: int
    margin: float = field(default=PSD_MARGIN)


def _chol_or_none(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return None


def _feasible(problem: SdpProblem, x, eps) -> bool:
    for b in problem.blocks:
        S = b.eval(x) - eps * np.eye(b.size)
        if _chol_or_none(S) is None:
            return False
    if problem.G is not None and np.any(problem.G @ x - problem.h >= 0.0):
        return False
    return True


def _barrier_value(problem: SdpProblem, x, eps, t) -> float:
    val = t * float(problem.c @ x)
    for b in problem.blocks:
        S = b.eval(x) - eps * np.eye(b.size)
        L = _chol_or_none(S)
        if L is None:
            return np.inf
        diag = np.diagonal(L, axis1=1, axis2=2)
        if np.any(diag <= 0):
            return np.inf
        val -= 2.0 * float(np.sum(np.log(diag)))
    if problem.G is not None:
        slack = problem.h - problem.G @ x
        if np.any(slack <= 0.0):
            return np.inf
        val -= float(np.sum(np.log(slack)))
    return val


def _barrier_grad_hess(problem: SdpProblem, x, eps, t):
    n = problem.n
    g = t * problem.c.copy()
    H = np.zeros((n, n))
    for b in problem.blocks:
        S = b.eval(x) - eps * np.eye(b.size)
        L = np.linalg.cholesky(S)
        Li = np.linalg.inv(L)
        # V[c, i] = L_c^-1 Fi[c, i] L_c^-T; grad -= tr V; H += <V, V>.
        Y = np.matmul(Li[:, None], b.Fi)
        V = np.matmul(Y, np.swapaxes(Li, 1, 2)[:, None])
        g -= np.einsum("cnii->n", V)
        # H += sum_c <V_cn, V_cm> as one rectangular Gram product
        T = np.ascontiguousarray(V.transpose(0, 2, 3, 1)).reshape(-1, n)
        H += T.T @ T
    if problem.G is not None:
        slack = problem.h - problem.G @ x
        g += problem.G.T @ (1.0 / slack)
        H += (problem.G / slack[:, None] ** 2).T @ problem.G
    return g, H


def _newton_minimize(problem: SdpProblem, x, eps, t, tol, max_iter):
    """Minimize the barrier at fixed t; x must be strictly feasible."""
    iters = 0
    f = _barrier_value(problem, x, eps, t)
    for _ in range(max_iter):
        g, H = _barrier_grad_hess(problem, x, eps, t)
        try:
            dx = np.linalg.solve(H + 1e-12 * np.eye(problem.n), -g)
        except np.linalg.LinAlgError:
            dx = -g
        lam2 = float(-g @ dx)
        if not np.isfinite(lam2) or lam2 < 0:
            dx = -g
            lam2 = float(g @ g)
        if lam2 / 2.0 < tol:
            break
        step = 1.0
        accepted = False
        for _ in range(60):
            f_try = _barrier_value(problem, x + step * dx, eps, t)
            if f_try < f - 1e-4 * step * lam2:
                x = x + step * dx
                f = f_try
                accepted = True
                break
            step *= 0.5
        iters += 1
        if not accepted:
            break
    return x, iters


def _min_eig_all(problem: SdpProblem, x) -> float:
    worst = np.inf
    for b in problem.blocks:
        worst = min(worst, float(np.min(np.linalg.eigvalsh(b.eval(x)))))
    return worst


def _phase1(problem: SdpProblem, eps, tol, max_newton, x0=None):
    """Find a strictly feasible point by minimizing a shared slack."""
    n = problem.n
    x_init = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    s0 = eps - _min_eig_all(problem, x_init) + 1.0
    if problem.G is not None:
        s0 = max(s0, float(np.max(problem.G @ x_init - problem.h)) + 1.0)

    aug_blocks = []
    for b in problem.blocks:
        eye = np.broadcast_to(np.eye(b.size), (b.batch, 1, b.size, b.size))
        Fi = np.concatenate([b.Fi, eye], axis=1)
        aug_blocks.append(SdpBlock(F0=b.F0, Fi=Fi))
    if problem.G is not None:
        G = np.hstack([problem.G, -np.ones((len(problem.h), 1))])
        h = problem.h
    else:
        G, h = None, None
    c = np.zeros(n + 1)
    c[-1] = 1.0
    aug = SdpProblem(c=c, blocks=tuple(aug_blocks), G=G, h=h)

    z = np.concatenate([x_init, [s0]])
    t = 1.0
    total = 0
    m = aug.total_size
    for _ in range(60):
        z, it = _newton_minimize(aug, z, eps, t, tol, max_newton)
        total += it
        if z[-1] < -10.0 * eps:
            return z[:n], total
        if m / t < tol and z[-1] >= -10.0 * eps:
            break
        t *= 10.0
    raise InfeasibleError("phase 1 could not find a strictly feasible point")


def solve(problem: SdpProblem, x0=None, eps: float = PSD_MARGIN,
          gap_tol: float = 1e-8, newton_tol: float = 1e-10,
          max_newton: int = 80) -> SdpSolution:
    """Barrier interior-point solve of an SdpProblem.

    ``x0`` seeds the iteration; infeasible seeds are repaired by phase 1
    started from the seed. Raises InfeasibleError when no strictly feasible
    point exists and NumericError when the iteration breaks down.
    """
    total = 0
    if x0 is not None:
        x = np.asarray(x0, dtype=float).copy()
        if not _feasible(problem, x, eps):
            x, total = _phase1(problem, eps, newton_tol * 1e3, max_newton,
                               x0=x)
    else:
        x, total = _phase1(problem, eps, newton_tol * 1e3, max_newton)

    m = problem.total_size
    t = 1.0
    for _ in range(80):
        x, it = _newton_minimize(problem, x, eps, t, newton_tol, max_newton)
        total += it
        if m / t < gap_tol:
            break
        t *= 10.0
    if not np.all(np.isfinite(x)):
        raise NumericError("interior-point iterates diverged")
    return SdpSolution(x=x, objective=float(problem.c @ x), status="optimal",
                       newton_iters=total, margin=eps)


def check_certificate(problem: SdpProblem, x, tol: float = 1e-9) -> bool:
    """Independently verify feasibility of a candidate point by eigenvalues."""
    x = np.asarray(x, dtype=float)
    if _min_eig_all(problem, x) < PSD_MARGIN - tol - 1e-12:
        return False
    if problem.G is not None and np.any(problem.G @ x - problem.h > tol):
        return False
    return True
