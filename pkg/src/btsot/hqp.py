"""Lexicographic (hierarchical) QP cascade over joint velocities.

Each priority level is solved as a QP over ``(qd, w)`` that minimizes the
level's slack ``w`` while every higher level is held at its recorded optimal
slack.  Equality rows enter as ``A qd = b + w``, inequality rows as
``A qd <= b + w, w >= 0``.  Velocity bounds are hard at every level and a last
implicit level picks the minimum-norm velocity among the optimal set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError
from .tasks import Stack

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible-guard"

RANK_RTOL = 1e-10


# -- generalized inverses -----------------------------------------------------

def damped_pinv(M, damping: float = 0.0) -> np.ndarray:
    """Damped pseudoinverse ``M^T (M M^T + mu^2 I)^-1``.

    With ``damping == 0`` the exact Moore-Penrose inverse is returned, with
    singular values below ``1e-10 * sigma_max`` truncated.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    m, n = M.shape
    if damping < 0:
        raise ValueError("damping must be non-negative")
    if damping == 0.0:
        if M.size == 0:
            return np.zeros((n, m))
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            return np.zeros((n, m))
        keep = s > RANK_RTOL * s[0]
        return (Vt[keep].T / s[keep]) @ U[:, keep].T
    mu2 = damping * damping
    if m <= n:
        return M.T @ np.linalg.solve(M @ M.T + mu2 * np.eye(m), np.eye(m))
    return np.linalg.solve(M.T @ M + mu2 * np.eye(n), M.T)


def _null_space(C: np.ndarray, n: int) -> np.ndarray:
    if C.shape[0] == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(C, full_matrices=True)
    r = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    return Vt[r:].T


def _psd_solve(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Minimum-norm solution of ``H x = g`` for symmetric PSD ``H``."""
    if H.size == 0:
        return np.zeros(0)
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    top = np.max(np.abs(w))
    if top == 0.0:
        return np.zeros_like(g)
    keep = w > 1e-12 * top
    return V[:, keep] @ ((V[:, keep].T @ g) / w[keep])


# -- inner QP ------------------------------------------------------------------

@dataclass
class QPResult:
    x: np.ndarray
    status: str
    iterations: int
    active: tuple = ()


def _active_set(H, f, G, h, z, max_iter, tol):
    """Primal active set on ``min 1/2 z'Hz + f'z, G z <= h`` from a feasible ``z``.

    ``H`` may be singular as long as the gradient stays in its range on every
    working-set null space (true for least-squares slack objectives).  Ties
    in the blocking and dropping rules go to the lowest row index.
    """
    n = z.size
    W: list[int] = []
    scale = 1.0 + np.max(np.abs(h), initial=0.0)
    for it in range(1, max_iter + 1):
        g = H @ z + f
        C = G[W] if W else np.zeros((0, n))
        N = _null_space(C, n)
        if N.shape[1]:
            p = -N @ _psd_solve(N.T @ H @ N, N.T @ g)
        else:
            p = np.zeros(n)
        if np.linalg.norm(p) <= tol * (1.0 + np.linalg.norm(z)):
            if not W:
                return z, OPTIMAL, it, ()
            lam = np.linalg.lstsq(C.T, -g, rcond=None)[0]
            j = int(np.argmin(lam))
            if lam[j] >= -tol * (1.0 + np.linalg.norm(g)):
                return z, OPTIMAL, it, tuple(W)
            del W[j]
            continue
        Gp = G @ p
        alpha, block = 1.0, None
        slack = h - G @ z
        for i in range(G.shape[0]):
            if i in W or Gp[i] <= tol * scale * 1e-2:
                continue
            step = max(slack[i], 0.0) / Gp[i]
            if step < alpha:
                alpha, block = step, i
        z = z + alpha * p
        if block is not None:
            W.append(block)
            W.sort()
    return z, MAX_ITER, max_iter, tuple(W)


def solve_qp_level(H, f, A_eq=None, b_eq=None, G=None, h=None, lb=None, ub=None,
                   x0=None, max_iter=None, tol=1e-11) -> QPResult:
    """Minimize ``1/2 x'Hx + f'x`` s.t. ``A_eq x = b_eq``, ``G x <= h``, ``lb <= x <= ub``.

    Equalities are eliminated through an SVD null-space basis; inequalities
    (bounds included, after the rows of ``G``) are handled by the primal
    active set.  Without a feasible ``x0`` a phase-1 problem minimizing the
    worst violation is solved first.  The iteration guard is ``50 * rows``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = H.shape[0]
    f = np.zeros(n) if f is None else np.asarray(f, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float).reshape(-1, n)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).reshape(-1)
    rows, rhs = [G], [h]
    eye = np.eye(n)
    if ub is not None:
        ub = np.broadcast_to(np.asarray(ub, dtype=float), (n,))
        fin = np.isfinite(ub)
        rows.append(eye[fin])
        rhs.append(ub[fin])
    if lb is not None:
        lb = np.broadcast_to(np.asarray(lb, dtype=float), (n,))
        fin = np.isfinite(lb)
        rows.append(-eye[fin])
        rhs.append(-lb[fin])
    G = np.vstack(rows)
    h = np.concatenate(rhs)
    for arr in (H, f, A_eq, b_eq, G, h):
        if not np.all(np.isfinite(arr)):
            raise EvaluationError("non-finite QP data")
    if max_iter is None:
        max_iter = 50 * max(G.shape[0], 1)

    # Equality elimination: x = x_p + Z z.
    if A_eq.shape[0]:
        U, s, Vt = np.linalg.svd(A_eq, full_matrices=True)
        r = int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
        x_p = Vt[:r].T @ ((U[:, :r].T @ b_eq) / s[:r])
        Z = Vt[r:].T
        if np.linalg.norm(A_eq @ x_p - b_eq) > 1e-8 * (1.0 + np.linalg.norm(b_eq)):
            return QPResult(x_p, INFEASIBLE, 0)
    else:
        x_p, Z = np.zeros(n), eye
    Hz = Z.T @ H @ Z
    fz = Z.T @ (H @ x_p + f)
    Gz = G @ Z
    hz = h - G @ x_p

    z = np.zeros(Z.shape[1]) if x0 is None else Z.T @ (np.asarray(x0, dtype=float) - x_p)
    feas_tol = 1e-9 * (1.0 + np.max(np.abs(hz), initial=0.0))
    iters = 0
    viol = np.max(Gz @ z - hz, initial=-np.inf)
    if viol > feas_tol:
        nz = z.size
        H1 = np.zeros((nz + 1, nz + 1))
        H1[-1, -1] = 1.0
        G1 = np.vstack([np.hstack([Gz, -np.ones((Gz.shape[0], 1))]),
                        np.hstack([np.zeros((1, nz)), [[-1.0]]])])
        h1 = np.concatenate([hz, [0.0]])
        y, _, iters, _ = _active_set(H1, np.zeros(nz + 1), G1, h1,
                                     np.concatenate([z, [viol]]), max_iter, tol)
        z = y[:nz]
        if y[-1] > feas_tol:
            return QPResult(x_p + Z @ z, INFEASIBLE, iters)
    z, status, it2, W = _active_set(Hz, fz, Gz, hz, z, max_iter, tol)
    return QPResult(x_p + Z @ z, status, iters + it2, W)


# -- hierarchical cascade -------------------------------------------------------

@dataclass
class HqpProblem:
    stack: Stack
    n: int
    v_max: np.ndarray
    damping: float = 1e-4
    regularization: float = 1e-6

    def __post_init__(self):
        self.v_max = np.broadcast_to(np.asarray(self.v_max, dtype=float), (self.n,)).copy()
        if np.any(self.v_max <= 0):
            raise ValueError("velocity limits must be positive")
        if self.regularization <= 0:
            raise ValueError("regularization weight must be positive")


@dataclass
class HqpSolution:
    qd: np.ndarray
    residuals: list = field(default_factory=list)  # (level, ||w||_2)
    iterations: list = field(default_factory=list)
    status: str = OPTIMAL


def _split_level(constraints, n):
    eq_A, eq_b, in_A, in_b = [], [], [], []
    for c in constraints:
        if c.relation == "=":
            eq_A.append(c.A)
            eq_b.append(c.b)
        else:
            in_A.append(c.A)
            in_b.append(c.b)
    cat = lambda mats, dim: np.vstack(mats) if mats else np.zeros((0, dim))  # noqa: E731
    vec = lambda vs: np.concatenate(vs) if vs else np.zeros(0)  # noqa: E731
    return cat(eq_A, n), vec(eq_b), cat(in_A, n), vec(in_b)


def solve(problem: HqpProblem) -> HqpSolution:
    """Solve the stack lexicographically, then minimize ``eps ||qd||^2``."""
    n = problem.n
    vmax = problem.v_max
    fixed_eq_A, fixed_eq_b = np.zeros((0, n)), np.zeros(0)
    fixed_in_A, fixed_in_b = np.zeros((0, n)), np.zeros(0)
    qd = np.zeros(n)
    sol = HqpSolution(qd)
    statuses = []

    for level, constraints in problem.stack.levels:
        Ae, be, Ai, bi = _split_level(constraints, n)
        for arr in (Ae, be, Ai, bi):
            if not np.all(np.isfinite(arr)):
                raise EvaluationError(f"non-finite constraint data at level {level}")
        me, mi = Ae.shape[0], Ai.shape[0]
        if me + mi == 0:
            sol.residuals.append((level, 0.0))
            sol.iterations.append(0)
            continue
        nv = n + me + mi
        H = np.zeros((nv, nv))
        H[n:, n:] = np.eye(me + mi)
        A_eq = np.vstack([
            np.hstack([Ae, -np.eye(me), np.zeros((me, mi))]),
            np.hstack([fixed_eq_A, np.zeros((fixed_eq_A.shape[0], me + mi))]),
        ])
        b_eq = np.concatenate([be, fixed_eq_b])
        G = np.vstack([
            np.hstack([Ai, np.zeros((mi, me)), -np.eye(mi)]),
            np.hstack([np.zeros((mi, n + me)), -np.eye(mi)]),
            np.hstack([fixed_in_A, np.zeros((fixed_in_A.shape[0], me + mi))]),
        ])
        h = np.concatenate([bi, np.zeros(mi), fixed_in_b])
        bound = np.concatenate([vmax, np.full(me + mi, np.inf)])
        x0 = np.concatenate([qd, Ae @ qd - be, np.maximum(Ai @ qd - bi, 0.0)])
        res = solve_qp_level(H, None, A_eq, b_eq, G, h, lb=-bound, ub=bound, x0=x0)
        statuses.append(res.status)
        qd = res.x[:n]
        we = Ae @ qd - be
        wi = np.maximum(Ai @ qd - bi, 0.0)
        sol.residuals.append((level, float(np.sqrt(we @ we + wi @ wi))))
        sol.iterations.append(res.iterations)
        fixed_eq_A = np.vstack([fixed_eq_A, Ae])
        fixed_eq_b = np.concatenate([fixed_eq_b, Ae @ qd])
        fixed_in_A = np.vstack([fixed_in_A, Ai])
        fixed_in_b = np.concatenate([fixed_in_b, bi + wi])

    eps = problem.regularization
    res = solve_qp_level(eps * np.eye(n), None, fixed_eq_A, fixed_eq_b, fixed_in_A, fixed_in_b,
                         lb=-vmax, ub=vmax, x0=qd)
    statuses.append(res.status)
    sol.qd = res.x
    if INFEASIBLE in statuses:
        sol.status = INFEASIBLE
    elif MAX_ITER in statuses:
        sol.status = MAX_ITER
    return sol


def solve_equality_recursive(levels, n: int, damping: float = 0.0) -> np.ndarray:
    """Classic nullspace-projection recursion for equality-only stacks.

    ``levels`` is a sequence of ``(J_k, v_k)``.  With zero damping this gives
    the minimum-norm lexicographic least-squares solution.
    """
    qd = np.zeros(n)
    N = np.eye(n)
    for J, v in levels:
        J = np.atleast_2d(np.asarray(J, dtype=float))
        JN = J @ N
        P = damped_pinv(JN, damping)
        qd = qd + P @ (np.asarray(v, dtype=float) - J @ qd)
        N = N - P @ JN
        if damping == 0.0:
            # N is an orthogonal projector; snap round-off so an exhausted
            # null space gives JN == 0 rather than amplified noise.
            w, V = np.linalg.eigh(0.5 * (N + N.T))
            V = V[:, w > 0.5]
            N = V @ V.T
    return qd
