"""
Time Solver
Implicit Euler on the fine network, Galerkin coarse projection, coarse time stepping
and fine-scale reconstruction
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import cg

import config

logger = logging.getLogger(__name__)

SOLVER_METHODS = ("conjugate_gradient", "dense_cholesky", "dense_lu_oracle")


class SolverError(RuntimeError):
    """Linear solve failed during time stepping"""


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    n_steps: int

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"time step must be positive, got {self.tau}")
        if self.n_steps < 1:
            raise ValueError(f"need at least one time step, got {self.n_steps}")

    @classmethod
    def from_final_time(cls, final_time, n_steps):
        return cls(final_time / n_steps, n_steps)

    @property
    def final_time(self):
        return self.tau * self.n_steps


@dataclass(frozen=True)
class LinearSolverConfig:
    method: str = config.SOLVER_METHOD
    rtol: float = config.SOLVER_RTOL
    max_iter: int = config.SOLVER_MAX_ITER

    def __post_init__(self):
        if self.method not in SOLVER_METHODS:
            raise ValueError(f"unknown solver '{self.method}', expected one of {SOLVER_METHODS}")
        if not 0 < self.rtol < 1:
            raise ValueError(f"rtol must lie in (0, 1), got {self.rtol}")


@dataclass
class Trajectory:
    """Stored steps; the final step is always present"""

    steps: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def add(self, step, u):
        self.steps.append(step)
        self.snapshots.append(np.array(u, dtype=float))

    @property
    def final(self):
        return self.snapshots[-1]

    def at(self, step):
        return self.snapshots[self.steps.index(step)]


class StepSolver:
    """Solves A x = b for a fixed SPD matrix A, reusing factorizations across steps"""

    def __init__(self, A, solver_config):
        self.A = sp.csr_matrix(A)
        self.config = solver_config
        if solver_config.method == "conjugate_gradient":
            diagonal = self.A.diagonal()
            self.preconditioner = sp.diags(1.0 / diagonal)
        elif solver_config.method == "dense_cholesky":
            try:
                self.factor = scipy.linalg.cho_factor(self.A.toarray())
            except np.linalg.LinAlgError as e:
                raise SolverError(f"system matrix is not positive definite: {e}") from e
        else:
            self.factor = scipy.linalg.lu_factor(self.A.toarray())

    def solve(self, b, x0, step):
        method = self.config.method
        if method == "dense_cholesky":
            return scipy.linalg.cho_solve(self.factor, b), {"step": step, "iterations": 0}
        if method == "dense_lu_oracle":
            return scipy.linalg.lu_solve(self.factor, b), {"step": step, "iterations": 0}

        x, converged, iterations, residual = jacobi_cg(self.A, b, x0, self.config.rtol,
                                                       self.config.max_iter, self.preconditioner)
        if not converged:
            raise SolverError(f"conjugate gradient did not converge at step {step}: "
                              f"relative residual {residual:.3e} after {iterations} iterations")
        return x, {"step": step, "iterations": iterations, "residual": residual}


def jacobi_cg(A, b, x0=None, rtol=config.SOLVER_RTOL, max_iter=config.SOLVER_MAX_ITER, preconditioner=None):
    """Diagonally preconditioned CG; returns (x, converged, iterations, relative residual)"""
    if preconditioner is None:
        preconditioner = sp.diags(1.0 / A.diagonal())
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    x, info = cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=max_iter, M=preconditioner, callback=count)
    b_norm = np.linalg.norm(b)
    residual = float(np.linalg.norm(b - A @ x) / (b_norm if b_norm > 0 else 1.0))
    return x, info == 0, iterations, residual


def _source_at(f, step):
    return f(step) if callable(f) else f


def fine_solve(reduced, f, u0, tg, solver_config=None, save_every=None):
    """
    Implicit Euler on the free nodes:
        (C + tau L) u^n = tau (f^n + rhs_bc) + C u^{n-1}

    f is a full-length source vector, a callable step -> vector, or None (zero). Snapshots are
    stored every `save_every` steps (including step 0) and always at the final step; each is
    re-embedded with the Dirichlet lift.
    """
    solver_config = solver_config or LinearSolverConfig()
    A = (reduced.C_free + tg.tau * reduced.L_free).tocsr()
    solver = StepSolver(A, solver_config)
    u = reduced.restrict(u0)
    trajectory = Trajectory()
    if save_every:
        trajectory.add(0, reduced.embed(u))
    for n in range(1, tg.n_steps + 1):
        b = tg.tau * (reduced.source(_source_at(f, n)) + reduced.rhs_bc) + reduced.C_free @ u
        u, info = solver.solve(b, u, n)
        trajectory.diagnostics.append(info)
        if n == tg.n_steps or (save_every and n % save_every == 0):
            trajectory.add(n, reduced.embed(u))
        if n % 10 == 0:
            logger.debug("fine step %d/%d: %s", n, tg.n_steps, info)
    return trajectory


def galerkin_project(R, C_free, L_free, rhs):
    """C_H = R C R^T, L_H = R L R^T (symmetrized exactly), F_H = R rhs"""
    R = sp.csr_matrix(R)
    Rt = R.T.tocsr()
    C_H = R @ C_free @ Rt
    L_H = R @ L_free @ Rt
    C_H = ((C_H + C_H.T) * 0.5).tocsr()
    L_H = ((L_H + L_H.T) * 0.5).tocsr()
    C_H.sort_indices()
    L_H.sort_indices()
    return C_H, L_H, R @ np.asarray(rhs, dtype=float)


class CoarseFactor:
    """
    Dense factorization of the time-invariant coarse matrix.

    Redundant basis rows make the matrix rank deficient; then a pseudo-inverse from a
    symmetric eigendecomposition is used instead of Cholesky.
    """

    def __init__(self, A, row_meta=None, rcond=1e-10):
        A = np.asarray(A, dtype=float)
        diagonal = np.diag(A)
        zero = np.flatnonzero(diagonal <= 0)
        if len(zero):
            patches = sorted({row_meta[r].patch for r in zero}) if row_meta else zero.tolist()
            raise SolverError(f"coarse matrix is singular: zero rows from patches {patches}")
        self.pseudo_inverse = None
        try:
            self.cholesky = scipy.linalg.cho_factor(A)
            pivots = np.abs(np.diag(self.cholesky[0]))
            if pivots.min() ** 2 < rcond * pivots.max() ** 2:
                raise np.linalg.LinAlgError("near-zero pivot")
        except np.linalg.LinAlgError:
            values, vectors = scipy.linalg.eigh(A)
            keep = values > rcond * values.max()
            logger.info("coarse matrix is rank deficient (%d of %d modes kept); using pseudo-inverse",
                        int(keep.sum()), len(values))
            self.pseudo_inverse = (vectors[:, keep], 1.0 / values[keep])

    def solve(self, b):
        if self.pseudo_inverse is None:
            return scipy.linalg.cho_solve(self.cholesky, b)
        vectors, inverse = self.pseudo_inverse
        return vectors @ ((vectors.T @ b) * inverse)


def ms_solve(C_H, L_H, F_H, u_H0, tg, save_every=None, row_meta=None):
    """(C_H + tau L_H) u_H^n = tau F_H + C_H u_H^{n-1} with one factorization for all steps"""
    factor = CoarseFactor((C_H + tg.tau * L_H).toarray(), row_meta)
    u = np.asarray(u_H0, dtype=float)
    trajectory = Trajectory()
    if save_every:
        trajectory.add(0, u)
    for n in range(1, tg.n_steps + 1):
        u = factor.solve(tg.tau * _source_at(F_H, n) + C_H @ u)
        if n == tg.n_steps or (save_every and n % save_every == 0):
            trajectory.add(n, u)
    return trajectory


def reconstruct(R, u_H, reduced):
    """u_ms = R^T u_H on free nodes and g on Dirichlet nodes"""
    return reduced.embed(sp.csr_matrix(R).T @ np.asarray(u_H, dtype=float))


def online_stage(reduced, projection, f, u0, tg, save_every=None):
    """Project, step the coarse system from u_H^0 = R u0 and reconstruct every stored step"""
    R = projection.R
    f_free = reduced.source(f)
    C_H, L_H, F_H = galerkin_project(R, reduced.C_free, reduced.L_free, f_free + reduced.rhs_bc)
    coarse = ms_solve(C_H, L_H, F_H, R @ reduced.restrict(u0), tg, save_every, projection.row_meta)
    fine = Trajectory(list(coarse.steps), [reconstruct(R, u_H, reduced) for u_H in coarse.snapshots])
    return fine, coarse, (C_H, L_H)


def energy_norm(L, u):
    """sqrt(u^T L u); tiny negative inner products from rounding are clamped to zero"""
    u = np.asarray(u, dtype=float)
    inner = float(u @ (L @ u))
    scale = float(u @ u)
    if inner < -1e-12 * scale:
        raise ValueError(f"matrix is not positive semidefinite: u^T L u = {inner:.3e}")
    return float(np.sqrt(max(inner, 0.0)))


def energy_history(trajectory, L, restrict=None):
    """||u^n||_L for each stored snapshot (optionally restricted before the product)"""
    snapshots = trajectory.snapshots if restrict is None else [restrict(u) for u in trajectory.snapshots]
    return [energy_norm(L, u) for u in snapshots]
