"""Sparse Levenberg-Marquardt over manifold-valued variable blocks.

A problem is an ordered list of variable blocks (states with 9-dim
tangents or plain vectors), a list of factors referencing them and a
fixed mask; fixed blocks are excluded from the solve dimension rather
than pinned with a prior. Damping scales the diagonal of the normal
matrix (Marquardt form), which is robust to the mixed scales of
position, rotation and input blocks. When the fill pattern is narrow,
the chain structure of the receding-horizon graph, the damped normal
equations are solved with a banded Cholesky factorization; otherwise a
dense one.

One solve is single threaded and deterministic; independent solves may
run concurrently.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack as _lapack

from .manifold import State, state_boxplus

LAMBDA_MAX = 1e8


class SingularSystemError(RuntimeError):
    """Damped normal matrix numerically singular even at lambda >= 1e8."""


@dataclass
class Variable:
    kind: str  # "state" or "vector"
    dim: int   # tangent dimension

    STATE = "state"
    VECTOR = "vector"


@dataclass
class LmOptions:
    max_iter: int = 30
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    grad_tol: float = 1e-8
    step_tol: float = 1e-10


@dataclass
class SolveReport:
    iterations: int = 0          # accepted steps
    initial_cost: float = 0.0
    final_cost: float = 0.0
    converged: bool = False
    termination: str = "max_iter"  # gradient | step | max_iter
    wall_time: float = 0.0
    cost_history: list = field(default_factory=list)


class Problem:
    """Variable blocks, factors and the fixed mask of one least-squares graph."""

    def __init__(self):
        self.variables: list[Variable] = []
        self.fixed_mask: list[bool] = []
        self.lower_bounds: list = []
        self.upper_bounds: list = []
        self.factors: list = []
        # optional compiled evaluator with linearize(values) -> (H, g, cost)
        # and cost(values) -> float; must match the per-factor path
        self.fused = None

    def add_state(self, fixed: bool = False) -> int:
        self.variables.append(Variable(Variable.STATE, 9))
        self.fixed_mask.append(bool(fixed))
        self.lower_bounds.append(None)
        self.upper_bounds.append(None)
        return len(self.variables) - 1

    def add_vector(self, dim: int, fixed: bool = False, lower=None, upper=None) -> int:
        self.variables.append(Variable(Variable.VECTOR, int(dim)))
        self.fixed_mask.append(bool(fixed))
        self.lower_bounds.append(None if lower is None else np.asarray(lower, dtype=float))
        self.upper_bounds.append(None if upper is None else np.asarray(upper, dtype=float))
        return len(self.variables) - 1

    def add_factor(self, factor) -> None:
        for vid in factor.var_ids:
            if not 0 <= vid < len(self.variables):
                raise ValueError(f"factor references unknown variable {vid}")
        self.factors.append(factor)

    def solve_offsets(self) -> tuple[list[int], int]:
        """Tangent offset per variable (-1 for fixed) and the solve dimension."""
        offsets = []
        total = 0
        for var, fixed in zip(self.variables, self.fixed_mask):
            if fixed:
                offsets.append(-1)
            else:
                offsets.append(total)
                total += var.dim
        return offsets, total

    def validate(self) -> None:
        if not self.factors:
            raise ValueError("problem has no factors")
        _, dim = self.solve_offsets()
        if dim == 0:
            raise ValueError("all variables are fixed")

    def half_bandwidth(self) -> int:
        """Scalar half-bandwidth of the normal matrix fill pattern."""
        offsets, _ = self.solve_offsets()
        band = 0
        for f in self.factors:
            spans = [
                (offsets[vid], offsets[vid] + self.variables[vid].dim)
                for vid in f.var_ids
                if offsets[vid] >= 0
            ]
            if not spans:
                continue
            lo = min(s[0] for s in spans)
            hi = max(s[1] for s in spans)
            band = max(band, hi - lo - 1)
        return band


def copy_values(problem: Problem, values) -> list:
    out = []
    for var, val in zip(problem.variables, values):
        out.append(val.copy() if isinstance(val, (State, np.ndarray)) else val)
    return out


def apply_step(problem: Problem, values, delta: np.ndarray) -> list:
    """Retract a solve-space step onto the variables (box-plus / clipped add)."""
    offsets, _ = problem.solve_offsets()
    out = []
    for vid, (var, val) in enumerate(zip(problem.variables, values)):
        off = offsets[vid]
        if off < 0:
            out.append(val)
            continue
        d = delta[off:off + var.dim]
        if var.kind == Variable.STATE:
            out.append(state_boxplus(val, d))
        else:
            new = val + d
            lo = problem.lower_bounds[vid]
            hi = problem.upper_bounds[vid]
            if lo is not None:
                new = np.maximum(new, lo)
            if hi is not None:
                new = np.minimum(new, hi)
            out.append(new)
    return out


def _weighted(factor, r, jacs):
    sw = factor.sqrt_weight
    if sw is None:
        return r, jacs
    return sw @ r, [sw @ J for J in jacs]


def evaluate_cost(problem: Problem, values) -> float:
    """0.5 * sum of weighted squared residuals over all factors."""
    cost = 0.0
    for f in problem.factors:
        r = f.residual(values)
        sw = f.sqrt_weight
        if sw is not None:
            r = sw @ r
        cost += 0.5 * float(r @ r)
    return cost


def linearize(problem: Problem, values):
    """Weighted residuals and block Jacobians at the current values.

    Returns (factor_blocks, residual_vector, cost) where factor_blocks is
    a list over factors of (weighted residual, [(var_id, weighted J)]).
    """
    factor_blocks = []
    stacked = []
    cost = 0.0
    for f in problem.factors:
        r, jacs = f.linearize(values)
        if r.shape[0] != f.residual_dim:
            raise ValueError(f"{f.kind} factor returned residual dim {r.shape[0]}, "
                             f"expected {f.residual_dim}")
        for vid, J in zip(f.var_ids, jacs):
            if J.shape != (f.residual_dim, problem.variables[vid].dim):
                raise ValueError(f"{f.kind} factor Jacobian shape mismatch on "
                                 f"variable {vid}")
        rw, jw = _weighted(f, r, jacs)
        cost += 0.5 * float(rw @ rw)
        factor_blocks.append((rw, list(zip(f.var_ids, jw))))
        stacked.append(rw)
    return factor_blocks, np.concatenate(stacked), cost


def _assemble_normal(problem: Problem, factor_blocks, offsets, dim):
    H = np.zeros((dim, dim))
    g = np.zeros(dim)
    nvar = problem.variables
    for rw, blocks in factor_blocks:
        active = [(offsets[vid], nvar[vid].dim, J) for vid, J in blocks if offsets[vid] >= 0]
        for oi, di, Ji in active:
            g[oi:oi + di] += Ji.T @ rw
        for a in range(len(active)):
            oi, di, Ji = active[a]
            H[oi:oi + di, oi:oi + di] += Ji.T @ Ji
            for b in range(a + 1, len(active)):
                oj, dj, Jj = active[b]
                block = Ji.T @ Jj
                H[oi:oi + di, oj:oj + dj] += block
                H[oj:oj + dj, oi:oi + di] += block.T
    return H, g


def _solve_damped(H, g, lam, band):
    """Solve (H + lam*diag(H)) x = -g, banded when the pattern is narrow."""
    n = H.shape[0]
    if band is not None and band < n - 1:
        # upper banded storage read straight off H; only the main diagonal
        # needs damping, so H itself stays untouched
        ab = np.zeros((band + 1, n))
        for d in range(band + 1):
            ab[band - d, d:] = np.diagonal(H, d)
        ab[band] *= 1.0 + lam
        _, x, info = _lapack.dpbsv(ab, -g, lower=False)
        if info != 0:
            raise np.linalg.LinAlgError(f"dpbsv failed with info={info}")
        return x
    A = H.copy()
    idx = np.arange(n)
    A[idx, idx] = H[idx, idx] * (1.0 + lam)
    c, low = scipy.linalg.cho_factor(A, check_finite=False)
    return scipy.linalg.cho_solve((c, low), -g, check_finite=False)


def _linearized_normal(problem: Problem, values, offsets, dim):
    if problem.fused is not None:
        return problem.fused.linearize(values)
    factor_blocks, _, cost = linearize(problem, values)
    H, g = _assemble_normal(problem, factor_blocks, offsets, dim)
    return H, g, cost


def _cost_at(problem: Problem, values) -> float:
    if problem.fused is not None:
        return problem.fused.cost(values)
    return evaluate_cost(problem, values)


def lm_solve(problem: Problem, init_values, opts: LmOptions | None = None):
    """Damped least squares on the factor graph from the given initialization.

    Accepted steps never increase the cost. Terminates on a small gradient,
    a small step, or the iteration cap; raises SingularSystemError when the
    damped normal matrix stays singular up to lambda = 1e8.
    """
    if opts is None:
        opts = LmOptions()
    problem.validate()
    t0 = time.perf_counter()
    offsets, dim = problem.solve_offsets()
    band = problem.half_bandwidth()
    use_band = band < dim // 3 and dim > 32
    values = copy_values(problem, init_values)

    report = SolveReport()
    lam = float(opts.lambda0)
    H, g, cost = _linearized_normal(problem, values, offsets, dim)
    report.initial_cost = cost
    report.cost_history = [cost]

    for it in range(opts.max_iter):
        if np.max(np.abs(g)) < opts.grad_tol:
            report.converged = True
            report.termination = "gradient"
            break
        accepted = False
        stop = None
        while True:
            try:
                delta = _solve_damped(H, g, lam, band if use_band else None)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                if lam >= LAMBDA_MAX:
                    raise SingularSystemError(
                        f"normal equations singular at lambda={lam:g}")
                lam = max(lam, 1e-12) * opts.lambda_up
                continue
            if not np.all(np.isfinite(delta)):
                if lam >= LAMBDA_MAX:
                    raise SingularSystemError("non-finite step")
                lam = max(lam, 1e-12) * opts.lambda_up
                continue
            if np.linalg.norm(delta) < opts.step_tol:
                stop = "step"
                break
            trial = apply_step(problem, values, delta)
            trial_cost = _cost_at(problem, trial)
            if np.isfinite(trial_cost) and trial_cost < cost:
                values = trial
                cost = trial_cost
                lam *= opts.lambda_down
                report.iterations += 1
                report.cost_history.append(cost)
                accepted = True
                break
            lam = max(lam, 1e-12) * opts.lambda_up
            if lam > LAMBDA_MAX:
                # no descent left; the admissible step has shrunk to nothing
                stop = "step"
                break
        if stop is not None:
            report.converged = True
            report.termination = stop
            break
        if not accepted:
            break
        if it == opts.max_iter - 1:
            break  # cap reached; the fresh linearization would go unused
        H, g, cost = _linearized_normal(problem, values, offsets, dim)
    report.final_cost = cost
    report.wall_time = time.perf_counter() - t0
    return values, report
