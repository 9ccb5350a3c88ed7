"""Measurement model, noise-optimal centralized solution, and affine averaging.

Every agent pair joined by an edge measures the difference of their states
once, corrupted by zero-mean Gaussian noise. Stacked over the lexicographic
edge order this reads y = B^T x + v. The mean-free least-squares estimate is
x_star = L_pinv B Sigma^-1 y, and the distributed iteration
x(k+1) = A x(k) + b with A = I - alpha L, b = alpha B Sigma^-1 y converges to
it from any mean-free start for alpha in (0, 2/lambda_max).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import MeasuredGraph, incidence_matrix, laplacian, laplacian_spectrum, pseudoinverse


class StepSizeOutOfRange(ValueError):
    """alpha outside the open interval (0, 2/lambda_max)."""


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """One relative measurement per edge plus the simulation-only ground truth."""

    y: np.ndarray
    v: np.ndarray
    x_true: np.ndarray

    @classmethod
    def from_noise(cls, g: MeasuredGraph, x_true, v) -> "MeasurementSet":
        x_true = np.asarray(x_true, dtype=float)
        v = np.asarray(v, dtype=float)
        if x_true.shape != (g.n,):
            raise ValueError(f"x_true must have length n={g.n}")
        if v.shape != (g.m,):
            raise ValueError(f"v must have length m={g.m}")
        B = incidence_matrix(g)
        return cls(y=B.T @ x_true + v, v=v, x_true=x_true)


def sample_measurements(
    g: MeasuredGraph, x_true, rng: np.random.Generator | int
) -> MeasurementSet:
    """Draw v_ij ~ N(0, sigma_ij^2) independently per edge and form y = B^T x + v."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    v = rng.normal(0.0, g.sigma)
    return MeasurementSet.from_noise(g, x_true, v)


def centralized_solution(g: MeasuredGraph, y) -> np.ndarray:
    """Mean-free weighted least-squares solution L_pinv B Sigma^-1 y."""
    B = incidence_matrix(g)
    L = laplacian(B, g.sigma)
    return pseudoinverse(L) @ (B @ (np.asarray(y, dtype=float) / g.sigma**2))


def step_size(L: np.ndarray) -> float:
    """alpha = 2 / (lambda_max + lambda_2), the classical optimal constant step."""
    evals = laplacian_spectrum(L)
    return 2.0 / (evals[-1] + evals[1])


@dataclass(frozen=True, eq=False)
class Dynamics:
    """Condensed affine-averaging data x(k+1) = A x(k) + b.

    A is double-stochastic for alpha in (0, 1/lambda_max]; for larger alpha
    (still below 2/lambda_max) rows and columns keep summing to one but
    entries may leave [0, 1].
    """

    A: np.ndarray
    b: np.ndarray
    alpha: float
    L: np.ndarray
    L_pinv: np.ndarray
    lambda1: float
    lambda_nm1: float

    @property
    def n(self) -> int:
        return self.b.shape[0]


def build_dynamics(g: MeasuredGraph, y, alpha: float | None = None) -> Dynamics:
    """Assemble (A, b) from the graph and measurements.

    Args:
        g: measured graph.
        y: per-edge measurement vector, lexicographic order.
        alpha: step size; defaults to 2/(lambda_max + lambda_2).

    Raises:
        StepSizeOutOfRange: if alpha falls outside (0, 2/lambda_max).
    """
    y = np.asarray(y, dtype=float)
    B = incidence_matrix(g)
    L = laplacian(B, g.sigma)
    evals = laplacian_spectrum(L)
    lam1, lam_nm1 = float(evals[-1]), float(evals[1])
    if alpha is None:
        alpha = 2.0 / (lam1 + lam_nm1)
    if not (0.0 < alpha < 2.0 / lam1):
        raise StepSizeOutOfRange(f"alpha={alpha} not in (0, {2.0 / lam1})")
    A = np.eye(g.n) - alpha * L
    b = alpha * (B @ (y / g.sigma**2))
    return Dynamics(
        A=A, b=b, alpha=float(alpha), L=L, L_pinv=pseudoinverse(L),
        lambda1=lam1, lambda_nm1=lam_nm1,
    )


def agent_coefficients(g: MeasuredGraph, y, alpha: float):
    """Per-agent view of the iteration: (a_ii, {j: a_ij}, b_i) for every agent.

    a_ii = 1 - sum_j alpha/sigma_ij^2, a_ij = alpha/sigma_ij^2 and
    b_i = sum_j (alpha/sigma_ij^2) y_ij, where y_ij is the measurement as
    seen from agent i (negated against the stored edge value when i is the
    higher endpoint).
    """
    y = np.asarray(y, dtype=float)
    coeffs = []
    weights: dict[int, dict[int, float]] = {v: {} for v in range(1, g.n + 1)}
    b_terms: dict[int, float] = {v: 0.0 for v in range(1, g.n + 1)}
    for k, (i, j) in enumerate(g.edges):
        w = alpha / g.sigma[k] ** 2
        weights[i][j] = w
        weights[j][i] = w
        b_terms[i] += w * y[k]
        b_terms[j] += w * (-y[k])
    for v in range(1, g.n + 1):
        coeffs.append((1.0 - sum(weights[v].values()), dict(weights[v]), b_terms[v]))
    return coeffs


def affine_step(x, d: Dynamics) -> np.ndarray:
    """One iteration A x + b; preserves the state sum in exact arithmetic."""
    return d.A @ np.asarray(x, dtype=float) + d.b


def explicit_solution(d: Dynamics, k: int) -> np.ndarray:
    """Closed form of k iterations from the zero start: (sum_{j<k} A^j) b."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    acc = np.zeros_like(d.b)
    power = np.eye(d.n)
    for _ in range(k):
        acc = acc + power @ d.b
        power = power @ d.A
    return acc


@dataclass(frozen=True)
class ConvergenceReport:
    """Pass/fail diagnostics for the three convergence conditions."""

    connected: bool
    mean_free_start: bool
    initial_sum: float
    step_size_ok: bool
    alpha: float
    alpha_upper: float

    @property
    def all_ok(self) -> bool:
        return self.connected and self.mean_free_start and self.step_size_ok


def check_convergence_conditions(g: MeasuredGraph, x0, alpha: float) -> ConvergenceReport:
    """Report (i) connectivity, (ii) mean-free start, (iii) step-size range.

    MeasuredGraph construction already guarantees connectivity, so (i) is
    always true here; it is reported for completeness of the diagnostic.
    """
    x0 = np.asarray(x0, dtype=float)
    L = laplacian(incidence_matrix(g), g.sigma)
    lam1 = float(laplacian_spectrum(L)[-1])
    s0 = float(np.sum(x0))
    return ConvergenceReport(
        connected=True,
        mean_free_start=abs(s0) <= 1e-12 * max(1.0, float(np.max(np.abs(x0)))),
        initial_sum=s0,
        step_size_ok=0.0 < alpha < 2.0 / lam1,
        alpha=float(alpha),
        alpha_upper=2.0 / lam1,
    )
