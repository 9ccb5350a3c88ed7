"""Stochastic characterization of the estimators and reset outcomes.

All estimators studied here are unbiased for the mean-free shift of the true
states. The centralized estimate has covariance L_pinv; the hard reset has
covariance (L_pinv L) P^T Sigma P (L L_pinv). The soft-reset covariance has
no closed form here (only its mean is known), so it is characterized by
Monte Carlo sampling alone.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import IO

import numpy as np

from .graphs import MeasuredGraph, build_reset_tree, incidence_matrix, laplacian, pseudoinverse


class InsufficientSamples(ValueError):
    """Monte Carlo moment estimation needs at least two samples."""


def centered_truth(x) -> np.ndarray:
    """Mean-free shift x - (1^T x / n) 1, the expected value of every estimator."""
    x = np.asarray(x, dtype=float)
    return x - np.mean(x)


def centralized_estimator_cov(L_pinv: np.ndarray) -> np.ndarray:
    """Covariance of the centralized estimate; the algebra collapses to L_pinv itself."""
    return np.asarray(L_pinv, dtype=float)


def hard_reset_cov(L: np.ndarray, L_pinv: np.ndarray, P: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    """Covariance (L_pinv L) P^T Sigma P (L L_pinv) of the hard-reset state."""
    J = L_pinv @ L
    return J @ P.T @ Sigma @ P @ J.T


@dataclass(frozen=True, eq=False)
class MomentReport:
    """Empirical vs theoretical first and second moments of one estimator."""

    kind: str
    n_samples: int
    empirical_mean: np.ndarray
    theoretical_mean: np.ndarray
    empirical_cov: np.ndarray
    theoretical_cov: np.ndarray | None
    max_abs_mean_err: float
    rel_frob_cov_err: float | None

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "n_samples": self.n_samples,
                "max_abs_mean_err": self.max_abs_mean_err,
                "rel_frob_cov_err": self.rel_frob_cov_err,
                "empirical_mean": self.empirical_mean.tolist(),
                "theoretical_mean": self.theoretical_mean.tolist(),
            },
            indent=2,
        )

    def cov_to_csv(self, f: IO[str]) -> None:
        writer = csv.writer(f, lineterminator="\n")
        for row in self.empirical_cov:
            writer.writerow([repr(float(v)) for v in row])


def _simulate_estimates(
    g: MeasuredGraph, x_true, kind: str, w: float, n_samples: int, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized draws of the requested estimator, one row per noise realization."""
    B = incidence_matrix(g)
    L = laplacian(B, g.sigma)
    L_pinv = pseudoinverse(L)
    P = build_reset_tree(g).path_matrix
    x_true = np.asarray(x_true, dtype=float)
    V = rng.normal(0.0, g.sigma, size=(n_samples, g.m))
    Y = V + B.T @ x_true
    if kind == "centralized":
        M = L_pinv @ (B / g.sigma**2)
        return Y @ M.T
    D = Y @ P  # row r holds the distance vector of draw r (d_1 = 0)
    if kind == "hard":
        return np.sum(D, axis=1, keepdims=True) / g.n - D
    if kind == "soft":
        M = L_pinv @ (B / g.sigma**2)
        x1 = Y @ M.T[:, 0]  # leader entry of the centralized estimate, per draw
        gap = g.n * x1 - np.sum(D, axis=1)
        denom = (g.n - 1) ** 2 + w
        dx1 = w * gap / denom
        dxG = (g.n - 1) * gap / denom
        out = (x1 - dxG)[:, None] - D
        out[:, 0] = x1 - dx1
        return out
    raise ValueError(f"unknown estimator kind {kind!r}")


def monte_carlo_reset_moments(
    g: MeasuredGraph,
    x_true,
    kind: str,
    w: float = 0.0,
    n_samples: int = 10_000,
    seed: int = 0,
) -> MomentReport:
    """Monte Carlo first/second moments of one estimator against theory.

    kind is one of "centralized", "hard", "soft". For "soft" the leader state
    is set to the leader entry of the centralized estimate of the same draw
    (the best-case convention used for the mean analysis); its covariance has
    no closed form, so rel_frob_cov_err is None there.

    Raises:
        InsufficientSamples: for n_samples < 2.
    """
    if n_samples < 2:
        raise InsufficientSamples("need n_samples >= 2")
    rng = np.random.default_rng(seed)
    samples = _simulate_estimates(g, x_true, kind, w, n_samples, rng)
    emp_mean = samples.mean(axis=0)
    emp_cov = np.cov(samples.T, ddof=1)
    theo_mean = centered_truth(x_true)

    B = incidence_matrix(g)
    L = laplacian(B, g.sigma)
    L_pinv = pseudoinverse(L)
    if kind == "centralized":
        theo_cov = centralized_estimator_cov(L_pinv)
    elif kind == "hard":
        P = build_reset_tree(g).path_matrix
        theo_cov = hard_reset_cov(L, L_pinv, P, np.diag(g.sigma**2))
    else:
        theo_cov = None

    rel_err = None
    if theo_cov is not None:
        denom = np.linalg.norm(theo_cov)
        rel_err = float(np.linalg.norm(emp_cov - theo_cov) / denom) if denom > 0 else 0.0
    return MomentReport(
        kind=kind,
        n_samples=n_samples,
        empirical_mean=emp_mean,
        theoretical_mean=theo_mean,
        empirical_cov=emp_cov,
        theoretical_cov=theo_cov,
        max_abs_mean_err=float(np.max(np.abs(emp_mean - theo_mean))),
        rel_frob_cov_err=rel_err,
    )
