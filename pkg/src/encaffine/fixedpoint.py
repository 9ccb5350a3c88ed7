"""Integer-scaled dynamics, modular reconstruction, and quantization bounds.

The real iteration is mapped onto exact integers by scaling: coefficients are
rounded once as round(s*A) and round(s^2*b), and the state obeys
z(k+1) = round(s*A) z(k) + s^k round(s^2*b) with z(0) = round(s*x(0)).
The scale of z grows by one power of s per step, so x(k) ~ z(k)/s^(k+1).
All integer arithmetic is exact (Python bigints); the modulus q only enters
at the cryptographic layer. Ties round half away from zero so fixtures are
bit-exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .estimation import Dynamics


class NoIterationsPossible(ValueError):
    """Even a single iteration would overflow the message space."""


class OverflowBudgetViolation(ValueError):
    """Configured round length violates the overflow condition s^(k+1)(x1_bar + delta(k)) < q/2."""


class BoundViolation(AssertionError):
    """Observed integer/float deviation exceeded the quantization bound."""

    def __init__(self, k: int, deviation: float, bound: float):
        super().__init__(f"step {k}: deviation {deviation:.3e} > delta(k) {bound:.3e}")
        self.k = k
        self.deviation = deviation
        self.bound = bound


def round_to_nearest(x):
    """Nearest-integer rounding with ties going half away from zero.

    Accepts scalars or arrays; returns Python int for scalars, int64 array
    otherwise.
    """
    if np.isscalar(x):
        return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)
    x = np.asarray(x, dtype=float)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def quantize_dynamics(d: Dynamics, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise round(s*A) and round(s^2*b) as integer arrays."""
    if not (isinstance(s, (int, np.integer)) and s >= 1):
        raise ValueError("scaling factor s must be a positive integer")
    return round_to_nearest(s * d.A), round_to_nearest(s * s * d.b)


def integer_step(z, sA, s2b, k: int, s: int) -> list[int]:
    """One exact integer iteration z(k+1) = round(s*A) z(k) + s^k round(s^2*b).

    k is the number of iterations already applied since the last reset
    (scale exponent of the incoming state minus one). No modulus is applied.
    """
    zl = [int(v) for v in z]
    sAl = sA.tolist() if isinstance(sA, np.ndarray) else sA
    s2bl = s2b.tolist() if isinstance(s2b, np.ndarray) else s2b
    sk = s**k
    return [
        sum(a * zj for a, zj in zip(row, zl) if a) + sk * int(bi)
        for row, bi in zip(sAl, s2bl)
    ]


def recover_state(z, scale_exp: int, s: int) -> np.ndarray:
    """Real-valued state estimate z / s^scale_exp (exact bigint division to float)."""
    if scale_exp < 1:
        raise ValueError("scale_exp must be >= 1")
    den = s**scale_exp
    return np.array([int(v) / den for v in z], dtype=float)


def mod_reconstruct(z_prime: int, q: int) -> int:
    """Signed reconstruction from Z_q: z' if z' < q/2 else z' - q.

    Correct whenever the true value satisfies |z| < q/2; callers own that
    range guarantee (overflow produces garbage by design).
    """
    z_prime = int(z_prime)
    if not (0 <= z_prime < q):
        raise ValueError("z_prime must lie in [0, q)")
    return z_prime if 2 * z_prime < q else z_prime - q


def delta_bound(
    k: int,
    s: int,
    a_inf_norm: float,
    b_inf_norm: float,
    nu: int,
    initial_offset: float = 0.0,
) -> float:
    """Worst-case deviation bound delta(k) between z(k)/s^(k+1) and x(k).

    delta(k) = sum_{j=0}^{k-1} [ (||A|| + nu/(2s))^j (||b|| + 1/(2s^2))
                                 - ||A||^j ||b|| ]
    with nu the maximal number of nonzero entries in any row of A. Valid for
    the zero start z(0) = x(0) = 0. A nonzero initial_offset covers a round
    that starts from freshly quantized reset states instead; the offset is
    propagated by the quantized-matrix growth factor (||A|| + nu/(2s))^k.
    Non-decreasing in k and tending to 0 as s grows.
    """
    growth = a_inf_norm + nu / (2.0 * s)
    total = initial_offset * growth**k
    bump = b_inf_norm + 1.0 / (2.0 * s * s)
    for j in range(k):
        total += growth**j * bump - a_inf_norm**j * b_inf_norm
    return total


def dynamics_norms(d: Dynamics) -> tuple[float, float, int]:
    """(||A||_inf, ||b||_inf, nu) as needed by delta_bound; nu counts row nonzeros."""
    a_norm = float(np.max(np.sum(np.abs(d.A), axis=1)))
    b_norm = float(np.max(np.abs(d.b)))
    nu = int(np.max(np.sum(d.A != 0.0, axis=1)))
    return a_norm, b_norm, nu


def max_iterations(s: int, q: int, x1_bar: float, delta_fn) -> int:
    """Largest k with s^(k+1) (x1_bar + delta(k)) < q/2, by forward scan.

    delta_fn must be non-decreasing, which makes the first failing k final.
    Comparisons are exact (rational arithmetic), so arbitrarily large q are
    handled without float overflow.

    Raises:
        NoIterationsPossible: if even k = 1 violates the condition.
    """

    def holds(k: int) -> bool:
        delta = delta_fn(k)
        if math.isinf(delta) or math.isnan(delta):
            return False
        return 2 * s ** (k + 1) * (Fraction(x1_bar) + Fraction(delta)) < q

    if not holds(1):
        raise NoIterationsPossible(
            f"s^2 (x1_bar + delta(1)) >= q/2 for s={s}, x1_bar={x1_bar}"
        )
    k = 1
    while holds(k + 1):
        k += 1
    return k


@dataclass(frozen=True)
class FixedPointConfig:
    """Scaling and message-space budget for one protocol run.

    Eq.-(14)-style validation: construction checks the necessary condition
    with delta = 0; validate_budget() reruns it with the actual error model
    once the dynamics (and hence delta) are known.
    """

    s: int
    q: int
    x1_bar: float
    k_iter: int

    def __post_init__(self):
        if not (isinstance(self.s, (int, np.integer)) and self.s >= 2):
            raise ValueError("s must be an integer >= 2")
        if self.q <= 2 * self.s**2:
            raise ValueError("q must exceed 2 s^2")
        if self.x1_bar <= 0:
            raise ValueError("x1_bar must be positive")
        if self.k_iter < 1:
            raise ValueError("k_iter must be >= 1")
        if not 2 * self.s ** (self.k_iter + 1) * Fraction(self.x1_bar) < self.q:
            raise OverflowBudgetViolation(
                "overflow condition fails already for delta=0: "
                f"s^{self.k_iter + 1} * x1_bar >= q/2"
            )

    def validate_budget(self, delta_fn) -> None:
        """Check s^(k_iter+1) (x1_bar + delta(k_iter)) < q/2 with the real delta."""
        delta = delta_fn(self.k_iter)
        lhs_ok = (
            not (math.isinf(delta) or math.isnan(delta))
            and 2 * self.s ** (self.k_iter + 1) * (Fraction(self.x1_bar) + Fraction(delta)) < self.q
        )
        if not lhs_ok:
            raise OverflowBudgetViolation(
                f"s^{self.k_iter + 1} (x1_bar + delta({self.k_iter})) >= q/2 "
                f"(delta={delta:.3e})"
            )


@dataclass
class FixedPointState:
    """Integer state vector with its scale exponent and quantized coefficients."""

    z: list[int]
    scale_exp: int
    sA: np.ndarray
    s2b: np.ndarray
    s: int

    @classmethod
    def from_zero(cls, d: Dynamics, s: int) -> "FixedPointState":
        sA, s2b = quantize_dynamics(d, s)
        return cls(z=[0] * d.n, scale_exp=1, sA=sA, s2b=s2b, s=s)

    def step(self) -> None:
        self.z = integer_step(self.z, self.sA, self.s2b, self.scale_exp - 1, self.s)
        self.scale_exp += 1

    def recover(self) -> np.ndarray:
        return recover_state(self.z, self.scale_exp, self.s)


@dataclass(frozen=True)
class DominanceReport:
    """Outcome of checking the delta bound along a trajectory pair."""

    steps: int
    max_deviation: float
    max_ratio: float
    worst_step: int


def verify_delta_dominance(trace_float, trace_int, s: int, delta_fn) -> DominanceReport:
    """Assert ||z(k)/s^(k+1) - x(k)||_inf <= delta(k) along parallel traces.

    Both traces must come from the same dynamics and contain no reset inside.

    Raises:
        BoundViolation: at the first step where the bound fails.
    """
    if len(trace_float) != len(trace_int):
        raise ValueError("traces must have equal length")
    max_dev, max_ratio, worst = 0.0, 0.0, 0
    for k, (xf, zi) in enumerate(zip(trace_float, trace_int)):
        dev = float(np.max(np.abs(recover_state(zi, k + 1, s) - np.asarray(xf, dtype=float))))
        bound = delta_fn(k)
        if dev > bound:
            raise BoundViolation(k, dev, bound)
        max_dev = max(max_dev, dev)
        if bound > 0 and dev / bound > max_ratio:
            max_ratio, worst = dev / bound, k
    return DominanceReport(
        steps=len(trace_float), max_deviation=max_dev, max_ratio=max_ratio, worst_step=worst
    )
