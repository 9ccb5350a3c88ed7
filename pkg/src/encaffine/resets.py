"""Leader-driven resets: distance estimation, shift computation, tree messaging.

A reset replaces every agent's integer state (whose scale factor has grown to
s^(k+1)) with a freshly scaled value derived from the leader's estimate and
the signed distances d_i = p_i^T y measured along tree paths. The shifts
(dx1, dxG) are the minimizers of dx1^2 + w*dxG^2 subject to the mean-free
admissibility constraint; w = n-1 reproduces the hard reset that discards the
leader's iterate, w = 0 leaves the leader untouched.

The encrypted variants move only ciphertexts: bottom-up each node forwards
the homomorphic sum of its children's payloads plus its own edge term taken
|subtree| times (so shared edges are counted once per path crossing them),
and top-down each node extends the leader's broadcast with its own edge term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crypto import Ciphertext, HEContext, encode_signed
from .fixedpoint import mod_reconstruct, round_to_nearest
from .graphs import ResetTree


class NegativeWeight(ValueError):
    """Reset weighting factor w must be nonnegative."""


class TreeInconsistency(ValueError):
    """Tree structure and payload bookkeeping disagree."""


def distances(P: np.ndarray, y) -> np.ndarray:
    """Signed tree-path distance estimates d = P^T y (d_1 = 0)."""
    return P.T @ np.asarray(y, dtype=float)


@dataclass(frozen=True)
class ResetPlan:
    """Shift pair for one reset, plus the leader data it was computed from."""

    w: float
    dx1: float
    dxG: float
    d_sum: float
    x1_pre: float
    n: int

    @property
    def kind(self) -> str:
        return "hard" if self.w == self.n - 1 else "soft"


def compute_reset_shifts(x1_hat: float, d_sum: float, n: int, w: float) -> ResetPlan:
    """Admissible shifts (dx1, dxG) = (w, n-1)^T (n x1 - sum d) / ((n-1)^2 + w).

    Raises:
        NegativeWeight: if w < 0.
    """
    if w < 0:
        raise NegativeWeight(f"w={w} must be nonnegative")
    gap = n * x1_hat - d_sum
    denom = (n - 1) ** 2 + w
    return ResetPlan(
        w=float(w), dx1=w * gap / denom, dxG=(n - 1) * gap / denom,
        d_sum=float(d_sum), x1_pre=float(x1_hat), n=n,
    )


def reset_values(plan: ResetPlan) -> tuple[float, float]:
    """(leader value, follower base value) after the reset.

    The hard reset is evaluated through its closed form sum(d)/n, which
    contains no x1 term, so its output cannot depend on the leader's iterate
    even at the floating-point level.
    """
    if plan.kind == "hard":
        base = plan.d_sum / plan.n
        return base, base
    return plan.x1_pre - plan.dx1, plan.x1_pre - plan.dxG


def apply_reset_plaintext(plan: ResetPlan, d) -> np.ndarray:
    """Post-reset real states: leader x1 - dx1, follower i gets x1 - dxG - d_i.

    d is the full length-n distance vector with d[0] = 0. The result is
    mean-free whenever the plan was computed from d_sum = sum(d).
    """
    d = np.asarray(d, dtype=float)
    if plan.n != d.shape[0]:
        raise ValueError("distance vector length does not match the plan")
    if plan.kind == "hard":
        return np.sum(d) / plan.n - d
    leader_value, base = reset_values(plan)
    out = base - d
    out[0] = leader_value
    return out


def apply_reset_quantized(plan: ResetPlan, d, s: int) -> list[int]:
    """Integer post-reset states round(s * value_i), one rounding per agent.

    Each recovered entry is within 1/(2s) of the real reset value, so the
    recovered state sum is within n/(2s) of zero.
    """
    return [int(v) for v in round_to_nearest(s * apply_reset_plaintext(plan, d))]


@dataclass(frozen=True)
class AggregationMessage:
    """One tree-protocol message: an encrypted payload crossing one hop."""

    payload: Ciphertext
    direction: str  # "up" | "down"
    hop: tuple[int, int]  # (sender, receiver)
    step: int


def _hop_terms(tree: ResetTree) -> dict[int, tuple[int, int]]:
    """Per follower: (edge index, sign) of its parent hop, from the path matrix.

    The hop term of follower c is the single entry where p_c differs from its
    parent's path vector.
    """
    P = tree.path_matrix
    terms: dict[int, tuple[int, int]] = {}
    for c, par in tree.parent.items():
        diff = P[:, c - 1] - P[:, par - 1]
        nz = np.nonzero(diff)[0]
        if len(nz) != 1:
            raise TreeInconsistency(f"path vectors of {c} and parent {par} differ in {len(nz)} edges")
        e = int(nz[0])
        terms[c] = (e, int(diff[e]))
    return terms


def _subtree_heights(tree: ResetTree) -> dict[int, int]:
    heights = {v: 0 for v in tree.depth}
    for v in tree.nodes_by_depth_desc():
        if v != 1:
            p = tree.parent[v]
            heights[p] = max(heights[p], heights[v] + 1)
    return heights


def collect_distances_encrypted(
    tree: ResetTree, ctx: HEContext, qy
) -> tuple[Ciphertext, list[AggregationMessage]]:
    """Bottom-up encrypted aggregation of sum_i p_i^T round(s*y) at the leader.

    Every node sends exactly one ciphertext to its parent: the homomorphic
    sum of its children's payloads plus |subtree| copies of its own parent
    edge term (a leaf therefore sends Enc(round(-s*y_child,parent) mod q)).
    Leaves send at step 1 and each inner node one step after its last child,
    so the leader holds the total after exactly `tree.height` hops.

    Nothing is decrypted here; pair with recover_distance_sum on the leader's
    context.
    """
    qy = [int(v) for v in qy]
    if len(qy) != tree.path_matrix.shape[0]:
        raise TreeInconsistency("qy length does not match the tree's edge count")
    hop = _hop_terms(tree)
    send_step = {v: h + 1 for v, h in _subtree_heights(tree).items()}
    payloads: dict[int, Ciphertext] = {}
    messages: list[AggregationMessage] = []
    for v in tree.nodes_by_depth_desc():
        if v == 1:
            continue
        e, sign = hop[v]
        ct = ctx.mul_plain(tree.subtree_size[v], ctx.enc(encode_signed(sign * qy[e], ctx.q)))
        for c in tree.children[v]:
            ct = ctx.add(ct, payloads[c])
        payloads[v] = ct
        messages.append(
            AggregationMessage(payload=ct, direction="up", hop=(v, tree.parent[v]), step=send_step[v])
        )
    total = None
    for c in tree.children[1]:
        total = payloads[c] if total is None else ctx.add(total, payloads[c])
    if total is None:
        raise TreeInconsistency("leader has no children")
    messages.sort(key=lambda m: (m.step, m.hop))
    return total, messages


def recover_distance_sum(ctx: HEContext, total: Ciphertext, s: int, caller: str = "leader") -> float:
    """Leader-side decryption of the aggregate: reconstruct, then divide by s."""
    return mod_reconstruct(ctx.dec(total, caller=caller), ctx.q) / s


def distribute_reset_encrypted(
    tree: ResetTree, ctx: HEContext, plan: ResetPlan, s: int, qy
) -> tuple[dict[int, Ciphertext], list[AggregationMessage]]:
    """Top-down encrypted reset: follower i ends with Enc(round(s*base) - p_i^T round(s*y) mod q).

    The leader encrypts round(s*(x1 - dxG)) minus its own edge term for each
    child; every follower extends the received ciphertext with the term of
    the edge to each of its children. A follower at depth t receives its new
    state at step t, so the phase takes exactly `tree.height` steps.
    """
    qy = [int(v) for v in qy]
    if len(qy) != tree.path_matrix.shape[0]:
        raise TreeInconsistency("qy length does not match the tree's edge count")
    hop = _hop_terms(tree)
    _, base = reset_values(plan)
    base_int = round_to_nearest(s * base)
    states: dict[int, Ciphertext] = {}
    messages: list[AggregationMessage] = []
    for v in sorted(tree.depth, key=lambda u: (tree.depth[u], u)):
        if v == 1:
            continue
        e, sign = hop[v]
        if tree.parent[v] == 1:
            ct = ctx.enc(encode_signed(base_int - sign * qy[e], ctx.q))
        else:
            ct = ctx.add(states[tree.parent[v]], ctx.enc(encode_signed(-sign * qy[e], ctx.q)))
        states[v] = ct
        messages.append(
            AggregationMessage(payload=ct, direction="down", hop=(tree.parent[v], v), step=tree.depth[v])
        )
    messages.sort(key=lambda m: (m.step, m.hop))
    return states, messages
