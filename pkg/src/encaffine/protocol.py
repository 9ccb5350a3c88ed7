"""Synchronous protocol engine: encrypted runs and plaintext reference runs.

A run consists of computation rounds of k_iter iterations separated by reset
phases of k_res = h steps (h the reset tree height). During the first round
the bottom-up distance aggregation piggybacks on the iteration steps (it
needs h <= k_iter hops and is collected only once, since measurements are
static). Follower states live exclusively in ciphertexts; the leader holds
its own integer state in plaintext, decrypts the ciphertexts it receives from
its neighbors, and reconstructs its next state from the modular result.

Three pipelines share one schedule:
  * run_encrypted: ciphertext states via an HE backend,
  * the crypto-free integer pipeline: exact bigint states, no modulus,
  * the float pipeline: the real-valued iteration with exact resets.
The integer pipeline's states are congruent mod q to the encrypted ones step
for step, which the test suite checks integer for integer.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from . import resets
from .crypto import HEContext, encode_signed, keygen, mock_context
from .estimation import MeasurementSet, affine_step, build_dynamics
from .fixedpoint import (
    FixedPointConfig,
    delta_bound,
    dynamics_norms,
    integer_step,
    mod_reconstruct,
    quantize_dynamics,
    recover_state,
    round_to_nearest,
)
from .graphs import MeasuredGraph, build_reset_tree, incidence_matrix


@dataclass(frozen=True)
class ProtocolConfig:
    """Run parameters; defaults follow the benchmark study configuration."""

    s: int = 1000
    x1_bar: float = 1e4
    k_iter: int = 10
    reset: str = "hard"
    w: float | None = None
    rounds: int = 6
    term_eps: float = 1e-6
    backend: str = "mock"
    q_bits: int = 2048
    q: int | None = None
    key_seed: int = 0
    debug_decrypt: bool = False
    log_messages: bool = True

    def __post_init__(self):
        if not (isinstance(self.s, (int, np.integer)) and self.s >= 2):
            raise ValueError("s must be an integer >= 2")
        if self.k_iter < 1 or self.rounds < 1:
            raise ValueError("k_iter and rounds must be >= 1")
        if self.term_eps < 0:
            raise ValueError("term_eps must be >= 0 (0 disables early termination)")
        if self.backend not in ("mock", "paillier"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.reset not in ("soft", "hard"):
            raise ValueError(f"reset must be 'soft' or 'hard', got {self.reset!r}")
        if self.w is not None and self.w < 0:
            raise ValueError("w must be nonnegative")
        if self.q is not None and self.backend != "mock":
            raise ValueError("an explicit q is only meaningful for the mock backend")

    def resolve_w(self, n: int) -> float:
        if self.w is not None:
            return float(self.w)
        return 0.0 if self.reset == "soft" else float(n - 1)


@dataclass(frozen=True)
class StepRecord:
    step: int
    round: int
    phase: str  # "iterate" | "reset_down"
    leader_recovered: float
    leader_deviation: float
    recovered: dict[int, float] | None = None
    deviations: dict[int, float] | None = None
    integer_states: dict[int, int] | None = None


@dataclass(frozen=True)
class ResetEvent:
    round: int
    step_completed: int
    dx1: float
    dxG: float
    d_sum: float
    x1_pre: float


@dataclass(frozen=True)
class MessageRecord:
    step: int
    sender: int
    receiver: int
    direction: str  # "state" | "up" | "down"
    ciphertext_id: int


@dataclass
class Transcript:
    """Everything observable about one run."""

    pipeline: str
    steps: list[StepRecord]
    reset_events: list[ResetEvent]
    messages: list[MessageRecord]
    termination: str
    x_star: np.ndarray
    q: int | None
    s: int
    k_iter: int
    tree_height: int
    rounds_executed: int
    w: float
    overflow_steps: list[int] = field(default_factory=list)
    dec_callers: list[str] = field(default_factory=list)

    @property
    def final_leader_deviation(self) -> float:
        return self.steps[-1].leader_deviation

    def final_max_deviation(self) -> float | None:
        devs = self.steps[-1].deviations
        if devs is None:
            return None
        return max(devs.values())

    def leader_series(self) -> list[float]:
        return [r.leader_recovered for r in self.steps]

    def to_csv(self, f: IO[str]) -> None:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(
            ["pipeline", "step", "round", "phase", "agent",
             "recovered_state", "deviation", "leader_deviation"]
        )
        for rec in self.steps:
            if rec.recovered is not None:
                for agent in sorted(rec.recovered):
                    writer.writerow(
                        [self.pipeline, rec.step, rec.round, rec.phase, agent,
                         repr(rec.recovered[agent]), repr(rec.deviations[agent]),
                         repr(rec.leader_deviation)]
                    )
            else:
                writer.writerow(
                    [self.pipeline, rec.step, rec.round, rec.phase, 1,
                     repr(rec.leader_recovered), repr(rec.leader_deviation),
                     repr(rec.leader_deviation)]
                )

    def messages_to_csv(self, f: IO[str]) -> None:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["step", "from", "to", "direction", "ciphertext_id"])
        for m in self.messages:
            writer.writerow([m.step, m.sender, m.receiver, m.direction, m.ciphertext_id])


@dataclass(frozen=True)
class PlainReference:
    """Float and crypto-free integer runs over the identical schedule."""

    float_run: Transcript
    integer_run: Transcript


class _Setup:
    """Shared per-run precomputation."""

    def __init__(self, config: ProtocolConfig, g: MeasuredGraph, meas: MeasurementSet):
        self.g = g
        self.n = g.n
        self.dyn = build_dynamics(g, meas.y)
        self.tree = build_reset_tree(g)
        self.h = self.tree.height
        if config.k_iter < self.h:
            raise ValueError(
                f"k_iter={config.k_iter} must be >= tree height h={self.h} "
                "so the distance aggregation fits inside the first round"
            )
        self.sA, self.s2b = quantize_dynamics(self.dyn, config.s)
        self.sA_rows = self.sA.tolist()
        self.s2b_list = self.s2b.tolist()
        self.qy = round_to_nearest(config.s * meas.y).tolist()
        B = incidence_matrix(g)
        self.x_star = self.dyn.L_pinv @ (B @ (meas.y / g.sigma**2))
        self.float_distances = resets.distances(self.tree.path_matrix, meas.y)
        self.w = config.resolve_w(g.n)
        self.adj = g.neighbors()
        a_norm, b_norm, nu = dynamics_norms(self.dyn)
        offset = 0.0 if config.rounds == 1 else 1.0 / (2.0 * config.s)
        self.delta_fn = lambda k: delta_bound(k, config.s, a_norm, b_norm, nu, offset)

    def validate_budget(self, config: ProtocolConfig, q: int) -> None:
        FixedPointConfig(s=config.s, q=q, x1_bar=config.x1_bar, k_iter=config.k_iter).validate_budget(
            self.delta_fn
        )

    def exact_distance_sum_scaled(self) -> int:
        """sum_{i>=2} p_i^T round(s*y) as an exact integer."""
        P = self.tree.path_matrix.T.tolist()
        return sum(sum(c * v for c, v in zip(row, self.qy) if c) for row in P[1:])


def leader_update(z1: int, neighbor_residues, sa_row, s2b_1: int, k: int, s: int, q: int) -> int:
    """The leader's plaintext state update from decrypted neighbor residues.

    Computes round(s*a_11) z_1 + sum_j round(s*a_1j) Dec(...) + s^k round(s^2 b_1)
    modulo q, then reconstructs the signed value. Whether neighbor residues
    wrapped around Z_q is irrelevant for the result.
    """
    acc = sa_row[0] * z1 + s**k * s2b_1
    for j, res in neighbor_residues:
        acc += sa_row[j - 1] * res
    return mod_reconstruct(acc % q, q)


def _make_context(config: ProtocolConfig) -> HEContext:
    if config.backend == "mock":
        q = config.q if config.q is not None else 1 << config.q_bits
        return mock_context(q, label=f"mock-{config.q_bits}b-{config.key_seed}")
    return keygen(config.q_bits, config.key_seed, backend="paillier")


def run_encrypted(config: ProtocolConfig, g: MeasuredGraph, meas: MeasurementSet) -> Transcript:
    """Full encrypted run; only the leader ever decrypts (caller-tagged).

    Raises:
        OverflowBudgetViolation: if the configured round length violates the
            message-space budget for the configured error model.
    """
    su = _Setup(config, g, meas)
    ctx = _make_context(config)
    q, s = ctx.q, config.s
    su.validate_budget(config, q)
    pub = ctx.public_view()

    coeff_rows = [[encode_signed(c, q) if c else 0 for c in row] for row in su.sA_rows]
    s2b_mod = [encode_signed(v, q) for v in su.s2b_list]
    leader_neighbors = su.adj[1]

    z1 = 0
    cts = {i: pub.enc(0) for i in range(2, g.n + 1)}
    scale = 1

    steps: list[StepRecord] = []
    messages: list[MessageRecord] = []
    reset_events: list[ResetEvent] = []

    def snapshot(step: int, rnd: int, phase: str) -> None:
        leader_rec = z1 / s**scale
        rec = dev = ints = None
        if config.debug_decrypt:
            residues = {i: ctx.dec(cts[i], caller="debug") for i in cts}
            ints = {1: z1, **residues}
            rec = {1: leader_rec}
            for i, r in residues.items():
                rec[i] = mod_reconstruct(r, q) / s**scale
            dev = {i: abs(rec[i] - su.x_star[i - 1]) for i in rec}
        steps.append(
            StepRecord(
                step=step, round=rnd, phase=phase,
                leader_recovered=leader_rec,
                leader_deviation=abs(leader_rec - su.x_star[0]),
                recovered=rec, deviations=dev, integer_states=ints,
            )
        )

    snapshot(0, 1, "iterate")

    agg_ct, up_msgs = resets.collect_distances_encrypted(su.tree, pub, su.qy)
    if config.log_messages:
        for m in up_msgs:
            messages.append(
                MessageRecord(step=m.step, sender=m.hop[0], receiver=m.hop[1],
                              direction="up", ciphertext_id=m.payload.serial)
            )
    d_sum: float | None = None

    step = 0
    termination = "max_rounds"
    rounds_executed = 0
    for rnd in range(1, config.rounds + 1):
        rounds_executed = rnd
        for k in range(config.k_iter):
            step += 1
            leader_ct = pub.enc(encode_signed(z1, q))
            current = {1: leader_ct}
            current.update(cts)
            if config.log_messages:
                for i, j in g.edges:
                    messages.append(MessageRecord(step, i, j, "state", current[i].serial))
                    messages.append(MessageRecord(step, j, i, "state", current[j].serial))
            sk_mod = pow(s, k, q)
            new_cts = {}
            for i in range(2, g.n + 1):
                row = coeff_rows[i - 1]
                acc = pub.mul_plain(row[i - 1], cts[i])
                for j in su.adj[i]:
                    acc = pub.add(acc, pub.mul_plain(row[j - 1], current[j]))
                acc = pub.add(acc, pub.enc(sk_mod * s2b_mod[i - 1] % q))
                new_cts[i] = acc
            neighbor_residues = [(j, ctx.dec(current[j], caller="leader")) for j in leader_neighbors]
            z1 = leader_update(z1, neighbor_residues, su.sA_rows[0], su.s2b_list[0], k, s, q)
            cts = new_cts
            scale = k + 2
            snapshot(step, rnd, "iterate")

        if config.term_eps > 0 and len(steps) >= 2:
            if abs(steps[-1].leader_recovered - steps[-2].leader_recovered) < config.term_eps:
                termination = "converged"
                break
        if rnd == config.rounds:
            termination = "max_rounds"
            break

        if d_sum is None:
            d_sum = resets.recover_distance_sum(ctx, agg_ct, s, caller="leader")
        plan = resets.compute_reset_shifts(z1 / s**scale, d_sum, g.n, su.w)
        new_cts, down_msgs = resets.distribute_reset_encrypted(su.tree, pub, plan, s, su.qy)
        if config.log_messages:
            for m in down_msgs:
                messages.append(
                    MessageRecord(step=step + m.step, sender=m.hop[0], receiver=m.hop[1],
                                  direction="down", ciphertext_id=m.payload.serial)
                )
        for t in range(1, su.h + 1):
            step += 1
            if t == su.h:
                leader_value, _ = resets.reset_values(plan)
                z1 = round_to_nearest(s * leader_value)
                cts = new_cts
                scale = 1
            snapshot(step, rnd, "reset_down")
        reset_events.append(
            ResetEvent(round=rnd, step_completed=step, dx1=plan.dx1, dxG=plan.dxG,
                       d_sum=plan.d_sum, x1_pre=plan.x1_pre)
        )

    messages.sort(key=lambda m: (m.step, m.direction, m.sender, m.receiver))
    return Transcript(
        pipeline="encrypted", steps=steps, reset_events=reset_events, messages=messages,
        termination=termination, x_star=su.x_star, q=q, s=s, k_iter=config.k_iter,
        tree_height=su.h, rounds_executed=rounds_executed, w=su.w,
        dec_callers=list(ctx.dec_log),
    )


def _run_integer(config: ProtocolConfig, su: _Setup, q: int) -> Transcript:
    s = config.s
    n = su.n
    z = [0] * n
    scale = 1
    T = su.exact_distance_sum_scaled()
    d_sum_cached: float | None = None
    steps: list[StepRecord] = []
    reset_events: list[ResetEvent] = []
    overflow_steps: list[int] = []

    def snapshot(step: int, rnd: int, phase: str) -> None:
        rec_vec = recover_state(z, scale, s)
        rec = {i + 1: float(rec_vec[i]) for i in range(n)}
        dev = {i + 1: abs(rec_vec[i] - su.x_star[i]) for i in range(n)}
        steps.append(
            StepRecord(
                step=step, round=rnd, phase=phase,
                leader_recovered=rec[1], leader_deviation=dev[1],
                recovered=rec, deviations=dev,
                integer_states={i + 1: z[i] for i in range(n)},
            )
        )

    snapshot(0, 1, "iterate")
    step = 0
    termination = "max_rounds"
    rounds_executed = 0
    for rnd in range(1, config.rounds + 1):
        rounds_executed = rnd
        for k in range(config.k_iter):
            step += 1
            z = integer_step(z, su.sA_rows, su.s2b_list, k, s)
            scale = k + 2
            if 2 * abs(z[0]) >= q:
                overflow_steps.append(step)
            snapshot(step, rnd, "iterate")
        if config.term_eps > 0 and len(steps) >= 2:
            if abs(steps[-1].leader_recovered - steps[-2].leader_recovered) < config.term_eps:
                termination = "converged"
                break
        if rnd == config.rounds:
            termination = "max_rounds"
            break
        if d_sum_cached is None:
            d_sum_cached = mod_reconstruct(T % q, q) / s
        plan = resets.compute_reset_shifts(z[0] / s**scale, d_sum_cached, n, su.w)
        leader_value, base = resets.reset_values(plan)
        base_int = round_to_nearest(s * base)
        P_cols = su.tree.path_matrix.T.tolist()
        new_z = [round_to_nearest(s * leader_value)]
        for i in range(2, n + 1):
            new_z.append(base_int - sum(c * v for c, v in zip(P_cols[i - 1], su.qy) if c))
        for t in range(1, su.h + 1):
            step += 1
            if t == su.h:
                z = new_z
                scale = 1
            snapshot(step, rnd, "reset_down")
        reset_events.append(
            ResetEvent(round=rnd, step_completed=step, dx1=plan.dx1, dxG=plan.dxG,
                       d_sum=plan.d_sum, x1_pre=plan.x1_pre)
        )
    return Transcript(
        pipeline="integer", steps=steps, reset_events=reset_events, messages=[],
        termination=termination, x_star=su.x_star, q=q, s=s, k_iter=config.k_iter,
        tree_height=su.h, rounds_executed=rounds_executed, w=su.w,
        overflow_steps=overflow_steps,
    )


def _run_float(config: ProtocolConfig, su: _Setup) -> Transcript:
    n = su.n
    x = np.zeros(n)
    steps: list[StepRecord] = []
    reset_events: list[ResetEvent] = []

    def snapshot(step: int, rnd: int, phase: str) -> None:
        rec = {i + 1: float(x[i]) for i in range(n)}
        dev = {i + 1: float(abs(x[i] - su.x_star[i])) for i in range(n)}
        steps.append(
            StepRecord(step=step, round=rnd, phase=phase,
                       leader_recovered=rec[1], leader_deviation=dev[1],
                       recovered=rec, deviations=dev)
        )

    snapshot(0, 1, "iterate")
    d = su.float_distances
    step = 0
    termination = "max_rounds"
    rounds_executed = 0
    for rnd in range(1, config.rounds + 1):
        rounds_executed = rnd
        prev_leader = None
        for _ in range(config.k_iter):
            step += 1
            prev_leader = float(x[0])
            x = affine_step(x, su.dyn)
            snapshot(step, rnd, "iterate")
        if config.term_eps > 0 and prev_leader is not None:
            if abs(float(x[0]) - prev_leader) < config.term_eps:
                termination = "converged"
                break
        if rnd == config.rounds:
            termination = "max_rounds"
            break
        plan = resets.compute_reset_shifts(float(x[0]), float(np.sum(d[1:])), n, su.w)
        new_x = resets.apply_reset_plaintext(plan, d)
        for t in range(1, su.h + 1):
            step += 1
            if t == su.h:
                x = new_x
            snapshot(step, rnd, "reset_down")
        reset_events.append(
            ResetEvent(round=rnd, step_completed=step, dx1=plan.dx1, dxG=plan.dxG,
                       d_sum=plan.d_sum, x1_pre=plan.x1_pre)
        )
    return Transcript(
        pipeline="float", steps=steps, reset_events=reset_events, messages=[],
        termination=termination, x_star=su.x_star, q=None, s=config.s,
        k_iter=config.k_iter, tree_height=su.h, rounds_executed=rounds_executed, w=su.w,
    )


def run_plaintext_reference(
    config: ProtocolConfig, g: MeasuredGraph, meas: MeasurementSet
) -> PlainReference:
    """Float and crypto-free integer pipelines over the identical schedule."""
    su = _Setup(config, g, meas)
    q = config.q if config.q is not None else 1 << config.q_bits
    su.validate_budget(config, q)
    return PlainReference(
        float_run=_run_float(config, su),
        integer_run=_run_integer(config, su, q),
    )
