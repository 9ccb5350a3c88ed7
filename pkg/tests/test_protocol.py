import io

import numpy as np
import pytest

from encaffine import (
    MeasurementSet,
    OverflowBudgetViolation,
    ProtocolConfig,
    build_dynamics,
    delta_bound,
    dynamics_norms,
    keygen,
    quantize_dynamics,
    random_graph,
    run_encrypted,
    run_plaintext_reference,
    sample_measurements,
)
from encaffine.protocol import leader_update


def _instance(seed, n=6, p=0.6):
    g = random_graph(n, p, rng=seed)
    x = np.random.default_rng(seed + 100).uniform(-8, 8, n)
    return g, sample_measurements(g, x, seed + 200)


BASE = dict(s=1000, k_iter=5, rounds=3, term_eps=0.0, q_bits=256, x1_bar=100.0, backend="mock")


class TestSchedule:
    def test_reset_completions(self):
        g, ms = _instance(1)
        t = run_encrypted(ProtocolConfig(**BASE), g, ms)
        h = t.tree_height
        assert [e.step_completed for e in t.reset_events] == [
            r * (5 + h) for r in range(1, len(t.reset_events) + 1)
        ]
        # six-rounds-five-resets pattern: no reset after the final round
        assert len(t.reset_events) == t.rounds_executed - 1
        assert t.steps[-1].step == 3 * 5 + 2 * h

    def test_k_iter_below_height_rejected(self):
        # path graph of 4 nodes has h = 3
        import encaffine as ea

        g = ea.MeasuredGraph(n=4, edges=((1, 2), (2, 3), (3, 4)), sigma=np.ones(3))
        ms = MeasurementSet.from_noise(g, np.zeros(4), np.zeros(3))
        with pytest.raises(ValueError, match="tree height"):
            run_encrypted(ProtocolConfig(**{**BASE, "k_iter": 2}), g, ms)

    def test_budget_violation_raised(self):
        g, ms = _instance(2)
        cfg = ProtocolConfig(**{**BASE, "q_bits": 40, "k_iter": 5})
        with pytest.raises(OverflowBudgetViolation):
            run_encrypted(cfg, g, ms)

    def test_termination_on_converged_leader(self, single_edge_graph):
        ms = MeasurementSet.from_noise(single_edge_graph, [0.5, -0.5], [0.0])
        cfg = ProtocolConfig(**{**BASE, "k_iter": 3, "rounds": 6, "term_eps": 1e-6})
        t = run_encrypted(cfg, single_edge_graph, ms)
        assert t.termination == "converged"
        assert t.rounds_executed < 6


class TestEncryptedIntegerEquality:
    def test_mock_backend_matches_reference(self):
        for seed in range(5):
            g, ms = _instance(seed)
            cfg = ProtocolConfig(**BASE, debug_decrypt=True)
            enc_t = run_encrypted(cfg, g, ms)
            ref = run_plaintext_reference(cfg, g, ms)
            q = enc_t.q
            for se, si in zip(enc_t.steps, ref.integer_run.steps):
                assert (se.step, se.round, se.phase) == (si.step, si.round, si.phase)
                assert se.integer_states[1] == si.integer_states[1]
                for a in range(2, g.n + 1):
                    assert se.integer_states[a] == si.integer_states[a] % q

    def test_paillier_backend_matches_reference(self):
        g, ms = _instance(7, n=5, p=0.8)
        q = keygen(128, rng_seed=0, backend="paillier").q
        cfg_p = ProtocolConfig(
            s=100, k_iter=3, rounds=2, term_eps=0.0, q_bits=128, x1_bar=50.0,
            backend="paillier", key_seed=0, debug_decrypt=True,
        )
        cfg_m = ProtocolConfig(
            s=100, k_iter=3, rounds=2, term_eps=0.0, q_bits=128, x1_bar=50.0,
            backend="mock", q=q, debug_decrypt=True,
        )
        tp = run_encrypted(cfg_p, g, ms)
        tm = run_encrypted(cfg_m, g, ms)
        ref = run_plaintext_reference(cfg_m, g, ms)
        assert tp.q == tm.q == q
        for sp, sm, si in zip(tp.steps, tm.steps, ref.integer_run.steps):
            assert sp.integer_states == sm.integer_states
            assert sp.integer_states[1] == si.integer_states[1]


class TestPrivacySurface:
    def test_only_leader_decrypts_outside_debug(self):
        g, ms = _instance(3)
        t = run_encrypted(ProtocolConfig(**BASE), g, ms)
        assert t.dec_callers and set(t.dec_callers) == {"leader"}

    def test_no_follower_plaintext_outside_debug(self):
        g, ms = _instance(3)
        t = run_encrypted(ProtocolConfig(**BASE), g, ms)
        for rec in t.steps:
            assert rec.recovered is None
            assert rec.integer_states is None

    def test_message_log_shape(self):
        g, ms = _instance(4)
        t = run_encrypted(ProtocolConfig(**BASE), g, ms)
        n, m = g.n, g.m
        ups = [x for x in t.messages if x.direction == "up"]
        downs = [x for x in t.messages if x.direction == "down"]
        states = [x for x in t.messages if x.direction == "state"]
        assert len(ups) == n - 1
        assert len(downs) == (n - 1) * len(t.reset_events)
        assert len(states) == 2 * m * 5 * t.rounds_executed
        # ciphertext ids only, never payload values
        assert all(isinstance(x.ciphertext_id, int) for x in t.messages)


class TestModularSoundness:
    def test_follower_wraparound_is_irrelevant_for_leader(self):
        g, ms = _instance(6)
        d = build_dynamics(g, ms.y)
        sA, s2b = quantize_dynamics(d, 1000)
        q = 2**128
        rows = sA.tolist()
        residues = [(j, (37 * j**3) % q) for j in range(2, g.n + 1)]
        shifted = [(j, (r + q) % q) for j, r in residues]  # adding q changes nothing mod q
        base = leader_update(123, residues, rows[0], int(s2b[0]), 2, 1000, q)
        off = leader_update(123, shifted, rows[0], int(s2b[0]), 2, 1000, q)
        assert base == off

    def test_leader_update_equals_exact_row(self):
        g, ms = _instance(8)
        d = build_dynamics(g, ms.y)
        sA, s2b = quantize_dynamics(d, 1000)
        q = 2**200
        z = list(range(-3, g.n - 3))
        adj = g.neighbors()[1]
        residues = [(j, z[j - 1] % q) for j in adj]
        exact = sum(int(sA[0, j - 1]) * z[j - 1] for j in adj) + int(sA[0, 0]) * z[0] + 1000**2 * int(s2b[0])
        assert leader_update(z[0], residues, sA.tolist()[0], int(s2b[0]), 2, 1000, q) == exact


class TestAgainstFloatPipeline:
    def test_leader_within_delta_of_float_run(self, single_edge_graph):
        ms = MeasurementSet.from_noise(single_edge_graph, [0.7, -0.7], [0.1])
        cfg = ProtocolConfig(s=1000, k_iter=5, rounds=3, term_eps=0.0, q_bits=128,
                             x1_bar=10.0, reset="hard")
        t = run_encrypted(cfg, single_edge_graph, ms)
        ref = run_plaintext_reference(cfg, single_edge_graph, ms)
        d = build_dynamics(single_edge_graph, ms.y)
        an, bn, nu = dynamics_norms(d)
        for se, sf in zip(t.steps, ref.float_run.steps):
            if se.phase != "iterate":
                continue
            k = se.step - (se.round - 1) * (5 + t.tree_height)
            bound = delta_bound(k, 1000, an, bn, nu, initial_offset=0.0 if se.round == 1 else 1 / 2000)
            assert abs(se.leader_recovered - sf.leader_recovered) <= bound + 1e-12

    def test_pipelines_mean_free_after_resets(self):
        g, ms = _instance(11)
        cfg = ProtocolConfig(**BASE, debug_decrypt=True)
        ref = run_plaintext_reference(cfg, g, ms)
        for run, tol in ((ref.float_run, 1e-9), (ref.integer_run, g.n / (2 * 1000) + 0.01)):
            for e in run.reset_events:
                rec = run.steps[e.step_completed].recovered
                assert abs(sum(rec.values())) <= tol

    def test_n2_float_deviation_non_increasing_at_round_boundaries(self, single_edge_graph):
        ms = MeasurementSet.from_noise(single_edge_graph, [0.5, -0.5], [0.0])
        cfg = ProtocolConfig(**{**BASE, "reset": "soft"})
        ref = run_plaintext_reference(cfg, single_edge_graph, ms)
        devs = [r.leader_deviation for r in ref.float_run.steps if r.phase == "iterate"]
        boundary = [r.leader_deviation for r in ref.float_run.steps
                    if r.step in [e.step_completed for e in ref.float_run.reset_events]]
        series = [devs[0]] + boundary + [devs[-1]]
        assert all(b <= a + 1e-12 for a, b in zip(series, series[1:]))

    def test_hard_and_soft_differ_but_converge(self):
        # uniform sigma keeps the spectrum well conditioned so six rounds suffice
        g = random_graph(8, 0.6, rng=13, sigma_set=(0.5,))
        ms = sample_measurements(g, np.random.default_rng(113).uniform(-8, 8, 8), 213)
        base = {**BASE, "rounds": 6, "k_iter": 10}
        t_hard = run_encrypted(ProtocolConfig(**{**base, "reset": "hard"}), g, ms)
        t_soft = run_encrypted(ProtocolConfig(**{**base, "reset": "soft"}), g, ms)
        assert t_hard.leader_series() != t_soft.leader_series()
        assert t_hard.final_leader_deviation < 0.05
        assert t_soft.final_leader_deviation < 0.05
        # both improve on the zero start
        assert t_soft.final_leader_deviation < t_soft.steps[0].leader_deviation


class TestDeterminismAndExport:
    def test_byte_identical_transcripts(self):
        g, ms = _instance(21)
        cfg = ProtocolConfig(**BASE, debug_decrypt=True)
        bufs = []
        for _ in range(2):
            t = run_encrypted(cfg, g, ms)
            buf = io.StringIO()
            t.to_csv(buf)
            mbuf = io.StringIO()
            t.messages_to_csv(mbuf)
            bufs.append(buf.getvalue() + mbuf.getvalue())
        assert bufs[0] == bufs[1]

    def test_csv_columns_and_debug_rows(self):
        g, ms = _instance(22)
        t = run_encrypted(ProtocolConfig(**BASE, debug_decrypt=True), g, ms)
        buf = io.StringIO()
        t.to_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "pipeline,step,round,phase,agent,recovered_state,deviation,leader_deviation"
        assert len(lines) == 1 + len(t.steps) * g.n
        t2 = run_encrypted(ProtocolConfig(**BASE), g, ms)
        buf2 = io.StringIO()
        t2.to_csv(buf2)
        assert len(buf2.getvalue().splitlines()) == 1 + len(t2.steps)

    def test_phase_values(self):
        g, ms = _instance(23)
        t = run_encrypted(ProtocolConfig(**BASE), g, ms)
        assert {r.phase for r in t.steps} == {"iterate", "reset_down"}
