"""Propagation graphs, constraint systems, and the clock-sliced evaluator."""

import numpy as np
import pytest

from proofgames import games, pauli, propagation as pr, qcore


def test_pi_e_projective():
    m = pr.pi_e_measurement(5, 1, 2)
    total = sum(m.ops)
    np.testing.assert_allclose(total, np.eye(5), atol=1e-12)
    for op in m.ops:
        np.testing.assert_allclose(op @ op, op, atol=1e-12)
        np.testing.assert_allclose(op, op.conj().T, atol=1e-12)
    plus = np.zeros(5)
    plus[1] = plus[2] = 1 / np.sqrt(2)
    np.testing.assert_allclose(m.ops[0] @ plus, plus, atol=1e-12)
    np.testing.assert_allclose(m.ops[1] @ plus, 0 * plus, atol=1e-12)


def test_honest_path_value_one():
    rng = np.random.default_rng(0)
    labels = [("P", "X"), ("P", "Z"), ("P", "X"), ("P", "Z")]
    graph = pr.path_graph(labels)
    meas = pr.honest_pauli_measurements(labels, 1)
    strat = pr.history_strategy(graph, meas, qcore.random_pure(2, rng))
    game = pr.build_propagation_game(graph)
    assert abs(games.value(game, strat) - 1.0) < 1e-12


def _random_path_strategy(rng, n_edges, d=2, with_set=False, density=False):
    labels = [("P", f"k{int(j)}") for j in rng.integers(0, 3, size=n_edges)]
    if with_set:
        members = ("m0", "m1")
        labels[n_edges // 2] = ("PQ", "m1", members)
    graph = pr.path_graph(labels)
    meas = {}
    for lab in labels:
        qlab = pr.question_label(lab)
        if qlab in meas:
            continue
        n_out = 2 if qlab[0] == "P" else 4
        meas[qlab] = qcore.random_projective(d, n_out, rng)
    state = qcore.random_pure(graph.n_vertices * d, rng)
    if density:
        state = qcore.random_density(graph.n_vertices * d, rng, rank=2)
    strat = games.Strategy(
        state=state,
        player_dims=(d,),
        measurements={(0, k): v for k, v in meas.items()},
    )
    return graph, strat


def test_laplacian_identity_random():
    rng = np.random.default_rng(42)
    for trial in range(10):
        graph, strat = _random_path_strategy(
            rng,
            n_edges=int(rng.integers(2, 9)),
            with_set=trial % 3 == 0,
            density=trial % 4 == 3,
        )
        game = pr.build_propagation_game(graph)
        rej = 1.0 - games.value(game, strat)
        assert abs(rej - pr.laplacian_rejection(graph, strat)) < 1e-10


def test_sliced_matches_engine():
    rng = np.random.default_rng(5)
    for _ in range(10):
        graph, strat = _random_path_strategy(
            rng, n_edges=int(rng.integers(2, 7)), with_set=True
        )
        game = pr.build_propagation_game(graph)
        v_engine = games.value(game, strat)
        d = strat.player_dims[0]
        psi = strat.state.reshape(graph.n_vertices, d)
        meas = {lab: m for (_i, lab), m in strat.measurements.items()}
        v_slice = pr.prop_check_value(
            [e.label for e in graph.prop_edges],
            psi,
            lambda lab: pr.edge_reflection(lab, meas, d),
        )
        assert abs(v_engine - v_slice) < 1e-10


def test_sliced_controlled_dual_route():
    """Hand-built composite-referee game vs the sliced controlled formula."""
    rng = np.random.default_rng(9)
    s_dim, d_r = 3, 2
    pi0 = pr.pi_e_measurement(s_dim, 0, 1)
    pi1 = pr.pi_e_measurement(s_dim, 1, 2)
    proj0, proj1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    for _ in range(15):
        m_x = qcore.random_projective(d_r, 2, rng)
        m_z = qcore.random_projective(d_r, 2, rng)
        entries_ctrl = tuple(
            (
                (a,),
                np.kron(pi0.ops[2], np.eye(2))
                + np.kron(pi0.ops[0], proj0)
                + np.kron(pi0.ops[a], proj1),
            )
            for a in (0, 1)
        )
        entries_plain = tuple(
            ((a,), np.kron(pi1.ops[2] + pi1.ops[a], np.eye(2))) for a in (0, 1)
        )
        game = games.GameSpec(
            n_players=1,
            questions=(
                games.Question(
                    prob=0.5,
                    per_player=(("P", "cx"),),
                    predicate=games.OperatorTable(entries=entries_ctrl),
                ),
                games.Question(
                    prob=0.5,
                    per_player=(("P", "z"),),
                    predicate=games.OperatorTable(entries=entries_plain),
                ),
            ),
            answers={(0, ("P", "cx")): (0, 1), (0, ("P", "z")): (0, 1)},
            referee_dim=s_dim * 2,
        )
        state = qcore.random_pure(s_dim * 2 * d_r, rng)
        strat = games.Strategy(
            state=state,
            player_dims=(d_r,),
            measurements={(0, ("P", "cx")): m_x, (0, ("P", "z")): m_z},
        )
        v_engine = games.value(game, strat)

        psi = state.reshape(s_dim, 2 * d_r)
        r_x = qcore.derived_reflections(m_x, 0)
        r_z = qcore.derived_reflections(m_z, 0)
        refl = {
            ("ctrl", 1, "cx"): np.kron(proj0, np.eye(d_r)) + np.kron(proj1, r_x),
            ("P", "z"): np.kron(np.eye(2), r_z),
        }
        v_slice = pr.prop_check_value(
            [("ctrl", 1, "cx"), ("P", "z")], psi, refl.get
        )
        assert abs(v_engine - v_slice) < 1e-10


@pytest.mark.parametrize("n_edges", [2, 5, 8, 16, 64])
def test_lambda2_path_bound(n_edges):
    lap = pr.graph_laplacian(pr.path_graph([("P", "X")] * n_edges))
    lam2 = np.linalg.eigvalsh(lap)[1]
    assert lam2 >= 1 / (n_edges + 1) ** 2


def test_laplacian_dense_oracle():
    sysm = pr.build_nk_constraint_system(1, 1)
    graph = pr.constraint_graph(sysm)
    for include_cons in (False, True):
        lap = pr.graph_laplacian(graph, include_cons=include_cons)
        ref = np.zeros_like(lap)
        edges = graph.prop_edges + (graph.cons_edges if include_cons else ())
        for e in edges:
            vec = np.zeros(graph.n_vertices)
            vec[e.u], vec[e.v] = 1.0, -1.0
            ref += np.outer(vec, vec)
        np.testing.assert_allclose(lap, ref, atol=0)


def test_constraint_system_counts():
    sysm = pr.build_nk_constraint_system(2, 2)
    assert sysm.total_length == 140
    assert len(sysm.constraints) == 50
    by_family = {}
    for c in sysm.constraints:
        cnt, tot = by_family.get(c.family, (0, 0))
        by_family[c.family] = (cnt + 1, tot + len(c.word))
    assert by_family == {
        "commute": (8, 32),
        "anticommute": (2, 8),
        "conjugated": (4, 24),
        "letters": (8, 20),
        "in-set": (28, 56),
    }
    small = pr.build_nk_constraint_system(1, 1)
    assert small.total_length == 12
    assert len(small.constraints) == 5


@pytest.mark.parametrize("n,k", [(1, 1), (2, 2), (3, 2)])
def test_word_products_signed_identity(n, k):
    sysm = pr.build_nk_constraint_system(n, k)
    for c in sysm.constraints:
        prod = pr.word_product(c.word, n)
        assert prod.x_mask == 0 and prod.z_mask == 0
        assert prod.sign == (-1) ** c.tau


def test_constraint_graph_shape():
    sysm = pr.build_nk_constraint_system(1, 1)
    graph = pr.constraint_graph(sysm)
    assert graph.n_vertices == sysm.total_length + 1
    bounds = sysm.boundaries()
    assert [e.u for e in graph.cons_edges] == bounds[:-1]
    assert [e.v for e in graph.cons_edges] == bounds[1:]
    for e, c in zip(graph.cons_edges, sysm.constraints):
        assert e.label == ("id", c.tau)


def test_cons_prop_honest_value_one():
    sysm = pr.build_nk_constraint_system(1, 1)
    graph = pr.constraint_graph(sysm)
    labels = [e.label for e in graph.prop_edges]
    meas = pr.honest_pauli_measurements(labels, 1)
    strat = pr.history_strategy(graph, meas, np.array([1.0, 0j]))
    game = pr.build_cons_prop_game(graph)
    assert abs(games.value(game, strat) - 1.0) < 1e-12


def test_controlled_edge_rejected_by_dense_builder():
    graph = pr.path_graph([("ctrl", 1, "X")])
    with pytest.raises(ValueError):
        pr.build_propagation_game(graph)


def test_mc_sequence_counts():
    seqs11 = pr.enumerate_mc_sequences(1, 1)
    assert len(seqs11) == 5
    seqs22 = pr.enumerate_mc_sequences(2, 2)
    assert len(seqs22) == 105
    assert seqs22[0] == ()
    prim = [s for s in seqs22 if s and s[0][0] == "P"]
    derived = [s for s in seqs22 if s and s[0][0] == "PQ"]
    assert len(prim) == 20
    assert len(derived) == 84


def test_mc_layout_shape():
    lay = pr.build_mc_layout(1, 1, policy="full")
    sysm = lay.system
    assert lay.n_prime == 2 * 1 * (sysm.total_length + 1) == 26
    expected = sum(2 * (lay.n_prime + q) for (_l, _o, q) in lay.segments)
    assert lay.n_clock == expected == 268
    assert set(lay.cons_sets) == {(i, l) for i in (1, 2) for l in range(5)}
    bounds = sysm.boundaries()
    for (i, l_pos), edges in lay.cons_sets.items():
        assert len(edges) == len(sysm.constraints)
        for e, c in zip(edges, sysm.constraints):
            assert e.v - e.u == len(c.word)
            assert 0 <= e.u < e.v <= lay.n_clock
            assert e.label == ("id", c.tau)
    # each segment is a palindrome of labels
    for l_idx, offset, q in lay.segments:
        seg = lay.labels[offset : offset + 2 * (lay.n_prime + q)]
        assert seg == tuple(reversed(seg))


def test_mc_honest_full_small():
    lay = pr.build_mc_layout(1, 1, policy="full")
    psi = pr.honest_mc_slices(lay)
    norms = np.sum(np.abs(psi) ** 2, axis=1)
    np.testing.assert_allclose(norms, 1 / (lay.n_clock + 1), atol=1e-14)
    vals = pr.mc_check_values(lay, psi)
    for key in ("propagation", "initialization", "constraint"):
        assert abs(vals[key] - 1.0) < 1e-12
    rep = pr.mc_report(lay, psi)
    assert abs(rep["p0"] - 1 / (lay.n_clock + 1)) < 1e-15
    for row in rep["constraints"]:
        assert abs(row["expectation"] - (-1) ** row["tau"]) < 1e-12


def test_mc_honest_sampled_22():
    lay = pr.build_mc_layout(2, 2, policy="sampled", n_sequences=3, seed=11)
    assert lay.flags["question_policy"] == "sampled"
    assert "policy_deviation" in lay.flags
    assert lay.flags["selected_sequences"][0] == 0
    psi = pr.honest_mc_slices(lay)
    vals = pr.mc_check_values(lay, psi)
    for key in ("propagation", "initialization", "constraint"):
        assert abs(vals[key] - 1.0) < 1e-9
    rep = pr.mc_report(lay, psi)
    assert abs(rep["p0"] - 1 / (lay.n_clock + 1)) < 1e-9
    for row in rep["constraints"]:
        assert abs(row["expectation"] - (-1) ** row["tau"]) < 1e-9


def test_mc_perturbation_detected():
    lay = pr.build_mc_layout(1, 1, policy="full")
    psi = pr.honest_mc_slices(lay)
    theta = 0.2
    rot = np.array(
        [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]],
        dtype=complex,
    )
    bad_x = rot @ pauli.to_matrix(pauli.from_string("X")) @ rot.conj().T

    def refl_of(lab):
        if lab[0] == "P" and lab[1] == "X":
            return np.kron(np.eye(4), bad_x)
        return pr.mc_reflection(lab, 1)

    vals = pr.mc_check_values(lay, psi, refl_of=refl_of)
    assert vals["propagation"] < 1.0 - 1e-6
    rep = pr.mc_report(lay, psi, refl_of=refl_of)
    worst = min(
        (-1) ** r["tau"] * r["expectation"] for r in rep["constraints"]
    )
    assert worst < 1.0 - 1e-6


def test_mc_policy_guards():
    with pytest.raises(ValueError):
        pr.build_mc_layout(1, 1, policy="nope")
    with pytest.raises(ValueError):
        pr.build_mc_layout(1, 1, policy="sampled", n_sequences=99)
    full = pr.build_mc_layout(1, 1, policy="full")
    assert full.flags["selected_sequences"] == tuple(range(5))
    assert "policy_deviation" not in full.flags
