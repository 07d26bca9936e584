"""Clock-edge games: propagation graphs, constraint systems, history states.

A propagation graph is a labeled path through clock values 0..N, possibly
with extra "constraint" edges joining distant clock values.  The referee
holds the clock; for a uniformly random edge he measures the three-outcome
edge observable (|u>+|v>, |u>-|v>, rest) and accepts outcome 2 outright or
compares the +/- outcome against the player's answer for the edge label.

Edge labels (and the question they put to the player):

* ``("P", s)``            measure the XZ-form operator s; one answer bit
* ``("PQ", s, members)``  same operator, asked inside the commuting set
                          ``members`` -> question ``("Q", members)``, and
                          the referee reads the bit at s's position
* ``("ctrl", c, s)``      s controlled on referee-side X qubit c (1-based)
* ``("id", tau)``         no question; the edge asserts a fixed sign

Any strategy's rejection probability on the plain propagation game equals
(1/2|E|) tr[rho' L(G)] with rho' the history-conjugated state and L(G) the
graph Laplacian, which is what ties game value to spectral gaps.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

import numpy as np

from . import pauli, qcore
from .games import GameSpec, OperatorTable, Question, Strategy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    label: tuple


@dataclass(frozen=True)
class PropagationGraph:
    n_vertices: int
    prop_edges: tuple
    cons_edges: tuple = ()


def path_graph(labels) -> PropagationGraph:
    labels = tuple(labels)
    edges = tuple(Edge(t, t + 1, lab) for t, lab in enumerate(labels))
    return PropagationGraph(n_vertices=len(labels) + 1, prop_edges=edges)


def question_label(edge_label: tuple):
    """Player question for an edge label (None when nobody is asked)."""
    kind = edge_label[0]
    if kind in ("P", "ctrl"):
        return ("P", edge_label[-1])
    if kind == "PQ":
        return ("Q", edge_label[2])
    if kind == "id":
        return None
    raise ValueError(f"unknown edge label {edge_label!r}")


def pi_e_measurement(dim: int, u: int, v: int) -> qcore.Measurement:
    """Outcomes 0: |u>+|v>, 1: |u>-|v>, 2: the rest of the clock."""
    eu = np.zeros(dim, dtype=complex)
    ev = np.zeros(dim, dtype=complex)
    eu[u] = 1.0
    ev[v] = 1.0
    plus = (eu + ev) / np.sqrt(2)
    minus = (eu - ev) / np.sqrt(2)
    p0 = np.outer(plus, plus.conj())
    p1 = np.outer(minus, minus.conj())
    p2 = np.eye(dim) - p0 - p1
    return qcore.Measurement(ops=(p0, p1, p2), labels=(0, 1, 2))


def graph_laplacian(graph: PropagationGraph, include_cons: bool = False) -> np.ndarray:
    n = graph.n_vertices
    lap = np.zeros((n, n))
    edges = graph.prop_edges + (graph.cons_edges if include_cons else ())
    for e in edges:
        lap[e.u, e.u] += 1
        lap[e.v, e.v] += 1
        lap[e.u, e.v] -= 1
        lap[e.v, e.u] -= 1
    return lap


# ---------------------------------------------------------------------------
# GameSpec builders (dense referee; small graphs)
# ---------------------------------------------------------------------------


def _edge_questions(graph, edges, prob_each, ref_dim):
    questions = []
    for e in edges:
        pi = pi_e_measurement(ref_dim, e.u, e.v)
        qlab = question_label(e.label)
        if e.label[0] == "ctrl":
            raise ValueError(
                "controlled edges need a composite referee; use the sliced "
                "evaluator"
            )
        if qlab is None:
            tau = e.label[1]
            acc = pi.ops[2] + pi.ops[tau]
            entries = (((), acc),)
        elif qlab[0] == "P":
            entries = tuple(
                ((a,), pi.ops[2] + pi.ops[a]) for a in (0, 1)
            )
        else:
            members = qlab[1]
            j = members.index(e.label[1])
            entries = tuple(
                ((b,), pi.ops[2] + pi.ops[(b >> j) & 1])
                for b in range(1 << len(members))
            )
        questions.append(
            Question(
                prob=float(prob_each),
                per_player=(qlab,),
                predicate=OperatorTable(entries=entries),
            )
        )
    return questions


def _collect_answers(questions):
    answers = {}
    for q in questions:
        label = q.per_player[0]
        if label is None:
            continue
        if label[0] == "P":
            answers[(0, label)] = (0, 1)
        else:
            answers[(0, label)] = tuple(range(1 << len(label[1])))
    return answers


def build_propagation_game(graph: PropagationGraph) -> GameSpec:
    """Single-player game over the propagation edges only."""
    n_e = len(graph.prop_edges)
    questions = _edge_questions(
        graph, graph.prop_edges, Fraction(1, n_e), graph.n_vertices
    )
    return GameSpec(
        n_players=1,
        questions=tuple(questions),
        answers=_collect_answers(questions),
        referee_dim=graph.n_vertices,
        name="propagation",
    )


def build_cons_prop_game(graph: PropagationGraph) -> GameSpec:
    """Half propagation, half sign checks on the constraint edges."""
    if not graph.cons_edges:
        raise ValueError("graph has no constraint edges")
    questions = _edge_questions(
        graph,
        graph.prop_edges,
        Fraction(1, 2 * len(graph.prop_edges)),
        graph.n_vertices,
    )
    questions += _edge_questions(
        graph,
        graph.cons_edges,
        Fraction(1, 2 * len(graph.cons_edges)),
        graph.n_vertices,
    )
    return GameSpec(
        n_players=1,
        questions=tuple(questions),
        answers=_collect_answers(questions),
        referee_dim=graph.n_vertices,
        name="cons-prop",
    )


# ---------------------------------------------------------------------------
# history strategies and the Laplacian identity
# ---------------------------------------------------------------------------


def edge_reflection(label: tuple, measurements: dict, dim: int) -> np.ndarray:
    """Effective answer reflection a player's measurements assign to an edge."""
    kind = label[0]
    if kind == "id":
        return ((-1) ** label[1]) * np.eye(dim, dtype=complex)
    qlab = question_label(label)
    meas = measurements[qlab]
    if kind in ("P", "ctrl"):
        return qcore.derived_reflections(meas, 0)
    j = label[2].index(label[1])
    return qcore.derived_reflections(meas, j)


def history_unitary(graph: PropagationGraph, measurements: dict, dim: int):
    """Prefix products V_t = R_{t} ... R_1 along the path, as a list."""
    prefixes = [np.eye(dim, dtype=complex)]
    for e in sorted(graph.prop_edges, key=lambda e: e.u):
        r = edge_reflection(e.label, measurements, dim)
        prefixes.append(r @ prefixes[-1])
    return prefixes


def history_strategy(
    graph: PropagationGraph,
    measurements: dict,
    psi: np.ndarray,
    weights=None,
) -> Strategy:
    """History state sum_t w_t |t> (x) V_t psi with the given measurements."""
    dim = psi.shape[0]
    n = graph.n_vertices
    if weights is None:
        weights = np.full(n, 1.0 / np.sqrt(n))
    prefixes = history_unitary(graph, measurements, dim)
    state = np.zeros(n * dim, dtype=complex)
    for t in range(n):
        state[t * dim : (t + 1) * dim] = weights[t] * (prefixes[t] @ psi)
    state /= np.linalg.norm(state)
    meas = {(0, lab): m for lab, m in measurements.items()}
    return Strategy(state=state, player_dims=(dim,), measurements=meas)


def laplacian_rejection(graph: PropagationGraph, strat: Strategy) -> float:
    """(1/2|E|) tr[rho' (L (x) I)] for rho' the history-conjugated state."""
    dim = strat.player_dims[0]
    n = graph.n_vertices
    measurements = {lab: m for (_i, lab), m in strat.measurements.items()}
    prefixes = history_unitary(graph, measurements, dim)
    u_hat = np.zeros((n * dim, n * dim), dtype=complex)
    for t in range(n):
        u_hat[t * dim : (t + 1) * dim, t * dim : (t + 1) * dim] = prefixes[t]
    state = strat.state
    rho = np.outer(state, state.conj()) if state.ndim == 1 else state
    rho_p = u_hat.conj().T @ rho @ u_hat
    lap = np.kron(graph_laplacian(graph), np.eye(dim))
    val = np.trace(rho_p @ lap).real
    return float(val / (2 * len(graph.prop_edges)))


# ---------------------------------------------------------------------------
# sliced evaluation (clock-major pure states; any scale)
# ---------------------------------------------------------------------------


def prop_check_value(labels, psi: np.ndarray, refl_of) -> float:
    """Propagation value for a clock-major state psi[t] and reflection map.

    Each edge (t-1, t) rejects with probability
    (|psi_{t-1}|^2 + |psi_t|^2)/2 - Re <psi_{t-1}| R_eff |psi_t>,
    covering plain, in-set, and controlled labels alike.
    """
    labels = tuple(labels)
    reject = 0.0
    for t, lab in enumerate(labels, start=1):
        r = refl_of(lab)
        n_pair = (np.vdot(psi[t - 1], psi[t - 1]) + np.vdot(psi[t], psi[t])).real
        cross = np.vdot(psi[t - 1], r @ psi[t]).real
        reject += n_pair / 2 - cross
    return 1.0 - reject / len(labels)


def cons_check_value(cons_edges, psi: np.ndarray) -> float:
    """Sign checks across distant clock pairs, uniform over the given edges."""
    reject = 0.0
    for e in cons_edges:
        sign = (-1) ** e.label[1]
        n_pair = (np.vdot(psi[e.u], psi[e.u]) + np.vdot(psi[e.v], psi[e.v])).real
        reject += n_pair / 2 - sign * np.vdot(psi[e.u], psi[e.v]).real
    return 1.0 - reject / len(cons_edges)


# ---------------------------------------------------------------------------
# (n, k) constraint systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    word: tuple  # of ("P", s) / ("PQ", s, members) labels
    tau: int
    family: str = ""


@dataclass(frozen=True)
class ConstraintSystem:
    n: int
    k: int
    constraints: tuple

    @property
    def total_length(self) -> int:
        return sum(len(c.word) for c in self.constraints)

    def boundaries(self) -> list[int]:
        out = [0]
        for c in self.constraints:
            out.append(out[-1] + len(c.word))
        return out


def _p(n, letter, u):
    return ("P", "I" * u + letter + "I" * (n - u - 1))


def build_nk_constraint_system(n: int, k: int, strict_power: bool = False):
    """The five relation families pinning weight-k XZ measurements.

    1. letters on distinct qubits commute
    2. X and Z on one qubit anticommute
    3. the anticommutation survives conjugation by another qubit's letter
    4. a weight-w operator equals the product of its letters
    5. a set member equals its in-set version
    """
    cons: list[Constraint] = []
    for u, v in itertools.permutations(range(n), 2):
        for a, b in itertools.product("XZ", repeat=2):
            cons.append(
                Constraint(
                    word=(_p(n, a, u), _p(n, b, v), _p(n, a, u), _p(n, b, v)),
                    tau=0,
                    family="commute",
                )
            )
    for u in range(n):
        cons.append(
            Constraint(
                word=(_p(n, "X", u), _p(n, "Z", u)) * 2,
                tau=1,
                family="anticommute",
            )
        )
    for u, v in itertools.permutations(range(n), 2):
        for b in "XZ":
            inner = (_p(n, "X", u), _p(n, "Z", u)) * 2
            cons.append(
                Constraint(
                    word=(_p(n, b, v),) + inner + (_p(n, b, v),),
                    tau=1,
                    family="conjugated",
                )
            )
    for p_op in pauli.enumerate_pauli_nk(n, k):
        word = [("P", p_op.to_string())]
        for v in p_op.support:
            word.append(_p(n, p_op.letter(v), v))
        cons.append(Constraint(word=tuple(word), tau=0, family="letters"))
    for q_set in pauli.enumerate_power_nk(n, k, strict=strict_power):
        members = tuple(p.to_string() for p in q_set)
        for s in members:
            cons.append(
                Constraint(
                    word=(("PQ", s, members), ("P", s)),
                    tau=0,
                    family="in-set",
                )
            )
    return ConstraintSystem(n=n, k=k, constraints=tuple(cons))


def word_product(word, n: int) -> pauli.PauliOp:
    """Honest operator product of a constraint word (set membership erased)."""
    out = pauli.identity(n)
    for sym in word:
        out = out * pauli.from_string(sym[1])
    return out


def constraint_graph(system: ConstraintSystem) -> PropagationGraph:
    labels = []
    for c in system.constraints:
        labels.extend(c.word)
    graph = path_graph(labels)
    bounds = system.boundaries()
    cons = tuple(
        Edge(bounds[j], bounds[j + 1], ("id", c.tau))
        for j, c in enumerate(system.constraints)
    )
    return PropagationGraph(
        n_vertices=graph.n_vertices,
        prop_edges=graph.prop_edges,
        cons_edges=cons,
    )


def honest_pauli_measurements(labels, n: int) -> dict:
    """Exact-Pauli player measurements for every question among ``labels``."""
    meas = {}
    for lab in labels:
        qlab = question_label(lab) if lab[0] in ("P", "PQ", "ctrl", "id") else lab
        if qlab is None or qlab in meas:
            continue
        if qlab[0] == "P":
            r = pauli.to_matrix(pauli.from_string(qlab[1]))
            meas[qlab] = qcore.projective_from_reflection(r)
        else:
            meas[qlab] = qcore.joint_reflection_measurement(
                pauli.to_matrix(pauli.from_string(s)) for s in qlab[1]
            )
    return meas


# ---------------------------------------------------------------------------
# the measurement-compression layout
# ---------------------------------------------------------------------------


def enumerate_mc_sequences(n: int, k: int, strict_power: bool = False):
    """Opening sequences: the empty one, primitive words, in-set words."""
    letters = [_p(n, c, u) for u in range(n) for c in "XZ"]
    seqs = [()]
    for length in range(1, k + 1):
        seqs.extend(itertools.product(letters, repeat=length))
    for q_set in pauli.enumerate_power_nk(n, k, strict=strict_power):
        members = tuple(p.to_string() for p in q_set)
        symbols = [("PQ", s, members) for s in members]
        for length in range(1, k + 1):
            seqs.extend(itertools.product(symbols, repeat=length))
    return seqs


@dataclass(frozen=True)
class McLayout:
    n: int
    k: int
    system: ConstraintSystem
    labels: tuple  # full clock path
    cons_sets: dict  # (i, l_pos) -> tuple of Edge, i in 1..2n
    segments: tuple  # (seq_index, offset, q_l)
    n_prime: int
    flags: dict = field(default_factory=dict)

    @property
    def n_clock(self) -> int:
        return len(self.labels)


def build_mc_layout(
    n: int,
    k: int,
    policy: str = "sampled",
    n_sequences: int = 3,
    seed: int = 0,
) -> McLayout:
    """Concatenate opening-sequence conjugates of the constraint schedule.

    The full schedule visits every opening sequence; the sampled policy keeps
    the empty sequence plus a seeded random subset, and flags the deviation.
    """
    system = build_nk_constraint_system(n, k)
    seqs = enumerate_mc_sequences(n, k)
    n_single = system.total_length
    bounds = system.boundaries()

    w_labels: list[tuple] = []
    for i in range(1, n + 1):
        for c, letter in ((2 * i - 1, "X"), (2 * i, "Z")):
            for constraint in system.constraints:
                w_labels.extend(constraint.word)
            w_labels.append(("ctrl", c, _p(n, letter, i - 1)[1]))
    n_prime = len(w_labels)
    assert n_prime == 2 * n * (n_single + 1)

    if policy == "full":
        selected = list(range(len(seqs)))
    elif policy == "sampled":
        if n_sequences > len(seqs):
            raise ValueError("asking for more sequences than exist")
        rng = np.random.default_rng(seed)
        rest = rng.choice(
            np.arange(1, len(seqs)), size=n_sequences - 1, replace=False
        )
        selected = [0] + sorted(int(x) for x in rest)
    else:
        raise ValueError(f"unknown policy {policy!r}")

    labels: list[tuple] = []
    segments = []
    cons_sets = {}
    for l_pos, l_idx in enumerate(selected):
        seq = seqs[l_idx]
        q_l = len(seq)
        offset = len(labels)
        segments.append((l_idx, offset, q_l))
        labels.extend(seq)
        labels.extend(w_labels)
        labels.extend(reversed(w_labels))
        labels.extend(reversed(seq))
        base = offset + q_l
        for i in range(1, 2 * n + 1):
            blk = base + (i - 1) * (n_single + 1)
            edges = tuple(
                Edge(
                    blk + bounds[j],
                    blk + bounds[j + 1],
                    ("id", c.tau),
                )
                for j, c in enumerate(system.constraints)
            )
            cons_sets[(i, l_pos)] = edges

    flags = {
        "question_policy": policy,
        "n_sequences_full": len(seqs),
        "selected_sequences": tuple(selected),
    }
    if policy == "sampled":
        flags["policy_deviation"] = (
            "constraint sequences subsampled; value certificates cover the "
            "selected subset only"
        )
    log.info(
        "mc layout (%d, %d): %d sequences of %d, clock length %d",
        n,
        k,
        len(selected),
        len(seqs),
        len(labels),
    )
    return McLayout(
        n=n,
        k=k,
        system=system,
        labels=tuple(labels),
        cons_sets=cons_sets,
        segments=tuple(segments),
        n_prime=n_prime,
        flags=flags,
    )


def mc_reflection(label: tuple, n: int) -> np.ndarray:
    """Effective reflection on X (x) R for an honest clock-edge label."""
    d_x = 1 << (2 * n)
    d_r = 1 << n
    if label[0] == "id":
        return ((-1) ** label[1]) * np.eye(d_x * d_r, dtype=complex)
    s = label[2] if label[0] == "ctrl" else label[1]
    p_mat = pauli.to_matrix(pauli.from_string(s))
    if label[0] in ("P", "PQ"):
        return np.kron(np.eye(d_x), p_mat)
    c = label[1]  # 1-based X qubit
    proj0 = np.diag([1.0, 0.0])
    proj1 = np.diag([0.0, 1.0])
    left = np.eye(1 << (c - 1))
    right = np.eye(1 << (2 * n - c))
    p0 = np.kron(np.kron(left, proj0), right)
    p1 = np.kron(np.kron(left, proj1), right)
    return np.kron(p0, np.eye(d_r)) + np.kron(p1, p_mat)


def honest_mc_slices(layout: McLayout, psi_r: np.ndarray | None = None):
    """Clock-major history state (N+1, 2^{3n}) for the honest reflections."""
    n = layout.n
    d_r = 1 << n
    if psi_r is None:
        psi_r = np.zeros(d_r, dtype=complex)
        psi_r[0] = 1.0
    x_plus = np.full(1 << (2 * n), 1.0 / np.sqrt(1 << (2 * n)), dtype=complex)
    work = np.kron(x_plus, psi_r)
    n_clock = layout.n_clock + 1
    psi = np.zeros((n_clock, work.shape[0]), dtype=complex)
    psi[0] = work
    cache: dict[tuple, np.ndarray] = {}
    for t, lab in enumerate(layout.labels, start=1):
        if lab not in cache:
            cache[lab] = mc_reflection(lab, n)
        psi[t] = cache[lab] @ psi[t - 1]
    return psi / np.sqrt(n_clock)


def mc_check_values(layout: McLayout, psi: np.ndarray, refl_of=None) -> dict:
    """Values of the three checks plus their uniform mixture."""
    n = layout.n
    if refl_of is None:
        cache = {}

        def refl_of(lab):
            if lab not in cache:
                cache[lab] = mc_reflection(lab, n)
            return cache[lab]

    v_prop = prop_check_value(layout.labels, psi, refl_of)

    p0 = np.vdot(psi[0], psi[0]).real
    d_r = 1 << n
    acc0 = 0.0
    for i in range(1, 2 * n + 1):
        x_i = np.kron(
            pauli.to_matrix(pauli.single(2 * n, "X", i - 1)), np.eye(d_r)
        )
        acc0 += (np.vdot(psi[0], (np.eye(x_i.shape[0]) + x_i) @ psi[0]).real / 2) / (
            2 * n
        )
    v_init = (1.0 - p0) + acc0

    v_cons = 0.0
    for edges in layout.cons_sets.values():
        v_cons += cons_check_value(edges, psi)
    v_cons /= len(layout.cons_sets)

    return {
        "propagation": v_prop,
        "initialization": v_init,
        "constraint": v_cons,
        "total": (v_prop + v_init + v_cons) / 3,
    }


def mc_report(layout: McLayout, psi: np.ndarray, refl_of=None) -> dict:
    """Slice-zero weight and the per-constraint sign expectations."""
    n = layout.n
    if refl_of is None:
        cache = {}

        def refl_of(lab):
            if lab not in cache:
                cache[lab] = mc_reflection(lab, n)
            return cache[lab]

    p0 = np.vdot(psi[0], psi[0]).real
    psi0 = psi[0] / np.sqrt(p0) if p0 > 0 else psi[0]
    rows = []
    for c in layout.system.constraints:
        vec = psi0
        for sym in c.word:
            vec = refl_of(sym) @ vec
        rows.append(
            {
                "tau": c.tau,
                "family": c.family,
                "expectation": float(np.vdot(psi0, vec).real),
            }
        )
    return {"p0": float(p0), "constraints": rows, "flags": dict(layout.flags)}
