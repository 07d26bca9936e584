"""Compiling an interactive verification protocol into nonlocal games.

The chain has three stages.  ``build_honest_game`` turns a two-circuit
verifier (``circuits.VerifierSpec``) into an r-player game whose referee
holds a unary clock register C and the work register V, while player i
holds a round bit B_i, the message qubits M_i and a private register.
Honest players share the history state of the protocol and the game value
ties exactly to the protocol's acceptance probability.

``build_extended_game`` replaces the referee's trust in the players'
measurements by a constraint-propagation schedule: a long shared clock S
(embedded as a legal qudit), ancilla qubits X, and per-player blocks that
walk through every defining relation of the weight-k Pauli algebra on the
player's B and M qubits.  Evaluation streams over clock slices, so the
full state is never materialized.

``build_final_game`` removes the referee's quantum registers altogether:
every referee qubit becomes a logical qubit of the eight-qubit code shared
among eight extra players, referee measurements are delegated as products
of logical letters, and the extra players are kept honest by the
measurement game of :mod:`.rigidity`.  Honest evaluation goes through the
logical reduction (letter columns are matched against the stabilizer
group), never through the dense encoded space.

``build_hamiltonian`` exposes the certificate Hamiltonians whose ground
spaces are the honest history states, and ``soundness_compose`` folds a
rigidity exponent into an end-to-end soundness bound.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import circuits, pauli, qcore
from .circuits import ProtocolStrategy, VerifierSpec
from .config import DENSE_QUBIT_LIMIT, ResourceGuardError
from .games import GameSpec, OperatorTable, Question, Strategy
from .games import value as game_value
from .propagation import Edge, build_nk_constraint_system, enumerate_mc_sequences

log = logging.getLogger(__name__)

_X2 = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_Z2 = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
_LETTER = {"X": _X2, "Z": _Z2}


def _zproj(b: int) -> np.ndarray:
    m = np.zeros((2, 2), dtype=complex)
    m[b, b] = 1.0
    return m


# ---------------------------------------------------------------------------
# the honest game
# ---------------------------------------------------------------------------


def _ref_layout(spec: VerifierSpec) -> qcore.RegisterLayout:
    """Referee register, one axis per clock and work qubit."""
    names = [f"c{t}" for t in range(1, spec.turns + 1)]
    names += [f"v{j}" for j in range(1, spec.q_v + 1)]
    return qcore.RegisterLayout(tuple(names), (2,) * len(names))


def _player_layout(spec: VerifierSpec, p_dim: int) -> qcore.RegisterLayout:
    names = ["b"] + [f"m{j}" for j in range(1, spec.q_m + 1)]
    dims = [2] * len(names)
    if p_dim > 1:
        names.append("priv")
        dims.append(p_dim)
    return qcore.RegisterLayout(tuple(names), tuple(dims))


def _reject_hadamard(x: int, a: tuple) -> bool:
    return (x ^ a[0]) == 1 and (x ^ a[1]) == 1


def _reject_toffoli(x: int, a: tuple) -> bool:
    if a[0] and a[1]:
        return (x ^ a[2]) == 1
    return x == 1


def _reject_cnot(x: int, a: tuple) -> bool:
    if a[0]:
        return (x ^ a[1]) == 1
    return x == 1


def _gate_check_branches(gate: circuits.Gate):
    """The two coin branches of one gate check.

    Each branch is (coin weight, observables, reject rule); an observable
    is a product of single-qubit letters, written ((axis, qubit), ...), and
    the rule reads the clock X outcome plus the observable bits in order.
    A ``None`` rule means the branch accepts outright.
    """
    half = Fraction(1, 2)
    if gate.kind == "H":
        a, b = gate.qubits
        return [
            (half, ((("X", a), ("X", b)), (("Z", a), ("Z", b))), _reject_hadamard),
            (half, ((("X", a), ("Z", b)), (("Z", a), ("X", b))), _reject_hadamard),
        ]
    c1, c2, t = gate.qubits
    if c1 == c2:
        branch = (half, ((("Z", c1),), (("X", t),)), _reject_cnot)
    else:
        branch = (half, ((("Z", c1),), (("Z", c2),), (("X", t),)), _reject_toffoli)
    return [branch, (half, (), None)]


def gate_check_rejection(kind: str) -> np.ndarray:
    """Rejection operator of one gate check on (clock qubit, gate qubits).

    Built purely from the branch tables, for checking against the closed
    forms (I - X (x) G)/4 with G the gate unitary.
    """
    gates = {
        "H": circuits.Gate("H", (0, 1)),
        "TOF": circuits.Gate("TOF", (0, 1, 2)),
        "CNOT": circuits.Gate("TOF", (0, 0, 1)),
    }
    gate = gates[kind]
    qubits = list(dict.fromkeys(gate.qubits))
    lay = qcore.RegisterLayout(
        ("c",) + tuple(f"q{u}" for u in qubits), (2,) * (1 + len(qubits))
    )
    dim = lay.dim
    reject = np.zeros((dim, dim), dtype=complex)
    for coin, observables, rule in _gate_check_branches(gate):
        if rule is None:
            continue
        refls = []
        for obs in observables:
            r = np.eye(dim, dtype=complex)
            for axis, u in obs:
                r = r @ lay.embed(_LETTER[axis], f"q{u}")
            refls.append(r)
        xc = lay.embed(_X2, "c")
        for x in (0, 1):
            px = (np.eye(dim) + ((-1) ** x) * xc) / 2
            for bits in itertools.product((0, 1), repeat=len(refls)):
                if not rule(x, bits):
                    continue
                term = px.copy()
                for r, b in zip(refls, bits):
                    term = term @ (np.eye(dim) + ((-1) ** b) * r) / 2
                reject += float(coin) * term
    return reject


def _owner(spec: VerifierSpec, obs) -> tuple:
    """("V", 0) or ("M", i); gate grammar keeps observables single-group."""
    groups = {spec.qubit_group(u) for _, u in obs}
    if len(groups) != 1:
        raise ValueError(f"observable {obs} spans register groups")
    return groups.pop()


def build_honest_game(spec: VerifierSpec) -> GameSpec:
    """The five-check game tying the protocol to an r-player strategy.

    Checks (each with probability 1/5): clock consistency, verifier gate
    propagation, prover propagation, work-register initialization, and the
    output read-off.  The referee register is the clock plus work qubits;
    measurements on message qubits are delegated to the owning player and
    recombined through the acceptance tables.
    """
    spec = circuits.validate_verifier(spec)
    T, L, r = spec.turns, spec.gates_per_circuit, spec.r
    lay = _ref_layout(spec)
    ref_dim = lay.dim
    eye = np.eye(ref_dim, dtype=complex)
    fifth = Fraction(1, 5)
    none_pp = (None,) * r

    def zc(t, b):
        return lay.embed(_zproj(b), f"c{t}")

    def zv(j, b):
        return lay.embed(_zproj(b), f"v{j}")

    def xc(t, b):
        return (eye + ((-1) ** b) * lay.embed(_X2, f"c{t}")) / 2

    def trigger(t):
        trig = eye
        if t > 1:
            trig = trig @ zc(t - 1, 1)
        if t < T:
            trig = trig @ zc(t + 1, 0)
        return trig

    questions: list[Question] = []
    slices: dict[str, tuple[int, int]] = {}
    answers: dict = {}

    # --- Clock Check: unary pattern, then round bits against C_{L+1} ---
    for t in range(1, T):
        acc = eye - zc(t, 0) @ zc(t + 1, 1)
        prob = fifth * Fraction(1, 2) * Fraction(1, T - 1)
        questions.append(
            Question(float(prob), none_pp, OperatorTable((((), acc),)))
        )
    for i in range(r):
        per_player = tuple(("B",) if j == i else None for j in range(r))
        entries = tuple(((b,), zc(L + 1, b)) for b in (0, 1))
        answers[(i, ("B",))] = (0, 1)
        prob = fifth * Fraction(1, 2) * Fraction(1, r)
        questions.append(Question(float(prob), per_player, OperatorTable(entries)))
    slices["clock"] = (0, len(questions))

    # --- Verifier Propagation: gate checks behind the (1, 0) trigger ---
    for t in [t for t in range(1, T + 1) if t != L + 1]:
        gate = spec.v1[t - 1] if t <= L else spec.v2[t - L - 2]
        trig = trigger(t)
        for coin, observables, rule in _gate_check_branches(gate):
            prob = fifth * Fraction(1, 2 * L) * coin
            if rule is None:
                questions.append(
                    Question(float(prob), none_pp, OperatorTable((((), eye),)))
                )
                continue
            ref_obs: list[tuple[int, np.ndarray]] = []
            player_obs: dict[int, list[tuple[int, tuple]]] = {}
            for pos, obs in enumerate(observables):
                grp, who = _owner(spec, obs)
                if grp == "V":
                    refl = eye
                    for axis, u in obs:
                        refl = refl @ lay.embed(_LETTER[axis], f"v{u + 1}")
                    ref_obs.append((pos, refl))
                else:
                    local = tuple(
                        (axis, u - spec.q_v - who * spec.q_m) for axis, u in obs
                    )
                    player_obs.setdefault(who, []).append((pos, local))
            labels = {}
            for who, items in player_obs.items():
                labels[who] = ("G", tuple(local for _, local in items))
                answers.setdefault(
                    (who, labels[who]), tuple(range(1 << len(items)))
                )
            per_player = tuple(labels.get(i) for i in range(r))
            queried = [i for i in range(r) if i in labels]
            entries = []
            for combo in itertools.product(
                *[range(1 << len(player_obs[i])) for i in queried]
            ):
                bits = {}
                for i, a in zip(queried, combo):
                    for slot, (pos, _local) in enumerate(player_obs[i]):
                        bits[pos] = (a >> slot) & 1
                rej = np.zeros((ref_dim, ref_dim), dtype=complex)
                for x in (0, 1):
                    for ref_bits in itertools.product(
                        (0, 1), repeat=len(ref_obs)
                    ):
                        full = dict(bits)
                        term = xc(t, x)
                        for (pos, refl), b in zip(ref_obs, ref_bits):
                            full[pos] = b
                            term = term @ (eye + ((-1) ** b) * refl) / 2
                        seq = tuple(full[p] for p in range(len(observables)))
                        if rule(x, seq):
                            rej += term
                entries.append((combo, eye - trig @ rej))
            questions.append(
                Question(float(prob), per_player, OperatorTable(tuple(entries)))
            )
    slices["propagation"] = (slices["clock"][1], len(questions))

    # --- Prover Propagation: XOR of the move reflections against C X ---
    per_player = (("XP",),) * r
    for i in range(r):
        answers[(i, ("XP",))] = (0, 1)
    trig = zc(L, 1) @ zc(L + 2, 0)
    entries = []
    for combo in itertools.product((0, 1), repeat=r):
        par = 0
        for a in combo:
            par ^= a
        entries.append((combo, eye - trig @ xc(L + 1, 1 ^ par)))
    questions.append(Question(float(fifth), per_player, OperatorTable(tuple(entries))))
    slices["prover"] = (slices["propagation"][1], len(questions))

    # --- Initialization: work qubits read 0 when the clock reads 0 ---
    probe = sum(zv(j, 1) for j in range(1, spec.q_v + 1)) / spec.q_v
    acc = eye - zc(1, 0) @ probe
    questions.append(Question(float(fifth), none_pp, OperatorTable((((), acc),))))
    slices["initialization"] = (slices["prover"][1], len(questions))

    # --- Output: the first work qubit must read 1 at the final tick ---
    acc = eye - zc(T, 1) @ zv(1, 0)
    questions.append(Question(float(fifth), none_pp, OperatorTable((((), acc),))))
    slices["output"] = (slices["initialization"][1], len(questions))

    game = GameSpec(
        n_players=r,
        questions=tuple(questions),
        answers=answers,
        referee_dim=ref_dim,
        name="honest-game",
        flags={"check_slices": slices, "turns": T, "gates": L},
    )
    game.validate(atol=1e-12)
    log.info("build_honest_game: %d questions, referee dim %d", len(questions), ref_dim)
    return game


def _clock_basis(T: int, t: int) -> np.ndarray:
    vec = np.zeros(1 << T, dtype=complex)
    idx = 0
    for s in range(t):
        idx |= 1 << (T - 1 - s)
    vec[idx] = 1.0
    return vec


def honest_history_state(
    spec: VerifierSpec, protocol: ProtocolStrategy | None = None, order: str = "game"
) -> np.ndarray:
    """Uniform superposition of protocol snapshots, one per clock tick.

    ``order="game"`` groups axes as (clock+work, then per player B, M,
    private), matching the game layout; ``order="qubit"`` keeps the raw
    (C, B, V, M, private) order used by the certificate Hamiltonians.
    """
    protocol = protocol or circuits.honest_strategy(spec, p_dims=(1,) * spec.r)
    T, L, r = spec.turns, spec.gates_per_circuit, spec.r
    p_dims = protocol.p_dims
    names = ["V"] + [f"M{i}" for i in range(r)] + [f"P{i}" for i in range(r)]
    dims = [1 << spec.q_v] + [1 << spec.q_m] * r + list(p_dims)
    vmp = qcore.RegisterLayout(tuple(names), tuple(dims))
    circuit_regs = ["V"] + [f"M{i}" for i in range(r)]
    v0 = np.zeros(1 << spec.q_v, dtype=complex)
    v0[0] = 1.0
    work = np.kron(v0, protocol.psi)
    snaps = [work]
    for t in range(1, T + 1):
        if t == L + 1:
            for i, w in enumerate(protocol.wi):
                work = vmp.apply(work, w, (f"M{i}", f"P{i}"))
        else:
            gate = spec.v1[t - 1] if t <= L else spec.v2[t - L - 2]
            u = circuits.gate_matrix(gate, spec.n_qubits)
            work = vmp.apply(work, u, circuit_regs)
        snaps.append(work)

    b0 = np.array([1.0, 0.0], dtype=complex)
    b1 = np.array([0.0, 1.0], dtype=complex)
    total = np.zeros((1 << T) * (1 << r) * vmp.dim, dtype=complex)
    for t, snap in enumerate(snaps):
        bvec = np.array([1.0 + 0j])
        for _ in range(r):
            bvec = np.kron(bvec, b1 if t > L else b0)
        total += np.kron(_clock_basis(T, t), np.kron(bvec, snap))
    total /= np.sqrt(T + 1)
    if order == "qubit":
        return total
    if order != "game":
        raise ValueError(f"unknown order {order!r}")
    # (C, B_1..B_r, V, M_1..M_r, P_1..P_r) -> (C, V | B_i, M_i, P_i)_i
    shape = [1 << T] + [2] * r + [1 << spec.q_v] + [1 << spec.q_m] * r + list(p_dims)
    perm = [0, 1 + r]
    for i in range(r):
        perm.extend([1 + i, 2 + r + i, 2 + 2 * r + i])
    return np.transpose(total.reshape(shape), perm).reshape(-1)


def _move_reflection(spec: VerifierSpec, w: np.ndarray, p_dim: int) -> np.ndarray:
    """Conjugate the round-bit flip by the controlled prover move."""
    d_rest = (1 << spec.q_m) * p_dim
    lam = np.zeros((2 * d_rest, 2 * d_rest), dtype=complex)
    lam[:d_rest, :d_rest] = np.eye(d_rest)
    lam[d_rest:, d_rest:] = w
    x_b = np.kron(_X2, np.eye(d_rest))
    return lam @ x_b @ lam.conj().T


def honest_history_strategy(
    spec: VerifierSpec,
    protocol: ProtocolStrategy | None = None,
    game: GameSpec | None = None,
) -> Strategy:
    """History state plus letter-faithful measurements for every label."""
    protocol = protocol or circuits.honest_strategy(spec, p_dims=(1,) * spec.r)
    game = game or build_honest_game(spec)
    state = honest_history_state(spec, protocol, order="game")
    player_dims = tuple(
        (1 << (1 + spec.q_m)) * protocol.p_dims[i] for i in range(spec.r)
    )
    meas = {}
    for (i, label) in game.answers:
        play = _player_layout(spec, protocol.p_dims[i])
        if label == ("B",):
            m = qcore.projective_from_reflection(play.embed(_Z2, "b"))
        elif label == ("XP",):
            r = _move_reflection(spec, protocol.wi[i], protocol.p_dims[i])
            m = qcore.projective_from_reflection(r)
        else:
            refls = []
            for local in label[1]:
                r = np.eye(play.dim, dtype=complex)
                for axis, j in local:
                    r = r @ play.embed(_LETTER[axis], f"m{j + 1}")
                refls.append(r)
            m = qcore.joint_reflection_measurement(refls)
        meas[(i, label)] = m
    return Strategy(state=state, player_dims=player_dims, measurements=meas)


# ---------------------------------------------------------------------------
# certificate Hamiltonians
# ---------------------------------------------------------------------------


def _full_layout(spec: VerifierSpec, p_dims) -> qcore.RegisterLayout:
    names = [f"c{t}" for t in range(1, spec.turns + 1)]
    names += [f"b{i}" for i in range(spec.r)]
    names += [f"v{j}" for j in range(1, spec.q_v + 1)]
    names += [
        f"m{i}_{j}" for i in range(spec.r) for j in range(1, spec.q_m + 1)
    ]
    dims = [2] * len(names)
    for i, d in enumerate(p_dims):
        if d > 1:
            names.append(f"priv{i}")
            dims.append(d)
    return qcore.RegisterLayout(tuple(names), tuple(dims))


def build_hamiltonian(
    spec: VerifierSpec, kind: str, protocol: ProtocolStrategy | None = None
) -> tuple[np.ndarray, dict]:
    """One certificate Hamiltonian on the (C, B, V, M) qubit space.

    kind "clock" penalizes illegal unary patterns and round-bit mismatch,
    "propv" the gate propagation steps, "propp" the prover move (needs the
    protocol's move unitaries), and "in" a dirty work register at tick 0.
    Returns the dense operator and a spectral report; the honest history
    state is a ground state of each.
    """
    spec = circuits.validate_verifier(spec)
    protocol = protocol or circuits.honest_strategy(spec, p_dims=(1,) * spec.r)
    T, L, r = spec.turns, spec.gates_per_circuit, spec.r
    lay = _full_layout(spec, protocol.p_dims)
    n_qubits = int(np.log2(lay.dim)) if lay.dim & (lay.dim - 1) == 0 else None
    if lay.dim > (1 << DENSE_QUBIT_LIMIT):
        raise ResourceGuardError(
            f"certificate Hamiltonian at dimension {lay.dim} exceeds the guard"
        )
    eye = np.eye(lay.dim, dtype=complex)
    ham = np.zeros((lay.dim, lay.dim), dtype=complex)
    n_terms = 0

    def zc(t, b):
        return lay.embed(_zproj(b), f"c{t}")

    if kind == "clock":
        for t in range(1, T):
            ham += zc(t, 0) @ zc(t + 1, 1) / (2 * (T - 1))
            n_terms += 1
        for i in range(r):
            for a in (0, 1):
                ham += (
                    zc(L + 1, a) @ lay.embed(_zproj(1 - a), f"b{i}") / (2 * r)
                )
                n_terms += 1
    elif kind == "in":
        for j in range(1, spec.q_v + 1):
            ham += zc(1, 0) @ lay.embed(_zproj(1), f"v{j}") / spec.q_v
            n_terms += 1
    elif kind == "propv":
        vm_names = [f"v{j}" for j in range(1, spec.q_v + 1)] + [
            f"m{i}_{j}" for i in range(r) for j in range(1, spec.q_m + 1)
        ]
        for t in [t for t in range(1, T + 1) if t != L + 1]:
            gate = spec.v1[t - 1] if t <= L else spec.v2[t - L - 2]
            trig = eye
            if t > 1:
                trig = trig @ zc(t - 1, 1)
            if t < T:
                trig = trig @ zc(t + 1, 0)
            u = lay.embed(circuits.gate_matrix(gate, spec.n_qubits), vm_names)
            hop = lay.embed(_X2, f"c{t}") @ u
            ham += trig @ (eye - hop) / (4 * (T - 1))
            n_terms += 1
    elif kind == "propp":
        trig = zc(L, 1) @ zc(L + 2, 0)
        hop = lay.embed(_X2, f"c{L + 1}")
        for i in range(r):
            regs = [f"b{i}"] + [f"m{i}_{j}" for j in range(1, spec.q_m + 1)]
            if protocol.p_dims[i] > 1:
                regs.append(f"priv{i}")
            refl = _move_reflection(spec, protocol.wi[i], protocol.p_dims[i])
            hop = hop @ lay.embed(refl, regs)
        ham += trig @ (eye - hop) / 2
        n_terms = 1
    else:
        raise ValueError(f"unknown Hamiltonian kind {kind!r}")

    vals = np.linalg.eigvalsh(ham)
    ground = float(vals[0])
    degeneracy = int(np.sum(vals < ground + 1e-9))
    gap = float(vals[degeneracy]) - ground if degeneracy < len(vals) else 0.0
    report = {
        "kind": kind,
        "dim": lay.dim,
        "n_terms": n_terms,
        "ground_energy": ground,
        "ground_degeneracy": degeneracy,
        "spectral_gap": gap,
    }
    if kind == "propv":
        iso = _legal_isometry(spec, lay, protocol.p_dims)
        sub = iso.conj().T @ ham @ iso
        sub_vals = np.linalg.eigvalsh(sub)
        sub_deg = int(np.sum(sub_vals < sub_vals[0] + 1e-9))
        report["legal_dim"] = iso.shape[1]
        report["legal_ground_degeneracy"] = sub_deg
        report["legal_gap"] = float(sub_vals[sub_deg] - sub_vals[0])
    log.info("build_hamiltonian(%s): %s", kind, report)
    return ham, report


def _legal_isometry(spec, lay, p_dims) -> np.ndarray:
    """Isometry onto legal clock/round patterns with free work content."""
    T, L, r = spec.turns, spec.gates_per_circuit, spec.r
    rest = lay.dim // ((1 << T) * (1 << r))
    cols = []
    for t in range(T + 1):
        cvec = _clock_basis(T, t)
        bvec = np.array([1.0 + 0j])
        bbit = np.array([0.0, 1.0] if t > L else [1.0, 0.0], dtype=complex)
        for _ in range(r):
            bvec = np.kron(bvec, bbit)
        head = np.kron(cvec, bvec)
        for m in range(rest):
            tail = np.zeros(rest, dtype=complex)
            tail[m] = 1.0
            cols.append(np.kron(head, tail))
    return np.array(cols).T


# ---------------------------------------------------------------------------
# soundness composition
# ---------------------------------------------------------------------------


def soundness_compose(p: float, s: float, h: float, kappa: float) -> float:
    """Best cheating value after wiring a rigidity bound into the game.

    A strategy within epsilon of honest wins the simulated part with value
    at most 1 - p (1 - s) / 2; one further than epsilon loses the rigidity
    part at rate (1 - p) epsilon, with the crossover at
    ((1 - s) / (2 h))^kappa.  The bound is the max of the envelope.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("check weight p must sit in [0, 1]")
    if not 0.0 <= s <= 1.0:
        raise ValueError("inner soundness s must sit in [0, 1]")
    if h <= 0 or kappa <= 0:
        raise ValueError("need h > 0 and kappa > 0")
    near = 1.0 - p * (1.0 - s) / 2.0
    eps0 = ((1.0 - s) / (2.0 * h)) ** kappa
    if eps0 >= 1.0:
        return float(near)
    far = 1.0 - (1.0 - p) * eps0
    return float(max(near, far))


# ---------------------------------------------------------------------------
# the extended game
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtendedLayout:
    """Shared-clock schedule certifying every player's Pauli measurements.

    ``labels`` is the clock path; entry (i, lab) routes the step to player
    i with lab from the constraint-propagation alphabet.  ``cons_sets``
    maps (player, conjugation block, opening index) to the defining-
    relation edges inside that block.
    """

    spec: VerifierSpec
    k: int
    n_p: int
    system: object
    labels: tuple
    cons_sets: dict
    segments: tuple
    n_prime: int
    flags: dict = field(default_factory=dict)

    @property
    def n_clock(self) -> int:
        return len(self.labels)

    @property
    def q_s(self) -> int:
        return len(self.labels) + 1

    @property
    def n_x(self) -> int:
        return 2 * self.n_p * self.spec.r


def build_extended_game(
    spec: VerifierSpec,
    k: int | None = None,
    policy: str = "sampled",
    n_sequences: int = 3,
    seed: int = 0,
) -> ExtendedLayout:
    """Concatenate per-player measurement schedules on one shared clock.

    Each player's alphabet covers his round bit plus message qubits
    (n_p = 1 + q_m letters); the full walk visits every defining relation
    of each player in turn, conjugated by opening sequences.  The clock is
    embedded as a legal qudit, so the unary clock check accepts outright.
    """
    spec = circuits.validate_verifier(spec)
    n_p = 1 + spec.q_m
    k = n_p if k is None else k
    system = build_nk_constraint_system(n_p, k)
    local_seqs = enumerate_mc_sequences(n_p, k)
    n_single = system.total_length
    bounds = system.boundaries()

    per_player: list[tuple] = []
    for u in range(1, n_p + 1):
        for c, letter in ((2 * u - 1, "X"), (2 * u, "Z")):
            for constraint in system.constraints:
                per_player.extend(constraint.word)
            word = "I" * (u - 1) + letter + "I" * (n_p - u)
            per_player.append(("ctrl", c, word))
    n_prime = len(per_player) * spec.r
    w_ext: list[tuple] = []
    for i in range(spec.r):
        w_ext.extend((i, lab) for lab in per_player)

    seqs = [(None, ())]
    for i in range(spec.r):
        seqs.extend((i, s) for s in local_seqs[1:])
    if policy == "full":
        selected = list(range(len(seqs)))
    elif policy == "sampled":
        if n_sequences > len(seqs):
            raise ValueError("asking for more opening sequences than exist")
        rng = np.random.default_rng(seed)
        rest = rng.choice(
            np.arange(1, len(seqs)), size=n_sequences - 1, replace=False
        )
        selected = [0] + sorted(int(x) for x in rest)
    else:
        raise ValueError(f"unknown policy {policy!r}")

    block_len = len(per_player)
    labels: list[tuple] = []
    segments = []
    cons_sets = {}
    for l_pos, s_idx in enumerate(selected):
        who, seq = seqs[s_idx]
        tagged = tuple((who, s) for s in seq)
        q_l = len(tagged)
        offset = len(labels)
        segments.append((s_idx, offset, q_l))
        labels.extend(tagged)
        labels.extend(w_ext)
        labels.extend(reversed(w_ext))
        labels.extend(reversed(tagged))
        for i in range(spec.r):
            base = offset + q_l + i * block_len
            for c in range(1, 2 * n_p + 1):
                blk = base + (c - 1) * (n_single + 1)
                edges = tuple(
                    Edge(blk + bounds[j], blk + bounds[j + 1], ("id", con.tau))
                    for j, con in enumerate(system.constraints)
                )
                cons_sets[(i, c, l_pos)] = edges

    flags = {
        "question_policy": policy,
        "n_sequences_full": len(seqs),
        "selected_sequences": tuple(selected),
        "clock_check": "legal qudit embedding; the unary check accepts",
    }
    if policy == "sampled":
        flags["policy_deviation"] = (
            "opening sequences subsampled; propagation certificates cover "
            "the selected subset only"
        )
    log.info(
        "build_extended_game: %d players, clock %d, %d/%d sequences",
        spec.r,
        len(labels),
        len(selected),
        len(seqs),
    )
    return ExtendedLayout(
        spec=spec,
        k=k,
        n_p=n_p,
        system=system,
        labels=tuple(labels),
        cons_sets=cons_sets,
        segments=tuple(segments),
        n_prime=n_prime,
        flags=flags,
    )


def _extended_registers(layout: ExtendedLayout, p_dims) -> qcore.RegisterLayout:
    spec = layout.spec
    names = [
        f"x{i}_{c}"
        for i in range(spec.r)
        for c in range(1, 2 * layout.n_p + 1)
    ]
    dims = [2] * len(names)
    names.append("ref")
    dims.append(1 << (spec.turns + spec.q_v))
    for i in range(spec.r):
        names.append(f"b{i}")
        dims.append(2)
        for j in range(1, spec.q_m + 1):
            names.append(f"m{i}_{j}")
            dims.append(2)
        if p_dims[i] > 1:
            names.append(f"priv{i}")
            dims.append(p_dims[i])
    return qcore.RegisterLayout(tuple(names), tuple(dims))


def _extended_apply(lay, layout, tagged, vec):
    """Apply one clock-step reflection to a work slice."""
    i, lab = tagged
    word = lab[2] if lab[0] == "ctrl" else lab[1]
    names = []
    for pos, ch in enumerate(word):
        if ch == "I":
            continue
        names.append((f"b{i}" if pos == 0 else f"m{i}_{pos}", _LETTER[ch]))
    out = vec
    for name, mat in names:
        out = lay.apply(out, mat, name)
    if lab[0] == "ctrl":
        xq = f"x{i}_{lab[1]}"
        out = lay.apply(vec, _zproj(0), xq) + lay.apply(out, _zproj(1), xq)
    return out


def extended_values(
    layout: ExtendedLayout, protocol: ProtocolStrategy | None = None
) -> dict:
    """Honest check values of the extended game, streamed slice by slice.

    The walk carries one work slice (plus snapshots at relation
    boundaries) through the clock schedule, so memory stays at a handful
    of slices however long the clock is.
    """
    spec = layout.spec
    protocol = protocol or circuits.honest_strategy(spec, p_dims=(1,) * spec.r)
    game = build_honest_game(spec)
    strat = honest_history_strategy(spec, protocol, game=game)
    lay = _extended_registers(layout, protocol.p_dims)

    plus = np.full(1 << layout.n_x, 1.0 / np.sqrt(1 << layout.n_x), dtype=complex)
    cur = np.kron(plus, strat.state)
    slice0 = cur.copy()
    norms = [float(np.vdot(cur, cur).real)]

    # Relation edges are short-range, so snapshots live only from an edge's
    # left endpoint to its right one; refcounts bound the live set.
    need: dict[int, int] = {}
    edges_closing: dict[int, list] = {}
    cons_reject = {key: 0.0 for key in layout.cons_sets}
    cons_count = {key: len(edges) for key, edges in layout.cons_sets.items()}
    for key, edges in layout.cons_sets.items():
        for e in edges:
            need[e.u] = need.get(e.u, 0) + 1
            need[e.v] = need.get(e.v, 0) + 1
            edges_closing.setdefault(e.v, []).append((key, e))
    snaps: dict[int, np.ndarray] = {}

    def visit(pos, vec):
        if need.get(pos):
            snaps[pos] = vec
        for key, e in edges_closing.get(pos, ()):
            pu, pv = snaps[e.u], snaps[e.v]
            n_pair = float((np.vdot(pu, pu) + np.vdot(pv, pv)).real)
            cross = ((-1) ** e.label[1]) * float(np.vdot(pu, pv).real)
            cons_reject[key] += n_pair / 2 - cross
            for end in (e.u, e.v):
                need[end] -= 1
                if not need[end]:
                    del snaps[end]

    visit(0, cur)
    prop_reject = 0.0
    for pos, tagged in enumerate(layout.labels, start=1):
        nxt = _extended_apply(lay, layout, tagged, cur)
        n_pair = float((np.vdot(cur, cur) + np.vdot(nxt, nxt)).real)
        cross = float(np.vdot(cur, _extended_apply(lay, layout, tagged, nxt)).real)
        prop_reject += n_pair / 2 - cross
        norms.append(float(np.vdot(nxt, nxt).real))
        visit(pos, nxt)
        cur = nxt
    total_norm = float(sum(norms))

    cons_vals = [
        1.0 - cons_reject[key] / cons_count[key] / total_norm
        for key in layout.cons_sets
    ]
    constraint = float(np.mean(cons_vals))

    p0 = norms[0] / total_norm
    propagation = 1.0 - prop_reject / layout.n_clock / total_norm
    x_mean = 0.0
    for i in range(spec.r):
        for c in range(1, 2 * layout.n_p + 1):
            xop = lay.apply(slice0, _X2, f"x{i}_{c}")
            x_mean += (norms[0] / 2 + float(np.vdot(slice0, xop).real) / 2)
    x_mean /= layout.n_x
    initialization = (1.0 - p0) + x_mean / total_norm

    rows = slice0.reshape(1 << layout.n_x, -1)
    svals, svecs = np.linalg.svd(rows, full_matrices=False)[1:3]
    if len(svals) == 1 or svals[1] < 1e-12 * max(svals[0], 1e-300):
        state0 = svecs[0] * svals[0] / np.sqrt(norms[0])
    else:
        state0 = rows.T @ rows.conj() / norms[0]
    out_strat = Strategy(
        state=state0, player_dims=strat.player_dims, measurements=strat.measurements
    )
    v_game = game_value(game, out_strat)
    output = (1.0 - p0) + p0 * v_game

    values = {
        "clock": 1.0,
        "propagation": float(propagation),
        "initialization": float(initialization),
        "constraint": constraint,
        "output": float(output),
        "p0": float(p0),
        "q_s": layout.q_s,
        "inner_value": float(v_game),
    }
    values["total"] = (
        values["clock"]
        + (values["propagation"] + values["initialization"] + values["constraint"])
        / 3.0
        + values["output"]
    ) / 3.0
    values["flags"] = dict(layout.flags)
    log.info("extended_values: total %.12f (p0 %.3e)", values["total"], p0)
    return values


# ---------------------------------------------------------------------------
# the final game
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DelegatedCheck:
    """One referee check rewritten as logical-letter products.

    ``observables`` is a tuple of commuting products, each a tuple of
    (block, letter) pairs; ``player_labels`` carries the original-player
    questions that ride along.
    """

    name: str
    observables: tuple
    player_labels: tuple

    @property
    def support(self) -> tuple:
        blocks = []
        for obs in self.observables:
            for blk, _ in obs:
                if blk not in blocks:
                    blocks.append(blk)
        return tuple(blocks)


@dataclass(frozen=True)
class MsQuestion:
    """A sampled measurement-game question for the eight code players."""

    kind: str
    per_player: tuple  # ("P", sparse) or ("Q", (sparse members...))
    masks: tuple
    target: int


@dataclass(frozen=True)
class FinalGame:
    layout: ExtendedLayout
    blocks: tuple
    n_ref: int
    k: int
    k_required: int
    n_players: int
    ms_questions: tuple
    sim_checks: tuple
    code: pauli.StabilizerCode
    flags: dict = field(default_factory=dict)


def _honest_game_delegated(spec: VerifierSpec):
    """Honest-game checks as (name, observables on C/V blocks, player labels)."""
    T, L, r = spec.turns, spec.gates_per_circuit, spec.r
    none_pp = (None,) * r
    out = []
    for t in range(1, T):
        obs = (((("C", t), "Z"),), ((("C", t + 1), "Z"),))
        out.append(("clock", obs, none_pp))
    for i in range(r):
        pp = tuple(("B",) if j == i else None for j in range(r))
        out.append(("clock", (((("C", L + 1), "Z"),),), pp))
    for t in [t for t in range(1, T + 1) if t != L + 1]:
        gate = spec.v1[t - 1] if t <= L else spec.v2[t - L - 2]
        for _coin, observables, rule in _gate_check_branches(gate):
            if rule is None:
                continue
            obs = []
            if t > 1:
                obs.append(((("C", t - 1), "Z"),))
            if t < T:
                obs.append(((("C", t + 1), "Z"),))
            obs.append(((("C", t), "X"),))
            labels = {}
            for prod in observables:
                grp, who = _owner(spec, prod)
                if grp == "V":
                    obs.append(tuple((("V", u + 1), axis) for axis, u in prod))
                else:
                    local = tuple(
                        (axis, u - spec.q_v - who * spec.q_m) for axis, u in prod
                    )
                    labels.setdefault(who, []).append(local)
            pp = tuple(
                ("G", tuple(labels[i])) if i in labels else None for i in range(r)
            )
            out.append(("propagation", tuple(obs), pp))
    obs = (
        ((("C", L), "Z"),),
        ((("C", L + 2), "Z"),),
        ((("C", L + 1), "X"),),
    )
    out.append(("prover", obs, (("XP",),) * r))
    for j in range(1, spec.q_v + 1):
        out.append(
            ("initialization", (((("C", 1), "Z"),), ((("V", j), "Z"),)), none_pp)
        )
    out.append(("output", (((("C", T), "Z"),), ((("V", 1), "Z"),)), none_pp))
    return out


def delegated_checks(layout: ExtendedLayout) -> tuple:
    """Every extended-game check as products of letters on referee blocks."""
    spec = layout.spec
    N = layout.n_clock
    none_pp = (None,) * spec.r
    checks = []
    for t in range(1, N):
        obs = (((("S", t), "Z"),), ((("S", t + 1), "Z"),))
        checks.append(DelegatedCheck("clock", obs, none_pp))
    for pos, (i, lab) in enumerate(layout.labels, start=1):
        obs = []
        if pos > 1:
            obs.append(((("S", pos - 1), "Z"),))
        if pos < N:
            obs.append(((("S", pos + 1), "Z"),))
        obs.append(((("S", pos), "X"),))
        pp = list(none_pp)
        if lab[0] == "ctrl":
            obs.append(((("X", i, lab[1]), "Z"),))
            pp[i] = ("P", lab[2])
        else:
            pp[i] = ("P", lab[1]) if lab[0] == "P" else ("Q", lab[2])
        checks.append(DelegatedCheck("propagation", tuple(obs), tuple(pp)))
    for i in range(spec.r):
        for c in range(1, 2 * layout.n_p + 1):
            obs = (((("S", 1), "Z"),), ((("X", i, c), "X"),))
            checks.append(DelegatedCheck("initialization", obs, none_pp))
    for edges in layout.cons_sets.values():
        for e in edges:
            obs = []
            if e.u >= 1:
                obs.append(((("S", e.u), "Z"),))
            if e.v + 1 <= N:
                obs.append(((("S", e.v + 1), "Z"),))
            obs.append(tuple((("S", w), "X") for w in range(e.u + 1, e.v + 1)))
            checks.append(DelegatedCheck("constraint", tuple(obs), none_pp))
    s_read = ((("S", 1), "Z"),)
    for name, obs, pp in _honest_game_delegated(spec):
        checks.append(DelegatedCheck(f"output:{name}", (s_read,) + obs, pp))
    return tuple(checks)


def _sample_ms_question(rng, n: int, k: int, xi) -> MsQuestion:
    """Draw one question of the weight-k measurement game at size n."""
    kind = ("stabilizer", "confusion", "parity", "pauli")[rng.integers(4)]
    if kind == "stabilizer":
        u = int(rng.integers(n))
        elt = xi[rng.integers(len(xi))]
        pp = tuple(("P", ((u, elt.letter(i)),)) for i in range(8))
        return MsQuestion(kind, pp, (1,) * 8, 0 if elt.sign == 1 else 1)
    if kind == "confusion":
        u = int(rng.integers(n))
        rest = rng.choice([v for v in range(n) if v != u], size=k - 1, replace=False)
        window = sorted([u] + [int(v) for v in rest])
        u_pos = window.index(u)
        t = int(rng.integers(8))
        elt = xi[rng.integers(len(xi))]
        members = []
        for v in window:
            if v == u:
                members.append(((v, elt.letter(t)),))
            else:
                members.append(((v, "XZ"[rng.integers(2)]),))
        pp = tuple(
            ("Q", tuple(members)) if i == t else ("P", ((u, elt.letter(i)),))
            for i in range(8)
        )
        masks = tuple((1 << u_pos) if i == t else 1 for i in range(8))
        return MsQuestion(kind, pp, masks, 0 if elt.sign == 1 else 1)
    if kind == "parity":
        weights = np.array([math.comb(n, w) * 2**w for w in range(1, k + 1)], float)
        w = 1 + int(rng.choice(k, p=weights / weights.sum()))
        supp = sorted(int(v) for v in rng.choice(n, size=w, replace=False))
        letters = {v: "XZ"[rng.integers(2)] for v in supp}
        extra = sorted(
            int(v)
            for v in rng.choice(
                [v for v in range(n) if v not in supp], size=k - w, replace=False
            )
        )
        window = sorted(supp + extra)
        members = []
        mask = 0
        for pos, v in enumerate(window):
            if v in letters:
                members.append(((v, letters[v]),))
                mask |= 1 << pos
            else:
                members.append(((v, "XZ"[rng.integers(2)]),))
        full = ("P", tuple((v, letters[v]) for v in supp))
        t = int(rng.integers(8))
        pp = tuple(full if i == t else ("Q", tuple(members)) for i in range(8))
        masks = tuple(1 if i == t else mask for i in range(8))
        return MsQuestion(kind, pp, masks, 0)
    window = sorted(int(v) for v in rng.choice(n, size=k, replace=False))
    members: list[tuple] = []
    attempts = 0
    while len(members) < k:
        attempts += 1
        if attempts > 500:
            members = []
            attempts = 0
        cand = tuple(
            (v, c)
            for v, c in ((v, "IXZ"[rng.integers(3)]) for v in window)
            if c != "I"
        )
        if not cand or cand in members:
            continue
        if all(_sparse_commutes(cand, m) for m in members):
            members.append(cand)
    members.sort()
    idx = int(rng.integers(k))
    t = int(rng.integers(8))
    pp = tuple(
        ("Q", tuple(members)) if i == t else ("P", members[idx]) for i in range(8)
    )
    masks = tuple((1 << idx) if i == t else 1 for i in range(8))
    return MsQuestion(kind, pp, masks, 0)


def _sparse_commutes(a, b) -> bool:
    da, db = dict(a), dict(b)
    clashes = sum(
        1 for blk in set(da) & set(db) if da[blk] != db[blk]
    )
    return clashes % 2 == 0


def _logical_table(code: pauli.StabilizerCode) -> dict:
    """(x_mask, z_mask) -> (logical class, phase) over stabilizer cosets."""
    table = {}
    logicals = {
        "I": pauli.identity(code.n),
        "X": code.logical_x,
        "Z": code.logical_z,
        "Y": pauli.multiply(code.logical_x, code.logical_z),
    }
    for s in code.stabilizer_group():
        for cls, rep in logicals.items():
            p = pauli.multiply(s, rep)
            table[(p.x_mask, p.z_mask)] = (cls, p.phase_exp % 4)
    return table


def build_final_game(
    layout: ExtendedLayout,
    k: int | None = None,
    n_ms_questions: int = 64,
    seed: int = 0,
) -> FinalGame:
    """Encode the referee into eight extra players on the eight-qubit code.

    Every referee qubit (unary clock S, ancillas X, honest-game clock C
    and work V) becomes one logical block; referee measurements turn into
    products of logical letters across blocks, answered letter-wise by the
    code players and recombined by XOR.  ``k`` bounds the weight the
    measurement game certifies and must cover the largest check support.
    """
    spec = layout.spec
    sim_checks = delegated_checks(layout)
    k_required = max(len(chk.support) for chk in sim_checks)
    if k is None:
        k = k_required
    if k < k_required:
        raise ValueError(
            f"a delegated check touches {k_required} blocks; "
            f"the measurement game at k = {k} cannot certify it"
        )
    blocks = [("S", t) for t in range(1, layout.n_clock + 1)]
    blocks += [
        ("X", i, c)
        for i in range(spec.r)
        for c in range(1, 2 * layout.n_p + 1)
    ]
    blocks += [("C", t) for t in range(1, spec.turns + 1)]
    blocks += [("V", j) for j in range(1, spec.q_v + 1)]
    n_ref = len(blocks)

    code = pauli.eight_qubit_code()
    logical = {"X": code.logical_x, "Z": code.logical_z}
    table = _logical_table(code)
    for letter, rep in logical.items():
        if table[(rep.x_mask, rep.z_mask)] != (letter, 0):
            raise AssertionError("logical representative fails the group table")

    block_index = {blk: pos for pos, blk in enumerate(blocks)}
    for chk in sim_checks:
        for i in range(8):
            members = []
            for obs in chk.observables:
                sparse = []
                for blk, letter in obs:
                    ch = logical[letter].letter(i)
                    if ch != "I":
                        sparse.append((block_index[blk], ch))
                members.append(tuple(sparse))
            for a, b in itertools.combinations(members, 2):
                if not _sparse_commutes(a, b):
                    raise AssertionError(
                        f"delegated members clash for code player {i}: {chk.name}"
                    )

    xi = pauli.xz_stabilizer_subset(code)
    rng = np.random.default_rng(seed)
    ms = tuple(
        _sample_ms_question(rng, n_ref, k, xi) for _ in range(n_ms_questions)
    )
    flags = dict(layout.flags)
    flags.update(
        {
            "question_policy": "sampled",
            "ms_questions": n_ms_questions,
            "policy_deviation": (
                "measurement-game questions sampled, commuting sets drawn by "
                "sequential rejection; "
                + str(layout.flags.get("policy_deviation", ""))
            ).strip(),
        }
    )
    log.info(
        "build_final_game: %d blocks, k = %d (need %d), %d sim checks",
        n_ref,
        k,
        k_required,
        len(sim_checks),
    )
    return FinalGame(
        layout=layout,
        blocks=tuple(blocks),
        n_ref=n_ref,
        k=k,
        k_required=k_required,
        n_players=spec.r + 8,
        ms_questions=ms,
        sim_checks=sim_checks,
        code=code,
        flags=flags,
    )


def _ms_symbolic_value(code, table, q: MsQuestion) -> float:
    """Honest acceptance of one sampled question by stabilizer matching.

    The XOR-selected letters of the eight players are stacked into one
    column per touched block; each column must land in the stabilizer
    group (class I) for the outcome to be deterministic.
    """
    per_block: dict[int, list] = {}
    for i in range(8):
        label = q.per_player[i]
        mask = q.masks[i]
        merged: dict[int, str] = {}
        members = (label[1],) if label[0] == "P" else label[1]
        for pos, member in enumerate(members):
            if not (mask >> pos) & 1:
                continue
            for blk, ch in member:
                if blk in merged and merged[blk] != ch:
                    raise AssertionError("colliding letters inside one member set")
                merged[blk] = ch
        for blk, ch in merged.items():
            per_block.setdefault(blk, [("I",) * 8])
            col = list(per_block[blk][0])
            col[i] = ch
            per_block[blk][0] = tuple(col)
    phase = 0
    for blk, (col,) in per_block.items():
        p = pauli.from_string("".join(col))
        hit = table.get((p.x_mask, p.z_mask))
        if hit is None or hit[0] != "I":
            return 0.0
        phase += hit[1]
    parity = 0 if phase % 4 == 0 else 1
    return 1.0 if parity == q.target else 0.0


def final_honest_values(
    game: FinalGame, protocol: ProtocolStrategy | None = None
) -> dict:
    """Honest value of the final game through the logical reduction.

    The measurement-game half is evaluated question by question on the
    stabilizer group table (no state is built); the simulation half
    reduces to the extended game because logical-letter products act on
    encoded blocks exactly as the plain letters act on the originals.
    """
    table = _logical_table(game.code)
    per_question = tuple(
        _ms_symbolic_value(game.code, table, q) for q in game.ms_questions
    )
    ms_value = float(np.mean(per_question)) if per_question else 1.0
    sim = extended_values(game.layout, protocol)
    total = (ms_value + sim["total"]) / 2.0
    return {
        "ms": ms_value,
        "ms_per_question": per_question,
        "simulation": sim,
        "total": float(total),
        "flags": dict(game.flags),
    }


def final_dense_value(game: FinalGame, strategy=None) -> float:
    """Dense adversarial evaluation; guarded, since code players hold
    one qubit per referee block."""
    n_qubits = 8 * game.n_ref
    if n_qubits > DENSE_QUBIT_LIMIT:
        raise ResourceGuardError(
            f"dense final-game evaluation needs {n_qubits} code qubits "
            f"({game.n_ref} blocks); the guard stops at {DENSE_QUBIT_LIMIT}"
        )
    raise NotImplementedError(
        "final games small enough for dense evaluation do not arise"
    )
