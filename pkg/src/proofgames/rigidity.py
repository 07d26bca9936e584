"""Stabilizer games and the weight-k measurement game on the eight-qubit code.

Both games have eight players, one per code qubit.  Questions are Pauli
letters: a player either measures a single (weight <= k) XZ-form operator on
his n qubits, or jointly measures a commuting set of them and reports one
bit per member.  Question labels are ("P", string) and ("Q", (strings...)),
with answers bit-packed in member order, so the same measurement serves
every check that asks the same question.

The honest strategy encodes each of the n logical qubits in the eight-qubit
code, player i holding qubit i of every block.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from . import pauli, qcore
from .config import ResourceGuardError
from .games import GameSpec, Question, Strategy, XorParity, value

log = logging.getLogger(__name__)

N_PLAYERS = 8

QUESTION_GUARD = 200_000


def _w1(n: int, letter: str, u: int) -> str:
    return "I" * u + letter + "I" * (n - u - 1)


# ---------------------------------------------------------------------------
# the plain stabilizer game
# ---------------------------------------------------------------------------


def build_stabilizer_game(code: pauli.StabilizerCode | None = None) -> GameSpec:
    """One uniformly random XZ-form stabilizer element; letters out, XOR in.

    Each player receives the letter of the sampled element at his position
    and the answers must XOR to the element's sign bit.
    """
    code = code or pauli.eight_qubit_code()
    xi = pauli.xz_stabilizer_subset(code)
    questions = []
    p = Fraction(1, len(xi))
    for elt in xi:
        letters = tuple(("P", elt.letter(i)) for i in range(code.n))
        target = 0 if elt.sign == 1 else 1
        questions.append(
            Question(
                prob=float(p),
                per_player=letters,
                predicate=XorParity(masks=(1,) * code.n, target=target),
            )
        )
    answers = {}
    for i in range(code.n):
        for letter in "XZ":
            answers[(i, ("P", letter))] = (0, 1)
    return GameSpec(
        n_players=code.n,
        questions=tuple(questions),
        answers=answers,
        name="stabilizer-game",
    )


def honest_stabilizer_strategy(code: pauli.StabilizerCode | None = None) -> Strategy:
    """Share the codeword; measure the received letter on your own qubit."""
    code = code or pauli.eight_qubit_code()
    state = code.codeword()
    meas = {}
    for i in range(code.n):
        for letter in "XZ":
            r = pauli.to_matrix(pauli.from_string(letter))
            meas[(i, ("P", letter))] = qcore.projective_from_reflection(r)
    return Strategy(state=state, player_dims=(2,) * code.n, measurements=meas)


# ---------------------------------------------------------------------------
# the (n, k) measurement game
# ---------------------------------------------------------------------------


def _letter_counts(xi: list[pauli.PauliOp], pos: int) -> dict[str, int]:
    counts = {"X": 0, "Z": 0}
    for p in xi:
        counts[p.letter(pos)] += 1
    return counts


def build_ms_game(n: int, k: int) -> GameSpec:
    """The four-check game certifying weight-k Pauli measurements on n qubits.

    Checks, each with probability 1/4:

    * Stabilizer: a random stabilizer element measured letter-wise at a
      random qubit position u; answers XOR to the element's sign.
    * Confusion: one player answers from inside a commuting set covering a
      random size-k window J containing u; everyone else answers the single
      letter at u.
    * Parity: one player measures a full weight-<=k operator; the others
      XOR the per-qubit letters of its support from inside a size-k window
      (padding letters are sent but ignored).
    * Pauli: one player locates a member inside a commuting set, everyone
      else measures that member directly.
    """
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    code = pauli.eight_qubit_code()
    xi = pauli.xz_stabilizer_subset(code)
    for elt in xi:
        if elt.weight != code.n:
            raise AssertionError("stabilizer subset contains an identity letter")
    paulis = pauli.enumerate_pauli_nk(n, k)
    powers = pauli.enumerate_power_nk(n, k)

    n_stab = n * len(xi)
    n_conf = n * comb(n - 1, k - 1) * 8 * len(xi) * 2 ** (k - 1)
    n_par = sum(
        comb(n - p.weight, k - p.weight) * 2 ** (k - p.weight) * 8 for p in paulis
    )
    n_pow = len(powers) * k * 8
    if n_stab + n_conf + n_par + n_pow > QUESTION_GUARD:
        raise ResourceGuardError(
            f"{n_stab + n_conf + n_par + n_pow} question tuples exceed "
            f"the enumeration guard at (n, k) = ({n}, {k})"
        )

    questions: list[Question] = []
    slices: dict[str, tuple[int, int]] = {}
    quarter = Fraction(1, 4)

    # --- Stabilizer Check ---
    base = quarter / (n * len(xi))
    for u in range(n):
        for elt in xi:
            per_player = tuple(("P", _w1(n, elt.letter(i), u)) for i in range(8))
            questions.append(
                Question(
                    prob=float(base),
                    per_player=per_player,
                    predicate=XorParity(
                        masks=(1,) * 8, target=0 if elt.sign == 1 else 1
                    ),
                )
            )
    slices["stabilizer"] = (0, len(questions))

    # --- Confusion Check ---
    n_windows = comb(n - 1, k - 1)
    for u in range(n):
        for window in itertools.combinations(range(n), k):
            if u not in window:
                continue
            u_pos = window.index(u)
            for t in range(8):
                counts = _letter_counts(xi, t)
                rest = [v for v in window if v != u]
                for elt in xi:
                    for rest_letters in itertools.product("XZ", repeat=len(rest)):
                        p = quarter / (n * n_windows * 8 * len(xi))
                        members = []
                        for v in window:
                            if v == u:
                                members.append(_w1(n, elt.letter(t), v))
                            else:
                                c = rest_letters[rest.index(v)]
                                p *= Fraction(counts[c], len(xi))
                                members.append(_w1(n, c, v))
                        per_player = tuple(
                            ("Q", tuple(members))
                            if i == t
                            else ("P", _w1(n, elt.letter(i), u))
                            for i in range(8)
                        )
                        masks = tuple(
                            (1 << u_pos) if i == t else 1 for i in range(8)
                        )
                        questions.append(
                            Question(
                                prob=float(p),
                                per_player=per_player,
                                predicate=XorParity(
                                    masks=masks, target=0 if elt.sign == 1 else 1
                                ),
                            )
                        )
    slices["confusion"] = (slices["stabilizer"][1], len(questions))

    # --- Parity Check ---
    for p_op in paulis:
        supp = p_op.support
        w = p_op.weight
        n_sup = comb(n - w, k - w)
        for extra in itertools.combinations(
            [v for v in range(n) if v not in supp], k - w
        ):
            window = tuple(sorted(supp + extra))
            for pad_letters in itertools.product("XZ", repeat=len(extra)):
                for t in range(8):
                    members = []
                    mask = 0
                    for pos, v in enumerate(window):
                        if v in supp:
                            members.append(_w1(n, p_op.letter(v), v))
                            mask |= 1 << pos
                        else:
                            c = pad_letters[extra.index(v)]
                            members.append(_w1(n, c, v))
                    prob = quarter / (
                        len(paulis) * n_sup * (2 ** len(extra)) * 8
                    )
                    per_player = tuple(
                        ("P", p_op.to_string())
                        if i == t
                        else ("Q", tuple(members))
                        for i in range(8)
                    )
                    masks = tuple(1 if i == t else mask for i in range(8))
                    questions.append(
                        Question(
                            prob=float(prob),
                            per_player=per_player,
                            predicate=XorParity(masks=masks, target=0),
                        )
                    )
    slices["parity"] = (slices["confusion"][1], len(questions))

    # --- Pauli Check ---
    for q_set in powers:
        members = tuple(p.to_string() for p in q_set)
        for p_op in q_set:
            idx = members.index(p_op.to_string())
            for t in range(8):
                prob = quarter / (len(powers) * k * 8)
                per_player = tuple(
                    ("Q", members) if i == t else ("P", p_op.to_string())
                    for i in range(8)
                )
                masks = tuple((1 << idx) if i == t else 1 for i in range(8))
                questions.append(
                    Question(
                        prob=float(prob),
                        per_player=per_player,
                        predicate=XorParity(masks=masks, target=0),
                    )
                )
    slices["pauli"] = (slices["parity"][1], len(questions))

    answers = {}
    for q in questions:
        for i, label in enumerate(q.per_player):
            if (i, label) in answers:
                continue
            if label[0] == "P":
                answers[(i, label)] = (0, 1)
            else:
                answers[(i, label)] = tuple(range(1 << len(label[1])))
    game = GameSpec(
        n_players=8,
        questions=tuple(questions),
        answers=answers,
        name=f"ms-game-{n}-{k}",
        flags={"check_slices": slices},
    )
    game.validate(atol=1e-12)
    log.info("build_ms_game(%d, %d): %d question tuples", n, k, len(questions))
    return game


# ---------------------------------------------------------------------------
# honest strategies
# ---------------------------------------------------------------------------


def _encoded_state(n: int, code: pauli.StabilizerCode) -> np.ndarray:
    """n codeword blocks, reordered so player i holds qubit i of each block."""
    w = code.codeword()
    state = np.array([1.0 + 0j])
    for _ in range(n):
        state = np.kron(state, w)
    t = state.reshape((2,) * (8 * n))
    # Axis (block b, player i) sits at b*8+i; want player-major (i, b).
    perm = [b * 8 + i for i in range(8) for b in range(n)]
    return np.transpose(t, perm).reshape(-1)


def _set_measurement(members: tuple[str, ...]) -> qcore.Measurement:
    """Joint projective measurement of a commuting XZ-form family."""
    return qcore.joint_reflection_measurement(
        pauli.to_matrix(pauli.from_string(s)) for s in members
    )


def honest_ms_strategy(game: GameSpec, n: int) -> Strategy:
    """Measure requested operators on your own n encoded qubits."""
    code = pauli.eight_qubit_code()
    state = _encoded_state(n, code)
    meas = {}
    by_label = {}
    for q in game.questions:
        for i, label in enumerate(q.per_player):
            if (i, label) in meas:
                continue
            if label not in by_label:
                if label[0] == "P":
                    r = pauli.to_matrix(pauli.from_string(label[1]))
                    by_label[label] = qcore.projective_from_reflection(r)
                else:
                    by_label[label] = _set_measurement(label[1])
            meas[(i, label)] = by_label[label]
    return Strategy(state=state, player_dims=(1 << n,) * 8, measurements=meas)


def _small_rotation(d: int, delta: float, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    g = (g + g.conj().T) / 2
    g /= np.linalg.norm(g, 2)
    vals, vecs = np.linalg.eigh(-delta * g)
    return vecs @ np.diag(np.exp(1j * vals)) @ vecs.conj().T


def perturbed_ms_strategy(
    game: GameSpec, n: int, delta: float, seed: int = 0
) -> Strategy:
    """Honest strategy, each measurement conjugated by its own small rotation.

    The rotation directions are drawn once from ``seed`` and scaled by
    ``delta``, so a sweep over delta moves along a fixed ray.  Each question
    label gets an independent rotation (a shared per-player rotation would
    be an exact local isometry and leave nothing to detect), and the shared
    state is rotated player-by-player as well.
    """
    base = honest_ms_strategy(game, n)
    rng = np.random.default_rng(seed)
    d = 1 << n
    meas = {}
    for (i, label), m in sorted(base.measurements.items(), key=repr):
        u = _small_rotation(d, delta, rng)
        meas[(i, label)] = qcore.Measurement(
            ops=tuple(u @ op @ u.conj().T for op in m.ops), labels=m.labels
        )
    state = base.state
    lay = qcore.RegisterLayout(
        tuple(f"p{i}" for i in range(8)), base.player_dims
    )
    for i in range(8):
        state = lay.apply(state, _small_rotation(d, delta, rng), f"p{i}")
    return Strategy(state=state, player_dims=base.player_dims, measurements=meas)


# ---------------------------------------------------------------------------
# rigidity diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RigidityRow:
    delta: float
    epsilon: float
    dis_max: float
    overlap: float


def _player_reduced(state: np.ndarray, n: int, player: int) -> np.ndarray:
    d = 1 << n
    t = state.reshape((d,) * 8)
    axes = [a for a in range(8) if a != player]
    psi = np.moveaxis(t, player, 0).reshape(d, -1)
    return psi @ psi.conj().T


def _code_overlap(state: np.ndarray, n: int, code: pauli.StabilizerCode) -> float:
    """<Pi^(x)n> with block b's projector on qubit b of every player."""
    proj = code.projector()
    names = tuple(f"q{i}_{b}" for i in range(8) for b in range(n))
    lay = qcore.RegisterLayout(names, (2,) * (8 * n))
    vec = state
    for b in range(n):
        block = tuple(f"q{i}_{b}" for i in range(8))
        vec = lay.apply(vec, proj, block)
    return float(np.vdot(state, vec).real)


def rigidity_report(
    game: GameSpec,
    n: int,
    deltas,
    seed: int = 0,
) -> list[RigidityRow]:
    """Sweep perturbation sizes; extract per-player XZ pairs and report.

    For each delta the report row carries the game defect epsilon = 1 - value,
    the worst state-dependent distance between a player's weight-one derived
    reflections and the exact XZ pair extracted from their Jordan blocks
    (against the player's reduced state), and the encoded-block overlap of
    the shared state.
    """
    code = pauli.eight_qubit_code()
    rows = []
    for delta in deltas:
        strat = perturbed_ms_strategy(game, n, delta, seed=seed)
        eps = max(0.0, 1.0 - value(game, strat))
        dis_max = 0.0
        for i in range(8):
            rho_i = _player_reduced(strat.state, n, i)
            for u in range(n):
                mx = strat.measurement(i, ("P", _w1(n, "X", u)))
                mz = strat.measurement(i, ("P", _w1(n, "Z", u)))
                rx = qcore.derived_reflections(mx, 0)
                rz = qcore.derived_reflections(mz, 0)
                try:
                    _, rep = qcore.jordan_extract(rx, rz, rho=rho_i)
                except ValueError:
                    dis_max = max(dis_max, 2.0)
                    continue
                dis_max = max(dis_max, rep["dis_x"])
        overlap = _code_overlap(strat.state, n, code)
        rows.append(
            RigidityRow(
                delta=float(delta),
                epsilon=float(eps),
                dis_max=float(dis_max),
                overlap=float(overlap),
            )
        )
    return rows
