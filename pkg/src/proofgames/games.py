"""Multi-player game specifications and exact value machinery.

A game is a distribution over question tuples plus, per tuple, an acceptance
predicate.  Ordinary nonlocal games use scalar predicates; extended games
carry a referee register (its dimension in ``referee_dim``) and
operator-valued predicates.  Strategies supply a shared state on
(referee, player_1, ..., player_n) and one measurement per (player,
question label) pair.

Three predicate kinds are supported:

``ScalarTable``
    Explicit accept weights per answer tuple.
``XorParity``
    Accept iff the XOR of per-player answer-bit parities equals a target.
    Evaluated through derived reflections (no answer enumeration), which is
    what makes stabilizer-type games tractable at 2^16 dimensions.
``OperatorTable``
    Answer tuple -> PSD acceptance operator on the referee register.

The two evaluation routes (reflection products vs explicit enumeration) are
deliberately independent and are cross-checked in the tests.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse.linalg

from .config import CLASSICAL_ENUM_LIMIT, DENSE_DIM_LIMIT, ResourceGuardError
from . import qcore

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# predicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarTable:
    """accept[(a_1, ..., a_n)] in [0, 1]; missing tuples reject."""

    accept: tuple  # of (answer_tuple, weight)

    def weight(self, answers: tuple) -> float:
        for a, w in self.accept:
            if a == answers:
                return w
        return 0.0


@dataclass(frozen=True)
class XorParity:
    """Accept iff XOR_i parity(a_i & mask_i) == target.

    ``masks`` has one entry per player; None means the player's answer is
    ignored.  Answer labels must be integers (bit-packed).
    """

    masks: tuple
    target: int


@dataclass(frozen=True)
class OperatorTable:
    """Answer tuple -> acceptance operator on the referee register."""

    entries: tuple  # of (answer_tuple, ndarray)

    def op(self, answers: tuple):
        for a, m in self.entries:
            if a == answers:
                return m
        return None


@dataclass(frozen=True)
class Question:
    prob: float
    per_player: tuple  # question label per player; None = not queried
    predicate: object


@dataclass(frozen=True)
class GameSpec:
    n_players: int
    questions: tuple
    answers: dict  # (player, question_label) -> tuple of labels
    referee_dim: int = 1
    name: str = ""
    flags: dict = field(default_factory=dict)

    def validate(self, atol: float = 1e-9) -> None:
        total = sum(q.prob for q in self.questions)
        if abs(total - 1.0) > atol:
            raise ValueError(f"question probabilities sum to {total}")
        for q in self.questions:
            if len(q.per_player) != self.n_players:
                raise ValueError("question tuple arity mismatch")
            if q.prob < -1e-15:
                raise ValueError("negative question probability")


@dataclass
class Strategy:
    """Shared state plus measurements per (player, question label)."""

    state: np.ndarray  # pure vector or density matrix on (referee, players)
    player_dims: tuple
    measurements: dict

    def measurement(self, player: int, label) -> qcore.Measurement:
        try:
            return self.measurements[(player, label)]
        except KeyError:
            raise KeyError(f"no measurement for player {player}, question {label!r}")


def _strategy_layout(game: GameSpec, strat: Strategy) -> qcore.RegisterLayout:
    names = ["ref"] + [f"p{i}" for i in range(game.n_players)]
    dims = [game.referee_dim] + list(strat.player_dims)
    return qcore.RegisterLayout(tuple(names), tuple(dims))


# ---------------------------------------------------------------------------
# value
# ---------------------------------------------------------------------------


def _parity(x: int, mask: int) -> int:
    return (x & mask).bit_count() & 1


def _xor_question_value(game, strat, lay, question) -> float:
    refl = {}
    for i, label in enumerate(question.per_player):
        mask = question.predicate.masks[i]
        if label is None or mask is None:
            continue
        meas = strat.measurement(i, label)
        r = np.zeros((meas.dim, meas.dim), dtype=complex)
        for k, a in zip(meas.ops, meas.labels):
            r += ((-1) ** _parity(a, mask)) * (k.conj().T @ k)
        refl[i] = r
    state = strat.state
    if state.ndim == 1:
        vec = state
        for i, r in refl.items():
            vec = lay.apply(vec, r, f"p{i}")
        corr = np.vdot(strat.state, vec).real
    else:
        big = state
        for i, r in refl.items():
            big = lay.embed(r, f"p{i}") @ big
        corr = np.trace(big).real
    return (1.0 + ((-1) ** question.predicate.target) * corr) / 2.0


def _enumerated_question_value(game, strat, lay, question) -> float:
    pred = question.predicate
    queried = [
        (i, label)
        for i, label in enumerate(question.per_player)
        if label is not None
    ]
    outcome_sets = [
        list(zip(strat.measurement(i, label).ops, strat.measurement(i, label).labels))
        for i, label in queried
    ]
    total = 0.0
    for combo in itertools.product(*outcome_sets):
        answers = tuple(a for _, a in combo)
        if isinstance(pred, ScalarTable):
            w = pred.weight(answers)
            ref_op = None
        elif isinstance(pred, OperatorTable):
            ref_op = pred.op(answers)
            w = 1.0
            if ref_op is None:
                continue
        elif isinstance(pred, XorParity):
            bits = 0
            for (i, _label), a in zip(queried, [a for _, a in combo]):
                mask = pred.masks[i]
                if mask is not None:
                    bits ^= _parity(a, mask)
            w = 1.0 if bits == pred.target else 0.0
            ref_op = None
        else:
            raise TypeError(f"unknown predicate {type(pred).__name__}")
        if w == 0.0:
            continue
        if strat.state.ndim == 1:
            vec = strat.state
            for (i, _label), (k, _a) in zip(queried, combo):
                vec = lay.apply(vec, k, f"p{i}")
            if ref_op is not None:
                # <psi| A (x) E |psi> with E = K^dag K: apply K then A.
                p = np.vdot(vec, lay.apply(vec, ref_op, "ref")).real
            else:
                p = float(np.vdot(vec, vec).real)
        else:
            rho = strat.state
            op_total = np.eye(lay.dim, dtype=complex)
            for (i, _label), (k, _a) in zip(queried, combo):
                e = k.conj().T @ k
                op_total = op_total @ lay.embed(e, f"p{i}")
            if ref_op is not None:
                op_total = op_total @ lay.embed(ref_op, "ref")
            p = np.trace(op_total @ rho).real
        total += w * p
    return total


def value(game: GameSpec, strat: Strategy, force_enumerate: bool = False) -> float:
    """Exact value of a strategy: sum_q pi(q) * acceptance(q)."""
    game.validate()
    lay = _strategy_layout(game, strat)
    total = 0.0
    for q in game.questions:
        if isinstance(q.predicate, XorParity) and not force_enumerate:
            total += q.prob * _xor_question_value(game, strat, lay, q)
        else:
            total += q.prob * _enumerated_question_value(game, strat, lay, q)
    return float(total)


# ---------------------------------------------------------------------------
# classical value
# ---------------------------------------------------------------------------


def classical_value(game: GameSpec) -> float:
    """Maximum over deterministic strategies, by guarded exact enumeration."""
    game.validate()
    if game.referee_dim != 1:
        raise ValueError("classical value is defined for nonlocal games only")
    raw = []
    total = 1
    for i in range(game.n_players):
        labels = sorted(
            {q.per_player[i] for q in game.questions if q.per_player[i] is not None},
            key=repr,
        )
        choices = [game.answers[(i, lab)] for lab in labels]
        n_i = 1
        for c in choices:
            n_i *= len(c)
        total *= n_i
        raw.append((labels, choices))
    if total > CLASSICAL_ENUM_LIMIT:
        raise ResourceGuardError(
            f"{total} deterministic strategies exceed the enumeration guard"
        )
    per_player = [
        (labels, list(itertools.product(*choices))) for labels, choices in raw
    ]
    log.info("classical_value: enumerating %d deterministic strategies", total)

    # Vectorized: evaluate every joint strategy at once, question by question.
    sizes = [len(opts) for _, opts in per_player]
    values = np.zeros(total)
    for q in game.questions:
        pred = q.predicate
        per_answers = []
        for i, label in enumerate(q.per_player):
            labels, opts = per_player[i]
            if label is None:
                per_answers.append(None)
                continue
            j = labels.index(label)
            per_answers.append(np.array([opt[j] for opt in opts]))
        if isinstance(pred, XorParity):
            bits = np.zeros(total, dtype=np.int64)
            for i, ans in enumerate(per_answers):
                mask = pred.masks[i]
                if ans is None or mask is None:
                    continue
                contrib = np.zeros(len(ans), dtype=np.int64)
                sel = ans & mask
                while np.any(sel):
                    contrib ^= sel & 1
                    sel >>= 1
                bits ^= _reshape_for(contrib, i, sizes)
            values += q.prob * (bits == pred.target)
        elif isinstance(pred, ScalarTable):
            acc = np.zeros(total)
            for answers, w in pred.accept:
                onehot = np.ones(total, dtype=bool)
                ai = 0
                for i, ans in enumerate(per_answers):
                    if ans is None:
                        continue
                    onehot &= _reshape_for(ans == answers[ai], i, sizes).astype(bool)
                    ai += 1
                acc = np.maximum(acc, w * onehot)
            values += q.prob * acc
        else:
            raise TypeError("classical value needs scalar or parity predicates")
    return float(values.max())


def _reshape_for(arr: np.ndarray, i: int, sizes: list[int]) -> np.ndarray:
    """Broadcast a per-player array over the joint strategy enumeration."""
    shape = [1] * len(sizes)
    shape[i] = sizes[i]
    out = arr.reshape(shape)
    return np.broadcast_to(out, sizes).reshape(-1)


# ---------------------------------------------------------------------------
# see-saw
# ---------------------------------------------------------------------------


def _kron_chain(lay, factors) -> np.ndarray:
    """Kronecker product in layout order; None entries are identities."""
    out = np.ones((1, 1), dtype=complex)
    for f, d in zip(factors, lay.dims):
        out = np.kron(out, np.eye(d, dtype=complex) if f is None else f)
    return out


def _game_operator(game, strat, lay) -> np.ndarray:
    """Dense operator whose expectation on the state equals the game value.

    Every term is a product over distinct registers, so it is assembled as
    one Kronecker chain instead of full-dimension matrix products.
    """
    total = np.zeros((lay.dim, lay.dim), dtype=complex)
    for q in game.questions:
        pred = q.predicate
        queried = [
            (i, lab) for i, lab in enumerate(q.per_player) if lab is not None
        ]
        if isinstance(pred, XorParity):
            factors = [None] * len(lay.dims)
            for i, lab in queried:
                mask = pred.masks[i]
                if mask is None:
                    continue
                meas = strat.measurement(i, lab)
                r = np.zeros((meas.dim, meas.dim), dtype=complex)
                for k, a in zip(meas.ops, meas.labels):
                    r += ((-1) ** _parity(a, mask)) * (k.conj().T @ k)
                factors[lay.axis(f"p{i}")] = r
            sign = (-1) ** pred.target
            total += (q.prob / 2) * np.eye(lay.dim)
            total += (q.prob / 2) * sign * _kron_chain(lay, factors)
            continue
        sets = [
            list(zip(strat.measurement(i, lab).ops, strat.measurement(i, lab).labels))
            for i, lab in queried
        ]
        for combo in itertools.product(*sets):
            answers = tuple(a for _, a in combo)
            if isinstance(pred, ScalarTable):
                w, ref_op = pred.weight(answers), None
            else:
                ref_op, w = pred.op(answers), 1.0
                if ref_op is None:
                    continue
            if w == 0.0:
                continue
            factors = [None] * len(lay.dims)
            factors[lay.axis("ref")] = ref_op  # None stays identity
            for (i, _lab), (k, _a) in zip(queried, combo):
                factors[lay.axis(f"p{i}")] = k.conj().T @ k
            total += q.prob * w * _kron_chain(lay, factors)
    return total


def _best_response(game, strat, lay, player: int, labels) -> None:
    """Exact 2-outcome best response; exchange passes for more outcomes."""
    rho = strat.state
    for lab in labels:
        meas = strat.measurement(player, lab)
        k = len(meas.ops)
        env = _outcome_environments(game, strat, lay, player, lab, rho)
        if k == 2:
            diff = env[0] - env[1]
            vals, vecs = np.linalg.eigh(diff)
            # Ties (zero eigenvalues) go to the lower outcome index.
            keep = vals >= 0
            p0 = vecs[:, keep] @ vecs[:, keep].conj().T
            ops = (p0, np.eye(meas.dim) - p0)
            strat.measurements[(player, lab)] = qcore.Measurement(
                ops=ops, labels=meas.labels
            )
        else:
            ops = list(meas.ops)
            for a_idx, b_idx in itertools.combinations(range(k), 2):
                s = ops[a_idx] + ops[b_idx]
                vals, vecs = np.linalg.eigh(s)
                cols = vecs[:, vals > 1e-9]
                d_sub = cols.shape[1]
                if d_sub == 0:
                    continue
                diff = cols.conj().T @ (env[a_idx] - env[b_idx]) @ cols
                dvals, dvecs = np.linalg.eigh(diff)
                keep = dvals >= 0
                pa_sub = dvecs[:, keep] @ dvecs[:, keep].conj().T
                pa = cols @ pa_sub @ cols.conj().T
                ops[a_idx] = pa
                ops[b_idx] = s - pa
            strat.measurements[(player, lab)] = qcore.Measurement(
                ops=tuple(ops), labels=meas.labels
            )


def _outcome_environments(game, strat, lay, player, label, rho) -> list:
    """Per-outcome operators G_a with total contribution sum_a tr(M_a G_a).

    XOR questions contribute through the other players' derived reflections
    in one pass; scalar and operator questions enumerate the other players'
    outcomes.  The returned operators are Hermitian.  A pure ``rho`` (state
    vector) goes through vector applications; a density matrix through the
    dense product route.
    """
    my_meas = strat.measurement(player, label)
    k = len(my_meas.ops)
    d = strat.player_dims[player]
    g = [np.zeros((d, d), dtype=complex) for _ in range(k)]
    pure = rho.ndim == 1
    if pure:
        axis = lay.axis(f"p{player}")
        last = len(lay.dims) - 1

        def half_reduce(vec):
            # rows indexed by everything else, columns by the player
            t = np.moveaxis(vec.reshape(lay.dims), axis, last)
            return t.reshape(-1, d)

        psi_rows = half_reduce(rho).conj()

        def reduce_pair(wvec):
            # partial trace of |w><psi| onto the player's register
            return half_reduce(wvec).T @ psi_rows

    for q in game.questions:
        if q.per_player[player] != label:
            continue
        pred = q.predicate
        others = [
            (i, lab)
            for i, lab in enumerate(q.per_player)
            if lab is not None and i != player
        ]
        if isinstance(pred, XorParity) and pred.masks[player] is not None:
            refls = []
            for i, lab in others:
                mask = pred.masks[i]
                if mask is None:
                    continue
                meas = strat.measurement(i, lab)
                r = np.zeros((meas.dim, meas.dim), dtype=complex)
                for kk, a in zip(meas.ops, meas.labels):
                    r += ((-1) ** _parity(a, mask)) * (kk.conj().T @ kk)
                refls.append((i, r))
            if pure:
                base = reduce_pair(rho)
                twisted = rho
                for i, r in refls:
                    twisted = lay.apply(twisted, r, f"p{i}")
                corr = reduce_pair(twisted)
            else:
                base = _partial_onto(lay, rho, f"p{player}")
                twisted = rho
                for i, r in refls:
                    twisted = lay.embed(r, f"p{i}") @ twisted
                corr = _partial_onto(lay, twisted, f"p{player}")
            sign = (-1) ** pred.target
            for a_idx, a in enumerate(my_meas.labels):
                fa = (-1) ** _parity(a, pred.masks[player])
                g[a_idx] += q.prob * (base + sign * fa * corr) / 2
            continue
        sets = [
            list(zip(strat.measurement(i, lab).ops, strat.measurement(i, lab).labels))
            for i, lab in others
        ]
        for combo in itertools.product(*sets):
            answers_map = {i: a for (i, _lab), (_k, a) in zip(others, combo)}
            if pure:
                context = rho
                for (i, _lab), (kk, _a) in zip(others, combo):
                    context = lay.apply(context, kk.conj().T @ kk, f"p{i}")
            else:
                context = np.eye(lay.dim, dtype=complex)
                for (i, _lab), (kk, _a) in zip(others, combo):
                    context = context @ lay.embed(kk.conj().T @ kk, f"p{i}")
            for a_idx, my_answer in enumerate(my_meas.labels):
                answers_map[player] = my_answer
                full = tuple(
                    answers_map[i]
                    for i, lab in enumerate(q.per_player)
                    if lab is not None
                )
                if isinstance(pred, ScalarTable):
                    w, ref_op = pred.weight(full), None
                elif isinstance(pred, XorParity):
                    bits = 0
                    for i, a in answers_map.items():
                        mask = pred.masks[i]
                        if mask is not None:
                            bits ^= _parity(a, mask)
                    w = 1.0 if bits == pred.target else 0.0
                    ref_op = None
                else:
                    ref_op, w = pred.op(full), 1.0
                    if ref_op is None:
                        continue
                if w == 0.0:
                    continue
                if pure:
                    wvec = context
                    if ref_op is not None:
                        wvec = lay.apply(wvec, ref_op, "ref")
                    reduced = reduce_pair(wvec)
                else:
                    op_full = context
                    if ref_op is not None:
                        op_full = context @ lay.embed(ref_op, "ref")
                    reduced = _partial_onto(lay, op_full @ rho, f"p{player}")
                g[a_idx] += q.prob * w * reduced
    return [(m + m.conj().T) / 2 for m in g]


def _partial_onto(lay, mat, name) -> np.ndarray:
    """Trace out everything but one register from an operator product."""
    k = len(lay.dims)
    axes = [lay.axis(name)]
    t = mat.reshape(lay.dims * 2)
    kk = k
    for a in sorted((x for x in range(k) if x not in axes), reverse=True):
        t = np.trace(t, axis1=a, axis2=a + kk)
        kk -= 1
    d = lay.dims[axes[0]]
    return t.reshape(d, d)


def _top_eigenvector(op: np.ndarray, warm: np.ndarray | None = None) -> np.ndarray:
    """Leading eigenvector of a Hermitian operator.

    Small operators go through the dense solver; larger ones through
    Lanczos with the previous state as the starting vector, falling back
    to dense if the iteration stalls.
    """
    n = op.shape[0]
    if n <= 64:
        _vals, vecs = np.linalg.eigh(op)
        return vecs[:, -1]
    v0 = warm if warm is not None and warm.ndim == 1 else None
    try:
        _vals, vecs = scipy.sparse.linalg.eigsh(op, k=1, which="LA", v0=v0)
        return vecs[:, 0]
    except scipy.sparse.linalg.ArpackError:
        _vals, vecs = np.linalg.eigh(op)
        return vecs[:, -1]


def seesaw(
    game: GameSpec,
    player_dims,
    seed: int = 0,
    iters: int = 30,
    restarts: int = 3,
    initial: Strategy | None = None,
    free: set | None = None,
):
    """Alternating optimization over measurements and the shared state.

    ``free`` restricts which (player, question label) measurements move;
    everything else stays fixed (used for honest-by-convention games).
    Measurement steps are exact best responses for two outcomes and
    monotone exchange passes otherwise; the state step takes the top
    eigenvector of the game operator.  Returns (best value, strategy).
    """
    game.validate()
    rng = np.random.default_rng(seed)
    dims = tuple(player_dims)
    lay_dim = game.referee_dim
    for d in dims:
        lay_dim *= d
    if lay_dim > DENSE_DIM_LIMIT:
        raise ResourceGuardError(f"seesaw at dimension {lay_dim} exceeds the guard")

    all_pairs = sorted(
        {
            (i, q.per_player[i])
            for q in game.questions
            for i in range(game.n_players)
            if q.per_player[i] is not None
        },
        key=repr,
    )
    movable = all_pairs if free is None else [p for p in all_pairs if p in free]

    best_val, best_strat = -1.0, None
    for restart in range(max(1, restarts)):
        if initial is not None and restart == 0:
            strat = Strategy(
                state=initial.state.copy(),
                player_dims=dims,
                measurements=dict(initial.measurements),
            )
        else:
            meas = {}
            src = initial.measurements if initial is not None else {}
            for (i, lab) in all_pairs:
                if (i, lab) in movable or (i, lab) not in src:
                    n_out = len(game.answers[(i, lab)])
                    m = qcore.random_projective(dims[i], n_out, rng)
                    meas[(i, lab)] = qcore.Measurement(
                        ops=m.ops, labels=tuple(game.answers[(i, lab)])
                    )
                else:
                    meas[(i, lab)] = src[(i, lab)]
            strat = Strategy(
                state=qcore.random_pure(lay_dim, rng),
                player_dims=dims,
                measurements=meas,
            )
        lay = _strategy_layout(game, strat)
        for _ in range(max(1, iters)):
            for i in sorted({p for p, _ in movable}):
                labels = [lab for p, lab in movable if p == i]
                _best_response(game, strat, lay, i, labels)
            op = _game_operator(game, strat, lay)
            strat.state = _top_eigenvector(op, warm=strat.state)
        v = value(game, strat)
        if v > best_val:
            best_val, best_strat = v, strat
    return best_val, best_strat


# ---------------------------------------------------------------------------
# Monte Carlo estimation
# ---------------------------------------------------------------------------


def monte_carlo_value(
    game: GameSpec, strat: Strategy, n_samples: int = 10_000, seed: int = 0
) -> tuple[float, float]:
    """Sample the game: exact per-question acceptance, Bernoulli draws.

    Returns (estimate, standard error).  Sampling is over questions and a
    single accept/reject coin per sample with the exact acceptance
    probability, so the estimator is unbiased with variance <= 1/(4 n).
    """
    game.validate()
    lay = _strategy_layout(game, strat)
    rng = np.random.default_rng(seed)
    probs = np.array([q.prob for q in game.questions])
    probs = probs / probs.sum()
    idx = rng.choice(len(game.questions), size=n_samples, p=probs)
    hits = 0
    cache: dict[int, float] = {}
    for j in idx:
        j = int(j)
        if j not in cache:
            q = game.questions[j]
            if isinstance(q.predicate, XorParity):
                p = _xor_question_value(game, strat, lay, q)
            else:
                p = _enumerated_question_value(game, strat, lay, q)
            cache[j] = min(1.0, max(0.0, p))
        hits += int(rng.random() < cache[j])
    est = hits / n_samples
    se = float(np.sqrt(max(est * (1 - est), 1e-12) / n_samples))
    return est, se
