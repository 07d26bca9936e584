"""Verifier circuits, protocol values, and strategy optimization.

A protocol is two fixed-length circuits V1, V2 over Toffoli and
paired-Hadamard gates acting on the verifier's work register V and one
message register M_i per prover.  Between the circuits each prover applies
an arbitrary unitary W_i to M_i and a private register P_i.  The protocol
accepts when the first work qubit reads 1, and the value of a strategy is
that acceptance probability on verifier input |0...0>.

Gate grammar (one gate per line, 1-based consecutive time slots):

    t H a b        paired Hadamard on qubits a, b (same register group)
    t TOF a b c    Toffoli with controls a, b and target c; a = b is the
                   single-control (CNOT) degenerate form

Qubits are numbered globally: 0..q_v-1 are V, then q_m per prover.
A verifier file is ``r``, ``qv``, ``qm`` headers followed by ``[v1]`` and
``[v2]`` gate blocks; see :func:`parse_verifier`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import DENSE_DIM_LIMIT, ResourceGuardError
from . import qcore

log = logging.getLogger(__name__)

_H2 = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


class VerifierFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]

    def __str__(self):
        return f"{self.kind} " + " ".join(map(str, self.qubits))


@dataclass(frozen=True)
class VerifierSpec:
    r: int
    q_v: int
    q_m: int
    v1: tuple[Gate, ...]
    v2: tuple[Gate, ...]

    @property
    def n_qubits(self) -> int:
        return self.q_v + self.r * self.q_m

    @property
    def gates_per_circuit(self) -> int:
        return len(self.v1)

    @property
    def turns(self) -> int:
        """Total time steps: both circuits plus the prover round."""
        return 2 * len(self.v1) + 1

    def qubit_group(self, q: int) -> tuple[str, int]:
        """("V", 0) for work qubits, ("M", i) for prover i's message qubits."""
        if q < self.q_v:
            return ("V", 0)
        return ("M", (q - self.q_v) // self.q_m)


def validate_verifier(spec: VerifierSpec) -> VerifierSpec:
    """Check the gate grammar; returns the spec unchanged or raises."""
    if spec.r < 1 or spec.q_v < 1 or spec.q_m < 1:
        raise VerifierFormatError("need r, q_v, q_m >= 1")
    if len(spec.v1) != len(spec.v2):
        raise VerifierFormatError("V1 and V2 must have the same gate count")
    if not spec.v1:
        raise VerifierFormatError("circuits must contain at least one gate")
    n = spec.n_qubits
    for label, circuit in (("v1", spec.v1), ("v2", spec.v2)):
        for pos, g in enumerate(circuit, start=1):
            where = f"{label} gate {pos}"
            if any(not 0 <= q < n for q in g.qubits):
                raise VerifierFormatError(f"{where}: qubit index out of range")
            if g.kind == "H":
                a, b = g.qubits
                if a == b:
                    raise VerifierFormatError(f"{where}: H pair must be distinct")
                if spec.qubit_group(a) != spec.qubit_group(b):
                    raise VerifierFormatError(
                        f"{where}: H pair must stay within one register group"
                    )
            elif g.kind == "TOF":
                c1, c2, t = g.qubits
                if t in (c1, c2):
                    raise VerifierFormatError(
                        f"{where}: Toffoli target collides with a control"
                    )
            else:
                raise VerifierFormatError(f"{where}: unknown gate kind {g.kind!r}")
    return spec


def parse_verifier(text: str) -> VerifierSpec:
    """Parse the verifier file format described in the module docstring."""
    header: dict[str, int] = {}
    blocks: dict[str, list[Gate]] = {"v1": [], "v2": []}
    current: str | None = None
    counters = {"v1": 0, "v2": 0}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower() in ("[v1]", "[v2]"):
            current = line.strip("[]").lower()
            continue
        parts = line.split()
        if current is None:
            if len(parts) != 2 or parts[0] not in ("r", "qv", "qm"):
                raise VerifierFormatError(f"bad header line: {raw!r}")
            header[parts[0]] = int(parts[1])
            continue
        counters[current] += 1
        if int(parts[0]) != counters[current]:
            raise VerifierFormatError(
                f"{current}: expected time slot {counters[current]}, got {parts[0]}"
            )
        kind = parts[1].upper()
        qubits = tuple(int(p) for p in parts[2:])
        if (kind, len(qubits)) not in (("H", 2), ("TOF", 3)):
            raise VerifierFormatError(f"bad gate line: {raw!r}")
        blocks[current].append(Gate(kind, qubits))
    missing = {"r", "qv", "qm"} - set(header)
    if missing:
        raise VerifierFormatError(f"missing header fields: {sorted(missing)}")
    spec = VerifierSpec(
        r=header["r"],
        q_v=header["qv"],
        q_m=header["qm"],
        v1=tuple(blocks["v1"]),
        v2=tuple(blocks["v2"]),
    )
    return validate_verifier(spec)


def format_verifier(spec: VerifierSpec) -> str:
    lines = [f"r {spec.r}", f"qv {spec.q_v}", f"qm {spec.q_m}"]
    for label, circuit in (("v1", spec.v1), ("v2", spec.v2)):
        lines.append(f"[{label}]")
        for t, g in enumerate(circuit, start=1):
            lines.append(f"{t} {g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# dense compilation
# ---------------------------------------------------------------------------


def gate_matrix(gate: Gate, n: int) -> np.ndarray:
    """Dense 2^n unitary of one gate; qubit 0 is the most significant bit."""
    dim = 1 << n
    if dim > DENSE_DIM_LIMIT:
        raise ResourceGuardError(f"gate matrix at dimension {dim} exceeds the guard")
    if gate.kind == "H":
        a, b = gate.qubits
        lay = qcore.RegisterLayout(
            tuple(f"q{i}" for i in range(n)), (2,) * n
        )
        return lay.embed(np.kron(_H2, _H2), (f"q{a}", f"q{b}"))
    c1, c2, t = gate.qubits
    idx = np.arange(dim)
    b1 = (idx >> (n - 1 - c1)) & 1
    b2 = (idx >> (n - 1 - c2)) & 1
    flip = np.where((b1 & b2) == 1, idx ^ (1 << (n - 1 - t)), idx)
    u = np.zeros((dim, dim), dtype=complex)
    u[flip, idx] = 1.0
    return u


def compile_unitary(spec: VerifierSpec) -> tuple[np.ndarray, np.ndarray]:
    """Dense unitaries of both circuits on the q_v + r q_m verifier qubits."""
    n = spec.n_qubits
    outs = []
    for circuit in (spec.v1, spec.v2):
        u = np.eye(1 << n, dtype=complex)
        for g in circuit:
            u = gate_matrix(g, n) @ u
        outs.append(u)
    return outs[0], outs[1]


# ---------------------------------------------------------------------------
# protocol value
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolStrategy:
    """Shared state psi on (M_1..M_r, P_1..P_r) plus one unitary per prover."""

    psi: np.ndarray
    wi: tuple[np.ndarray, ...]
    p_dims: tuple[int, ...]


def _protocol_layout(spec: VerifierSpec, p_dims) -> qcore.RegisterLayout:
    names = ["V"]
    dims = [1 << spec.q_v]
    for i in range(spec.r):
        names.append(f"M{i}")
        dims.append(1 << spec.q_m)
    for i in range(spec.r):
        names.append(f"P{i}")
        dims.append(p_dims[i])
    return qcore.RegisterLayout(tuple(names), tuple(dims))


def honest_strategy(spec: VerifierSpec, p_dims=None) -> ProtocolStrategy:
    """All-|1> messages, |0> private registers, identity prover unitaries."""
    p_dims = tuple(p_dims or (2,) * spec.r)
    m_dim = 1 << spec.q_m
    psi = np.array([1.0 + 0j])
    for _ in range(spec.r):
        m = np.zeros(m_dim, dtype=complex)
        m[-1] = 1.0  # all message qubits |1>
        psi = np.kron(psi, m)
    for d in p_dims:
        p = np.zeros(d, dtype=complex)
        p[0] = 1.0
        psi = np.kron(psi, p)
    wi = tuple(np.eye(m_dim * d, dtype=complex) for d in p_dims)
    return ProtocolStrategy(psi=psi, wi=wi, p_dims=p_dims)


def protocol_value(spec: VerifierSpec, strategy: ProtocolStrategy) -> float:
    """Acceptance probability of the strategy: ||P_acc V2 W V1 |0>|psi>||^2."""
    lay = _protocol_layout(spec, strategy.p_dims)
    u1, u2 = compile_unitary(spec)
    v0 = np.zeros(1 << spec.q_v, dtype=complex)
    v0[0] = 1.0
    vec = np.kron(v0, strategy.psi)
    circuit_regs = ["V"] + [f"M{i}" for i in range(spec.r)]
    vec = lay.apply(vec, u1, circuit_regs)
    for i, w in enumerate(strategy.wi):
        vec = lay.apply(vec, w, (f"M{i}", f"P{i}"))
    vec = lay.apply(vec, u2, circuit_regs)
    # Accept = first work qubit reads 1 = top half of the V index.
    t = vec.reshape(2, -1)
    return float(np.sum(np.abs(t[1]) ** 2))


@dataclass
class MapSeesawResult:
    value: float
    strategy: ProtocolStrategy
    restart_values: list[float]


def map_seesaw(
    spec: VerifierSpec,
    p_dims=None,
    seed: int = 0,
    iters: int = 80,
    restarts: int = 5,
) -> MapSeesawResult:
    """Alternating maximization of the protocol value.

    Blocks: the shared state (exact normalized back-propagation), each
    prover unitary (polar step on its environment contraction), and the
    implicit accepted-branch target.  Each sweep is monotone in the
    amplitude objective, so the reported value never decreases along a
    restart; the best restart wins.
    """
    p_dims = tuple(p_dims or (2,) * spec.r)
    lay = _protocol_layout(spec, p_dims)
    u1, u2 = compile_unitary(spec)
    circuit_regs = ["V"] + [f"M{i}" for i in range(spec.r)]
    v_dim = 1 << spec.q_v
    rest_dim = lay.dim // v_dim
    v0 = np.zeros(v_dim, dtype=complex)
    v0[0] = 1.0
    rng = np.random.default_rng(seed)

    def forward(psi, wi):
        vec = lay.apply(np.kron(v0, psi), u1, circuit_regs)
        for i, w in enumerate(wi):
            vec = lay.apply(vec, w, (f"M{i}", f"P{i}"))
        return lay.apply(vec, u2, circuit_regs)

    def accept_project(vec):
        t = vec.reshape(2, -1).copy()
        t[0] = 0.0
        return t.reshape(-1)

    best_val = -1.0
    best = None
    restart_values = []
    for _ in range(max(1, restarts)):
        psi = qcore.random_pure(rest_dim, rng)
        wi = [qcore.haar_unitary((1 << spec.q_m) * d, rng) for d in p_dims]
        for _ in range(max(1, iters)):
            out = forward(psi, wi)
            phi = accept_project(out)
            nrm = np.linalg.norm(phi)
            if nrm < 1e-12:
                # Nothing lands in the accepting branch: steer toward it.
                phi = np.zeros(lay.dim, dtype=complex)
                phi[lay.dim // 2] = 1.0
            else:
                phi /= nrm
            # Prover unitary steps: maximize Re <phi| U2 W U1 |0 psi>.
            for i in range(spec.r):
                a = lay.apply(phi, u2.conj().T, circuit_regs)
                b = lay.apply(np.kron(v0, psi), u1, circuit_regs)
                for j, w in enumerate(wi):
                    if j != i:
                        b = lay.apply(b, w, (f"M{j}", f"P{j}"))
                axes_i = [lay.axis(f"M{i}"), lay.axis(f"P{i}")]
                rest_axes = [k for k in range(len(lay.dims)) if k not in axes_i]
                bt = b.reshape(lay.dims)
                at = a.reshape(lay.dims)
                g = np.tensordot(bt, at.conj(), axes=(rest_axes, rest_axes))
                d = (1 << spec.q_m) * p_dims[i]
                g = g.reshape(d, d)
                uu, _, vv = np.linalg.svd(g)
                wi[i] = (uu @ vv).conj().T
            # State step: psi ∝ <0_V| U1^dag W^dag U2^dag |phi>.
            back = lay.apply(phi, u2.conj().T, circuit_regs)
            for i, w in enumerate(wi):
                back = lay.apply(back, w.conj().T, (f"M{i}", f"P{i}"))
            back = lay.apply(back, u1.conj().T, circuit_regs)
            slice0 = back.reshape(v_dim, rest_dim)[0]
            nrm = np.linalg.norm(slice0)
            if nrm > 1e-12:
                psi = slice0 / nrm
        strat = ProtocolStrategy(psi=psi, wi=tuple(wi), p_dims=p_dims)
        val = protocol_value(spec, strat)
        restart_values.append(val)
        if val > best_val:
            best_val, best = val, strat
    log.info("map_seesaw: best value %.12f over %d restarts", best_val, restarts)
    return MapSeesawResult(value=best_val, strategy=best, restart_values=restart_values)


# ---------------------------------------------------------------------------
# built-in fixtures
# ---------------------------------------------------------------------------


def toy_complete_verifier() -> VerifierSpec:
    """Three-qubit fixture with perfect honest acceptance.

    V2 copies the hot message qubit into work qubit 1 and then fires a
    Toffoli into the output qubit, so the honest all-ones message accepts
    with certainty; V1 is a cancelling Hadamard pair.
    """
    spec = VerifierSpec(
        r=1,
        q_v=2,
        q_m=1,
        v1=(Gate("H", (0, 1)), Gate("H", (0, 1))),
        v2=(Gate("TOF", (2, 2, 1)), Gate("TOF", (1, 2, 0))),
    )
    return validate_verifier(spec)


def toy_impossible_verifier() -> VerifierSpec:
    """Three-qubit fixture whose value is exactly zero for every strategy.

    The work register is never entangled with the messages (the Toffoli
    only ever fires into a uniform branch), and the final Hadamard pair
    returns it to |00>, so the output qubit reads 0 with certainty.
    """
    spec = VerifierSpec(
        r=1,
        q_v=2,
        q_m=1,
        v1=(Gate("TOF", (1, 2, 0)), Gate("H", (0, 1))),
        v2=(Gate("TOF", (1, 2, 0)), Gate("H", (0, 1))),
    )
    return validate_verifier(spec)
