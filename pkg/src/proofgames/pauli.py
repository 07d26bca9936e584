"""Signed Pauli-operator arithmetic in symplectic (bitmask) form.

An n-qubit Pauli operator is stored as ``i**phase_exp * X^x * Z^z`` where
``x`` and ``z`` are n-bit masks (bit u = qubit u) and the X factors stand to
the left of the Z factors.  Qubit 0 is the leftmost letter of the string form
and the most significant Kronecker factor of the dense form, so strings read
the same way tensor products are written.

All arithmetic is exact integer arithmetic; dense matrices are only produced
on demand and are guarded by :data:`proofgames.config.DENSE_QUBIT_LIMIT`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .config import DENSE_QUBIT_LIMIT, ResourceGuardError

_PHASE_CHARS = {0: "", 1: "i", 2: "-", 3: "-i"}

_LETTERS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
}


@dataclass(frozen=True)
class PauliOp:
    """A signed n-qubit Pauli operator ``i**phase_exp * X^x_mask * Z^z_mask``.

    Parameters
    ----------
    n : int
        Number of qubits.
    x_mask, z_mask : int
        Bitmasks of X and Z factors; bit u corresponds to qubit u.
    phase_exp : int
        Exponent of the global phase i, reduced mod 4.
    """

    n: int
    x_mask: int
    z_mask: int
    phase_exp: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("qubit count must be nonnegative")
        mask = (1 << self.n) - 1
        if self.x_mask & ~mask or self.z_mask & ~mask:
            raise ValueError("mask exceeds qubit count")
        object.__setattr__(self, "phase_exp", self.phase_exp % 4)

    # ----- structure -------------------------------------------------

    @property
    def weight(self) -> int:
        """Number of qubits acted on non-trivially."""
        return (self.x_mask | self.z_mask).bit_count()

    @property
    def support(self) -> tuple[int, ...]:
        m = self.x_mask | self.z_mask
        return tuple(u for u in range(self.n) if (m >> u) & 1)

    @property
    def is_identity_letterwise(self) -> bool:
        return self.x_mask == 0 and self.z_mask == 0

    @property
    def is_hermitian(self) -> bool:
        # (X^x Z^z)^dag = (-1)^{|x&z|} X^x Z^z, so hermiticity is a parity
        # condition between the phase and the number of Y letters.
        return (self.x_mask & self.z_mask).bit_count() % 2 == self.phase_exp % 2

    @property
    def is_xz_form(self) -> bool:
        """True when the operator is ``+/- X^x Z^z`` with no Y letters."""
        return (self.x_mask & self.z_mask) == 0 and self.phase_exp % 2 == 0

    @property
    def sign(self) -> int:
        """The sign of an XZ-form operator (+1 or -1)."""
        if not self.is_xz_form:
            raise ValueError("sign is defined for XZ-form operators only")
        return 1 if self.phase_exp == 0 else -1

    # ----- algebra ---------------------------------------------------

    def __mul__(self, other: "PauliOp") -> "PauliOp":
        return multiply(self, other)

    def __neg__(self) -> "PauliOp":
        return PauliOp(self.n, self.x_mask, self.z_mask, self.phase_exp + 2)

    def times_i(self, k: int = 1) -> "PauliOp":
        return PauliOp(self.n, self.x_mask, self.z_mask, self.phase_exp + k)

    def adjoint(self) -> "PauliOp":
        flips = (self.x_mask & self.z_mask).bit_count()
        return PauliOp(self.n, self.x_mask, self.z_mask, -self.phase_exp + 2 * flips)

    def letter(self, u: int) -> str:
        x = (self.x_mask >> u) & 1
        z = (self.z_mask >> u) & 1
        return "IXZY"[x + 2 * z]

    def to_string(self) -> str:
        letters = []
        n_y = 0
        for u in range(self.n):
            x = (self.x_mask >> u) & 1
            z = (self.z_mask >> u) & 1
            if x and z:
                letters.append("Y")
                n_y += 1
            elif x:
                letters.append("X")
            elif z:
                letters.append("Z")
            else:
                letters.append("I")
        # Y = i X Z, so the displayed prefix absorbs one i per Y letter.
        prefix = _PHASE_CHARS[(self.phase_exp - n_y) % 4]
        return prefix + "".join(letters)

    __str__ = to_string

    def __repr__(self):
        return f"PauliOp({self.to_string()!r})"


def identity(n: int) -> PauliOp:
    return PauliOp(n, 0, 0, 0)


def single(n: int, kind: str, u: int) -> PauliOp:
    """The weight-one operator with letter `kind` in {X, Z, Y} on qubit u."""
    if not 0 <= u < n:
        raise ValueError(f"qubit index {u} out of range for n={n}")
    bit = 1 << u
    if kind == "X":
        return PauliOp(n, bit, 0, 0)
    if kind == "Z":
        return PauliOp(n, 0, bit, 0)
    if kind == "Y":
        return PauliOp(n, bit, bit, 1)
    raise ValueError(f"unknown letter {kind!r}")


def from_string(s: str) -> PauliOp:
    """Parse ``[sign]letters`` such as ``-XZIIXZII`` or ``iYII``."""
    body = s
    phase = 0
    for prefix, p in (("-i", 3), ("i", 1), ("-", 2), ("+", 0)):
        if body.startswith(prefix):
            phase = p
            body = body[len(prefix):]
            break
    x = z = 0
    for u, ch in enumerate(body):
        if ch == "X":
            x |= 1 << u
        elif ch == "Z":
            z |= 1 << u
        elif ch == "Y":
            x |= 1 << u
            z |= 1 << u
            phase += 1
        elif ch != "I":
            raise ValueError(f"unknown letter {ch!r} in {s!r}")
    return PauliOp(len(body), x, z, phase)


def multiply(a: PauliOp, b: PauliOp) -> PauliOp:
    """Exact product of two Pauli operators on the same qubit count."""
    if a.n != b.n:
        raise ValueError("operator sizes differ")
    # Moving Z^z1 through X^x2 picks up (-1)^{|z1 & x2|}.
    phase = a.phase_exp + b.phase_exp + 2 * (a.z_mask & b.x_mask).bit_count()
    return PauliOp(a.n, a.x_mask ^ b.x_mask, a.z_mask ^ b.z_mask, phase)


def commutes(a: PauliOp, b: PauliOp) -> bool:
    """True when the two operators commute (symplectic form vanishes)."""
    if a.n != b.n:
        raise ValueError("operator sizes differ")
    s = (a.x_mask & b.z_mask).bit_count() + (a.z_mask & b.x_mask).bit_count()
    return s % 2 == 0


def to_matrix(p: PauliOp) -> np.ndarray:
    """Dense 2^n x 2^n matrix of the operator; qubit 0 is the leading factor."""
    if p.n > DENSE_QUBIT_LIMIT:
        raise ResourceGuardError(
            f"dense Pauli matrix on {p.n} qubits exceeds the "
            f"{DENSE_QUBIT_LIMIT}-qubit guard"
        )
    out = np.array([[1.0 + 0j]])
    for u in range(p.n):
        x = (p.x_mask >> u) & 1
        z = (p.z_mask >> u) & 1
        m = _LETTERS["I"]
        if x:
            m = m @ _LETTERS["X"]
        if z:
            m = m @ _LETTERS["Z"]
        out = np.kron(out, m)
    return (1j ** p.phase_exp) * out


def canonical_key(p: PauliOp) -> tuple[int, str]:
    return (p.weight, p.to_string())


# ---------------------------------------------------------------------------
# enumerations
# ---------------------------------------------------------------------------


def enumerate_pauli_nk(n: int, k: int) -> list[PauliOp]:
    """All positive-sign XZ-form operators of weight 1..k on n qubits.

    Ordered by (weight, string).  The count is sum_w C(n, w) 2^w.
    """
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    out = []
    for w in range(1, k + 1):
        for supp in itertools.combinations(range(n), w):
            for letters in itertools.product("XZ", repeat=w):
                x = z = 0
                for u, ch in zip(supp, letters):
                    if ch == "X":
                        x |= 1 << u
                    else:
                        z |= 1 << u
                out.append(PauliOp(n, x, z, 0))
    out.sort(key=canonical_key)
    return out


def enumerate_power_nk(
    n: int, k: int, strict: bool = False
) -> list[tuple[PauliOp, ...]]:
    """Size-k pairwise-commuting sets of XZ-form operators on a size-k support.

    By default a set qualifies when the union of its members' supports fits
    inside a single size-k set of qubits (members of weight < k allowed).
    With ``strict=True`` every member must have weight exactly k.
    Sets are returned as tuples sorted by the canonical member order; the
    list itself is sorted and duplicate-free.
    """
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    per_support = comb(3**k - 1, k)
    if per_support * comb(n, k) > 5_000_000:
        raise ResourceGuardError(
            f"commuting-set enumeration at (n={n}, k={k}) exceeds the guard"
        )
    seen: set[tuple[tuple[int, str], ...]] = set()
    out = []
    for supp in itertools.combinations(range(n), k):
        supp_mask = 0
        for u in supp:
            supp_mask |= 1 << u
        members = []
        for p in enumerate_pauli_nk(n, k):
            if (p.x_mask | p.z_mask) & ~supp_mask:
                continue
            if strict and p.weight != k:
                continue
            members.append(p)
        for combo in itertools.combinations(members, k):
            ok = all(
                commutes(a, b) for a, b in itertools.combinations(combo, 2)
            )
            if not ok:
                continue
            key = tuple(canonical_key(p) for p in combo)
            if key in seen:
                continue
            seen.add(key)
            out.append(combo)
    out.sort(key=lambda c: tuple(canonical_key(p) for p in c))
    return out


# ---------------------------------------------------------------------------
# stabilizer codes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilizerCode:
    """A stabilizer code given by generators plus one logical X/Z pair."""

    n: int
    generators: tuple[PauliOp, ...]
    logical_x: PauliOp
    logical_z: PauliOp

    def stabilizer_group(self) -> list[PauliOp]:
        """All 2^g products of generator subsets, in subset-mask order."""
        out = []
        for mask in range(1 << len(self.generators)):
            p = identity(self.n)
            for i, g in enumerate(self.generators):
                if (mask >> i) & 1:
                    p = multiply(p, g)
            out.append(p)
        return out

    def projector(self) -> np.ndarray:
        """Dense projector onto the code space, prod_g (I + g)/2."""
        dim = 1 << self.n
        proj = np.eye(dim, dtype=complex)
        for g in self.generators:
            proj = proj @ (np.eye(dim) + to_matrix(g)) / 2
        return proj

    def codeword(self) -> np.ndarray:
        """Canonical codeword: the normalized first nonzero projector column."""
        proj = self.projector()
        norms = np.linalg.norm(proj, axis=0)
        j = int(np.argmax(norms > 1e-9))
        if norms[j] <= 1e-9:
            raise ValueError("projector vanishes; not a stabilizer group")
        return np.asarray(proj[:, j] / norms[j])

    def rank(self) -> int:
        return 1 << (self.n - len(self.generators))


def eight_qubit_code() -> StabilizerCode:
    """The eight-qubit code whose XZ-form stabilizer elements drive the games.

    Generators: the all-X row, the alternating XZ row, and four YY pairs
    marching across the register; logicals XXXXIIII and XZIIXZII.
    """
    gens = (
        from_string("XXXXXXXX"),
        from_string("XZXZXZXZ"),
        from_string("YYIIIIII"),
        from_string("IIYYIIII"),
        from_string("IIIIYYII"),
        from_string("IIIIIIYY"),
    )
    return StabilizerCode(
        n=8,
        generators=gens,
        logical_x=from_string("XXXXIIII"),
        logical_z=from_string("XZIIXZII"),
    )


def xz_stabilizer_subset(code: StabilizerCode) -> list[PauliOp]:
    """The non-identity XZ-form stabilizer elements, canonically ordered."""
    out = [
        p
        for p in code.stabilizer_group()
        if p.is_xz_form and not p.is_identity_letterwise
    ]
    out.sort(key=canonical_key)
    return out


def ghz_stabilizer(r: int) -> list[PauliOp]:
    """Generators of the r-party GHZ stabilizer: X^r and adjacent ZZ pairs."""
    if r < 2:
        raise ValueError("need at least two parties")
    gens = [PauliOp(r, (1 << r) - 1, 0, 0)]
    for i in range(r - 1):
        gens.append(PauliOp(r, 0, (0b11 << i), 0))
    return gens
