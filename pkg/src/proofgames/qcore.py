"""State-dependent operator measures, register plumbing, and extraction tools.

Everything here works on explicit numpy arrays.  States are either pure
vectors or density matrices; measurements are tuples of operator
representatives K_a with sum K_a^dag K_a = I (projectors for projective
measurements, sqrt(M_a) as the default representative of a POVM element).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .config import DENSE_DIM_LIMIT, ATOL, ResourceGuardError


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Measurement:
    """A measurement as a tuple of operator representatives.

    Parameters
    ----------
    ops : tuple of ndarray
        Operator representative per outcome; sum of K^dag K must be I.
    labels : tuple
        One label per outcome.  Bit-tuple labels enable derived reflections.
    """

    ops: tuple
    labels: tuple

    def __post_init__(self):
        if len(self.ops) != len(self.labels):
            raise ValueError("one label per outcome required")

    @property
    def dim(self) -> int:
        return self.ops[0].shape[0]

    def validate(self, atol: float = 1e-9) -> None:
        total = sum(k.conj().T @ k for k in self.ops)
        if not np.allclose(total, np.eye(self.dim), atol=atol):
            raise ValueError("measurement operators do not resolve the identity")

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return np.array(
            [np.trace(k.conj().T @ k @ rho).real for k in self.ops]
        )


def projective_from_reflection(r: np.ndarray) -> Measurement:
    """Two-outcome measurement {(I+R)/2, (I-R)/2} with labels (0, 1)."""
    eye = np.eye(r.shape[0])
    return Measurement(ops=((eye + r) / 2, (eye - r) / 2), labels=(0, 1))


def is_reflection(r: np.ndarray, atol: float = 1e-9) -> bool:
    return bool(
        np.allclose(r, r.conj().T, atol=atol)
        and np.allclose(r @ r, np.eye(r.shape[0]), atol=atol)
    )


def joint_reflection_measurement(reflections) -> Measurement:
    """Jointly measure a commuting family; label bit j is member j's outcome.

    Outcome b has projector prod_j (I + (-1)^{b_j} R_j) / 2.
    """
    reflections = list(reflections)
    dim = reflections[0].shape[0]
    ops = []
    labels = []
    for b in range(1 << len(reflections)):
        m = np.eye(dim, dtype=complex)
        for j, r in enumerate(reflections):
            sign = -1 if (b >> j) & 1 else 1
            m = m @ (np.eye(dim) + sign * r) / 2
        ops.append(m)
        labels.append(b)
    return Measurement(ops=tuple(ops), labels=tuple(labels))


def derived_reflections(meas: Measurement, j: int) -> np.ndarray:
    """The reflection sum_b (-1)^{b_j} K_b^dag K_b for bit-tuple labels."""
    out = np.zeros((meas.dim, meas.dim), dtype=complex)
    for k, label in zip(meas.ops, meas.labels):
        bit = label[j] if isinstance(label, tuple) else (label >> j) & 1
        out += ((-1) ** bit) * (k.conj().T @ k)
    return out


# ---------------------------------------------------------------------------
# distances and consistency
# ---------------------------------------------------------------------------


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Half the trace norm of rho - sigma."""
    vals = np.linalg.eigvalsh(rho - sigma)
    return 0.5 * float(np.sum(np.abs(vals)))


def _rho_norm_sq(a: np.ndarray, rho: np.ndarray) -> float:
    return float(np.trace(a.conj().T @ a @ rho).real)


def dis_rho(m0, m1, rho: np.ndarray) -> float:
    """State-dependent distance between two measurements or two reflections.

    For measurements, returns sqrt(sum_a ||K0_a - K1_a||_rho^2).  Raw arrays
    are treated as reflections and compared by ||R0 - R1||_rho, i.e.
    sqrt(2 - 2 Re tr(R0 R1 rho)).
    """
    if isinstance(m0, np.ndarray) and isinstance(m1, np.ndarray):
        return float(np.sqrt(max(0.0, _rho_norm_sq(m0 - m1, rho))))
    if m0.labels != m1.labels:
        raise ValueError("measurements must share a label set")
    total = sum(
        _rho_norm_sq(k0 - k1, rho) for k0, k1 in zip(m0.ops, m1.ops)
    )
    return float(np.sqrt(max(0.0, total)))


def con_rho(m0, m1, rho: np.ndarray, dims: tuple[int, int]) -> float:
    """Consistency of two measurements across a bipartite state.

    ``rho`` lives on A (x) B with dimensions ``dims``; ``m0`` acts on A and
    ``m1`` on B.  Returns sum_a tr(rho (M0_a (x) M1_a)).  Reflections are
    promoted to their two-outcome measurements.
    """
    if isinstance(m0, np.ndarray):
        m0 = projective_from_reflection(m0)
    if isinstance(m1, np.ndarray):
        m1 = projective_from_reflection(m1)
    if m0.labels != m1.labels:
        raise ValueError("measurements must share a label set")
    da, db = dims
    if rho.shape[0] != da * db:
        raise ValueError("state dimension does not match dims")
    total = 0.0
    for k0, k1 in zip(m0.ops, m1.ops):
        e0 = k0.conj().T @ k0
        e1 = k1.conj().T @ k1
        total += np.trace(np.kron(e0, e1) @ rho).real
    return float(total)


def stabilization_defect(r: np.ndarray, rho: np.ndarray) -> float:
    """1 - Re tr(rho R): how far rho is from being fixed by the reflection."""
    return float(1.0 - np.trace(rho @ r).real)


# ---------------------------------------------------------------------------
# Naimark dilation
# ---------------------------------------------------------------------------


def naimark_dilate(povm: Measurement) -> tuple[np.ndarray, Measurement]:
    """Dilate a POVM to a projective measurement on H (x) C^k.

    Returns the isometry V = sum_a K_a (x) |a> and the projective
    measurement {I (x) |a><a|}; outcome statistics agree on every state.
    """
    d = povm.dim
    k = len(povm.ops)
    v = np.zeros((d * k, d), dtype=complex)
    for a, op in enumerate(povm.ops):
        sel = np.zeros((k, 1), dtype=complex)
        sel[a] = 1.0
        v += np.kron(op, sel)
    eye_d = np.eye(d)
    projs = []
    for a in range(k):
        pa = np.zeros((k, k), dtype=complex)
        pa[a, a] = 1.0
        projs.append(np.kron(eye_d, pa))
    return v, Measurement(ops=tuple(projs), labels=povm.labels)


# ---------------------------------------------------------------------------
# Jordan pairing of two reflections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JordanDecomposition:
    """Joint block form of two reflections.

    ``basis`` is a d x d unitary whose rows are the new basis vectors,
    ordered (s, l) with s in {0, 1} and l the block index, so that
    r1 = basis^dag (Z (x) I) basis exactly and r0 is block diagonal with
    angle theta_l in block l:  r0|_l = cos(theta_l) Z + sin(theta_l) X.
    """

    basis: np.ndarray
    angles: np.ndarray

    @property
    def blocks(self) -> int:
        return len(self.angles)

    def _two_level(self, op2: np.ndarray) -> np.ndarray:
        m = self.blocks
        big = np.kron(op2, np.eye(m))
        return self.basis.conj().T @ big @ self.basis

    def extracted_x(self) -> np.ndarray:
        """V^dag (X (x) I) V: the exact partner reflection of r1."""
        return self._two_level(np.array([[0, 1], [1, 0]], dtype=complex))

    def extracted_z(self) -> np.ndarray:
        return self._two_level(np.array([[1, 0], [0, -1]], dtype=complex))

    def reconstruct_r0(self) -> np.ndarray:
        m = self.blocks
        cz = np.kron(
            np.array([[1, 0], [0, -1]], dtype=complex), np.diag(np.cos(self.angles))
        )
        sx = np.kron(
            np.array([[0, 1], [1, 0]], dtype=complex), np.diag(np.sin(self.angles))
        )
        return self.basis.conj().T @ (cz + sx) @ self.basis


def jordan_extract(
    r0: np.ndarray, r1: np.ndarray, rho: np.ndarray | None = None,
    atol: float = 1e-9,
) -> tuple[JordanDecomposition, dict]:
    """Pair the eigenspaces of two traceless reflections into Jordan blocks.

    The +1 eigenspace of ``r1`` is rotated so the compression of ``r0`` is
    diagonal; each eigenvector u with compression value c = cos(theta) gets
    the exact partner v = (r0 - c) u / sin(theta) inside the -1 eigenspace.
    Joint eigenvectors (sin = 0) are paired with the leftover -1 vectors of
    matching r0 eigenvalue.  Blocks are sorted by angle.

    Returns the decomposition and a diagnostics dict; when ``rho`` is given
    the dict also reports dis_rho(r0, extracted X) and the anticommutation
    defect 1 + Re tr(rho r0 r1 r0 r1).
    """
    d = r0.shape[0]
    for name, r in (("r0", r0), ("r1", r1)):
        if not is_reflection(r, atol=1e-7):
            raise ValueError(f"{name} is not a reflection")
        if abs(np.trace(r)) > 1e-6:
            raise ValueError(f"{name} must be traceless")
    m = d // 2
    vals, vecs = np.linalg.eigh(r1)
    if not (np.sum(vals < 0) == m and np.sum(vals > 0) == m):
        raise ValueError("r1 eigenvalue split is not balanced")
    u_minus = vecs[:, :m]
    u_plus = vecs[:, m:]
    comp = u_plus.conj().T @ r0 @ u_plus
    cvals, cvecs = np.linalg.eigh(comp)
    us = u_plus @ cvecs

    blocks = []  # (theta, u, v)
    degenerate = []  # (c, u)
    assigned_v = []
    for l in range(m):
        c = float(np.clip(cvals[l], -1.0, 1.0))
        u = us[:, l]
        y = r0 @ u - c * u
        s = float(np.linalg.norm(y))
        if s > 1e-7:
            v = y / s
            blocks.append((float(np.arctan2(s, c)), u, v))
            assigned_v.append(v)
        else:
            degenerate.append((c, u))

    if degenerate:
        # Leftover -1 eigenspace of r1, orthogonal to the assigned partners.
        if assigned_v:
            vm = np.column_stack(assigned_v)
            proj = u_minus - vm @ (vm.conj().T @ u_minus)
        else:
            proj = u_minus
        uu, ss, _ = np.linalg.svd(proj, full_matrices=False)
        leftover = uu[:, ss > 1e-7]
        if leftover.shape[1] != len(degenerate):
            raise ValueError("eigenspace pairing mismatch in degenerate blocks")
        sub = leftover.conj().T @ r0 @ leftover
        svals, svecs = np.linalg.eigh(sub)
        left_vecs = leftover @ svecs
        left_sign = list(zip(np.round(svals).astype(int), left_vecs.T))
        for c, u in degenerate:
            want = -1 if c > 0 else 1
            for i, (sgn, v) in enumerate(left_sign):
                if sgn == want:
                    theta = 0.0 if c > 0 else float(np.pi)
                    blocks.append((theta, u, v))
                    left_sign.pop(i)
                    break
            else:
                raise ValueError("tracelessness violated: no partner available")

    blocks.sort(key=lambda t: t[0])
    basis = np.zeros((d, d), dtype=complex)
    for l, (_theta, u, v) in enumerate(blocks):
        basis[l, :] = u.conj()
        basis[m + l, :] = v.conj()
    decomp = JordanDecomposition(
        basis=basis, angles=np.array([b[0] for b in blocks])
    )

    report = {
        "r1_error": float(
            np.max(np.abs(decomp.extracted_z() - r1))
        ),
        "r0_error": float(np.max(np.abs(decomp.reconstruct_r0() - r0))),
    }
    if rho is not None:
        xhat = decomp.extracted_x()
        report["dis_x"] = dis_rho(r0, xhat, rho)
        word = r0 @ r1 @ r0 @ r1
        report["anticommute_defect"] = float(
            1.0 + np.trace(rho @ word).real
        )
    return decomp, report


# ---------------------------------------------------------------------------
# twirls
# ---------------------------------------------------------------------------


def depolarize_twirl(
    rho: np.ndarray, x_ref: np.ndarray, z_ref: np.ndarray
) -> np.ndarray:
    """Average rho over {I, X, Z, XZ} conjugations by the given reflections."""
    xz = x_ref @ z_ref
    return (
        rho
        + x_ref @ rho @ x_ref.conj().T
        + z_ref @ rho @ z_ref.conj().T
        + xz @ rho @ xz.conj().T
    ) / 4


# ---------------------------------------------------------------------------
# register layouts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegisterLayout:
    """An ordered collection of named registers with fixed dimensions."""

    names: tuple[str, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.dims):
            raise ValueError("names and dims must align")
        if len(set(self.names)) != len(self.names):
            raise ValueError("register names must be unique")

    @classmethod
    def of(cls, *pairs: tuple[str, int]) -> "RegisterLayout":
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def dim(self) -> int:
        out = 1
        for d in self.dims:
            out *= d
        return out

    def axis(self, name: str) -> int:
        return self.names.index(name)

    def dims_of(self, names) -> tuple[int, ...]:
        return tuple(self.dims[self.axis(n)] for n in names)

    def shaped(self, vec: np.ndarray) -> np.ndarray:
        return vec.reshape(self.dims)

    def apply(self, vec: np.ndarray, op: np.ndarray, names) -> np.ndarray:
        """Apply ``op`` (on the listed registers, in order) to a pure vector."""
        if isinstance(names, str):
            names = (names,)
        axes = [self.axis(n) for n in names]
        dims = [self.dims[a] for a in axes]
        t = vec.reshape(self.dims)
        opt = op.reshape(dims + dims)
        t = np.tensordot(opt, t, axes=(list(range(len(axes), 2 * len(axes))), axes))
        # tensordot puts the op's output axes first; restore layout order.
        t = np.moveaxis(t, list(range(len(axes))), axes)
        return t.reshape(-1)

    def expectation(self, vec: np.ndarray, op: np.ndarray, names) -> complex:
        return complex(np.vdot(vec, self.apply(vec, op, names)))

    def embed(self, op: np.ndarray, names) -> np.ndarray:
        """Dense matrix of op (x) identity, in layout order (guarded)."""
        if isinstance(names, str):
            names = (names,)
        if self.dim > DENSE_DIM_LIMIT:
            raise ResourceGuardError(
                f"dense embedding at dimension {self.dim} exceeds the guard"
            )
        axes = [self.axis(n) for n in names]
        rest = [a for a in range(len(self.dims)) if a not in axes]
        rest_dim = 1
        for a in rest:
            rest_dim *= self.dims[a]
        big = np.kron(op, np.eye(rest_dim))
        # big acts on (named..., rest...); permute into layout order.
        order = axes + rest
        perm = np.argsort(order)
        t = big.reshape(tuple(self.dims[a] for a in order) * 2)
        k = len(self.dims)
        t = np.transpose(t, list(perm) + [k + p for p in perm])
        return t.reshape(self.dim, self.dim)

    def partial_trace(self, rho: np.ndarray, keep) -> np.ndarray:
        """Trace out everything except the named registers (kept in order)."""
        if isinstance(keep, str):
            keep = (keep,)
        axes = [self.axis(n) for n in keep]
        k = len(self.dims)
        t = rho.reshape(self.dims * 2)
        drop = [a for a in range(k) if a not in axes]
        for a in sorted(drop, reverse=True):
            # Axes above `a` were never dropped (reverse order), so the
            # matching column axis sits exactly k positions later.
            t = np.trace(t, axis1=a, axis2=a + k)
            k -= 1
        # Remaining axes follow layout order; permute to requested order.
        current = sorted(axes)
        perm = [current.index(a) for a in axes]
        kk = len(axes)
        t = np.transpose(t, perm + [kk + p for p in perm])
        d = 1
        for a in axes:
            d *= self.dims[a]
        return t.reshape(d, d)


# ---------------------------------------------------------------------------
# random instances (seeded; used heavily by the test suites)
# ---------------------------------------------------------------------------


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_pure(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = rank or dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_reflection(
    dim: int, rng: np.random.Generator, traceless: bool = False
) -> np.ndarray:
    if traceless and dim % 2:
        raise ValueError("traceless reflections need even dimension")
    u = haar_unitary(dim, rng)
    if traceless:
        signs = np.array([1] * (dim // 2) + [-1] * (dim // 2))
    else:
        signs = rng.choice([1, -1], size=dim)
        if np.all(signs == signs[0]):
            signs[0] = -signs[0]
    return u @ np.diag(signs).astype(complex) @ u.conj().T


def random_projective(
    dim: int, outcomes: int, rng: np.random.Generator
) -> Measurement:
    """Haar-random projective measurement with roughly equal ranks."""
    u = haar_unitary(dim, rng)
    sizes = [dim // outcomes] * outcomes
    for i in range(dim % outcomes):
        sizes[i] += 1
    ops = []
    start = 0
    for s in sizes:
        cols = u[:, start : start + s]
        ops.append(cols @ cols.conj().T)
        start += s
    return Measurement(ops=tuple(ops), labels=tuple(range(outcomes)))
