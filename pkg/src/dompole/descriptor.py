"""Descriptor systems, state-space reduction, and resolvent machinery.

A descriptor system is the quintuple (E, J, B, C, D) with
``E = diag(1,...,1,0,...,0)`` separating dynamic from algebraic variables.
With the blocks ``J1 = J[:n,:n]``, ``J2 = J[:n,n:]``, ``J3 = J[n:,:n]``,
``J4 = J[n:,n:]`` the equivalent dense state-space form is

    A = J1 - J2 J4^-1 J3      b = B_d - J2 J4^-1 B_a
    c = C_d - J3^T J4^-T C_a  d = D - C_a^T J4^-1 B_a

and the transfer function is ``h(s) = C^T (sE - J)^-1 B + D``. The sparse
side never forms A; it works through solves with ``J - sE``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import mmio
from .sparsela import PIVOT_RTOL, SingularMatrixError, SparseMatrix, factorize, shifted

__all__ = [
    "DescriptorSystem",
    "StateSpaceSystem",
    "TransferSample",
    "ValidationReport",
    "VanishingNormalizerError",
    "ManifestError",
    "Manifest",
    "validate",
    "block_nnz",
    "reduce_to_state_space",
    "eval_transfer",
    "apply_resolvent",
    "normalized_vectors",
    "load_manifest",
    "save_manifest",
    "load_system",
]


class VanishingNormalizerError(ArithmeticError):
    """C^T (J - sE)^-1 B vanished; s sits at or near a transmission zero."""


class ManifestError(ValueError):
    """Malformed or inconsistent system manifest."""


@dataclass(frozen=True)
class DescriptorSystem:
    """Sparse (E, J, B, C, D) quintuple with ``ndyn`` dynamic variables."""

    J: SparseMatrix
    ndyn: int
    B: np.ndarray
    C: np.ndarray
    D: complex = 0j

    def __post_init__(self):
        if self.J.nrows != self.J.ncols:
            raise ValueError("J must be square")
        N = self.J.nrows
        if not 1 <= self.ndyn <= N:
            raise ValueError(f"ndyn must lie in [1, {N}], got {self.ndyn}")
        object.__setattr__(self, "B", np.ascontiguousarray(self.B, dtype=np.complex128))
        object.__setattr__(self, "C", np.ascontiguousarray(self.C, dtype=np.complex128))
        object.__setattr__(self, "D", complex(self.D))
        if self.B.shape != (N,) or self.C.shape != (N,):
            raise ValueError("B and C must be vectors of length N")

    @property
    def order(self):
        return self.J.nrows

    @classmethod
    def from_dense_state(cls, A, b, c, d=0j):
        """Wrap a dense state-space model (E = I, no algebraic block)."""
        A = np.atleast_2d(np.asarray(A, dtype=np.complex128))
        return cls(SparseMatrix.from_dense(A), A.shape[0], b, c, d)

    @classmethod
    def from_state_space(cls, ss):
        return cls.from_dense_state(ss.A, ss.b, ss.c, ss.d)


@dataclass(frozen=True)
class StateSpaceSystem:
    """Dense (A, b, c, d) model; the reference side of every cross-check."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=np.complex128)))
        object.__setattr__(self, "b", np.ascontiguousarray(self.b, dtype=np.complex128))
        object.__setattr__(self, "c", np.ascontiguousarray(self.c, dtype=np.complex128))
        object.__setattr__(self, "d", complex(self.d))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.b.shape != (n,) or self.c.shape != (n,):
            raise ValueError("b and c must be vectors matching A")

    @property
    def order(self):
        return self.A.shape[0]

    def transfer(self, s):
        """Evaluate ``c^T (sI - A)^-1 b + d`` by a dense solve."""
        n = self.order
        m = complex(s) * np.eye(n, dtype=np.complex128) - self.A
        return complex(self.c @ np.linalg.solve(m, self.b) + self.d)


class TransferSample(NamedTuple):
    s: complex
    value: complex


@dataclass
class ValidationReport:
    order: int
    ndyn: int
    n_algebraic: int
    nnz: int
    density_pct: float
    block_nnz: dict
    j4_nonsingular: bool
    notes: list = field(default_factory=list)

    @property
    def ok(self):
        return self.j4_nonsingular and not self.notes


def block_nnz(J, ndyn):
    """Stored-entry counts of the J1, J2, J3, J4 partition blocks."""
    n = ndyn
    sp = J.to_scipy()
    return {
        "J1": int(sp[:n, :n].nnz),
        "J2": int(sp[:n, n:].nnz),
        "J3": int(sp[n:, :n].nnz),
        "J4": int(sp[n:, n:].nnz),
    }


def validate(sys):
    """Dimension, density, and algebraic-block checks; failures go in notes."""
    N = sys.order
    n = sys.ndyn
    m = N - n
    blocks = block_nnz(sys.J, n)
    j4_ok = True
    notes = []
    if m > 0:
        j4 = SparseMatrix.from_scipy(sys.J.to_scipy()[n:, n:])
        try:
            factorize(j4)
        except SingularMatrixError as exc:
            j4_ok = False
            notes.append(f"algebraic block singular: {exc}")
    return ValidationReport(
        order=N,
        ndyn=n,
        n_algebraic=m,
        nnz=sys.J.nnz,
        density_pct=100.0 * sys.J.nnz / (N * N),
        block_nnz=blocks,
        j4_nonsingular=j4_ok,
        notes=notes,
    )


def _lu_j4(J4):
    """Dense LU of the algebraic block, with a singularity guard."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(J4)
    diag = np.abs(np.diag(lu))
    scale = np.abs(J4).max() if J4.size else 0.0
    if J4.size and (diag.min() <= PIVOT_RTOL * max(scale, 1e-300)):
        raise SingularMatrixError("algebraic block J4 is singular")
    return lu, piv


def reduce_to_state_space(sys, max_order=4000):
    """Eliminate the algebraic block and return the dense (A, b, c, d) model.

    Dense reference work only; refuses systems above ``max_order``.
    """
    N = sys.order
    if N > max_order:
        raise ValueError(f"system order {N} exceeds dense reduction limit {max_order}")
    n = sys.ndyn
    Jd = sys.J.to_dense()
    J1 = Jd[:n, :n]
    if n == N:
        return StateSpaceSystem(J1, sys.B, sys.C, sys.D)
    J2 = Jd[:n, n:]
    J3 = Jd[n:, :n]
    J4 = Jd[n:, n:]
    Bd, Ba = sys.B[:n], sys.B[n:]
    Cd, Ca = sys.C[:n], sys.C[n:]
    lu = _lu_j4(J4)
    A = J1 - J2 @ scipy.linalg.lu_solve(lu, J3)
    t = scipy.linalg.lu_solve(lu, Ba)
    b = Bd - J2 @ t
    c = Cd - J3.T @ scipy.linalg.lu_solve(lu, Ca, trans=1)
    d = sys.D - Ca @ t
    return StateSpaceSystem(A, b, c, d)


def eval_transfer(sys, s):
    """Sample ``h(s) = C^T (sE - J)^-1 B + D`` through one sparse solve."""
    s = complex(s)
    fac = factorize(shifted(sys.J, sys.ndyn, s), shift=s)
    x = fac.solve(sys.B)
    # (sE - J) = -(J - sE)
    return TransferSample(s, complex(-(sys.C @ x) + sys.D))


def apply_resolvent(sys, s, x):
    """Apply ``(A - sI)^-1`` to a dynamic-block vector without forming A.

    Solves the full system ``(J - sE) (z; w) = (x; 0)`` and returns the
    dynamic part z.
    """
    n = sys.ndyn
    x = np.asarray(x, dtype=np.complex128)
    if x.shape != (n,):
        raise ValueError(f"x must have length ndyn = {n}")
    rhs = np.zeros(sys.order, dtype=np.complex128)
    rhs[:n] = x
    fac = factorize(shifted(sys.J, n, s), shift=s)
    return fac.solve(rhs)[:n]


def normalized_vectors(sys, s, min_normalizer=0.0):
    """Normalized right/left resolvent directions at shift s.

        xcol = (J - sE)^-1 B / nu,   ycol = (J^T - sE)^-1 C / nu,
        nu   = C^T (J - sE)^-1 B.

    One factorization serves both solves because E is diagonal. Raises
    VanishingNormalizerError when ``|nu| <= min_normalizer`` (or nu is exactly
    zero), which signals a transmission zero near s.
    """
    s = complex(s)
    fac = factorize(shifted(sys.J, sys.ndyn, s), shift=s)
    xraw = fac.solve(sys.B)
    nu = complex(sys.C @ xraw)
    if nu == 0 or abs(nu) <= min_normalizer:
        raise VanishingNormalizerError(
            f"normalizer {nu!r} at shift {s!r} is below {min_normalizer:g}"
        )
    yraw = fac.solve(sys.C, transposed=True)
    return xraw / nu, yraw / nu, nu


# ---------------------------------------------------------------------------
# Manifest files: plain "key = value" text pointing at Matrix Market data.


@dataclass
class Manifest:
    jacobian_path: Path
    b_path: Path
    c_path: Path
    ndyn: int
    d: complex = 0j
    ground_truth_path: Path | None = None


_REQUIRED_KEYS = ("jacobian", "b", "c", "ndyn")
_KNOWN_KEYS = _REQUIRED_KEYS + ("d_re", "d_im", "ground_truth")


def load_manifest(path):
    """Parse a ``key = value`` manifest; paths resolve relative to the file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ManifestError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip().lower()
        if key not in _KNOWN_KEYS:
            raise ManifestError(f"{path}:{lineno}: unknown key '{key}'")
        values[key] = val.strip()
    missing = [k for k in _REQUIRED_KEYS if k not in values]
    if missing:
        raise ManifestError(f"{path}: missing keys: {', '.join(missing)}")
    base = path.parent
    try:
        ndyn = int(values["ndyn"])
        d = complex(float(values.get("d_re", "0")), float(values.get("d_im", "0")))
    except ValueError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    gt = values.get("ground_truth")
    return Manifest(
        jacobian_path=base / values["jacobian"],
        b_path=base / values["b"],
        c_path=base / values["c"],
        ndyn=ndyn,
        d=d,
        ground_truth_path=(base / gt) if gt else None,
    )


def save_manifest(path, manifest):
    path = Path(path)
    base = path.parent

    def rel(p):
        p = Path(p)
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    lines = [
        f"jacobian = {rel(manifest.jacobian_path)}",
        f"b = {rel(manifest.b_path)}",
        f"c = {rel(manifest.c_path)}",
        f"ndyn = {manifest.ndyn}",
        f"d_re = {repr(manifest.d.real)}",
        f"d_im = {repr(manifest.d.imag)}",
    ]
    if manifest.ground_truth_path is not None:
        lines.append(f"ground_truth = {rel(manifest.ground_truth_path)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_system(manifest):
    """Load the DescriptorSystem referenced by a Manifest (or manifest path)."""
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    try:
        J = mmio.read_matrix_market(manifest.jacobian_path)
        B = mmio.read_vector(manifest.b_path)
        C = mmio.read_vector(manifest.c_path)
    except (OSError, mmio.MatrixMarketError) as exc:
        raise ManifestError(f"cannot load system data: {exc}") from exc
    if J.nrows != J.ncols:
        raise ManifestError(f"Jacobian is {J.nrows}x{J.ncols}, expected square")
    if not 1 <= manifest.ndyn <= J.nrows:
        raise ManifestError(
            f"ndyn = {manifest.ndyn} inconsistent with matrix order {J.nrows}"
        )
    if len(B) != J.nrows or len(C) != J.nrows:
        raise ManifestError("B/C length does not match the Jacobian order")
    return DescriptorSystem(J=J, ndyn=manifest.ndyn, B=B, C=C, D=manifest.d)
