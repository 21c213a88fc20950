"""Small-N master equation in the permutation-invariant Dicke basis.

N identical two-level atoms coupled to one truncated cavity mode::

    drho/dt = -i [H, rho] + kappa D[a] + gc D[J-]
              + sum_n ( gd D[s_n-] + gu D[s_n+] + gp D[s_nz] )

    H = (g/2) (a+ J- + a J+) + delta a+ a,     D[A] = A rho A+ - {A+A, rho}/2

With this normalisation of H the photon-number and coherence equations of
motion coincide with the mean-field moment equations for the same g.

Permutation-invariant density operators have the form
``rho = sum_j X_j (x) 1_{d_j}`` over the spin-j multiplets with multiplicity
``d_j``. The collective terms act inside each ``X_j``. A local jump sum
``sum_n A_n X A_n+`` couples ``j`` to ``j' in {j-1, j, j+1}``; by the
Wigner-Eckart theorem it equals ``K T X T+`` with ``T`` the Clebsch-Gordan
matrix of ``j (x) 1 -> j'``. The constants ``K`` follow from the trace
identities ``sum_n s_n+ s_n- = J_z + N/2``, ``sum_n s_n- s_n+ = N/2 - J_z``
and ``sum_n s_nz^2 = N``.
"""

from __future__ import annotations

import contextlib
import math
import os
import sys
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import expm_multiply, splu

from .errors import BudgetError, InvariantViolation, NumericalError, ValidationError
from .model import PhysicalParams

DEFAULT_MAX_DIM = 4_000_000  # superoperator dimension cap (vectorised state length)


# --- angular momentum ----------------------------------------------------------


def degeneracy(j: float, n_tls: int) -> int:
    """Number of spin-j multiplets among N spin-1/2 (exact integer)."""
    k = n_tls / 2 - j
    if k < 0 or abs(k - round(k)) > 1e-9:
        return 0
    k = int(round(k))
    return math.comb(n_tls, k) - (math.comb(n_tls, k - 1) if k >= 1 else 0)


def clebsch_gordan_j1(j: float, m: float, q: int, jp: float) -> float:
    """<j m; 1 q | j' m+q> with Condon-Shortley phases, j' in {j-1, j, j+1}."""
    big_m = m + q
    if abs(m) > j + 1e-9 or abs(big_m) > jp + 1e-9 or jp < 0:
        return 0.0
    two = 2 * j + 1
    if abs(jp - (j + 1)) < 1e-9:
        num = {
            1: (j + big_m) * (j + big_m + 1) / (two * (2 * j + 2)),
            0: (j - big_m + 1) * (j + big_m + 1) / (two * (j + 1)),
            -1: (j - big_m) * (j - big_m + 1) / (two * (2 * j + 2)),
        }[q]
        return math.sqrt(max(num, 0.0))
    if abs(jp - j) < 1e-9:
        if j == 0:
            return 0.0
        if q == 0:
            return big_m / math.sqrt(j * (j + 1))
        if q == 1:
            return -math.sqrt(max((j + big_m) * (j - big_m + 1), 0.0) / (2 * j * (j + 1)))
        return math.sqrt(max((j - big_m) * (j + big_m + 1), 0.0) / (2 * j * (j + 1)))
    if abs(jp - (j - 1)) < 1e-9:
        if q == 1:
            return math.sqrt(max((j - big_m) * (j - big_m + 1), 0.0) / (2 * j * two))
        if q == 0:
            return -math.sqrt(max((j - big_m) * (j + big_m), 0.0) / (j * two))
        return math.sqrt(max((j + big_m + 1) * (j + big_m), 0.0) / (2 * j * two))
    return 0.0


def _m_values(j: float) -> np.ndarray:
    return np.arange(-j, j + 0.5, 1.0)  # ascending m, index k = m + j


def spin_ops(j: float) -> tuple[np.ndarray, np.ndarray]:
    """(J_z, J+) for spin j in the ascending-m basis."""
    m = _m_values(j)
    jz = np.diag(m)
    jp = np.zeros((len(m), len(m)))
    for k in range(len(m) - 1):
        jp[k + 1, k] = math.sqrt(j * (j + 1) - m[k] * (m[k] + 1))
    return jz, jp


def cg_matrix(j: float, jp: float, q: int) -> np.ndarray:
    """T[m', m] = <j m; 1 q | j' m'> for m' = m + q."""
    mj, mjp = _m_values(j), _m_values(jp)
    t = np.zeros((len(mjp), len(mj)))
    for k, m in enumerate(mj):
        kp = m + q + jp
        if -1e-9 < kp < len(mjp) - 1 + 1e-9:
            t[int(round(kp)), k] = clebsch_gordan_j1(j, m, q, jp)
    return t


def _jump_coefficients(j: float, n_tls: int, q: int) -> dict[float, float]:
    """K_{j -> j'} for the local jump sum with spherical component q.

    Diagonal matrix elements of ``sum_n A+ A`` fix sum_j' x_j' CG^2. For
    q = 0 the three CG^2 profiles are linearly dependent, so the identity
    ``sum_n s_nz J+ s_nz = (N - 2) J+`` is added on the first off-diagonal.
    """
    targets = [jp for jp in (j - 1, j, j + 1) if jp >= 0 and degeneracy(jp, n_tls) > 0 and not (j == 0 and jp == 0)]
    ms = _m_values(j)
    if q == -1:
        rhs = ms + n_tls / 2
    elif q == 1:
        rhs = n_tls / 2 - ms
    else:
        rhs = np.full(len(ms), float(n_tls))
    cols = [np.array([clebsch_gordan_j1(j, m, q, jp) ** 2 for m in ms]) for jp in targets]
    a = np.column_stack(cols)
    if q == 0 and len(ms) > 1:
        # Tr(J+ T |m><m+1| T+) = <m+1| T+ J+ T |m> for each target
        _, jp_j = spin_ops(j)
        extra = []
        for jp in targets:
            t = cg_matrix(j, jp, 0)
            _, jplus = spin_ops(jp)
            extra.append(np.array([(t.T @ jplus @ t)[k + 1, k] for k in range(len(ms) - 1)]))
        a = np.vstack([a, np.column_stack(extra)])
        rhs = np.concatenate([rhs, (n_tls - 2) * np.array([jp_j[k + 1, k] for k in range(len(ms) - 1)])])
    x, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    if np.max(np.abs(a @ x - rhs)) > 1e-9 * max(1.0, n_tls):
        raise NumericalError(f"inconsistent jump coefficients at j={j}, q={q}")
    if np.linalg.matrix_rank(a) < len(targets):
        raise NumericalError(f"jump coefficients underdetermined at j={j}, q={q}")
    d_j = degeneracy(j, n_tls)
    return {jp: max(float(xk), 0.0) * d_j / degeneracy(jp, n_tls) for jp, xk in zip(targets, x)}


# --- spaces and parameters -----------------------------------------------------


@dataclass(frozen=True)
class DickeSpace:
    n_tls: int
    n_fock: int = 2

    def __post_init__(self):
        if int(self.n_tls) != self.n_tls or self.n_tls < 1:
            raise ValidationError("n_tls must be a positive integer")
        if int(self.n_fock) != self.n_fock or self.n_fock < 1:
            raise ValidationError("n_fock must be a positive integer")

    @cached_property
    def js(self) -> tuple[float, ...]:
        """Multiplet spins N/2, N/2 - 1, ..., 0 or 1/2."""
        return tuple(self.n_tls / 2 - k for k in range(self.n_tls // 2 + 1))

    @cached_property
    def degeneracies(self) -> tuple[int, ...]:
        return tuple(degeneracy(j, self.n_tls) for j in self.js)

    @cached_property
    def block_dims(self) -> tuple[int, ...]:
        return tuple(int(round(2 * j + 1)) * self.n_fock for j in self.js)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        """Start of each block in the vectorised state."""
        out, pos = [], 0
        for d in self.block_dims:
            out.append(pos)
            pos += d * d
        return tuple(out)

    @property
    def vector_dim(self) -> int:
        return sum(d * d for d in self.block_dims)

    @property
    def n_states(self) -> int:
        return sum(int(round(2 * j + 1)) for j in self.js)

    def completeness(self) -> int:
        """sum_j d_j (2j+1); equals 2^N."""
        return sum(d * int(round(2 * j + 1)) for j, d in zip(self.js, self.degeneracies))

    def excitation_labels(self) -> np.ndarray:
        """m + n for every vector entry, as a pair (row, column)."""
        rows, cols = [], []
        for j, dim in zip(self.js, self.block_dims):
            lab = (np.repeat(_m_values(j), self.n_fock) + np.tile(np.arange(self.n_fock), int(round(2 * j + 1)))).round(6)
            rows.append(np.repeat(lab, dim))
            cols.append(np.tile(lab, dim))
        return np.concatenate(rows), np.concatenate(cols)


@dataclass(frozen=True)
class OracleParams:
    """Rates in rad/s."""

    g: float
    kappa: float
    gamma_local_down: float = 0.0
    gamma_local_up: float = 0.0
    gamma_collective: float = 0.0
    gamma_dephasing: float = 0.0  # rate of D[s_z] per atom; coherence decays at 2x this
    delta: float = 0.0
    n_fock: int = 8

    def __post_init__(self):
        for name in ("g", "kappa", "gamma_local_down", "gamma_local_up", "gamma_collective", "gamma_dephasing", "delta"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValidationError(f"{name} must be finite")
            if name != "delta" and v < 0:
                raise ValidationError(f"{name} must be non-negative")
        if int(self.n_fock) != self.n_fock or self.n_fock < 2:
            raise ValidationError("n_fock must be an integer >= 2")

    @classmethod
    def thermal(cls, gamma0: float, n_thermal: float, **kw) -> "OracleParams":
        """gamma_down = gamma0 (1 - n_T), gamma_up = gamma0 n_T."""
        if not 0 <= n_thermal <= 1:
            raise ValidationError("thermal occupation must lie in [0, 1]")
        return cls(gamma_local_down=gamma0 * (1 - n_thermal), gamma_local_up=gamma0 * n_thermal, **kw)

    @classmethod
    def from_physical(cls, p: PhysicalParams, n_fock: int = 8, include_dephasing: bool = True) -> "OracleParams":
        """Map mean-field rates: gamma -> local decay, eta -> local pump and
        chi -> local dephasing at chi/2 (so the dipole decays at chi)."""
        return cls(
            g=p.g,
            kappa=p.kappa,
            gamma_local_down=p.gamma,
            gamma_local_up=p.eta,
            gamma_dephasing=0.5 * p.chi if include_dephasing else 0.0,
            delta=p.delta,
            n_fock=n_fock,
        )

    def replace(self, **kw) -> "OracleParams":
        from dataclasses import replace

        return replace(self, **kw)


# --- superoperator assembly ----------------------------------------------------


def _left(a):
    return sps.kron(a, sps.identity(a.shape[0], format="csr"), format="csr")


def _right(b):
    # row-major vec(X B) = (1 (x) B^T) vec(X)
    return sps.kron(sps.identity(b.shape[0], format="csr"), b.T, format="csr")


def _dissipator(a, rate):
    if rate == 0:
        return None
    a = sps.csr_matrix(a)
    ad = a.conj().T
    ada = (ad @ a).tocsr()
    return rate * (sps.kron(a, a.conj(), format="csr") - 0.5 * _left(ada) - 0.5 * _right(ada))


def build_liouvillian(op: OracleParams, space: DickeSpace, max_dim: int = DEFAULT_MAX_DIM) -> sps.csr_matrix:
    """Sparse generator acting on the concatenated row-major blocks X_j."""
    if op.n_fock != space.n_fock:
        space = DickeSpace(space.n_tls, op.n_fock)
    dim = space.vector_dim
    if dim > max_dim:
        raise BudgetError(f"Liouvillian dimension {dim} exceeds cap {max_dim} (N={space.n_tls}, n_fock={space.n_fock})")
    nf, n = space.n_fock, space.n_tls
    a = sps.diags(np.sqrt(np.arange(1, nf)), 1, shape=(nf, nf), format="csr")
    num = (a.T @ a).tocsr()
    id_f = sps.identity(nf, format="csr")
    index = {j: k for k, j in enumerate(space.js)}
    blocks = [[None] * len(space.js) for _ in space.js]

    for k, j in enumerate(space.js):
        jz, jp = spin_ops(j)
        jz, jp = sps.csr_matrix(jz), sps.csr_matrix(jp)
        id_s = sps.identity(jz.shape[0], format="csr")
        A = sps.kron(id_s, a, format="csr")
        Jm = sps.kron(jp.T, id_f, format="csr")
        Jz = sps.kron(jz, id_f, format="csr")
        Id = sps.identity(Jz.shape[0], format="csr")
        H = 0.5 * op.g * (A.T @ Jm + A @ Jm.T) + op.delta * sps.kron(id_s, num, format="csr")
        L = -1j * (_left(H) - _right(H))
        for term in (_dissipator(A, op.kappa), _dissipator(Jm, op.gamma_collective)):
            if term is not None:
                L = L + term
        # anticommutator halves of the local dissipators are collective
        anti = op.gamma_local_down * (Jz + 0.5 * n * Id) + op.gamma_local_up * (0.5 * n * Id - Jz) + op.gamma_dephasing * n * Id
        L = L - 0.5 * (_left(anti) + _right(anti))
        blocks[k][k] = L

        for q, rate in ((-1, op.gamma_local_down), (1, op.gamma_local_up), (0, op.gamma_dephasing)):
            if rate == 0:
                continue
            for jp_, kcoef in _jump_coefficients(j, n, q).items():
                if kcoef == 0:
                    continue
                t = sps.kron(sps.csr_matrix(cg_matrix(j, jp_, q)), id_f, format="csr")
                term = rate * kcoef * sps.kron(t, t, format="csr")
                kk = index[jp_]
                blocks[kk][k] = term if blocks[kk][k] is None else blocks[kk][k] + term

    return sps.bmat(blocks, format="csr")


def trace_functional(space: DickeSpace) -> np.ndarray:
    """Row vector w with w . vec(rho) = Tr rho."""
    w = np.zeros(space.vector_dim)
    for off, dim, d in zip(space.offsets, space.block_dims, space.degeneracies):
        w[off : off + dim * dim : dim + 1] = d
    return w


def _observable_vector(space: DickeSpace, which: str) -> np.ndarray:
    """Row vector o with o . vec(rho) = Tr(O rho) for a diagonal observable."""
    o = np.zeros(space.vector_dim)
    nf = space.n_fock
    for j, off, dim, d in zip(space.js, space.offsets, space.block_dims, space.degeneracies):
        if which == "n":
            diag = np.tile(np.arange(nf, dtype=float), int(round(2 * j + 1)))
        elif which == "jz":
            diag = np.repeat(_m_values(j), nf)
        elif which == "jpjm":
            m = _m_values(j)
            diag = np.repeat(j * (j + 1) - m * (m - 1), nf)
        elif which == "top":
            diag = np.tile((np.arange(nf) == nf - 1).astype(float), int(round(2 * j + 1)))
        else:
            raise ValidationError(f"unknown observable {which!r}")
        o[off : off + dim * dim : dim + 1] = d * diag
    return o


# --- states --------------------------------------------------------------------


@dataclass(frozen=True)
class DensityState:
    space: DickeSpace
    vector: np.ndarray  # concatenated row-major blocks

    def block(self, k: int) -> np.ndarray:
        dim = self.space.block_dims[k]
        off = self.space.offsets[k]
        return self.vector[off : off + dim * dim].reshape(dim, dim)

    @property
    def trace(self) -> float:
        return float(np.real(trace_functional(self.space) @ self.vector))

    @property
    def n_photon(self) -> float:
        return float(np.real(_observable_vector(self.space, "n") @ self.vector))

    @property
    def inversion_per_atom(self) -> float:
        """<J_z>/N (half the mean s_z)."""
        return float(np.real(_observable_vector(self.space, "jz") @ self.vector)) / self.space.n_tls

    @property
    def collective_emission(self) -> float:
        """<J+ J->, the collective emission rate per unit gamma_collective."""
        return float(np.real(_observable_vector(self.space, "jpjm") @ self.vector))

    @property
    def fock_tail(self) -> float:
        """Population of the highest retained Fock level."""
        return float(np.real(_observable_vector(self.space, "top") @ self.vector))

    def hermiticity_error(self) -> float:
        return max(float(np.max(np.abs(b - b.conj().T), initial=0.0)) for b in map(self.block, range(len(self.space.js))))

    def min_eigenvalue(self) -> float:
        return min(float(np.linalg.eigvalsh(0.5 * (b + b.conj().T)).min()) for b in map(self.block, range(len(self.space.js))))

    def check(self, trace_tol=1e-9, herm_tol=1e-10, pos_tol=1e-8, what="state") -> None:
        if abs(self.trace - 1) > trace_tol:
            raise InvariantViolation(f"{what}: trace {self.trace!r} deviates from 1")
        if self.hermiticity_error() > herm_tol:
            raise InvariantViolation(f"{what}: Hermiticity error {self.hermiticity_error():.3g}")
        if self.min_eigenvalue() < -pos_tol:
            raise InvariantViolation(f"{what}: negative eigenvalue {self.min_eigenvalue():.3g}; Fock cut too small?")

    @classmethod
    def dicke_fock(cls, space: DickeSpace, m: float, n: int = 0) -> "DensityState":
        """|j=N/2, m> (x) |n>; m = N/2 is the fully excited state."""
        j = space.js[0]
        if abs(m) > j or abs((m + j) - round(m + j)) > 1e-9 or not 0 <= n < space.n_fock:
            raise ValidationError("state outside the space")
        v = np.zeros(space.vector_dim, dtype=complex)
        dim = space.block_dims[0]
        idx = int(round(m + j)) * space.n_fock + n
        v[idx * dim + idx] = 1.0
        return cls(space, v)

    @classmethod
    def product(cls, space: DickeSpace, p_excited: float, n: int = 0) -> "DensityState":
        """Every atom in p|e><e| + (1-p)|g><g|, cavity in |n>.

        In the k-excitation sector the product state is uniform over all
        configurations, i.e. the identity on every multiplet's m = k - N/2.
        """
        v = np.zeros(space.vector_dim, dtype=complex)
        N = space.n_tls
        for j, off, dim in zip(space.js, space.offsets, space.block_dims):
            for kk, m in enumerate(_m_values(j)):
                k = int(round(m + N / 2))
                prob = p_excited**k * (1 - p_excited) ** (N - k)
                idx = kk * space.n_fock + n
                v[off + idx * dim + idx] = prob
        return cls(space, v)

    @classmethod
    def maximally_mixed_spins(cls, space: DickeSpace, n: int = 0) -> "DensityState":
        return cls.product(space, 0.5, n)

    def to_dict(self) -> dict:
        return {"n_photon": self.n_photon, "inversion_per_atom": self.inversion_per_atom, "trace": self.trace, "fock_tail": self.fock_tail}


# --- solvers -------------------------------------------------------------------


def _sector(space: DickeSpace) -> np.ndarray:
    """Indices of the zero excitation-difference sector, invariant under L
    and containing the unique steady state."""
    r, c = space.excitation_labels()
    return np.flatnonzero(np.abs(r - c) < 1e-6)


def _c_fflush() -> None:
    try:
        import ctypes

        ctypes.CDLL(None).fflush(None)
    except (OSError, AttributeError):
        pass


@contextlib.contextmanager
def _quiet_c_output():
    """Discard what C code writes to stdout/stderr inside the block."""
    for stream in (sys.stdout, sys.stderr):
        try:
            stream.flush()
        except (AttributeError, ValueError):
            pass
    _c_fflush()
    try:
        saved = [os.dup(1), os.dup(2)]
    except OSError:
        yield
        return
    try:
        with open(os.devnull, "w") as null:
            os.dup2(null.fileno(), 1)
            os.dup2(null.fileno(), 2)
            try:
                yield
            finally:
                _c_fflush()
    finally:
        os.dup2(saved[0], 1)
        os.dup2(saved[1], 2)
        for fd in saved:
            os.close(fd)


def _solve_null(L: sps.csr_matrix, w: np.ndarray) -> np.ndarray:
    """L x = 0 with w . x = 1, replacing the row carrying most weight."""
    row = int(np.argmax(np.abs(w)))
    A = L.tolil(copy=True)
    A[row, :] = w
    b = np.zeros(L.shape[0], dtype=complex)
    b[row] = 1.0
    with _quiet_c_output():  # SuperLU prints BLAS complaints before raising
        lu = splu(A.tocsc())  # RuntimeError when exactly singular
    piv = np.abs(lu.U.diagonal())
    if piv.min() <= 1e-13 * max(piv.max(), 1e-300):
        raise np.linalg.LinAlgError("singular")
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("singular")
    return x


def me_steady_state(
    op: OracleParams,
    space: DickeSpace | int,
    method: str = "direct",
    *,
    max_dim: int = DEFAULT_MAX_DIM,
    t_step: float | None = None,
    max_steps: int = 200,
    rtol: float = 1e-11,
) -> DensityState:
    """Stationary state by sparse null-space solve (``direct``) or long-time
    propagation (``propagate``). A singular direct solve (several steady
    states) emits a warning and falls back to propagation."""
    if isinstance(space, int):
        space = DickeSpace(space, op.n_fock)
    elif space.n_fock != op.n_fock:
        space = DickeSpace(space.n_tls, op.n_fock)
    L = build_liouvillian(op, space, max_dim)
    sec = _sector(space)
    Ls = L[sec][:, sec].tocsr()
    w = trace_functional(space)[sec]
    x = None
    if method == "direct":
        try:
            x = _solve_null(Ls, w)
        except (np.linalg.LinAlgError, RuntimeError):
            null_dim = _null_dimension(Ls)
            warnings.warn(f"degenerate steady state: null space dimension {null_dim} (sector size {len(sec)}); propagating instead", stacklevel=2)
            method = "propagate"
    if method == "propagate":
        rates = [op.kappa, op.gamma_local_down, op.gamma_local_up, op.gamma_collective, op.gamma_dephasing]
        slow = min(r for r in rates if r > 0) if any(r > 0 for r in rates) else 1.0
        dt = t_step if t_step is not None else 5.0 / slow
        x = DensityState.product(space, 0.0).vector[sec]
        n_obs = _observable_vector(space, "n")[sec]
        prev = None
        for _ in range(max_steps):
            x = expm_multiply(Ls * dt, x)
            cur = float(np.real(n_obs @ x)), float(np.real(_observable_vector(space, "jz")[sec] @ x))
            if prev is not None and max(abs(c - p) for c, p in zip(cur, prev)) <= rtol * max(1.0, abs(cur[0])):
                break
            prev = cur
        else:
            raise NumericalError("master-equation propagation did not reach a steady state")
    elif x is None:
        raise ValidationError(f"unknown method {method!r}")
    v = np.zeros(space.vector_dim, dtype=complex)
    v[sec] = x
    v /= trace_functional(space) @ v
    state = DensityState(space, v)
    return _hermitize(state)


def _null_dimension(L) -> int | str:
    if L.shape[0] > 3000:
        return "unknown (too large to factor densely)"
    s = np.linalg.svd(L.toarray(), compute_uv=False)
    return int(np.sum(s < 1e-10 * max(s.max(), 1e-300)))


def _hermitize(state: DensityState) -> DensityState:
    v = state.vector.copy()
    for k, (off, dim) in enumerate(zip(state.space.offsets, state.space.block_dims)):
        b = v[off : off + dim * dim].reshape(dim, dim)
        v[off : off + dim * dim] = (0.5 * (b + b.conj().T)).ravel()
    return DensityState(state.space, v)


@dataclass(frozen=True)
class METrace:
    times: np.ndarray
    n_photon: np.ndarray
    inversion_per_atom: np.ndarray  # <J_z>/N
    final: DensityState


def me_evolve(
    op: OracleParams,
    space: DickeSpace | int,
    rho0: DensityState,
    t_grid,
    *,
    max_dim: int = DEFAULT_MAX_DIM,
    positivity_tol: float = 1e-6,
    check_every: int = 1,
) -> METrace:
    """Expectation traces on ``t_grid`` (uniformly spaced, starting at 0 or later)."""
    if isinstance(space, int):
        space = DickeSpace(space, op.n_fock)
    if rho0.space != space:
        raise ValidationError("initial state lives in a different space")
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) < 1 or np.any(np.diff(t) <= 0) or t[0] < 0:
        raise ValidationError("t_grid must be non-negative and strictly increasing")
    L = build_liouvillian(op, space, max_dim)
    n_obs, jz_obs = _observable_vector(space, "n"), _observable_vector(space, "jz")
    x = rho0.vector.astype(complex)
    if t[0] > 0:
        x = expm_multiply(L * t[0], x)
    out = [x]
    steps = np.diff(t)
    uniform = len(steps) > 0 and np.allclose(steps, steps[0], rtol=1e-9, atol=0)
    if uniform:
        traj = expm_multiply(L, x, start=t[0], stop=t[-1], num=len(t), endpoint=True)
        out = list(traj)
    else:
        for h in steps:
            x = expm_multiply(L * h, x)
            out.append(x)
    n_vals = np.array([float(np.real(n_obs @ v)) for v in out])
    jz_vals = np.array([float(np.real(jz_obs @ v)) for v in out]) / space.n_tls
    for k in range(0, len(out), max(1, check_every)):
        st = DensityState(space, out[k])
        st.check(trace_tol=1e-9, herm_tol=1e-10, pos_tol=positivity_tol, what=f"t={t[k]:.6g}")
    return METrace(t, n_vals, jz_vals, DensityState(space, out[-1]))


# --- mean-field comparison -----------------------------------------------------


@dataclass(frozen=True)
class ComparisonRow:
    n_atoms: int
    eta: float  # rad/s
    n_mft: float
    n_me: float
    ratio: float
    flagged: bool
    n_fock: int
    fock_tail: float

    def to_dict(self) -> dict:
        return {
            "n_atoms": self.n_atoms,
            "eta_Hz": self.eta / (2 * math.pi),
            "n_mft": self.n_mft,
            "n_me": self.n_me,
            "ratio": self.ratio,
            "flagged": self.flagged,
            "n_fock": self.n_fock,
            "fock_tail": self.fock_tail,
        }


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]
    eta_list: tuple[float, ...]
    n_list: tuple[int, ...]

    def grid(self, attr: str) -> np.ndarray:
        g = np.zeros((len(self.n_list), len(self.eta_list)))
        for r in self.rows:
            g[self.n_list.index(r.n_atoms), self.eta_list.index(r.eta)] = getattr(r, attr)
        return g

    def argmax_shift(self) -> dict[int, int]:
        """Per N, grid-index difference between the ME and MFT maxima over eta."""
        me, mft = self.grid("n_me"), self.grid("n_mft")
        return {n: int(np.argmax(me[k]) - np.argmax(mft[k])) for k, n in enumerate(self.n_list)}

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "argmax_shift": {str(k): v for k, v in self.argmax_shift().items()}}


def default_fock(n_expected: float, cap: int = 16) -> int:
    """max(8, 4 ceil(n)) capped at ``cap``."""
    return int(min(cap, max(8, 4 * math.ceil(max(n_expected, 0.0)))))


def compare_mft_me(
    params: PhysicalParams,
    n_list,
    eta_list,
    *,
    n_fock: int | None = None,
    max_fock: int = 16,
    ratio_band: tuple[float, float] = (0.5, 2.0),
) -> ComparisonTable:
    """Steady photon numbers from both solvers on an (N, eta) grid.

    ``eta_list`` in rad/s. chi is carried into the master equation as local
    dephasing; set chi = 0 for the supplementary comparison.
    """
    from .meanfield import steady_state

    rows = []
    etas = tuple(float(e) for e in eta_list)
    ns = tuple(int(n) for n in n_list)
    for n in ns:
        for eta in etas:
            p = params.replace(n_atoms=float(n), eta=eta)
            n_mft = steady_state(p).n_photon
            nf = n_fock if n_fock is not None else default_fock(n_mft, max_fock)
            st = me_steady_state(OracleParams.from_physical(p, nf), DickeSpace(n, nf))
            n_me = st.n_photon
            if n_mft == 0 and n_me == 0:
                ratio = 1.0
            elif n_mft == 0:
                ratio = math.inf
            else:
                ratio = n_me / n_mft
            flagged = not (ratio_band[0] <= ratio <= ratio_band[1])
            rows.append(ComparisonRow(n, eta, n_mft, n_me, ratio, flagged, nf, st.fock_tail))
    return ComparisonTable(tuple(rows), etas, ns)
