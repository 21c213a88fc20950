"""Independent reference implementations used only by the tests.

Nothing here imports the numerical cores under test; the brute-force
master equation works in the full 2^N (x) Fock space with dense matrices.
"""

from __future__ import annotations

from functools import reduce

import numpy as np
from scipy.linalg import expm


def brute_force_traces(op, n_tls: int, rho_atom: np.ndarray, n_fock: int, times):
    """<a+a>(t) and <J_z>(t)/N from a dense product-basis Lindblad equation.

    ``op`` supplies the rates (g, kappa, local down/up, collective, dephasing,
    delta); each atom starts in ``rho_atom`` (basis order excited, ground),
    the field in vacuum. D[A] = A rho A+ - {A+A, rho}/2 with the rate in front.
    """
    sm = np.array([[0.0, 0.0], [1.0, 0.0]])  # |e> -> |g>
    sz = np.diag([1.0, -1.0])
    i2 = np.eye(2)

    def site(o, k):
        return reduce(np.kron, [o if i == k else i2 for i in range(n_tls)])

    a = np.diag(np.sqrt(np.arange(1, n_fock)), 1)
    i_f, i_s = np.eye(n_fock), np.eye(2**n_tls)
    A = np.kron(i_s, a)
    S = [np.kron(site(sm, k), i_f) for k in range(n_tls)]
    Z = [np.kron(site(sz, k), i_f) for k in range(n_tls)]
    jm = sum(S)
    H = 0.5 * op.g * (A.conj().T @ jm + A @ jm.conj().T) + op.delta * A.conj().T @ A
    dim = H.shape[0]
    eye = np.eye(dim)
    L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))

    def dis(c, rate):
        cd = c.conj().T
        return rate * (np.kron(c, c.conj()) - 0.5 * np.kron(cd @ c, eye) - 0.5 * np.kron(eye, (cd @ c).T))

    L = L + dis(A, op.kappa) + dis(jm, op.gamma_collective)
    for k in range(n_tls):
        L = L + dis(S[k], op.gamma_local_down) + dis(S[k].conj().T, op.gamma_local_up) + dis(Z[k], op.gamma_dephasing)
    vac = np.zeros((n_fock, n_fock))
    vac[0, 0] = 1.0
    rho0 = np.kron(reduce(np.kron, [rho_atom] * n_tls), vac)
    x = rho0.ravel()
    n_op = A.conj().T @ A
    jz = 0.5 * sum(Z)
    n_out, z_out = [], []
    for t in times:
        r = (expm(L * t) @ x).reshape(dim, dim)
        n_out.append(np.trace(n_op @ r).real)
        z_out.append(np.trace(jz @ r).real / n_tls)
    return np.array(n_out), np.array(z_out)


def expm_apply_mp(m: np.ndarray, c0: np.ndarray, t: float, dps: int = 40) -> np.ndarray:
    """exp(M t) c0 in arbitrary precision, exact for the stored float entries."""
    import mpmath

    with mpmath.workdps(dps):
        M = mpmath.matrix([[mpmath.mpc(complex(x)) for x in row] for row in m])
        c = mpmath.matrix([mpmath.mpc(complex(x)) for x in c0])
        out = mpmath.expm(M * mpmath.mpf(float(t))) * c
        return np.array([complex(out[0]), complex(out[1])])


def lorentzian_fwhm_of_exponential(gamma: float) -> float:
    """FWHM in Hz of the spectrum of exp(-gamma |t|), gamma in rad/s."""
    return gamma / np.pi
