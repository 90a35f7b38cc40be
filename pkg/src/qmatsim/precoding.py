"""Zero-forcing and isotropic random precoders."""

from __future__ import annotations

import numpy as np

from .channel import crandn

__all__ = [
    "DimensionError",
    "orthonormal_rows_basis",
    "zf_beamformer",
    "random_isotropic_columns",
    "leakage_power",
]

# rows whose Gram-Schmidt residual falls below this are treated as dependent
_DEP_TOL = 1e-12


class DimensionError(ValueError):
    pass


def orthonormal_rows_basis(rows: np.ndarray) -> np.ndarray:
    """Orthonormal basis (as columns) of span{conj(r)} for each row ``r``.

    The basis spans exactly the vectors ``w`` with ``r @ w != 0`` possible, so
    projecting onto its complement nulls ``r @ v``.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=complex))
    basis: list[np.ndarray] = []
    for r in rows:
        w = r.conj().copy()
        for _ in range(2):  # re-orthogonalise once for stability
            for q in basis:
                w -= q * np.vdot(q, w)
        nrm = np.linalg.norm(w)
        if nrm < _DEP_TOL * max(1.0, np.linalg.norm(r)):
            continue
        basis.append(w / nrm)
    if not basis:
        return np.zeros((rows.shape[1], 0), dtype=complex)
    return np.stack(basis, axis=1)


def zf_beamformer(excluded, rng: np.random.Generator, M: int | None = None) -> np.ndarray:
    """Unit-norm vector orthogonal to every row of `excluded`.

    Parameters
    ----------
    excluded : array_like, shape (n, M)
        Channel estimate rows ``h_hat_l^H`` of the users to be nulled.  May be
        empty, in which case `M` must be given.
    rng : numpy.random.Generator
        Source of the isotropic direction inside the nullspace.
    M : int, optional
        Antenna count; inferred from `excluded` when it has rows.

    Returns
    -------
    v : ndarray, shape (M,)
        ``excluded @ v`` vanishes up to round-off and ``||v|| = 1``.
    """
    excluded = np.asarray(excluded, dtype=complex)
    if excluded.size == 0:
        if M is None:
            if excluded.ndim == 2:
                M = excluded.shape[1]
            else:
                raise DimensionError("M is required when no rows are excluded")
        excluded = np.zeros((0, M), dtype=complex)
    excluded = np.atleast_2d(excluded)
    M = excluded.shape[1] if M is None else M
    if excluded.shape[1] != M:
        raise DimensionError(f"rows have length {excluded.shape[1]}, expected {M}")
    if excluded.shape[0] >= M:
        raise DimensionError(
            f"cannot null {excluded.shape[0]} users with {M} antennas"
        )
    Q = orthonormal_rows_basis(excluded) if excluded.shape[0] else np.zeros((M, 0), complex)
    g = crandn(rng, M)
    v = g - Q @ (Q.conj().T @ g)
    # second projection pass removes the residual left by round-off
    v = v - Q @ (Q.conj().T @ v)
    return v / np.linalg.norm(v)


def random_isotropic_columns(M: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` orthonormal columns drawn from the Haar measure on C^M."""
    if count > M:
        raise DimensionError(f"cannot draw {count} orthonormal columns in C^{M}")
    if count <= 0:
        return np.zeros((M, 0), dtype=complex)
    Z = crandn(rng, (M, count))
    Q, R = np.linalg.qr(Z)
    # fix the phase ambiguity of QR so the distribution is exactly Haar
    d = np.diagonal(R)
    Q = Q * (d / np.abs(d))
    return Q


def leakage_power(h_true, v) -> float:
    """``|h^H v|^2`` for the channel column vector `h_true`.

    Callers holding the row ``h^H`` (a row of ``ChannelSlotState.H``) pass
    ``row.conj()``.
    """
    return float(np.abs(np.vdot(np.asarray(h_true), np.asarray(v))) ** 2)
