"""Eigendecompositions and the consensus square-root matrix V.

V is the symmetric PSD square root of (P - A P)/2, where P = diag(p) and
A is a balanced left-stochastic combination matrix.  Its nullspace is the
consensus line span{1}, which is what couples the primal and dual blocks
of the error dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .graphs import CombinationMatrix, PerronData, SpectralError, check_balanced

CLIP_TOL = 1e-12
PSD_TOL = -1e-8
MAX_DENSE_DIM = 200


@dataclass(frozen=True)
class VMatrix:
    """Symmetric PSD square root of (P - A P)/2.

    Fields: the matrix v itself, the orthogonal eigenvector matrix u, and
    sigma, the eigenvalues of (P - A P)/2 in descending order (entries
    below the clipping threshold are exactly zero).
    """

    v: np.ndarray
    u: np.ndarray
    sigma: np.ndarray


def compute_v(a: CombinationMatrix, p: PerronData) -> VMatrix:
    """Build V = U sqrt(Sigma) U^T from the eigendecomposition of
    (P - A P)/2.

    Requires a balanced matrix (otherwise (P - A P)/2 need not be
    symmetric PSD).  Eigenvalues below 1e-12 are clipped to exactly zero
    before the square root; anything below -1e-8 is a PSD violation.
    """
    balanced, violation = check_balanced(a, p)
    if not balanced:
        raise ValueError(
            f"combination matrix is not balanced (violation {violation:.3e})"
        )
    pv = np.asarray(p.p, dtype=float)
    s = (np.diag(pv) - a.a * pv[np.newaxis, :]) / 2.0
    s = (s + s.T) / 2.0  # balance makes this symmetric; kill rounding skew
    w, u = np.linalg.eigh(s)
    if w.min() < PSD_TOL:
        raise SpectralError(f"(P - AP)/2 has eigenvalue {w.min():.3e} < {PSD_TOL:g}")
    w = w[::-1].copy()
    u = u[:, ::-1].copy()
    w[w < CLIP_TOL] = 0.0
    v = (u * np.sqrt(w)[np.newaxis, :]) @ u.T
    v = (v + v.T) / 2.0
    return VMatrix(v=v, u=u, sigma=w)


def certify_nullspace(v: VMatrix) -> bool:
    """True iff null(V) = span{1}: exactly one eigenvalue of V at (or
    below) 1e-10 whose eigenvector is parallel to the ones vector."""
    eigs = np.sqrt(v.sigma)
    null_mask = eigs <= 1e-10
    if null_mask.sum() != 1:
        return False
    n = v.u.shape[0]
    u_null = v.u[:, int(np.argmax(null_mask))]
    inner = abs(float(u_null @ np.ones(n))) / np.sqrt(n)
    return inner >= 1.0 - 1e-8


def general_eig(m: np.ndarray):
    """Dense nonsymmetric eigendecomposition with left/right vectors.

    Returns (vals, x, y): eigenvalues sorted by descending real part
    (ties by descending imaginary part), right eigenvectors as columns of
    x, left eigenvectors as columns of y normalized so that y_i^H x_i = 1
    wherever the pairing is nondegenerate (simple spectra; a known
    multiplicity-2 eigenvalue at 1 is left untouched and handled by the
    caller).

    Raises SpectralError if the QR iteration fails or a residual exceeds
    1e-8.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got shape {m.shape}")
    if m.shape[0] > MAX_DENSE_DIM:
        raise ValueError(f"dimension {m.shape[0]} exceeds dense cap {MAX_DENSE_DIM}")
    try:
        vals, vl, vr = scipy.linalg.eig(m, left=True, right=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise SpectralError(f"eigensolver failed to converge: {exc}") from exc
    order = np.lexsort((-vals.imag, -vals.real))
    vals = vals[order]
    vr = vr[:, order]
    vl = vl[:, order]
    scale = max(1.0, float(np.abs(m).max()))
    for i in range(len(vals)):
        res = np.linalg.norm(m @ vr[:, i] - vals[i] * vr[:, i])
        if res > 1e-8 * scale:
            raise SpectralError(
                f"eigenpair {i} residual {res:.3e} above tolerance"
            )
    # biorthogonal normalization y_i^H x_i = 1 where the pairing allows it
    d = np.sum(np.conj(vl) * vr, axis=0)
    ok = np.abs(d) > 1e-12
    vl[:, ok] = vl[:, ok] / np.conj(d[ok])[np.newaxis, :]
    return vals, vr, vl
