"""Small dense linear algebra and finite-difference kernels.

Everything here is pure and works on plain numpy arrays.  Points are
arrays whose last axis has length 3; most helpers broadcast over any
leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "HermitianError",
    "check_hermitian",
    "herm_eig",
    "fix_phase",
    "central_diff",
    "central_hessian",
    "laplacian",
    "sym3",
    "antisym3",
    "Grid",
    "DEFAULT_STEP",
]

#: FD step as a fraction of the characteristic length.
DEFAULT_STEP = 1e-5

_HERM_RTOL = 1e-12


class HermitianError(ValueError):
    """Raised when a matrix handed to the eigensolver is not Hermitian."""


def check_hermitian(H, rtol=_HERM_RTOL):
    """Return ``H`` as a complex square array, raising if it is not Hermitian."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise HermitianError(f"expected a square matrix, got shape {H.shape}")
    if H.shape[0] < 2:
        raise HermitianError("matrix dimension must be at least 2")
    scale = max(np.abs(H).max(), 1.0)
    err = np.abs(H - H.conj().T).max()
    if err > rtol * scale:
        raise HermitianError(
            f"matrix is not Hermitian: max |H - H^dagger| = {err:.3e} "
            f"exceeds {rtol:g} * {scale:.3e}"
        )
    return H


def fix_phase(vecs):
    """Rotate each column so its largest-magnitude component is real positive.

    Ties between equally large components go to the lowest index.
    """
    vecs = np.array(vecs, dtype=complex)
    idx = np.argmax(np.abs(vecs), axis=0)
    pivot = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.abs(pivot) / pivot)[np.newaxis, :]


def herm_eig(H, tol=1e-14, max_sweeps=100):
    """Eigen-decomposition of a small dense Hermitian matrix.

    Cyclic complex Jacobi: each pivot (p, q) is first made real by a
    diagonal phase and then annihilated with a plane rotation.

    Parameters
    ----------
    H : array_like, shape (n, n)
        Hermitian matrix, n >= 2.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm drops below
        ``tol * ||H||_F``.
    max_sweeps : int
        Safety cap on the number of full sweeps.

    Returns
    -------
    w : ndarray, shape (n,)
        Eigenvalues in ascending order.
    V : ndarray, shape (n, n)
        Orthonormal eigenvectors as columns, phase-fixed with
        :func:`fix_phase`.
    """
    A = check_hermitian(H).copy()
    n = A.shape[0]
    # Exact Hermitian part; the check above tolerates round-off only.
    A = 0.5 * (A + A.conj().T)
    V = np.eye(n, dtype=complex)
    norm = np.linalg.norm(A)
    if norm == 0.0:
        return np.zeros(n), np.eye(n, dtype=complex)
    thresh = tol * norm

    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off < thresh:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                b = A[p, q]
                mag = abs(b)
                if mag < 1e-300:
                    continue
                phase = b / mag
                a_pp = A[p, p].real
                a_qq = A[q, q].real
                theta = 0.5 * np.arctan2(2.0 * mag, a_qq - a_pp)
                c = np.cos(theta)
                s = np.sin(theta)
                # New basis columns: c e_p - s e^{-i phi} e_q and s e_p + c e^{-i phi} e_q.
                col_p = c * A[:, p] - s * np.conj(phase) * A[:, q]
                col_q = s * A[:, p] + c * np.conj(phase) * A[:, q]
                A[:, p] = col_p
                A[:, q] = col_q
                row_p = c * A[p, :] - s * phase * A[q, :]
                row_q = s * A[p, :] + c * phase * A[q, :]
                A[p, :] = row_p
                A[q, :] = row_q
                A[p, q] = 0.0
                A[q, p] = 0.0
                A[p, p] = A[p, p].real
                A[q, q] = A[q, q].real
                vp = c * V[:, p] - s * np.conj(phase) * V[:, q]
                vq = s * V[:, p] + c * np.conj(phase) * V[:, q]
                V[:, p] = vp
                V[:, q] = vq

    w = np.diag(A).real
    order = np.argsort(w, kind="stable")
    return w[order], fix_phase(V[:, order])


def _unit(i, dtype=float):
    e = np.zeros(3, dtype=dtype)
    e[i] = 1.0
    return e


def central_diff(f, x, h, richardson=False):
    """Central-difference gradient of ``f`` at the point ``x``.

    ``f`` may return a scalar or an array; the result stacks the partial
    derivatives along a new leading axis of length ``len(x)``.  With
    ``richardson=True`` the steps h and h/2 are combined to cancel the
    O(h^2) term.

    Any NaN produced by ``f`` on the stencil propagates into the result,
    which is how invalid samples are signalled.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=float)

    def _grad(step):
        out = []
        for i in range(x.size):
            e = np.zeros_like(x)
            e.flat[i] = step
            out.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * step))
        return np.stack(out)

    g = _grad(h)
    if richardson:
        g = (4.0 * _grad(0.5 * h) - g) / 3.0
    return g


def central_hessian(f, x, h):
    """Central second-difference Hessian of a scalar function."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    f0 = float(f(x))
    steps = [np.eye(n)[i] * h for i in range(n)]
    for i in range(n):
        ei = steps[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h**2
        for j in range(i + 1, n):
            ej = steps[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * h**2)
            H[i, j] = H[j, i] = val
    return H


def laplacian(f, x, h):
    """Seven-point FD Laplacian of a vectorised scalar function.

    ``f`` maps an array of points (..., 3) to values (...); ``x`` may carry
    leading batch axes.
    """
    x = np.asarray(x, dtype=float)
    total = -6.0 * np.asarray(f(x))
    for i in range(3):
        e = _unit(i) * h
        total = total + f(x + e) + f(x - e)
    return total / h**2


def sym3(m):
    """Exactly symmetric part of a (..., 3, 3) array."""
    m = np.asarray(m)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def antisym3(m):
    """Exactly antisymmetric part of a (..., 3, 3) array."""
    m = np.asarray(m)
    return 0.5 * (m - np.swapaxes(m, -1, -2))


@dataclass(frozen=True)
class Grid:
    """Regular grid of sample points.

    A grid is ``len(dims)``-dimensional (1, 2 or 3).  Its axes map onto the
    Cartesian components listed in ``axes``; the remaining components are
    held at the values in ``origin``.  Points are ordered row-major with the
    last grid axis varying fastest.
    """

    origin: tuple
    spacing: tuple
    dims: tuple
    axes: tuple = (0, 1, 2)

    def __post_init__(self):
        if len(self.dims) != len(self.spacing) or len(self.dims) != len(self.axes):
            raise ValueError("dims, spacing and axes must have equal length")
        if len(self.origin) != 3:
            raise ValueError("origin must be a 3-vector")
        if any(int(d) < 2 for d in self.dims):
            raise ValueError("every grid axis needs at least 2 points")
        if any(s <= 0 for s in self.spacing):
            raise ValueError("grid spacing must be positive")

    @classmethod
    def from_bounds(cls, lo, hi, dims, axes=None, fixed=None):
        """Grid spanning ``[lo, hi]`` along ``axes`` (inclusive endpoints).

        ``fixed`` gives the full 3-vector whose non-grid components are kept.
        """
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        dims = tuple(int(d) for d in np.broadcast_to(np.atleast_1d(dims), lo.shape))
        if axes is None:
            axes = tuple(range(lo.size))
        origin = np.zeros(3) if fixed is None else np.array(fixed, dtype=float)
        for a, v in zip(axes, lo):
            origin[a] = v
        spacing = tuple(float((b - a) / (d - 1)) for a, b, d in zip(lo, hi, dims))
        return cls(tuple(float(v) for v in origin), spacing, dims, tuple(axes))

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def size(self):
        return int(np.prod(self.dims))

    def coords(self, k):
        """1-D coordinate array along grid axis ``k``."""
        return self.origin[self.axes[k]] + self.spacing[k] * np.arange(self.dims[k])

    def points(self):
        """All grid points as an array of shape (*dims, 3)."""
        mesh = np.meshgrid(*[self.coords(k) for k in range(self.ndim)], indexing="ij")
        pts = np.broadcast_to(np.asarray(self.origin, dtype=float), tuple(self.dims) + (3,)).copy()
        for k, a in enumerate(self.axes):
            pts[..., a] = mesh[k]
        return pts

    def to_dict(self):
        return {
            "origin": list(self.origin),
            "spacing": list(self.spacing),
            "dims": list(self.dims),
            "axes": list(self.axes),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["origin"]), tuple(d["spacing"]), tuple(d["dims"]), tuple(d.get("axes", range(len(d["dims"])))))
