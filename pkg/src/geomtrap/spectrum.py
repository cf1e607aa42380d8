"""Lattice discretisation of the slow-mode Hamiltonian.

The gauge field enters through Peierls link phases: the hopping from site
``b`` to site ``a`` is multiplied by the unit-modulus overlap
``<e_a|e_b> / |<e_a|e_b>|`` of the tracked fast states.  Products of links
around a closed lattice loop reproduce the Bargmann (Wilson-loop) phase, so
holonomy and curvature need no separate input.

Eigenpairs come from a dense Hermitian solve, which caps the lattice at
:data:`MAX_SITES` sites.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .numerics import Grid
from .reduction import InvalidSampleError, potential_arrays, states_along

__all__ = [
    "MAX_SITES",
    "ResolutionWarning",
    "LatticeHamiltonian",
    "EigResult",
    "build_lattice",
    "lowest_eigenpairs",
    "box_grid",
    "ring_grid",
]

MAX_SITES = 16384
BOUNDARIES = ("open", "periodic")


class ResolutionWarning(UserWarning):
    """Grid spacing is coarse compared with the potential or state variation."""


def box_grid(length, n, axis=1, origin=0.0):
    """Interior sites of a hard-wall box ``[origin, origin + length]`` along ``axis``.

    The walls sit one spacing outside the first and last site, so the
    Dirichlet lattice box has exactly the requested length.
    """
    s = length / (n + 1)
    o = [0.0, 0.0, 0.0]
    o[axis] = origin + s
    return Grid(tuple(o), (s,), (int(n),), (axis,))


def ring_grid(length, n, axis=1, origin=0.0):
    """``n`` sites on a ring of circumference ``length`` (last site wraps to the first)."""
    o = [0.0, 0.0, 0.0]
    o[axis] = origin
    return Grid(tuple(o), (length / n,), (int(n),), (axis,))


@dataclass
class LatticeHamiltonian:
    """Tight-binding form of the slow Hamiltonian on a 1-D or 2-D grid.

    Attributes
    ----------
    grid : Grid
        Site positions.  With periodic boundaries the site after the last
        one along each axis is the first one.
    potential : ndarray, shape grid.dims
        Site potential (``v_dyn + v_geom`` when built from a system).
    links : list of ndarray
        ``links[k]`` holds the phase of the bond from each site to its
        neighbour along grid axis ``k``.  Its length along that axis is
        ``dims[k] - 1`` for open and ``dims[k]`` for periodic boundaries.
    hopping : tuple of float
        ``hbar^2 / (2 m spacing_k^2)`` per axis.
    boundary : str
        ``"open"`` or ``"periodic"``.
    """

    grid: Grid
    potential: np.ndarray
    links: list
    hopping: tuple
    boundary: str = "open"

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if self.grid.ndim not in (1, 2):
            raise ValueError("lattices are 1-D or 2-D")
        self.potential = np.asarray(self.potential, dtype=float).reshape(self.grid.dims)
        if not np.all(np.isfinite(self.potential)):
            raise InvalidSampleError("site potential must be finite")
        links = []
        for k in range(self.grid.ndim):
            u = np.asarray(self.links[k], dtype=complex)
            shape = list(self.grid.dims)
            if self.boundary == "open":
                shape[k] -= 1
            if u.shape != tuple(shape):
                raise ValueError(f"links along axis {k} must have shape {tuple(shape)}, got {u.shape}")
            if u.size and np.max(np.abs(np.abs(u) - 1.0)) > 1e-12:
                raise ValueError("link phases must have unit modulus")
            links.append(u)
        self.links = links
        self.hopping = tuple(float(t) for t in self.hopping)

    @classmethod
    def from_arrays(cls, potential, spacing, links=None, boundary="open", hbar=1.0, mass=1.0, grid=None):
        """Lattice from explicit site potentials and (optional) link phases.

        ``spacing`` is a scalar or one value per axis.  Missing links are 1.
        """
        V = np.asarray(potential, dtype=float)
        dims = V.shape
        spacing = tuple(np.broadcast_to(np.asarray(spacing, dtype=float), (len(dims),)))
        if grid is None:
            grid = Grid((0.0, 0.0, 0.0), spacing, dims, tuple(range(len(dims))))
        if links is None:
            links = []
            for k in range(len(dims)):
                shape = list(dims)
                if boundary == "open":
                    shape[k] -= 1
                links.append(np.ones(shape, dtype=complex))
        hop = tuple(hbar**2 / (2.0 * mass * s**2) for s in spacing)
        return cls(grid, V, list(links), hop, boundary)

    @property
    def size(self):
        return self.grid.size

    def bonds(self):
        """Yield ``(a, b, t * u)`` for every bond, flat site indices, ``H[a, b] = -t u``."""
        dims = self.grid.dims
        idx = np.arange(self.size).reshape(dims)
        for k in range(self.grid.ndim):
            nb = np.roll(idx, -1, axis=k)
            if self.boundary == "open":
                sl = [slice(None)] * len(dims)
                sl[k] = slice(0, dims[k] - 1)
                a, b = idx[tuple(sl)], nb[tuple(sl)]
            else:
                a, b = idx, nb
            yield a.ravel(), b.ravel(), self.hopping[k] * self.links[k].ravel()

    def matrix(self):
        """Dense Hermitian matrix of the lattice Hamiltonian."""
        n = self.size
        H = np.zeros((n, n), dtype=complex)
        diag = self.potential.ravel().astype(complex)
        for k in range(self.grid.ndim):
            diag = diag + 2.0 * self.hopping[k]
        H[np.arange(n), np.arange(n)] = diag
        for a, b, tu in self.bonds():
            # np.add.at: a two-site ring has both bonds on the same pair
            np.add.at(H, (a, b), -tu)
            np.add.at(H, (b, a), -np.conj(tu))
        return H

    def rephase(self, chi):
        """Gauge transform: site states pick up phases ``exp(i chi)``.

        Each link ``u_ab = <e_a|e_b>`` becomes ``exp(-i chi_a) u_ab exp(i chi_b)``.
        """
        chi = np.asarray(chi, dtype=float).reshape(self.grid.dims)
        new = []
        for k in range(self.grid.ndim):
            nb = np.roll(chi, -1, axis=k)
            u = self.links[k]
            if self.boundary == "open":
                sl = [slice(None)] * self.grid.ndim
                sl[k] = slice(0, self.grid.dims[k] - 1)
                phase = np.exp(1j * (nb[tuple(sl)] - chi[tuple(sl)]))
            else:
                phase = np.exp(1j * (nb - chi))
            new.append(u * phase)
        return LatticeHamiltonian(self.grid, self.potential.copy(), new, self.hopping, self.boundary)

    def loop_phase(self, axis=0):
        """Phase of the product of links around each periodic line along ``axis``.

        Returns one value per line, equal to ``arg prod <e_k|e_{k+1}>``; the
        Wilson-loop phase of the same loop is its negative.
        """
        if self.boundary != "periodic":
            raise ValueError("loop phases need periodic boundaries")
        return np.angle(np.prod(self.links[axis], axis=axis))


@dataclass
class EigResult:
    """Lowest eigenpairs of a lattice Hamiltonian."""

    eigenvalues: np.ndarray
    residuals: np.ndarray
    eigenvectors: Optional[np.ndarray] = None
    grid: Optional[Grid] = None
    boundary: str = "open"

    def to_dict(self, include_vectors=False):
        out = {
            "eigenvalues": [float(e) for e in self.eigenvalues],
            "residuals": [float(r) for r in self.residuals],
            "boundary": self.boundary,
        }
        if self.grid is not None:
            out["grid"] = self.grid.to_dict()
        if include_vectors and self.eigenvectors is not None:
            v = self.eigenvectors
            out["eigenvectors"] = {"real": v.real.T.tolist(), "imag": v.imag.T.tolist()}
        return out

    def to_json(self, include_vectors=False):
        return json.dumps(self.to_dict(include_vectors))


def _check_resolution(grid, V, angles):
    """Warn when a spacing exceeds a quarter of the shortest variation length.

    ``angles[k]`` is the largest Fubini-Study angle between neighbouring
    states along axis ``k``; twice it is the Bloch-sphere angle for a spin.
    """
    span = float(np.ptp(V))
    # round-off level variation is not structure
    if span <= 1e-9 * max(float(np.max(np.abs(V))), 1e-300):
        span = 0.0
    for k in range(grid.ndim):
        s = grid.spacing[k]
        lengths = []
        dV = np.abs(np.diff(V, axis=k))
        if span > 0 and dV.size and np.max(dV) > 0:
            lengths.append(span * s / float(np.max(dV)))
        if angles[k] > 0:
            lengths.append(s / (2.0 * angles[k]))
        if lengths and s > 0.25 * min(lengths):
            warnings.warn(
                f"grid spacing {s:.3g} along axis {k} exceeds a quarter of the "
                f"shortest variation length {min(lengths):.3g}", ResolutionWarning, stacklevel=3)


def build_lattice(sys, grid, boundary="open", include_geom=True, include_dyn=True):
    """Discretise the slow Hamiltonian of ``sys`` on a 1-D or 2-D grid.

    Parameters
    ----------
    sys : SpinHalf or Generic
        Fast system; its tracked states define the link phases.
    grid : Grid
        Site positions.  For ``boundary="periodic"`` the grid must not
        repeat its first site at the end (see :func:`ring_grid`).
    boundary : {"open", "periodic"}
    include_geom, include_dyn : bool
        Which slow potentials enter the site potential.

    Raises
    ------
    InvalidSampleError
        If any site has an invalid fast frame; the message names the site.
    """
    if grid.ndim not in (1, 2):
        raise ValueError("lattices are 1-D or 2-D")
    if grid.size > MAX_SITES:
        raise ValueError(f"lattice has {grid.size} sites; the dense solver is capped at {MAX_SITES}")
    pts = grid.points()
    vd, vg = potential_arrays(sys, pts)
    bad = ~(np.isfinite(vd) & np.isfinite(vg))
    V = np.where(include_dyn, vd, 0.0) + np.where(include_geom, vg, 0.0)
    if np.any(bad):
        site = tuple(int(i) for i in np.argwhere(bad)[0])
        raise InvalidSampleError(f"invalid fast frame at site {site}, position {pts[site].tolist()}")
    states = states_along(sys, pts.reshape(-1, 3)).reshape(tuple(grid.dims) + (-1,))
    if not np.all(np.isfinite(states)):
        site = tuple(int(i) for i in np.argwhere(~np.all(np.isfinite(states), axis=-1))[0])
        raise InvalidSampleError(f"invalid fast state at site {site}")

    links, angles = [], []
    for k in range(grid.ndim):
        nxt = np.roll(states, -1, axis=k)
        ov = np.sum(np.conj(states) * nxt, axis=-1)
        if boundary == "open":
            sl = [slice(None)] * grid.ndim
            sl[k] = slice(0, grid.dims[k] - 1)
            ov = ov[tuple(sl)]
        mag = np.abs(ov)
        if ov.size and np.min(mag) < 0.1:
            raise InvalidSampleError(
                f"neighbouring fast states along axis {k} are nearly orthogonal "
                f"(min overlap {np.min(mag):.3g}); refine the grid")
        links.append(ov / mag)
        angles.append(float(np.max(np.arccos(np.clip(mag, 0.0, 1.0)))) if mag.size else 0.0)

    _check_resolution(grid, V, angles)
    hop = tuple(sys.kinetic_prefactor / s**2 for s in grid.spacing)
    return LatticeHamiltonian(grid, V, links, hop, boundary)


def lowest_eigenpairs(H, k=1, vectors=True):
    """``k`` lowest eigenpairs of a lattice Hamiltonian (dense solve).

    Residuals are ``||H psi - E psi|| / ||psi||`` for each returned pair.
    """
    n = H.size
    if n > MAX_SITES:
        raise ValueError(f"lattice has {n} sites; the dense solver is capped at {MAX_SITES}")
    k = int(k)
    if not 1 <= k <= n:
        raise ValueError(f"k must be between 1 and the lattice dimension {n}, got {k}")
    M = H.matrix()
    w, v = scipy.linalg.eigh(M, subset_by_index=(0, k - 1))
    res = np.linalg.norm(M @ v - v * w[None, :], axis=0) / np.linalg.norm(v, axis=0)
    return EigResult(w, res, v if vectors else None, H.grid, H.boundary)
