"""Born-Oppenheimer back-reaction of a fast quantum system on slow motion.

Two kinds of fast system are supported:

``SpinHalf``
    A spin-1/2 with Hamiltonian ``-mu B(R).sigma``.  The tracked state is
    the one with its spin along ``B`` (eigenvalue ``-mu |B|``, the ground
    state for ``mu > 0``).  Geometry is computed from the Bloch vector
    ``n = B/|B|`` using closed forms.
``Generic``
    A user supplied Hermitian ``H(R)`` of any dimension, with the level
    index to follow.  Geometry comes from the quantum geometric tensor
    built from matrix elements of ``dH/dR_i``.

Only gauge-invariant quantities are exported: the dynamical potential,
the pulled-back Fubini-Study metric ``gamma_ij``, the curvature
``F_ij``, the geometric scalar potential and Bargmann (Wilson loop)
phases.  The curvature convention is fixed by holonomy: the Wilson phase
of a small counter-clockwise loop in the (i, j) plane is ``F_ij * area``.

Invalid samples (inside a wire core, ``|B|`` below threshold, collapsed
spectral gap) give NaN in the array APIs and ``valid=False`` on records.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fields import AnalyticPreset, FieldSpec, eval_B, eval_grad_B
from .numerics import DEFAULT_STEP, antisym3, herm_eig, sym3

__all__ = [
    "InvalidSampleError",
    "DegeneracyError",
    "RefinementError",
    "SpinHalf",
    "Generic",
    "EigenFrame",
    "PotentialSample",
    "as_generic",
    "bloch_vectors",
    "spin_states",
    "eigenframe",
    "v_dyn",
    "pullback_metric",
    "berry_curvature",
    "v_geom",
    "potentials",
    "potential_arrays",
    "total_potential",
    "qgt_from_frame",
    "v_tensor_general",
    "bargmann_phase",
    "wilson_loop_phase",
    "plaquette_phases",
    "states_along",
]

PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


class InvalidSampleError(ValueError):
    """A point where the adiabatic reduction is undefined."""


class DegeneracyError(InvalidSampleError):
    """Tracked level collides with another level."""


class RefinementError(ValueError):
    """Consecutive loop states are too close to orthogonal; refine the loop."""


@dataclass(frozen=True)
class SpinHalf:
    """Spin-1/2 in the field ``spec`` with magnetic moment ``mu``.

    ``length_scale`` sets the finite-difference step (``1e-5`` times it,
    times the field's geometric scale).  ``method`` chooses how the
    gradient of the Bloch vector is obtained: ``"fd"`` differentiates
    ``n`` directly, ``"jacobian"`` projects the field Jacobian, and
    ``"auto"`` uses the Jacobian when the field has closed-form
    derivatives (wires and uniform sources only).
    """

    spec: FieldSpec
    mu: float = 1.0
    hbar: float = 1.0
    mass: float = 1.0
    length_scale: float = 1.0
    b_min: float = 1e-10
    method: str = "auto"

    def __post_init__(self):
        if self.mu == 0:
            raise ValueError("mu must be non-zero")
        if self.method not in ("auto", "fd", "jacobian"):
            raise ValueError("method must be 'auto', 'fd' or 'jacobian'")

    @property
    def gradient_method(self):
        if self.method != "auto":
            return self.method
        closed = all(not isinstance(s, AnalyticPreset) for s in self.spec.sources)
        return "jacobian" if closed else "fd"

    @property
    def step(self):
        return DEFAULT_STEP * self.length_scale * self.spec.scale

    @property
    def kinetic_prefactor(self):
        return self.hbar**2 / (2.0 * self.mass)


@dataclass(frozen=True)
class Generic:
    """Arbitrary Hermitian fast Hamiltonian ``H(R)``.

    Parameters
    ----------
    H : callable
        Maps a parameter point ``R`` (1-D array) to an (N, N) Hermitian matrix.
    dH : callable, optional
        Maps ``R`` to an array (M, N, N) of partial derivatives ``dH/dR_i``.
        Central differences of ``H`` are used when omitted.
    level : int
        Index (ascending order) of the fast level being followed.
    """

    H: Callable
    dH: Optional[Callable] = None
    level: int = 0
    hbar: float = 1.0
    mass: float = 1.0
    length_scale: float = 1.0
    gap_min: float = 1e-8

    @property
    def step(self):
        return DEFAULT_STEP * self.length_scale

    @property
    def kinetic_prefactor(self):
        return self.hbar**2 / (2.0 * self.mass)


@dataclass
class EigenFrame:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    level: int
    bloch: Optional[np.ndarray] = None
    valid: bool = True
    diagnostic: str = ""

    @property
    def state(self):
        """Eigenvector of the tracked level."""
        return self.eigenvectors[:, self.level]

    @property
    def energy(self):
        return float(self.eigenvalues[self.level])


@dataclass
class PotentialSample:
    v_dyn: float
    gamma: np.ndarray
    curvature: np.ndarray
    v_geom: float
    valid: bool = True
    diagnostic: str = ""

    @property
    def v_total(self):
        return self.v_dyn + self.v_geom

    def to_dict(self):
        return {
            "v_dyn": self.v_dyn,
            "v_geom": self.v_geom,
            "v_total": self.v_total,
            "gamma": np.asarray(self.gamma).tolist(),
            "curvature": np.asarray(self.curvature).tolist(),
            "valid": self.valid,
            "diagnostic": self.diagnostic,
        }


# -- spin-1/2 closed forms ---------------------------------------------------

def bloch_vectors(sys, x):
    """Unit vectors ``B/|B|`` at points ``x``; NaN where invalid."""
    B = eval_B(sys.spec, x)
    mag = np.linalg.norm(B, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = B / mag
    return np.where(mag > sys.b_min, n, np.nan)


def spin_states(n):
    """Spinors polarised along unit vectors ``n`` (shape (..., 3) -> (..., 2)).

    The phase is fixed so the larger component is real and positive.
    """
    n = np.asarray(n, dtype=float)
    nx, ny, nz = n[..., 0], n[..., 1], n[..., 2]
    upper = nz >= 0
    # Two charts for the same ray, each regular on its hemisphere.
    a = np.where(upper, 1.0 + nz, nx - 1j * ny)
    b = np.where(upper, nx + 1j * ny, 1.0 - nz)
    psi = np.stack([a, b], axis=-1).astype(complex)
    psi = psi / np.linalg.norm(psi, axis=-1, keepdims=True)
    pick = np.where(np.abs(psi[..., 1]) > np.abs(psi[..., 0]), 1, 0)
    pivot = np.take_along_axis(psi, pick[..., None], axis=-1)
    return psi * (np.abs(pivot) / pivot)


def _bloch_gradient(sys, x):
    """dn[..., i, :] = d n / d x_i."""
    x = np.asarray(x, dtype=float)
    if sys.gradient_method == "jacobian":
        B = eval_B(sys.spec, x)
        mag = np.linalg.norm(B, axis=-1)
        J = eval_grad_B(sys.spec, x)
        with np.errstate(invalid="ignore", divide="ignore"):
            n = B / mag[..., None]
            dn = (J - np.einsum("...ij,...j->...i", J, n)[..., None] * n[..., None, :]) / mag[..., None, None]
        return np.where((mag > sys.b_min)[..., None, None], dn, np.nan)
    h = sys.step
    rows = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        rows.append((bloch_vectors(sys, x + e) - bloch_vectors(sys, x - e)) / (2.0 * h))
    return np.stack(rows, axis=-2)


def _spin_geometry(sys, x):
    n = bloch_vectors(sys, x)
    dn = _bloch_gradient(sys, x)
    gamma = sym3(0.25 * np.einsum("...ia,...ja->...ij", dn, dn))
    cross = np.cross(dn[..., :, None, :], dn[..., None, :, :])
    triple = np.einsum("...a,...ija->...ij", n, cross)
    curvature = antisym3(-0.5 * triple)
    return n, gamma, curvature


# -- generic N-level path ----------------------------------------------------

def as_generic(sys):
    """Express a ``SpinHalf`` system as a ``Generic`` 2x2 Hamiltonian.

    The derivative callback uses the analytic field Jacobian.
    """
    mu = sys.mu

    def H(R):
        B = eval_B(sys.spec, np.asarray(R, dtype=float))
        return -mu * np.einsum("a,aij->ij", B, PAULI)

    def dH(R):
        J = eval_grad_B(sys.spec, np.asarray(R, dtype=float))
        return -mu * np.einsum("ia,ajk->ijk", J, PAULI)

    # aligned spin is the lower level when mu > 0
    return Generic(H, dH, level=0 if mu > 0 else 1, hbar=sys.hbar, mass=sys.mass,
                   length_scale=sys.length_scale * sys.spec.scale)


def _generic_dH(sys, R):
    R = np.asarray(R, dtype=float)
    if sys.dH is not None:
        return np.asarray(sys.dH(R), dtype=complex)
    h = sys.step
    out = []
    for i in range(R.size):
        e = np.zeros_like(R)
        e[i] = h
        out.append((np.asarray(sys.H(R + e), dtype=complex) - np.asarray(sys.H(R - e), dtype=complex)) / (2.0 * h))
    return np.stack(out)


def _check_gap(w, level, gap_min):
    others = np.delete(np.arange(w.size), level)
    gaps = np.abs(w[others] - w[level])
    k = int(np.argmin(gaps))
    if gaps[k] <= gap_min:
        raise DegeneracyError(
            f"levels {level} and {int(others[k])} are degenerate (gap {gaps[k]:.3e} <= {gap_min:g})"
        )


def qgt_from_frame(w, V, dH, level):
    """Tensor ``V_ij = sum_{m != n} <n|d_i H|m><m|d_j H|n> / (l_n - l_m)^2``.

    Parameters
    ----------
    w : (N,) eigenvalues, V : (N, N) eigenvectors as columns,
    dH : (M, N, N) derivatives of the Hamiltonian, level : tracked index.
    """
    w = np.asarray(w, dtype=float)
    V = np.asarray(V, dtype=complex)
    # matrix elements in the eigenbasis: D[i, a, b] = <a| d_i H |b>
    D = np.einsum("ka,ikl,lb->iab", V.conj(), np.asarray(dH, dtype=complex), V)
    others = np.delete(np.arange(w.size), level)
    denom = (w[level] - w[others]) ** 2
    left = D[:, level, others]  # <n|d_i H|m>
    right = D[:, others, level]  # <m|d_j H|n>
    return np.einsum("im,jm->ij", left / denom, right)


def v_tensor_general(sys, R):
    """Quantum geometric tensor of the tracked level at ``R``.

    Raises :class:`DegeneracyError` when the tracked level is within
    ``gap_min`` of another level.
    """
    R = np.asarray(R, dtype=float)
    w, V = herm_eig(sys.H(R))
    _check_gap(w, sys.level, sys.gap_min)
    return qgt_from_frame(w, V, _generic_dH(sys, R), sys.level)


def _generic_geometry(sys, R):
    T = v_tensor_general(sys, R)
    gamma = sym3(T.real)
    # -2 Im V: curvature whose flux equals the Bargmann phase.
    curvature = antisym3(-2.0 * T.imag)
    return gamma, curvature


# -- point-level API ---------------------------------------------------------

def eigenframe(sys, x):
    """Eigenvalues, phase-fixed eigenvectors and (spin-1/2) Bloch vector at ``x``."""
    x = np.asarray(x, dtype=float)
    if isinstance(sys, SpinHalf):
        B = eval_B(sys.spec, x)
        mag = float(np.linalg.norm(B))
        if not (np.isfinite(mag) and mag > sys.b_min):
            diag = "point inside a wire core" if not np.isfinite(mag) else f"|B| = {mag:.3e} below {sys.b_min:g} (degenerate point)"
            return EigenFrame(np.full(2, np.nan), np.full((2, 2), np.nan + 0j), 0, np.full(3, np.nan), False, diag)
        n = B / mag
        up = spin_states(n)
        down = spin_states(-n)
        e_up = -sys.mu * mag
        if sys.mu > 0:
            return EigenFrame(np.array([e_up, -e_up]), np.stack([up, down], axis=1), 0, n)
        return EigenFrame(np.array([-e_up, e_up]), np.stack([down, up], axis=1), 1, n)
    w, V = herm_eig(sys.H(x))
    try:
        _check_gap(w, sys.level, sys.gap_min)
    except DegeneracyError as exc:
        return EigenFrame(w, V, sys.level, None, False, str(exc))
    return EigenFrame(w, V, sys.level)


def v_dyn(sys, x):
    """Dynamical potential: the tracked fast eigenvalue (``-mu |B|``)."""
    if isinstance(sys, SpinHalf):
        return -sys.mu * np.where(np.isfinite(bloch_vectors(sys, x)[..., 0]),
                                  np.linalg.norm(eval_B(sys.spec, x), axis=-1), np.nan)
    frame = eigenframe(sys, x)
    return frame.energy if frame.valid else np.nan


def pullback_metric(sys, x):
    """Pulled-back Fubini-Study metric ``gamma_ij`` (shape (..., 3, 3))."""
    if isinstance(sys, SpinHalf):
        return _spin_geometry(sys, x)[1]
    try:
        return _generic_geometry(sys, x)[0]
    except InvalidSampleError:
        m = np.size(x)
        return np.full((m, m), np.nan)


def berry_curvature(sys, x):
    """Antisymmetric curvature ``F_ij`` (shape (..., 3, 3))."""
    if isinstance(sys, SpinHalf):
        return _spin_geometry(sys, x)[2]
    try:
        return _generic_geometry(sys, x)[1]
    except InvalidSampleError:
        m = np.size(x)
        return np.full((m, m), np.nan)


def _contract(gamma, g, x):
    if g is None:
        return np.trace(gamma, axis1=-2, axis2=-1)
    ginv = g(x) if callable(g) else np.asarray(g, dtype=float)
    return np.einsum("...ij,...ij->...", ginv, gamma)


def v_geom(sys, x, g=None):
    """Geometric scalar potential ``(hbar^2/2m) g^{ij} gamma_ij``.

    ``g`` is the inverse spatial metric (array or callable of ``x``);
    identity by default.
    """
    return sys.kinetic_prefactor * _contract(pullback_metric(sys, x), g, x)


def potentials(sys, x, g=None):
    """All slow-mode potentials at a single point as a :class:`PotentialSample`."""
    x = np.asarray(x, dtype=float)
    nan3 = np.full((3, 3), np.nan)
    if isinstance(sys, SpinHalf):
        _, gamma, curv = _spin_geometry(sys, x)
        vd = float(v_dyn(sys, x))
        if not (np.isfinite(vd) and np.all(np.isfinite(gamma))):
            frame = eigenframe(sys, x)
            diag = frame.diagnostic or "invalid point in the finite-difference stencil"
            return PotentialSample(np.nan, nan3, nan3, np.nan, False, diag)
    else:
        frame = eigenframe(sys, x)
        if not frame.valid:
            return PotentialSample(np.nan, nan3, nan3, np.nan, False, frame.diagnostic)
        vd = frame.energy
        gamma, curv = _generic_geometry(sys, x)
    vg = float(sys.kinetic_prefactor * _contract(gamma, g, x))
    return PotentialSample(vd, gamma, curv, vg)


def potential_arrays(sys, x, g=None):
    """Vectorised ``(v_dyn, v_geom)`` over points ``x`` of shape (..., 3)."""
    x = np.asarray(x, dtype=float)
    if isinstance(sys, SpinHalf):
        return v_dyn(sys, x), v_geom(sys, x, g)
    flat = x.reshape(-1, x.shape[-1])
    vd = np.empty(len(flat))
    vg = np.empty(len(flat))
    for k, p in enumerate(flat):
        s = potentials(sys, p, g)
        vd[k], vg[k] = s.v_dyn, s.v_geom
    return vd.reshape(x.shape[:-1]), vg.reshape(x.shape[:-1])


def total_potential(sys, include_geom=True, g=None):
    """Callable ``V(x) = v_dyn + v_geom`` (or ``v_dyn`` alone).

    With ``include_geom=False`` only the laboratory part is returned, which
    is what Wing's theorem constrains.
    """

    def V(x):
        vd, vg = potential_arrays(sys, x, g)
        return vd + vg if include_geom else vd

    return V


# -- holonomy ----------------------------------------------------------------

def bargmann_phase(states, closed=True, min_overlap=0.1):
    """Gauge-invariant phase ``-arg prod_k <e_k|e_{k+1}>`` of a chain of states.

    ``states`` has shape (K, N).  With ``closed=True`` the last state is
    joined back to the first.  Returns a value in (-pi, pi].
    """
    states = np.asarray(states, dtype=complex)
    if np.any(~np.isfinite(states)):
        raise InvalidSampleError("loop passes through an invalid point")
    nxt = np.roll(states, -1, axis=0) if closed else states[1:]
    cur = states if closed else states[:-1]
    ov = np.einsum("ka,ka->k", cur.conj(), nxt)
    weak = np.abs(ov) <= min_overlap
    if np.any(weak):
        k = int(np.argmax(weak))
        raise RefinementError(
            f"overlap |<e_{k}|e_{k + 1}>| = {abs(ov[k]):.3e} <= {min_overlap}; refine the loop"
        )
    phase = -np.angle(np.prod(ov / np.abs(ov)))
    return float(np.pi if phase <= -np.pi else phase)


def states_along(sys, points):
    """Tracked fast states at each point, shape (K, N)."""
    points = np.asarray(points, dtype=float)
    if isinstance(sys, SpinHalf):
        n = bloch_vectors(sys, points)
        return spin_states(n)
    out = []
    for p in points:
        frame = eigenframe(sys, p)
        if not frame.valid:
            raise InvalidSampleError(frame.diagnostic)
        out.append(frame.state)
    return np.array(out)


def wilson_loop_phase(sys, loop, min_overlap=0.1):
    """Berry phase of the tracked state around a closed polyline.

    A repeated final point equal to the first is dropped; the loop is
    always closed back to its start.
    """
    loop = np.asarray(loop, dtype=float)
    if len(loop) > 1 and np.array_equal(loop[0], loop[-1]):
        loop = loop[:-1]
    return bargmann_phase(states_along(sys, loop), closed=True, min_overlap=min_overlap)


def plaquette_phases(sys, mesh, min_overlap=0.1):
    """Bargmann phase of every cell of a 2-D mesh of points (shape (n1, n2, 3)).

    Cells are traversed ``(i, j) -> (i+1, j) -> (i+1, j+1) -> (i, j+1)``.
    """
    mesh = np.asarray(mesh, dtype=float)
    n1, n2 = mesh.shape[:2]
    psi = states_along(sys, mesh.reshape(-1, 3)).reshape(n1, n2, -1)
    a = psi[:-1, :-1]
    b = psi[1:, :-1]
    c = psi[1:, 1:]
    d = psi[:-1, 1:]
    ov = [np.einsum("...k,...k->...", p.conj(), q) for p, q in ((a, b), (b, c), (c, d), (d, a))]
    mags = np.stack([np.abs(o) for o in ov])
    if np.any(mags <= min_overlap):
        raise RefinementError("mesh too coarse: near-orthogonal neighbouring states")
    prod = ov[0] * ov[1] * ov[2] * ov[3]
    return -np.angle(prod)
