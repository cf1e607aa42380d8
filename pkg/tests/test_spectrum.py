import json
import warnings

import numpy as np
import pytest

from geomtrap import fields as F
from geomtrap import reduction as R
from geomtrap import spectrum as S
from geomtrap.numerics import Grid


def uniform_sys():
    return R.SpinHalf(F.FieldSpec((F.UniformField((0, 0, 1)),)))


def test_open_chain_matches_discrete_oracle():
    n, L = 64, 1.0
    H = S.build_lattice(uniform_sys(), S.box_grid(L, n), include_dyn=False)
    res = S.lowest_eigenpairs(H, k=5)
    t = 0.5 / (L / (n + 1)) ** 2
    m = np.arange(1, 6)
    exact = 2 * t * (1 - np.cos(m * np.pi / (n + 1)))
    assert np.allclose(res.eigenvalues, exact, rtol=1e-12)
    assert np.all(res.residuals < 1e-10)


def test_box_second_order_convergence():
    exact = np.pi**2 / 2
    errs = []
    for n in (63, 127, 255):
        H = S.build_lattice(uniform_sys(), S.box_grid(1.0, n), include_dyn=False)
        errs.append(abs(S.lowest_eigenpairs(H, 1).eigenvalues[0] - exact))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(ratios - 4) < 0.3 * 4)


def test_ring_with_constant_phase():
    n, L, phi = 200, 2.0, 0.7
    links = [np.full(n, np.exp(1j * phi / n))]
    H = S.LatticeHamiltonian.from_arrays(np.zeros(n), L / n, links, boundary="periodic")
    assert np.isclose(H.loop_phase(0), phi)
    E = S.lowest_eigenpairs(H, 3).eigenvalues
    m = np.array([0, -1, 1])
    exact = np.sort(0.5 * (2 * np.pi * m / L + phi / L) ** 2)
    assert np.allclose(E, exact, rtol=1e-3)


@pytest.mark.parametrize("boundary", ["open", "periodic"])
def test_gauge_rephasing_invariance(boundary):
    rng = np.random.default_rng(0)
    dims = (7, 6)
    V = rng.normal(size=dims)
    shapes = [(6 if boundary == "open" else 7, 6), (7, 5 if boundary == "open" else 6)]
    links = [np.exp(1j * rng.uniform(-np.pi, np.pi, size=s)) for s in shapes]
    H = S.LatticeHamiltonian.from_arrays(V, (0.1, 0.2), links, boundary=boundary)
    H2 = H.rephase(rng.uniform(-np.pi, np.pi, size=dims))
    M = H.matrix()
    assert np.allclose(M, M.conj().T, atol=0)
    a = S.lowest_eigenpairs(H, 10).eigenvalues
    b = S.lowest_eigenpairs(H2, 10).eigenvalues
    assert np.max(np.abs(a - b)) < 1e-10


def test_open_chain_phases_are_removable():
    rng = np.random.default_rng(1)
    n = 40
    links = [np.exp(1j * rng.uniform(-np.pi, np.pi, n - 1))]
    a = S.LatticeHamiltonian.from_arrays(np.zeros(n), 0.1, links)
    b = S.LatticeHamiltonian.from_arrays(np.zeros(n), 0.1)
    assert np.allclose(S.lowest_eigenpairs(a, 5).eigenvalues, S.lowest_eigenpairs(b, 5).eigenvalues, atol=1e-10)


def test_rephase_keeps_loop_phase():
    n = 30
    links = [np.exp(1j * np.linspace(0, 1, n))]
    H = S.LatticeHamiltonian.from_arrays(np.zeros(n), 0.1, links, boundary="periodic")
    H2 = H.rephase(np.random.default_rng(2).uniform(-3, 3, n))
    assert np.isclose(H.loop_phase(0), H2.loop_phase(0))


def test_two_site_ring_doubles_the_bond():
    H = S.LatticeHamiltonian.from_arrays(np.zeros(2), 1.0, boundary="periodic")
    M = H.matrix()
    assert np.allclose(M, [[1, -1], [-1, 1]])


def test_k_and_size_limits():
    H = S.LatticeHamiltonian.from_arrays(np.zeros(5), 0.1)
    with pytest.raises(ValueError, match="lattice dimension 5"):
        S.lowest_eigenpairs(H, 6)
    with pytest.raises(ValueError):
        S.lowest_eigenpairs(H, 0)
    big = Grid.from_bounds([0, 0], [1, 1], [129, 128], axes=(0, 1))
    with pytest.raises(ValueError, match="capped"):
        S.build_lattice(uniform_sys(), big)


def test_bad_links_rejected():
    with pytest.raises(ValueError, match="unit modulus"):
        S.LatticeHamiltonian.from_arrays(np.zeros(4), 0.1, [np.full(3, 2.0)])
    with pytest.raises(ValueError, match="shape"):
        S.LatticeHamiltonian.from_arrays(np.zeros(4), 0.1, [np.ones(4)])
    with pytest.raises(ValueError, match="boundary"):
        S.LatticeHamiltonian.from_arrays(np.zeros(4), 0.1, boundary="twisted")
    with pytest.raises(ValueError, match="periodic"):
        S.LatticeHamiltonian.from_arrays(np.zeros(4), 0.1).loop_phase()


def test_constant_and_helical_links_trivial_inside_a_period():
    for spec in (F.constant_direction(1.0, 0.5), F.helical_xz(1.0, 2.0)):
        H = S.build_lattice(R.SpinHalf(spec), S.box_grid(1.0, 50))
        assert np.allclose(H.links[0], 1.0, atol=1e-12)


def test_transverse_ring_loop_phase_is_minus_wilson():
    sys = R.SpinHalf(F.transverse_helix(1.0, 1.0))
    g = S.ring_grid(2 * np.pi, 400)
    H = S.build_lattice(sys, g, boundary="periodic")
    w = R.wilson_loop_phase(sys, g.points())
    assert np.isclose(H.loop_phase(0), -w, atol=1e-12)
    assert abs(abs(w) - np.pi * (1 - 1 / np.sqrt(2))) < 1e-3


def test_helical_ring_half_integer_spectrum():
    sys = R.SpinHalf(F.helical_xz(1.0, 2.0))
    H = S.build_lattice(sys, S.ring_grid(np.pi, 256), boundary="periodic")
    assert np.isclose(abs(H.loop_phase(0)), np.pi)
    E = S.lowest_eigenpairs(H, 4).eigenvalues
    # V = -1 + 1/2 and levels 0.5 (2n+1)^2, each twice
    exact = -0.5 + 0.5 * np.array([1, 1, 9, 9])
    assert np.allclose(E, exact, rtol=1e-3, atol=1e-4)


def test_invalid_site_named():
    spec = F.FieldSpec((F.WireLine((0, 0, 0), (0, 0, 1), 1.0),))
    g = Grid.from_bounds([-1], [1], 5, axes=(0,))
    with pytest.raises(R.InvalidSampleError, match=r"site \(2,\)"):
        S.build_lattice(R.SpinHalf(spec), g)


def test_nearly_orthogonal_neighbours_rejected():
    sys = R.SpinHalf(F.helical_xz(1.0, 33.0))
    with pytest.raises(R.InvalidSampleError, match="refine"), warnings.catch_warnings():
        warnings.simplefilter("ignore", S.ResolutionWarning)
        S.build_lattice(sys, S.box_grid(1.0, 10))


def test_coarse_grid_warns():
    sys = R.SpinHalf(F.helical_xz(1.0, 8.0))
    with pytest.warns(S.ResolutionWarning):
        S.build_lattice(sys, S.box_grid(1.0, 20))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        S.build_lattice(sys, S.box_grid(1.0, 400))


def test_hedgehog_plaquette_lattice_is_hermitian_with_flux():
    sys = R.SpinHalf(F.hedgehog(1.0, 0.0))
    g = Grid.from_bounds([-0.4, -0.4], [0.4, 0.4], 12, axes=(0, 1), fixed=[0, 0, 1.0])
    H = S.build_lattice(sys, g)
    M = H.matrix()
    assert np.allclose(M, M.conj().T, atol=1e-14)
    u0, u1 = H.links
    # plaquette product carries the Berry flux through each cell
    plaq = u0[:, :-1] * u1[1:, :] * np.conj(u0[:, 1:]) * np.conj(u1[:-1, :])
    flux = np.sum(np.angle(plaq))
    mesh = g.points()
    ref = np.sum(R.plaquette_phases(sys, mesh))
    assert np.isclose(abs(flux), abs(ref), rtol=1e-10)
    assert abs(flux) > 0.1


def test_result_json():
    H = S.build_lattice(uniform_sys(), S.box_grid(1.0, 16), include_dyn=False)
    r = S.lowest_eigenpairs(H, 2)
    d = json.loads(r.to_json(include_vectors=True))
    assert len(d["eigenvalues"]) == 2 and len(d["eigenvectors"]["real"]) == 2
    assert d["grid"]["dims"] == [16]
