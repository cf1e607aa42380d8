"""Born-Oppenheimer slow-mode potentials for atoms in static magnetic fields.

The fast spin follows the local field; what the slow centre-of-mass motion
inherits is a dynamical potential ``-mu |B|``, a Berry connection (seen
through its curvature and holonomy) and a non-negative geometric scalar
potential from the Fubini-Study metric.  Modules:

``numerics``   small eigensolver, finite differences, grids
``fields``     wires, uniform fields, analytic presets
``reduction``  V_dyn, pullback metric, Berry curvature, V_geom, Wilson loops
``trap``       scans, minimum search, Wing checks, contours
``spectrum``   Peierls lattice Hamiltonian and eigenpairs
``estimator``  scikit-learn transformer wrapper
``cli``        command-line front end
"""

from .fields import (
    AnalyticPreset,
    FieldSpec,
    SpecError,
    UniformField,
    WireLine,
    eval_B,
    eval_grad_B,
    preset_cube_trap,
    preset_ring_waveguide,
)
from .numerics import Grid, herm_eig
from .reduction import (
    DegeneracyError,
    Generic,
    InvalidSampleError,
    SpinHalf,
    berry_curvature,
    eigenframe,
    potentials,
    pullback_metric,
    v_dyn,
    v_geom,
    v_tensor_general,
    wilson_loop_phase,
)
from .spectrum import build_lattice, lowest_eigenpairs
from .trap import contour_slice, find_minima, scan_potential, wing_check

__version__ = "0.1.0"

__all__ = [
    "AnalyticPreset", "FieldSpec", "SpecError", "UniformField", "WireLine",
    "eval_B", "eval_grad_B", "preset_cube_trap", "preset_ring_waveguide",
    "Grid", "herm_eig",
    "DegeneracyError", "Generic", "InvalidSampleError", "SpinHalf",
    "berry_curvature", "eigenframe", "potentials", "pullback_metric",
    "v_dyn", "v_geom", "v_tensor_general", "wilson_loop_phase",
    "build_lattice", "lowest_eigenpairs",
    "contour_slice", "find_minima", "scan_potential", "wing_check",
]
