"""Stochastically forced geodesic flows on Lie groups.

Algebraic hypoellipticity checks, ensemble integrators and the statistical
and grid-based checks of their equilibria.
"""
from .lie import (
    AlgebraError,
    ArnoldForm,
    LieAlgebraSpec,
    arnold_form,
    bracket,
    energy,
    load_algebra,
    momentum,
    preset,
)
from .hypo import (
    ForcingSpec,
    HullReport,
    SubspaceBasis,
    check_constrained_hormander,
    check_langevin_hormander,
    p_hull,
    q_invariant_closure,
)
from .curves import CurveSpec, center_curve, sigma_matrix
from .charts import ZChart, circle_chart, curve_chart, point_chart, sphere_orbit_chart
from .simulate import (
    ConstrainedConfig,
    LangevinConfig,
    TrajectoryEnsemble,
    constrained_path,
    ensemble_run,
    integrate_geodesic,
    langevin_path,
)
from .fokker_planck import CFLError, FPGrid, fp_solve_torus, l2_monitor

__version__ = "0.1.0"
