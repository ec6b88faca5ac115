"""Bond-based nonlocal diffusion/elasticity toolkit with optimal control.

Finite-element assembly of horizon-limited pairwise stiffness forms on
uniform interval and triangulated rectangle meshes, their local
(vanishing-horizon) limits, box-constrained tracking-type optimal
control via projected gradients, and a study harness for horizon- and
mesh-refinement limits.
"""

__version__ = "0.1.0"

from .control import (ControlBox, ControlProblem, SolutionTriple,
                      build_operators, export_solution,
                      solve_kkt_projected_gradient, verify_kkt)
from .convergence_lab import (StudyReport, asymptotic_compatibility_study,
                              gamma_energy_study, h_refinement_study,
                              manufactured_forward_study, measure_omega,
                              poincare_sweep)
from .errors import (ConfigurationError, ConvergenceError, DomainError,
                     MatrixError, PeridynError)
from .kernel import KernelSpec, MaterialField, normalize, verify_assumptions
from .mesh import (Domain, Mesh, build_interval_mesh, build_mesh,
                   build_rect_mesh, restrict_to_omega)
from .quadrature import QuadratureRule

__all__ = [
    "ConfigurationError", "ConvergenceError", "DomainError", "MatrixError",
    "PeridynError", "KernelSpec", "MaterialField", "normalize",
    "verify_assumptions", "Domain", "Mesh", "build_interval_mesh",
    "build_mesh", "build_rect_mesh", "restrict_to_omega", "QuadratureRule",
    "ControlBox", "ControlProblem", "SolutionTriple", "build_operators",
    "export_solution", "solve_kkt_projected_gradient", "verify_kkt",
    "StudyReport", "asymptotic_compatibility_study", "gamma_energy_study",
    "h_refinement_study", "manufactured_forward_study", "measure_omega",
    "poincare_sweep", "__version__",
]
