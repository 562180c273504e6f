"""Structured finite elements on the unit interval/square."""
from .assembly import (AssemblyFailure, NonpositiveWeight, assemble_div_coupling, assemble_elastic,
                       assemble_gradgrad, assemble_load, assemble_strain_load, assemble_stress_strain,
                       assemble_weighted_mass, batches, rigid_body_modes, strain_matrix)
from .linalg import (DegenerateSpace, EigSolverFailure, IndefinitePivot, LinearSystem, Norms,
                     SolverBreakdown, estimate_inf_sup, h1_matrix, korn_constant, mandel_strain, norms,
                     smallest_generalized, solve_block, solve_constrained, solve_saddle, solve_spd,
                     start_vector, strain_bound_constant)
from .mesh import FeField, FeSpace, LagrangeElement, Mesh, PeriodicFeSpace, recovered_strain
from .quadrature import box_rule, simplex_rule, triangle_rule
