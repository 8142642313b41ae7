"""Structure-exploiting interior-point solver for convex QCQPs.

Problems come in a one-shot dense form and a stage-structured
optimal-control form. The solver is a primal-dual interior-point method
with a Mehrotra predictor-corrector step; per-block slack elimination
reduces each KKT system to a problem over the decision variables, which
is factorized densely or by a Riccati recursion over the stages.
Condensing transforms rewrite optimal-control problems into smaller
equivalents and expand the solutions back.
"""

from .benchmark import (CONFIGS, BenchRecord, BenchReport, MassSpringSpec,
                        mass_spring_matrices, mass_spring_ocp,
                        polygon_approximation, report_to_csv, report_to_json,
                        run_benchmark, run_one, save_report,
                        second_mass_energy, table1_problems, table2_problems)
from .condensing import (FullMap, LiftMap, PartialMap, Pipeline, X0Map,
                         condense_quadratic_constraint,
                         estimate_condensing_flops, expand_full, expand_partial,
                         expand_x0, full_condense, ocp_to_dense,
                         partial_condense, remove_x0)
from .ipm import (Direction, IpmIterate, IpmSettings, IpmStats, LinearizedData,
                  Residuals, Solution, affine_direction, compute_residuals,
                  conditional_corrector, dense_parts, initial_iterate,
                  iterative_refinement, kkt_apply, max_step, mehrotra_sigma,
                  ocp_parts, solve, step_lengths, update_linearization)
from .kkt_dense import (DenseFactor, DenseKkt, eliminate_ineq, factorize_dense,
                        solve_dense)
from .kkt_ocp import RiccatiKkt
from .layout import ProblemLayout, layout_of
from .linalg import IndefiniteError
from .model import (HARD, DenseDims, DenseQcqp, Dynamics, OcpDims, OcpQcqp,
                    OcpStage, QuadConstraint, StageCost, StageIneq, StageQuad,
                    StageSlack, ValidationReport, new_dense_qcqp, new_ocp_qcqp,
                    validate)
from .problem_io import (load_problem, problem_from_tree, problem_to_tree,
                         save_problem)

__version__ = "0.1.0"

__all__ = [
    "BenchRecord", "BenchReport", "CONFIGS", "Direction", "DenseDims",
    "DenseFactor", "DenseKkt", "DenseQcqp", "Dynamics", "FullMap", "HARD",
    "IndefiniteError", "IpmIterate", "IpmSettings", "IpmStats", "LiftMap",
    "LinearizedData", "MassSpringSpec", "OcpDims", "OcpQcqp", "OcpStage",
    "PartialMap", "Pipeline", "ProblemLayout", "QuadConstraint", "Residuals",
    "RiccatiKkt", "Solution", "StageCost", "StageIneq", "StageQuad",
    "StageSlack", "ValidationReport", "X0Map", "affine_direction",
    "compute_residuals", "condense_quadratic_constraint",
    "conditional_corrector", "dense_parts", "eliminate_ineq",
    "estimate_condensing_flops", "expand_full", "expand_partial", "expand_x0",
    "factorize_dense", "full_condense", "initial_iterate",
    "iterative_refinement", "kkt_apply", "layout_of", "load_problem",
    "mass_spring_matrices", "mass_spring_ocp", "max_step", "mehrotra_sigma",
    "new_dense_qcqp", "new_ocp_qcqp", "ocp_parts", "ocp_to_dense",
    "partial_condense", "polygon_approximation", "problem_from_tree",
    "problem_to_tree", "remove_x0", "report_to_csv", "report_to_json",
    "run_benchmark", "run_one", "save_problem", "save_report",
    "second_mass_energy", "solve", "solve_dense", "step_lengths",
    "table1_problems", "table2_problems", "update_linearization", "validate",
]
