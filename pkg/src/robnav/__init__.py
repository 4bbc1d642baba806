"""Robust multi-criteria fluence planning toolkit.

Computes Pareto-fronts of interval-uncertain linear planning problems with an
inverse-robustness objective via a semidefinite relaxation, reconstructs
feasible points by a closed-form projection, and serves an interactive
navigation API.
"""
from .model import (
    LinearObjective,
    NominalLp,
    ProblemModel,
    Structure,
    assemble_nominal,
    load_problem,
    mean_objective,
    save_problem,
)
from .intervals import (
    IntervalMatrix,
    IntervalVector,
    QcqpInstance,
    QcqpPoint,
    RobustnessSpec,
    assemble_qcqp,
    lp_at_level,
    make_interval,
    qcqp_feasible,
    rohn_split,
    strong_solution_check,
)
from .relaxation import (
    SdpInstance,
    SdpSolution,
    ValidIneqOptions,
    build_sdp,
    extract_border,
    homogenize_qcqp,
    lift_point,
    scalarize_sdp,
)
from .backend import LpInstance, SolveReport, rank_of, solve_lp, solve_sdp
from .validation import ValidationError

__version__ = "0.1.0"
