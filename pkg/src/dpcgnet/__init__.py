"""Deflated preconditioned CG with DeepONet-generated deflation spaces."""

from .sparse import SparseMatrix, NotSPDError, spmv, cholesky, dense_qr, dense_sym_eig
from .problems import (
    Grid2D,
    ScalarField,
    ParametricProblem,
    build_poisson_1d,
    build_darcy_2d,
    build_jump_darcy,
    heat_step_system,
    sample_grf,
)
from .precond import build_preconditioner
from .grouping import IndexSets, groups_from_labels, partition_graph, kmeans_groups
from .deflation import (
    TentativeBasis,
    DeflationOperator,
    nico_vectors,
    tb_vectors,
    rs_vectors,
    assemble_deflation,
)
from .krylov import SolveOptions, SolveReport, solve, estimate_theta, break_even_k
from .onet import DeepONetModel, FFN, deeponet_eval, train, grad_check, save_model, load_model

__version__ = "0.1.0"
