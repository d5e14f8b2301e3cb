"""Geometric multigrid with successive subspace correction smoothers.

P1 finite elements on uniformly and locally refined triangulations of the
unit square (hanging nodes included), symmetric V-cycles whose smoothers
are multiplicative Schwarz sweeps, and dense oracles that measure the
constants of the energy-norm convergence theory.
"""

from .exceptions import (
    ConstraintCycleError,
    DecompositionError,
    DenseCapError,
    MeshError,
    NonConvergence,
    NotSPDError,
    TransferError,
)
from .mesh import (
    Mesh,
    SubdomainCover,
    adjacency_g0,
    detect_hanging_nodes,
    grow_overlap,
    partition_nonoverlapping,
    read_mesh,
    refine_local,
    refine_uniform,
    unit_square_coarse,
    write_mesh,
)
from .multigrid import (
    CycleReport,
    Hierarchy,
    HierarchyConfig,
    ScheduleSpec,
    build_hierarchy,
    make_schedule,
    manufactured_problem,
    solve,
    vcycle,
)
from .space import CoefficientField, FeSpace, assemble_load, assemble_mass, assemble_stiffness, build_space
from .transfer import build_prolongation, galerkin_defect
from .verify import AssumptionReport, estimate_K0, estimate_delta, run_verification

__version__ = "0.1.0"
