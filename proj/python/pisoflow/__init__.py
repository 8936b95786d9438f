"""Differentiable incompressible PISO solver on multi-block transformed grids."""

from ._pisoflow import (
    CaseConfig,
    ConfigError,
    FormatError,
    GradientPath,
    IoError,
    MeshKind,
    MomentAccumulator,
    Parameter,
    Precision,
    SolverError,
    __version__,
    centerline_reynolds,
    gradcheck,
    lid_task,
    optimize,
    parse_config,
    poiseuille_analytic,
    print_config,
    read_fields,
    reichardt_u_plus,
    run_case,
    scaling_task,
    simulate_to_dump,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
