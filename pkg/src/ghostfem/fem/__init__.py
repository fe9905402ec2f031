from .basis import Q1, Q2, ShapeFunctionSet
from .assembly import (BoundaryData, FEMSystem, assemble_convection, assemble_mass,
                       assemble_pressure_coupling, assemble_viscous_nitsche, dump_coo)
from .penalty import PenaltyEstimate, estimate_penalty, nitsche_eigen_matrices

__all__ = [
    "Q1", "Q2", "ShapeFunctionSet", "BoundaryData", "FEMSystem", "assemble_convection",
    "assemble_mass", "assemble_pressure_coupling", "assemble_viscous_nitsche", "dump_coo",
    "PenaltyEstimate", "estimate_penalty", "nitsche_eigen_matrices",
]
