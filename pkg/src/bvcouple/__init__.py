"""Bond-volume coupled atomistic/continuum energies on periodic lattices.

The package provides the exact atomistic energy, two atomistic Cauchy-Born
comparison models, a conforming interface-coupled energy without spurious
equilibrium forces, a two-field variant with an interface jump penalty, a
high-order continuum variant, and the verification harness used by the
``bvcouple`` command-line tool.
"""
from .coupling import (
    BondClass,
    CoveringInterpolant,
    GammaFace,
    MemberPiece,
    RegionPartition,
    classify_bond_volume,
    coupled_energy_conforming,
    coupled_energy_dg,
    covering_interpolant,
    jump_average,
    naive_coupling_energy,
    omega_star_mask,
    partition_violations,
    required_clearance,
)
from .energies import (
    EnergyReport,
    acb_cell_energy,
    acb_tetra_energy,
    atomistic_energy,
)
from .geometry import (
    Covering,
    CoveringMismatch,
    DegenerateEta,
    bond_volume_lemma_residual,
    decompose_bond_volume_type_a,
    decompose_cell_type_a,
    enumerate_coverings,
    rectangle_lemma_residual,
    segment_lemma_residual,
)
from .harness import (
    ConfigError,
    LineSearchError,
    RunConfig,
    SweepResult,
    config_from_dict,
    consistency_sweep,
    default_config,
    evaluate_model,
    fd_gradient_check,
    ghost_force_residual,
    load_config,
    minimize,
    run,
)
from .highorder import HighOrderMesh, build_high_order_mesh, high_order_energy
from .lattice import (
    Deformation,
    LatticeConfig,
    LatticeField,
    diff_quotient,
    diff_quotient_field,
    discrete_inner_product,
    make_deformation,
    sample_field,
)
from .potentials import (
    InteractionLaw,
    InteractionSet,
    PotentialDomainError,
    cb_energy_density,
    make_law,
    phi_eval,
    piola_stress,
)

__all__ = [
    "BondClass",
    "ConfigError",
    "Covering",
    "CoveringInterpolant",
    "CoveringMismatch",
    "Deformation",
    "DegenerateEta",
    "EnergyReport",
    "GammaFace",
    "HighOrderMesh",
    "InteractionLaw",
    "InteractionSet",
    "LatticeConfig",
    "LatticeField",
    "LineSearchError",
    "MemberPiece",
    "PotentialDomainError",
    "RegionPartition",
    "RunConfig",
    "SweepResult",
    "acb_cell_energy",
    "acb_tetra_energy",
    "atomistic_energy",
    "bond_volume_lemma_residual",
    "build_high_order_mesh",
    "cb_energy_density",
    "classify_bond_volume",
    "config_from_dict",
    "consistency_sweep",
    "coupled_energy_conforming",
    "coupled_energy_dg",
    "covering_interpolant",
    "decompose_bond_volume_type_a",
    "decompose_cell_type_a",
    "default_config",
    "diff_quotient",
    "diff_quotient_field",
    "discrete_inner_product",
    "enumerate_coverings",
    "evaluate_model",
    "fd_gradient_check",
    "ghost_force_residual",
    "high_order_energy",
    "jump_average",
    "load_config",
    "make_deformation",
    "make_law",
    "minimize",
    "naive_coupling_energy",
    "omega_star_mask",
    "partition_violations",
    "phi_eval",
    "piola_stress",
    "rectangle_lemma_residual",
    "required_clearance",
    "run",
    "sample_field",
    "segment_lemma_residual",
]

__version__ = "0.1.0"
