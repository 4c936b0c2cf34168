"""The three uncoupled energy models and their analytic first variations:
exact atomistic, staircase-tetrahedron Cauchy-Born, and cell-averaged
Cauchy-Born.

Gradients are returned as Riesz representers with respect to the discrete
inner product: the report's gradient field g satisfies
DE(y)[v] = <g, v>_eps for every periodic lattice field v. All assembly is
vectorized over sites with numpy rolls in a fixed order, so results are
deterministic and bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .geometry import PATH_PERMS, path_edge_offsets
from .lattice import Deformation, LatticeField, shift_values
from .potentials import InteractionLaw, InteractionSet, PotentialDomainError


@dataclass
class EnergyReport:
    """Energy value, Riesz-representer gradient, and per-part breakdown."""

    energy: float
    gradient: LatticeField
    model: str
    breakdown: dict[str, float] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)


def _values_with_bond_context(law: InteractionLaw, Z: np.ndarray, N, what: str):
    """Evaluate a law batch over site-shaped data, attaching the offending
    site to any domain error."""
    flat = Z.reshape(-1, 3)
    try:
        out = getattr(law, what)(flat)
    except PotentialDomainError as exc:
        r = np.linalg.norm(flat, axis=-1)
        site = tuple(int(x) for x in np.unravel_index(int(np.argmin(r)), N))
        raise PotentialDomainError(
            f"{exc} (offending bond: site {site}, eta={law.eta})",
            site=site,
            eta=law.eta,
        ) from exc
    if what == "values":
        return out.reshape(Z.shape[:-1])
    return out.reshape(Z.shape)


def _diff_arrays(v: np.ndarray, eps: float) -> list[np.ndarray]:
    """Forward difference quotients of v along the three axes."""
    out = []
    for a in range(3):
        e_a = tuple(1 if k == a else 0 for k in range(3))
        out.append((shift_values(v, e_a) - v) / eps)
    return out


def atomistic_energy(y: Deformation, R: InteractionSet) -> EnergyReport:
    """Exact atomistic energy eps^3 sum_l sum_eta phi_eta(D_eta y_l)."""
    cfg = y.cfg
    eps = cfg.epsilon
    v = y.displacement.values
    energy = 0.0
    grad = np.zeros(cfg.shape)
    breakdown: dict[str, float] = {}
    for law in R:
        Z = (y.F @ law.eta_vec) + (shift_values(v, law.eta) - v) / eps
        vals = _values_with_bond_context(law, Z, cfg.N, "values")
        e_eta = float(eps**3 * np.sum(vals))
        energy += e_eta
        breakdown[f"eta={law.eta}"] = e_eta
        G = _values_with_bond_context(law, Z, cfg.N, "gradients")
        grad += (np.roll(G, shift=law.eta, axis=(0, 1, 2)) - G) / eps
    return EnergyReport(
        energy=energy,
        gradient=LatticeField(cfg, grad),
        model="atomistic",
        breakdown=breakdown,
    )


def acb_tetra_energy(y: Deformation, R: InteractionSet) -> EnergyReport:
    """Cauchy-Born energy on the staircase tetrahedra: (eps^3/6) per cell tet
    of W(grad), with the discrete gradient taken from the tet's own axis
    edges."""
    cfg = y.cfg
    eps = cfg.epsilon
    v = y.displacement.values
    d = _diff_arrays(v, eps)
    energy = 0.0
    grad = np.zeros(cfg.shape)
    breakdown: dict[str, float] = {}
    for law in R:
        e_eta = 0.0
        base = y.F @ law.eta_vec
        for perm in PATH_PERMS:
            offs = path_edge_offsets(perm)
            Z = np.broadcast_to(base, cfg.shape).copy()
            for a in range(3):
                if law.eta[a] != 0:
                    Z += law.eta[a] * shift_values(d[a], offs[a])
            vals = _values_with_bond_context(law, Z, cfg.N, "values")
            e_eta += float((eps**3 / 6.0) * np.sum(vals))
            P = _values_with_bond_context(law, Z, cfg.N, "gradients")
            for a in range(3):
                if law.eta[a] == 0:
                    continue
                s = offs[a]
                s_up = tuple(s[k] + (k == a) for k in range(3))
                grad += (law.eta[a] / (6.0 * eps)) * (
                    np.roll(P, shift=s_up, axis=(0, 1, 2))
                    - np.roll(P, shift=s, axis=(0, 1, 2))
                )
        energy += e_eta
        breakdown[f"eta={law.eta}"] = e_eta
    return EnergyReport(
        energy=energy,
        gradient=LatticeField(cfg, grad),
        model="acb-tetra",
        breakdown=breakdown,
    )


_AVG_SHIFTS: dict[int, tuple[tuple[int, int, int], ...]] = {}
for _a in range(3):
    _b, _c = [d for d in range(3) if d != _a]
    _AVG_SHIFTS[_a] = tuple(
        tuple((s_b * (k == _b) + s_c * (k == _c)) for k in range(3))  # type: ignore[misc]
        for s_b in (0, 1)
        for s_c in (0, 1)
    )


def acb_cell_energy(y: Deformation, R: InteractionSet) -> EnergyReport:
    """Cauchy-Born energy on cells: eps^3 per cell of W evaluated at the
    averaged discrete gradient (each column averages four edge quotients)."""
    cfg = y.cfg
    eps = cfg.epsilon
    v = y.displacement.values
    d = _diff_arrays(v, eps)
    avg = []
    for a in range(3):
        acc = np.zeros(cfg.shape)
        for s in _AVG_SHIFTS[a]:
            acc += shift_values(d[a], s)
        avg.append(acc / 4.0)
    energy = 0.0
    grad = np.zeros(cfg.shape)
    breakdown: dict[str, float] = {}
    for law in R:
        Z = np.broadcast_to(y.F @ law.eta_vec, cfg.shape).copy()
        for a in range(3):
            if law.eta[a] != 0:
                Z += law.eta[a] * avg[a]
        vals = _values_with_bond_context(law, Z, cfg.N, "values")
        e_eta = float(eps**3 * np.sum(vals))
        energy += e_eta
        breakdown[f"eta={law.eta}"] = e_eta
        P = _values_with_bond_context(law, Z, cfg.N, "gradients")
        for a in range(3):
            if law.eta[a] == 0:
                continue
            for s in _AVG_SHIFTS[a]:
                s_up = tuple(s[k] + (k == a) for k in range(3))
                grad += (law.eta[a] / (4.0 * eps)) * (
                    np.roll(P, shift=s_up, axis=(0, 1, 2))
                    - np.roll(P, shift=s, axis=(0, 1, 2))
                )
    return EnergyReport(
        energy=energy,
        gradient=LatticeField(cfg, grad),
        model="acb-cell",
        breakdown=breakdown,
    )
