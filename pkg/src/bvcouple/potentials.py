"""Interaction vectors and pair potentials with analytic derivatives.

Each interaction law pairs a nonzero integer direction ``eta`` with a smooth
potential ``phi`` acting on the deformed bond vector ``zeta`` in R^3, and
exposes analytic value/gradient/Hessian both pointwise and batched over
``(M, 3)`` arrays of bond vectors. Radial laws (Morse, Lennard-Jones) apply a
scalar profile to ``|zeta|``; the anisotropic-toy law is deliberately
asymmetric (``phi(zeta) != phi(-zeta)``) so coupling tests cannot pass by
accidental cancellation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

IntTriple = tuple[int, int, int]

KINDS = ("harmonic", "morse-radial", "lennard-jones-radial", "anisotropic-toy")

# Minimum admissible bond length for the radial laws; below this the
# configuration is treated as singular rather than letting 1/r powers
# overflow silently.
_RADIAL_RMIN = 1e-12


class PotentialDomainError(ValueError):
    """A bond configuration left a potential's admissible domain."""

    def __init__(self, message: str, site=None, eta=None):
        super().__init__(message)
        self.site = site
        self.eta = eta


def _as_eta(eta) -> IntTriple:
    eta = tuple(int(e) for e in eta)
    if len(eta) != 3:
        raise ValueError(f"interaction vector must be a triple, got {eta}")
    if eta == (0, 0, 0):
        raise ValueError("interaction vector must be nonzero")
    return eta


@dataclass(frozen=True)
class InteractionLaw:
    """One interaction direction eta with its pair potential."""

    eta: IntTriple
    kind: str
    params: tuple[tuple[str, Any], ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "eta", _as_eta(self.eta))
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; known: {KINDS}")

    # -- parameter access -------------------------------------------------

    def _p(self, name: str) -> Any:
        for key, val in self.params:
            if key == name:
                return val
        raise KeyError(name)

    @property
    def eta_vec(self) -> np.ndarray:
        return np.asarray(self.eta, dtype=float)

    # -- radial profiles ---------------------------------------------------

    def _radial(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(phi(r), phi'(r), phi''(r)) for the radial kinds."""
        if self.kind == "morse-radial":
            D, a, r0 = self._p("D"), self._p("alpha"), self._p("r0")
            e = np.exp(-a * (r - r0))
            val = D * (1.0 - e) ** 2
            d1 = 2.0 * D * a * e * (1.0 - e)
            d2 = 2.0 * D * a * a * (2.0 * e * e - e)
            return val, d1, d2
        if self.kind == "lennard-jones-radial":
            e4 = 4.0 * self._p("well_depth")
            s = self._p("sigma")
            s6 = (s / r) ** 6
            s12 = s6 * s6
            val = e4 * (s12 - s6)
            d1 = e4 * (-12.0 * s12 + 6.0 * s6) / r
            d2 = e4 * (156.0 * s12 - 42.0 * s6) / (r * r)
            return val, d1, d2
        raise AssertionError(self.kind)

    def _check_radial_domain(self, r: np.ndarray) -> None:
        bad = r < _RADIAL_RMIN
        if np.any(bad):
            idx = int(np.argmax(bad))
            raise PotentialDomainError(
                f"bond length {float(np.atleast_1d(r)[idx])!r} below admissible "
                f"minimum for {self.kind} potential (eta={self.eta})",
                eta=self.eta,
            )

    # -- batched evaluation: zeta has shape (M, 3) --------------------------

    def values(self, zeta: np.ndarray) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=float)
        if self.kind == "harmonic":
            return 0.5 * np.sum(zeta * zeta, axis=-1)
        if self.kind == "anisotropic-toy":
            a, M = self._p("a"), self._p("M")
            return np.exp(zeta @ a) + 0.5 * np.sum((zeta @ M) * zeta, axis=-1)
        r = np.linalg.norm(zeta, axis=-1)
        self._check_radial_domain(r)
        return self._radial(r)[0]

    def gradients(self, zeta: np.ndarray) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=float)
        if self.kind == "harmonic":
            return zeta.copy()
        if self.kind == "anisotropic-toy":
            a, M = self._p("a"), self._p("M")
            return np.exp(zeta @ a)[..., None] * a + zeta @ M
        r = np.linalg.norm(zeta, axis=-1)
        self._check_radial_domain(r)
        d1 = self._radial(r)[1]
        return (d1 / r)[..., None] * zeta

    def hessians(self, zeta: np.ndarray) -> np.ndarray:
        zeta = np.asarray(zeta, dtype=float)
        batch = zeta.shape[:-1]
        eye = np.broadcast_to(np.eye(3), batch + (3, 3))
        if self.kind == "harmonic":
            return eye.copy()
        if self.kind == "anisotropic-toy":
            a, M = self._p("a"), self._p("M")
            outer = np.multiply.outer(np.exp(zeta @ a), np.outer(a, a))
            return outer + np.broadcast_to(M, batch + (3, 3))
        r = np.linalg.norm(zeta, axis=-1)
        self._check_radial_domain(r)
        _, d1, d2 = self._radial(r)
        rhat = zeta / r[..., None]
        proj = rhat[..., :, None] * rhat[..., None, :]
        return d2[..., None, None] * proj + (d1 / r)[..., None, None] * (eye - proj)


def make_law(eta, kind: str, params: dict[str, Any] | None = None) -> InteractionLaw:
    """Build a law of the given kind, filling in documented defaults.

    Defaults put the undeformed lattice near equilibrium: Morse r0 and the
    Lennard-Jones minimum both default to the undeformed bond length |eta|.
    """
    eta = _as_eta(eta)
    params = dict(params or {})
    norm = float(np.linalg.norm(eta))
    if kind == "harmonic":
        allowed: dict[str, Any] = {}
    elif kind == "morse-radial":
        allowed = {"D": 1.0, "alpha": 1.2, "r0": norm}
    elif kind == "lennard-jones-radial":
        allowed = {"well_depth": 1.0, "sigma": norm / 2.0 ** (1.0 / 6.0)}
    elif kind == "anisotropic-toy":
        allowed = {
            "a": (0.31, -0.17, 0.23),
            "M": ((2.0, 0.3, -0.1), (0.3, 1.5, 0.2), (-0.1, 0.2, 1.8)),
        }
    else:
        raise ValueError(f"unknown potential kind {kind!r}; known: {KINDS}")
    unknown = set(params) - set(allowed)
    if unknown:
        raise ValueError(
            f"unknown parameter(s) {sorted(unknown)} for potential kind {kind!r}; "
            f"allowed: {sorted(allowed)}"
        )
    allowed.update(params)
    frozen = []
    for key in sorted(allowed):
        val = allowed[key]
        if key in ("a",):
            val = np.asarray(val, dtype=float)
            val.flags.writeable = False
        elif key in ("M",):
            val = np.asarray(val, dtype=float)
            if not np.allclose(val, val.T):
                raise ValueError("anisotropic-toy matrix M must be symmetric")
            val.flags.writeable = False
        else:
            val = float(val)
        frozen.append((key, val))
    return InteractionLaw(eta=eta, kind=kind, params=tuple(frozen))


@dataclass(frozen=True)
class InteractionSet:
    """Finite set of interaction laws with pairwise distinct directions."""

    laws: tuple[InteractionLaw, ...]

    def __post_init__(self) -> None:
        laws = tuple(self.laws)
        object.__setattr__(self, "laws", laws)
        etas = [law.eta for law in laws]
        if len(set(etas)) != len(etas):
            raise ValueError(f"interaction directions must be distinct, got {etas}")

    def __iter__(self):
        return iter(self.laws)

    def __len__(self) -> int:
        return len(self.laws)

    @property
    def max_abs_component(self) -> int:
        return max(abs(e) for law in self.laws for e in law.eta)


def phi_eval(law: InteractionLaw, zeta) -> tuple[float, np.ndarray, np.ndarray]:
    """(value, gradient, Hessian) of one law at a single bond vector."""
    zeta = np.asarray(zeta, dtype=float).reshape(3)
    value = float(law.values(zeta[None, :])[0])
    grad = law.gradients(zeta[None, :])[0]
    hess = law.hessians(zeta[None, :])[0]
    return value, grad, hess


def cb_energy_density(R: InteractionSet, F) -> float:
    """Cauchy-Born stored energy density W(F) = sum_eta phi_eta(F eta)."""
    F = np.asarray(F, dtype=float)
    total = 0.0
    for law in R:
        total += float(law.values((F @ law.eta_vec)[None, :])[0])
    return total


def piola_stress(R: InteractionSet, F) -> np.ndarray:
    """First Piola stress S(F) = dW/dF = sum_eta grad phi_eta(F eta) eta^T."""
    F = np.asarray(F, dtype=float)
    S = np.zeros((3, 3))
    for law in R:
        g = law.gradients((F @ law.eta_vec)[None, :])[0]
        S += np.outer(g, law.eta_vec)
    return S
