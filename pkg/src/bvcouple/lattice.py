"""Periodic lattice domain: configurations, fields, deformations, difference
quotients, and the discrete inner product.

Sites live on a 3D torus with ``N = (N1, N2, N3)`` sites per dimension and
spacing ``epsilon``; the physical position of site ``l`` is ``epsilon * l``.
All fields are periodic by construction (index arithmetic is modulo N).
Values are stored as dense ``(N1, N2, N3, 3)`` arrays in row-major site
order, which fixes the summation order and makes every reduction
deterministic and bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

IntTriple = tuple[int, int, int]


@dataclass(frozen=True)
class LatticeConfig:
    """Torus extents and lattice spacing."""

    N: IntTriple
    epsilon: float

    def __post_init__(self) -> None:
        N = tuple(int(n) for n in self.N)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "epsilon", float(self.epsilon))
        if len(N) != 3 or any(n < 2 for n in N):
            raise ValueError(f"extents must be three integers >= 2, got {N}")
        if not self.epsilon > 0:
            raise ValueError(f"spacing must be positive, got {self.epsilon}")

    @property
    def n_sites(self) -> int:
        return self.N[0] * self.N[1] * self.N[2]

    @property
    def volume(self) -> float:
        """Domain volume |Omega| = N1*N2*N3 * epsilon^3."""
        return self.n_sites * self.epsilon**3

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (*self.N, 3)


def canonicalize(ell, cfg: LatticeConfig) -> IntTriple:
    """Reduce an integer triple to its torus representative in [0, N_i)."""
    return (int(ell[0]) % cfg.N[0], int(ell[1]) % cfg.N[1], int(ell[2]) % cfg.N[2])


class LatticeField:
    """Periodic vector-valued function on the lattice sites.

    Wraps a dense (N1, N2, N3, 3) float array. Instances are treated as
    immutable: operations return new fields.
    """

    __slots__ = ("cfg", "values")

    def __init__(self, cfg: LatticeConfig, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != cfg.shape:
            raise ValueError(
                f"field shape {values.shape} does not match lattice shape {cfg.shape}"
            )
        self.cfg = cfg
        self.values = values

    @classmethod
    def zeros(cls, cfg: LatticeConfig) -> "LatticeField":
        return cls(cfg, np.zeros(cfg.shape))

    @classmethod
    def constant(cls, cfg: LatticeConfig, c) -> "LatticeField":
        out = np.empty(cfg.shape)
        out[...] = np.asarray(c, dtype=float)
        return cls(cfg, out)

    def at(self, ell) -> np.ndarray:
        """Value at an arbitrary integer triple (canonicalized first)."""
        return self.values[canonicalize(ell, self.cfg)]

    def mean(self) -> np.ndarray:
        return self.values.reshape(-1, 3).mean(axis=0)

    def zero_mean(self) -> "LatticeField":
        return LatticeField(self.cfg, self.values - self.mean())

    def __add__(self, other: "LatticeField") -> "LatticeField":
        _check_same_config(self, other)
        return LatticeField(self.cfg, self.values + other.values)

    def __sub__(self, other: "LatticeField") -> "LatticeField":
        _check_same_config(self, other)
        return LatticeField(self.cfg, self.values - other.values)

    def __mul__(self, scalar: float) -> "LatticeField":
        return LatticeField(self.cfg, self.values * float(scalar))

    __rmul__ = __mul__

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check_same_config(u: LatticeField, w: LatticeField) -> None:
    if u.cfg != w.cfg:
        raise ValueError(f"mismatched lattice configs: {u.cfg} vs {w.cfg}")


@dataclass(frozen=True)
class Deformation:
    """y_l = F x_l + v_l with a zero-average periodic displacement v."""

    F: np.ndarray
    displacement: LatticeField

    @property
    def cfg(self) -> LatticeConfig:
        return self.displacement.cfg

    def y_at(self, ell) -> np.ndarray:
        """Deformed position of the (not necessarily canonical) site ell."""
        x = self.cfg.epsilon * np.asarray(ell, dtype=float)
        return self.F @ x + self.displacement.at(ell)


def make_deformation(F, v_raw: LatticeField) -> Deformation:
    """Build a deformation, enforcing the zero-average gauge on v."""
    F = np.asarray(F, dtype=float)
    if F.shape != (3, 3):
        raise ValueError(f"F must be 3x3, got shape {F.shape}")
    det = float(np.linalg.det(F))
    if det <= 0:
        raise ValueError(f"deformation gradient must have det F > 0, got det F = {det}")
    F = F.copy()
    F.flags.writeable = False
    return Deformation(F=F, displacement=v_raw.zero_mean())


def shift_values(values: np.ndarray, eta) -> np.ndarray:
    """Array of values at l + eta: out[l] = values[(l + eta) mod N]."""
    return np.roll(values, shift=(-int(eta[0]), -int(eta[1]), -int(eta[2])), axis=(0, 1, 2))


def diff_quotient_field(u, eta) -> np.ndarray:
    """(u_{l+eta} - u_l)/epsilon at every site, as an (N1,N2,N3,3) array.

    Accepts a LatticeField or a Deformation; for a deformation the result is
    F eta + (v_{l+eta} - v_l)/epsilon.
    """
    eta = tuple(int(e) for e in eta)
    if eta == (0, 0, 0):
        raise ValueError("difference quotient needs a nonzero direction")
    if isinstance(u, Deformation):
        v = u.displacement.values
        eps = u.cfg.epsilon
        base = u.F @ (np.asarray(eta, dtype=float))
        return base + (shift_values(v, eta) - v) / eps
    v = u.values
    eps = u.cfg.epsilon
    return (shift_values(v, eta) - v) / eps


def diff_quotient(u, ell, eta) -> np.ndarray:
    """Difference quotient (u_{l+eta} - u_l)/epsilon at one site."""
    eta = tuple(int(e) for e in eta)
    if eta == (0, 0, 0):
        raise ValueError("difference quotient needs a nonzero direction")
    if isinstance(u, Deformation):
        eps = u.cfg.epsilon
        v = u.displacement
        lp = tuple(int(ell[i]) + eta[i] for i in range(3))
        return u.F @ np.asarray(eta, dtype=float) + (v.at(lp) - v.at(ell)) / eps
    eps = u.cfg.epsilon
    lp = tuple(int(ell[i]) + eta[i] for i in range(3))
    return (u.at(lp) - u.at(ell)) / eps


def discrete_inner_product(u: LatticeField, w: LatticeField) -> float:
    """<u, w>_eps = eps^3 sum_l u_l . w_l (fixed summation order)."""
    _check_same_config(u, w)
    return float(u.cfg.epsilon**3 * np.sum(u.values * w.values))


def sample_field(f: Callable[[np.ndarray], np.ndarray], cfg: LatticeConfig) -> LatticeField:
    """Sample a closure R^3 -> R^3 at the physical site positions eps*l."""
    out = np.empty(cfg.shape)
    eps = cfg.epsilon
    for i in range(cfg.N[0]):
        for j in range(cfg.N[1]):
            for k in range(cfg.N[2]):
                out[i, j, k] = f(np.array([i * eps, j * eps, k * eps]))
    return LatticeField(cfg, out)
