from __future__ import annotations

import numpy as np
import pytest

from bvcouple.potentials import (
    InteractionSet,
    PotentialDomainError,
    cb_energy_density,
    make_law,
    phi_eval,
    piola_stress,
)

H = 1e-5
FD_TOL = 1e-6


def all_kind_laws():
    """One law of each built-in kind with generic parameters."""
    return [
        make_law((1, 1, 1), "harmonic"),
        make_law((2, 1, 3), "morse-radial"),
        make_law((1, -1, 2), "lennard-jones-radial"),
        make_law((2, -1, 1), "anisotropic-toy"),
    ]


def test_phi_eval_harmonic_basics():
    law = make_law((1, 0, 1), "harmonic")
    val, grad, hess = phi_eval(law, (1.0, 0.0, 0.0))
    assert val == 0.5
    assert np.allclose(grad, (1.0, 0.0, 0.0), rtol=0, atol=0)
    assert np.allclose(hess, np.eye(3), rtol=0, atol=0)
    val0, grad0, hess0 = phi_eval(law, (0.0, 0.0, 0.0))
    assert val0 == 0.0
    assert np.all(grad0 == 0.0)
    assert np.allclose(hess0, np.eye(3))


def test_morse_equilibrium_radius():
    """At r = r0 the Morse radial derivative vanishes, so the full gradient
    (which is phi'(r) times the unit vector) vanishes too."""
    law = make_law((2, 1, 3), "morse-radial")
    r0 = dict(law.params)["r0"]
    zeta = r0 * np.array([1.0, 0.0, 0.0])
    _, grad, _ = phi_eval(law, zeta)
    assert np.all(np.abs(grad) <= 1e-12)


def test_lj_minimum_radius():
    law = make_law((1, 1, 1), "lennard-jones-radial",
                   {"well_depth": 0.7, "sigma": 1.1})
    rmin = 1.1 * 2.0 ** (1.0 / 6.0)
    zeta = rmin * np.array([0.0, 1.0, 0.0])
    val, grad, _ = phi_eval(law, zeta)
    assert np.isclose(val, -0.7, rtol=0, atol=1e-12)
    assert np.all(np.abs(grad) <= 1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(101)
    for law in all_kind_laws():
        for _ in range(6):
            zeta = np.asarray(law.eta, dtype=float) + 0.15 * rng.standard_normal(3)
            val, grad, _ = phi_eval(law, zeta)
            for i in range(3):
                zp = zeta.copy()
                zm = zeta.copy()
                zp[i] += H
                zm[i] -= H
                fd = (phi_eval(law, zp)[0] - phi_eval(law, zm)[0]) / (2.0 * H)
                denom = max(abs(fd), abs(grad[i]), 1.0)
                assert abs(grad[i] - fd) / denom <= FD_TOL, (law.kind, i)


def test_hessian_matches_finite_differences():
    rng = np.random.default_rng(55)
    for law in all_kind_laws():
        zeta = np.asarray(law.eta, dtype=float) + 0.1 * rng.standard_normal(3)
        _, _, hess = phi_eval(law, zeta)
        for i in range(3):
            zp = zeta.copy()
            zm = zeta.copy()
            zp[i] += H
            zm[i] -= H
            fd_col = (phi_eval(law, zp)[1] - phi_eval(law, zm)[1]) / (2.0 * H)
            for j in range(3):
                denom = max(abs(fd_col[j]), abs(hess[j, i]), 1.0)
                assert abs(hess[j, i] - fd_col[j]) / denom <= FD_TOL
        assert np.allclose(hess, hess.T, rtol=0, atol=1e-12)


def test_radial_domain_error():
    law = make_law((1, 1, 1), "lennard-jones-radial")
    with pytest.raises(PotentialDomainError):
        phi_eval(law, (0.0, 0.0, 0.0))
    with pytest.raises(PotentialDomainError):
        make_law((1, 1, 1), "morse-radial").values(np.zeros((1, 3)))


def test_anisotropic_toy_has_no_inversion_symmetry():
    # The ghost-force tests rely on phi(zeta) != phi(-zeta) generically.
    law = make_law((1, -1, 2), "anisotropic-toy")
    zeta = np.array([0.9, 0.4, -1.3])
    va = phi_eval(law, zeta)[0]
    vb = phi_eval(law, -zeta)[0]
    assert abs(va - vb) > 1e-3


def test_make_law_rejections():
    with pytest.raises(ValueError):
        make_law((0, 0, 0), "harmonic")
    with pytest.raises(ValueError):
        make_law((1, 1, 1), "no-such-kind")
    with pytest.raises(ValueError):
        make_law((1, 1, 1), "lennard-jones-radial", {"sigma": 1.0, "bogus": 2.0})
    with pytest.raises(ValueError):
        make_law((1, 1, 1), "anisotropic-toy",
                 {"M": [[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]})


def test_interaction_set_rejects_duplicates():
    with pytest.raises(ValueError):
        InteractionSet([make_law((1, 1, 1), "harmonic"),
                        make_law((1, 1, 1), "morse-radial")])


def test_interaction_set_max_abs_component():
    R = InteractionSet([make_law((1, 1, 1), "harmonic"),
                        make_law((2, -1, 3), "harmonic")])
    assert R.max_abs_component == 3


def test_cb_density_single_law():
    R = InteractionSet([make_law((1, 1, 1), "harmonic")])
    assert np.isclose(cb_energy_density(R, np.eye(3)), 1.5, rtol=0, atol=0)
    assert cb_energy_density(R, np.zeros((3, 3))) == 0.0


def test_cb_density_two_laws_closed_form():
    # F = diag(1,2,1): 0.5*(1+4+1) + 0.5*(4+4+1) = 7.5
    R = InteractionSet([make_law((1, 1, 1), "harmonic"),
                        make_law((2, 1, 1), "harmonic")])
    F = np.diag([1.0, 2.0, 1.0])
    assert np.isclose(cb_energy_density(R, F), 7.5, rtol=0, atol=1e-14)


def test_piola_single_harmonic_closed_form():
    """For one harmonic law, W(F) = |F eta|^2 / 2 so S = (F eta) eta^T."""
    eta = (2, 1, 3)
    R = InteractionSet([make_law(eta, "harmonic")])
    rng = np.random.default_rng(2)
    F = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    S = piola_stress(R, F)
    expect = np.outer(F @ np.array(eta, dtype=float), np.array(eta, dtype=float))
    assert np.allclose(S, expect, rtol=0, atol=1e-13)


def test_piola_zero_at_critical_point():
    R = InteractionSet([make_law((1, 1, 1), "harmonic"),
                        make_law((1, 0, 2), "harmonic")])
    S = piola_stress(R, np.zeros((3, 3)))
    assert np.all(S == 0.0)


def test_piola_matches_fd_of_density():
    """Central differences of W_CB in each F entry reproduce the stress,
    over 20 random draws mixing all law kinds."""
    rng = np.random.default_rng(77)
    etas = [(1, 1, 1), (2, 1, 3), (1, -1, 2), (1, 0, 1), (0, 2, 1)]
    kinds = ["harmonic", "morse-radial", "lennard-jones-radial", "anisotropic-toy"]
    for trial in range(20):
        chosen = rng.choice(len(etas), size=2, replace=False)
        R = InteractionSet([
            make_law(etas[int(chosen[0])], kinds[trial % 4], None),
            make_law(etas[int(chosen[1])], "harmonic", None),
        ])
        F = np.eye(3) + 0.08 * rng.standard_normal((3, 3))
        S = piola_stress(R, F)
        for i in range(3):
            for a in range(3):
                Fp = F.copy()
                Fm = F.copy()
                Fp[i, a] += H
                Fm[i, a] -= H
                fd = (cb_energy_density(R, Fp) - cb_energy_density(R, Fm)) / (2.0 * H)
                denom = max(abs(fd), abs(S[i, a]), 1.0)
                assert abs(S[i, a] - fd) / denom <= FD_TOL


def test_law_params_are_frozen():
    law = make_law((1, 1, 1), "lennard-jones-radial", {"well_depth": 0.5})
    params = dict(law.params)
    assert params["well_depth"] == 0.5
    assert "sigma" in params  # default filled in
    with pytest.raises((TypeError, AttributeError)):
        law.kind = "harmonic"
