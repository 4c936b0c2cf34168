"""Configuration ingestion, verification suites, consistency sweeps, a
minimization driver, and CSV/summary report emission."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .coupling import (
    RegionPartition,
    coupled_energy_conforming,
    coupled_energy_dg,
    naive_coupling_energy,
    partition_violations,
)
from .energies import EnergyReport, acb_cell_energy, acb_tetra_energy, atomistic_energy
from .geometry import (
    CoveringMismatch,
    DegenerateEta,
    bond_volume_lemma_residual,
    enumerate_coverings,
    rectangle_lemma_residual,
    segment_lemma_residual,
)
from .highorder import high_order_energy
from .lattice import (
    Deformation,
    LatticeConfig,
    LatticeField,
    diff_quotient,
    discrete_inner_product,
    make_deformation,
    sample_field,
)
from .potentials import KINDS, InteractionLaw, InteractionSet, make_law, piola_stress

MODEL_NAMES = ("atomistic", "acb-tetra", "acb-cell", "coupled", "coupled-dg", "naive")
_HO_RE = re.compile(r"^coupled-ho\((\d+)\)$")
COUPLED_MODELS = ("coupled", "coupled-dg", "coupled-ho", "naive")


class ConfigError(ValueError):
    """Raised on invalid run configurations; carries every violation."""

    def __init__(self, messages: Sequence[str]):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


def parse_model(name: str) -> tuple[str, int | None]:
    """Split a model selector into (family, degree); degree only for the
    high-order family."""
    if name in MODEL_NAMES:
        return name, None
    m = _HO_RE.match(name)
    if m:
        return "coupled-ho", int(m.group(1))
    raise ValueError(
        f"unknown model {name!r}; expected one of {MODEL_NAMES} or coupled-ho(k)"
    )


_TOLERANCE_DEFAULTS = {
    "ghost_force": None,   # resolved per model (1e-12 conforming, 1e-11 dg/ho)
    "gradient_fd": None,   # resolved per laws (1e-9 all-harmonic, else 1e-6)
    "fd_step": 1e-5,
    "g_tol": 1e-8,
    "sweep_slope": 1.9,
    "lemma": 1e-13,
}

_SWEEP_DEFAULTS = {
    "epsilons": [0.25, 0.125, 0.0625, 0.03125],
    "amplitude": 0.05,
    "period": 4.0,
}
_SOLVE_DEFAULTS = {"max_iters": 200, "g_tol": 1e-8, "force_amplitude": 0.0}


@dataclass
class RunConfig:
    """Validated run description: lattice, interactions, deformation
    gradient, optional region partition, model selector, policies, seed,
    tolerances, determinism flag, and output directory."""

    cfg: LatticeConfig
    laws: InteractionSet
    F: np.ndarray
    region: RegionPartition | None
    model: str
    model_family: str
    ho_degree: int | None
    degenerate_eta: str
    seed: int
    deterministic: bool
    tolerances: dict
    sweep: dict
    solve: dict
    out: str | None
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def ghost_force_tolerance(self) -> float:
        tol = self.tolerances.get("ghost_force")
        if tol is not None:
            return tol
        return 1e-11 if self.model_family in ("coupled-dg", "coupled-ho") else 1e-12

    @property
    def gradient_fd_tolerance(self) -> float:
        tol = self.tolerances.get("gradient_fd")
        if tol is not None:
            return tol
        all_harmonic = all(law.kind == "harmonic" for law in self.laws)
        return 1e-9 if all_harmonic else 1e-6


def _check_keys(d: dict, allowed, where: str, errors: list[str]) -> None:
    for key in d:
        if key not in allowed:
            errors.append(f"unknown key {key!r} in {where} (allowed: {sorted(allowed)})")


def _as_int_triple(x, where, errors):
    if (
        not isinstance(x, (list, tuple))
        or len(x) != 3
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in x)
    ):
        errors.append(f"{where} must be a list of 3 integers, got {x!r}")
        return None
    return tuple(x)


def config_from_dict(data: dict) -> RunConfig:
    """Parse and validate a configuration mapping, collecting every
    violation before raising."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError([f"config root must be an object, got {type(data).__name__}"])
    allowed_top = {
        "lattice", "interactions", "F", "region", "model", "degenerate_eta",
        "seed", "deterministic", "tolerances", "sweep", "solve", "out",
    }
    _check_keys(data, allowed_top, "config", errors)

    # --- lattice ---
    cfg = None
    lat = data.get("lattice")
    if not isinstance(lat, dict):
        errors.append("config requires a 'lattice' object with keys N and epsilon")
    else:
        _check_keys(lat, {"N", "epsilon"}, "lattice", errors)
        N = _as_int_triple(lat.get("N"), "lattice.N", errors)
        eps = lat.get("epsilon")
        if not isinstance(eps, (int, float)) or isinstance(eps, bool) or eps <= 0:
            errors.append(f"lattice.epsilon must be a positive number, got {eps!r}")
            eps = None
        if N is not None and eps is not None:
            try:
                cfg = LatticeConfig(N=N, epsilon=float(eps))
            except ValueError as exc:
                errors.append(str(exc))

    # --- interactions ---
    laws: list[InteractionLaw] = []
    inter = data.get("interactions")
    if not isinstance(inter, list) or not inter:
        errors.append("config requires a non-empty 'interactions' list")
    else:
        seen = set()
        for i, item in enumerate(inter):
            where = f"interactions[{i}]"
            if not isinstance(item, dict):
                errors.append(f"{where} must be an object with keys eta, kind, params")
                continue
            _check_keys(item, {"eta", "kind", "params"}, where, errors)
            eta = _as_int_triple(item.get("eta"), f"{where}.eta", errors)
            kind = item.get("kind")
            if kind not in KINDS:
                errors.append(f"{where}.kind must be one of {KINDS}, got {kind!r}")
                continue
            if eta is None:
                continue
            if eta == (0, 0, 0):
                errors.append(f"{where}.eta must be nonzero")
                continue
            if eta in seen:
                errors.append(f"duplicate interaction direction eta={eta}")
                continue
            seen.add(eta)
            params = item.get("params", {})
            if not isinstance(params, dict):
                errors.append(f"{where}.params must be an object")
                continue
            try:
                laws.append(make_law(eta, kind, params))
            except (TypeError, ValueError) as exc:
                errors.append(f"{where}: {exc}")

    # --- F ---
    F = np.eye(3)
    if "F" in data:
        try:
            F = np.asarray(data["F"], dtype=float)
        except (TypeError, ValueError):
            errors.append(f"F must be a 3x3 row-major matrix, got {data['F']!r}")
            F = np.eye(3)
        if F.shape != (3, 3):
            errors.append(f"F must be a 3x3 matrix, got shape {F.shape}")
            F = np.eye(3)
        elif np.linalg.det(F) <= 0:
            errors.append(f"F must have positive determinant, got det={np.linalg.det(F)!r}")

    # --- model ---
    model = data.get("model")
    family, ho_k = None, None
    if not isinstance(model, str):
        errors.append("config requires a 'model' string")
    else:
        try:
            family, ho_k = parse_model(model)
        except ValueError as exc:
            errors.append(str(exc))
    if family == "coupled-ho" and ho_k not in (1, 2, 3):
        errors.append(f"coupled-ho degree must be 1, 2 or 3, got {ho_k}")

    # --- degenerate_eta ---
    policy = data.get("degenerate_eta", "reject")
    if policy not in ("reject", "reduce"):
        errors.append(f"degenerate_eta must be 'reject' or 'reduce', got {policy!r}")
        policy = "reject"

    # --- region ---
    region = None
    reg = data.get("region", "none")
    if reg not in ("none", None):
        if not isinstance(reg, dict):
            errors.append("region must be an object {corner, extents} or \"none\"")
        else:
            _check_keys(reg, {"corner", "extents"}, "region", errors)
            corner = _as_int_triple(reg.get("corner"), "region.corner", errors)
            extents = _as_int_triple(reg.get("extents"), "region.extents", errors)
            if cfg is not None and corner is not None and extents is not None:
                try:
                    region = RegionPartition(cfg, corner, extents)
                except ValueError as exc:
                    errors.append(str(exc))
    if family in ("coupled", "coupled-dg", "coupled-ho", "naive") and region is None:
        errors.append(f"model {model!r} requires a region partition")
    if region is not None and laws and family in ("coupled", "coupled-dg", "coupled-ho"):
        errors.extend(partition_violations(region, [law.eta for law in laws], policy))
    elif region is not None and laws and family == "naive":
        # the control needs no coverings, only clearance sanity
        errors.extend(
            m for m in partition_violations(region, [law.eta for law in laws], policy)
            if "clearance" in m
        )

    # --- seed / deterministic ---
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0 or seed >= 2**64:
        errors.append(f"seed must be an unsigned 64-bit integer, got {seed!r}")
        seed = 0
    deterministic = data.get("deterministic", False)
    if not isinstance(deterministic, bool):
        errors.append(f"deterministic must be a boolean, got {deterministic!r}")
        deterministic = False

    # --- tolerances ---
    tolerances = dict(_TOLERANCE_DEFAULTS)
    tol = data.get("tolerances", {})
    if not isinstance(tol, dict):
        errors.append("tolerances must be an object")
    else:
        _check_keys(tol, set(_TOLERANCE_DEFAULTS), "tolerances", errors)
        for key, val in tol.items():
            if key not in _TOLERANCE_DEFAULTS:
                continue
            if not isinstance(val, (int, float)) or isinstance(val, bool) or val <= 0:
                errors.append(f"tolerances.{key} must be a positive number, got {val!r}")
            else:
                tolerances[key] = float(val)

    # --- sweep ---
    sweep = dict(_SWEEP_DEFAULTS)
    sw = data.get("sweep", {})
    if not isinstance(sw, dict):
        errors.append("sweep must be an object")
    else:
        _check_keys(sw, set(_SWEEP_DEFAULTS), "sweep", errors)
        if "period" in sw:
            per = sw["period"]
            if not isinstance(per, (int, float)) or isinstance(per, bool) or per <= 0:
                errors.append(f"sweep.period must be a positive number, got {per!r}")
            else:
                sweep["period"] = float(per)
        if "epsilons" in sw:
            eps_list = sw["epsilons"]
            ok = isinstance(eps_list, list) and len(eps_list) >= 3 and all(
                isinstance(e, (int, float)) and not isinstance(e, bool) and e > 0
                for e in eps_list
            )
            if not ok:
                errors.append("sweep.epsilons must be a list of >= 3 positive numbers")
            else:
                for e in eps_list:
                    n = sweep["period"] / float(e)
                    if abs(n - round(n)) > 1e-9 or round(n) < 2:
                        errors.append(
                            f"sweep epsilon {e!r} must divide the domain period "
                            f"{sweep['period']!r} into an integer number >= 2 of cells"
                        )
                sweep["epsilons"] = [float(e) for e in eps_list]
        if "amplitude" in sw:
            amp = sw["amplitude"]
            if not isinstance(amp, (int, float)) or isinstance(amp, bool):
                errors.append(f"sweep.amplitude must be a number, got {amp!r}")
            else:
                sweep["amplitude"] = float(amp)

    # --- solve ---
    solve_cfg = dict(_SOLVE_DEFAULTS)
    sv = data.get("solve", {})
    if not isinstance(sv, dict):
        errors.append("solve must be an object")
    else:
        _check_keys(sv, set(_SOLVE_DEFAULTS), "solve", errors)
        mi = sv.get("max_iters", solve_cfg["max_iters"])
        if not isinstance(mi, int) or isinstance(mi, bool) or mi < 1:
            errors.append(f"solve.max_iters must be a positive integer, got {mi!r}")
        else:
            solve_cfg["max_iters"] = mi
        gt = sv.get("g_tol", solve_cfg["g_tol"])
        if not isinstance(gt, (int, float)) or isinstance(gt, bool) or gt <= 0:
            errors.append(f"solve.g_tol must be a positive number, got {gt!r}")
        else:
            solve_cfg["g_tol"] = float(gt)
        fa = sv.get("force_amplitude", solve_cfg["force_amplitude"])
        if not isinstance(fa, (int, float)) or isinstance(fa, bool):
            errors.append(f"solve.force_amplitude must be a number, got {fa!r}")
        else:
            solve_cfg["force_amplitude"] = float(fa)

    # --- out ---
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        errors.append(f"out must be a path string or null, got {out!r}")
        out = None

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        cfg=cfg,
        laws=InteractionSet(tuple(laws)),
        F=F,
        region=region,
        model=model,
        model_family=family,
        ho_degree=ho_k,
        degenerate_eta=policy,
        seed=seed,
        deterministic=deterministic,
        tolerances=tolerances,
        sweep=sweep,
        solve=solve_cfg,
        out=out,
        raw=data,
    )


def load_config(path: str | Path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    return config_from_dict(data)


DEFAULT_CONFIG: dict = {
    "lattice": {"N": [12, 12, 12], "epsilon": 1.0 / 12.0},
    "interactions": [
        {"eta": [1, 1, 1], "kind": "harmonic"},
        # sigma below the bond length keeps bonds on the soft tail of the
        # well, where finite differences of the energy are well conditioned
        {
            "eta": [2, 1, 3],
            "kind": "lennard-jones-radial",
            "params": {"well_depth": 0.5, "sigma": 2.494438257849294},
        },
        {"eta": [1, -1, 2], "kind": "anisotropic-toy"},
    ],
    "region": {"corner": [4, 4, 4], "extents": [4, 4, 4]},
    "model": "coupled",
    "seed": 20240817,
}


def default_config() -> RunConfig:
    return config_from_dict(json.loads(json.dumps(DEFAULT_CONFIG)))


# ----------------------------------------------------------------------
# Model evaluation
# ----------------------------------------------------------------------

def evaluate_model(
    config: RunConfig,
    y: Deformation,
    y_plus: Deformation | None = None,
    node_displacements: np.ndarray | None = None,
) -> EnergyReport:
    """Assemble the configured model's energy report at a state."""
    fam = config.model_family
    if fam == "atomistic":
        return atomistic_energy(y, config.laws)
    if fam == "acb-tetra":
        return acb_tetra_energy(y, config.laws)
    if fam == "acb-cell":
        return acb_cell_energy(y, config.laws)
    if fam == "coupled":
        return coupled_energy_conforming(y, config.laws, config.region, config.degenerate_eta)
    if fam == "coupled-dg":
        if y_plus is None:
            y_plus = y
        return coupled_energy_dg(y, y_plus, config.laws, config.region, config.degenerate_eta)
    if fam == "coupled-ho":
        return high_order_energy(
            y, config.laws, config.region, config.ho_degree,
            node_displacements=node_displacements,
            degenerate_eta=config.degenerate_eta,
        )
    if fam == "naive":
        return naive_coupling_energy(y, config.laws, config.region)
    raise ValueError(f"unhandled model family {fam!r}")


def residual_scale(config: RunConfig) -> float:
    """max(1, ||S(F)||_inf / eps): the size of one bond's force contribution."""
    S = piola_stress(config.laws, config.F)
    return max(1.0, float(np.max(np.abs(S))) / config.cfg.epsilon)


def homogeneous_state(config: RunConfig) -> Deformation:
    return make_deformation(config.F, LatticeField.zeros(config.cfg))


def ghost_force_residual(config: RunConfig) -> float:
    """Scaled max-norm of the configured model's gradient at y_F.

    For the two-sided model the per-side representers are also checked; for
    the high-order model the free-node block is included."""
    y = homogeneous_state(config)
    report = evaluate_model(config, y)
    gmax = report.gradient.max_norm()
    if config.model_family == "coupled-dg":
        gmax = max(
            gmax,
            report.diagnostics["gradient_minus"].max_norm(),
            report.diagnostics["gradient_plus"].max_norm(),
        )
    if config.model_family == "coupled-ho":
        node_grad = report.diagnostics["node_gradient"]
        if node_grad.size:
            gmax = max(gmax, float(np.max(np.abs(node_grad))))
    return gmax / residual_scale(config)


def _random_displacement(rng: np.random.Generator, cfg: LatticeConfig, amplitude: float) -> LatticeField:
    values = amplitude * rng.standard_normal(cfg.shape)
    return LatticeField(cfg, values).zero_mean()


def _random_gradient_matrix(rng: np.random.Generator, F0: np.ndarray) -> np.ndarray:
    while True:
        F = F0 + 0.03 * rng.standard_normal((3, 3))
        if np.linalg.det(F) > 0.2:
            return F


def fd_gradient_check(config: RunConfig, trials: int = 5, step: float = 1e-5) -> float:
    """Max relative error of <gradient, w>_eps against the central finite
    difference of the energy.

    Each trial draws a random deformation gradient near the configured one
    and a random small zero-mean displacement, then probes along the
    normalized analytic gradient: the steepest direction maximizes the
    directional derivative, so the comparison is not drowned by the O(h^-1)
    cancellation noise of differencing a large constant energy. For the
    two-sided model the base state is discontinuous and the direction tied,
    which drives the interface second-derivative term."""
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    rng = np.random.default_rng(config.seed)
    cfg = config.cfg
    eps = cfg.epsilon
    amp = 0.02 * eps
    worst = 0.0
    for _ in range(trials):
        F = _random_gradient_matrix(rng, config.F)
        v = _random_displacement(rng, cfg, amp)
        if config.model_family == "coupled-dg":
            v_plus = _random_displacement(rng, cfg, amp)
            report = evaluate_model(
                config, make_deformation(F, v), y_plus=make_deformation(F, v_plus)
            )
            grad = report.gradient
            w = LatticeField(cfg, grad.values / grad.max_norm()).zero_mean()
            analytic = discrete_inner_product(grad, w)

            def energy_at(t: float) -> float:
                ym = make_deformation(F, v + t * w)
                ypp = make_deformation(F, v_plus + t * w)
                return evaluate_model(config, ym, y_plus=ypp).energy

        else:
            report = evaluate_model(config, make_deformation(F, v))
            grad = report.gradient
            w = LatticeField(cfg, grad.values / grad.max_norm()).zero_mean()
            analytic = discrete_inner_product(grad, w)

            def energy_at(t: float) -> float:
                return evaluate_model(config, make_deformation(F, v + t * w)).energy

        fd = (energy_at(step) - energy_at(-step)) / (2.0 * step)
        denom = max(abs(analytic), abs(fd), 1e-12)
        worst = max(worst, abs(analytic - fd) / denom)
    return worst


# ----------------------------------------------------------------------
# Consistency sweep
# ----------------------------------------------------------------------

@dataclass
class SweepResult:
    """Per-epsilon energy gaps between the exact and Cauchy-Born models and
    the fitted log-log slope (None when undefined)."""

    rows: list[dict]
    slope: float | None
    exact: bool

    def passed(self, slope_floor: float) -> bool:
        return self.exact or (self.slope is not None and self.slope >= slope_floor)


def _default_sweep_field(amplitude: float, period: float):
    def v(x: np.ndarray) -> np.ndarray:
        return amplitude * np.sin(2.0 * math.pi * x / period)

    return v


def consistency_sweep(
    config: RunConfig,
    epsilons: Sequence[float] | None = None,
    displacement: Callable[[np.ndarray], np.ndarray] | None = None,
    period: float | None = None,
) -> SweepResult:
    """Atomistic vs Cauchy-Born energy gap per volume for a smooth periodic
    displacement sampled on a sequence of lattices spanning a torus of the
    configured period L (N = L/eps cells per axis).

    The comparison model follows the config when it is an uncoupled
    Cauchy-Born variant and defaults to the cell-averaged one."""
    if epsilons is None:
        epsilons = config.sweep["epsilons"]
    if len(epsilons) < 3:
        raise ValueError("consistency sweep needs at least 3 epsilons")
    if period is None:
        period = config.sweep["period"]
    if displacement is None:
        displacement = _default_sweep_field(config.sweep["amplitude"], period)
    acb = acb_tetra_energy if config.model_family == "acb-tetra" else acb_cell_energy

    rows = []
    for eps in epsilons:
        n = int(round(period / eps))
        if abs(n * eps - period) > 1e-9 * period or n < 2:
            raise ValueError(
                f"sweep epsilon {eps} must divide the domain period {period} "
                f"into an integer number >= 2 of cells"
            )
        cfg = LatticeConfig(N=(n, n, n), epsilon=eps)
        v = sample_field(displacement, cfg)
        y = make_deformation(config.F, v)
        e_a = atomistic_energy(y, config.laws).energy
        e_c = acb(y, config.laws).energy
        vol = cfg.volume
        gap = abs(e_a - e_c) / vol
        rows.append(
            {
                "epsilon": eps,
                "energy_atomistic": e_a,
                "energy_acb": e_c,
                "gap": gap,
                "residual": gap / max(1.0, abs(e_a) / vol),
            }
        )
    gaps = [r["gap"] for r in rows]
    if all(g == 0.0 for g in gaps):
        return SweepResult(rows=rows, slope=None, exact=True)
    fit_rows = [(math.log(r["epsilon"]), math.log(r["gap"])) for r in rows if r["gap"] > 0]
    if len(fit_rows) < 3:
        return SweepResult(rows=rows, slope=None, exact=False)
    xs = np.asarray([p[0] for p in fit_rows])
    ys = np.asarray([p[1] for p in fit_rows])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return SweepResult(rows=rows, slope=slope, exact=False)


# ----------------------------------------------------------------------
# Minimization driver
# ----------------------------------------------------------------------

class LineSearchError(RuntimeError):
    """Backtracking failed to find a decrease; carries the trace so far."""

    def __init__(self, message: str, trace: list[dict]):
        super().__init__(message)
        self.trace = trace


def minimize(
    config: RunConfig,
    f: LatticeField | None = None,
    max_iters: int | None = None,
    g_tol: float | None = None,
) -> tuple[Deformation, EnergyReport, list[dict]]:
    """Steepest descent with Armijo backtracking on the objective
    E(y) - <f, v>_eps over zero-mean displacements v.

    Monotone non-increasing objective by construction; stops when the scaled
    gradient max-norm falls to g_tol or the iteration cap. Convergence state
    is report.diagnostics["converged"]; the trace rows carry (iteration,
    objective, gnorm, step).
    """
    if config.model_family in ("coupled-ho",) and (config.ho_degree or 1) > 1:
        raise ConfigError(
            ["solve supports lattice-state models; pick atomistic, acb-tetra, "
             "acb-cell, coupled, coupled-dg, naive, or coupled-ho(1)"]
        )
    cfg = config.cfg
    if f is None:
        f = LatticeField.zeros(cfg)
    if f.cfg != cfg:
        raise ValueError("force field must live on the config lattice")
    fmean = np.abs(f.mean())
    if np.max(fmean) > 1e-10:
        raise ValueError(f"force field must have zero average, got mean {f.mean()}")
    if max_iters is None:
        max_iters = config.solve["max_iters"]
    if g_tol is None:
        g_tol = config.solve["g_tol"]
    scale = residual_scale(config)

    v = LatticeField.zeros(cfg)

    def eval_state(vf: LatticeField):
        y = make_deformation(config.F, vf)
        report = evaluate_model(config, y)
        obj = report.energy - discrete_inner_product(f, y.displacement)
        grad = report.gradient - f
        return y, report, obj, grad

    y, report, obj, grad = eval_state(v)
    gnorm = grad.max_norm() / scale
    trace = [{"iteration": 0, "objective": obj, "gnorm": gnorm, "step": 0.0}]
    converged = gnorm <= g_tol
    alpha = 1.0
    it = 0
    while not converged and it < max_iters:
        it += 1
        slope = -discrete_inner_product(grad, grad)
        if slope == 0.0:
            converged = True
            break
        step = min(alpha * 2.0, 1e6)
        accepted = False
        for _ in range(60):
            trial = LatticeField(cfg, v.values - step * grad.values)
            y_t, report_t, obj_t, grad_t = eval_state(trial)
            if obj_t <= obj + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise LineSearchError(
                f"line search found no decrease at iteration {it}", trace
            )
        alpha = step
        v, y, report, obj, grad = y_t.displacement, y_t, report_t, obj_t, grad_t
        gnorm = grad.max_norm() / scale
        trace.append({"iteration": it, "objective": obj, "gnorm": gnorm, "step": step})
        converged = gnorm <= g_tol
    report.diagnostics["converged"] = bool(converged)
    report.diagnostics["iterations"] = it
    return y, report, trace


# ----------------------------------------------------------------------
# Verification suites and report emission
# ----------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence], seed: int) -> None:
    lines = [f"# seed={seed} generator=PCG64", ",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    expected_fail: bool = False

    def line(self) -> str:
        if self.expected_fail:
            status = "EXPECTED-FAIL"
        else:
            status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.detail}"


def verify_lemma(config: RunConfig, out_dir: Path) -> list[CheckResult]:
    """Random bond-volume lemma residuals plus the exact-zero affine case;
    degenerate directions exercise the reduced rectangle/segment forms."""
    rng = np.random.default_rng(config.seed)
    cfg = config.cfg
    eps = cfg.epsilon
    u = LatticeField(cfg, rng.random(cfg.shape))
    rows = []
    worst = 0.0
    tol = config.tolerances["lemma"]
    for case in range(100):
        eta = tuple(int(rng.integers(1, 4)) * int(rng.choice((-1, 1))) for _ in range(3))
        ell = tuple(int(rng.integers(0, cfg.N[d])) for d in range(3))
        res = bond_volume_lemma_residual(u, ell, eta)
        bond = eps**2 * np.abs(diff_quotient(u, ell, eta))
        scale = max(float(np.max(bond)), 1e-30)
        rel = res / scale
        worst = max(worst, rel)
        rows.append((case, str(eta), str(ell), res, rel))
    # affine field with integer coefficients: exactly zero residual
    A = np.array([[2.0, 1.0, -1.0], [0.0, 3.0, 1.0], [1.0, -2.0, 2.0]])
    idx = np.indices(cfg.N).astype(float)
    affine_vals = np.einsum("cd,dxyz->xyzc", A, idx)
    u_affine = LatticeField(cfg, affine_vals)
    affine_worst = 0.0
    for case in range(20):
        eta = tuple(int(rng.integers(1, 4)) * int(rng.choice((-1, 1))) for _ in range(3))
        ell = tuple(int(rng.integers(0, cfg.N[d])) for d in range(3))
        affine_worst = max(affine_worst, bond_volume_lemma_residual(u_affine, ell, eta))
    # reduced forms for degenerate directions
    reduced_worst = 0.0
    for eta in ((1, -2, 0), (0, 3, 1), (2, 0, 0), (0, 0, 3)):
        ell = tuple(int(rng.integers(0, cfg.N[d])) for d in range(3))
        if sum(1 for e in eta if e == 0) == 1:
            reduced_worst = max(reduced_worst, rectangle_lemma_residual(u, ell, eta))
        else:
            reduced_worst = max(reduced_worst, segment_lemma_residual(u, ell, eta))
    write_csv(out_dir / "lemma.csv", ("case", "eta", "ell", "residual", "relative"), rows, config.seed)
    return [
        CheckResult(
            "lemma-random", worst <= tol,
            f"max relative residual {worst:.3e} (tolerance {tol:.1e}) over 100 draws",
        ),
        CheckResult(
            "lemma-affine-exact", affine_worst == 0.0,
            f"affine integer data residual {affine_worst!r} (must be exactly 0.0)",
        ),
        CheckResult(
            "lemma-reduced", reduced_worst <= 1e-12,
            f"reduced rectangle/segment residual {reduced_worst:.3e}",
        ),
    ]


def verify_ghost_forces(config: RunConfig, out_dir: Path) -> list[CheckResult]:
    res = ghost_force_residual(config)
    tol = config.ghost_force_tolerance
    write_csv(
        out_dir / "ghost_forces.csv",
        ("model", "residual", "tolerance"),
        [(config.model, res, tol)],
        config.seed,
    )
    if config.model_family == "naive":
        # the control must NOT vanish: it demonstrates test sensitivity
        sensitive = res >= 1e-3
        return [
            CheckResult(
                "ghost-forces-naive-control", False,
                f"scaled residual {res:.3e} {'>=' if sensitive else '<'} 1e-3 "
                f"(spurious interface forces are expected for the naive model)",
                expected_fail=True,
            )
        ]
    return [
        CheckResult(
            "ghost-forces", res <= tol,
            f"model {config.model}: scaled residual {res:.3e} (tolerance {tol:.1e})",
        )
    ]


def verify_gradient(config: RunConfig, out_dir: Path, trials: int = 5) -> list[CheckResult]:
    step = config.tolerances["fd_step"]
    tol = config.gradient_fd_tolerance
    err = fd_gradient_check(config, trials=trials, step=step)
    write_csv(
        out_dir / "gradient_fd.csv",
        ("model", "trials", "step", "max_relative_error", "tolerance"),
        [(config.model, trials, step, err, tol)],
        config.seed,
    )
    return [
        CheckResult(
            "gradient-fd", err <= tol,
            f"model {config.model}: max relative FD error {err:.3e} "
            f"(h={step:g}, tolerance {tol:.1e})",
        )
    ]


def verify_coverings(config: RunConfig, out_dir: Path) -> list[CheckResult]:
    """Each nondegenerate direction's coverings tile the torus exactly."""
    cfg = config.cfg
    results = []
    rows = []
    for law in config.laws:
        eta = law.eta
        if eta[0] * eta[1] * eta[2] == 0:
            rows.append((str(eta), "degenerate", 0, 0))
            continue
        try:
            covs = enumerate_coverings(eta, cfg)
        except CoveringMismatch as exc:
            results.append(CheckResult(f"coverings{eta}", False, str(exc)))
            continue
        n_eta = abs(eta[0] * eta[1] * eta[2])
        ok = len(covs) == n_eta
        tile_counts = np.zeros(cfg.N, dtype=np.int64)
        for cov in covs:
            for mu in cov.base_sites:
                for i in range(abs(eta[0])):
                    for j in range(abs(eta[1])):
                        for kk in range(abs(eta[2])):
                            cell = (
                                (mu[0] + i) % cfg.N[0],
                                (mu[1] + j) % cfg.N[1],
                                (mu[2] + kk) % cfg.N[2],
                            )
                            tile_counts[cell] += 1
        # every covering tiles once: total count per cell == number of coverings
        ok = ok and bool(np.all(tile_counts == n_eta))
        rows.append((str(eta), "ok" if ok else "broken", len(covs), n_eta))
        results.append(
            CheckResult(
                f"coverings-{eta}", ok,
                f"{len(covs)} coverings of {n_eta} expected; each tiles the torus once",
            )
        )
    write_csv(out_dir / "coverings.csv", ("eta", "status", "count", "expected"), rows, config.seed)
    if not results:
        results.append(
            CheckResult("coverings", True, "no nondegenerate directions to check")
        )
    return results


def sweep_consistency(config: RunConfig, out_dir: Path) -> list[CheckResult]:
    result = consistency_sweep(config)
    rows = [
        (r["epsilon"], r["energy_atomistic"], r["energy_acb"], r["gap"], r["residual"])
        for r in result.rows
    ]
    write_csv(
        out_dir / "sweep.csv",
        ("epsilon", "energy_atomistic", "energy_acb", "gap", "residual"),
        rows,
        config.seed,
    )
    floor = config.tolerances["sweep_slope"]
    if result.exact:
        return [CheckResult("sweep-consistency", True, "all gaps exactly zero (slope exact)")]
    if result.slope is None:
        return [CheckResult("sweep-consistency", False, "not enough nonzero gaps to fit a slope")]
    return [
        CheckResult(
            "sweep-consistency", result.slope >= floor,
            f"fitted log-log slope {result.slope:.4f} (floor {floor})",
        )
    ]


def solve_command(config: RunConfig, out_dir: Path) -> list[CheckResult]:
    cfg = config.cfg
    amp = config.solve["force_amplitude"]
    if amp != 0.0:
        def force_fn(x: np.ndarray) -> np.ndarray:
            return amp * np.array(
                [
                    math.sin(2.0 * math.pi * x[1]),
                    math.sin(2.0 * math.pi * x[2]),
                    math.sin(2.0 * math.pi * x[0]),
                ]
            )

        f = sample_field(force_fn, cfg).zero_mean()
    else:
        f = LatticeField.zeros(cfg)
    try:
        y, report, trace = minimize(config, f)
    except LineSearchError as exc:
        write_csv(
            out_dir / "solve_trace.csv",
            ("iteration", "objective", "gnorm", "step"),
            [(r["iteration"], r["objective"], r["gnorm"], r["step"]) for r in exc.trace],
            config.seed,
        )
        return [CheckResult("solve", False, str(exc))]
    write_csv(
        out_dir / "solve_trace.csv",
        ("iteration", "objective", "gnorm", "step"),
        [(r["iteration"], r["objective"], r["gnorm"], r["step"]) for r in trace],
        config.seed,
    )
    converged = report.diagnostics.get("converged", False)
    final = trace[-1]
    return [
        CheckResult(
            "solve", bool(converged),
            f"{'converged' if converged else 'iteration cap reached'} at iteration "
            f"{final['iteration']}, objective {final['objective']!r}, "
            f"scaled gnorm {final['gnorm']:.3e} (tol {config.solve['g_tol'] :g})",
        )
    ]


COMMANDS = {
    "verify-lemma": verify_lemma,
    "verify-ghost-forces": verify_ghost_forces,
    "verify-gradient": verify_gradient,
    "verify-coverings": verify_coverings,
    "sweep-consistency": sweep_consistency,
    "solve": solve_command,
}


def run(command: str, config: RunConfig, out_dir: str | Path | None = None) -> int:
    """Execute one verification command: write CSV reports and a PASS/FAIL
    summary, print the summary, and return the exit code (0 all passed,
    1 a check failed, 2 invalid usage)."""
    if command not in COMMANDS:
        print(f"unknown command {command!r}; expected one of {sorted(COMMANDS)}")
        return 2
    out = Path(out_dir) if out_dir is not None else Path(config.out or "bvcouple_reports")
    out.mkdir(parents=True, exist_ok=True)
    results = COMMANDS[command](config, out)
    lines = [result.line() for result in results]
    summary = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(summary)
    print(summary, end="")
    return 0 if all(r.passed and not r.expected_fail for r in results) else 1
