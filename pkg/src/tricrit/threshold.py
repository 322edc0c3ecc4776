"""Critical-coupling location and threshold-law fitting.

The three-body ground energy E(lam) meets the dissociation threshold E_thr
(zero, or the {1,2} pair energy when that pair is bound) at the critical
coupling.  Near it the energy follows one of three laws:

    A (pair {1,2} unbound, no resonance):  E - E_thr = -c (lam - lam_cr)
    B (pair {1,2} at a zero-energy resonance):
                       E = c (lam - lam_cr) / ln(lam - lam_cr)
    C (pair {1,2} bound):                  E - E_thr = -c (lam - lam_cr)^2

This module brackets lam_cr by bisection on the variational solver, scans
energy curves with half-norm and spreading diagnostics attached, and fits
the laws by damped (Levenberg-style) least squares with deterministic
initialization from linearized pre-fits.  Model "B" is also available in the
integrated variable y = E ln(-E) - E, which is exactly linear in lam for the
leading-order law; both forms are kept because the transformed fit weights
the data differently.  A free-exponent power law ("power") supports
diagnosing case C without assuming the exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import twobody
from .core import jacobi_frame, pair_scale
from .variational import (
    generate_basis,
    ground_state,
    hamiltonian_matrices,
    potential_half_norms,
    spread_probability,
)

BINDING_MARGIN = 1e-6  # a point counts as bound when E < E_thr - this margin

MODELS = ("A", "B", "C", "B_integrated", "power")


class FitError(RuntimeError):
    """Nonlinear fit did not converge; carries the best iterate."""


@dataclass
class ThreeBodyContext:
    """Prepared three-body system: frame, physical potentials, basis, matrices.

    ``potentials`` holds the pair potentials as used in the Hamiltonian
    (pair {1,2} already includes any resonance tuning factor).  e_threshold
    is the dissociation threshold from the radial two-body solver;
    lambda_tilde is the smallest critical coupling of the {1,3}/{2,3}
    channels, the ceiling for meaningful couplings.
    """

    frame: object
    potentials: dict
    basis: object
    matrices: object
    e_threshold: float
    lambda_tilde: float
    pair12: object  # radial ResonantPair data for the {1,2} channel, or None
    radii: tuple = (10.0,)

    def solve(self, lam):
        return ground_state(self.basis, self.frame, self.potentials, lam, self.matrices)

    def energy(self, lam):
        return self.solve(lam).energy


def build_context(masses, pot12, pot13, pot23, n_scales=12, r_min=0.2, r_max=2000.0,
                  tail_scales=6, tail_start=60.0, grid=None, radii=(10.0,)):
    """Assemble a ThreeBodyContext for physical pair potentials.

    The basis is a union of a core geometric ladder on [r_min, min(40, r_max)]
    and a sparse tail ladder up to r_max, so near-threshold spread states
    stay representable without flooding the core region with elements.
    """
    frame = jacobi_frame(masses)
    pots = {"12": pot12, "13": pot13, "23": pot23}

    stretched12 = pot12.stretched(frame.alpha)
    g12 = grid if grid is not None else twobody.grid_for_potential(stretched12)
    e12 = None
    if not pot12.is_zero():
        e12 = twobody.bound_state_energy(stretched12, 1.0, g12)
    e_thr = 0.0 if e12 is None else e12

    lam_tilde = math.inf
    for label, pot in (("13", pot13), ("23", pot23)):
        if pot.is_zero():
            continue
        stretched = pot.stretched(pair_scale(masses, label))
        gp = twobody.grid_for_potential(stretched)
        lam_tilde = min(lam_tilde, twobody.tune_resonance(stretched, gp).coupling)

    core_hi = min(40.0 * max(p.max_width for p in pots.values()), r_max)
    basis = generate_basis(frame, n_scales, r_min, core_hi)
    if r_max > tail_start > core_hi / 2:
        tail = generate_basis(frame, tail_scales, tail_start, r_max)
        basis = basis.extended(tail.elements, note="tail-ladder")
    mats = hamiltonian_matrices(basis, frame, pots)
    return ThreeBodyContext(
        frame=frame,
        potentials=pots,
        basis=basis,
        matrices=mats,
        e_threshold=e_thr,
        lambda_tilde=lam_tilde,
        pair12=None,
        radii=tuple(radii),
    )


@dataclass
class Bracket:
    """Bisection bracket for the critical coupling.

    lo certifies no binding detectable at the basis resolution; hi certifies
    variational binding.  Variational energies are upper bounds, so the
    bracket is biased toward couplings above the true critical value.
    """

    lo: float
    hi: float
    e_hi: float
    note: str = "variational upper bound: true critical coupling may lie below lo"


def find_lambda_cr_bracket(ctx, tol_lambda=1e-3, lambda_max=None):
    """Bisection on the predicate E(lam) < E_thr - 1e-6.

    lambda_max defaults to 98% of the channel ceiling lambda_tilde; if no
    binding is detectable there the search fails.
    """
    if tol_lambda <= 0:
        raise ValueError("tol_lambda must be positive")
    hi = lambda_max if lambda_max is not None else (
        0.98 * ctx.lambda_tilde if math.isfinite(ctx.lambda_tilde) else 4.0
    )
    target = ctx.e_threshold - BINDING_MARGIN
    e_hi = ctx.energy(hi)
    if not e_hi < target:
        raise twobody.BracketError(
            f"no critical point in range: E({hi:.6g}) = {e_hi:.6g} >= {target:.6g}"
        )
    lo = 0.0
    while hi - lo > tol_lambda:
        mid = 0.5 * (lo + hi)
        if ctx.energy(mid) < target:
            hi = mid
        else:
            lo = mid
    return Bracket(lo=lo, hi=hi, e_hi=float(ctx.energy(hi)))


@dataclass
class CurvePoint:
    lam: float
    energy: float
    half13: float
    half23: float
    half12: float
    spreads: tuple
    flag: str = "ok"


@dataclass
class EnergyCurve:
    """Bound-state samples ordered in coupling, plus the threshold energy."""

    points: list
    e_threshold: float
    radii: tuple = (10.0,)
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        lams = [p.lam for p in self.points]
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ValueError("curve couplings must be strictly increasing")
        good = self.converged()
        energies = [p.energy for p in good]
        if any(b > a + 1e-12 for a, b in zip(energies, energies[1:])):
            raise ValueError("curve energies must be nonincreasing in the coupling")
        if any(p.energy > self.e_threshold + 1e-12 for p in good):
            raise ValueError("bound energies must not exceed the threshold")

    def converged(self):
        return [p for p in self.points if p.flag == "ok"]

    def arrays(self):
        good = self.converged()
        return (
            np.array([p.lam for p in good]),
            np.array([p.energy for p in good]),
            np.array([p.half13 for p in good]),
            np.array([p.half23 for p in good]),
        )


def scan_energy_curve(ctx, lam_values):
    """One variational solve per coupling, with diagnostics attached.

    Couplings whose energy does not clear the binding margin are kept but
    flagged "unbound" rather than dropped.
    """
    lam_values = sorted(float(v) for v in lam_values)
    points = []
    for lam in lam_values:
        res = ctx.solve(lam)
        h13, h23, h12 = potential_half_norms(res, ctx.matrices)
        spreads = tuple(spread_probability(res, r) for r in ctx.radii)
        flag = "ok" if res.energy < ctx.e_threshold - BINDING_MARGIN else "unbound"
        points.append(
            CurvePoint(lam=lam, energy=res.energy, half13=h13, half23=h23, half12=h12,
                       spreads=spreads, flag=flag)
        )
    return EnergyCurve(
        points=points,
        e_threshold=ctx.e_threshold,
        radii=ctx.radii,
        descriptor={"basis": dict(ctx.basis.descriptor), "lambda_tilde": ctx.lambda_tilde},
    )


def default_lambda_ladder(bracket, lambda_tilde, n_points=24, growth=1.45,
                          first_step=None):
    """Geometric ladder of couplings above the bracket, capped below the
    channel ceiling; spacing grows away from the critical point so the
    near-threshold decades are well sampled."""
    first = first_step if first_step is not None else max(bracket.hi - bracket.lo, 1e-4)
    lams = []
    step = first
    lam = bracket.hi
    for _ in range(n_points):
        lam = lam + step
        if math.isfinite(lambda_tilde) and lam >= 0.99 * lambda_tilde:
            break
        lams.append(lam)
        step *= growth
    return lams


def _model_residual_jacobian(model, theta, lam, energy, e_thr):
    d = lam - theta[0]
    if np.any(d <= 0):
        return None, None
    if model == "A":
        c = theta[1]
        r = (e_thr - c * d) - energy
        jac = np.stack([np.full_like(d, c), -d], axis=1)
    elif model == "C":
        c = theta[1]
        r = (e_thr - c * d * d) - energy
        jac = np.stack([2.0 * c * d, -d * d], axis=1)
    elif model == "B":
        if np.any(d >= 1):
            return None, None
        c = theta[1]
        ln = np.log(d)
        r = c * d / ln - energy
        jac = np.stack([c * (1.0 - ln) / ln**2, d / ln], axis=1)
    elif model == "B_integrated":
        c = theta[1]
        y = energy * np.log(-energy) - energy
        r = c * d - y
        jac = np.stack([np.full_like(d, -c), d], axis=1)
    elif model == "power":
        c, p = theta[1], theta[2]
        dp = d**p
        r = (e_thr - c * dp) - energy
        jac = np.stack([c * p * d ** (p - 1.0), -dp, -c * dp * np.log(d)], axis=1)
    else:
        raise ValueError(f"unknown model {model!r}")
    return r, jac


def _initial_guess(model, lam, energy, e_thr):
    de = e_thr - energy  # positive depth below threshold
    if model in ("A", "power"):
        # linear pre-fit of de against lam
        slope, intercept = np.polyfit(lam, de, 1)
        slope = max(slope, 1e-12)
        lam_cr = -intercept / slope
        theta = [min(lam_cr, lam[0] - 1e-6), slope]
        if model == "power":
            theta.append(1.0)
        return np.array(theta)
    if model == "C":
        root = np.sqrt(de)
        slope, intercept = np.polyfit(lam, root, 1)
        slope = max(slope, 1e-12)
        lam_cr = -intercept / slope
        return np.array([min(lam_cr, lam[0] - 1e-6), slope**2])
    # B and B_integrated: y = E ln(-E) - E is linear in lam at leading order
    y = energy * np.log(-energy) - energy
    slope, intercept = np.polyfit(lam, y, 1)
    slope = max(slope, 1e-12)
    lam_cr = -intercept / slope
    return np.array([min(lam_cr, lam[0] - 1e-6), slope])


@dataclass
class ScalingFit:
    model: str
    lam_cr: float
    constant: float
    exponent: float | None
    residual_sum: float
    rms_residual: float
    window: tuple
    iterations: int
    gradient_norm: float
    converged: bool = True


def fit_threshold_law(curve, model, window=None, max_iter=200, grad_tol=1e-12,
                      strict=True):
    """Damped least-squares fit of one threshold law on a curve window.

    ``window`` is an (inclusive) index pair into the converged points; the
    default near-threshold window is used when omitted.  Deterministic:
    fixed initialization from a linearized pre-fit, fixed damping schedule,
    fixed iteration cap.  With strict=True a stalled or capped iteration
    raises FitError carrying the best iterate; strict=False returns the best
    iterate flagged unconverged (model selection compares wrong models,
    which legitimately stall on data they cannot represent).
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}")
    lam, energy, _, _ = curve.arrays()
    if window is None:
        window = near_threshold_window(curve)
    i0, i1 = window
    lam = lam[i0 : i1 + 1]
    energy = energy[i0 : i1 + 1]
    n_par = 3 if model == "power" else 2
    if lam.size < max(n_par + 1, 8):
        raise ValueError(f"window holds {lam.size} points; need at least {max(n_par + 1, 8)}")
    if model in ("B", "B_integrated") and np.any(energy >= 0):
        raise ValueError("log-corrected fits need strictly negative energies")
    e_thr = curve.e_threshold

    theta = _initial_guess(model, lam, energy, e_thr)
    # log-corrected laws need lam - lam_cr < 1 across the window
    lam_floor = lam[-1] - (1.0 - 1e-9) if model in ("B", "B_integrated") else -math.inf

    def clamp(th):
        th = th.copy()
        th[0] = min(th[0], lam[0] - 1e-12)
        th[0] = max(th[0], lam_floor if math.isfinite(lam_floor) else th[0])
        return th

    theta = clamp(theta)
    damping = 1e-6
    r, jac = _model_residual_jacobian(model, theta, lam, energy, e_thr)
    if r is None:
        raise FitError(f"initial guess infeasible for model {model}: {theta}")
    cost = float(r @ r)
    grad = jac.T @ r
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(grad, np.inf) < grad_tol * max(1.0, cost):
            converged = True
            break
        jtj = jac.T @ jac
        step = np.linalg.solve(jtj + damping * np.diag(np.diag(jtj) + 1e-30), -grad)
        trial = clamp(theta + step)
        r_t, jac_t = _model_residual_jacobian(model, trial, lam, energy, e_thr)
        if r_t is not None and float(r_t @ r_t) < cost:
            theta, r, jac = trial, r_t, jac_t
            cost = float(r @ r)
            grad = jac.T @ r
            damping = max(damping / 3.0, 1e-14)
        else:
            damping *= 3.0
            if damping > 1e12:
                break  # stalled against the damping ceiling
    gnorm = float(np.linalg.norm(grad, np.inf))
    if not converged and strict:
        raise FitError(
            f"fit for model {model} did not converge after {it} iterations: "
            f"theta = {theta}, |grad| = {gnorm:.3e}"
        )
    constant = float(theta[1])
    if constant <= 0 and strict:
        raise FitError(f"fitted constant must be positive, got {constant}")
    return ScalingFit(
        model=model,
        lam_cr=float(theta[0]),
        constant=constant,
        exponent=float(theta[2]) if model == "power" else None,
        residual_sum=cost,
        rms_residual=math.sqrt(cost / lam.size),
        window=(int(i0), int(i1)),
        iterations=it,
        gradient_norm=gnorm,
        converged=converged,
    )


def near_threshold_window(curve, min_points=8):
    """Smallest half-decade window of |E - E_thr| holding >= min_points.

    Converged points are ordered in the coupling; the window starts at the
    shallowest point and extends in half-decade steps of the depth until it
    holds enough points.
    """
    lam, energy, _, _ = curve.arrays()
    if lam.size < min_points:
        raise ValueError(f"curve has {lam.size} converged points; need {min_points}")
    depth = np.abs(curve.e_threshold - energy)
    ceiling = depth[0] * math.sqrt(10.0)
    while np.sum(depth <= ceiling) < min_points:
        ceiling *= math.sqrt(10.0)
    i1 = int(np.max(np.nonzero(depth <= ceiling)))
    return (0, i1)


@dataclass
class ModelSelection:
    ranking: list
    fits: dict
    window: tuple
    margins: dict

    @property
    def best(self):
        return self.ranking[0]


def model_selection(curve, window=None, min_points=10):
    """Fit laws A, B, C on a common window and rank by residual sum.

    All three models carry two parameters, so the residual ranking is the
    information-criterion ranking; margins report each competitor's residual
    relative to the winner (> 1 means worse).
    """
    lam, _, _, _ = curve.arrays()
    if window is None:
        window = near_threshold_window(curve, min_points=min_points)
    i0, i1 = window
    if i1 - i0 + 1 < min_points:
        window = (i0, min(i0 + min_points - 1, lam.size - 1))
        i0, i1 = window
    if i1 - i0 + 1 < min_points:
        raise ValueError("not enough converged points for model selection")
    fits = {}
    for model in ("A", "B", "C"):
        fits[model] = fit_threshold_law(curve, model, window=window, strict=False)
    ranking = sorted(fits, key=lambda m: fits[m].residual_sum)
    best = fits[ranking[0]].residual_sum
    margins = {m: fits[m].residual_sum / max(best, 1e-300) for m in fits}
    return ModelSelection(ranking=ranking, fits=fits, window=window, margins=margins)


@dataclass
class ProductSequence:
    """|ln|E|| * (half-norm sum) along a curve, with a stability summary.

    The product approaches the log-corrected law's constant as the coupling
    falls to critical, but only logarithmically; late/early relative
    variations over the last two half-decades of |E| quantify the trend.
    """

    lam: np.ndarray
    log_abs_e: np.ndarray
    products: np.ndarray
    variation_late: float
    variation_previous: float
    late_mean: float


def threshold_product_sequence(curve):
    lam, energy, h13, h23 = curve.arrays()
    if np.any(energy >= 0):
        raise ValueError("product sequence needs strictly negative energies")
    log_abs = np.abs(np.log(-energy))
    products = log_abs * (h13 + h23)
    depth = -energy

    def variation(mask):
        if np.sum(mask) < 2:
            return math.nan
        vals = products[mask]
        return float((vals.max() - vals.min()) / vals.mean())

    d_min = depth.min()
    late = depth <= d_min * math.sqrt(10.0)
    prev = (depth > d_min * math.sqrt(10.0)) & (depth <= d_min * 10.0)
    return ProductSequence(
        lam=lam,
        log_abs_e=np.log(depth),
        products=products,
        variation_late=variation(late),
        variation_previous=variation(prev),
        late_mean=float(products[late].mean()) if np.any(late) else math.nan,
    )
