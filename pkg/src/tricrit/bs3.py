"""Coupled-channel Birman-Schwinger operator for the three-body problem.

The block operator

    K(z)_{ij} = |v_i3|^(1/2) (H0 + v_12 + z)^(-1) |v_j3|^(1/2),  i, j in {1, 2},

acts on pairs of L = 0 functions on R^6; its norm at z -> 0 is the
reciprocal of the critical coupling, and its top eigenvector feeds the
universal constants of the log-corrected threshold law.  This module
evaluates K(z) matrix-free on a shared (|x|, |y|, cos) grid of the {1,2}
Jacobi frame:

* multiplication operators are exact pointwise: |v_i3|^(1/2) is evaluated
  through the separation invariants, |v_12|^(1/2) is radial in |x|;
* total-L=0 functions split into Legendre channels f_l(|x|, |y|) P_l(cos),
  and the free resolvent is channel-diagonal; within a channel a spherical
  Hankel transform in |y| turns it into closed-form radial Green matrices
  G_l(kappa) at kappa = sqrt(p^2 + z) on the |x| grid;
* the v_12 correction comes from the second-resolvent identity:
  (H0+v12+z)^(-1) = R0 + R0 |v12|^(1/2) (1 - K12)^(-1) |v12|^(1/2) R0 with
  K12 the two-body kernel, which is diagonal in the same (channel, fiber)
  decomposition; each fiber solve is a dense (1 - K)^(-1) on the |x| grid.

The {1,2} resonance makes the l = 0 fiber blow up like 1/sqrt(p^2 + z), so
z = 0 is never evaluated; the norm is computed on a ladder of z > 0 and
extrapolated (the p-integration tames the fiber divergence, as the finite
norm limit requires).

Radial grids are sinh-mapped trapezoid rules so the Green kernels' diagonal
derivative kink (jump -1 in the reduced kernel) sits on nodes where a local
Euler-Maclaurin correction removes its quadrature error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander
from scipy.special import ive, kve, spherical_jn

from .twobody import ConditioningError


class TailTruncationError(RuntimeError):
    """An L1 integral has not converged on the grid (tail share too large)."""


def _sinh_mapped(n, r_max, strength=4.0):
    """Uniform-in-t trapezoid grid mapped by r = r_max*sinh(a t)/sinh(a).

    Clusters nodes near the origin (potential region) while reaching r_max;
    returns nodes, weights and the local spacing used by Euler-Maclaurin
    diagonal corrections.
    """
    h = 1.0 / n
    t = h * np.arange(1, n + 1)
    a = strength
    nodes = r_max * np.sinh(a * t) / math.sinh(a)
    deriv = r_max * a * np.cosh(a * t) / math.sinh(a)
    weights = h * deriv
    weights[-1] *= 0.5
    local = h * deriv
    return nodes, weights, local


@dataclass(frozen=True)
class ReducedGrid3B:
    """Product grid for L = 0 functions on R^6 plus the fiber momentum grid.

    rho1/rho2: radial nodes for the pair and spectator Jacobi radii;
    u: Gauss-Legendre nodes on [-1, 1] for the relative-angle cosine (their
    count is also the number of Legendre channels); p: momentum nodes of the
    spectator Hankel transform.
    """

    rho1: np.ndarray
    w1: np.ndarray
    h1: np.ndarray
    rho2: np.ndarray
    w2: np.ndarray
    h2: np.ndarray
    u: np.ndarray
    wu: np.ndarray
    p: np.ndarray
    wp: np.ndarray

    def __post_init__(self):
        for nodes, w in ((self.rho1, self.w1), (self.rho2, self.w2), (self.p, self.wp)):
            if not (np.all(np.diff(nodes) > 0) and nodes[0] > 0):
                raise ValueError("grid nodes must be positive and increasing")
            if not np.all(w > 0):
                raise ValueError("grid weights must be positive")
        if not (np.all(np.abs(self.u) < 1) and np.all(np.diff(self.u) > 0)):
            raise ValueError("angle nodes must lie inside (-1, 1)")

    @property
    def shape(self):
        return (self.rho1.size, self.rho2.size, self.u.size)

    @property
    def n_channels(self):
        return self.u.size

    def cell_measure(self):
        """6-D integration weights 8 pi^2 rho1^2 w1 rho2^2 w2 wu as a mesh."""
        m = (
            8.0
            * math.pi**2
            * (self.rho1**2 * self.w1)[:, None, None]
            * (self.rho2**2 * self.w2)[None, :, None]
            * self.wu[None, None, :]
        )
        return m


def reduced_grid_3b(n_rho=48, n_angle=16, r_max=40.0, n_p=64, p_max=14.0,
                    map_strength=4.0):
    """Default grid: sinh-mapped radial rules, GL angles, composite GL momenta.

    The momentum panels cluster near p = 0, where the resonant l = 0 fiber
    varies on the scale sqrt(z)."""
    r1, w1, h1 = _sinh_mapped(n_rho, r_max, map_strength)
    r2, w2, h2 = _sinh_mapped(n_rho, r_max, map_strength)
    u, wu = leggauss(n_angle)
    panels = ((0.0, 0.4, n_p // 2), (0.4, 2.5, n_p - n_p // 2 - n_p // 4), (2.5, p_max, n_p // 4))
    ps, wps = [], []
    for lo, hi, cnt in panels:
        t, w = leggauss(max(cnt, 4))
        ps.append(0.5 * (hi - lo) * (t + 1.0) + lo)
        wps.append(0.5 * (hi - lo) * w)
    p = np.concatenate(ps)
    wp = np.concatenate(wps)
    return ReducedGrid3B(r1, w1, h1, r2, w2, h2, u, wu, p, wp)


@dataclass
class KState:
    """Pair of L = 0 grid functions, one per attractive channel."""

    f1: np.ndarray
    f2: np.ndarray
    grid: ReducedGrid3B

    def copy(self):
        return KState(self.f1.copy(), self.f2.copy(), self.grid)


def state_inner(a, b):
    m = a.grid.cell_measure()
    return float(np.sum(m * (a.f1 * b.f1 + a.f2 * b.f2)))


def state_norm(a):
    return math.sqrt(max(state_inner(a, a), 0.0))


def uniform_state(grid):
    shape = grid.shape
    return KState(np.ones(shape), np.ones(shape), grid)


def _radial_green(nodes, kappa, wave):
    """Channel-``wave`` kernel of (-Lap_3 + kappa^2)^(-1) on a radial grid.

    G_l(r, r') = ive(l+1/2, k r_<) kve(l+1/2, k r_>) exp(-k (r_> - r_<))
                 / sqrt(r r'), with the kappa -> 0 limit
    r_<^l / ((2l+1) r_>^{l+1}); the scaled Bessel forms keep every factor
    bounded for any kappa * r.
    """
    r = nodes[:, None]
    rp = nodes[None, :]
    lo = np.minimum(r, rp)
    hi = np.maximum(r, rp)
    if kappa == 0.0:
        return (lo / hi) ** wave / ((2 * wave + 1) * hi)
    nu = wave + 0.5
    return (
        ive(nu, kappa * lo)
        * kve(nu, kappa * hi)
        * np.exp(-kappa * (hi - lo))
        / np.sqrt(r * rp)
    )


class CoupledKernel:
    """Matrix-free application of K(z) for one sandwich energy z > 0.

    ``pair`` is the tuned {1,2} ResonantPair (its potential is radial in the
    pair Jacobi coordinate), pot13/pot23 the physical spectator-channel
    potentials; the frame supplies separation invariants.  Set
    ``include_pair12=False`` to drop the v_12 correction (pure free-resolvent
    sandwiches; used by validation tests).
    """

    def __init__(self, z, pair, frame, pot13, pot23, grid=None, include_pair12=True,
                 positivity_floor=3e-3):
        if not (isinstance(z, (int, float)) and math.isfinite(z) and z > 0):
            raise ValueError(f"z must be strictly positive, got {z!r}")
        self.z = float(z)
        self.grid = grid if grid is not None else reduced_grid_3b()
        self.frame = frame
        self.positivity_floor = positivity_floor
        g = self.grid
        n1, n2, nu = g.shape
        L = g.n_channels

        r1g = g.rho1[:, None, None]
        r2g = g.rho2[None, :, None]
        ug = g.u[None, None, :]
        sep13 = frame.separation_radius("13", r1g, r2g, ug)
        sep23 = frame.separation_radius("23", r1g, r2g, ug)
        self.p1 = np.sqrt(np.maximum(-pot13(sep13), 0.0))
        self.p2 = np.sqrt(np.maximum(-pot23(sep23), 0.0))
        self.sqw12 = (
            np.sqrt(np.maximum(-pair.pot(g.rho1), 0.0)) if include_pair12 else None
        )

        # Legendre channel transforms on the angle grid (exact roundtrip)
        pl = legvander(g.u, L - 1).T  # pl[l, k] = P_l(u_k)
        self.pmat = pl
        self.fwd = pl * g.wu[None, :] * ((2 * np.arange(L) + 1) / 2.0)[:, None]

        # spherical Hankel transforms per channel
        jl = np.empty((L, g.p.size, n2))
        for l in range(L):
            jl[l] = spherical_jn(l, np.outer(g.p, g.rho2))
        self.j_fwd = jl * (g.rho2**2 * g.w2)[None, None, :]
        self.j_inv = (2.0 / math.pi) * jl * (g.p**2 * g.wp)[None, :, None]

        # fiber operators: free Green matrix and full pair-corrected resolvent
        meas1 = g.rho1**2 * g.w1
        em = np.diag(g.h1**2 / 12.0)  # Euler-Maclaurin kink correction
        self.rv = np.empty((L, g.p.size, n1, n1))
        eye = np.eye(n1)
        for ip, p in enumerate(g.p):
            kappa = math.sqrt(p * p + self.z)
            for l in range(L):
                ga = _radial_green(g.rho1, kappa, l) * meas1[None, :] - em
                if self.sqw12 is None:
                    self.rv[l, ip] = ga
                    continue
                # two-body kernel in this fiber: diag(s) GA diag(s), s = |v12|^(1/2)
                t = self.sqw12[:, None] * ga * self.sqw12[None, :]
                gap = eye - t
                try:
                    middle = np.linalg.solve(gap, eye)
                except np.linalg.LinAlgError as exc:
                    raise ConditioningError(
                        f"fiber (l={l}, p={p:.4g}) resolvent singular at z={self.z:.3g}"
                    ) from exc
                corr = ga @ (self.sqw12[:, None] * middle * self.sqw12[None, :]) @ ga
                self.rv[l, ip] = ga + corr
        # conditioning guard: the most resonant fiber is (l=0, smallest p)
        if self.sqw12 is not None:
            k0 = self.sqw12[:, None] * (
                _radial_green(g.rho1, math.sqrt(g.p[0] ** 2 + self.z), 0)
                * meas1[None, :]
                - em
            ) * self.sqw12[None, :]
            gap_low = 1.0 - float(np.max(np.linalg.eigvals(k0).real))
            if gap_low < 1e-10:
                raise ConditioningError(
                    f"z = {self.z:.3g} below the grid's resolvable scale: "
                    f"fiber gap {gap_low:.3e}"
                )

    def _resolvent(self, vol):
        """Apply (H0 + v12 + z)^(-1) to a grid function."""
        gl = np.einsum("lk,ijk->lij", self.fwd, vol)
        ghat = np.einsum("lpj,lij->lip", self.j_fwd, gl)
        hhat = np.einsum("lpab,lbp->lap", self.rv, ghat)
        hl = np.einsum("lpj,lap->laj", self.j_inv, hhat)
        return np.einsum("lk,lij->ijk", self.pmat, hl)

    def apply(self, state, enforce_positivity=False):
        """K(z) applied to a KState; optionally clip truncation-level negatives.

        The continuum operator is positivity preserving; on the grid the
        Legendre channel truncation rings at relative level ~1e-4 where the
        angular shells of the spectator potentials are thinner than the angle
        resolution.  With enforce_positivity the ripple (tracked in
        ``last_negative_dip``) is clipped to zero; dips below
        positivity_floor * max raise instead of being hidden.
        """
        if state.grid is not self.grid and state.f1.shape != self.grid.shape:
            raise ValueError("state grid incompatible with operator grid")
        h = self._resolvent(self.p1 * state.f1 + self.p2 * state.f2)
        out = KState(self.p1 * h, self.p2 * h, self.grid)
        if enforce_positivity:
            dip = 0.0
            for f in (out.f1, out.f2):
                top = float(np.max(np.abs(f)))
                low = float(f.min())
                if low < 0.0:
                    dip = max(dip, -low / max(top, 1e-300))
                if low < -self.positivity_floor * max(top, 1e-300):
                    raise RuntimeError(
                        f"positivity violated beyond ripple floor: min {low:.3e}, "
                        f"max {top:.3e}"
                    )
                np.maximum(f, 0.0, out=f)
            self.last_negative_dip = dip
        return out

    def rayleigh(self, state):
        return state_inner(state, self.apply(state)) / state_inner(state, state)


def apply_K(z, state, pair, frame, pot13, pot23, grid=None, include_pair12=True):
    """One-shot application of K(z); builds a CoupledKernel and applies it.

    Power iterations should construct the CoupledKernel once instead.
    """
    op = CoupledKernel(z, pair, frame, pot13, pot23,
                       grid=grid if grid is not None else state.grid,
                       include_pair12=include_pair12)
    return op.apply(state)


def k_top_eigenvalue(op, tol=1e-8, max_iter=500, return_state=False):
    """Norm of K(z) by power iteration from the all-positive state.

    The top eigenvector is nonnegative and non-degenerate, so the uniform
    start has nonzero overlap; convergence is declared when successive
    Rayleigh quotients differ by less than ``tol`` relatively.
    """
    state = uniform_state(op.grid)
    state.f1 /= state_norm(state)
    state.f2 = state.f1.copy()
    prev = 0.0
    for _ in range(max_iter):
        nxt = op.apply(state, enforce_positivity=True)
        quot = state_inner(state, nxt)
        nrm = state_norm(nxt)
        if nrm == 0.0:
            return (0.0, state) if return_state else 0.0
        nxt.f1 /= nrm
        nxt.f2 /= nrm
        if abs(quot - prev) <= tol * abs(quot):
            return (quot, nxt) if return_state else quot
        prev = quot
        state = nxt
    raise RuntimeError(
        f"power iteration exceeded {max_iter} iterations: last quotients "
        f"{prev:.12g}, {quot:.12g}"
    )


@dataclass
class LadderEstimate:
    """Critical-coupling estimate from a z-ladder of norms.

    lambda_of_z holds 1/|K(z)|; Richardson elimination of the sqrt(z) and z
    corrections gives the extrapolants; the uncertainty is the spread of the
    final two levels."""

    z_values: np.ndarray
    norms: np.ndarray
    lambda_of_z: np.ndarray
    extrapolants: list
    lambda_cr: float
    uncertainty: float


def lambda_cr_from_bs(pair, frame, pot13, pot23, z_ladder=(0.08, 0.02, 0.005, 0.00125),
                      grid=None, tol=1e-8):
    """Extrapolate 1/|K(z)| to z = 0 over a decreasing ladder of z > 0."""
    zs = np.asarray(sorted(z_ladder, reverse=True), dtype=float)
    if zs.size < 4:
        raise ValueError("need at least 4 ladder values")
    grid = grid if grid is not None else reduced_grid_3b()
    norms = []
    for z in zs:
        op = CoupledKernel(z, pair, frame, pot13, pot23, grid=grid)
        norms.append(k_top_eigenvalue(op, tol=tol))
    norms = np.array(norms)
    if np.any(np.diff(norms) < -1e-10 * norms[:-1]):
        raise RuntimeError(
            f"norms not increasing toward z -> 0 (grid resolution too coarse): {norms}"
        )
    lam = 1.0 / norms
    # Richardson in powers sqrt(z), z with per-step ratios
    levels = [list(lam)]
    powers = (0.5, 1.0)
    zs_work = list(zs)
    extrapolants = []
    for power in powers:
        prev = levels[-1]
        if len(prev) < 2:
            break
        nxt = []
        for k in range(len(prev) - 1):
            s = (zs_work[k] / zs_work[k + 1]) ** power
            nxt.append((s * prev[k + 1] - prev[k]) / (s - 1.0))
        levels.append(nxt)
        extrapolants.append(nxt[-1])
    estimate = extrapolants[-1]
    uncertainty = abs(extrapolants[-1] - extrapolants[-2]) if len(extrapolants) > 1 else math.nan
    return LadderEstimate(
        z_values=zs,
        norms=norms,
        lambda_of_z=lam,
        extrapolants=extrapolants,
        lambda_cr=float(estimate),
        uncertainty=float(uncertainty),
    )


@dataclass
class BsConstants:
    c1: float
    c0: float
    c1_parts: tuple
    tail_shares: tuple


def threshold_constants_from_bs(state, pair, frame, pot13, pot23, grid=None,
                                tail_tolerance=0.05):
    """Universal constants from the z -> 0 top eigenvector (phi1, phi2).

    Applies the zero-energy sandwich |v12|^(1/2) H0^(-1) |v_i3|^(1/2) to the
    eigenvector components, projects onto the pair zero-energy solution in
    the pair coordinate, takes L1 norms in the spectator coordinate, and
    combines with the pair constants: c0 = 4 a^2 / (r0 * c1)^2.  Raises
    TailTruncationError when the outer 20% of the spectator range carries
    more than ``tail_tolerance`` of either L1 integral.
    """
    grid = grid if grid is not None else state.grid
    nrm = state_norm(state)
    if not math.isfinite(nrm) or nrm <= 0:
        raise ValueError("state must have finite positive norm")
    f1 = state.f1 / nrm
    f2 = state.f2 / nrm
    op = CoupledKernel(1.0, pair, frame, pot13, pot23, grid=grid, include_pair12=False)
    # rebuild the fiber Green matrices at z = 0 (kappa = p) for H0^(-1)
    meas1 = grid.rho1**2 * grid.w1
    em = np.diag(grid.h1**2 / 12.0)
    for ip, p in enumerate(grid.p):
        for l in range(grid.n_channels):
            op.rv[l, ip] = _radial_green(grid.rho1, p, l) * meas1[None, :] - em

    u0 = np.interp(grid.rho1, pair.grid.nodes, pair.u0, left=0.0, right=0.0)
    sqw12 = np.sqrt(np.maximum(-pair.pot(grid.rho1), 0.0))
    parts = []
    shares = []
    cut = int(0.8 * grid.rho2.size)
    for mult, f in ((op.p1, f1), (op.p2, f2)):
        t = op._resolvent(mult * f)
        # l = 0 channel of |v12|^(1/2) H0^(-1) |v_i3|^(1/2) f, projected on phi0
        t0 = np.einsum("k,ijk->ij", op.fwd[0], t)
        gy = math.sqrt(4.0 * math.pi) * np.einsum(
            "i,ij->j", grid.w1 * grid.rho1 * u0 * sqw12, t0
        )
        integrand = 4.0 * math.pi * grid.rho2**2 * grid.w2 * np.abs(gy)
        total = float(np.sum(integrand))
        tail = float(np.sum(integrand[cut:]))
        share = tail / total if total > 0 else 0.0
        shares.append(share)
        parts.append(total)
    if max(shares) > tail_tolerance:
        raise TailTruncationError(
            f"spectator L1 tail shares {shares} exceed {tail_tolerance}"
        )
    c1 = parts[0] + parts[1]
    if c1 <= 0:
        raise RuntimeError("c1 must be positive")
    c0 = 4.0 * pair.a**2 / (pair.r0 * c1) ** 2
    return BsConstants(c1=float(c1), c0=float(c0), c1_parts=(parts[0], parts[1]),
                       tail_shares=(shares[0], shares[1]))
