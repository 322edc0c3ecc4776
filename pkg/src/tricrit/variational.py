"""Correlated-Gaussian variational solver for the three-body ground state.

Trial space: linear combinations of L = 0 correlated Gaussians
exp(-1/2 (A11 |x|^2 + 2 A12 x.y + A22 |y|^2)) over the mass-scaled Jacobi
pair (x, y), with symmetric positive-definite 2x2 exponent matrices A.  The
ground state of a system of nonpositive central potentials is nodeless and
rotation invariant, so the scalar couplings |x|^2, x.y, |y|^2 span the right
sector, and every Hamiltonian matrix element is closed form for Gaussian
wells: overlaps and kinetic terms from 2x2 determinant/trace formulas, each
potential term from a rank-one determinant update on the pair-separation
direction.

Basis functions are normalized before assembly (all matrices are expressed
in unit-norm elements); geometric width ladders are deliberately
ill-conditioned, and the generalized eigenproblem is stabilized by spectral
filtering of the overlap: directions with overlap eigenvalue below
1e-10 * max are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.polynomial.legendre import leggauss
from scipy.special import erf

OVERLAP_FILTER = 1e-10
DUPLICATE_OVERLAP = 1.0 - 1e-10


class DegenerateBasisError(RuntimeError):
    """The combined exponent of an element pair is not positive definite, or
    the filtered basis is empty."""


@dataclass(frozen=True)
class GaussianBasisElement:
    """One correlated Gaussian, exponent matrix [[a_xx, a_xy], [a_xy, a_yy]]."""

    a_xx: float
    a_xy: float
    a_yy: float

    def __post_init__(self):
        m = self.matrix
        eigs = np.linalg.eigvalsh(m)
        if not np.all(eigs > 1e-12):
            raise ValueError(f"exponent matrix must be SPD with eigenvalues > 1e-12, got {eigs}")

    @property
    def matrix(self):
        return np.array([[self.a_xx, self.a_xy], [self.a_xy, self.a_yy]])


def _normalized_overlap(a, b):
    # |<g_a, g_b>| / (|g_a| |g_b|) = [det(2A)^(1/2) det(2B)^(1/2) / det(A+B)]^(3/2)
    da = a.a_xx * a.a_yy - a.a_xy**2
    db = b.a_xx * b.a_yy - b.a_xy**2
    c00, c01, c11 = a.a_xx + b.a_xx, a.a_xy + b.a_xy, a.a_yy + b.a_yy
    dc = c00 * c11 - c01**2
    return (4.0 * math.sqrt(da * db) / dc) ** 1.5


@dataclass
class GaussianBasis:
    """Ordered collection of basis elements plus its generation descriptor."""

    elements: list
    descriptor: dict = field(default_factory=dict)

    @property
    def size(self):
        return len(self.elements)

    def exponents(self):
        """Stacked (m, 2, 2) array of exponent matrices."""
        return np.array([e.matrix for e in self.elements])

    def extended(self, extra_elements, note="extended"):
        """Nested enlargement: same elements plus extras (duplicates dropped)."""
        merged = GaussianBasis(list(self.elements), dict(self.descriptor, note=note))
        for el in extra_elements:
            if all(_normalized_overlap(el, old) < DUPLICATE_OVERLAP for old in merged.elements):
                merged.elements.append(el)
        return merged


def generate_basis(frame, n_scales, r_min, r_max):
    """Deterministic correlated-Gaussian basis from a geometric width ladder.

    Three families share one ladder w_k (geometric from r_min to r_max):
    diagonal elements diag(1/wi^2, 1/wj^2) covering independent x/y scales,
    and for each of the {1,3} and {2,3} separations a rotated family with
    width wi along the pair direction and wj across it, which supplies the
    x.y correlation the attractive channels need.  Near-duplicates
    (normalized overlap above 1 - 1e-10) are dropped, which in particular
    collapses the isotropic members of all families into one.
    """
    if not (0 < r_min < r_max):
        raise ValueError("require 0 < r_min < r_max")
    if n_scales < 1 or int(n_scales) != n_scales:
        raise ValueError("n_scales must be a positive integer")
    widths = np.geomspace(r_min, r_max, int(n_scales))
    candidates = []
    for wi in widths:
        for wj in widths:
            candidates.append(GaussianBasisElement(1.0 / wi**2, 0.0, 1.0 / wj**2))
    for pair in ("13", "23"):
        cx, cy = frame.separation(pair)
        norm = math.hypot(cx, cy)
        ux, uy = cx / norm, cy / norm  # unit vector along the pair separation
        for wi in widths:
            for wj in widths:
                if wi == wj:
                    continue  # isotropic: already in the diagonal family
                ai, aj = 1.0 / wi**2, 1.0 / wj**2
                a_xx = ai * ux * ux + aj * uy * uy
                a_yy = ai * uy * uy + aj * ux * ux
                a_xy = (ai - aj) * ux * uy
                candidates.append(GaussianBasisElement(a_xx, a_xy, a_yy))
    elements = []
    for el in candidates:
        if all(_normalized_overlap(el, old) < DUPLICATE_OVERLAP for old in elements):
            elements.append(el)
    descriptor = {
        "kind": "geometric-ladder",
        "n_scales": int(n_scales),
        "r_min": float(r_min),
        "r_max": float(r_max),
        "size": len(elements),
    }
    return GaussianBasis(elements, descriptor)


@dataclass
class HamiltonianMatrices:
    """Closed-form matrices over unit-normalized basis elements.

    overlap, kinetic and one matrix per pair potential (entrywise <= 0), plus
    the absolute-value variants (entrywise >= 0, equal to -V for nonpositive
    potentials).  ``hamiltonian(lam)`` assembles kinetic + V12 + lam*(V13+V23).
    """

    overlap: np.ndarray
    kinetic: np.ndarray
    v12: np.ndarray
    v13: np.ndarray
    v23: np.ndarray
    abs_v12: np.ndarray
    abs_v13: np.ndarray
    abs_v23: np.ndarray
    basis: GaussianBasis
    lam: float | None = None
    _projected: dict = field(default_factory=dict, repr=False)

    def hamiltonian(self, lam):
        return self.kinetic + self.v12 + lam * (self.v13 + self.v23)

    def projected(self):
        """Overlap-filtered orthonormal projection of all matrices (cached).

        The overlap eigenbasis does not depend on the coupling, so scans
        over lam reuse one factorization.
        """
        if not self._projected:
            s_vals, s_vecs = scipy.linalg.eigh(self.overlap)
            keep = s_vals > OVERLAP_FILTER * s_vals[-1]
            if not np.any(keep):
                raise DegenerateBasisError("basis fully degenerate after overlap filtering")
            proj = s_vecs[:, keep] / np.sqrt(s_vals[keep])
            self._projected.update(
                proj=proj,
                kinetic=proj.T @ self.kinetic @ proj,
                v12=proj.T @ self.v12 @ proj,
                attract=proj.T @ (self.v13 + self.v23) @ proj,
            )
        return self._projected


def hamiltonian_matrices(basis, frame, potentials, lam=None):
    """Assemble overlap, kinetic and pair-potential matrices for the basis.

    ``potentials`` maps pair labels "12", "13", "23" to PairPotentials of the
    physical separations; the frame's separation coefficients turn each into
    a rank-one Gaussian factor on (x, y).  Raises DegenerateBasisError naming
    the element pair if a combined exponent fails to be positive definite.
    """
    mats = basis.exponents()
    m = len(basis.elements)
    if m == 0:
        raise DegenerateBasisError("empty basis")
    a = mats[:, None, :, :]
    b = mats[None, :, :, :]
    c00 = a[..., 0, 0] + b[..., 0, 0]
    c01 = a[..., 0, 1] + b[..., 0, 1]
    c11 = a[..., 1, 1] + b[..., 1, 1]
    det_c = c00 * c11 - c01 * c01
    if np.any(det_c <= 0) or np.any(c00 <= 0):
        i, j = np.argwhere((det_c <= 0) | (c00 <= 0))[0]
        raise DegenerateBasisError(f"combined exponent of elements ({i}, {j}) is not SPD")
    det_a = mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] ** 2
    # overlap of unit-normalized elements
    log_s = 0.75 * (np.log(4.0 * det_a)[:, None] + np.log(4.0 * det_a)[None, :]) - 1.5 * np.log(det_c)
    overlap = np.exp(log_s)
    # kinetic: 3 Tr[A B (A+B)^(-1)] per normalized overlap
    ab00 = a[..., 0, 0] * b[..., 0, 0] + a[..., 0, 1] * b[..., 1, 0]
    ab01 = a[..., 0, 0] * b[..., 0, 1] + a[..., 0, 1] * b[..., 1, 1]
    ab10 = a[..., 1, 0] * b[..., 0, 0] + a[..., 1, 1] * b[..., 1, 0]
    ab11 = a[..., 1, 0] * b[..., 0, 1] + a[..., 1, 1] * b[..., 1, 1]
    # Tr[M C^(-1)] with C^(-1) = [[c11, -c01], [-c01, c00]] / det
    trace = (ab00 * c11 - ab01 * c01 - ab10 * c01 + ab11 * c00) / det_c
    kinetic = 3.0 * trace * overlap

    def potential_matrix(pair):
        pot = potentials[pair]
        cx, cy = frame.separation(pair)
        qsq = (cx * cx * c11 - 2.0 * cx * cy * c01 + cy * cy * c00) / det_c
        out = np.zeros((m, m))
        for t in pot.terms:
            out -= t.depth * overlap * (1.0 + 2.0 * qsq / t.width**2) ** -1.5
        return out

    v12 = potential_matrix("12")
    v13 = potential_matrix("13")
    v23 = potential_matrix("23")
    return HamiltonianMatrices(
        overlap=overlap,
        kinetic=kinetic,
        v12=v12,
        v13=v13,
        v23=v23,
        abs_v12=-v12,
        abs_v13=-v13,
        abs_v23=-v23,
        basis=basis,
        lam=lam,
    )


@dataclass
class SpectralResult:
    """Variational ground-state solution at one coupling."""

    energy: float
    coefficients: np.ndarray
    residual: float
    lam: float
    basis: GaussianBasis
    descriptor: dict


def ground_state(basis, frame, potentials, lam, matrices=None):
    """Lowest state of (kinetic + V12 + lam*(V13 + V23)) c = E * overlap * c.

    The overlap is spectrally filtered (eigenvalues below 1e-10 of the
    largest are dropped) before the projected symmetric eigenproblem is
    solved; the returned coefficients are normalized in the overlap metric
    and sign-fixed against the all-positive probe vector.
    """
    mats = matrices if matrices is not None else hamiltonian_matrices(basis, frame, potentials)
    parts = mats.projected()
    proj = parts["proj"]
    hp = parts["kinetic"] + parts["v12"] + lam * parts["attract"]
    vals, vecs = scipy.linalg.eigh(hp)
    energy = float(vals[0])
    coeff = proj @ vecs[:, 0]
    ham = mats.hamiltonian(lam)
    # normalize in the overlap metric and fix the overall sign
    nrm = math.sqrt(float(coeff @ (mats.overlap @ coeff)))
    coeff = coeff / nrm
    if float(coeff @ (mats.overlap @ np.ones_like(coeff))) < 0:
        coeff = -coeff
    residual = float(np.linalg.norm(ham @ coeff - energy * (mats.overlap @ coeff)))
    return SpectralResult(
        energy=energy,
        coefficients=coeff,
        residual=residual,
        lam=float(lam),
        basis=basis,
        descriptor=dict(basis.descriptor, filtered=int(proj.shape[1])),
    )


def potential_half_norms(result, matrices):
    """(||v13|^(1/2) psi|^2, ||v23|^(1/2) psi|^2, ||v12|^(1/2) psi|^2).

    Quadratic forms of the absolute-value potential matrices in the
    overlap-normalized state; by first-order perturbation theory the sum of
    the first two equals -dE/dlam.
    """
    c = result.coefficients
    h13 = float(c @ (matrices.abs_v13 @ c))
    h23 = float(c @ (matrices.abs_v23 @ c))
    h12 = float(c @ (matrices.abs_v12 @ c))
    return h13, h23, h12


def _chi3_cdf(x):
    # P(chi^2_3 < x) = erf(sqrt(x/2)) - sqrt(2x/pi) exp(-x/2)
    x = np.maximum(x, 0.0)
    return erf(np.sqrt(0.5 * x)) - np.sqrt(2.0 * x / math.pi) * np.exp(-0.5 * x)


_SPREAD_NODES = leggauss(160)


def spread_probability(result, radius):
    """Probability mass of the normalized state inside |x|^2 + |y|^2 < R^2.

    Each pair product of basis Gaussians is a single Gaussian whose 2x2
    exponent diagonalizes to rates (g1, g2); the ball probability is then
    P(T1 + T2 < R^2) with independent T_i ~ chi^2_3 / g_i, evaluated by a
    one-dimensional quadrature of the chi-squared density against the
    complementary chi-squared distribution function.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if radius == 0.0:
        return 0.0
    basis = result.basis
    mats = basis.exponents()
    m = len(basis.elements)
    a = mats[:, None, :, :]
    b = mats[None, :, :, :]
    c00 = a[..., 0, 0] + b[..., 0, 0]
    c01 = a[..., 0, 1] + b[..., 0, 1]
    c11 = a[..., 1, 1] + b[..., 1, 1]
    half = 0.5 * (c00 + c11)
    gap = np.sqrt(0.25 * (c00 - c11) ** 2 + c01**2)
    g1 = half + gap
    g2 = half - gap
    det_a = mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] ** 2
    log_s = 0.75 * (np.log(4.0 * det_a)[:, None] + np.log(4.0 * det_a)[None, :]) - 1.5 * np.log(
        g1 * g2
    )
    overlap = np.exp(log_s)

    rsq = radius * radius
    # Three per-pair regimes: if even the slow rate g2 saturates the ball the
    # mass is entirely inside; if only the fast rate g1 saturates, T1 is
    # negligible against R^2 and P = F2(R^2); otherwise the g1-feature scale
    # sqrt(3/g1) is comparable to R and a quadrature in tau = sqrt(t) over
    # the g1-density against the g2-distribution resolves it.
    prob = np.empty((m, m))
    full = g2 * rsq > 200.0
    narrow = (~full) & (g1 * rsq > 200.0)
    rest = ~(full | narrow)
    prob[full] = 1.0
    prob[narrow] = _chi3_cdf(g2[narrow] * rsq)
    if np.any(rest):
        tau, wt = _SPREAD_NODES
        tau = 0.5 * radius * (tau + 1.0)
        wt = 0.5 * radius * wt
        t = tau**2
        ga = g1[rest][:, None]
        gb = g2[rest][:, None]
        # density of chi^2_3 / g1 at t, times dt = 2 tau d tau
        pdf = ga**1.5 * np.sqrt(t) * np.exp(-0.5 * ga * t) / math.sqrt(2.0 * math.pi)
        cdf2 = _chi3_cdf(gb * (rsq - t))
        prob[rest] = np.sum(pdf * cdf2 * (2.0 * tau * wt), axis=-1)
    c = result.coefficients
    val = float(c @ ((overlap * prob) @ c))
    return min(max(val, 0.0), 1.0)


def _angle_averaged_profile(basis, coeff, rho_x, rho_y):
    """Angle average over cos(x, y) of the normalized mixture on a 2-D grid."""
    out = np.zeros(np.broadcast(rho_x, rho_y).shape)
    for el, ci in zip(basis.elements, coeff):
        det_a = el.a_xx * el.a_yy - el.a_xy**2
        norm = (4.0 * det_a) ** 0.75 / (2.0 * math.pi) ** 1.5
        q = 0.5 * (el.a_xx * rho_x**2 + el.a_yy * rho_y**2)
        arg = el.a_xy * rho_x * rho_y
        small = np.abs(arg) < 1e-8
        with np.errstate(over="ignore", invalid="ignore"):
            ratio = np.where(
                small,
                np.exp(-q) * (1.0 + arg**2 / 6.0),
                (np.exp(arg - q) - np.exp(-arg - q)) / np.where(small, 1.0, 2.0 * arg),
            )
        out += ci * norm * ratio
    return out


def universal_overlap(result, energy, n_x=240, n_y=2000):
    """Overlap diagnostic against the parameter-free near-threshold profile.

    Phi(x, y) ~ (|x| sin(k|y|) + |y| cos(k|y|)) exp(-k|x|) /
    (1 + |x|^3 |y| + |y|^3 |x|) with k = sqrt(-E); returns
    |<psi, Phi>| / (|Phi| |psi|) in [0, 1], computed by 2-D quadrature over
    (|x|, |y|) in the L = 0 sector (the profile is independent of the
    relative angle, so only the state's angle average enters).
    """
    if not energy < 0:
        raise ValueError("energy must be negative")
    k = math.sqrt(-energy)

    def profile(rx, ry):
        return (rx * np.sin(k * ry) + ry * np.cos(k * ry)) * np.exp(-k * rx) / (
            1.0 + rx**3 * ry + ry**3 * rx
        )

    # <psi, Phi>: the state's Gaussian decay controls convergence
    x_hi = 40.0 / k
    y_hi = 60.0 / k
    tx, wx = leggauss(n_x)
    rx = 0.5 * x_hi * (tx + 1.0)
    wx = 0.5 * x_hi * wx
    ty, wy = leggauss(min(n_y, 4000))
    ry = 0.5 * y_hi * (ty + 1.0)
    wy = 0.5 * y_hi * wy
    gx, gy = np.meshgrid(rx, ry, indexing="ij")
    psi_bar = _angle_averaged_profile(result.basis, result.coefficients, gx, gy)
    # 8 pi^2 angular measure times the factor 2 from the cos-angle integral
    inner = 16.0 * math.pi**2 * float(
        np.einsum("i,j,ij->", wx * rx**2, wy * ry**2, psi_bar * profile(gx, gy))
    )

    # |Phi|^2: algebraic tails; log-composite in x, oscillation-resolving in y
    decades = np.geomspace(1e-6 / k, x_hi, 12 * 16)
    xm = np.concatenate([[0.0], decades])
    xc = 0.5 * (xm[1:] + xm[:-1])
    wxc = np.diff(xm)
    gx2, gy2 = np.meshgrid(xc, ry, indexing="ij")
    phi2 = profile(gx2, gy2) ** 2
    norm_sq = 8.0 * math.pi**2 * 2.0 * float(
        np.einsum("i,j,ij->", wxc * xc**2, wy * ry**2, phi2)
    )
    if norm_sq <= 0:
        raise RuntimeError("profile normalization not positive")
    val = abs(inner) / math.sqrt(norm_sq)
    return min(val, 1.0)
