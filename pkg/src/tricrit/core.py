"""Masses, Jacobi coordinate frames, and Gaussian pair potentials.

Conventions used throughout the package: hbar = 1 and the Jacobi coordinates
are mass-scaled so that the three-body kinetic operator (center of mass
removed) is the flat Laplacian -Lap_x - Lap_y on R^6.  All mass dependence
then enters through the scale factors alpha (pair {1,2}), alpha' (pair
{1,3}), the reduced mass of the {1,2}+3 split, and the orthogonal 2x2 matrix
connecting the two Jacobi sets.

The separation vector of each pair is a fixed linear combination of the
Jacobi vectors, r_j - r_i = c_x * x + c_y * y; the coefficient pairs are kept
on the frame so that potentials (functions of the physical separation) can be
evaluated in any representation without coordinate rebinding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

# Fixed exponent used in the decay-weighted admissibility integral
# int |V| (1+r)^(2*delta) d^3r.  Any value in (0, 1/8) works; fixing one
# makes the admissibility report deterministic.
TAIL_WEIGHT_EXPONENT = 1.0 / 16.0

_PAIR_LABELS = ("12", "13", "23")


def _require_positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a finite positive number, got {value!r}")


@dataclass(frozen=True)
class MassConfig:
    """Particle masses in dimensionless code units (hbar = 1)."""

    m1: float
    m2: float
    m3: float

    def __post_init__(self):
        for name in ("m1", "m2", "m3"):
            _require_positive(name, getattr(self, name))

    @property
    def total(self):
        return self.m1 + self.m2 + self.m3


@dataclass(frozen=True)
class GaussianTerm:
    """One attractive Gaussian well -depth * exp(-r^2 / width^2)."""

    depth: float
    width: float

    def __post_init__(self):
        if not (isinstance(self.depth, (int, float)) and math.isfinite(self.depth) and self.depth >= 0):
            raise ValueError(f"depth must be finite and >= 0, got {self.depth!r}")
        _require_positive("width", self.width)


@dataclass(frozen=True)
class PairPotential:
    """Nonpositive central potential V(r) = sum_i -d_i exp(-r^2/s_i^2).

    ``pair`` tags which particle pair the potential couples ("12", "13" or
    "23").  Restricting to sums of Gaussian wells keeps V <= 0 automatic,
    makes every admissibility integral finite, and gives closed-form matrix
    elements in the correlated-Gaussian three-body basis.
    """

    terms: tuple
    pair: str

    def __post_init__(self):
        if self.pair not in _PAIR_LABELS:
            raise ValueError(f"pair must be one of {_PAIR_LABELS}, got {self.pair!r}")
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if not isinstance(t, GaussianTerm):
                raise ValueError("terms must be GaussianTerm instances")

    def __call__(self, r):
        return evaluate_potential(self, r)

    def scaled(self, factor):
        """Potential factor*V: every depth multiplied by ``factor`` >= 0."""
        if not (math.isfinite(factor) and factor >= 0):
            raise ValueError(f"scale factor must be finite and >= 0, got {factor!r}")
        return PairPotential(
            tuple(GaussianTerm(t.depth * factor, t.width) for t in self.terms), self.pair
        )

    def stretched(self, scale):
        """Potential V(scale*r) as a function of r: widths divided by ``scale``.

        Used to express a physical-separation potential in a mass-scaled
        Jacobi radial coordinate (separation = scale * jacobi radius).
        """
        _require_positive("scale", scale)
        return PairPotential(
            tuple(GaussianTerm(t.depth, t.width / scale) for t in self.terms), self.pair
        )

    @property
    def max_width(self):
        if not self.terms:
            return 1.0
        return max(t.width for t in self.terms)

    @property
    def total_depth(self):
        return sum(t.depth for t in self.terms)

    def is_zero(self):
        return all(t.depth == 0.0 for t in self.terms) or not self.terms


def evaluate_potential(pot, r):
    """Evaluate V(r) = sum_i -d_i exp(-r^2/s_i^2); accepts scalars or arrays."""
    arr = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("r must be finite")
    out = np.zeros_like(arr)
    for t in pot.terms:
        out -= t.depth * np.exp(-((arr / t.width) ** 2))
    if np.ndim(r) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class JacobiFrame:
    """Mass-scaled Jacobi machinery for a three-particle system.

    x = (r2 - r1)/alpha and y = sqrt(2*M12)*(r3 - R12) with R12 the {1,2}
    center of mass; eta = (r3 - r1)/alpha' and zeta the analogous {1,3}
    spectator coordinate.  ``mix`` is the 2x2 orthogonal matrix with
    (x, y) = mix @ (eta, zeta).  ``sepXY`` holds (c_x, c_y) with the physical
    separation r_j - r_i = c_x*x + c_y*y for pair {i,j}.
    """

    masses: MassConfig
    alpha: float
    alpha_prime: float
    m12: float
    mix: np.ndarray
    sep12: tuple
    sep13: tuple
    sep23: tuple

    def separation(self, pair):
        """Coefficient pair (c_x, c_y) for the requested pair label."""
        try:
            return {"12": self.sep12, "13": self.sep13, "23": self.sep23}[pair]
        except KeyError:
            raise ValueError(f"unknown pair {pair!r}") from None

    def separation_radius(self, pair, rho_x, rho_y, cos_xy):
        """|r_j - r_i| from the rotation invariants (|x|, |y|, cos(x,y)).

        Works pointwise on arrays; this is how central pair potentials are
        evaluated on any L=0 grid without changing coordinates.
        """
        cx, cy = self.separation(pair)
        sq = (cx * rho_x) ** 2 + (cy * rho_y) ** 2 + 2.0 * cx * cy * rho_x * rho_y * cos_xy
        return np.sqrt(np.maximum(sq, 0.0))


def pair_scale(masses, pair):
    """Length-scale factor of a pair's own mass-scaled relative coordinate.

    The two-body reduction of pair {i,j} is -Lap + V(scale * rho) with
    scale = sqrt((m_i+m_j)/(2 m_i m_j)).
    """
    m = {"12": (masses.m1, masses.m2), "13": (masses.m1, masses.m3), "23": (masses.m2, masses.m3)}
    try:
        ma, mb = m[pair]
    except KeyError:
        raise ValueError(f"unknown pair {pair!r}") from None
    return math.sqrt((ma + mb) / (2.0 * ma * mb))


def _jacobi_rows(masses, pair):
    """Rows (over particle positions) of the mass-scaled Jacobi pair for ``pair``.

    First row gives the scaled in-pair separation, second row the scaled
    spectator coordinate; both are translation invariant.
    """
    m = (masses.m1, masses.m2, masses.m3)
    idx = {"12": (0, 1, 2), "13": (0, 2, 1), "23": (1, 2, 0)}[pair]
    i, j, s = idx
    alpha = pair_scale(masses, pair)
    mpair = m[i] + m[j]
    mu_spec = mpair * m[s] / masses.total
    row_rel = np.zeros(3)
    row_rel[i] = -1.0 / alpha
    row_rel[j] = 1.0 / alpha
    row_spec = np.zeros(3)
    row_spec[s] = math.sqrt(2.0 * mu_spec)
    row_spec[i] = -math.sqrt(2.0 * mu_spec) * m[i] / mpair
    row_spec[j] = -math.sqrt(2.0 * mu_spec) * m[j] / mpair
    return np.vstack([row_rel, row_spec])


def jacobi_frame(masses):
    """Build the JacobiFrame for a MassConfig.

    The mixing matrix is obtained from the particle-position representations
    of the two Jacobi sets; since both sets are translation invariant, the
    minimum-norm pseudo-inverse reconstruction is exact for them.
    """
    if not isinstance(masses, MassConfig):
        masses = MassConfig(*masses)
    m1, m2, m3 = masses.m1, masses.m2, masses.m3
    alpha = pair_scale(masses, "12")
    alpha_prime = pair_scale(masses, "13")
    m12 = (m1 + m2) * m3 / masses.total

    t12 = _jacobi_rows(masses, "12")
    t13 = _jacobi_rows(masses, "13")
    mix = t12 @ t13.T @ np.linalg.inv(t13 @ t13.T)
    defect = np.abs(mix.T @ mix - np.eye(2)).max()
    if defect > 1e-12:
        raise RuntimeError(f"jacobi mixing matrix not orthogonal (defect {defect:.3e})")
    mix.setflags(write=False)

    cy = 1.0 / math.sqrt(2.0 * m12)
    sep12 = (alpha, 0.0)
    sep13 = (alpha * m2 / (m1 + m2), cy)
    sep23 = (-alpha * m1 / (m1 + m2), cy)
    return JacobiFrame(
        masses=masses,
        alpha=alpha,
        alpha_prime=alpha_prime,
        m12=m12,
        mix=mix,
        sep12=sep12,
        sep13=sep13,
        sep23=sep23,
    )


@dataclass(frozen=True)
class AdmissibilityWitness:
    """Numerical witnesses that a PairPotential satisfies the standing
    integrability and decay requirements.

    square_integral    int |V|^2 d^3r
    weighted_integral  int |V| (1+r)^(2*delta) d^3r with delta = 1/16
    exp_bound          (b1, b2) with -b1*exp(-b2*r) <= V(r) <= 0 on [0, 50]
    exp_bound_margin   min over samples of b1*exp(-b2*r) - |V(r)|  (>= 0)
    """

    square_integral: float
    weighted_integral: float
    exp_bound: tuple
    exp_bound_margin: float


def admissibility_witness(pot, n_quad=600, r_probe=50.0, n_probe=2001):
    """Quadrature/sampling witnesses for the potential admissibility conditions.

    The exponential lower bound uses b2 = 1 and b1 = exp(s_max^2/4) * sum(d_i),
    which dominates every Gaussian term of the potential.
    """
    rmax = 60.0 * pot.max_width
    t, w = leggauss(n_quad)
    r = 0.5 * rmax * (t + 1.0)
    wr = 0.5 * rmax * w
    v = np.abs(evaluate_potential(pot, r))
    sq = float(4.0 * math.pi * np.sum(wr * r**2 * v**2))
    weighted = float(
        4.0 * math.pi * np.sum(wr * r**2 * v * (1.0 + r) ** (2.0 * TAIL_WEIGHT_EXPONENT))
    )
    if not (math.isfinite(sq) and math.isfinite(weighted)):
        raise ValueError("admissibility integrals are not finite")

    b2 = 1.0
    b1 = math.exp(pot.max_width**2 / 4.0) * pot.total_depth
    rs = np.linspace(0.0, r_probe, n_probe)
    margin = float(np.min(b1 * np.exp(-b2 * rs) - np.abs(evaluate_potential(pot, rs))))
    return AdmissibilityWitness(sq, weighted, (b1, b2), margin)
