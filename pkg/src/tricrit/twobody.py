"""s-wave radial Birman-Schwinger solver for a single particle pair.

Everything here works on the pair's own mass-scaled radial coordinate; the
caller hands in a potential already expressed in that coordinate (see
PairPotential.stretched).  The sandwiched resolvent

    K(z) = |V|^(1/2) (-Lap + z)^(-1) |V|^(1/2),   z = kappa^2 >= 0,

has a pointwise-positive kernel for nonpositive central V, so its top
eigenvector is unique, nonnegative, and spherically symmetric.  The s-wave
sector therefore carries the whole resonance-tuning problem: the critical
coupling (top eigenvalue 1 at z = 0), the shallow bound-state curve e(mu)
(top eigenvalue 1/mu at z = -e), the zero-energy solution, and the derived
constants a and R0.

Discretization is a Nystrom rule over the reduced s-wave Green kernel
g(r, r') = exp(-kappa*r_>) * sinh(kappa*r_<) / kappa (Dirichlet at the
origin), written in the cancellation-free form
(exp(-kappa*|r-r'|) - exp(-kappa*(r+r')))/(2*kappa); the kappa -> 0 kernel
is coded as its analytic limit min(r, r').  The default grid is uniform so
that the kernel's diagonal derivative kink (jump exactly -1) always sits on
a node, where a single Euler-Maclaurin diagonal correction -h^2/12 * |V|
removes the kink's quadrature error; all other Euler-Maclaurin terms vanish
because the integrands are even at the origin and the potential is
negligible at R_max.  The resulting matrix converges at O(h^4), stays
symmetric, and keeps every entry nonnegative.  (A plain Gauss-Legendre
product rule is supported for any non-uniform RadialGrid, but its diagonal
kink error converges only at O(n^-2).)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.polynomial.legendre import leggauss

from .core import evaluate_potential


class BracketError(RuntimeError):
    """Bisection could not bracket a root; carries the probed values."""


class ConditioningError(RuntimeError):
    """A resolvent became numerically singular; carries the smallest singular value."""


@dataclass(frozen=True)
class RadialGrid:
    """Quadrature nodes/weights on (0, R_max] for reduced radial functions."""

    nodes: np.ndarray
    weights: np.ndarray
    r_max: float

    def __post_init__(self):
        n, w = self.nodes, self.weights
        if n.size == 0:
            raise ValueError("radial grid must contain at least one node")
        if not (np.all(np.diff(n) > 0) and n[0] > 0 and n[-1] <= self.r_max * (1 + 1e-12)):
            raise ValueError("nodes must be strictly increasing inside (0, r_max]")
        if not np.all(w > 0):
            raise ValueError("weights must be positive")

    @property
    def size(self):
        return self.nodes.size

    @property
    def uniform_spacing(self):
        """Node spacing if the grid is uniform starting at h, else None."""
        d = np.diff(self.nodes)
        if d.size == 0:
            return float(self.nodes[0])
        h = float(self.nodes[0])
        if np.allclose(d, h, rtol=1e-12, atol=0.0):
            return h
        return None


def radial_grid(n_nodes=800, r_max=40.0):
    """Default grid: uniform nodes j*h on (0, R_max], trapezoid weights.

    The endpoint r = 0 is excluded (reduced functions vanish there); its
    trapezoid half-weight drops with it.
    """
    h = r_max / n_nodes
    nodes = h * np.arange(1, n_nodes + 1, dtype=float)
    weights = np.full(n_nodes, h)
    weights[-1] = 0.5 * h
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return RadialGrid(nodes, weights, float(r_max))


def radial_grid_gauss(n_nodes=400, r_max=40.0):
    """Gauss-Legendre nodes mapped to (0, R_max]; exact for degree 2n-1."""
    t, w = leggauss(n_nodes)
    nodes = 0.5 * r_max * (t + 1.0)
    weights = 0.5 * r_max * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return RadialGrid(nodes, weights, float(r_max))


def grid_for_potential(pot, n_nodes=800, r_max_factor=40.0):
    """Default solver grid: R_max = 40 * (largest Gaussian width)."""
    return radial_grid(n_nodes, r_max_factor * pot.max_width)


def _reduced_green(r, rp, kappa):
    # Reduced radial kernel of (-d^2/dr^2 + kappa^2)^(-1) with u(0) = 0.
    if kappa == 0.0:
        return np.minimum(r, rp)
    g = (np.exp(-kappa * np.abs(r - rp)) - np.exp(-kappa * (r + rp))) / (2.0 * kappa)
    # the subtraction can leave negative denormals where both factors underflow
    return np.maximum(g, 0.0)


@dataclass
class BSKernel:
    """Symmetrized Nystrom matrix of the s-wave Birman-Schwinger operator."""

    matrix: np.ndarray
    z: float
    grid: RadialGrid
    pot: object


def bs_matrix(pot, z, grid):
    """Discretize |V|^(1/2) (-Lap + z)^(-1) |V|^(1/2) in the s-wave sector.

    The matrix acts on sqrt(weight)-scaled samples of the reduced radial
    function, so eigenvalues approximate the operator's and eigenvectors are
    quadrature-normalized.  On a uniform grid the Euler-Maclaurin diagonal
    correction for the kernel's derivative kink is applied (see module
    docstring); the diagonal stays positive because g(r, r) > h/12 for every
    node.
    """
    if not (isinstance(z, (int, float)) and math.isfinite(z) and z >= 0):
        raise ValueError(f"sandwich energy z must be finite and >= 0, got {z!r}")
    v = evaluate_potential(pot, grid.nodes)
    if np.any(v > 0):
        raise ValueError("potential must be nonpositive")
    sqv = np.sqrt(-v)
    sw = sqv * np.sqrt(grid.weights)
    g = _reduced_green(grid.nodes[:, None], grid.nodes[None, :], math.sqrt(z))
    mat = sw[:, None] * g * sw[None, :]
    h = grid.uniform_spacing
    if h is not None:
        corr = (h * h / 12.0) * (-v) * (grid.weights / h)
        np.fill_diagonal(mat, np.diagonal(mat) - corr)
    mat = 0.5 * (mat + mat.T)
    return BSKernel(mat, float(z), grid, pot)


def _largest_eig(mat, v0=None):
    """Top eigenvalue of a symmetric matrix via Lanczos with warm start.

    Used in bisection loops where the kernel changes only slightly between
    calls; the previous eigenvector makes each solve converge in a few
    matrix-vector products.  Falls back to a dense solve if Lanczos fails.
    """
    import scipy.sparse.linalg as spla

    n = mat.shape[0]
    if np.abs(mat).max() == 0.0:
        return 0.0, np.ones(n) / math.sqrt(n)
    start = np.ones(n) / math.sqrt(n) if v0 is None else v0
    try:
        vals, vecs = spla.eigsh(mat, k=1, which="LA", v0=start, tol=1e-12)
        return float(vals[0]), vecs[:, 0]
    except spla.ArpackError:
        vals, vecs = scipy.linalg.eigh(mat, subset_by_index=(n - 1, n - 1))
        return float(vals[0]), vecs[:, 0]


def top_eigenpair(kern):
    """Largest eigenvalue and nonnegative eigenvector of a BSKernel.

    The kernel is positivity preserving, so after a global sign fix the top
    eigenvector is nonnegative; entries negative at rounding level are
    clipped to zero.
    """
    mat = kern.matrix
    n = mat.shape[0]
    vals, vecs = scipy.linalg.eigh(mat, subset_by_index=(n - 1, n - 1))
    lam = float(vals[0])
    u = vecs[:, 0]
    if u[np.argmax(np.abs(u))] < 0:
        u = -u
    floor = -1e-12 * max(np.abs(u).max(), 1e-300)
    if u.min() < floor:
        raise RuntimeError(
            f"top eigenvector has significantly negative entries (min {u.min():.3e})"
        )
    u = np.maximum(u, 0.0)
    resid = np.linalg.norm(mat @ u - lam * u)
    if resid > 1e-10 * max(np.linalg.norm(u), 1e-300) * max(1.0, abs(lam)):
        raise RuntimeError(f"eigenpair residual too large: {resid:.3e}")
    return lam, u


@dataclass
class ResonantPair:
    """A pair potential tuned to a zero-energy resonance.

    pot       tuned potential mu_star * V (radial, mass-scaled coordinate)
    coupling  tuning factor mu_star applied to the input potential
    u0        reduced radial zero-energy solution, phi0(x) = u0(r)/(sqrt(4 pi) r),
              quadrature-normalized so int u0^2 dr = 1
    a         (int |mu* V|^(1/2) u0 r dr)^2, the squared weighted L1 norm of
              the zero-energy solution; sets the curvature of the shallow
              binding curve e(mu) ~ -(mu - 1)^2 / a^2 and equals the slope
              -d(eps)/d(kappa) of the top BS eigenvalue at kappa = 0
    r0        sqrt(4 pi) * int |mu* V|^(1/2) u0 dr, the 1/|x|-weighted
              integral of the zero-energy solution
    """

    pot: object
    coupling: float
    u0: np.ndarray
    grid: RadialGrid
    a: float
    r0: float


def tune_resonance(pot, grid):
    """Scale the potential so its zero-energy top BS eigenvalue is exactly 1.

    The BS eigenvalue is linear in a global depth factor, so mu_star is the
    reciprocal of the top eigenvalue at z = 0.
    """
    kern = bs_matrix(pot, 0.0, grid)
    eps, vec = top_eigenpair(kern)
    if eps <= 0.0:
        raise ValueError("potential has zero BS eigenvalue; no resonance achievable")
    mu_star = 1.0 / eps
    tuned = pot.scaled(mu_star)
    u0 = vec / np.sqrt(grid.weights)
    norm = math.sqrt(float(np.sum(grid.weights * u0**2)))
    u0 = u0 / norm
    sqv = np.sqrt(-evaluate_potential(tuned, grid.nodes))
    a = float(np.sum(grid.weights * sqv * u0 * grid.nodes)) ** 2
    f = sqv * u0
    r0 = float(np.sum(grid.weights * f))
    h = grid.uniform_spacing
    if h is not None:
        # trapezoid end correction: the r0 integrand is odd at the origin,
        # f'(0) ~ f(r_1)/r_1, so add +h^2/12 * f'(0)
        r0 += (h * h / 12.0) * f[0] / grid.nodes[0]
    r0 *= math.sqrt(4.0 * math.pi)
    return ResonantPair(pot=tuned, coupling=mu_star, u0=u0, grid=grid, a=a, r0=r0)


def bound_state_energy(pot, coupling, grid, kappa_tol=1e-10):
    """Ground-state energy of -Lap + coupling*V, or None below critical coupling.

    Exploits that the top BS eigenvalue at z = kappa^2 is strictly decreasing
    in kappa: the unique kappa with coupling * eps(kappa) = 1 gives
    e = -kappa^2.  Couplings at or below critical (product <= 1 within
    1e-12) return None: a bound state requires strict strengthening.
    """
    if not (math.isfinite(coupling) and coupling > 0):
        raise ValueError(f"coupling must be positive, got {coupling!r}")

    warm = {"v": None}

    def eps(kappa):
        mat = bs_matrix(pot, kappa * kappa, grid).matrix
        lam, v = _largest_eig(mat, v0=warm["v"])
        warm["v"] = v
        return lam

    if coupling * eps(0.0) <= 1.0 + 1e-12:
        return None

    lo, hi = 0.0, 1.0 / grid.r_max
    f_hi = coupling * eps(hi) - 1.0
    grow = 0
    while f_hi > 0.0:
        lo, hi = hi, 2.0 * hi
        f_hi = coupling * eps(hi) - 1.0
        grow += 1
        if grow > 60:
            raise BracketError(
                f"could not bracket binding momentum: eps*mu-1 = {f_hi:.3e} at kappa = {hi:.3e}"
            )
    while hi - lo > kappa_tol:
        mid = 0.5 * (lo + hi)
        if coupling * eps(mid) - 1.0 > 0.0:
            lo = mid
        else:
            hi = mid
    kappa = 0.5 * (lo + hi)
    return -(kappa * kappa)


@dataclass
class PowerLawFit:
    """Least-squares fit of log|e| against log(mu - 1)."""

    exponent: float
    prefactor: float
    residual: float
    couplings: np.ndarray
    energies: np.ndarray


def klaus_simon_check(pair, mu_values, grid=None):
    """Fit the shallow binding curve of a tuned pair on a coupling grid.

    For a pair at a zero-energy resonance the expected fit is exponent 2 with
    prefactor 1/a^2 (Klaus-Simon behaviour of a weakly bound level).
    """
    grid = grid if grid is not None else pair.grid
    mu = np.asarray(mu_values, dtype=float)
    if mu.size < 6:
        raise ValueError("need at least 6 coupling values")
    if np.any(mu <= 1.0) or np.any(mu > 1.05):
        raise ValueError("couplings must lie in (1, 1.05]")
    energies = []
    for m in mu:
        e = bound_state_energy(pair.pot, m, grid)
        if e is None:
            raise ValueError(f"no bound state at coupling {m!r}")
        energies.append(e)
    energies = np.array(energies)
    x = np.log(mu - 1.0)
    y = np.log(-energies)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return PowerLawFit(
        exponent=float(slope),
        prefactor=float(np.exp(intercept)),
        residual=resid,
        couplings=mu,
        energies=energies,
    )


def fiber_bs_resolvent(pair, z, grid=None):
    """Matrix of |v|^(1/2) (-Lap + v + z)^(-1) |v|^(1/2) for the tuned pair.

    Second-resolvent identity: with K = K(z) the BS matrix of the
    (nonpositive) tuned potential, the sandwiched full resolvent is
    K (1 - K)^(-1); the Neumann series K + K^2 + ... makes the identity
    transparent.  Valid only for z > 0: at the resonance the operator
    diverges like 1/sqrt(z).
    """
    grid = grid if grid is not None else pair.grid
    if not (isinstance(z, (int, float)) and math.isfinite(z) and z > 0):
        raise ValueError(f"z must be strictly positive, got {z!r}")
    kern = bs_matrix(pair.pot, z, grid)
    n = kern.matrix.shape[0]
    gap_matrix = np.eye(n) - kern.matrix
    smallest = float(scipy.linalg.eigh(gap_matrix, eigvals_only=True, subset_by_index=(0, 0))[0])
    if smallest < 1e-13:
        raise ConditioningError(
            f"1 - K(z) numerically singular at z = {z!r}: smallest eigenvalue {smallest:.3e}"
        )
    out = np.linalg.solve(gap_matrix, kern.matrix)
    return 0.5 * (out + out.T)
