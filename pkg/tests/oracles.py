"""Independent numerical oracles used by the test suite.

Every routine here deliberately avoids the package's own discretizations:
Numerov shooting on uniform grids for radial eigenvalue problems,
finite-difference Hamiltonians for resolvent checks, plain Monte Carlo for
Gaussian matrix elements, and a finite-difference diagonalization of the
angular-reduced three-body problem.
"""

import math

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal
from scipy.special import kv


def numerov_solution(f, r_max, n):
    """Integrate u'' = f(r) u outward from u(0) = 0 on a uniform grid.

    Returns the grid and the (unnormalized) solution samples.
    """
    h = r_max / n
    r = np.linspace(0.0, r_max, n + 1)
    fr = f(r)
    u = np.empty(n + 1)
    u[0] = 0.0
    u[1] = h
    c = h * h / 12.0
    for k in range(1, n):
        u[k + 1] = (
            2.0 * (1.0 + 5.0 * c * fr[k]) * u[k] - (1.0 - c * fr[k - 1]) * u[k - 1]
        ) / (1.0 - c * fr[k + 1])
    return r, u


def shooting_has_bound_state(pot, coupling, r_max=40.0, n=40000):
    """Zero-energy criterion: past critical coupling the zero-energy solution
    either bends over (asymptotic slope turns negative) or has already
    crossed zero; both are counted so the test stays valid for deep wells."""
    _, u = numerov_solution(lambda r: coupling * pot(r), r_max, n)
    crossed = np.any(np.sign(u[1:-1]) * np.sign(u[2:]) < 0)
    return bool(crossed or (u[-1] - u[-2] < 0.0))


def shooting_critical_coupling(pot, lo=1e-3, hi=64.0, r_max=40.0, n=40000, tol=1e-9):
    """Critical coupling of -u'' + mu*V*u = 0 by bisection on the slope sign."""
    if shooting_has_bound_state(pot, lo, r_max, n) or not shooting_has_bound_state(pot, hi, r_max, n):
        raise ValueError("critical coupling not bracketed")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if shooting_has_bound_state(pot, mid, r_max, n):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def shooting_ground_energy(pot, coupling, r_max=30.0, n=60000, e_lo=None, tol=1e-11):
    """Ground-state energy of -u'' + coupling*V*u = e*u by sign bisection.

    For e below the ground state the outward solution stays positive at
    r_max; above it the (sign-flipped) growing mode dominates, so u(r_max)
    flips sign exponentially sharply at the eigenvalue.
    """
    vmin = float(min(coupling * pot(np.linspace(0, 5, 2001))))
    lo = vmin if e_lo is None else e_lo
    hi = -1e-12

    def endpoint(e):
        _, u = numerov_solution(lambda r: coupling * pot(r) - e, r_max, n)
        return u[-1]

    if endpoint(lo) < 0 or endpoint(hi) > 0:
        raise ValueError("ground state not bracketed")
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if endpoint(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fd_radial_hamiltonian_quadratic_form(pot, z, probe, r_max, n):
    """<s*probe, (H + z)^(-1) s*probe> with H = -d^2/dr^2 + V, s = |V|^(1/2),
    by dense tridiagonal finite differences with Dirichlet ends."""
    h = r_max / (n + 1)
    r = h * np.arange(1, n + 1)
    v = pot(r)
    s = np.sqrt(-v)
    rhs = s * probe(r)
    diag = 2.0 / h**2 + v + z
    off = np.full(n - 1, -1.0 / h**2)
    ab = np.zeros((3, n))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    from scipy.linalg import solve_banded

    g = solve_banded((1, 1), ab, rhs)
    return float(h * np.sum(rhs * g))


def fd_ground_energy_radial(pot, r_max, h):
    """Smallest eigenvalue of -u'' + V u on (0, r_max) with Dirichlet ends."""
    n = int(round(r_max / h)) - 1
    r = h * np.arange(1, n + 1)
    d = 2.0 / h**2 + pot(r)
    e = np.full(n - 1, -1.0 / h**2)
    return float(eigvalsh_tridiagonal(d, e, select="i", select_range=(0, 0))[0])


def mc_gaussian_pair_element(a_mat, b_mat, kind, rng, n_samples=10_000_000, sep=None,
                             width=None, chunk=1_000_000):
    """Monte Carlo estimate of <g_A | O | g_B> / <g_A | g_B> with 3-sigma error.

    kind is "overlap", "kinetic" (O = -Lap_x - Lap_y) or "gauss" (O =
    exp(-|c_x x + c_y y|^2 / width^2) with sep = (c_x, c_y)).  Sampling
    density is the normalized Gaussian exp(-1/2 X^T (A+B) X); the overlap
    case integrates a constant and is exact, kinetic uses the quadratic-form
    identity <g_A|-Lap|g_B> = <X^T (A B) X>, the potential case averages the
    pointwise factor.  Returns (mean, sigma_of_mean).
    """
    c_mat = np.asarray(a_mat) + np.asarray(b_mat)
    cov = np.linalg.inv(c_mat)
    chol = np.linalg.cholesky(cov)
    m = np.asarray(a_mat) @ np.asarray(b_mat)
    total = 0.0
    total_sq = 0.0
    count = 0
    while count < n_samples:
        k = min(chunk, n_samples - count)
        zx = rng.standard_normal((k, 3))
        zy = rng.standard_normal((k, 3))
        x = chol[0, 0] * zx + chol[0, 1] * zy
        y = chol[1, 0] * zx + chol[1, 1] * zy
        if kind == "overlap":
            vals = np.ones(k)
        elif kind == "kinetic":
            vals = (
                m[0, 0] * np.sum(x * x, axis=1)
                + (m[0, 1] + m[1, 0]) * np.sum(x * y, axis=1)
                + m[1, 1] * np.sum(y * y, axis=1)
            )
        elif kind == "gauss":
            cx, cy = sep
            w = cx * x + cy * y
            vals = np.exp(-np.sum(w * w, axis=1) / width**2)
        else:
            raise ValueError(kind)
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        count += k
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0)
    return mean, math.sqrt(var / count)


def free_resolvent_kernel_6d(dist, z):
    """Closed-form kernel of (-Lap_6 + z)^(-1): z*K_2(sqrt(z)*d)/((2 pi)^3 d^2)."""
    d = np.asarray(dist, dtype=float)
    return z * kv(2, math.sqrt(z) * d) / ((2.0 * math.pi) ** 3 * d**2)


def mc_free_resolvent_sandwich(fa, fb, z, scale_a, scale_b, rng,
                               n_samples=2_000_000, chunk=200_000):
    """Monte Carlo estimate of <f_a, (-Lap_6 + z)^(-1) f_b> on R^6.

    f_a, f_b are callables of 6-D points (arrays shaped (k, 6)).  The
    difference vector is drawn from the normalized resolvent kernel itself
    (its total mass is 1/z), sampled radially by inverse CDF; the base point
    from an isotropic Gaussian of the given scale.  Returns (mean, sigma).
    """
    # radial CDF table for the 6-D kernel: density ~ K_2(sqrt(z) d) d^3
    u = np.linspace(1e-6, 60.0 / math.sqrt(z), 40001)
    pdf = free_resolvent_kernel_6d(u, z) * u**5
    cdf = np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(u))
    cdf = np.concatenate([[0.0], cdf])
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    u, cdf = u[keep], cdf[keep]

    total = 0.0
    total_sq = 0.0
    count = 0
    while count < n_samples:
        k = min(chunk, n_samples - count)
        xa = scale_a * rng.standard_normal((k, 6))
        p_a = (2.0 * math.pi * scale_a**2) ** -3 * np.exp(
            -np.sum(xa * xa, axis=1) / (2 * scale_a**2)
        )
        radii = np.interp(rng.random(k), cdf, u)
        direc = rng.standard_normal((k, 6))
        direc /= np.linalg.norm(direc, axis=1)[:, None]
        xb = xa + radii[:, None] * direc
        # q(delta) = z * G6(|delta|): normalized density of the jump
        vals = fa(xa) * fb(xb) / (p_a * z)
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        count += k
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0)
    return mean, math.sqrt(var / count)


def fd_three_body_ground_energy(frame, pots, lam, r_max=10.0, n_rho=70, n_ang=10):
    """Coarse-grid diagonalization of the angular-reduced three-body problem.

    Works on g(rho1, rho2, u) = rho1*rho2*psi in the total-L=0 sector, where
    the kinetic form is |d g/d rho1|^2 + |d g/d rho2|^2 +
    (1/rho1^2 + 1/rho2^2) (1-u^2) |dg/du|^2 and u = cos(x, y).  Radial
    derivatives are central differences with Dirichlet walls, the angular
    operator is conservative flux-form with natural ends (the (1-u^2) factor
    vanishes there).  Deliberately independent of the package's variational
    machinery; accuracy is O(h^2), so use it only on well-bound states.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    h = r_max / n_rho
    rho = h * np.arange(1, n_rho)  # interior points, Dirichlet at 0 and r_max
    nr = rho.size
    du = 2.0 / n_ang
    uc = -1.0 + du * (np.arange(n_ang) + 0.5)  # cell centers
    # 1-D second-difference with Dirichlet ends
    lap = sp.diags(
        [np.full(nr - 1, 1.0), np.full(nr, -2.0), np.full(nr - 1, 1.0)], [-1, 0, 1]
    ) / h**2
    eye_r = sp.identity(nr)
    eye_u = sp.identity(n_ang)
    # angular flux operator: d/du[(1-u^2) d/du] on cell centers, natural BCs
    edges = -1.0 + du * np.arange(1, n_ang)
    flux = (1.0 - edges**2) / du**2
    ang = sp.diags(
        [flux, -np.concatenate([[0], flux]) - np.concatenate([flux, [0]]), flux],
        [-1, 0, 1],
    )
    inv_r2 = sp.diags(1.0 / rho**2)

    kin = (
        -sp.kron(sp.kron(lap, eye_r), eye_u)
        - sp.kron(sp.kron(eye_r, lap), eye_u)
        - sp.kron(sp.kron(inv_r2, eye_r) + sp.kron(eye_r, inv_r2), ang)
    )
    r1g, r2g, ug = np.meshgrid(rho, rho, uc, indexing="ij")
    vtot = np.zeros(r1g.shape)
    for pair, pot, factor in (
        ("12", pots["12"], 1.0),
        ("13", pots["13"], lam),
        ("23", pots["23"], lam),
    ):
        sep = frame.separation_radius(pair, r1g, r2g, ug)
        vtot += factor * pot(sep)
    ham = kin + sp.diags(vtot.ravel())
    val = spla.eigsh(ham.tocsc(), k=1, which="SA", return_eigenvectors=False,
                     maxiter=5000)
    return float(val[0])
