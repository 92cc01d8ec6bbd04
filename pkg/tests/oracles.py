"""Independent closed-form references used by the tests."""
import math

import numpy as np
from scipy import special


def radial_disk_source(D, mu, a=1.0, R=3.0):
    """Exact solution for q = 1 on |x| < a in B_R, constant media, u + 2D u' = 0 at R.

    Returns a callable u(r).  Inside: 1/mu + A I0(kr); outside: B I0(kr) + C K0(kr).
    """
    k = math.sqrt(mu / D)
    I0, I1, K0, K1 = special.i0, special.i1, special.k0, special.k1
    M = np.array([
        [I0(k * a), -I0(k * a), -K0(k * a)],
        [I1(k * a), -I1(k * a), K1(k * a)],
        [0.0, I0(k * R) + 2 * D * k * I1(k * R), K0(k * R) - 2 * D * k * K1(k * R)],
    ])
    rhs = np.array([-1.0 / mu, 0.0, 0.0])
    A, B, C = np.linalg.solve(M, rhs)

    def u(r):
        r = np.asarray(r, float)
        rr = np.maximum(r, 1e-300)
        return np.where(r < a, 1.0 / mu + A * I0(k * r), B * I0(k * rr) + C * K0(k * rr))

    return u


def radial_layered(breaks, D, mu, q, R):
    """Radial solution for piecewise-constant media and source in 2D.

    Layer i spans ``breaks[i-1] < r < breaks[i]`` (``breaks`` ends below R,
    the last layer reaches R) with coefficients ``D[i]``, ``mu[i] > 0`` and
    source ``q[i]``.  In each layer ``u = q/mu + A I0(k r) + B K0(k r)``;
    the innermost layer has ``B = 0``.  ``u`` and ``D u'`` are continuous
    and ``u + 2 D u' = 0`` at ``R``.
    """
    edges = list(breaks) + [R]
    n = len(edges)
    k = [math.sqrt(m / d) for m, d in zip(mu, D)]
    I0, I1, K0, K1 = special.i0, special.i1, special.k0, special.k1
    # unknowns: A_0, then (A_i, B_i) for i >= 1
    nun = 1 + 2 * (n - 1)

    def col(i):
        return (0, None) if i == 0 else (1 + 2 * (i - 1), 2 + 2 * (i - 1))

    def vals(i, r):
        a, b = col(i)
        row_u = np.zeros(nun)
        row_f = np.zeros(nun)
        row_u[a] = I0(k[i] * r)
        row_f[a] = D[i] * k[i] * I1(k[i] * r)
        if b is not None:
            row_u[b] = K0(k[i] * r)
            row_f[b] = -D[i] * k[i] * K1(k[i] * r)
        return row_u, row_f, q[i] / mu[i]

    Mx = np.zeros((nun, nun))
    rhs = np.zeros(nun)
    row = 0
    for i in range(n - 1):
        r = edges[i]
        ui, fi, pi = vals(i, r)
        uo, fo, po = vals(i + 1, r)
        Mx[row] = ui - uo
        rhs[row] = po - pi
        Mx[row + 1] = fi - fo
        row += 2
    u, f, p = vals(n - 1, R)
    Mx[row] = u + 2 * f
    rhs[row] = -p
    coef = np.linalg.solve(Mx, rhs)

    def sol(r):
        r = np.atleast_1d(np.asarray(r, float))
        out = np.empty_like(r)
        lo = 0.0
        for i, hi in enumerate(edges):
            m = (r >= lo) & (r <= hi) if i == n - 1 else (r >= lo) & (r < hi)
            a, b = col(i)
            rr = np.maximum(r[m], 1e-300)
            v = q[i] / mu[i] + coef[a] * I0(k[i] * rr)
            if b is not None:
                v = v + coef[b] * K0(k[i] * rr)
            out[m] = v
            lo = hi
        return out

    return sol


def p1_mass_triangle(area):
    """Exact P1 mass matrix of one triangle."""
    return area / 12.0 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]], float)


def sector_integral_2d(tau, theta_c):
    """int over the infinite sector |arg x| < theta_c of exp(-tau (e1 + i e2) . x).

    In polar form the integrand is exp(-tau r e^{i t}), and
    int_0^inf exp(-tau r e^{i t}) r dr = 1 / (tau^2 e^{2 i t}), so the
    value is tau^-2 int_{-theta_c}^{theta_c} e^{-2 i t} dt = sin(2 theta_c) / tau^2.
    """
    return math.sin(2 * theta_c) / tau ** 2


def scalar_lm_intensity(g, data, phi0, beta, i0, max_iter, stop_tol):
    """Scheduled LM on a single intensity with forward map ``phi -> phi g``.

    Each step is the dense solve of ``(g^T g + lam) dphi = g^T (data - phi g)``.
    """
    g = np.asarray(g, float)
    data = np.asarray(data, float)
    phi = float(phi0)
    for i in range(max_iter):
        lam = 1.0 / (1.0 + math.exp(beta * (i + i0)))
        A = np.array([[g @ g + lam]])
        b = np.array([g @ (data - phi * g)])
        step = float(np.linalg.solve(A, b)[0])
        phi += step
        if abs(step) <= stop_tol:
            break
    return phi


def disk_boundary_data(D, mu, R, weights, points, n_max=40, thetas=None):
    """Boundary measurement g = u/2 (g- = 0) of a quadrature-sampled source.

    Fourier-Bessel series of the Robin Green's function in a homogeneous
    disk: u(R, t) = 1/(pi R) sum_n I_n(k rho) e^{in(t - phi)} / (I_n(kR) + 2Dk I_n'(kR))
    per unit point source at (rho, phi).
    """
    k = math.sqrt(mu / D)
    pts = np.asarray(points, float)
    rho = np.hypot(pts[:, 0], pts[:, 1])
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    t = np.asarray(thetas, float)
    u = np.zeros_like(t)
    for n in range(0, n_max + 1):
        den = special.iv(n, k * R) + 2 * D * k * special.ivp(n, k * R)
        a = special.iv(n, k * rho) * np.asarray(weights)
        c, s = (a * np.cos(n * phi)).sum(), (a * np.sin(n * phi)).sum()
        term = (c * np.cos(n * t) + s * np.sin(n * t)) / den
        u += term if n == 0 else 2 * term
    return u / (math.pi * R) / 2


def gauss_square(side, n=64):
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = x * side / 2, w * side / 2
    X, Y = np.meshgrid(x, x)
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(w, w).ravel()


def gauss_disk(radius, n=64):
    x, w = np.polynomial.legendre.leggauss(n)
    r, wr = (x + 1) * radius / 2, w * radius / 2
    t = np.arange(2 * n) * np.pi / n
    Rr, T = np.meshgrid(r, t)
    W = np.outer(np.full(t.size, np.pi / n), wr * r)
    return np.column_stack([(Rr * np.cos(T)).ravel(), (Rr * np.sin(T)).ravel()]), W.ravel()
