"""Independent reference computations used only by the tests."""

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq


def _shoot_power(lam, alpha, x0=1e-10):
    """u(1) for -(x^alpha u')' = lam u with the regular start at 0, in the variables (u, p = a u')."""
    if alpha >= 1:
        # flux-free start: u ~ 1, p ~ -lam x
        u0, p0 = 1.0, -lam * x0
    else:
        # Dirichlet start: u ~ x^{1-alpha}/(1-alpha), p ~ 1
        u0, p0 = x0 ** (1 - alpha) / (1 - alpha), 1.0

    # logarithmic variable s = ln x keeps the start at x0 cheap
    def rhs(s, y):
        x = np.exp(s)
        return [y[1] * x ** (1 - alpha), -lam * x * y[0]]

    sol = solve_ivp(rhs, (np.log(x0), 0.0), [u0, p0], method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[0, -1]


def shooting_eigenvalues(alpha, count, lam_step=0.25):
    """Eigenvalues of -(x^alpha u')' = lam u, u(1) = 0, located by sign changes of u(1) then refined."""
    found = []
    lo = lam_step
    f_lo = _shoot_power(lo, alpha)
    while len(found) < count:
        hi = lo + lam_step
        f_hi = _shoot_power(hi, alpha)
        if f_lo * f_hi < 0:
            found.append(brentq(lambda l: _shoot_power(l, alpha), lo, hi, xtol=1e-13, rtol=1e-13))
        lo, f_lo = hi, f_hi
    return np.array(found)


def hand_p1_stiffness(nodes, a):
    """Full P1 stiffness with the midpoint rule, written element by element."""
    n = len(nodes)
    K = np.zeros((n, n))
    for e in range(n - 1):
        h = nodes[e + 1] - nodes[e]
        c = a(0.5 * (nodes[e] + nodes[e + 1])) / h
        K[e, e] += c
        K[e + 1, e + 1] += c
        K[e, e + 1] -= c
        K[e + 1, e] -= c
    return K
