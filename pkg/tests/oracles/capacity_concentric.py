"""Oracle for the concentric-ball condenser capacity.

Independent of the package: the capacitary potential of (B_r, B_R) is
radial, so the Dirichlet minimization reduces to the 1D problem

    minimize 4*pi * int_r^R w'(t)^2 t^2 dt,   w(r) = 1, w(R) = 0,

whose Euler-Lagrange equation (t^2 w')' = 0 gives w = (1/t - 1/R)/(1/r - 1/R)
and energy 4*pi/(1/r - 1/R).  We solve the ODE numerically with solve_bvp,
integrate the energy with quad on the numeric solution, and check the closed
form.  The frozen value for r = 1/4, R = 1 is 4*pi/3.

Run: python3 tests/oracles/capacity_concentric.py
"""

import numpy as np
from scipy.integrate import quad, solve_bvp

R_IN = 0.25
R_OUT = 1.0


def _ode(t, y):
    # y = (w, t^2 w'); conserved flux makes the system linear
    return np.vstack([y[1] / t**2, np.zeros_like(t)])


def _bc(ya, yb):
    return np.array([ya[0] - 1.0, yb[0]])


def main():
    t = np.linspace(R_IN, R_OUT, 200)
    y0 = np.vstack([1.0 - (t - R_IN) / (R_OUT - R_IN), np.full_like(t, -0.3)])
    sol = solve_bvp(_ode, _bc, t, y0, tol=1e-9, max_nodes=200_000)
    assert sol.success, sol.message

    def integrand(t):
        w, flux = sol.sol(t)
        return 4.0 * np.pi * (flux / t**2) ** 2 * t**2

    energy, _ = quad(integrand, R_IN, R_OUT, limit=200)
    closed = 4.0 * np.pi / (1.0 / R_IN - 1.0 / R_OUT)
    print(f"numeric energy   {energy:.10f}")
    print(f"closed form      {closed:.10f}  (= 4*pi/3 = {4*np.pi/3:.10f})")
    assert abs(energy - closed) < 1e-7
    assert abs(closed - 4.0 * np.pi / 3.0) < 1e-14


if __name__ == "__main__":
    main()
