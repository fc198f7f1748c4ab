"""Independent oracle for the radial obstacle problem on the unit ball.

-div(grad u) with f = 0, zero boundary values, obstacle psi(x) = 1 - 4|x|.
The solution is radial, so the 3d problem reduces to minimizing
int_0^1 r^2 U'(r)^2 dr over U >= 1 - 4r with U(1) = 0 (natural condition
at r = 0).  We discretize with radial P1 elements (exact element
integrals of the r^2 weight) and solve the discrete variational
inequality EXACTLY by scanning the contact index k and checking the KKT
conditions: U = psi on [0, r_k], the annulus system solved directly,
multiplier >= 0 on the contact set, U >= psi off it.

The smooth-fit closed form (harmonic radial piece b(1/r - 1) matched C^1)
gives s* = 1 - sqrt(3)/2 and U(s*) = 2 sqrt(3) - 3; the scan below never
uses it and is compared against it at the end.

Run: python tests/oracles/obstacle_radial.py
"""

import numpy as np
from scipy.linalg import solve_banded

N = 4000
r = np.linspace(0.0, 1.0, N + 1)
dr = 1.0 / N
psi = 1.0 - 4.0 * r

# element stiffness of int r^2 U' V' dr on [r_i, r_{i+1}]
ke = (r[1:] ** 3 - r[:-1] ** 3) / (3.0 * dr * dr)


def annulus_solve(k: int) -> np.ndarray:
    """U on nodes k..N with U_k = psi_k, U_N = 0, stiffness system between."""
    idx = np.arange(k + 1, N)  # free nodes
    n = len(idx)
    diag = ke[idx - 1] + ke[idx]
    lower = -ke[idx[:-1]]
    upper = -ke[idx[:-1]]
    rhs = np.zeros(n)
    rhs[0] += ke[k] * psi[k]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    x = solve_banded((1, 1), ab, rhs)
    U = psi.copy()
    U[idx] = x
    U[N] = 0.0
    return U


def residual(U: np.ndarray) -> np.ndarray:
    """Hat residuals of the full system (the discrete multiplier)."""
    res = np.zeros(N + 1)
    dU = np.diff(U)
    res[:-1] += -ke * dU / 1.0
    res[1:] += ke * dU / 1.0
    return res


best = None
for k in range(1, N - 1):
    U = annulus_solve(k)
    if np.any(U[k + 1 : N] < psi[k + 1 : N] - 1e-13):
        continue
    mu = residual(U)[: k + 1]
    if mu.min() < -1e-10:
        continue
    best = (k, U)
    break

assert best is not None, "no contact index satisfies the KKT conditions"
k, U = best
s_star = r[k]
value = U[k]

closed_s = 1.0 - np.sqrt(3.0) / 2.0
closed_v = 2.0 * np.sqrt(3.0) - 3.0
print(f"contact radius from KKT scan : {s_star:.10f}")
print(f"1 - sqrt(3)/2                : {closed_s:.10f}")
print(f"value at contact radius      : {value:.10f}")
print(f"2 sqrt(3) - 3                : {closed_v:.10f}")
print(f"u(0) (= psi(0))              : {U[0]:.10f}")
assert abs(s_star - closed_s) <= 2.0 * dr
assert abs(value - closed_v) <= 1e-3
