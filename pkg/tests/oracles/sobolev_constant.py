"""Oracle: sharp constant of ||u||_{L^6(R^3)} <= S ||grad u||_{L^2(R^3)}.

The extremal profile is u(x) = (1 + |x|^2)^{-1/2}.  Radial quadrature gives
||u||_6^6 = pi^2/4 and ||grad u||_2^2 = 3 pi^2/4, so

    S = (pi^2/4)^{1/6} / (3 pi^2 / 4)^{1/2}

Zero-trace P1 functions on any mesh are admissible H^1 functions, so every
discrete Rayleigh quotient is bounded by S; randomized estimates must stay
below it and near it from below for good trial fields.
"""

import numpy as np
from scipy.integrate import quad


def main() -> None:
    u6 = quad(lambda r: 4 * np.pi * r**2 * (1 + r**2) ** -3, 0, np.inf, limit=200)[0]
    g2 = quad(lambda r: 4 * np.pi * r**4 * (1 + r**2) ** -3, 0, np.inf, limit=200)[0]
    s = u6 ** (1 / 6) / np.sqrt(g2)
    print("||u||_6^6 =", u6, "(pi^2/4 =", np.pi**2 / 4, ")")
    print("||grad u||_2^2 =", g2, "(3 pi^2/4 =", 3 * np.pi**2 / 4, ")")
    print("S =", s)


if __name__ == "__main__":
    main()
