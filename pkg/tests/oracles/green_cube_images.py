"""Oracle: exact Dirichlet Green function of the cube (-1,1)^3, pole 0.

Method of images: reflections across the faces tile space with point
charges at 2m, m in Z^3, carrying signs (-1)^(m1+m2+m3), so

    G(x, 0) = sum_m (-1)^(m1+m2+m3) / (4 pi |x - 2m|).

The sum is conditionally convergent, so it is evaluated by Ewald summation
over the period-4 lattice with the eight signed basis charges at {0,2}^3:
real-space erfc part plus reciprocal Gaussian part (charge neutral, k = 0
absent).  Correctness checks: the value is independent of the splitting
parameter kappa to ~1e-12, and the x -> 0 limit of 1/(4pi|x|) - G matches
the NaCl Madelung constant divided by 8 pi.

Free-space comparison for reference: G(x,0) = 1/(4pi|x|) - h(x) with
h(0) = 1.7475645946/(8 pi) ~ 0.069533, so the relative deviation from the
fundamental solution is ~22% at |x| = 0.25 and ~45% at |x| = 0.5.  Any
pointwise oracle on this cube must target the image sum, not 1/(4pi|x|).

Run: python3 tests/oracles/green_cube_images.py
"""

import numpy as np
from scipy.special import erfc

MADELUNG_NACL = 1.7475645946331822  # alternating-cubic lattice constant

_BASIS = np.stack(np.meshgrid(*[(0.0, 2.0)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
_CHARGE = (-1.0) ** (_BASIS.sum(axis=1) / 2.0)


def green_cube(x, kappa: float = 0.5, real_range: int = 4, recip_range: int = 5) -> float:
    """Ewald evaluation of the image sum at x (pole at 0, x not a lattice site)."""
    x = np.asarray(x, dtype=float)

    rng = 4.0 * np.arange(-real_range, real_range + 1)
    n = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    sites = (n[:, None, :] + _BASIS[None, :, :]).reshape(-1, 3)
    q = np.tile(_CHARGE, len(n))
    r = np.linalg.norm(x - sites, axis=1)
    real = float(np.sum(q * erfc(kappa * r) / (4.0 * np.pi * r)))

    krng = (np.pi / 2.0) * np.arange(-recip_range, recip_range + 1)
    k = np.stack(np.meshgrid(krng, krng, krng, indexing="ij"), axis=-1).reshape(-1, 3)
    k2 = np.einsum("kd,kd->k", k, k)
    mask = k2 > 1e-12
    k, k2 = k[mask], k2[mask]
    # structure factor times plane wave; everything real by symmetry
    phase = np.einsum("kd,bd->kb", k, x[None, :] - _BASIS)
    sf = np.sum(_CHARGE[None, :] * np.cos(phase), axis=1)
    recip = float(np.sum(np.exp(-k2 / (4.0 * kappa**2)) / k2 * sf) / 64.0)
    return real + recip


def main() -> None:
    # kappa independence pins the splitting bookkeeping
    p = (0.5, 0.0, 0.0)
    va, vb = green_cube(p, kappa=0.4), green_cube(p, kappa=0.65)
    print(f"kappa independence at {p}: |diff| = {abs(va - vb):.3e}")
    assert abs(va - vb) < 1e-12

    # Madelung cross-check: h(0) = Phi(eps) - G(eps) as eps -> 0
    eps = 1e-6
    h0 = 1.0 / (4.0 * np.pi * eps) - green_cube((eps, 0.0, 0.0))
    target = MADELUNG_NACL / (8.0 * np.pi)
    print(f"h(0) image sum      = {h0:.12f}")
    print(f"h(0) Madelung/(8pi) = {target:.12f}")
    assert abs(h0 - target) < 1e-9, "Ewald sum disagrees with Madelung constant"

    probes = {}
    for r in (0.25, 0.3, 0.375, 0.5):
        for e in np.eye(3):
            probes[tuple(r * e)] = None
    for r, d in ((0.3, (1, 1, 1)), (0.45, (1, -1, 1))):
        probes[tuple(r * np.asarray(d) / np.sqrt(3.0))] = None

    print("\nfrozen values (probe, G_cube, free-space, rel dev):")
    for p in probes:
        g = green_cube(p)
        phi = 1.0 / (4.0 * np.pi * np.linalg.norm(p))
        print(f"  ({p[0]:.12g}, {p[1]:.12g}, {p[2]:.12g}): {g:.12f}"
              f"   phi={phi:.6f}  dev={(phi - g) / g:+.3f}")


if __name__ == "__main__":
    main()
