"""Independent oracles for the level-band splitting tests.

Closed form for u = x1 on the unit cube [0,1]^3 with constant h = H and
p = q = 3: the band functional of {k < x1 <= 1} is

    int_0^H s^3 (1 - k)^{3/3} ds/s = H^3 (1 - k)/3,

so a = H/9^{1/3} (budget a^3 = H^3/9) stops at volume 1/3 per band:
k1 = 2/3, k2 = 1/3, kappa = 3.

The discrete oracle re-derives the stopped levels by a linear scan over the
sorted barycenter classes (no bisection), accumulating volume one class at
a time, and evaluates the functional straight from its definition by
Riemann integration of s^{q-1} d(s)^{q/p} over an s-grid, independently of
any breakpoint formula.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))

from driftlab.mesh import FeFunction, build_mesh, interpolate  # noqa: E402

H = 2.0
UNIT = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])


def functional_from_definition(values_h, vols, q, p, s_grid):
    """int s^q d(s)^{q/p} ds/s by midpoint Riemann sums, d by counting."""
    mids = 0.5 * (s_grid[1:] + s_grid[:-1])
    ds = np.diff(s_grid)
    d = np.array([vols[values_h > s].sum() for s in mids])
    return float(np.sum(mids ** (q - 1.0) * d ** (q / p) * ds))


def linear_scan_levels(mesh, budget, Hval):
    """Walk the descending |u| classes, closing a band when the accumulated
    functional (= H^q vol/3 for constant h, q = 3) reaches the budget."""
    u = interpolate(mesh, lambda x: x[:, 0])
    ubar = np.abs(u.element_means())
    vols = mesh.volumes
    order = np.argsort(-ubar, kind="stable")
    av, w = ubar[order], vols[order]
    starts = np.flatnonzero(np.r_[True, av[1:] != av[:-1]])
    classes = av[starts]
    class_vol = np.add.reduceat(w, starts)
    levels = []
    acc = 0.0
    for j in range(classes.size):
        acc += class_vol[j] * Hval ** 3 / 3.0
        if acc >= budget and j + 1 < classes.size:
            levels.append(float(classes[j + 1]))
            acc = 0.0
    return levels, len(levels) + 1


def main():
    a = H / 9.0 ** (1.0 / 3.0)
    budget = a ** 3
    print(f"continuum: a = {a!r}, budget a^3 = {budget!r}")
    print("continuum levels: k1 = 2/3, k2 = 1/3, kappa = 3")

    mesh = build_mesh(UNIT, 1.0 / 16.0)
    levels, kappa = linear_scan_levels(mesh, budget, H)
    print(f"discrete scan at h = 1/16: levels = {levels}, kappa = {kappa}")
    assert kappa == 3
    assert abs(levels[0] - 2.0 / 3.0) <= 2.0 / 16.0
    assert abs(levels[1] - 1.0 / 3.0) <= 2.0 / 16.0

    # definition-level check of the closed form on the band {k < x1 <= 1}
    u = interpolate(mesh, lambda x: x[:, 0])
    ubar = np.abs(u.element_means())
    for k in (0.25, 0.5, 0.75):
        mask = ubar > k
        hv = np.full(mesh.n_elements, H)[mask]
        direct = functional_from_definition(hv, mesh.volumes[mask], 3.0, 3.0,
                                            np.linspace(0.0, H * 1.0001, 20001))
        vol = mesh.volumes[mask].sum()
        closed = H ** 3 * vol / 3.0
        print(f"k = {k}: definition {direct:.8f} closed-form {closed:.8f} "
              f"band volume {vol:.6f} (continuum {1 - k:.6f})")
        assert abs(direct - closed) <= 2e-4 * closed
        assert abs(vol - (1.0 - k)) <= 1.0 / 16.0


if __name__ == "__main__":
    main()
