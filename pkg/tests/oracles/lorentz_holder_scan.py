"""Measure the Holder constant in the Lorentz scale on random simple functions.

Scans ||fg||_{2,4/3} / (||f||_{3,2} ||g||_{6,4}) over random nonnegative
piecewise-constant pairs on a coarse mesh and prints the observed maximum.
The frozen bound in test_function_spaces.py is this maximum with headroom.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))

from driftlab.function_spaces import SampledFunction, lorentz_norm
from driftlab.mesh import build_mesh


def main():
    m = build_mesh(((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), 0.5)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(3000):
        # mix uniform fields with sparse spiky ones to stress both tails
        if k % 3 == 2:
            f_vals = np.where(rng.random(m.n_elements) < 0.1, rng.uniform(5, 50), 0.0)
            g_vals = np.where(rng.random(m.n_elements) < 0.1, rng.uniform(5, 50), 0.0)
        else:
            f_vals = rng.uniform(0.0, 4.0, m.n_elements)
            g_vals = rng.uniform(0.0, 4.0, m.n_elements)
        f = SampledFunction(m, f_vals)
        g = SampledFunction(m, g_vals)
        fg = SampledFunction(m, f_vals * g_vals)
        denom = lorentz_norm(f, 3.0, 2.0).value * lorentz_norm(g, 6.0, 4.0).value
        if denom == 0:
            continue
        worst = max(worst, lorentz_norm(fg, 2.0, 4.0 / 3.0).value / denom)
    print(f"max ratio over 3000 pairs: {worst:.6f}")


if __name__ == "__main__":
    main()
