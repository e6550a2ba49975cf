"""Modulation transfer function of a single STRF kernel.

Run:  python3 demos/ripple_tuning.py [scale_cyc_per_oct] [rate_hz]

Sweeps moving ripples over a grid of (scale, rate) in both directions, filters
each through the kernel and prints the mean output energy as a text heat map.
The brightest cell should sit at the kernel's own scale and rate, on the
side matching its direction.
"""
import sys

import numpy as np

from strfsed import strf

scale = float(sys.argv[1]) if len(sys.argv) > 1 else 1.0
rate = float(sys.argv[2]) if len(sys.argv) > 2 else 1.0

bank = strf.build_bank([strf.ScaleRateParam.from_physical(scale, rate)])
up_kernel = bank.kernels[:1]
test_scales = np.geomspace(0.25, 8, 11)
test_rates = np.array([0.3, 0.5, 0.8, 1.2, 1.6, 2.0, 2.4])

shades = " .:-=+*#%@"
grids = {}
for direction in (strf.UP, strf.DOWN):
    grid = np.zeros((len(test_scales), len(test_rates)))
    for i, s in enumerate(test_scales):
        for j, r in enumerate(test_rates):
            stim = strf.ripple_stimulus(r, s, direction, n_frames=150, n_bins=64)
            # drop the DC pedestal so only the modulation drives the response
            grid[i, j] = np.mean(strf.correlate_bank(stim.values[None] - 1.0, up_kernel) ** 2)
    grids[direction] = grid

top = max(g.max() for g in grids.values())      # one shading scale for both maps
for direction, grid in grids.items():
    print(f"\n{direction} ripples through an up kernel ({scale:g} cyc/oct, {rate:g} Hz)")
    print("   scale | " + " ".join(f"{r:4.1f}" for r in test_rates) + "  Hz")
    for i in reversed(range(len(test_scales))):
        cells = "".join(f"  {shades[min(9, int(9 * v / top))]}  " for v in grid[i])
        print(f"  {test_scales[i]:6.2f} |{cells}")
    print(f"  peak energy {grid.max():.3g}")

print(f"\ndirection selectivity (up/down peak energy): {grids[strf.UP].max() / grids[strf.DOWN].max():.1f}x")
