"""Build the default 64-kernel STRF bank and look at what each kernel is tuned to.

Run:  python3 demos/kernel_gallery.py [out_dir]

Writes one PGM image per kernel (rows are frequency, high at the top) and
prints where each kernel's 2-D spectrum actually peaks next to the scale and
rate it was built from.
"""
import sys
from pathlib import Path

from strfsed import strf
from strfsed.verify import peak_matches

out = Path(sys.argv[1] if len(sys.argv) > 1 else "kernel_gallery")
axes = strf.KernelAxes()
params = strf.default_init_params()
bank = strf.build_bank(params, axes)
strf.dump_bank(bank, out)

print(f"{len(bank)} kernels, {axes.n_t} taps x {axes.n_f} bins "
      f"({axes.n_t * axes.time_step_s:.0f} s x {axes.n_f * axes.freq_step_oct:.0f} octaves)")
print(f"resolution: {axes.rate_resolution:.3f} Hz, {axes.scale_resolution:.3f} cyc/oct\n")
print(" dir   scale  rate   peak scale  peak rate")
for i, direction in enumerate(bank.directions):
    p = params[i % len(params)].with_direction(direction)
    peak = strf.modulation_peak(bank.kernels[i], axes.time_step_s, axes.freq_step_oct)
    flag = "" if peak_matches(bank.kernels[i], p, axes) else "  <- off by more than a bin"
    print(f"{direction:>4} {p.scale:7.3f} {p.rate:5.2f} {peak.scale_cyc_per_oct:11.3f} {peak.rate_hz:10.3f}{flag}")

# up and down kernels are mirror images along frequency
n = len(params)
print(f"\nmirror error: {abs(bank.kernels[:n] - bank.kernels[n:, :, ::-1]).max():.2e}")
print(f"images in {out}/")
