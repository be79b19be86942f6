"""Walk one parcel-season through outlier removal, resampling and smoothing.

Run: python demos/02_smoothing.py
"""
import numpy as np

from croprot.features import season_features
from croprot.prep import GRID_DAYS, apply_outlier_mask, hampel_filter, prep_season, resample_2day
from croprot.synth import SynthConfig, gen_signals

config = SynthConfig(spike_rate=0.08, seed=2)
raw = gen_signals(3, 2019, config, np.random.default_rng(11), parcel_id="demo")
print(f"{len(raw)} raw observations between day {raw.days[0]} and day {raw.days[-1]}")

# Clouds left in the data brighten the red band; the Hampel rule on B4 and
# B8A finds them and the whole observation is dropped.
m4 = hampel_filter(raw.signal("b4"), raw.days)
m8 = hampel_filter(raw.signal("b8a"), raw.days)
print(f"flagged days: {raw.days[m4 | m8].tolist()}")

# Clean samples move to a 2-day grid. Grid points outside the observed span
# get weight zero, so the smoother extrapolates there.
values, weights = resample_2day(apply_outlier_mask(raw, m4, m8))
print(f"grid points with weight: {int((weights[:, 0] > 0).sum())} of {len(GRID_DAYS)}")

smooth = prep_season(raw)
print("smoothing parameter per signal (b4, b8a, lai, fapar):",
      ", ".join(f"{lam:.3g}" for lam in smooth.lambdas))

print("\nday   raw LAI  smoothed LAI")
for d in range(0, 365, 30):
    near = np.argmin(np.abs(raw.days - d))
    print(f"{d:>3}  {raw.values[near, 2]:8.2f}  {smooth.values[d // 2, 2]:12.2f}")

block = season_features(smooth)
print(f"\nfeature block {block.shape}: window means of LAI",
      np.array2string(block[:, 2 * 7], precision=1, max_line_width=120))
