"""Build a small synthetic region and look at what each modality carries.

Run: python demos/01_synthetic_data.py [out_dir]
"""
import sys

import numpy as np

from croprot.synth import SynthConfig, crop_phenology, gen_dataset, generate, transition_matrices

config = SynthConfig(n_parcels=400, seed=0)
dataset = generate(config)
print(f"{len(dataset.parcels)} parcels, {config.years} seasons, {dataset.V} crops, {config.regions} regions")

# Rotations: one transition matrix per region. Crops k and k+5 share a
# growth curve, and the matrix rewards staying on the same side of that pair.
P = transition_matrices(config)
print("\nregion 0 transition matrix (rows: previous crop, columns: next crop)")
print(np.array2string(P[0], precision=2, suppress_small=True, max_line_width=120))

# Phenology: five distinct double-logistic profiles for ten crops.
print("\ncrop  green-up  senescence  amplitude")
for k, ph in enumerate(crop_phenology(config)):
    print(f"{k:>4}  {ph.sos:8.0f}  {ph.eos:10.0f}  {ph.amp:9.2f}")

# Observations: irregular dates with cloud gaps and occasional spikes.
pid = dataset.parcel_ids[0]
season = max(dataset.rs[pid])
raw = dataset.rs[pid][season]
print(f"\n{pid}, season {season}: crop {dataset.crops[pid][season]}, {len(raw)} observations")
print("first five rows (day, b4, b8a, lai, fapar):")
for d, v in zip(raw.days[:5], raw.values[:5]):
    print(f"  {d:>3}  " + "  ".join(f"{x:.3f}" for x in v))

if len(sys.argv) > 1:
    for name, path in gen_dataset(config, sys.argv[1]).items():
        print(f"wrote {name}: {path}")
