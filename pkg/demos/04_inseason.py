"""How early in the season can the crop be named?

Trains the fused model with and without random truncation of the target
season, then scores both on test data cut at days 165 to 365.

Run: python demos/04_inseason.py [n_parcels]
"""
import sys

from croprot.evaluate import inseason_sweep
from croprot.nn.model import Dims
from croprot.pipeline import compute_features, make_splits
from croprot.synth import SynthConfig, generate
from croprot.train import TrainConfig, train

n = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
dataset = generate(SynthConfig(n_parcels=n, seed=0))
splits = make_splits(dataset, compute_features(dataset))
dims = Dims(V=dataset.V, d_e=16, d_rs=32, d_w=32, d_att=32, d_y=64)

curves = {}
for name, variant, augment in (("crop only", "LSTM_Crop", False), ("fused", "Final", False),
                               ("fused + truncation", "Final", True)):
    config = TrainConfig(variant=variant, dims=dims, batch_size=64, max_epochs=15, patience=3, seed=1,
                         augment=augment)
    params = train(splits.train, splits.dev, config).params
    curves[name] = inseason_sweep(params, splits.test, dataset.taxonomy)

cutoffs = next(iter(curves.values())).cutoffs
print("day  " + "  ".join(f"{name:>18}" for name in curves))
for i, day in enumerate(cutoffs):
    print(f"{day:>3}  " + "  ".join(f"{100 * c.micro_f1[i]:18.1f}" for c in curves.values()))

# Without truncation during training the fused model has only seen complete
# seasons, so zeroed late windows look unfamiliar and early scores drop.
