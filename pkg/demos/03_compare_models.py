"""Train each model variant on the same synthetic split and compare.

Run: python demos/03_compare_models.py [n_parcels]
Takes a few minutes with the default 1500 parcels.
"""
import sys
import time

from croprot.evaluate import evaluate
from croprot.nn.model import VARIANTS, Dims
from croprot.pipeline import compute_features, make_splits
from croprot.synth import SynthConfig, generate
from croprot.train import TrainConfig, predict, train

n = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
dataset = generate(SynthConfig(n_parcels=n, seed=0))
t0 = time.perf_counter()
splits = make_splits(dataset, compute_features(dataset))
print(f"{n} parcels preprocessed in {time.perf_counter() - t0:.0f}s; "
      f"train/dev/test = {len(splits.train)}/{len(splits.dev)}/{len(splits.test)}")

dims = Dims(V=dataset.V, d_e=16, d_rs=32, d_w=32, d_att=32, d_y=64)
print("\nvariant          fine   c12    c10   epochs")
for variant in VARIANTS:
    config = TrainConfig(variant=variant, dims=dims, batch_size=64, max_epochs=15, patience=3, seed=1)
    result = train(splits.train, splits.dev, config)
    probs = predict(result.params, splits.test)
    scores = [100 * evaluate(probs, splits.test.targets, dataset.taxonomy, lvl).micro_f1
              for lvl in ("fine", "c12", "c10")]
    print(f"{variant:<15} " + " ".join(f"{s:5.1f}" for s in scores) + f"   {len(result.log):>3}")

# The crop-only model cannot separate two crops that grow alike when their
# history is ambiguous; the signal-only model cannot tell twins apart at all.
# The fused models combine both and use the regional crop mix on top.
