"""Inverting maps back to insults with the DeepONet.

Trains the feed-forward DeepONet briefly on a small dataset (dilatation +
distensibility, grayscale), scores it with the relative-L2 harness, and
exports a predicted-vs-true comparison.  Budgets here are demo-sized; the
acceptance configuration uses the full 500-sample dataset and 20k updates.
"""

import tempfile
from pathlib import Path

import numpy as np

from taalab import evaluate, maps, store
from taalab.cli import main, train_deeponet

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

workdir = Path(tempfile.mkdtemp(prefix="taalab_demo_"))
assert main(["generate", "--out", str(workdir), "--profiles", "8",
             "--combos", "5", "--seed", "123", "--workers", "2"]) == 0

train_cfg = dict(variant="dD", format="gray", budget=3000, batch_size=16,
                 learning_rate=1e-3, seed=0, dtype="float32",
                 latent_p=64, branch_hidden=[128, 128], trunk_hidden=[64, 64],
                 trunk_encoding="fourier", pixelwise_norm=True,
                 model_id="demo-dd-gray")
model, pred_path, meta = train_deeponet(workdir, train_cfg)
print(f"trained {meta['model_id']}: {meta['parameter_count']} parameters, "
      f"{meta['wall_seconds']:.0f} s, final train MSE {meta['final_train_loss']:.2e}")

report = evaluate.evaluate_predictions(workdir, pred_path)
print(evaluate.render_report_table([report]))

# side-by-side maps for the first test sample
sid = store.DatasetManifest.load(workdir).test_ids[0]
rec = store.read_sample(store.sample_path(workdir, sid))
_, preds = store.read_predictions(pred_path)
pred_ce, pred_delta = preds[sid]

for kind, true, pred in (("theta_ce", rec.maps["theta_ce"], pred_ce),
                         ("theta_delta", rec.maps["theta_delta"], pred_delta)):
    vr = (0.0, max(float(true.max()), float(pred.max()), 1e-3))
    maps.write_heat_png(maps.FieldMap(np.asarray(true, float), kind),
                        OUT / f"{sid}_{kind}_true.png", vrange=vr)
    maps.write_heat_png(maps.FieldMap(np.asarray(pred, float), kind),
                        OUT / f"{sid}_{kind}_pred.png", vrange=vr)
err = evaluate.abs_error_maps({sid: preds[sid]},
                              {sid: (rec.maps["theta_ce"], rec.maps["theta_delta"])})
for fmap in err[sid]:
    maps.write_heat_png(fmap, OUT / f"{sid}_{fmap.kind}.png")
print("wrote prediction maps to", OUT)
