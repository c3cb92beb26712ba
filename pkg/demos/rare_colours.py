"""Why the decoder loss matters for rare colours.

Fields are 90% a dull common colour and 10% a saturated rare one.  A
decoder trained on plain squared error can shrink the rare patch towards
the common colour and still score well; the rarity-weighted decoder loss
makes that costly.  Held-out weighted MAE is printed per seed.

    python demos/rare_colours.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from divcolor.colorspace import build_histogram, lab_to_rgb
from divcolor.imageio import write_image
from divcolor.metrics import mae, weighted_mae
from divcolor.pca import fit
from divcolor.synthetic import imbalanced_fields
from divcolor.vae import VaeConfig, decode, encode, train_vae

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

L, fields = imbalanced_fields(140, 16, np.random.default_rng(123))
train, held = fields[:100], fields[100:]
basis, hist = fit(train, 20), build_histogram(train)
config = VaeConfig(channel_widths=(8, 16, 32, 64), pca_k=20)

print("seed  weighted MAE (L_dec / L2)   plain MAE (L_dec / L2)")
shown = {}
for seed in range(5):
    row = {}
    for objective in ("dec", "l2"):
        run = train_vae(train, config, epochs=15, seed=seed, basis=basis, hist=hist, objective=objective)
        mu, _ = encode(run.model, held)
        recon = decode(run.model, mu)
        row[objective] = (np.mean([weighted_mae(r, t, hist) for r, t in zip(recon, held)]),
                          np.mean([mae(r, t) for r, t in zip(recon, held)]))
        if seed == 0:
            shown[objective] = recon[0]
    print(f"{seed:4d}  {row['dec'][0]:.3f} / {row['l2'][0]:.3f}            {row['dec'][1]:.3f} / {row['l2'][1]:.3f}")

lightness = L[100]
panels = [lab_to_rgb(lightness, held[0]), lab_to_rgb(lightness, shown["dec"]), lab_to_rgb(lightness, shown["l2"])]
strip = np.concatenate(panels, axis=1)
write_image(out / "rare_colours.png", strip.repeat(4, axis=0).repeat(4, axis=1))
print(f"truth | L_dec | L2 for one held-out field -> {out / 'rare_colours.png'}")
