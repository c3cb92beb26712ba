"""One grey scene, two equally plausible colourings.

A VAE learns embeddings for the colour fields, then an MDN with two
components is fitted on grey inputs that are indistinguishable but carry
different targets.  Each component should settle on one colouring, and the
two top-weighted means decode to visibly different fields.  A single
Gaussian (M=1) can only return one averaged answer.

    python demos/ambiguous_colours.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from divcolor.colorspace import grey_to_rgb, lab_to_rgb
from divcolor.imageio import write_image
from divcolor.mdn import MdnConfig, normalise_lightness, predict, sample_topk, train_mdn
from divcolor.metrics import diversity_variance
from divcolor.synthetic import ambiguous_scene, smooth_fields
from divcolor.vae import VaeConfig, decode, encode, train_vae

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(0)
L, colourings = ambiguous_scene(16, rng)
_, background = smooth_fields(100, 16, rng)

print("training the colour-field VAE ...")
run = train_vae(np.concatenate([background, colourings]), VaeConfig(channel_widths=(8, 16, 32, 64)),
                epochs=30, seed=0)
targets, _ = encode(run.model, colourings)
print(f"the two colourings sit {np.linalg.norm(targets[0] - targets[1]):.2f} apart in embedding space")

pair = normalise_lightness(L)[None] + 1e-4 * rng.standard_normal((2, 16, 16))
idx = np.arange(64) % 2

results = {}
for m in (1, 2):
    net, _ = train_mdn(pair[idx], targets[idx], MdnConfig(components=m), steps=500, seed=0)
    params = predict(net, pair).item(0)
    fields = decode(run.model, np.array(sample_topk(params, k=m)))
    results[m] = fields
    print(f"M={m}: pi={np.round(params.pi.data, 3)}  diversity variance={diversity_variance(fields):.4f}")
    for mean in params.mu.data:
        print(f"  mean -> nearest colouring at distance {np.linalg.norm(targets - mean, axis=1).min():.4f}")

panels = [grey_to_rgb(L)] + [lab_to_rgb(L, c) for c in colourings]
panels += [lab_to_rgb(L, f) for f in results[2]] + [lab_to_rgb(L, results[1][0])]
write_image(out / "ambiguous_colours.png", np.concatenate(panels, axis=1))
print(f"grey | truth A | truth B | MDN mode 1 | MDN mode 2 | M=1 -> {out / 'ambiguous_colours.png'}")
