"""Walk through the procedural material collection: evaluate every template,
save its maps, and check one parameter gradient against finite differences.

    python3 demos/material_graphs.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from photoscene import ad
from photoscene.imagefiles import write_png
from photoscene.matgraph import eval_graph, get_template, list_collection, sample_random_params

out = Path(sys.argv[1] if len(sys.argv) > 1 else "/tmp/photoscene_graphs")
out.mkdir(parents=True, exist_ok=True)

for t in list_collection():
    tex = eval_graph(t, sample_random_params(t, 7), 128)
    albedo, normal, rough = tex.arrays()
    write_png(out / f"{t.graph_id}_albedo.png", albedo)
    write_png(out / f"{t.graph_id}_normal.png", normal * 0.5 + 0.5)
    write_png(out / f"{t.graph_id}_roughness.png", rough)
    print(f"{t.graph_id:13s} {t.n_params:2d} params  mean albedo {np.round(albedo.mean(axis=(0, 1)), 3)}"
          f"  mean roughness {rough.mean():.3f}")

# gradient of the mean albedo of the brick template with respect to all parameters
brick = get_template("brick")
theta = brick.midpoint()
value, (g,) = ad.grad(lambda x: ad.mean(eval_graph(brick, x, 64).albedo), theta)
eps = 1e-6
i = int(np.argmax(np.abs(g)))
hi, lo = theta.copy(), theta.copy()
hi[i] += eps
lo[i] -= eps
fd = (eval_graph(brick, hi, 64).albedo.numpy().mean() - eval_graph(brick, lo, 64).albedo.numpy().mean()) / (2 * eps)
print(f"brick: d mean albedo / d theta[{i}] = {g[i]:.6f} (tape), {fd:.6f} (finite difference)")
print("maps written to", out)
