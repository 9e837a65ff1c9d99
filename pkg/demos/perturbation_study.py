"""Bend every feature of reference objects by a small bounded quadratic and watch P_out move.

The same objects and the same per-object seeds are used in all three runs,
so the generated reference clusters are identical and only the object moves.

    python demos/perturbation_study.py
"""

import numpy as np

from _common import quick_model
from fluxmut import PipelineConfig, SynthSpec, perturb, score_object
from fluxmut.pipeline import object_seed

spec = SynthSpec(n_train=8000, n_val=1000, n_test=80, seed=5)
model, data = quick_model(spec)
train, test = data["train"], data["test"]
lo, hi = train.features.min(axis=0), train.features.max(axis=0)
cfg = PipelineConfig(ref_cluster_size=800, min_cluster_size=500, min_samples=50)
rows = range(80)

for label, sign in (("S=-1", -1.0), ("none", 0.0), ("S=+1", 1.0)):
    x = test.features if sign == 0 else perturb(np.clip(test.features, lo, hi), lo, hi, sign, p=0.3)
    p = [score_object(model, x[i], test.conditions[i], object_seed(0, i), cfg).p_out for i in rows]
    print(f"{label:>5}: mean P_out {np.mean(p):.4f}")
