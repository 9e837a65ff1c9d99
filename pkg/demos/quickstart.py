"""Train on a synthetic reference class, then classify fresh references and displaced anomalies.

    python demos/quickstart.py
"""

import numpy as np

from _common import quick_model
from fluxmut import PipelineConfig, SynthSpec, evaluate, score_dataset

spec = SynthSpec(displacement=3.0, n_train=8000, n_val=1000, n_test=60, seed=7)
model, data = quick_model(spec)

test = data["test"]
scores = score_dataset(model, test, seed=0, config=PipelineConfig(ref_cluster_size=800, min_cluster_size=500,
                                                                  min_samples=50))
for q in (0.68, 0.95):
    r = evaluate([s.decide(q) for s in scores], test.labels)
    print(f"q={q}: reference acceptance {r.tpr:.2f} +/- {r.tpr_err:.2f}, "
          f"anomaly rejection {r.tnr:.2f} +/- {r.tnr_err:.2f}")

ref = np.array([s.p_out for s, lab in zip(scores, test.labels) if lab == "ref"])
anom = np.array([s.p_out for s, lab in zip(scores, test.labels) if lab == "anom"])
print(f"median P_out: reference {np.median(ref):.3f}, anomalies {np.median(anom):.3f}")
