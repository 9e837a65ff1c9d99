"""How the quantile cut trades reference acceptance for anomaly rejection.

Each object is clustered once; every quantile is read off the stored
reference scores, so the sweep costs nothing extra.

    python demos/quantile_sweep.py
"""

from _common import quick_model
from fluxmut import PipelineConfig, SynthSpec, score_dataset
from fluxmut.pipeline import format_auc, roc_from_scores

spec = SynthSpec(decorrelate=True, n_train=8000, n_val=1000, n_test=50, seed=3)
model, data = quick_model(spec)
test = data["test"]
scores = score_dataset(model, test, seed=0, config=PipelineConfig(ref_cluster_size=800, min_cluster_size=500,
                                                                  min_samples=50))
curve = roc_from_scores(scores, test.labels)
print(" q     TPR    FPR")
for q, tpr, fpr in zip(curve.q[::6], curve.tpr[::6], curve.fpr[::6]):
    print(f"{q:.2f}  {tpr:.2f}   {fpr:.2f}")
print(format_auc(curve))
