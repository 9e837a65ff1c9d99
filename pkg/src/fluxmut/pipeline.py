"""Per-object inference against a generated reference cluster, and evaluation.

For one object: augment it with the autoencoder, draw ``ref_cluster_size``
latents from the KDE bin of its conditions, push them through the flow at
the object's conditions, normalise cluster and object together (statistics
from the generated points only), build one HDBSCAN hierarchy that includes
the object, and compare the object's GLOSH score with the nearest-rank
``q``-quantile of the generated points' scores.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cae import CaeModel
from .clustering import cluster_and_score, normalize, quantile_threshold
from .data import Dataset
from .errors import ConfigurationError, DimensionError, FluxMutError
from .flow import FlowModel
from .kde import BinnedKde

logger = logging.getLogger(__name__)

ROC_QUANTILES = tuple(np.round(np.arange(1, 50) * 0.02, 2))
SPACES = ("augmented", "features")


@dataclass
class PipelineConfig:
    ref_cluster_size: int = 1500
    min_cluster_size: int = 1000
    min_samples: int = 100
    normalization: str = "standard"
    space: str = "augmented"


@dataclass
class FluxMutModel:
    """The three trained stages; checked for mutual consistency on creation."""

    cae: CaeModel
    flow: FlowModel
    kde: BinnedKde

    def __post_init__(self):
        n, l = self.cae.n_features, self.cae.n_conditions
        if self.flow.dim != 2 * n or self.flow.cond_dim != l:
            raise DimensionError(
                f"flow ({self.flow.dim} dims, {self.flow.cond_dim} conditions) does not match "
                f"autoencoder ({n} features, {l} conditions)"
            )
        if self.kde.grid.n_axes != l or self.kde.dim != 2 * n:
            raise DimensionError("KDE grid or latent dimension does not match the autoencoder")


@dataclass
class ObjectScore:
    """Everything needed to decide at any quantile without re-clustering."""

    object_id: str
    p_out: float
    reference_scores: np.ndarray = field(repr=False)
    kde_fallback: bool = False
    cluster_fallback: bool = False

    def threshold(self, q: float) -> float:
        return quantile_threshold(self.reference_scores, q)

    def decide(self, q: float) -> "Decision":
        t = self.threshold(q)
        return Decision(self.object_id, self.p_out, t, q,
                        "outlier" if self.p_out > t else "inlier", self.kde_fallback)


@dataclass
class Decision:
    object_id: str
    p_out: float
    threshold: float
    q: float
    verdict: str
    fallback: bool = False

    @property
    def accepted(self) -> bool:
        return self.verdict == "inlier"


_warned: set[str] = set()


def _warn_once(key: str, msg: str, *args) -> None:
    if key not in _warned:
        _warned.add(key)
        logger.warning(msg, *args)


def object_seed(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based stream: object ``index`` always gets the same generator."""
    return np.random.default_rng([int(master_seed), int(index)])


def generate_reference(model: FluxMutModel, k, m: int, rng) -> tuple[np.ndarray, bool]:
    """``m`` generated augmented vectors at raw conditions ``k``."""
    k = np.asarray(k, dtype=np.float64).ravel()
    z, fallback = model.kde.draw(k, m, rng)
    ks = model.cae.scale_conditions(k[None, :], warn=False)
    return model.flow.sample(z, ks), fallback


def score_against_reference(obj_aug, reference, config: PipelineConfig) -> tuple[float, np.ndarray, bool]:
    """Cluster reference points plus the object once; return (object score, reference scores, fallback)."""
    reference = np.atleast_2d(reference)
    pts = np.vstack([reference, np.atleast_2d(obj_aug)])
    if config.space == "features":
        pts = pts[:, : pts.shape[1] // 2]
    elif config.space != "augmented":
        raise ValueError(f"space must be one of {SPACES}")
    m = len(reference)
    if m < 2 * config.min_samples:
        raise ConfigurationError(
            f"reference cluster of {m} points needs at least 2*min_samples={2 * config.min_samples}")
    mcs = config.min_cluster_size
    if m < mcs:
        _warn_once("relaxed", "reference cluster (%d) smaller than min_cluster_size=%d; using %d",
                   m, mcs, m)
        mcs = m
    normed = normalize(pts, config.normalization, fit_rows=slice(0, m))
    res = cluster_and_score(normed, config.min_samples, mcs)
    return float(res.scores[-1]), res.scores[:-1], res.fallback


def score_object(model: FluxMutModel, x, k, rng, config: PipelineConfig | None = None,
                 object_id: str = "0") -> ObjectScore:
    config = config or PipelineConfig()
    aug = model.cae.augment(np.atleast_2d(x), np.atleast_2d(k))
    ref, kde_fb = generate_reference(model, k, config.ref_cluster_size, rng)
    p, ref_scores, cl_fb = score_against_reference(aug, ref, config)
    return ObjectScore(str(object_id), p, ref_scores, kde_fb, cl_fb)


def infer(record, model: FluxMutModel, q: float = 0.95, seed: int = 0,
          config: PipelineConfig | None = None, index: int = 0) -> Decision:
    """Decision for a single :class:`~fluxmut.cae.FeatureRecord`."""
    s = score_object(model, record.x, record.k, object_seed(seed, index), config, str(index))
    return s.decide(q)


def _score_task(args):
    model, x, k, seed, index, config, oid = args
    return score_object(model, x, k, object_seed(seed, index), config, oid)


def score_dataset(model: FluxMutModel, data: Dataset, seed: int = 0, config: PipelineConfig | None = None,
                  workers: int = 1) -> list[ObjectScore]:
    """Score every row; object ``i`` always uses stream ``(seed, i)``, so worker count does not matter."""
    config = config or PipelineConfig()
    tasks = [(model, data.features[i], data.conditions[i], seed, i, config, str(data.ids[i]))
             for i in range(len(data))]
    if workers <= 1:
        return [_score_task(t) for t in tasks]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_score_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))


def binomial_error(p: float, n: int) -> float:
    return float(np.sqrt(p * (1.0 - p) / n)) if n > 0 else float("nan")


@dataclass
class RateSummary:
    q: float
    tpr: float
    tpr_err: float
    tnr: float
    tnr_err: float
    n_ref: int
    n_anom: int


def evaluate(decisions: list[Decision], labels) -> RateSummary:
    """TPR = reference acceptance, TNR = anomaly rejection, with binomial errors."""
    labels = np.asarray(labels, dtype=object)
    if len(labels) != len(decisions):
        raise DimensionError("one label per decision required")
    if any(lab is None for lab in labels):
        raise FluxMutError("evaluation needs a label for every object")
    acc = np.array([d.accepted for d in decisions])
    ref = labels == "ref"
    anom = labels == "anom"
    tpr = float(acc[ref].mean()) if ref.any() else float("nan")
    tnr = float((~acc[anom]).mean()) if anom.any() else float("nan")
    q = decisions[0].q if decisions else float("nan")
    return RateSummary(q, tpr, binomial_error(tpr, int(ref.sum())), tnr,
                       binomial_error(tnr, int(anom.sum())), int(ref.sum()), int(anom.sum()))


def evaluate_scores(scores: list[ObjectScore], labels, quantiles=(0.68, 0.95, 0.99)) -> list[RateSummary]:
    return [evaluate([s.decide(q) for s in scores], labels) for q in quantiles]


@dataclass
class RocCurve:
    q: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    sigma_tpr: np.ndarray
    sigma_fpr: np.ndarray
    auc: float
    sigma_auc: float


def trapezoid_auc(fpr, tpr, sigma_fpr, sigma_tpr) -> tuple[float, float]:
    """Trapezoid area with (0,0) and (1,1) appended, plus first-order propagated error."""
    order = np.lexsort((tpr, fpr))
    f = np.concatenate([[0.0], np.asarray(fpr)[order], [1.0]])
    t = np.concatenate([[0.0], np.asarray(tpr)[order], [1.0]])
    sf = np.concatenate([[0.0], np.asarray(sigma_fpr)[order], [0.0]])
    st = np.concatenate([[0.0], np.asarray(sigma_tpr)[order], [0.0]])
    auc = float(np.sum(0.5 * (f[1:] - f[:-1]) * (t[1:] + t[:-1])))
    dt = np.zeros_like(t)
    df = np.zeros_like(f)
    dt[1:-1] = 0.5 * (f[2:] - f[:-2])
    df[1:-1] = 0.5 * (t[:-2] - t[2:])
    var = np.sum((dt * st) ** 2 + (df * sf) ** 2)
    return auc, float(np.sqrt(var))


def roc_from_scores(scores: list[ObjectScore], labels, quantiles=ROC_QUANTILES) -> RocCurve:
    labels = np.asarray(labels, dtype=object)
    ref = labels == "ref"
    anom = labels == "anom"
    if not ref.any() or not anom.any():
        raise FluxMutError("ROC needs both reference and anomalous objects")
    rows = []
    for q in quantiles:
        acc = np.array([s.p_out <= s.threshold(q) for s in scores])
        tpr = float(acc[ref].mean())
        fpr = float(acc[anom].mean())
        rows.append((q, tpr, fpr, binomial_error(tpr, int(ref.sum())), binomial_error(fpr, int(anom.sum()))))
    q, tpr, fpr, st, sf = (np.array(c) for c in zip(*rows))
    auc, sauc = trapezoid_auc(fpr, tpr, sf, st)
    return RocCurve(q, tpr, fpr, st, sf, auc, sauc)


def balanced_sample(data: Dataset, n: int, seed: int) -> Dataset:
    """About ``n/2`` objects of each class, drawn without replacement."""
    if data.labels is None:
        raise FluxMutError("dataset has no labels")
    rng = np.random.default_rng(seed)
    parts = []
    for lab in ("ref", "anom"):
        idx = np.flatnonzero(data.labels == lab)
        if idx.size == 0:
            raise FluxMutError(f"no objects labelled {lab!r}")
        parts.append(np.sort(rng.choice(idx, size=min(n // 2, idx.size), replace=False)))
    return data.subset(np.concatenate(parts))


def roc_auc(model: FluxMutModel, data: Dataset, seed: int = 0, sample_size: int = 1000,
            config: PipelineConfig | None = None, workers: int = 1) -> RocCurve:
    sample = balanced_sample(data, sample_size, seed)
    scores = score_dataset(model, sample, seed, config, workers)
    return roc_from_scores(scores, sample.labels)


def ablate_residuals(model: FluxMutModel, data: Dataset, quantiles=(0.95,), seed: int = 0,
                     config: PipelineConfig | None = None, workers: int = 1) -> dict[str, list[RateSummary]]:
    """Same objects and same generated clusters, clustered on reconstructions only vs the full augmented space."""
    config = config or PipelineConfig()
    out = {}
    for space in ("features", "augmented"):
        cfg = PipelineConfig(config.ref_cluster_size, config.min_cluster_size, config.min_samples,
                             config.normalization, space)
        out[space] = evaluate_scores(score_dataset(model, data, seed, cfg, workers), data.labels, quantiles)
    return out


def write_decisions(decisions: list[Decision], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "P_out", "threshold", "q", "verdict", "fallback_flag"])
        for d in decisions:
            w.writerow([d.object_id, repr(d.p_out), repr(d.threshold), repr(d.q), d.verdict, int(d.fallback)])


def write_roc(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q", "TPR", "sigma_TPR", "FPR", "sigma_FPR"])
        for row in zip(curve.q, curve.tpr, curve.sigma_tpr, curve.fpr, curve.sigma_fpr):
            w.writerow([f"{v:.6g}" for v in row])


def format_auc(curve: RocCurve) -> str:
    return f"AUC = {curve.auc:.4f} +/- {curve.sigma_auc:.4f}"
