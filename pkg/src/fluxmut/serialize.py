"""JSON persistence for the trained autoencoder, flow and KDE.

Floats are written with Python's shortest round-trip repr, so a reload is
bit-identical at float64.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cae import AffineScaler, CaeModel
from .core import Dense, LayerStack
from .errors import ModelFormatError
from .flow import FlowModel, MadeBlock
from .kde import BinGrid, BinnedKde, KdeBin

SCHEMA_VERSION = "v1"


def _arr(a) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def stack_to_dict(stack: LayerStack) -> dict:
    return {
        "cond_dim": stack.cond_dim,
        "conditioned": stack.conditioned,
        "layers": [
            {
                "weights": _arr(layer.weights),
                "biases": _arr(layer.biases),
                "activation": layer.activation,
                "mask": None if layer.mask is None else np.asarray(layer.mask, dtype=np.int8).tolist(),
            }
            for layer in stack.layers
        ],
    }


def stack_from_dict(d: dict) -> LayerStack:
    layers = []
    for ld in d["layers"]:
        mask = None if ld["mask"] is None else np.asarray(ld["mask"], dtype=np.float64)
        w = np.asarray(ld["weights"], dtype=np.float64)
        b = np.asarray(ld["biases"], dtype=np.float64)
        layers.append(Dense(w.reshape(len(w), -1), b, ld["activation"], mask))
    return LayerStack(layers, d["conditioned"], d["cond_dim"])


def cae_to_dict(model: CaeModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "cae",
        "n_features": model.n_features,
        "n_conditions": model.n_conditions,
        "latent_dim": model.latent_dim,
        "feature_scaler": {"shift": _arr(model.feature_scaler.shift), "scale": _arr(model.feature_scaler.scale)},
        "condition_scaler": {"shift": _arr(model.condition_scaler.shift),
                             "scale": _arr(model.condition_scaler.scale)},
        "encoder": stack_to_dict(model.encoder),
        "decoder": stack_to_dict(model.decoder),
    }


def cae_from_dict(d: dict) -> CaeModel:
    _check(d, "cae")
    fs = AffineScaler(np.asarray(d["feature_scaler"]["shift"]), np.asarray(d["feature_scaler"]["scale"]))
    cs = AffineScaler(np.asarray(d["condition_scaler"]["shift"]), np.asarray(d["condition_scaler"]["scale"]))
    return CaeModel(stack_from_dict(d["encoder"]), stack_from_dict(d["decoder"]), fs, cs)


def flow_to_dict(model: FlowModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "flow",
        "dim": model.dim,
        "cond_dim": model.cond_dim,
        "blocks": [{"alpha_clamp": b.alpha_clamp, "net": stack_to_dict(b.net)} for b in model.blocks],
        "permutations": [np.asarray(p).tolist() for p in model.permutations],
    }


def flow_from_dict(d: dict) -> FlowModel:
    _check(d, "flow")
    blocks = [MadeBlock(stack_from_dict(b["net"]), b["alpha_clamp"]) for b in d["blocks"]]
    perms = [np.asarray(p, dtype=np.int64) for p in d["permutations"]]
    return FlowModel(blocks, perms)


def kde_to_dict(kde: BinnedKde) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "kde",
        "edges": [_arr(e) for e in kde.grid.edges],
        "min_occupancy": kde.min_occupancy,
        "bandwidth_floor": kde.bandwidth_floor,
        "variance_preserving": kde.variance_preserving,
        "bins": [
            {"key": list(key), "points": _arr(b.points), "bandwidth": _arr(b.bandwidth), "sparse": b.sparse}
            for key, b in kde.bins.items()
        ],
    }


def kde_from_dict(d: dict) -> BinnedKde:
    _check(d, "kde")
    bins = {}
    for b in d["bins"]:
        pts = np.asarray(b["points"], dtype=np.float64)
        bins[tuple(b["key"])] = KdeBin(pts.reshape(len(pts), -1), np.asarray(b["bandwidth"]), bool(b["sparse"]))
    return BinnedKde(BinGrid(d["edges"]), bins, d["min_occupancy"], d["bandwidth_floor"],
                     d.get("variance_preserving", True))


def _check(d: dict, kind: str) -> None:
    if not isinstance(d, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION!r}")
    if d.get("kind") != kind:
        raise ModelFormatError(f"expected a {kind} model, found {d.get('kind')!r}")


_TO = {CaeModel: cae_to_dict, FlowModel: flow_to_dict, BinnedKde: kde_to_dict}
_FROM = {"cae": cae_from_dict, "flow": flow_from_dict, "kde": kde_from_dict}


def save(obj, path) -> None:
    try:
        doc = _TO[type(obj)](obj)
    except KeyError:
        raise TypeError(f"cannot serialize {type(obj).__name__}") from None
    Path(path).write_text(json.dumps(doc))


def load(path, kind: str | None = None):
    """Load any model document; ``kind`` additionally enforces its type."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    found = doc.get("kind") if isinstance(doc, dict) else None
    if kind is not None and found != kind:
        raise ModelFormatError(f"{path}: expected a {kind} model, found {found!r}")
    if found not in _FROM:
        raise ModelFormatError(f"{path}: unknown model kind {found!r}")
    try:
        return _FROM[found](doc)
    except ModelFormatError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed {found} document ({exc})") from None
