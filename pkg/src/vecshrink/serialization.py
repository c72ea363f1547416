"""Model files: an ``.npz`` archive with a JSON ``meta`` entry naming the
model kind and its constructor parameters, plus one float64 array per
learned tensor (row-major)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderReducer
from .exceptions import FormatError
from .pca import PCAReducer
from .projection import (
    DimensionScores,
    GaussianProjection,
    GreedyDimensionDrop,
    ProjectionMap,
    RandomDimensionDrop,
    SparseProjection,
)

FORMAT_VERSION = 1
_PROJECTIONS = {"drop": RandomDimensionDrop, "gaussian": GaussianProjection,
                "sparse": SparseProjection, "greedy_drop": GreedyDimensionDrop}


def _jsonable(value):
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _model_arrays(model):
    if isinstance(model, PCAReducer):
        return "pca", {"mean": model.mean_, "components": model.components_,
                       "eigenvalues": model.eigenvalues_, "scales": model.component_scales_}
    if isinstance(model, AutoencoderReducer):
        arrays = {f"param{i:02d}": p for i, p in enumerate(model.params_)}
        arrays["trace"] = np.asarray(model.loss_trace_, dtype=np.float64).reshape(-1, 3)
        return "autoencoder", arrays
    for kind, cls in _PROJECTIONS.items():
        if type(model) is cls:
            proj = model.projection_
            arrays = {}
            if proj.indices is not None:
                arrays["indices"] = np.asarray(proj.indices, dtype=np.int64)
            if proj.matrix is not None:
                arrays["matrix"] = proj.matrix
            if kind == "greedy_drop":
                arrays["scores"] = model.scores_.scores
            return kind, arrays
    raise TypeError(f"cannot serialize {type(model).__name__}")


def save_model(model, path):
    """Write a fitted reducer to ``path`` (``.npz``)."""
    kind, arrays = _model_arrays(model)
    meta = {"format_version": FORMAT_VERSION, "kind": kind,
            "params": {k: _jsonable(v) for k, v in model.get_params().items()},
            "n_features_in": int(model.n_features_in_)}
    if kind == "autoencoder":
        meta["n_encoder_layers"] = model.n_encoder_layers_
        meta["n_decoder_layers"] = model.n_decoder_layers_
        meta["variant"] = model.variant_
    if kind in _PROJECTIONS:
        proj = model.projection_
        meta["projection"] = {"kind": proj.kind, "in_dim": proj.in_dim,
                              "out_dim": proj.out_dim, "seed": proj.seed}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8),
                 **{k: np.ascontiguousarray(v) for k, v in arrays.items()})


def load_model(path):
    try:
        archive = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: not a model file ({exc})") from None
    with archive:
        if "meta" not in archive:
            raise FormatError(f"{path}: missing meta entry")
        meta = json.loads(archive["meta"].tobytes().decode())
        arrays = {k: archive[k] for k in archive.files if k != "meta"}
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {meta.get('format_version')}")
    kind = meta["kind"]
    params = meta["params"]
    if kind == "pca":
        if params.get("component_scales") is not None:
            params["component_scales"] = tuple(params["component_scales"])
        model = PCAReducer(**params)
        model.mean_ = arrays["mean"]
        model.components_ = arrays["components"]
        model.eigenvalues_ = arrays["eigenvalues"]
        model.component_scales_ = arrays["scales"]
        model._n_features_out = model.components_.shape[0]
    elif kind == "autoencoder":
        params["hidden"] = tuple(params["hidden"])
        model = AutoencoderReducer(**params)
        names = sorted(k for k in arrays if k.startswith("param"))
        model.params_ = [arrays[k] for k in names]
        model.loss_trace_ = [(int(e), float(m), float(l)) for e, m, l in arrays["trace"]]
        model.n_epochs_ = len(model.loss_trace_)
        model.n_encoder_layers_ = meta["n_encoder_layers"]
        model.n_decoder_layers_ = meta["n_decoder_layers"]
        model.variant_ = meta["variant"]
        model._n_features_out = model.bottleneck
    elif kind in _PROJECTIONS:
        if "post" in params:
            params["post"] = tuple(params["post"])
        model = _PROJECTIONS[kind](**params)
        p = meta["projection"]
        model.projection_ = ProjectionMap(p["kind"], p["in_dim"], p["out_dim"], p["seed"],
                                          arrays.get("indices"), arrays.get("matrix"))
        if kind == "greedy_drop":
            model.scores_ = DimensionScores(arrays["scores"])
    else:
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    model.n_features_in_ = meta["n_features_in"]
    return model
