"""Fitted-model wrappers and the on-disk model format.

Each wrapper pairs a fitted inference state with the normalization that
was active during training, exposing `predict` in original target units
and `kernel` for grid export. Models serialize to a single JSON document
with an `inference` discriminator ("exact" | "svi" | "dense_rbf"); all
floats are written with shortest round-trip formatting, so identical
models produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import correction as vc
from . import data as data_mod
from . import dense, exact, linalg, network, svi
from .predictive import PredictiveDistribution

MODEL_FORMAT_VERSION = 1


class ModelFormatError(Exception):
    pass


def _normalize_inputs(x, stats: data_mod.NormStats | None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if stats is None:
        return x
    x = x[:, stats.kept_columns]
    return 2.0 * (x - stats.x_min) / (stats.x_max - stats.x_min) - 1.0


def _denormalize(pred: PredictiveDistribution, stats) -> PredictiveDistribution:
    if stats is None:
        return pred
    return data_mod.denormalize_prediction(pred, stats)


@dataclass
class ExactModel:
    state: exact.ExactState
    normalization: data_mod.NormStats | None = None
    tag: str = "dbk_exact"

    def predict(self, x) -> PredictiveDistribution:
        x = _normalize_inputs(x, self.normalization)
        return _denormalize(exact.predict_exact(self.state, x), self.normalization)

    def kernel(self, x1, x2) -> np.ndarray:
        return _basis_kernel(
            self.state.feature_map,
            self.state.correction,
            self.normalization,
            x1,
            x2,
        )


@dataclass
class SviModel:
    feature_map: network.FeatureMap
    q: svi.VariationalState
    noise: exact.NoiseParam
    correction: vc.CorrectionStats | None = None
    normalization: data_mod.NormStats | None = None
    tag: str = "dbk_svi"

    def predict(self, x) -> PredictiveDistribution:
        x = _normalize_inputs(x, self.normalization)
        pred = svi.predict_svi(
            self.feature_map, self.q, self.noise.variance, x, self.correction
        )
        return _denormalize(pred, self.normalization)

    def kernel(self, x1, x2) -> np.ndarray:
        return _basis_kernel(
            self.feature_map, self.correction, self.normalization, x1, x2
        )


@dataclass
class DenseModel:
    state: dense.DenseState
    normalization: data_mod.NormStats | None = None
    tag: str = "dense_rbf"

    def predict(self, x) -> PredictiveDistribution:
        x = _normalize_inputs(x, self.normalization)
        return _denormalize(dense.dense_posterior(self.state, x), self.normalization)

    def kernel(self, x1, x2) -> np.ndarray:
        a = _normalize_inputs(np.atleast_2d(x1), self.normalization)
        b = _normalize_inputs(np.atleast_2d(x2), self.normalization)
        return dense.rbf_ard(a, b, self.state.params)


def _basis_kernel(fmap, stats, normalization, x1, x2) -> np.ndarray:
    """<phi(a), phi(b)> with the diagonal correction on coincident points."""
    a = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    b = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    phi_a = network.forward(fmap, _normalize_inputs(a, normalization))
    phi_b = network.forward(fmap, _normalize_inputs(b, normalization))
    k = phi_a @ phi_b.T
    if stats is not None:
        sa = vc.sq_norms(phi_a)
        for i in range(a.shape[0]):
            for j in range(b.shape[0]):
                if np.array_equal(a[i], b[j]):
                    k[i, j] += max(stats.train_max_sq_norm, sa[i]) - sa[i]
    return k


def _norm_to_json(stats: data_mod.NormStats | None):
    if stats is None:
        return None
    return {
        "x_min": stats.x_min.tolist(),
        "x_max": stats.x_max.tolist(),
        "y_mean": stats.y_mean,
        "y_std": stats.y_std,
        "kept_columns": list(stats.kept_columns),
    }


def _norm_from_json(obj) -> data_mod.NormStats | None:
    if obj is None:
        return None
    return data_mod.NormStats(
        x_min=np.asarray(obj["x_min"], dtype=np.float64),
        x_max=np.asarray(obj["x_max"], dtype=np.float64),
        y_mean=float(obj["y_mean"]),
        y_std=float(obj["y_std"]),
        kept_columns=[int(j) for j in obj["kept_columns"]],
    )


def _correction_to_json(stats: vc.CorrectionStats | None):
    if stats is None:
        return None
    return {"train_max_sq_norm": stats.train_max_sq_norm}


def _correction_from_json(obj) -> vc.CorrectionStats | None:
    if obj is None:
        return None
    return vc.CorrectionStats(train_max_sq_norm=float(obj["train_max_sq_norm"]))


def _lower_triangle(mat: np.ndarray) -> list:
    return [float(mat[i, j]) for i in range(mat.shape[0]) for j in range(i + 1)]


def _from_lower_triangle(values, r: int) -> np.ndarray:
    out = np.zeros((r, r))
    it = iter(values)
    for i in range(r):
        for j in range(i + 1):
            out[i, j] = next(it)
    return out


def model_to_dict(model) -> dict:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "normalization": _norm_to_json(model.normalization),
    }
    if isinstance(model, ExactModel):
        state = model.state
        doc.update(
            inference="exact",
            feature_map=network.serialize_feature_map(state.feature_map),
            raw_noise=state.noise.raw,
            noise_floor=state.noise.floor,
            lambda_chol=_lower_triangle(state.lambda_chol.lower),
            jitter_used=state.lambda_chol.jitter_used,
            projected_targets=state.projected_targets.tolist(),
            correction=_correction_to_json(state.correction),
        )
    elif isinstance(model, SviModel):
        doc.update(
            inference="svi",
            feature_map=network.serialize_feature_map(model.feature_map),
            raw_noise=model.noise.raw,
            noise_floor=model.noise.floor,
            variational_mean=model.q.mean.tolist(),
            scale_lower_triangle=_lower_triangle(model.q.lower()),
            correction=_correction_to_json(model.correction),
        )
    elif isinstance(model, DenseModel):
        params = model.state.params
        doc.update(
            inference="dense_rbf",
            log_lengthscales=params.log_lengthscales.tolist(),
            log_outputscale=params.log_outputscale,
            raw_noise=params.noise.raw,
            noise_floor=params.noise.floor,
            train_x=model.state.train_x.tolist(),
            alpha=model.state.alpha.tolist(),
        )
    else:
        raise ModelFormatError(f"unknown model type {type(model)!r}")
    return doc


def model_from_dict(doc: dict):
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    inference = doc.get("inference")
    normalization = _norm_from_json(doc.get("normalization"))
    if inference == "exact":
        fmap = network.deserialize_feature_map(doc["feature_map"])
        r = fmap.rank
        factor = linalg.CholeskyFactor(
            lower=_from_lower_triangle(doc["lambda_chol"], r),
            jitter_used=float(doc["jitter_used"]),
        )
        state = exact.ExactState(
            feature_map=fmap,
            lambda_chol=factor,
            projected_targets=np.asarray(doc["projected_targets"], dtype=np.float64),
            noise=exact.NoiseParam(
                raw=float(doc["raw_noise"]), floor=float(doc["noise_floor"])
            ),
            correction=_correction_from_json(doc.get("correction")),
        )
        return ExactModel(state=state, normalization=normalization)
    if inference == "svi":
        fmap = network.deserialize_feature_map(doc["feature_map"])
        r = fmap.rank
        lower = _from_lower_triangle(doc["scale_lower_triangle"], r)
        scale_raw = np.tril(lower, k=-1)
        np.fill_diagonal(scale_raw, np.log(np.diagonal(lower)))
        q = svi.VariationalState(
            mean=np.asarray(doc["variational_mean"], dtype=np.float64),
            scale_raw=scale_raw,
        )
        return SviModel(
            feature_map=fmap,
            q=q,
            noise=exact.NoiseParam(
                raw=float(doc["raw_noise"]), floor=float(doc["noise_floor"])
            ),
            correction=_correction_from_json(doc.get("correction")),
            normalization=normalization,
        )
    if inference == "dense_rbf":
        params = dense.RbfArdParams(
            log_lengthscales=np.asarray(doc["log_lengthscales"], dtype=np.float64),
            log_outputscale=float(doc["log_outputscale"]),
            noise=exact.NoiseParam(
                raw=float(doc["raw_noise"]), floor=float(doc["noise_floor"])
            ),
        )
        train_x = np.asarray(doc["train_x"], dtype=np.float64)
        # the n x n factor is rebuilt rather than persisted; this is
        # deterministic for fixed inputs and keeps model files small
        sigma = dense.rbf_ard(train_x, train_x, params)
        sigma += params.noise.variance * np.eye(train_x.shape[0])
        state = dense.DenseState(
            params=params,
            chol_sigma=linalg.cholesky(sigma),
            alpha=np.asarray(doc["alpha"], dtype=np.float64),
            train_x=train_x,
        )
        return DenseModel(state=state, normalization=normalization)
    raise ModelFormatError(f"unknown inference kind {inference!r}")


def save_model(path, model) -> None:
    doc = model_to_dict(model)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, sort_keys=True, separators=(",", ":"))
        handle.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    return model_from_dict(doc)
