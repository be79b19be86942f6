"""Central finite-difference verification of the backward passes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import VARIANTS, Batch, Dims, ModelParams, _run, init_params, loss_and_backward
from . import layers as L

TINY_DIMS = Dims(V=6, d_e=4, d_rs=4, d_w=3, d_att=3, d_y=5, n_windows=3, n_feat=28)


@dataclass
class GradCheckReport:
    variant: str
    n_params: int
    rel_errors: np.ndarray
    worst: str

    @property
    def frac_below_1e4(self) -> float:
        return float(np.mean(self.rel_errors < 1e-4))

    @property
    def max_error(self) -> float:
        return float(self.rel_errors.max())

    @property
    def passed(self) -> bool:
        return self.frac_below_1e4 >= 0.99 and self.max_error < 1e-2

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.variant:14s} params={self.n_params:5d} "
                f"frac(rel<1e-4)={self.frac_below_1e4:.4f} max_rel={self.max_error:.2e} worst={self.worst}")


def tiny_batch(dims: Dims = TINY_DIMS, B: int = 4, T: int = 3, seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    prev = rng.integers(0, dims.V + 1, size=(B, T))
    prev[0, 0] = dims.V
    feats = rng.normal(size=(B, T, dims.n_windows, dims.n_feat))
    feats[0, 0] = 0.0  # placeholder season
    feats[1, 0] = 0.0
    dist = rng.random((B, dims.V))
    dist /= dist.sum(axis=1, keepdims=True)
    labels = rng.integers(0, dims.V, size=B)
    return Batch(prev, feats, dist, labels)


def _loss(params: ModelParams, batch: Batch) -> float:
    result, _ = _run(params, batch, want_cache=False)
    return L.cross_entropy(result.logits, batch.labels)[0]


def rel_error(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def gradient_check(variant: str, dims: Dims = TINY_DIMS, seed: int = 0, eps: float = 1e-5,
                   batch: Batch | None = None) -> GradCheckReport:
    params = init_params(variant, dims, seed, dtype=np.float64)
    batch = batch or tiny_batch(dims, seed=seed)
    loss_and_backward(params, batch)
    errs, names = [], []
    for name, tensor in params.tensors.items():
        g_bp = params.grads[name].reshape(-1)
        flat = tensor.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + eps
            up = _loss(params, batch)
            flat[k] = old - eps
            down = _loss(params, batch)
            flat[k] = old
            errs.append(rel_error(g_bp[k], (up - down) / (2 * eps)))
            names.append(f"{name}[{k}]")
    errs = np.asarray(errs)
    return GradCheckReport(variant, len(errs), errs, names[int(np.argmax(errs))])


def check_all(dims: Dims = TINY_DIMS, seed: int = 0) -> list[GradCheckReport]:
    return [gradient_check(v, dims, seed) for v in VARIANTS]
