"""The seven architecture variants, their parameters and exact gradients.

Every variant ends in a year-level LSTM (except ``LSTM_YI``) whose last
hidden state feeds a linear classifier over the ``V`` fine crop codes.
Inputs per year step differ by variant:

==============  ==============================================
LSTM_Crop       embedding of the previous-season crop
LSTM_RS         tanh dense layer over the flattened 700 features
HierbiLSTM_RS   biLSTM + additive attention over the 25 windows
LSTM_MM         [embedding, dense(700)]
HierbiLSTM_MM   [embedding, biLSTM + attention]
Final           HierbiLSTM_MM with the crop-distribution vector
                mixed into the last hidden state by two tanh layers
LSTM_YI         one LSTM over the target season's windows only
==============  ==============================================
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L

VARIANTS = ("LSTM_Crop", "LSTM_YI", "LSTM_RS", "HierbiLSTM_RS", "LSTM_MM", "HierbiLSTM_MM", "Final")
USES_CROP = {"LSTM_Crop", "LSTM_MM", "HierbiLSTM_MM", "Final"}
RS_MODE = {
    "LSTM_Crop": None,
    "LSTM_YI": "yi",
    "LSTM_RS": "flat",
    "LSTM_MM": "flat",
    "HierbiLSTM_RS": "hier",
    "HierbiLSTM_MM": "hier",
    "Final": "hier",
}


@dataclass(frozen=True)
class Dims:
    V: int
    d_e: int = 64
    d_rs: int = 128
    d_w: int = 128
    d_att: int = 128
    d_y: int = 256
    n_windows: int = 25
    n_feat: int = 28
    n_layers: int = 1
    d_fc: int = 0  # 0 means "same as d_y"

    @property
    def fc(self) -> int:
        return self.d_fc or self.d_y

    def to_dict(self) -> dict:
        return asdict(self)


def _check_variant(variant: str):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def param_shapes(variant: str, dims: Dims) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes for ``variant``."""
    _check_variant(variant)
    V, F, W = dims.V, dims.n_feat, dims.n_windows
    shapes: dict[str, tuple[int, ...]] = {}

    def lstm(prefix, d_in, d_h):
        shapes[f"{prefix}.Wx"] = (d_in, 4 * d_h)
        shapes[f"{prefix}.Wh"] = (d_h, 4 * d_h)
        shapes[f"{prefix}.b"] = (4 * d_h,)

    mode = RS_MODE[variant]
    if variant == "LSTM_YI":
        lstm("win.fwd", F, dims.d_w)
        shapes["out.W"] = (dims.d_w, V)
        shapes["out.b"] = (V,)
        return shapes

    d_in = 0
    if variant in USES_CROP:
        shapes["emb.E"] = (V + 1, dims.d_e)
        d_in += dims.d_e
    if mode == "flat":
        shapes["rs.W"] = (W * F, dims.d_rs)
        shapes["rs.b"] = (dims.d_rs,)
        d_in += dims.d_rs
    elif mode == "hier":
        lstm("win.fwd", F, dims.d_w)
        lstm("win.bwd", F, dims.d_w)
        shapes["att.W"] = (2 * dims.d_w, dims.d_att)
        shapes["att.b"] = (dims.d_att,)
        shapes["att.v"] = (dims.d_att,)
        d_in += 2 * dims.d_w
    for layer in range(dims.n_layers):
        lstm(f"year.{layer}", d_in if layer == 0 else dims.d_y, dims.d_y)
    d_head = dims.d_y
    if variant == "Final":
        shapes["fc1.W"] = (dims.d_y + V, dims.fc)
        shapes["fc1.b"] = (dims.fc,)
        shapes["fc2.W"] = (dims.fc, dims.fc)
        shapes["fc2.b"] = (dims.fc,)
        d_head = dims.fc
    shapes["out.W"] = (d_head, V)
    shapes["out.b"] = (V,)
    return shapes


@dataclass
class ModelParams:
    variant: str
    dims: Dims
    seed: int
    tensors: dict[str, np.ndarray]
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.variant, self.dims)
        if list(shapes) != list(self.tensors):
            raise ValueError(f"parameter names do not match variant {self.variant}")
        for name, shape in shapes.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")
        if not self.grads:
            self.grads = {k: np.zeros_like(v) for k, v in self.tensors.items()}

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.variant, self.dims, self.seed, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.variant, self.dims, self.seed,
                           {k: v.astype(dtype) for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_params(variant: str, dims: Dims, seed: int, dtype=np.float32) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    LSTM forget-gate biases start at 1.0. Vectors named ``v`` use their
    length as fan-in. The UNKNOWN embedding row starts at zero, so leading
    padding steps (UNKNOWN crop, zero features) leave a zero year-LSTM
    state unchanged.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(variant, dims).items():
        if name.endswith(".b"):
            t = np.zeros(shape)
            if name.startswith(("win.", "year.")):
                H = shape[0] // 4
                t[H:2 * H] = 1.0
        else:
            bound = 1.0 / np.sqrt(shape[0])
            t = rng.uniform(-bound, bound, size=shape)
            if name == "emb.E":
                t[dims.V] = 0.0
        tensors[name] = t.astype(dtype)
    return ModelParams(variant, dims, seed, tensors)


# ---------------------------------------------------------------- batches

@dataclass
class Batch:
    prev: np.ndarray      # (B, T) int, V = UNKNOWN
    feats: np.ndarray     # (B, T, n_windows, n_feat)
    dist: np.ndarray      # (B, V)
    labels: np.ndarray | None = None  # (B,)

    def __len__(self) -> int:
        return len(self.prev)


def batch_from_sequences(seqs, rows=None, dtype=np.float32) -> Batch:
    """Stack a :class:`~croprot.data.SequenceSet` (or rows of it) into a Batch."""
    rows = np.arange(len(seqs)) if rows is None else np.asarray(rows)
    return Batch(
        seqs.prev_crops[rows],
        seqs.gather_features(rows, dtype=dtype),
        seqs.dist[rows].astype(dtype),
        seqs.labels[rows, -1],
    )


def batch_from_parcel_sequences(seqs, dtype=np.float64) -> Batch:
    seqs = list(seqs)
    return Batch(
        np.stack([s.prev_crops for s in seqs]),
        np.stack([s.features for s in seqs]).astype(dtype),
        np.stack([s.dist for s in seqs]).astype(dtype),
        np.array([s.target for s in seqs]),
    )


# ---------------------------------------------------------------- forward / backward

@dataclass
class ForwardResult:
    logits: np.ndarray
    probs: np.ndarray
    attention: np.ndarray | None  # (B, T, n_windows) for hierarchical variants


def _window_branch(P, X):
    """biLSTM + attention over windows for a stack of season blocks (N, W, F)."""
    hf, cf = L.lstm_forward(X, P["win.fwd.Wx"], P["win.fwd.Wh"], P["win.fwd.b"])
    hb, cb = L.lstm_forward(X, P["win.bwd.Wx"], P["win.bwd.Wh"], P["win.bwd.b"], reverse=True)
    Hs = np.concatenate([hf, hb], axis=2)
    out, u, ca = L.attention_forward(Hs, P["att.W"], P["att.b"], P["att.v"])
    return out, u, (cf, cb, ca)


def _window_branch_backward(dout, cache, grads):
    cf, cb, ca = cache
    dHs, dW, db, dv = L.attention_backward(dout, ca)
    grads["att.W"] += dW
    grads["att.b"] += db
    grads["att.v"] += dv
    d_w = dHs.shape[2] // 2
    for prefix, c, dh in (("win.fwd", cf, dHs[:, :, :d_w]), ("win.bwd", cb, dHs[:, :, d_w:])):
        _, dWx, dWh, db_ = L.lstm_backward(np.ascontiguousarray(dh), c)
        grads[f"{prefix}.Wx"] += dWx
        grads[f"{prefix}.Wh"] += dWh
        grads[f"{prefix}.b"] += db_


def _run(params: ModelParams, batch: Batch, want_cache: bool):
    P = params.tensors
    dims = params.dims
    dtype = params.dtype
    variant = params.variant
    mode = RS_MODE[variant]
    B, T = batch.prev.shape
    if np.any(batch.prev < 0) or np.any(batch.prev > dims.V):
        raise ValueError(f"crop code outside [0, {dims.V}]")
    feats = np.asarray(batch.feats, dtype=dtype)
    if mode is not None and feats.shape[2:] != (dims.n_windows, dims.n_feat):
        raise ValueError(f"feature blocks {feats.shape[2:]} do not match dims "
                         f"({dims.n_windows}, {dims.n_feat})")
    cache: dict = {}
    attention = None

    if variant == "LSTM_YI":
        X = feats[:, -1]
        hs, c = L.lstm_forward(X, P["win.fwd.Wx"], P["win.fwd.Wh"], P["win.fwd.b"])
        h_last = hs[:, -1]
        cache["yi"] = c
        head_in = h_last
    else:
        parts = []
        if variant in USES_CROP:
            parts.append(P["emb.E"][batch.prev])
        if mode == "flat":
            flat = feats.reshape(B * T, dims.n_windows * dims.n_feat)
            r, cache["rs"] = L.dense_tanh_forward(flat, P["rs.W"], P["rs.b"])
            parts.append(r.reshape(B, T, -1))
        elif mode == "hier":
            blocks = feats.reshape(B * T, dims.n_windows, dims.n_feat)
            nonzero = np.any(blocks != 0, axis=(1, 2))
            nz = np.flatnonzero(nonzero)
            has_zero = len(nz) < B * T
            # all zero blocks share one branch evaluation
            X = blocks[nz]
            if has_zero:
                X = np.concatenate([X, np.zeros((1,) + blocks.shape[1:], dtype=dtype)])
            out, u, cache["win"] = _window_branch(P, X)
            h_rs = np.empty((B * T, out.shape[1]), dtype=dtype)
            att = np.empty((B * T, dims.n_windows), dtype=dtype)
            h_rs[nz], att[nz] = out[:len(nz)], u[:len(nz)]
            if has_zero:
                h_rs[~nonzero], att[~nonzero] = out[-1], u[-1]
            cache["win_rows"] = (nonzero, nz, has_zero)
            parts.append(h_rs.reshape(B, T, -1))
            attention = att.reshape(B, T, dims.n_windows)
        x = np.concatenate(parts, axis=2) if len(parts) > 1 else parts[0]
        cache["year_in_widths"] = [p.shape[2] for p in parts]
        year_caches = []
        for layer in range(dims.n_layers):
            x, c = L.lstm_forward(np.ascontiguousarray(x), P[f"year.{layer}.Wx"], P[f"year.{layer}.Wh"],
                                  P[f"year.{layer}.b"])
            year_caches.append(c)
        cache["year"] = year_caches
        head_in = x[:, -1]
        if variant == "Final":
            z = np.concatenate([head_in, np.asarray(batch.dist, dtype=dtype)], axis=1)
            a1, cache["fc1"] = L.dense_tanh_forward(z, P["fc1.W"], P["fc1.b"])
            a2, cache["fc2"] = L.dense_tanh_forward(a1, P["fc2.W"], P["fc2.b"])
            head_in = a2
    logits, cache["out"] = L.dense_forward(head_in, P["out.W"], P["out.b"])
    L.check_finite(logits, "logits")
    result = ForwardResult(logits, L.softmax(logits), attention)
    return (result, cache) if want_cache else (result, None)


def forward(params: ModelParams, batch: Batch) -> ForwardResult:
    """Logits, class probabilities and attention weights for a batch."""
    return _run(params, batch, want_cache=False)[0]


def loss_and_backward(params: ModelParams, batch: Batch) -> float:
    """Mean cross-entropy on the final-step labels; fills ``params.grads``."""
    if batch.labels is None:
        raise ValueError("batch has no labels")
    labels = np.asarray(batch.labels)
    if np.any(labels < 0) or np.any(labels >= params.dims.V):
        raise ValueError("labels must be fine crop codes in [0, V)")
    result, cache = _run(params, batch, want_cache=True)
    loss, dlogits = L.cross_entropy(result.logits, labels)
    _backward(params, batch, cache, dlogits)
    return loss


def _backward(params: ModelParams, batch: Batch, cache, dlogits):
    P = params.tensors
    dims = params.dims
    variant = params.variant
    grads = {k: np.zeros_like(v) for k, v in P.items()}
    dh, grads["out.W"], grads["out.b"] = L.dense_backward(dlogits, cache["out"])

    if variant == "LSTM_YI":
        c = cache["yi"]
        dhs = np.zeros_like(c[3])
        dhs[:, -1] = dh
        _, grads["win.fwd.Wx"], grads["win.fwd.Wh"], grads["win.fwd.b"] = L.lstm_backward(dhs, c)
        params.grads = grads
        return

    if variant == "Final":
        da1, grads["fc2.W"], grads["fc2.b"] = L.dense_tanh_backward(dh, cache["fc2"])
        dz, grads["fc1.W"], grads["fc1.b"] = L.dense_tanh_backward(da1, cache["fc1"])
        dh = dz[:, :dims.d_y]

    B, T = batch.prev.shape
    year_caches = cache["year"]
    dx = np.zeros_like(year_caches[-1][3])
    dx[:, -1] = dh
    for layer in range(dims.n_layers - 1, -1, -1):
        dx, dWx, dWh, db = L.lstm_backward(dx, year_caches[layer])
        grads[f"year.{layer}.Wx"], grads[f"year.{layer}.Wh"], grads[f"year.{layer}.b"] = dWx, dWh, db

    offset = 0
    widths = cache["year_in_widths"]
    k = 0
    if variant in USES_CROP:
        d_emb = dx[:, :, offset:offset + widths[k]]
        np.add.at(grads["emb.E"], batch.prev.reshape(-1), d_emb.reshape(B * T, -1))
        offset += widths[k]
        k += 1
    mode = RS_MODE[variant]
    if mode == "flat":
        d_r = dx[:, :, offset:offset + widths[k]].reshape(B * T, -1)
        _, grads["rs.W"], grads["rs.b"] = L.dense_tanh_backward(d_r, cache["rs"])
    elif mode == "hier":
        d_h = dx[:, :, offset:offset + widths[k]].reshape(B * T, -1)
        nonzero, nz, has_zero = cache["win_rows"]
        d_out = d_h[nz]
        if has_zero:
            d_out = np.concatenate([d_out, d_h[~nonzero].sum(axis=0, keepdims=True)])
        _window_branch_backward(d_out, cache["win"], grads)
    params.grads = grads
