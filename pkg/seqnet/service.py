"""
Stacked (bi)directional LSTM with a mixture-density head and a hit/miss head.

Row-vector convention throughout: activations are (batch, time, features) and
every affine map is `x @ W + b`. The forward pass keeps whatever the backward
pass needs in plain dict caches; `backward` returns a ModelParams-shaped
gradient so the optimizer can walk both trees in lockstep.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from core.errors import DomainError, ShapeError, TrainingError
from dataforge.service import next_point_targets
from mixhead.service import nll_and_grad
from numcore.schemas import Activation, RngPurpose
from numcore.service import SeededRng, activate, relu
from .schemas import (
    GATES,
    BlstmLayerParams,
    DenseHead,
    ForwardResult,
    LossSpec,
    LstmParams,
    LstmState,
    ModelConfig,
    ModelParams,
    SequenceBatch,
)

logger = logging.getLogger(__name__)


# ---------- Construction ----------

def _uniform(rng: SeededRng, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _init_lstm(rng: SeededRng, d: int, h: int) -> LstmParams:
    # every gate sees d + h inputs
    fan_in = d + h
    fields = {}
    for g in GATES:
        fields[f"W_x{g}"] = _uniform(rng, (d, h), fan_in)
        fields[f"W_h{g}"] = _uniform(rng, (h, h), fan_in)
        fields[f"b_{g}"] = _uniform(rng, (h,), fan_in)
    return LstmParams(**fields)


def init_model(config: ModelConfig, rng: SeededRng) -> ModelParams:
    """Uniform ±1/√fan_in initialization drawn from the `init` sub-stream."""
    rng = rng.substream(RngPurpose.INIT)
    h, units = config.hidden_dim, config.units_per_layer
    layers = []
    d = config.input_dim
    for _ in range(config.num_layers):
        fwd = _init_lstm(rng, d, h)
        bwd = _init_lstm(rng, d, h) if config.bidirectional else None
        proj_fan_in = config.summary_dim
        layers.append(BlstmLayerParams(
            forward=fwd,
            backward=bwd,
            W_fy=_uniform(rng, (h, units), proj_fan_in),
            W_by=_uniform(rng, (h, units), proj_fan_in) if config.bidirectional else None,
            b_y=_uniform(rng, (units,), proj_fan_in),
        ))
        d = units
    mdn_head = DenseHead(
        W=_uniform(rng, (units, config.mdn_width), units),
        b=_uniform(rng, (config.mdn_width,), units),
    )
    cls_head = DenseHead(
        W=_uniform(rng, (config.summary_dim, 1), config.summary_dim),
        b=np.zeros(1),
    )
    model = ModelParams(config=config, layers=layers, mdn_head=mdn_head, cls_head=cls_head)
    logger.debug("initialized model with %d parameters", count_parameters(model))
    return model


def zero_model(config: ModelConfig) -> ModelParams:
    """All-zero parameters with the shapes `config` implies."""
    h, units = config.hidden_dim, config.units_per_layer

    def lstm(d):
        return LstmParams.from_stacked(np.zeros((d, 4 * h)), np.zeros((h, 4 * h)), np.zeros(4 * h))

    layers = []
    d = config.input_dim
    for _ in range(config.num_layers):
        layers.append(BlstmLayerParams(
            forward=lstm(d),
            backward=lstm(d) if config.bidirectional else None,
            W_fy=np.zeros((h, units)),
            W_by=np.zeros((h, units)) if config.bidirectional else None,
            b_y=np.zeros(units),
        ))
        d = units
    return ModelParams(
        config=config,
        layers=layers,
        mdn_head=DenseHead(W=np.zeros((units, config.mdn_width)), b=np.zeros(config.mdn_width)),
        cls_head=DenseHead(W=np.zeros((config.summary_dim, 1)), b=np.zeros(1)),
    )


def count_parameters(model: ModelParams) -> int:
    return int(sum(t.size for _, t in model.named_tensors()))


def params_to_vector(model: ModelParams) -> np.ndarray:
    return np.concatenate([t.ravel() for _, t in model.named_tensors()])


def vector_to_params(template: ModelParams, vector: np.ndarray) -> ModelParams:
    """Inverse of `params_to_vector`; `template` supplies shapes and order."""
    vector = np.asarray(vector, dtype=np.float64)
    total = count_parameters(template)
    if vector.shape != (total,):
        raise ShapeError("parameter vector does not match the model", vector.shape, (total,))
    offset = [0]

    def take(t: np.ndarray) -> np.ndarray:
        chunk = vector[offset[0]:offset[0] + t.size].reshape(t.shape).copy()
        offset[0] += t.size
        return chunk

    return template.map(take)


def parameter_names(model: ModelParams) -> List[str]:
    """One readable name per flat coordinate, e.g. `layers.0.forward.W_xf[2,5]`."""
    names = []
    for name, t in model.named_tensors():
        for idx in np.ndindex(t.shape):
            names.append(f"{name}[{','.join(str(i) for i in idx)}]")
    return names


# ---------- LSTM cell and scans ----------

def lstm_step(params: LstmParams, x: np.ndarray, state: LstmState) -> LstmState:
    """
    One LSTM step:

        f = σ(x·W_xf + h·W_hf + b_f)     i = σ(x·W_xi + h·W_hi + b_i)
        o = σ(x·W_xo + h·W_ho + b_o)     c̃ = tanh(x·W_xc + h·W_hc + b_c)
        c' = f ⊙ c + i ⊙ c̃               h' = o ⊙ tanh(c')

    Works for a single vector (D,) or a batch (B, D).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ShapeError("lstm input width", x.shape, (params.input_dim,))
    if state.h.shape[-1] != params.hidden_dim:
        raise ShapeError("lstm state width", state.h.shape, (params.hidden_dim,))
    f = activate(x @ params.W_xf + state.h @ params.W_hf + params.b_f, Activation.SIGMOID)
    i = activate(x @ params.W_xi + state.h @ params.W_hi + params.b_i, Activation.SIGMOID)
    o = activate(x @ params.W_xo + state.h @ params.W_ho + params.b_o, Activation.SIGMOID)
    g = activate(x @ params.W_xc + state.h @ params.W_hc + params.b_c, Activation.TANH)
    c = f * state.c + i * g
    return LstmState(h=o * np.tanh(c), c=c)


def _lstm_scan(params: LstmParams, xs: np.ndarray) -> Tuple[np.ndarray, Dict]:
    """Run from zero state over xs (B, T, D); returns hidden states (B, T, H)."""
    wx, wh, b = params.stacked()
    batch, steps, _ = xs.shape
    h_dim = params.hidden_dim
    pre_x = xs @ wx + b
    hs = np.empty((batch, steps, h_dim))
    cs = np.empty((batch, steps, h_dim))
    gates = np.empty((batch, steps, 4 * h_dim))
    h = np.zeros((batch, h_dim))
    c = np.zeros((batch, h_dim))
    for t in range(steps):
        a = pre_x[:, t] + h @ wh
        sig = expit(a[:, :3 * h_dim])
        g = np.tanh(a[:, 3 * h_dim:])
        f, i, o = sig[:, :h_dim], sig[:, h_dim:2 * h_dim], sig[:, 2 * h_dim:]
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[:, t], cs[:, t] = h, c
        gates[:, t, :3 * h_dim], gates[:, t, 3 * h_dim:] = sig, g
    return hs, {"xs": xs, "hs": hs, "cs": cs, "gates": gates, "wx": wx, "wh": wh}


def _lstm_scan_backward(cache: Dict, dhs: np.ndarray) -> Tuple[np.ndarray, LstmParams]:
    """BPTT through one scan; dhs (B, T, H) is the loss gradient at each h_t."""
    xs, hs, cs, gates, wx, wh = (cache[k] for k in ("xs", "hs", "cs", "gates", "wx", "wh"))
    batch, steps, h_dim = hs.shape
    da_all = np.empty_like(gates)
    dh_next = np.zeros((batch, h_dim))
    dc_next = np.zeros((batch, h_dim))
    for t in reversed(range(steps)):
        f = gates[:, t, :h_dim]
        i = gates[:, t, h_dim:2 * h_dim]
        o = gates[:, t, 2 * h_dim:3 * h_dim]
        g = gates[:, t, 3 * h_dim:]
        tanh_c = np.tanh(cs[:, t])
        c_prev = cs[:, t - 1] if t > 0 else np.zeros((batch, h_dim))

        dh = dhs[:, t] + dh_next
        dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
        da = da_all[:, t]
        da[:, :h_dim] = dc * c_prev * f * (1.0 - f)
        da[:, h_dim:2 * h_dim] = dc * g * i * (1.0 - i)
        da[:, 2 * h_dim:3 * h_dim] = dh * tanh_c * o * (1.0 - o)
        da[:, 3 * h_dim:] = dc * i * (1.0 - g ** 2)
        dh_next = da @ wh.T
        dc_next = dc * f

    h_prev = np.concatenate([np.zeros((batch, 1, h_dim)), hs[:, :-1]], axis=1)
    flat_da = da_all.reshape(-1, 4 * h_dim)
    d_wx = xs.reshape(-1, xs.shape[-1]).T @ flat_da
    d_wh = h_prev.reshape(-1, h_dim).T @ flat_da
    d_b = flat_da.sum(axis=0)
    dxs = da_all @ wx.T
    return dxs, LstmParams.from_stacked(d_wx, d_wh, d_b)


# ---------- Layers ----------

def _layer_forward(layer: BlstmLayerParams, xs: np.ndarray, activation: Activation) -> Tuple[np.ndarray, Dict]:
    hf, cache_f = _lstm_scan(layer.forward, xs)
    pre = hf @ layer.W_fy + layer.b_y
    hb, cache_b = None, None
    if layer.backward is not None:
        hb_rev, cache_b = _lstm_scan(layer.backward, np.ascontiguousarray(xs[:, ::-1]))
        hb = hb_rev[:, ::-1]
        pre = pre + hb @ layer.W_by
    ys = relu(pre) if activation is Activation.RELU else pre
    return ys, {"pre": pre, "hf": hf, "hb": hb, "fwd": cache_f, "bwd": cache_b, "activation": activation}


def blstm_layer_forward(
    layer: BlstmLayerParams, xs: np.ndarray, activation: Activation = Activation.RELU,
) -> np.ndarray:
    """
    One bidirectional layer over xs (T, D) or (B, T, D).

    The forward LSTM reads t = 0..T-1, the backward LSTM reads T-1..0, both from
    zero state; y_t = act(h→_t·W_fy + h←_t·W_by + b_y).
    """
    xs = np.asarray(xs, dtype=np.float64)
    single = xs.ndim == 2
    batch = xs[None] if single else xs
    if batch.ndim != 3 or batch.shape[-1] != layer.input_dim:
        raise ShapeError("layer input", xs.shape, ("T", layer.input_dim))
    ys, _ = _layer_forward(layer, batch, Activation(activation))
    return ys[0] if single else ys


def _layer_backward(layer: BlstmLayerParams, cache: Dict, dys: np.ndarray,
                    dhf_extra: Optional[np.ndarray] = None,
                    dhb_extra: Optional[np.ndarray] = None) -> Tuple[np.ndarray, BlstmLayerParams]:
    pre, hf, hb = cache["pre"], cache["hf"], cache["hb"]
    dpre = dys * (pre > 0.0) if cache["activation"] is Activation.RELU else dys
    units = pre.shape[-1]
    flat_dpre = dpre.reshape(-1, units)

    d_wfy = hf.reshape(-1, hf.shape[-1]).T @ flat_dpre
    d_by = flat_dpre.sum(axis=0)
    dhf = dpre @ layer.W_fy.T
    if dhf_extra is not None:
        dhf = dhf + dhf_extra
    dxs, g_fwd = _lstm_scan_backward(cache["fwd"], dhf)

    g_bwd, d_wby = None, None
    if layer.backward is not None:
        d_wby = hb.reshape(-1, hb.shape[-1]).T @ flat_dpre
        dhb = dpre @ layer.W_by.T
        if dhb_extra is not None:
            dhb = dhb + dhb_extra
        dxs_rev, g_bwd = _lstm_scan_backward(cache["bwd"], np.ascontiguousarray(dhb[:, ::-1]))
        dxs = dxs + dxs_rev[:, ::-1]

    grads = BlstmLayerParams(forward=g_fwd, backward=g_bwd, W_fy=d_wfy, W_by=d_wby, b_y=d_by)
    return dxs, grads


# ---------- Full model ----------

@dataclass
class _ForwardPass:
    top: np.ndarray
    summary: np.ndarray
    logits: np.ndarray
    raw: np.ndarray
    caches: List[Dict]


def _forward(model: ModelParams, xs: np.ndarray) -> _ForwardPass:
    caches = []
    h = xs
    last = len(model.layers) - 1
    for k, layer in enumerate(model.layers):
        act = Activation.RELU if k < last else Activation.IDENTITY
        h, cache = _layer_forward(layer, h, act)
        caches.append(cache)

    top = caches[-1]
    if model.config.bidirectional:
        summary = np.concatenate([top["hf"][:, -1], top["hb"][:, 0]], axis=-1)
    else:
        summary = top["hf"][:, -1]
    logits = (summary @ model.cls_head.W + model.cls_head.b)[:, 0]
    raw = h @ model.mdn_head.W + model.mdn_head.b
    return _ForwardPass(top=h, summary=summary, logits=logits, raw=raw, caches=caches)


def _check_input(model: ModelParams, xs, strict: bool) -> Tuple[np.ndarray, bool]:
    xs = np.asarray(xs, dtype=np.float64)
    single = xs.ndim == 2
    batch = xs[None] if single else xs
    cfg = model.config
    if batch.ndim != 3 or batch.shape[-1] != cfg.input_dim:
        raise ShapeError("model input must be (T, 4) or (B, T, 4)", xs.shape)
    if strict and batch.shape[1] != cfg.seq_len:
        raise ShapeError("sequence length does not match the model", batch.shape[1:2], (cfg.seq_len,))
    if batch.shape[1] < 1:
        raise ShapeError("empty sequence", xs.shape)
    if not np.all(np.isfinite(batch)):
        raise DomainError("model input contains non-finite values")
    return batch, single


def stack_forward(model: ModelParams, xs, strict: bool = True) -> ForwardResult:
    """
    Full forward pass over xs (T, 4) or (B, T, 4).

    Returns top-layer features, the hit logit read from the last forward state
    and the first backward state, and the raw mixture outputs at every step.
    `strict=False` accepts any sequence length (used by rollout).
    """
    batch, single = _check_input(model, xs, strict)
    fp = _forward(model, batch)
    c = model.config.components
    raw = fp.raw.reshape(fp.raw.shape[:-1] + (c, 8))
    if single:
        return ForwardResult(features=fp.top[0], logit=np.asarray(fp.logits[0]), raw_mixture=raw[0])
    return ForwardResult(features=fp.top, logit=fp.logits, raw_mixture=raw)


# ---------- Loss and gradients ----------

def make_batch(features, labels, batch_id: int = 0) -> SequenceBatch:
    features = np.asarray(features, dtype=np.float64)
    return SequenceBatch(
        features=features,
        labels=np.asarray(labels, dtype=np.float64),
        targets=next_point_targets(features),
        batch_id=batch_id,
    )


def _loss_terms(model: ModelParams, fp: _ForwardPass, batch: SequenceBatch):
    c = model.config.components
    steps = batch.features.shape[1]
    raw = fp.raw[:, :steps - 1].reshape(batch.size, steps - 1, c, 8)
    nll_steps, d_raw = nll_and_grad(raw, batch.targets)
    logits, y = fp.logits, batch.labels
    bce = np.logaddexp(0.0, logits) - y * logits
    return bce, nll_steps.sum(axis=1), d_raw


def sample_losses(model: ModelParams, batch: SequenceBatch, loss: LossSpec = LossSpec()) -> Dict[str, np.ndarray]:
    """Per-sample loss pieces and hit probabilities without gradients."""
    _check_input(model, batch.features, strict=True)
    fp = _forward(model, batch.features)
    bce, nll_sum, _ = _loss_terms(model, fp, batch)
    return {
        "loss": loss.bce_weight * bce + loss.nll_weight * nll_sum,
        "bce": bce,
        "nll": nll_sum,
        "probability": expit(fp.logits),
    }


def batch_loss(model: ModelParams, batch: SequenceBatch, loss: LossSpec = LossSpec()) -> float:
    return float(np.mean(sample_losses(model, batch, loss)["loss"]))


def backward(model: ModelParams, batch: SequenceBatch, loss: LossSpec = LossSpec()) -> Tuple[float, ModelParams]:
    """
    Mean batch loss and its exact gradient with respect to every parameter.

    Raises TrainingError carrying the batch id when the loss is not finite.
    """
    per_sample, grads = backward_per_sample(model, batch, loss)
    return float(np.mean(per_sample)), grads


def backward_per_sample(model: ModelParams, batch: SequenceBatch,
                        loss: LossSpec = LossSpec()) -> Tuple[np.ndarray, ModelParams]:
    """Like `backward`, but returns the per-sample losses alongside the gradient."""
    _check_input(model, batch.features, strict=True)
    fp = _forward(model, batch.features)
    bce, nll_sum, d_raw = _loss_terms(model, fp, batch)
    per_sample = loss.bce_weight * bce + loss.nll_weight * nll_sum
    if not np.all(np.isfinite(per_sample)):
        raise TrainingError("non-finite loss", batch_id=batch.batch_id)

    size, steps = batch.size, batch.features.shape[1]
    cfg = model.config

    # heads
    d_logits = loss.bce_weight / size * (expit(fp.logits) - batch.labels)
    d_cls = DenseHead(W=fp.summary.T @ d_logits[:, None], b=np.array([d_logits.sum()]))
    d_summary = d_logits[:, None] * model.cls_head.W[:, 0][None, :]

    d_raw_full = np.zeros((size, steps, cfg.mdn_width))
    d_raw_full[:, :steps - 1] = (loss.nll_weight / size) * d_raw.reshape(size, steps - 1, -1)
    flat = d_raw_full.reshape(-1, cfg.mdn_width)
    d_mdn = DenseHead(W=fp.top.reshape(-1, fp.top.shape[-1]).T @ flat, b=flat.sum(axis=0))
    d_top = d_raw_full @ model.mdn_head.W.T

    # summary gradient enters the top layer's hidden states directly
    h_dim = cfg.hidden_dim
    dhf_extra = np.zeros((size, steps, h_dim))
    dhf_extra[:, -1] = d_summary[:, :h_dim]
    dhb_extra = None
    if cfg.bidirectional:
        dhb_extra = np.zeros((size, steps, h_dim))
        dhb_extra[:, 0] = d_summary[:, h_dim:]

    layer_grads: List[BlstmLayerParams] = [None] * len(model.layers)
    d_out = d_top
    for k in reversed(range(len(model.layers))):
        top_layer = k == len(model.layers) - 1
        d_out, layer_grads[k] = _layer_backward(
            model.layers[k], fp.caches[k], d_out,
            dhf_extra if top_layer else None,
            dhb_extra if top_layer else None,
        )

    grads = ModelParams(config=cfg, layers=layer_grads, mdn_head=d_mdn, cls_head=d_cls)
    return per_sample, grads
