"""
Adam, global-norm clipping and the early-stop rule.

Parameters and gradients are anything that yields tensors in a stable order:
a ModelParams tree (via `named_tensors()`) or a plain dict of arrays. Updates
happen in place on the parameter arrays.
"""

from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from config import settings
from core.errors import DomainError, ShapeError, TrainingError
from seqnet.schemas import ModelParams
from .schemas import AdamHyper, AdamState, StopDecision

TensorTree = Union[ModelParams, Dict[str, np.ndarray]]


def tensors(tree: TensorTree) -> List[np.ndarray]:
    if isinstance(tree, dict):
        return list(tree.values())
    return [t for _, t in tree.named_tensors()]


def init_adam(params: TensorTree, hyper: AdamHyper = AdamHyper()) -> AdamState:
    zeros = [np.zeros_like(t) for t in tensors(params)]
    return AdamState(m=zeros, v=[np.zeros_like(t) for t in zeros], step=0, hyper=hyper)


def adam_step(state: AdamState, params: TensorTree, grads: TensorTree) -> Tuple[AdamState, TensorTree]:
    """
    One bias-corrected Adam update:

        m ← β1·m + (1−β1)·g      v ← β2·v + (1−β2)·g²
        θ ← θ − lr·m̂ / (√v̂ + ε)

    Mutates `params` and the moment arrays in place and returns both.
    """
    p_list, g_list = tensors(params), tensors(grads)
    if len(p_list) != len(g_list) or len(p_list) != len(state.m):
        raise ShapeError("parameter, gradient and moment counts differ", (len(p_list),), (len(g_list),))
    for p, g in zip(p_list, g_list):
        if p.shape != g.shape:
            raise ShapeError("gradient shape", g.shape, p.shape)
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient")

    h = state.hyper
    state.step += 1
    bc1 = 1.0 - h.beta1 ** state.step
    bc2 = 1.0 - h.beta2 ** state.step
    for p, g, m, v in zip(p_list, g_list, state.m, state.v):
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * g * g
        p -= h.lr * (m / bc1) / (np.sqrt(v / bc2) + h.eps)
    return state, params


def global_norm(grads: TensorTree) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in tensors(grads))))


def clip_global_norm(grads: TensorTree, max_norm: Optional[float] = settings.GRAD_CLIP_NORM) -> float:
    """Rescale `grads` in place so their joint L2 norm is at most `max_norm`; returns the norm before clipping."""
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in tensors(grads):
            g *= scale
    return norm


def early_stop_check(
    history: Sequence[float],
    current: float,
    factor: float = settings.EARLY_STOP_FACTOR,
    window: int = settings.EARLY_STOP_WINDOW,
    comparator: Literal["drop", "rise"] = "drop",
) -> StopDecision:
    """
    `drop` stops when the current loss falls below factor × the mean of the last
    `window` losses; `rise` stops when it climbs above that mean / factor.
    Fewer than `window` losses never stop.

    The margin is taken relative to |mean|, so the rule means the same thing for
    negative losses (a mixture NLL goes below zero once the fitted sigmas are
    small). Applied literally to a negative mean, factor × mean would sit above
    the mean and any non-increasing epoch would stop training.
    """
    if not 0.0 < factor < 1.0:
        raise DomainError("early-stop factor must lie in (0, 1)")
    if len(history) < window:
        return StopDecision.CONTINUE
    mean = float(np.mean(history[-window:]))
    if comparator == "drop":
        stop = current < mean - (1.0 - factor) * abs(mean)
    elif comparator == "rise":
        stop = current > mean + (1.0 / factor - 1.0) * abs(mean)
    else:
        raise DomainError(f"unknown early-stop comparator {comparator!r}")
    return StopDecision.STOP if stop else StopDecision.CONTINUE
