"""Classification and regression losses for two-stage detector training.

Probabilities are clamped to ``[EPS, 1 - EPS]`` before any logarithm. The
focal variants take ``p`` as the predicted probability of the true class,
which also covers the multi-class header through its softmax output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

EPS = 1e-7


@dataclass(frozen=True)
class ClassWeights:
    vehicle: float = 1.0
    pedestrian: float = 1.0
    cyclist: float = 1.0

    def __post_init__(self) -> None:
        for name in ("vehicle", "pedestrian", "cyclist"):
            if getattr(self, name) <= 0:
                raise ValueError(f"class weight for {name} must be positive")

    def weight(self, cls) -> float:
        """Weight for a class name or enum; background (``None``) gets 1."""
        if cls is None:
            return 1.0
        name = getattr(cls, "value", cls)
        try:
            return getattr(self, name)
        except (AttributeError, TypeError):
            raise ValueError(f"unknown class {cls!r}") from None


@dataclass(frozen=True)
class FocalParams:
    gamma: float = 2.0
    alpha: float = 1.0
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")


# Thresholds for the proposal network and the second-stage header.
THRESHOLD_RPN = 0.5
THRESHOLD_HEADER = 0.25


@dataclass(frozen=True)
class MultiTaskLossParams:
    lam: float = 1.0
    n_cls: float = 256.0
    n_reg: float = 256.0

    def __post_init__(self) -> None:
        if self.n_cls <= 0 or self.n_reg <= 0:
            raise ValueError("normalizers must be positive")


def _clamp(p: float) -> float:
    return min(max(p, EPS), 1.0 - EPS)


def binary_cross_entropy(p: float, p_star: float) -> float:
    if p_star not in (0, 1):
        raise ValueError("p_star must be 0 or 1")
    p = _clamp(p)
    return -p_star * math.log(p) - (1 - p_star) * math.log(1.0 - p)


def cross_entropy(p_true: float) -> float:
    """Cross-entropy given the probability assigned to the true class."""
    return -math.log(_clamp(p_true))


def smooth_l1(d: float) -> float:
    ad = abs(d)
    return 0.5 * d * d if ad < 1.0 else ad - 0.5


def focal_loss(p: float, fp: FocalParams) -> float:
    p = _clamp(p)
    return -fp.alpha * (1.0 - p) ** fp.gamma * math.log(p)


def reduction_factor(p: float, threshold: float, gamma: float) -> float:
    """1 below ``threshold``, else ``(1 - p)^gamma / threshold^gamma``."""
    if p < threshold:
        return 1.0
    return (1.0 - p) ** gamma / threshold**gamma


def reduced_focal_loss(p: float, fp: FocalParams) -> float:
    p = _clamp(p)
    return -fp.alpha * reduction_factor(p, fp.threshold, fp.gamma) * math.log(p)


@dataclass(frozen=True)
class Sample:
    p: float
    p_star: int
    t: Sequence[float]
    t_star: Sequence[float]
    cls: object = None


def weighted_multitask_loss(
    samples: Sequence[Sample | tuple],
    w: ClassWeights = ClassWeights(),
    mt: MultiTaskLossParams = MultiTaskLossParams(),
) -> tuple[float, float, float]:
    """Class-weighted classification plus box-regression loss.

    Returns ``(total, cls_term, reg_term)``. Only positive samples
    (``p_star == 1``) contribute to the regression term; the smooth-L1 is
    summed over the four box offsets.
    """
    cls_sum = 0.0
    reg_sum = 0.0
    for s in samples:
        if not isinstance(s, Sample):
            s = Sample(*s)
        if len(s.t) != len(s.t_star):
            raise ValueError(f"offset vectors differ in length: {len(s.t)} vs {len(s.t_star)}")
        wi = w.weight(s.cls)
        cls_sum += wi * binary_cross_entropy(s.p, s.p_star)
        if s.p_star:
            reg_sum += wi * sum(smooth_l1(a - b) for a, b in zip(s.t, s.t_star))
    cls_term = cls_sum / mt.n_cls
    reg_term = mt.lam * reg_sum / mt.n_reg
    return cls_term + reg_term, cls_term, reg_term


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _ce_grad(p: float, params) -> float:
    p_star = 1 if params is None else params
    return p - p_star


def _fl_grad(p: float, fp: FocalParams) -> float:
    # d/dz of -a (1-p)^g log p with dp/dz = p (1-p)
    q = 1.0 - p
    return fp.alpha * (fp.gamma * p * q**fp.gamma * math.log(p) - q ** (fp.gamma + 1))


def _rfl_grad(p: float, fp: FocalParams) -> float:
    if p < fp.threshold:
        return -fp.alpha * (1.0 - p)
    return _fl_grad(p, fp) / fp.threshold**fp.gamma


_GRADIENTS: Mapping[Callable, Callable] = {
    binary_cross_entropy: _ce_grad,
    focal_loss: _fl_grad,
    reduced_focal_loss: _rfl_grad,
}


def loss_gradient(loss_fn: Callable, p: float, params=None) -> float:
    """Analytic derivative of ``loss_fn`` with respect to the pre-sigmoid logit.

    ``params`` is the target label for :func:`binary_cross_entropy` (default
    1) and a :class:`FocalParams` for the focal losses. At ``p == threshold``
    the reduced focal loss uses its reduced branch, matching the loss
    itself. Gradients ignore the probability clamp.
    """
    try:
        grad = _GRADIENTS[loss_fn]
    except KeyError:
        raise ValueError(f"no analytic gradient for {loss_fn!r}") from None
    return grad(p, params)


def logit_loss(loss_fn: Callable, params=None) -> Callable[[float], float]:
    """``loss_fn`` as a function of the logit, for finite-difference checks."""
    if loss_fn is binary_cross_entropy:
        target = 1 if params is None else params
        return lambda z: binary_cross_entropy(sigmoid(z), target)
    return lambda z: loss_fn(sigmoid(z), params)


def central_difference(f: Callable[[float], float], x: float, h: float = 1e-5) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def load_loss_config(mapping: Mapping) -> dict:
    """Build loss parameters from a ``[loss]`` config table.

    Keys: ``gamma``, ``alpha``, ``threshold_rpn``, ``threshold_header``,
    ``lambda``, ``n_cls``, ``n_reg`` and ``class_weights`` (a table with
    ``vehicle``, ``pedestrian``, ``cyclist``).
    """
    gamma = float(mapping.get("gamma", 2.0))
    alpha = float(mapping.get("alpha", 1.0))
    return {
        "rpn": FocalParams(gamma, alpha, float(mapping.get("threshold_rpn", THRESHOLD_RPN))),
        "header": FocalParams(gamma, alpha, float(mapping.get("threshold_header", THRESHOLD_HEADER))),
        "multitask": MultiTaskLossParams(
            float(mapping.get("lambda", 1.0)),
            float(mapping.get("n_cls", 256.0)),
            float(mapping.get("n_reg", 256.0)),
        ),
        "weights": ClassWeights(**{k: float(v) for k, v in mapping.get("class_weights", {}).items()}),
    }
