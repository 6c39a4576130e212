"""AdamW with decoupled weight decay and global-norm gradient clipping."""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamWHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


def adamw_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    hyper: AdamWHyper,
    decay: bool = True,
) -> None:
    """
    One in-place AdamW update of a single parameter array.

    The decay term uses the parameter value before the update and never
    touches the moment estimates.

    Args:
        param (np.ndarray): Parameter values, updated in place.
        grad (np.ndarray): Gradient of the loss w.r.t. `param`.
        m (np.ndarray): First moment, updated in place.
        v (np.ndarray): Second moment, updated in place.
        step (int): 1-based step count used for bias correction.
        hyper (AdamWHyper): Hyperparameters.
        decay (bool): Whether weight decay applies to this parameter.
    """
    m *= hyper.beta1
    m += (1.0 - hyper.beta1) * grad
    v *= hyper.beta2
    v += (1.0 - hyper.beta2) * grad * grad
    m_hat = m / (1.0 - hyper.beta1 ** step)
    v_hat = v / (1.0 - hyper.beta2 ** step)
    update = hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    if decay and hyper.weight_decay:
        param -= hyper.lr * hyper.weight_decay * param
    param -= update


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """
    Scale all gradients so their global L2 norm is at most `max_norm`.

    Returns:
        float: The norm before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads:
            g *= scale
    return total


class AdamW:
    """
    AdamW over named parameters.

    Parameters with fewer than two dimensions (biases, norm scales) are not
    decayed. Parameters whose `grad` is None after backward (frozen or unused)
    are skipped and their moments left untouched.

    Args:
        named_params (Iterable[Tuple[str, Tensor]]): Parameters by dotted name.
        hyper (AdamWHyper): Hyperparameters.
    """

    def __init__(
        self,
        named_params: Iterable[Tuple[str, Tensor]],
        hyper: Optional[AdamWHyper] = None,
    ):
        self.hyper = hyper or AdamWHyper()
        self.params: Dict[str, Tensor] = dict(named_params)
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        for name, p in self.params.items():
            if p.grad is None or not p.requires_grad:
                continue
            adamw_step(
                p.data,
                p.grad,
                self.m[name],
                self.v[name],
                self.step_count,
                self.hyper,
                decay=p.ndim >= 2,
            )

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {}
        for name in self.params:
            state[f"adam.m/{name}"] = self.m[name]
            state[f"adam.v/{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], step_count: int) -> List[str]:
        """
        Restore moments saved by `state_dict`; names without saved moments keep zeros.

        Returns:
            List[str]: Names whose moments were restored.
        """
        restored = []
        for name in self.params:
            m = state.get(f"adam.m/{name}")
            v = state.get(f"adam.v/{name}")
            if m is not None and v is not None and m.shape == self.m[name].shape:
                self.m[name][...] = m
                self.v[name][...] = v
                restored.append(name)
        self.step_count = step_count
        return restored
