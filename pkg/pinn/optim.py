"""
Adam optimizer and step-decay learning-rate schedule
"""

import math
from typing import Dict, List

import numpy as np

from autodiff.tensor import Tensor


class StepLR:
    """lr(epoch) = init_lr * gamma ** floor(epoch / step_size), epochs counted from 0"""

    def __init__(self, init_lr: float, step_size: int = 40, gamma: float = 0.65):
        self.init_lr = init_lr
        self.step_size = step_size
        self.gamma = gamma

    def lr_at(self, epoch: int) -> float:
        return self.init_lr * self.gamma ** (epoch // self.step_size)


class Adam:
    def __init__(self, params: List[Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: Dict[int, np.ndarray] = {id(p): np.zeros_like(p.data) for p in self.params}
        self.v: Dict[int, np.ndarray] = {id(p): np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        step = lr * math.sqrt(correction2) / correction1
        for p in self.params:
            if p.grad is None:
                continue
            m = self.m[id(p)]
            v = self.v[id(p)]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad ** 2
            p.data = p.data - step * m / (np.sqrt(v) + self.eps * math.sqrt(correction2))
