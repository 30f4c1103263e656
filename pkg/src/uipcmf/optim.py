"""Adam and Adagrad over a dict of named numpy tensors, updated in place."""
from __future__ import annotations

import numpy as np


class Optimizer:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        if not lr > 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        self.params = params
        self.lr = lr

    def _check(self, grads):
        for name, p in self.params.items():
            if grads[name].shape != p.shape:
                raise ValueError(
                    f"gradient shape {grads[name].shape} does not match {name} {p.shape}"
                )


class Adam(Optimizer):
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, grads):
        self._check(grads)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Adagrad(Optimizer):
    def __init__(self, params, lr=1e-2, eps=1e-10):
        super().__init__(params, lr)
        self.eps = eps
        self.sum_sq = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, grads):
        self._check(grads)
        for name, p in self.params.items():
            g = grads[name]
            acc = self.sum_sq[name]
            acc += g * g
            p -= self.lr * g / (np.sqrt(acc) + self.eps)


def make_optimizer(kind: str, params, lr: float) -> Optimizer:
    kind = kind.lower()
    if kind == "adam":
        return Adam(params, lr)
    if kind == "adagrad":
        return Adagrad(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}; expected adam or adagrad")
