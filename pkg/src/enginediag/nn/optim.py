"""Adam with the AMSGrad max accumulator; no weight decay."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteGradient
from .layers import Parameter


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 0.001,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 amsgrad: bool = True):
        if lr < 0:
            raise ValueError(f"learning rate {lr} must be >= 0")
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.amsgrad = amsgrad
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._vmax = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        """One update over every parameter that received a gradient."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"parameter {p.name!r} has a non-finite gradient")
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / bc1
            if self.amsgrad:
                np.maximum(self._vmax[i], self._v[i], out=self._vmax[i])
                v_hat = self._vmax[i] / bc2
            else:
                v_hat = self._v[i] / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "moments": {
                p.name: (self._m[i], self._v[i], self._vmax[i])
                for i, p in enumerate(self.params)
            },
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        self.beta1, self.beta2 = float(state["beta1"]), float(state["beta2"])
        self.eps = float(state["eps"])
        by_name = state["moments"]
        for i, p in enumerate(self.params):
            if p.name in by_name:
                m, v, vmax = by_name[p.name]
                self._m[i] = m.astype(p.data.dtype)
                self._v[i] = v.astype(p.data.dtype)
                self._vmax[i] = vmax.astype(p.data.dtype)
