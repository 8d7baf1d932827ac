"""Adam optimizer over a ParameterSet."""

from __future__ import annotations

import numpy as np

from .checkpoint import ParameterSet


class Adam:
    """Adam with bias correction; moments live beside their parameters.

    ``step()`` expects every parameter to carry a gradient (call
    ``ParameterSet.fill_missing_grads()`` after backward if parts of the
    graph were disabled) and zeroes all gradients once applied.
    """

    def __init__(
        self,
        params: ParameterSet,
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)
        self.zero_grads()

    def zero_grads(self) -> None:
        self.params.zero_grads()

    # ----- checkpoint support -------------------------------------------------
    def state_entries(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"adam.step": np.array([self.t], dtype=np.float32)}
        for name in self.params.names():
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_entries(self, extras: dict[str, np.ndarray]) -> None:
        if "adam.step" not in extras:
            raise ValueError("checkpoint has no optimizer state")
        self.t = int(extras["adam.step"][0])
        for name in self.params.names():
            self.m[name] = np.asarray(extras[f"adam.m.{name}"], dtype=np.float32).reshape(
                self.m[name].shape
            )
            self.v[name] = np.asarray(extras[f"adam.v.{name}"], dtype=np.float32).reshape(
                self.v[name].shape
            )
