"""Adam and the sharpness-aware (SAM) wrapper around it."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Tensor


class Adam:
    """Bias-corrected Adam over a dict of named tensors.

    Only tensors with ``requires_grad`` set are touched; frozen tensors are
    skipped entirely.  ``weight_decay`` is decoupled (AdamW style) and defaults
    to zero.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError(f"betas must be in [0, 1), got ({beta1}, {beta2})")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def trainable(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if p.requires_grad}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """Apply one update using ``grads`` (defaults to each tensor's ``.grad``)."""
        trainable = self.trainable()
        if grads is None:
            grads = {}
            for name, p in trainable.items():
                if p.grad is None:
                    raise ContractError(f"trainable tensor {name} has no gradient")
                grads[name] = p.grad
        else:
            missing = [n for n in trainable if n not in grads]
            if missing:
                raise ContractError(f"trainable tensor {missing[0]} has no gradient")

        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in trainable.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.dtype, copy=False)

    def state(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}


class SAM:
    """Sharpness-aware minimization driving an inner :class:`Adam`.

    ``step(closure)`` evaluates the closure at w, moves to
    ``w + rho * g / ||g||`` (global L2 norm over all trainable tensors),
    evaluates the closure again, restores w bit-for-bit and lets Adam apply the
    gradient from the perturbed point.  The closure must zero gradients,
    recompute the loss, call ``backward()`` and return the loss.
    """

    def __init__(self, base: Adam, rho: float = 0.05):
        if rho <= 0:
            raise ConfigError(f"rho must be positive, got {rho}")
        self.base = base
        self.rho = rho
        self.last_perturbation_norm = 0.0
        self._scratch: dict[str, np.ndarray] = {}

    @property
    def params(self) -> dict[str, Tensor]:
        return self.base.params

    def zero_grad(self) -> None:
        self.base.zero_grad()

    def step(self, closure: Callable[[], Tensor]) -> Tensor:
        trainable = self.base.trainable()
        loss = closure()
        grads = {}
        for name, p in trainable.items():
            if p.grad is None:
                raise ContractError(f"trainable tensor {name} has no gradient")
            grads[name] = p.grad.copy()
        norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
        if norm == 0.0:
            self.last_perturbation_norm = 0.0
            self.base.step(grads)
            return loss

        backup = {n: p.data.copy() for n, p in trainable.items()}
        scale = self.rho / norm
        for name, p in trainable.items():
            e = self._scratch.get(name)
            if e is None or e.shape != p.shape:
                e = self._scratch[name] = np.empty_like(p.data)
            np.multiply(grads[name], scale, out=e)
            p.data += e
        self.last_perturbation_norm = float(np.sqrt(sum(float(np.sum(e.astype(np.float64) ** 2))
                                                        for n, e in self._scratch.items() if n in trainable)))
        try:
            closure()
            perturbed = {}
            for name, p in trainable.items():
                if p.grad is None:
                    raise ContractError(f"trainable tensor {name} has no gradient after the second pass")
                perturbed[name] = p.grad
        finally:
            for name, p in trainable.items():
                p.data[...] = backup[name]
        self.base.step(perturbed)
        return loss
