"""Central finite-difference checks of model gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import Model, loss_and_grad

__all__ = ["GradRecord", "masked_loss", "gradient_check"]


@dataclass(frozen=True)
class GradRecord:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.analytic), abs(self.numeric))
        return 0.0 if denom == 0 else abs(self.analytic - self.numeric) / denom

    def passes(self, rtol: float = 1e-4, floor: float = 1e-8) -> bool:
        if max(abs(self.analytic), abs(self.numeric)) <= floor:
            return True
        return self.rel_error <= rtol


def masked_loss(model: Model, graph, raw, labels, idx, lambdas) -> float:
    logits = model.forward(graph, raw, training=False, lambdas=lambdas)
    return float(ad.cross_entropy(logits, np.asarray(labels), idx).value)


def gradient_check(model: Model, graph, raw, labels, idx, samples: int = 50, step: float = 1e-5,
                   seed: int = 0, groups: tuple[str, ...] | None = None) -> list[GradRecord]:
    """Sample parameter entries and compare reverse-mode with central differences.

    lambda_max is pinned to the values of the unperturbed forward pass, so the
    difference quotient sees the same rescaling as the reverse pass.
    Samples are spread round-robin over the named parameter tensors.
    """
    idx = np.asarray(idx, dtype=np.int64)
    model.forward(graph, raw, training=False)
    lambdas = list(model.last_lambdas)
    _, grads = loss_and_grad(model, graph, raw, labels, idx, lambdas=lambdas)
    params = [(n, v) for n, v, g in model.parameters() if groups is None or g in groups]
    rng = np.random.default_rng(seed)
    records = []
    for i in range(samples):
        name, var = params[i % len(params)]
        var.value = np.array(var.value, dtype=np.float64)
        pos = np.unravel_index(int(rng.integers(var.value.size)), var.value.shape)
        orig = float(var.value[pos])
        var.value[pos] = orig + step
        hi = masked_loss(model, graph, raw, labels, idx, lambdas)
        var.value[pos] = orig - step
        lo = masked_loss(model, graph, raw, labels, idx, lambdas)
        var.value[pos] = orig
        records.append(GradRecord(name, tuple(int(p) for p in pos), float(grads[name][pos]),
                                  (hi - lo) / (2 * step)))
    return records
