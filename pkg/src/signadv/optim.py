"""Adam with bias correction.

Parameters travel as name -> array dicts; the update is functional (new
params, new state) so callers can snapshot any iterate cheaply.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteError, ShapeError


@dataclass
class AdamState:
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Deterministic given (params, grads, state)."""
    if set(params) != set(grads):
        missing = set(params).symmetric_difference(grads)
        raise ShapeError(f"params/grads key mismatch: {sorted(missing)}")
    t = state.step_count + 1
    new_params: dict[str, np.ndarray] = {}
    m_out: dict[str, np.ndarray] = {}
    v_out: dict[str, np.ndarray] = {}
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(
                f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}"
            )
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * np.square(g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[name] = (p - state.eta * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(
            p.dtype, copy=False
        )
        m_out[name] = m
        v_out[name] = v
    new_state = replace(state, step_count=t, first_moment=m_out, second_moment=v_out)
    return new_params, new_state
