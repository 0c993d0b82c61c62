"""Recurrent cell and small composite layers built on the tensor ops."""

from __future__ import annotations

import numpy as np

from rlst.nn_core import tensor as T
from rlst.nn_core.params import ConfigurationError, GruParams
from rlst.nn_core.tensor import Tensor


def gru_step(prev_state: Tensor, inputs: Tensor, p: GruParams) -> Tensor:
    """One GRU transition.

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    n = tanh(W_n x + U_n (r * h) + b_n)
    h' = (1 - z) * h + z * n

    A strongly negative update-gate bias therefore keeps the previous state.
    Works on single vectors or on (batch, dim) rows.
    """
    if prev_state.shape[-1] != p.hidden_dim or inputs.shape[-1] != p.input_dim:
        raise ConfigurationError(
            f"gru_step: state dim {prev_state.shape[-1]} / input dim {inputs.shape[-1]} "
            f"do not match params ({p.hidden_dim}, {p.input_dim})"
        )
    z = T.sigmoid(T.linear(inputs, p.w_z) + T.linear(prev_state, p.u_z) + p.b_z)
    r = T.sigmoid(T.linear(inputs, p.w_r) + T.linear(prev_state, p.u_r) + p.b_r)
    n = T.tanh(T.linear(inputs, p.w_n) + T.linear(T.mul(r, prev_state), p.u_n) + p.b_n)
    return prev_state + T.mul(z, n - prev_state)


def gru_step_values(h: np.ndarray, x: np.ndarray, p: GruParams) -> np.ndarray:
    """Gradient-free twin of :func:`gru_step` on raw arrays (hot inference loops)."""
    z = T._sigmoid(x @ p.w_z.values.T + h @ p.u_z.values.T + p.b_z.values)
    r = T._sigmoid(x @ p.w_r.values.T + h @ p.u_r.values.T + p.b_r.values)
    n = np.tanh(x @ p.w_n.values.T + (r * h) @ p.u_n.values.T + p.b_n.values)
    return h + z * (n - h)


def masked_step(new: Tensor, old: Tensor, live: np.ndarray) -> Tensor:
    """Keep ``old`` rows where ``live`` is 0 (padding past a sequence end)."""
    if live.all():
        return new
    m = live[:, None].astype(np.float64)
    return old + T.mul(new - old, m)
