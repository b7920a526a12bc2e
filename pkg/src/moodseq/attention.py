"""Additive (Bahdanau-style) attention over encoder hidden states.

score(q, h_j) = v . tanh(q W_s + h_j W_h);  alpha = softmax(score);  context = sum_j alpha_j h_j
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Module, glorot_uniform, param
from .tensor import DimensionError, Tensor


@dataclass
class AttentionOutput:
    context: Tensor
    weights: Tensor
    scores: Tensor


class AdditiveAttention(Module):
    def __init__(self, query_dim: int, hidden_dim: int, rng: np.random.Generator,
                 score_dim: int | None = None, learned_query: bool = False):
        score_dim = score_dim or hidden_dim
        self.W_s = param(glorot_uniform(rng, (query_dim, score_dim)))
        self.W_h = param(glorot_uniform(rng, (hidden_dim, score_dim)))
        self.v = param(glorot_uniform(rng, (score_dim,), fan_in=score_dim, fan_out=1))
        if learned_query:
            self.query = param(glorot_uniform(rng, (query_dim,), fan_in=query_dim, fan_out=1))
        self.hidden_dim = hidden_dim

    def scores(self, query: Tensor, states: Tensor) -> Tensor:
        """Unnormalized scores e_j, shape (T,) or (B, T)."""
        if states.shape[-1] != self.hidden_dim:
            raise DimensionError(f"attention expects hidden size {self.hidden_dim}, got states {states.shape}")
        steps = states.shape[-2]
        if steps < 1:
            raise ValueError("attention over an empty sequence")
        keys = T.matmul(states, self.W_h)
        q = T.matmul(query, self.W_s)
        if q.ndim == 2 and keys.ndim == 3:
            # one query per batch row: tile it across time explicitly
            q = T.repeat_axis(q, 1, steps)
        return T.matmul(T.tanh(keys + q), self.v)

    def attend(self, query: Tensor, states: Tensor) -> AttentionOutput:
        e = self.scores(query, states)
        alpha = T.softmax(e, axis=-1)
        if states.ndim == 2:
            context = T.matmul(alpha, states)
        else:
            B, steps, H = states.shape
            context = T.matmul(alpha.reshape(B, 1, steps), states).reshape(B, H)
        return AttentionOutput(context, alpha, e)

    def self_summary(self, states: Tensor) -> AttentionOutput:
        """Attend with the learned query vector: one context per sequence."""
        if not hasattr(self, "query"):
            raise ValueError("self_summary needs an attention layer built with learned_query=True")
        return self.attend(self.query, states)

    def __call__(self, states: Tensor) -> AttentionOutput:
        return self.self_summary(states)


def attend(params: AdditiveAttention, query: Tensor, states: Tensor) -> AttentionOutput:
    return params.attend(query, states)


def self_summary(params: AdditiveAttention, states: Tensor) -> AttentionOutput:
    return params.self_summary(states)
