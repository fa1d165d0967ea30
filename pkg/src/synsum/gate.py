"""Attention-pooled document vector and the selective information gate.

Token states are scored against a learned query through a tanh projection;
the softmax of those scores pools the states into a single document vector.
Each token is then filtered elementwise by a logistic gate computed from
the token state and the document vector, so only information judged salient
in the document's own context reaches the decoder. Scores and gate logits
are clamped to [-50, 50] before the exponential as an overflow guard.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor
from .model import ModelParams

__all__ = ["GatedDocument", "document_vector", "selective_gate", "gate_bypass",
           "apply_gate"]

_LOGIT_CLAMP = 50.0


@dataclass
class GatedDocument:
    doc_vector: Tensor | None   # (d,) attention-pooled summary of the tokens
    attention: Tensor | None    # (n,) pooling weights, sums to 1
    gate: Tensor | None         # (n, d) elementwise gate values in (0, 1)
    gated: Tensor               # (n, d) filtered states for the decoder


def document_vector(h: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Pool token states into one vector; returns (vector, weights)."""
    gate = params.gate
    n, d = h.shape
    u = ad.tanh(ad.add_rowvec(ad.matmul(h, gate["score_W"]), gate["score_b"]))
    scores = ad.reshape(
        ad.matmul(u, ad.reshape(gate["query"], (d, 1))), (n,)
    )
    weights = ad.softmax(ad.clip(scores, -_LOGIT_CLAMP, _LOGIT_CLAMP))
    pooled = ad.reshape(ad.matmul(ad.reshape(weights, (1, n)), h), (d,))
    return pooled, weights


def selective_gate(
    h: Tensor, doc_vec: Tensor, params: ModelParams
) -> tuple[Tensor, Tensor]:
    """Elementwise logistic filter of token states; returns (gate, gated)."""
    gate = params.gate
    d = h.shape[1]
    doc_term = ad.reshape(
        ad.matmul(ad.reshape(doc_vec, (1, d)), gate["doc_W"]), (d,)
    )
    logits = ad.add_rowvec(
        ad.add_rowvec(ad.matmul(h, gate["token_W"]), doc_term), gate["b"]
    )
    g = ad.sigmoid(ad.clip(logits, -_LOGIT_CLAMP, _LOGIT_CLAMP))
    return g, ad.mul(h, g)


def gate_bypass(h: Tensor) -> Tensor:
    """Ablation path: hand every encoded token to the decoder unfiltered."""
    return h


def apply_gate(h: Tensor, params: ModelParams) -> GatedDocument:
    if params.config.ablate_gate or params.config.ablate_gcn:
        return GatedDocument(doc_vector=None, attention=None, gate=None,
                             gated=gate_bypass(h))
    doc_vec, attention = document_vector(h, params)
    g, gated = selective_gate(h, doc_vec, params)
    return GatedDocument(doc_vector=doc_vec, attention=attention, gate=g,
                         gated=gated)
