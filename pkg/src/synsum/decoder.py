"""Attention decoder with copying, coverage and beam search.

Each step embeds the previous token (OOV ids fall back to UNK), feeds the
embedding concatenated with the previous context vector into a single LSTM
cell, scores every encoder position with additive attention carrying a
coverage feature, and mixes a generation distribution over the fixed
vocabulary with a copy distribution over source positions:

    final(w) = p_gen * P_vocab(w) + (1 - p_gen) * sum of attention on
               source positions holding w

over the extended vocabulary (fixed vocabulary plus this document's
temporary OOV ids). Coverage is the running sum of past attention
distributions; attending where coverage is already high is penalized by
``coverage_loss``.

At inference a content-selector mask can restrict the copy distribution to
source tokens scoring at least a threshold; the attention used for the
context vector and coverage stays unmasked, and an empty selection falls
back to the unmasked distribution rather than failing.

Beam search ranks finished hypotheses by log-probability divided by the
length penalty ((5 + len) / 6) ** alpha, where len counts emitted tokens
including STOP. Score ties are broken toward the lexicographically smaller
token sequence. Hypotheses still alive at the step limit are forced to emit
STOP, scored like any other token.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import EncodedExample, START_ID, STOP_ID, UNK_ID
from .encoder import EncodedDocument, encode
from .gate import GatedDocument, apply_gate
from .model import ModelParams

__all__ = [
    "StepState",
    "DecodeContext",
    "ContentMask",
    "ContentSelector",
    "Hypothesis",
    "encode_document",
    "prepare_decoder",
    "initial_state",
    "decode_step",
    "coverage_loss",
    "make_step_fn",
    "greedy_decode",
    "beam_search",
    "length_penalty",
    "train_content_selector",
]

logger = logging.getLogger(__name__)


@dataclass
class StepState:
    hidden: Tensor              # (1, d_dec)
    cell: Tensor                # (1, d_dec)
    coverage: Tensor            # (n,) running sum of past attention
    prev_context: Tensor        # (d,) context vector fed to the next input
    prev_token: int = START_ID


@dataclass
class DecodeContext:
    """Per-document quantities shared by every decode step."""

    enc_states: Tensor          # (n, d) gated encoder states
    enc_attn_proj: Tensor       # (n, d_attn) precomputed attention projection
    source_ext_ids: np.ndarray  # (n,) extended ids of the source tokens
    n_oov: int

    @property
    def n(self) -> int:
        return self.enc_states.shape[0]


@dataclass
class ContentMask:
    """Per-source-token selection probabilities and a threshold.

    ``damp`` switches from hard mask-and-renormalize to multiplicative
    damping: copy attention is reweighted by the selection probabilities
    instead of being cut off at the threshold.
    """

    q: np.ndarray
    threshold: float
    damp: bool = False

    def selected(self) -> np.ndarray:
        return self.q >= self.threshold


@dataclass
class Hypothesis:
    tokens: list[int]           # emitted extended-vocabulary ids
    log_prob: float
    state: object               # whatever the step function threads through
    finished: bool = False

    def score(self, alpha: float) -> float:
        return self.log_prob / length_penalty(len(self.tokens), alpha)


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


def prepare_decoder(
    enc_states: Tensor, example: EncodedExample, params: ModelParams
) -> DecodeContext:
    return DecodeContext(
        enc_states=enc_states,
        enc_attn_proj=ad.matmul(enc_states, params.attn["enc_W"]),
        source_ext_ids=np.asarray(example.source_ext_ids, dtype=np.intp),
        n_oov=len(example.oov_tokens),
    )


def encode_document(
    example: EncodedExample, params: ModelParams
) -> tuple[EncodedDocument, GatedDocument, DecodeContext]:
    """Encoder, gate and decode-context in one call; the shared forward."""
    enc = encode(example, params)
    gated = apply_gate(enc.fused, params)
    ctx = prepare_decoder(gated.gated, example, params)
    return enc, gated, ctx


def initial_state(enc: EncodedDocument, params: ModelParams) -> StepState:
    """Project the final forward/backward encoder states into the decoder.

    With ``zero_init_decoder`` the projection is skipped and the decoder
    starts from zero states (ablation path)."""
    config = params.config
    if config.zero_init_decoder:
        h0 = Tensor(np.zeros((1, config.d_dec)))
        c0 = Tensor(np.zeros((1, config.d_dec)))
    else:
        fw_h, fw_c, bw_h, bw_c = enc.final_states
        init = params.dec_init
        h0 = ad.add_rowvec(
            ad.matmul(ad.concat([fw_h, bw_h], axis=1), init["h_W"]), init["h_b"]
        )
        c0 = ad.add_rowvec(
            ad.matmul(ad.concat([fw_c, bw_c], axis=1), init["c_W"]), init["c_b"]
        )
    return StepState(
        hidden=h0,
        cell=c0,
        coverage=Tensor(np.zeros(enc.n)),
        prev_context=Tensor(np.zeros(config.enc_dim)),
        prev_token=START_ID,
    )


def _row_dot(row: Tensor, w: Tensor) -> Tensor:
    """(1, k) row times (k,) weight vector as a scalar tensor."""
    return ad.pick(
        ad.reshape(ad.matmul(row, ad.reshape(w, (w.shape[0], 1))), (1,)), 0
    )


def _lstm_cell(x: Tensor, h: Tensor, c: Tensor, cell: dict, d: int):
    z = ad.add_rowvec(
        ad.add(ad.matmul(x, cell["W_x"]), ad.matmul(h, cell["W_h"])), cell["b"]
    )
    i_gate = ad.sigmoid(ad.slice_cols(z, 0, d))
    f_gate = ad.sigmoid(ad.slice_cols(z, d, 2 * d))
    g_cand = ad.tanh(ad.slice_cols(z, 2 * d, 3 * d))
    o_gate = ad.sigmoid(ad.slice_cols(z, 3 * d, 4 * d))
    c_new = ad.add(ad.mul(f_gate, c), ad.mul(i_gate, g_cand))
    h_new = ad.mul(o_gate, ad.tanh(c_new))
    return h_new, c_new


def decode_step(
    state: StepState,
    y_prev: int,
    ctx: DecodeContext,
    params: ModelParams,
    mask: ContentMask | None = None,
    force_p_gen: float | None = None,
) -> tuple[Tensor, Tensor, Tensor, StepState]:
    """One decoder step.

    Returns (final distribution over vocab_size + n_oov, attention over
    source positions, p_gen scalar, next state). ``force_p_gen`` pins the
    generation/copy mixture weight, for endpoint tests.
    """
    config = params.config
    vocab_size = config.vocab_size
    n = ctx.n
    d = config.enc_dim

    input_id = y_prev if y_prev < vocab_size else UNK_ID
    emb = ad.gather_rows(params.embedding, [input_id])
    x = ad.concat([emb, ad.reshape(state.prev_context, (1, d))], axis=1)
    hidden, cell = _lstm_cell(x, state.hidden, state.cell, params.dec_cell,
                              config.d_dec)

    attn = params.attn
    dec_proj = ad.reshape(ad.matmul(hidden, attn["dec_W"]), (config.d_attn,))
    features = ad.add_rowvec(
        ad.add_rowvec(ctx.enc_attn_proj, dec_proj), attn["b"]
    )
    if config.use_coverage:
        features = ad.add(features, ad.outer(state.coverage, attn["cov_w"]))
    scores = ad.reshape(
        ad.matmul(ad.tanh(features), ad.reshape(attn["v"], (config.d_attn, 1))),
        (n,),
    )
    attention = ad.softmax(scores)

    # masked copy attention renormalizes the same scores over the selection;
    # context, coverage and the returned attention stay unmasked
    copy_attention = attention
    if mask is not None:
        if mask.damp:
            # inference-only reweighting by selection probability
            damped = attention.data * mask.q
            total = damped.sum()
            if total > 0:
                copy_attention = Tensor(damped / total)
            else:
                logger.warning(
                    "content mask damped all attention away; "
                    "falling back to unmasked attention"
                )
        else:
            selected = mask.selected()
            if not selected.any():
                logger.warning(
                    "content mask selected no tokens (threshold %.3f); "
                    "falling back to unmasked attention",
                    mask.threshold,
                )
            elif not selected.all():
                copy_attention = ad.softmax(scores, mask=selected)

    context = ad.reshape(
        ad.matmul(ad.reshape(attention, (1, n)), ctx.enc_states), (d,)
    )

    out = params.out_proj
    vocab_logits = ad.reshape(
        ad.add_rowvec(
            ad.matmul(ad.concat([hidden, ad.reshape(context, (1, d))], axis=1),
                      out["W"]),
            out["b"],
        ),
        (vocab_size,),
    )
    vocab_dist = ad.softmax(vocab_logits)

    if force_p_gen is None:
        pg = params.pgen
        pgen_logit = ad.add(
            ad.add(_row_dot(ad.reshape(context, (1, d)), pg["ctx_w"]),
                   _row_dot(hidden, pg["state_w"])),
            ad.add(_row_dot(x, pg["x_w"]), pg["b"]),
        )
        p_gen = ad.sigmoid(pgen_logit)
    else:
        p_gen = Tensor(float(force_p_gen))

    extended = vocab_size + ctx.n_oov
    gen_dist = (
        ad.concat([vocab_dist, Tensor(np.zeros(ctx.n_oov))])
        if ctx.n_oov
        else vocab_dist
    )
    copy_dist = ad.scatter_sum_vec(copy_attention, ctx.source_ext_ids, extended)
    final = ad.add(
        ad.mul(gen_dist, p_gen), ad.mul(copy_dist, ad.sub(1.0, p_gen))
    )

    new_state = StepState(
        hidden=hidden,
        cell=cell,
        coverage=ad.add(state.coverage, attention),
        prev_context=context,
        prev_token=y_prev,
    )
    return final, attention, p_gen, new_state


def coverage_loss(attention: Tensor, coverage: Tensor) -> Tensor:
    """Sum of elementwise minima between this step's attention and the
    coverage accumulated BEFORE it; zero on the first step."""
    return ad.sum_all(ad.minimum(attention, coverage))


# ---------------------------------------------------------------------------
# search


StepFn = Callable[[object, int], tuple[np.ndarray, object]]
"""(state, previous token) -> (log-probabilities over the extended
vocabulary, next state). Search routines only ever see this interface, so
toy models plug in directly."""


def make_step_fn(
    ctx: DecodeContext,
    params: ModelParams,
    mask: ContentMask | None = None,
    prob_floor: float = 1e-12,
) -> StepFn:
    def step(state: StepState, y_prev: int):
        final, _, _, new_state = decode_step(state, y_prev, ctx, params, mask=mask)
        return np.log(np.maximum(final.data, prob_floor)), new_state

    return step


def greedy_decode(
    step_fn: StepFn,
    init_state,
    max_len: int,
    stop_id: int = STOP_ID,
    start_id: int = START_ID,
) -> Hypothesis:
    """Stepwise argmax under the same length convention as beam search:
    ``max_len`` bounds emitted tokens including STOP, which is forced (and
    scored) at the final step."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    tokens: list[int] = []
    log_prob = 0.0
    state = init_state
    prev = start_id
    for step in range(max_len):
        log_probs, state = step_fn(state, prev)
        token = stop_id if step == max_len - 1 else int(np.argmax(log_probs))
        tokens.append(token)
        log_prob += float(log_probs[token])
        if token == stop_id:
            break
        prev = token
    return Hypothesis(tokens, log_prob, state, finished=True)


def beam_search(
    step_fn: StepFn,
    init_state,
    beam: int,
    max_len: int,
    alpha: float = 0.0,
    stop_id: int = STOP_ID,
    start_id: int = START_ID,
    return_pool: bool = False,
) -> Hypothesis | tuple[Hypothesis, list[Hypothesis]]:
    """Beam expansion over the extended vocabulary.

    ``max_len`` caps emitted tokens including STOP; any hypothesis alive at
    the last step is forced to emit STOP with its model score. Candidates
    are scanned in raw cumulative log-probability order (all live
    hypotheses share a length): STOP-terminated ones retire to the finished
    pool, others refill the beam, and the scan cuts off once the beam is
    full, so a STOP ranked below the cutoff is pruned exactly like any
    other candidate. With beam=1 this reduces to greedy decoding. Finished
    hypotheses compete by length-penalized score.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    live = [Hypothesis([], 0.0, init_state)]
    finished: list[Hypothesis] = []
    for step in range(max_len):
        last = step == max_len - 1
        candidates: list[Hypothesis] = []
        for hyp in live:
            prev = hyp.tokens[-1] if hyp.tokens else start_id
            log_probs, state = step_fn(hyp.state, prev)
            allowed = [stop_id] if last else range(len(log_probs))
            for token in allowed:
                candidates.append(
                    Hypothesis(
                        hyp.tokens + [token],
                        hyp.log_prob + float(log_probs[token]),
                        state,
                        finished=token == stop_id,
                    )
                )
        candidates.sort(key=lambda h: (-h.log_prob, tuple(h.tokens)))
        next_live: list[Hypothesis] = []
        for cand in candidates:
            if cand.finished:
                finished.append(cand)
            else:
                next_live.append(cand)
            if len(next_live) == beam:
                break
        live = next_live
        if not live:
            break
    best = min(finished, key=lambda h: (-h.score(alpha), tuple(h.tokens)))
    if return_pool:
        return best, finished
    return best


# ---------------------------------------------------------------------------
# content selector (bottom-up attention)


@dataclass
class ContentSelector:
    """Per-token logistic classifier over encoder states.

    Inputs are standardized with the training-set feature means and
    deviations; encoder states are small at initialization, so the
    classifier would otherwise barely move off its starting point.
    """

    w: np.ndarray
    b: float
    mean: np.ndarray
    std: np.ndarray

    def predict(self, enc_states: np.ndarray,
                threshold: float = 0.1) -> ContentMask:
        logits = ((enc_states - self.mean) / self.std) @ self.w + self.b
        q = 1.0 / (1.0 + np.exp(-np.clip(logits, -50.0, 50.0)))
        return ContentMask(q=q, threshold=threshold)


def train_content_selector(
    enc_states: Sequence[np.ndarray],
    targets: Sequence[np.ndarray],
    epochs: int = 300,
    lr: float = 0.5,
    seed: int = 0,
) -> ContentSelector:
    """Fit the selector with plain gradient descent on logistic loss.

    ``enc_states`` holds one (n_i, d) matrix per document; ``targets`` the
    matching binary rows marking tokens that appear in the reference.
    """
    X = np.concatenate([np.asarray(s, dtype=np.float64) for s in enc_states])
    y = np.concatenate([np.asarray(t, dtype=np.float64) for t in targets])
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} states vs {y.shape[0]} targets")
    mean = X.mean(axis=0)
    std = X.std(axis=0) + 1e-8
    X = (X - mean) / std
    rng = np.random.default_rng(seed)
    w = rng.uniform(-0.01, 0.01, X.shape[1])
    b = 0.0
    m = X.shape[0]
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-np.clip(X @ w + b, -50.0, 50.0)))
        err = p - y
        w -= lr * (X.T @ err) / m
        b -= lr * float(err.sum()) / m
    return ContentSelector(w=w, b=b, mean=mean, std=std)
