"""Training loop, Adagrad, and the binary checkpoint format.

The per-example loss is the token-averaged negative log-likelihood of the
gold summary under teacher forcing plus a weighted coverage penalty:

    (1/T) * sum over steps of [ -log(final(gold)) + weight * coverage_loss ]

with the predicted probability floored at 1e-12 before the log. Batch
gradients average the per-example gradients.

Adagrad follows the accumulator form: acc += g^2, theta -= lr * g /
sqrt(acc), with every accumulator initialized to a positive constant so no
epsilon is needed. Gradients are clipped by global norm before the step.

Checkpoints are a binary file: an 8-byte magic, a format version, a JSON
header (model config + digest, step counter, vocabulary hash), then one
record per tensor (path, shape, little-endian float64 payload). Reloading
reproduces bitwise-identical forward passes.
"""

from __future__ import annotations

import hashlib
import json
import random
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .corpus import EncodedExample, STOP_ID, Vocabulary, ids_to_tokens
from .decoder import (
    ContentMask,
    ContentSelector,
    beam_search,
    coverage_loss,
    decode_step,
    encode_document,
    initial_state,
    make_step_fn,
)
from .metrics import RougeReport, evaluate_pairs
from .model import ModelConfig, ModelParams

__all__ = [
    "TrainConfig",
    "LossStats",
    "EpochStats",
    "TrainResult",
    "NonFiniteGradientError",
    "sequence_loss",
    "loss_from_steps",
    "adagrad_step",
    "clip_gradients",
    "train",
    "decode_corpus",
    "evaluate_model",
    "save_checkpoint",
    "load_checkpoint",
    "params_from_checkpoint",
    "Checkpoint",
    "CheckpointError",
]

PROB_FLOOR = 1e-12

CHECKPOINT_MAGIC = b"SYNSUMCK"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 0.15
    init_accumulator: float = 0.1
    coverage_weight: float = 1.0
    batch_size: int = 4
    epochs: int = 50
    seed: int = 0
    clip_norm: float = 2.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.coverage_weight < 0:
            raise ValueError("coverage_weight must be nonnegative")


@dataclass
class LossStats:
    nll: float
    coverage: float
    steps: int

    @property
    def total(self) -> float:
        return self.nll + self.coverage


def loss_from_steps(
    step_dists: Sequence[Tensor],
    gold_ids: Sequence[int],
    attentions: Sequence[Tensor],
    coverages: Sequence[Tensor],
    coverage_weight: float,
) -> tuple[Tensor, LossStats]:
    """Token-averaged NLL plus weighted coverage penalty over given steps."""
    if not gold_ids:
        raise ValueError("empty decoding target")
    steps = len(gold_ids)
    nll_sum: Tensor | None = None
    cov_sum: Tensor | None = None
    for dist, gold, attention, coverage in zip(
        step_dists, gold_ids, attentions, coverages
    ):
        p = ad.maximum(ad.pick(dist, gold), PROB_FLOOR)
        nll = ad.mul(ad.log(p), -1.0)
        nll_sum = nll if nll_sum is None else ad.add(nll_sum, nll)
        cov = coverage_loss(attention, coverage)
        cov_sum = cov if cov_sum is None else ad.add(cov_sum, cov)
    loss = ad.mul(
        ad.add(nll_sum, ad.mul(cov_sum, coverage_weight)), 1.0 / steps
    )
    stats = LossStats(
        nll=float(nll_sum.data) / steps,
        coverage=coverage_weight * float(cov_sum.data) / steps,
        steps=steps,
    )
    return loss, stats


def sequence_loss(
    example: EncodedExample,
    params: ModelParams,
    coverage_weight: float,
) -> tuple[Tensor, LossStats]:
    """Teacher-forced loss of one example under the current parameters."""
    if len(example.target_ids) < 2:
        raise ValueError("example has an empty target")
    enc, _, ctx = encode_document(example, params)
    state = initial_state(enc, params)
    inputs = example.target_ids[:-1]      # in-vocabulary ids feed the embedding
    golds = example.target_ext_ids[1:]    # extended ids are what we must emit
    dists, attentions, coverages = [], [], []
    for y_prev in inputs:
        final, attention, _, next_state = decode_step(state, y_prev, ctx, params)
        dists.append(final)
        attentions.append(attention)
        coverages.append(state.coverage)  # coverage before this step's update
        state = next_state
    return loss_from_steps(dists, golds, attentions, coverages, coverage_weight)


# ---------------------------------------------------------------------------
# optimization


class NonFiniteGradientError(RuntimeError):
    """A gradient contained NaN or infinity; the step was aborted."""


def clip_gradients(
    grads: Mapping[str, np.ndarray], max_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = total ** 0.5
    if max_norm <= 0 or norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


def adagrad_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: dict[str, np.ndarray],
    lr: float,
    init_acc: float,
) -> None:
    """acc += g^2; theta -= lr * g / sqrt(acc). Accumulators start at
    ``init_acc``, created on first touch. Aborts on non-finite gradients."""
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(
                f"non-finite gradient for parameter {name!r}"
            )
        if g.shape != tensor.shape:
            raise ValueError(
                f"gradient shape {g.shape} != parameter shape {tensor.shape} "
                f"for {name!r}"
            )
        acc = state.get(name)
        if acc is None:
            acc = np.full(tensor.shape, init_acc)
            state[name] = acc
        acc += g * g
        tensor.data -= lr * g / np.sqrt(acc)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochStats:
    epoch: int
    step: int
    nll: float
    coverage: float
    total: float

    def log_line(self) -> str:
        return (
            f"epoch {self.epoch} step {self.step} nll {self.nll:.6f} "
            f"coverage {self.coverage:.6f} total {self.total:.6f}"
        )


@dataclass
class TrainResult:
    params: ModelParams
    accumulators: dict[str, np.ndarray]
    history: list[EpochStats]
    halted: bool = False
    halt_reason: str | None = None

    @property
    def final_loss(self) -> float:
        return self.history[-1].total if self.history else float("nan")


def train(
    examples: Sequence[EncodedExample],
    model_config: ModelConfig,
    train_config: TrainConfig,
    on_epoch: Callable[[EpochStats], None] | None = None,
    stop_below: float | None = None,
) -> TrainResult:
    """Deterministic training given the seed (init and shuffling included).

    A non-finite loss or gradient halts training and restores the parameter
    snapshot from the last completed epoch. ``stop_below`` ends training
    early once the epoch-mean total loss falls under the threshold.
    """
    if not examples:
        raise ValueError("cannot train on an empty corpus")
    params = ModelParams(model_config, seed=train_config.seed)
    # disabling coverage removes the attention feature and the penalty both
    coverage_weight = (
        train_config.coverage_weight if model_config.use_coverage else 0.0
    )
    named = params.named_tensors()
    accumulators: dict[str, np.ndarray] = {}
    shuffle_rng = random.Random(train_config.seed)
    order = list(range(len(examples)))
    history: list[EpochStats] = []
    step = 0
    snapshot = {name: t.data.copy() for name, t in named.items()}
    acc_snapshot: dict[str, np.ndarray] = {}

    def halt(reason: str) -> TrainResult:
        for name, t in named.items():
            t.data[...] = snapshot[name]
        accumulators.clear()
        accumulators.update(acc_snapshot)
        return TrainResult(params, accumulators, history, halted=True,
                           halt_reason=reason)

    for epoch in range(train_config.epochs):
        shuffle_rng.shuffle(order)
        epoch_nll = epoch_cov = 0.0
        for lo in range(0, len(order), train_config.batch_size):
            batch = order[lo:lo + train_config.batch_size]
            params.zero_grads()
            for idx in batch:
                with Tape() as tape:
                    loss, stats = sequence_loss(
                        examples[idx], params, coverage_weight
                    )
                    if not np.isfinite(loss.data):
                        return halt(f"non-finite loss on example {idx}")
                    tape.backward(ad.mul(loss, 1.0 / len(batch)))
                epoch_nll += stats.nll
                epoch_cov += stats.coverage
            grads = {
                name: t.grad for name, t in named.items() if t.grad is not None
            }
            grads, _ = clip_gradients(grads, train_config.clip_norm)
            try:
                adagrad_step(named, grads, accumulators,
                             train_config.learning_rate,
                             train_config.init_accumulator)
            except NonFiniteGradientError as exc:
                return halt(str(exc))
            step += 1
        n = len(examples)
        entry = EpochStats(
            epoch=epoch,
            step=step,
            nll=epoch_nll / n,
            coverage=epoch_cov / n,
            total=(epoch_nll + epoch_cov) / n,
        )
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        snapshot = {name: t.data.copy() for name, t in named.items()}
        acc_snapshot = {name: a.copy() for name, a in accumulators.items()}
        if stop_below is not None and entry.total < stop_below:
            break
    return TrainResult(params, accumulators, history)


# ---------------------------------------------------------------------------
# evaluation


def decode_corpus(
    examples: Sequence[EncodedExample],
    params: ModelParams,
    vocab: Vocabulary,
    beam: int = 4,
    max_len: int = 30,
    alpha: float = 0.4,
    selector: ContentSelector | None = None,
    mask_threshold: float | None = None,
) -> list[list[str]]:
    """Beam-decode every example back to surface tokens."""
    outputs = []
    for example in examples:
        enc, _, ctx = encode_document(example, params)
        mask: ContentMask | None = None
        if selector is not None and mask_threshold is not None:
            mask = selector.predict(enc.fused.data, mask_threshold)
        hyp = beam_search(
            make_step_fn(ctx, params, mask=mask),
            initial_state(enc, params),
            beam=beam, max_len=max_len, alpha=alpha,
        )
        ids = [t for t in hyp.tokens if t != STOP_ID]
        outputs.append(ids_to_tokens(ids, vocab, example.oov_tokens))
    return outputs


def evaluate_model(
    examples: Sequence[EncodedExample],
    params: ModelParams,
    vocab: Vocabulary,
    beam: int = 4,
    max_len: int = 30,
    alpha: float = 0.4,
    n_resamples: int = 1000,
    seed: int = 0,
) -> RougeReport:
    """Decode a split and score it against its references."""
    candidates = decode_corpus(examples, params, vocab, beam=beam,
                               max_len=max_len, alpha=alpha)
    references = [example.reference_tokens for example in examples]
    return evaluate_pairs(candidates, references, n_resamples=n_resamples,
                          seed=seed)


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(ValueError):
    """Checkpoint file is malformed or incompatible."""


@dataclass
class Checkpoint:
    config: ModelConfig
    arrays: dict[str, np.ndarray]          # trainable parameters by path
    accumulators: dict[str, np.ndarray]    # optimizer state by parameter path
    extras: dict[str, np.ndarray]          # e.g. content-selector weights
    step: int
    vocab_hash: str


def config_digest(config: ModelConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_record(fh, path: str, array: np.ndarray) -> None:
    encoded = path.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    arr = np.asarray(array, dtype="<f8")
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(arr.tobytes(order="C"))


def _read_record(fh) -> tuple[str, np.ndarray]:
    raw = fh.read(4)
    if len(raw) < 4:
        raise CheckpointError("truncated checkpoint: missing record header")
    (path_len,) = struct.unpack("<I", raw)
    path = fh.read(path_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    payload = fh.read(count * 8)
    if len(payload) != count * 8:
        raise CheckpointError(f"truncated payload for tensor {path!r}")
    array = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return path, array.reshape(shape)


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    step: int,
    vocab_hash: str,
    accumulators: Mapping[str, np.ndarray] | None = None,
    extras: Mapping[str, np.ndarray] | None = None,
) -> Path:
    path = Path(path)
    named = params.named_tensors()
    accumulators = dict(accumulators or {})
    extras = dict(extras or {})
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "config_digest": config_digest(params.config),
        "step": step,
        "vocab_hash": vocab_hash,
        "params": list(named),
        "accumulators": list(accumulators),
        "extras": list(extras),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, tensor in named.items():
            _write_record(fh, name, tensor.data)
        for name, acc in accumulators.items():
            _write_record(fh, f"adagrad_acc/{name}", acc)
        for name, arr in extras.items():
            _write_record(fh, f"extra/{name}", arr)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        expected = (
            len(header["params"]) + len(header["accumulators"])
            + len(header["extras"])
        )
        arrays: dict[str, np.ndarray] = {}
        accumulators: dict[str, np.ndarray] = {}
        extras: dict[str, np.ndarray] = {}
        for _ in range(expected):
            name, array = _read_record(fh)
            if name.startswith("adagrad_acc/"):
                accumulators[name[len("adagrad_acc/"):]] = array
            elif name.startswith("extra/"):
                extras[name[len("extra/"):]] = array
            else:
                arrays[name] = array
    config = ModelConfig.from_dict(header["config"])
    if config_digest(config) != header["config_digest"]:
        raise CheckpointError("config digest mismatch in checkpoint header")
    return Checkpoint(
        config=config,
        arrays=arrays,
        accumulators=accumulators,
        extras=extras,
        step=header["step"],
        vocab_hash=header["vocab_hash"],
    )


def params_from_checkpoint(ckpt: Checkpoint) -> ModelParams:
    params = ModelParams(ckpt.config, seed=0)
    params.load_arrays(ckpt.arrays)
    return params
