import pytest

from synsum import synthetic as syn
from synsum.corpus import build_vocabulary, encode_example
from synsum.model import ModelConfig, ModelParams


@pytest.fixture(scope="session")
def tiny_setup():
    """Small corpus, vocabulary and config shared by model-level tests."""
    docs = syn.generate_documents(seed=7, size=16)
    vocab = build_vocabulary(docs, cap=syn.default_vocab_cap())
    examples = [encode_example(d, vocab) for d in docs]
    config = ModelConfig(
        vocab_size=vocab.size, d_emb=8, d_h=6, d_g=12, gcn_layers=2,
        d_dec=10, d_attn=10,
    )
    return docs, vocab, examples, config


@pytest.fixture
def tiny_params(tiny_setup):
    _, _, _, config = tiny_setup
    return ModelParams(config, seed=0)


def small_fixture_example(seed=0):
    """One encoded synthetic example under a tiny vocabulary."""
    docs = syn.generate_documents(seed=seed, size=2)
    vocab = build_vocabulary(docs, cap=syn.default_vocab_cap())
    return encode_example(docs[0], vocab), vocab
