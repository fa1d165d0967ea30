"""Syntax-aware abstractive summarization at desk scale.

Submodules:
    autodiff   dense f64 tensors with a reverse-mode tape
    corpus     parsed-document ingestion, vocabulary, id encoding
    synthetic  deterministic toy-corpus generator
    graph      heterogeneous document graph over dependency parses
    encoder    BiLSTM semantic states + typed-edge graph convolutions
    gate       attention-pooled document vector and selective gate
    decoder    pointer-generator decoding, coverage, beam search
    model      configuration and parameter container
    training   loss, Adagrad, training loop, checkpoints
    metrics    ROUGE-1/2/L and bootstrapped evaluation
    cli        command-line pipeline
"""

__version__ = "0.1.0"
