"""Small weight-shared contextual encoder for sentences, skills and titles.

Learned token and position embeddings feed a stack of pre-norm self-attention
blocks. One set of parameters encodes every kind of text, so skill vectors
and sentence token matrices live in the same space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import ParameterSet, Tensor
from .tokenization import TokenSequence, Vocabulary, tokenize

LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    layers: int = 2
    heads: int = 2
    ff_dim: int = 128
    max_sequence_length: int = 128
    vocab_size: int = 4096
    seed: int = 0

    def __post_init__(self):
        if min(self.dim, self.layers, self.heads, self.ff_dim, self.vocab_size) <= 0:
            raise ValueError("all encoder dimensions must be positive")
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by the head count")
        if self.max_sequence_length < 4:
            raise ValueError("max_sequence_length must be at least 4")


def init_parameters(config: EncoderConfig, vocab_len: int) -> ParameterSet:
    """Fresh parameters: uniform(-0.05, 0.05) weights, identity layer norms."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    d, ff = config.dim, config.ff_dim
    params = ParameterSet()

    def uniform(name: str, *shape: int) -> None:
        params.add(name, rng.uniform(-0.05, 0.05, size=shape))

    def norm_pair(prefix: str) -> None:
        params.add(f"{prefix}.gain", np.ones(d))
        params.add(f"{prefix}.bias", np.zeros(d))

    uniform("tok_emb", vocab_len, d)
    uniform("pos_emb", config.max_sequence_length, d)
    for i in range(config.layers):
        norm_pair(f"layer{i}.ln1")
        for proj in ("wq", "wk", "wv", "wo"):
            uniform(f"layer{i}.attn.{proj}", d, d)
            if proj != "wk":
                # the key bias shifts every softmax row uniformly, so its
                # gradient is identically zero; it is omitted
                params.add(f"layer{i}.attn.{proj[1]}b", np.zeros(d))
        norm_pair(f"layer{i}.ln2")
        uniform(f"layer{i}.ffn.w1", d, ff)
        params.add(f"layer{i}.ffn.b1", np.zeros(ff))
        uniform(f"layer{i}.ffn.w2", ff, d)
        params.add(f"layer{i}.ffn.b2", np.zeros(d))
    norm_pair("final_ln")
    return params


def _layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return ag.add(ag.mul(ag.normalize_rows(x, LAYER_NORM_EPS), gain), bias)


def _self_attention(x: Tensor, params: ParameterSet, layer: int, heads: int) -> Tensor:
    prefix = f"layer{layer}.attn"
    q = ag.add(ag.matmul(x, params[f"{prefix}.wq"]), params[f"{prefix}.qb"])
    k = ag.matmul(x, params[f"{prefix}.wk"])
    v = ag.add(ag.matmul(x, params[f"{prefix}.wv"]), params[f"{prefix}.vb"])
    head_dim = q.shape[1] // heads
    outputs = []
    for h in range(heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
        logits = ag.mul(ag.matmul(qh, kh.T), 1.0 / np.sqrt(head_dim))
        outputs.append(ag.matmul(ag.softmax(logits, axis=-1), vh))
    merged = ag.concat(outputs, axis=1)
    return ag.add(ag.matmul(merged, params[f"{prefix}.wo"]), params[f"{prefix}.ob"])


def encode(seq: TokenSequence, params: ParameterSet, config: EncoderConfig) -> Tensor:
    """Contextual token representations, shape (len(seq), dim).

    Pure function of (parameters, input): identical calls produce bitwise
    identical outputs.
    """
    if len(seq) > config.max_sequence_length:
        raise ValueError(
            f"sequence of length {len(seq)} exceeds maximum {config.max_sequence_length}"
        )
    ids = np.asarray(seq.ids, dtype=np.intp)
    h = ag.add(ag.embedding(params["tok_emb"], ids), params["pos_emb"][: len(ids), :])
    for i in range(config.layers):
        attended = _self_attention(
            _layer_norm(h, params[f"layer{i}.ln1.gain"], params[f"layer{i}.ln1.bias"]),
            params, i, config.heads,
        )
        h = ag.add(h, attended)
        normed = _layer_norm(h, params[f"layer{i}.ln2.gain"], params[f"layer{i}.ln2.bias"])
        hidden = ag.gelu(ag.add(ag.matmul(normed, params[f"layer{i}.ffn.w1"]),
                                params[f"layer{i}.ffn.b1"]))
        h = ag.add(h, ag.add(ag.matmul(hidden, params[f"layer{i}.ffn.w2"]),
                             params[f"layer{i}.ffn.b2"]))
    return _layer_norm(h, params["final_ln.gain"], params["final_ln.bias"])


@dataclass(frozen=True)
class TokenEmbeddings:
    """Encoded token matrix plus the aligned template mask and surfaces."""

    matrix: np.ndarray
    template_mask: np.ndarray
    surfaces: tuple[str, ...]

    def __post_init__(self):
        if self.matrix.shape[0] != self.template_mask.shape[0]:
            raise ValueError("matrix rows must align with the template mask")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("token embeddings must be finite")

    def __len__(self) -> int:
        return self.matrix.shape[0]


@dataclass
class Model:
    """A trained (or freshly initialized) encoder with its vocabulary."""

    vocab: Vocabulary
    params: ParameterSet
    config: EncoderConfig
    _skill_matrix_cache: dict = field(default_factory=dict, repr=False)

    def sequence(self, text: str) -> TokenSequence:
        return tokenize(text, self.vocab, self.config.max_sequence_length)

    def encode_text(self, text: str) -> Tensor:
        return encode(self.sequence(text), self.params, self.config)

    def token_embeddings(self, text: str) -> TokenEmbeddings:
        seq = self.sequence(text)
        with ag.no_grad():
            matrix = encode(seq, self.params, self.config).values
        return TokenEmbeddings(
            matrix=matrix,
            template_mask=np.asarray(seq.template_mask, dtype=bool),
            surfaces=seq.surfaces,
        )

    def skill_vector_node(self, text: str) -> Tensor:
        """Differentiable skill embedding: mean over all token rows."""
        return ag.mean(self.encode_text(text), axis=0)

    def skill_vector(self, text: str) -> np.ndarray:
        with ag.no_grad():
            return self.skill_vector_node(text).values


def embed_skill(text: str, model: Model) -> np.ndarray:
    """Skill (or any short label) embedding: average of all its token rows,
    template positions included."""
    return model.skill_vector(text)
