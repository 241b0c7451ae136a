"""Masked-LM backends: tokenizer, embeddings, determinism, checkpoints."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from verbkit.backend import (
    MASK_MARKER,
    HFMaskedLM,
    TinyMaskedLM,
    build_vocab,
    load_backend,
    normalize_tokens,
    parameter_hash,
)
from verbkit.errors import BackendError

VOCAB = ["alpha", "beta", "field", "gamma", "of", "related", "study", "the", "this", "to"]


def tiny(dim=8, seed=0) -> TinyMaskedLM:
    return TinyMaskedLM(VOCAB, dim=dim, hidden=16, seed=seed)


class TestTokenizer:
    def test_normalization_strips_edge_punctuation(self):
        assert normalize_tokens("The STUDY, of: alpha.") == ["the", "study", "of", "alpha"]

    def test_mask_marker_survives_normalization(self):
        assert normalize_tokens(f"related to: {MASK_MARKER}.") == ["related", "to", "[mask]"]

    def test_unknown_tokens_dropped(self):
        b = tiny()
        assert b.tokenize("alpha zebra beta") == [b.vocab["alpha"], b.vocab["beta"]]

    def test_vocab_is_deterministic_and_sorted(self):
        v1 = build_vocab(["b a", "c a"])
        v2 = build_vocab(["c a", "b a"])
        assert v1 == v2 == ["a", "b", "c"]


class TestTinyBackend:
    def test_mask_hidden_is_context_mean_at_init(self):
        b = tiny()
        ids = b.tokenize("alpha beta")
        expected = torch.stack([b.token_embedding(i) for i in ids]).mean(0)
        got = b.mask_hidden(f"alpha beta {MASK_MARKER}")
        assert torch.allclose(got, expected, atol=1e-6)

    def test_mask_position_excluded_from_context(self):
        b = tiny()
        with_mask = b.mask_hidden(f"alpha {MASK_MARKER} beta")
        without = b.mask_hidden("alpha beta")
        assert torch.allclose(with_mask, without, atol=1e-7)

    def test_logits_cover_vocabulary(self):
        b = tiny()
        logits = b.mask_logits(f"alpha {MASK_MARKER}")
        assert logits.shape == (b.vocab_size,)

    def test_no_known_context_raises(self):
        b = tiny()
        with pytest.raises(BackendError):
            b.mask_hidden(f"zzz qqq {MASK_MARKER}")

    def test_same_seed_same_parameters(self):
        assert parameter_hash(tiny(seed=3)) == parameter_hash(tiny(seed=3))
        assert parameter_hash(tiny(seed=3)) != parameter_hash(tiny(seed=4))

    def test_token_embedding_bounds(self):
        b = tiny()
        with pytest.raises(BackendError):
            b.token_embedding(b.vocab_size)

    def test_deterministic_in_eval_mode(self):
        b = tiny()
        b.eval()
        prompt = f"alpha beta {MASK_MARKER}"
        first = b.mask_logits(prompt).detach().clone()
        second = b.mask_logits(prompt).detach()
        assert torch.equal(first, second)

    def test_save_load_round_trip(self, tmp_path):
        b = tiny(dim=12, seed=5)
        b.save(tmp_path / "backend")
        restored = load_backend(tmp_path / "backend")
        assert parameter_hash(restored) == parameter_hash(b)
        assert restored.vocab == b.vocab

    def test_gradients_flow_to_embeddings(self):
        b = tiny()
        loss = b.mask_logits(f"alpha beta {MASK_MARKER}").sum()
        loss.backward()
        assert b.embedding.weight.grad is not None
        assert float(b.embedding.weight.grad.abs().sum()) > 0


class TestParameterHash:
    def test_hash_changes_with_parameters(self):
        b = tiny()
        before = parameter_hash(b)
        with torch.no_grad():
            b.embedding.weight[0, 0] += 1.0
        assert parameter_hash(b) != before

    def test_hash_stable_across_calls(self):
        b = tiny()
        assert parameter_hash(b) == parameter_hash(b)


@pytest.fixture(scope="module")
def hf_backend(tmp_path_factory):
    transformers = pytest.importorskip("transformers")
    from transformers import BertConfig, BertForMaskedLM, BertTokenizer

    vocab_dir = tmp_path_factory.mktemp("hf_vocab")
    tokens = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
              "the", "field", "of", "this", "study", "is", "related", "to",
              "alpha", "beta", "gamma", "##s", "."]
    (vocab_dir / "vocab.txt").write_text("\n".join(tokens), encoding="utf-8")
    tokenizer = BertTokenizer(str(vocab_dir / "vocab.txt"), do_lower_case=True)
    config = BertConfig(
        vocab_size=len(tokens), hidden_size=16, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=32, max_position_embeddings=64,
    )
    torch.manual_seed(0)
    model = BertForMaskedLM(config)
    return HFMaskedLM(model, tokenizer, max_length=32)


class TestHFAdapter:
    def test_tokenize_known_words(self, hf_backend):
        ids = hf_backend.tokenize("the field of alpha")
        assert len(ids) == 4

    def test_mask_hidden_shape(self, hf_backend):
        h = hf_backend.mask_hidden(f"alpha is related to {MASK_MARKER}")
        assert h.shape == (16,)

    def test_mask_logits_cover_vocab(self, hf_backend):
        logits = hf_backend.mask_logits(f"alpha is related to {MASK_MARKER}")
        assert logits.shape[0] == hf_backend.model.config.vocab_size

    def test_missing_mask_raises(self, hf_backend):
        with pytest.raises(BackendError):
            hf_backend.mask_logits("no mask here")

    def test_long_prompt_keeps_trailing_mask(self, hf_backend):
        prompt = "alpha " * 100 + f"related to {MASK_MARKER}"
        logits = hf_backend.mask_logits(prompt)
        assert np.isfinite(logits.detach().numpy()).all()

    def test_eval_mode_deterministic(self, hf_backend):
        hf_backend.eval()
        prompt = f"the field of this study is related to {MASK_MARKER}"
        with torch.no_grad():
            a = hf_backend.mask_logits(prompt).numpy()
            b = hf_backend.mask_logits(prompt).numpy()
        assert np.array_equal(a, b)

    def test_parameter_hash_supported(self, hf_backend):
        assert parameter_hash(hf_backend) == parameter_hash(hf_backend)
