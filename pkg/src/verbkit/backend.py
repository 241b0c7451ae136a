"""Masked-LM backends.

A backend supplies everything the classifier needs from a masked language
model: a tokenizer, input token embeddings, the hidden state at the mask
position, and per-vocabulary logits at the mask. Two implementations ship
here: a small self-contained model for desk-scale runs and tests, and an
adapter for Hugging Face masked LMs.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Protocol, runtime_checkable

import torch
from torch import nn

from .errors import BackendError

MASK_MARKER = "[MASK]"

_EDGE_PUNCT = ".,;:!?\"'()"


def normalize_tokens(text: str) -> list[str]:
    """Lowercase whitespace tokens with edge punctuation stripped."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_EDGE_PUNCT)
        if tok:
            out.append(tok)
    return out


@runtime_checkable
class MLMBackend(Protocol):
    """What the prompt classifier requires from a masked LM."""

    def tokenize(self, text: str) -> list[int]: ...

    def token_embedding(self, token_id: int) -> torch.Tensor: ...

    def mask_hidden(self, filled_prompt: str) -> torch.Tensor: ...

    def mask_logits(self, filled_prompt: str) -> torch.Tensor: ...

    def parameters(self) -> Iterable[nn.Parameter]: ...

    def state_dict(self) -> dict: ...

    def load_state_dict(self, state: dict): ...

    def train(self, mode: bool = True): ...

    def eval(self): ...


def parameter_hash(backend) -> str:
    """Order-stable SHA-256 over all checkpointed tensors."""
    h = hashlib.sha256()
    state = backend.state_dict()
    for name in sorted(state):
        h.update(name.encode("utf-8"))
        value = state[name]
        if isinstance(value, torch.Tensor):
            h.update(value.detach().cpu().contiguous().numpy().tobytes())
        else:
            h.update(repr(value).encode("utf-8"))
    return h.hexdigest()


def build_vocab(texts: Iterable[str]) -> list[str]:
    """Deterministic vocabulary: sorted unique normalized tokens."""
    tokens: set[str] = set()
    for text in texts:
        tokens.update(normalize_tokens(text))
    tokens.discard(normalize_tokens(MASK_MARKER)[0])
    return sorted(tokens)


class TinyMaskedLM(nn.Module):
    """Small trainable masked LM over a fixed whitespace vocabulary.

    The mask hidden state is the mean of the context token embeddings plus a
    residual MLP that starts at zero, so an untrained model already relates a
    prompt to the words it contains. Mask logits tie to the embedding table.
    Unknown tokens are dropped by the tokenizer.
    """

    kind = "tiny"

    def __init__(
        self,
        vocab: list[str],
        dim: int = 32,
        hidden: int = 64,
        seed: int = 0,
        max_length: int = 256,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.mask_token = normalize_tokens(MASK_MARKER)[0]
        self.vocab_tokens = [self.mask_token] + list(vocab)
        if len(set(self.vocab_tokens)) != len(self.vocab_tokens):
            raise BackendError("vocabulary contains duplicates or the mask token")
        self.vocab = {tok: i for i, tok in enumerate(self.vocab_tokens)}
        self.mask_token_id = 0
        self.dim = dim
        self.hidden = hidden
        self.seed = seed
        self.max_length = max_length

        g = torch.Generator().manual_seed(seed)
        v = len(self.vocab_tokens)
        self.embedding = nn.Embedding(v, dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        self.out_bias = nn.Parameter(torch.zeros(v))
        with torch.no_grad():
            self.embedding.weight.copy_(torch.randn(v, dim, generator=g) * dim**-0.5)
            self.fc1.weight.copy_(torch.randn(hidden, dim, generator=g) * 0.1)
            self.fc1.bias.zero_()
            # Zero residual branch: at init mask_hidden is exactly the context mean.
            self.fc2.weight.zero_()
            self.fc2.bias.zero_()
        self.to(dtype)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab_tokens)

    def tokenize(self, text: str) -> list[int]:
        return [self.vocab[t] for t in normalize_tokens(text) if t in self.vocab]

    def token_embedding(self, token_id: int) -> torch.Tensor:
        if not 0 <= token_id < self.vocab_size:
            raise BackendError(f"token id {token_id} outside vocabulary")
        return self.embedding.weight[token_id]

    def _context_mean(self, filled_prompt: str) -> torch.Tensor:
        ids = [i for i in self.tokenize(filled_prompt) if i != self.mask_token_id]
        ids = ids[: self.max_length]
        if not ids:
            raise BackendError("prompt has no known context tokens")
        embs = self.embedding(torch.tensor(ids, dtype=torch.long))
        return embs.mean(dim=0)

    def mask_hidden(self, filled_prompt: str) -> torch.Tensor:
        m = self._context_mean(filled_prompt)
        return m + self.fc2(torch.tanh(self.fc1(m)))

    def mask_logits(self, filled_prompt: str) -> torch.Tensor:
        h = self.mask_hidden(filled_prompt)
        return self.embedding.weight @ h + self.out_bias

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        manifest = {
            "kind": self.kind,
            "dim": self.dim,
            "hidden": self.hidden,
            "seed": self.seed,
            "max_length": self.max_length,
            "vocab": self.vocab_tokens[1:],
        }
        (path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True), encoding="utf-8")
        torch.save(self.state_dict(), path / "weights.pt")

    @classmethod
    def load(cls, path: str | Path) -> "TinyMaskedLM":
        path = Path(path)
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        if manifest.get("kind") != cls.kind:
            raise BackendError(f"{path} does not hold a {cls.kind!r} backend")
        model = cls(
            vocab=manifest["vocab"],
            dim=manifest["dim"],
            hidden=manifest["hidden"],
            seed=manifest["seed"],
            max_length=manifest["max_length"],
        )
        model.load_state_dict(torch.load(path / "weights.pt", weights_only=True))
        return model


class HFMaskedLM(nn.Module):
    """Adapter for Hugging Face masked LMs (BERT-family).

    Truncation keeps the tail of the prompt so the mask slot at the end of the
    template survives long abstracts.
    """

    kind = "hf"

    def __init__(self, model, tokenizer, max_length: int = 256):
        super().__init__()
        if tokenizer.mask_token is None:
            raise BackendError("tokenizer has no mask token")
        self.model = model
        self.tokenizer = tokenizer
        self.tokenizer.truncation_side = "left"
        self.max_length = max_length
        self.mask_token_id = tokenizer.mask_token_id

    @classmethod
    def from_pretrained(cls, name_or_path: str, max_length: int = 256) -> "HFMaskedLM":
        try:
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as e:  # pragma: no cover
            raise BackendError("the 'hf' backend requires the transformers package") from e
        model = AutoModelForMaskedLM.from_pretrained(name_or_path)
        tokenizer = AutoTokenizer.from_pretrained(name_or_path)
        return cls(model, tokenizer, max_length=max_length)

    def tokenize(self, text: str) -> list[int]:
        return self.tokenizer.encode(text, add_special_tokens=False)

    def token_embedding(self, token_id: int) -> torch.Tensor:
        weight = self.model.get_input_embeddings().weight
        if not 0 <= token_id < weight.shape[0]:
            raise BackendError(f"token id {token_id} outside vocabulary")
        return weight[token_id]

    def _encode(self, filled_prompt: str):
        prompt = filled_prompt.replace(MASK_MARKER, self.tokenizer.mask_token)
        enc = self.tokenizer(
            prompt, return_tensors="pt", truncation=True, max_length=self.max_length
        )
        positions = (enc["input_ids"][0] == self.mask_token_id).nonzero(as_tuple=True)[0]
        if len(positions) == 0:
            raise BackendError("prompt contains no mask token")
        return enc, int(positions[0])

    def mask_hidden(self, filled_prompt: str) -> torch.Tensor:
        enc, pos = self._encode(filled_prompt)
        out = self.model(**enc, output_hidden_states=True)
        return out.hidden_states[-1][0, pos]

    def mask_logits(self, filled_prompt: str) -> torch.Tensor:
        enc, pos = self._encode(filled_prompt)
        return self.model(**enc).logits[0, pos]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        (path / "manifest.json").write_text(
            json.dumps({"kind": self.kind, "max_length": self.max_length}, sort_keys=True),
            encoding="utf-8",
        )
        self.model.save_pretrained(path / "model")
        self.tokenizer.save_pretrained(path / "model")

    @classmethod
    def load(cls, path: str | Path) -> "HFMaskedLM":
        path = Path(path)
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        return cls.from_pretrained(str(path / "model"), max_length=manifest["max_length"])


def load_backend(path: str | Path):
    """Open a saved backend directory of either kind."""
    manifest_path = Path(path) / "manifest.json"
    if not manifest_path.exists():
        raise BackendError(f"no backend manifest at {manifest_path}")
    kind = json.loads(manifest_path.read_text(encoding="utf-8")).get("kind")
    if kind == TinyMaskedLM.kind:
        return TinyMaskedLM.load(path)
    if kind == HFMaskedLM.kind:
        return HFMaskedLM.load(path)
    raise BackendError(f"unknown backend kind {kind!r} at {path}")
