"""NLI sentence-pair encoders used to filter retrieved label terms.

Source NLI corpora carry richer label sets; they are collapsed to a binary
entailment/contradiction scheme first. Two encoders are trained on the binary
pairs: a bi-encoder producing unit-norm sentence embeddings compared by
cosine, and a cross-encoder scoring a sentence pair jointly in [0, 1].
"""

from __future__ import annotations

import enum
import hashlib
import json
import random
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from .backend import build_vocab, normalize_tokens
from .errors import ConfigError, TrainingError

UNK_TOKEN = "<unk>"


class NLILabel(str, enum.Enum):
    ENTAILMENT = "entailment"
    CONTRADICTION = "contradiction"


# Source label scheme: entailment / contrasting / reasoning / neutral.
# Only the first two carry a clean binary signal; the rest are dropped.
DEFAULT_LABEL_MAP = {
    "entailment": NLILabel.ENTAILMENT,
    "contrasting": NLILabel.CONTRADICTION,
}


@dataclass(frozen=True)
class NLIPair:
    premise: str
    hypothesis: str
    label: NLILabel

    def __post_init__(self):
        if not self.premise.strip() or not self.hypothesis.strip():
            raise ConfigError("NLI pair sentences must be non-empty")


def binarize_pairs(
    raw_examples: list[tuple[str, str, str]],
    label_map: dict[str, NLILabel] | None = None,
) -> tuple[list[NLIPair], dict[str, int]]:
    """Map raw (premise, hypothesis, label) triples onto the binary scheme.

    Returns the mapped pairs plus a count of dropped examples per raw label.
    """
    mapping = DEFAULT_LABEL_MAP if label_map is None else label_map
    pairs: list[NLIPair] = []
    dropped: dict[str, int] = {}
    for premise, hypothesis, raw_label in raw_examples:
        key = raw_label.strip().lower()
        if key in mapping:
            pairs.append(NLIPair(premise, hypothesis, mapping[key]))
        else:
            dropped[key] = dropped.get(key, 0) + 1
    if not pairs:
        raise ConfigError(
            f"no usable pairs after binarization; dropped labels: {sorted(dropped) or 'none'}"
        )
    return pairs, dropped


def load_raw_pairs(path: str | Path) -> list[tuple[str, str, str]]:
    """Read {premise, hypothesis, label} JSONL."""
    raw = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                raw.append((rec["premise"], rec["hypothesis"], rec["label"]))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ConfigError(f"{path}:{line_no}: bad pair record ({e})") from e
    return raw


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 32
    hidden: int = 64
    epochs: int = 5
    learning_rate: float = 3e-5
    batch_size: int = 5
    max_length: int = 256
    seed: int = 0

    def hash(self) -> str:
        doc = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(doc.encode("utf-8")).hexdigest()


class _TextNet(nn.Module):
    """Bag-of-tokens sentence encoder; unknown tokens map to a shared slot."""

    def __init__(self, vocab: list[str], config: EncoderConfig):
        super().__init__()
        self.vocab_tokens = [UNK_TOKEN] + list(vocab)
        self.vocab = {tok: i for i, tok in enumerate(self.vocab_tokens)}
        self.config = config
        g = torch.Generator().manual_seed(config.seed)
        v, d, h = len(self.vocab_tokens), config.dim, config.hidden
        self.embedding = nn.Embedding(v, d)
        self.fc1 = nn.Linear(d, h)
        self.fc2 = nn.Linear(h, d)
        with torch.no_grad():
            self.embedding.weight.copy_(torch.randn(v, d, generator=g) * d**-0.5)
            self.fc1.weight.copy_(torch.randn(h, d, generator=g) * 0.1)
            self.fc1.bias.zero_()
            self.fc2.weight.zero_()
            self.fc2.bias.zero_()

    def token_ids(self, sentence: str) -> list[int]:
        toks = normalize_tokens(sentence)[: self.config.max_length]
        if not toks:
            raise ConfigError("cannot encode an empty sentence")
        return [self.vocab.get(t, 0) for t in toks]

    def embed(self, sentence: str) -> torch.Tensor:
        ids = torch.tensor(self.token_ids(sentence), dtype=torch.long)
        m = self.embedding(ids).mean(dim=0)
        return m + self.fc2(torch.tanh(self.fc1(m)))


def _pair_batches(pairs: list[NLIPair], batch_size: int, rng: random.Random):
    order = list(range(len(pairs)))
    rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield [pairs[i] for i in order[start : start + batch_size]]


class BiEncoder:
    """Sentence embedder trained to push entailed pairs together."""

    kind = "bi"

    def __init__(self, net: _TextNet, config: EncoderConfig, trained_on: str = ""):
        self.net = net
        self.config = config
        self.trained_on = trained_on

    def encode(self, sentence: str) -> torch.Tensor:
        """Unit-norm embedding of one sentence."""
        self.net.eval()
        with torch.no_grad():
            v = self.net.embed(sentence)
            return v / v.norm()

    def similarity(self, a: str, b: str) -> float:
        return float(self.encode(a) @ self.encode(b))

    def save(self, path: str | Path) -> None:
        _save_encoder(self, path)

    @classmethod
    def load(cls, path: str | Path) -> "BiEncoder":
        return _load_encoder(cls, path)


class CrossEncoder:
    """Joint pair scorer with output in [0, 1].

    Trained toward 1 for contradiction and 0 for entailment, so a LOW score
    marks a relevant (entailment-like) pair; the semantic filter keeps terms
    scoring below its threshold.
    """

    kind = "cross"

    def __init__(self, net: _TextNet, config: EncoderConfig, trained_on: str = ""):
        self.net = net
        d = config.dim
        self.head = nn.Sequential(nn.Linear(4 * d, config.hidden), nn.Tanh(), nn.Linear(config.hidden, 1))
        g = torch.Generator().manual_seed(config.seed + 1)
        with torch.no_grad():
            for layer in (self.head[0], self.head[2]):
                layer.weight.copy_(torch.randn(layer.weight.shape, generator=g) * 0.1)
                layer.bias.zero_()
        self.config = config
        self.trained_on = trained_on

    def _logit(self, a: str, b: str) -> torch.Tensor:
        ea, eb = self.net.embed(a), self.net.embed(b)
        feats = torch.cat([ea, eb, (ea - eb).abs(), ea * eb])
        return self.head(feats).squeeze(-1)

    def score(self, a: str, b: str) -> float:
        self.net.eval()
        with torch.no_grad():
            return float(torch.sigmoid(self._logit(a, b)))

    def save(self, path: str | Path) -> None:
        _save_encoder(self, path)

    @classmethod
    def load(cls, path: str | Path) -> "CrossEncoder":
        return _load_encoder(cls, path)


def _pairs_fingerprint(pairs: list[NLIPair]) -> str:
    h = hashlib.sha256()
    for p in pairs:
        h.update(f"{p.premise}\t{p.hypothesis}\t{p.label.value}\n".encode("utf-8"))
    return f"{len(pairs)} pairs sha256:{h.hexdigest()[:12]}"


def train_bi_encoder(pairs: list[NLIPair], config: EncoderConfig | None = None) -> BiEncoder:
    """Fit the bi-encoder: cosine toward +1 for entailment, -1 for contradiction."""
    if not pairs:
        raise TrainingError("cannot train a bi-encoder on zero pairs")
    config = config or EncoderConfig()
    net = _TextNet(build_vocab([p.premise for p in pairs] + [p.hypothesis for p in pairs]), config)
    rng = random.Random(config.seed)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    net.train()
    for _ in range(config.epochs):
        for batch in _pair_batches(pairs, config.batch_size, rng):
            losses = []
            for p in batch:
                ea, eb = net.embed(p.premise), net.embed(p.hypothesis)
                cos = torch.nn.functional.cosine_similarity(ea, eb, dim=0)
                target = 1.0 if p.label is NLILabel.ENTAILMENT else -1.0
                losses.append((cos - target) ** 2)
            loss = torch.stack(losses).mean()
            if not torch.isfinite(loss):
                raise TrainingError("bi-encoder loss diverged (non-finite)")
            opt.zero_grad()
            loss.backward()
            opt.step()
    return BiEncoder(net, config, trained_on=_pairs_fingerprint(pairs))


def train_cross_encoder(pairs: list[NLIPair], config: EncoderConfig | None = None) -> CrossEncoder:
    """Fit the cross-encoder: binary cross-entropy with contradiction as the positive."""
    if not pairs:
        raise TrainingError("cannot train a cross-encoder on zero pairs")
    config = config or EncoderConfig()
    net = _TextNet(build_vocab([p.premise for p in pairs] + [p.hypothesis for p in pairs]), config)
    enc = CrossEncoder(net, config, trained_on=_pairs_fingerprint(pairs))
    rng = random.Random(config.seed)
    params = list(net.parameters()) + list(enc.head.parameters())
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    net.train()
    bce = nn.BCEWithLogitsLoss()
    for _ in range(config.epochs):
        for batch in _pair_batches(pairs, config.batch_size, rng):
            logits = torch.stack([enc._logit(p.premise, p.hypothesis) for p in batch])
            targets = torch.tensor(
                [1.0 if p.label is NLILabel.CONTRADICTION else 0.0 for p in batch]
            )
            loss = bce(logits, targets)
            if not torch.isfinite(loss):
                raise TrainingError("cross-encoder loss diverged (non-finite)")
            opt.zero_grad()
            loss.backward()
            opt.step()
    return enc


# -- persistence -------------------------------------------------------------


def _save_encoder(enc, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {"kind": enc.kind, "trained_on": enc.trained_on, "config_hash": enc.config.hash()}
    (path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True), encoding="utf-8")
    (path / "config.json").write_text(json.dumps(asdict(enc.config), sort_keys=True), encoding="utf-8")
    (path / "vocab.json").write_text(
        json.dumps(enc.net.vocab_tokens[1:], ensure_ascii=False), encoding="utf-8"
    )
    state = {"net": enc.net.state_dict()}
    if isinstance(enc, CrossEncoder):
        state["head"] = enc.head.state_dict()
    torch.save(state, path / "weights.pt")


def _load_encoder(cls, path: str | Path):
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        config = EncoderConfig(**json.loads((path / "config.json").read_text(encoding="utf-8")))
        vocab = json.loads((path / "vocab.json").read_text(encoding="utf-8"))
        state = torch.load(path / "weights.pt", weights_only=True)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise ConfigError(f"cannot load encoder from {path}: {e}") from e
    if manifest.get("kind") != cls.kind:
        raise ConfigError(f"{path} holds a {manifest.get('kind')!r} encoder, expected {cls.kind!r}")
    net = _TextNet(vocab, config)
    net.load_state_dict(state["net"])
    enc = cls(net, config, trained_on=manifest.get("trained_on", ""))
    if isinstance(enc, CrossEncoder):
        enc.head.load_state_dict(state["head"])
    return enc


def load_encoder(path: str | Path):
    """Open a saved encoder directory of either kind."""
    manifest_path = Path(path) / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no encoder manifest at {manifest_path}")
    kind = json.loads(manifest_path.read_text(encoding="utf-8")).get("kind")
    if kind == BiEncoder.kind:
        return BiEncoder.load(path)
    if kind == CrossEncoder.kind:
        return CrossEncoder.load(path)
    raise ConfigError(f"unknown encoder kind {kind!r} at {path}")
