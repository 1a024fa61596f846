"""Error classifiers: pretrained language models with a linear head, and a
character-level GRU baseline.

Encoders (BERT-style) classify from the hidden state of their leading
classification token.  Decoders (GPT-2-style) classify from the hidden state
at the last non-padding position.  Either way the head is one affine map
``hidden_size -> num_classes`` trained from scratch while the base model is
fine-tuned.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .inputs import DEFAULT_MAX_TOKENS, LITERAL_SEPARATOR, InputMode, SerializedInput, build_input

CACHE_ENV = "ALGEBRA_ERRORS_MODEL_CACHE"

# short names for the checkpoints compared in the experiments
REGISTRY = {
    "bert": "bert-base-uncased",
    "gpt2": "gpt2",
    "mathbert": "tbs17/MathBERT",
    "xlm-roberta": "xlm-roberta-base",
}
GRU_NAMES = {"gru", "char_gru", "gru+c"}
DECODER_TYPES = {"gpt2", "gpt_neo", "gptj", "gpt_neox", "llama", "mistral", "opt", "qwen2", "phi", "bloom", "falcon"}


class UnknownCheckpoint(ValueError):
    pass


class HiddenSizeMismatch(ValueError):
    pass


class OverlongInput(ValueError):
    pass


class Family(str, Enum):
    MLM_ENCODER = "mlm_encoder"
    DECODER = "autoregressive_decoder"
    CHAR_GRU = "char_gru"


@dataclass
class ModelFamily:
    family: Family
    registry_name: str | None = None
    hidden_size: int = 256

    def __post_init__(self):
        self.family = Family(self.family)
        if self.family is Family.CHAR_GRU and self.registry_name:
            raise ValueError("the character GRU is trained from scratch and takes no checkpoint")


@dataclass
class ClassifierConfig:
    model: ModelFamily
    num_classes: int
    input_mode: InputMode = InputMode.CONTROL
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int = 42
    class_names: list[str] = field(default_factory=list)
    truncate: bool = True
    # character GRU sizes
    gru_embedding: int = 64
    gru_layers: int = 1

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelFamily(**self.model)
        self.input_mode = InputMode.parse(self.input_mode)
        if self.class_names and len(self.class_names) != self.num_classes:
            raise ValueError("class_names must have num_classes entries")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["family"] = self.model.family.value
        d["input_mode"] = self.input_mode.value
        return d


@dataclass(frozen=True)
class ClassOutput:
    logits: np.ndarray
    predicted: int


def _quiet_transformers():
    from transformers.utils import logging as hf_logging

    hf_logging.set_verbosity_error()
    hf_logging.disable_progress_bar()


def resolve_model(name: str, hidden_size: int | None = None) -> ModelFamily:
    """Turn a short name, hub id or local path into a :class:`ModelFamily`."""
    if name.lower() in GRU_NAMES:
        return ModelFamily(Family.CHAR_GRU, None, hidden_size or 256)
    from transformers import AutoConfig

    _quiet_transformers()
    registry_name = REGISTRY.get(name.lower(), name)
    try:
        cfg = AutoConfig.from_pretrained(registry_name, cache_dir=os.environ.get(CACHE_ENV))
    except (OSError, ValueError) as exc:
        raise UnknownCheckpoint(f"cannot resolve checkpoint {registry_name!r}: {exc}") from exc
    decoder = cfg.model_type in DECODER_TYPES or any(
        a.endswith(("LMHeadModel", "CausalLM")) for a in (cfg.architectures or [])
    )
    size = cfg.hidden_size
    if hidden_size is not None and hidden_size != size:
        raise HiddenSizeMismatch(f"{registry_name} has hidden size {size}, not {hidden_size}")
    return ModelFamily(Family.DECODER if decoder else Family.MLM_ENCODER, registry_name, size)


class CharGRUEncoder(nn.Module):
    """Characters -> embeddings -> GRU; returns the final hidden state."""

    PAD, UNK = 0, 1

    def __init__(self, hidden_size: int = 256, embedding_dim: int = 64, num_layers: int = 1):
        super().__init__()
        self.embed = nn.Embedding(258, embedding_dim, padding_idx=self.PAD)
        self.gru = nn.GRU(embedding_dim, hidden_size, num_layers=num_layers, batch_first=True)

    @classmethod
    def char_ids(cls, text: str) -> list[int]:
        return [ord(c) + 2 if ord(c) < 256 else cls.UNK for c in text]

    def forward(self, input_ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        packed = nn.utils.rnn.pack_padded_sequence(
            self.embed(input_ids), lengths.clamp(min=1).cpu(), batch_first=True, enforce_sorted=False
        )
        _, h_n = self.gru(packed)
        return h_n[-1]


class ErrorClassifier(nn.Module):
    def __init__(self, config: ClassifierConfig, backbone: nn.Module, tokenizer=None):
        super().__init__()
        self.config = config
        self.backbone = backbone
        self.tokenizer = tokenizer
        hidden = config.model.hidden_size
        self.head = nn.Linear(hidden, config.num_classes)
        bound = 1.0 / math.sqrt(hidden)
        gen = torch.Generator().manual_seed(config.seed)
        with torch.no_grad():
            self.head.weight.uniform_(-bound, bound, generator=gen)
            self.head.bias.zero_()

    @property
    def family(self) -> Family:
        return self.config.model.family

    @property
    def separator(self) -> str:
        if self.family is Family.MLM_ENCODER and getattr(self.tokenizer, "sep_token", None):
            return self.tokenizer.sep_token
        return LITERAL_SEPARATOR

    def count_tokens(self, text: str) -> int:
        if self.tokenizer is None:
            return len(text)
        return len(self.tokenizer(text)["input_ids"])

    def conventions(self) -> dict:
        """Padding and pooling conventions, for run reports."""
        if self.family is Family.CHAR_GRU:
            return {"pooling": "final_gru_state", "padding_side": "right", "pad_token": "<pad>"}
        return {
            "pooling": "last_non_pad_position" if self.family is Family.DECODER else "first_token",
            "padding_side": self.tokenizer.padding_side,
            "pad_token": self.tokenizer.pad_token,
            "separator": self.separator,
        }

    def serialize(self, record) -> SerializedInput:
        return build_input(
            record,
            self.config.input_mode,
            separator=self.separator,
            count_tokens=self.count_tokens,
            max_tokens=self.config.max_tokens,
        )

    def encode(self, texts: Sequence[str]) -> dict[str, torch.Tensor]:
        if not self.config.truncate:
            for t in texts:
                if self.count_tokens(t) > self.config.max_tokens:
                    raise OverlongInput(f"input of {self.count_tokens(t)} tokens exceeds {self.config.max_tokens}")
        if self.family is Family.CHAR_GRU:
            ids = [CharGRUEncoder.char_ids(t)[: self.config.max_tokens] for t in texts]
            lengths = torch.tensor([len(x) for x in ids])
            batch = torch.zeros(len(ids), max(1, int(lengths.max())), dtype=torch.long)
            for i, x in enumerate(ids):
                batch[i, : len(x)] = torch.tensor(x, dtype=torch.long)
            return {"input_ids": batch, "lengths": lengths}
        enc = self.tokenizer(
            list(texts), padding=True, truncation=True, max_length=self.config.max_tokens, return_tensors="pt"
        )
        return {"input_ids": enc["input_ids"], "attention_mask": enc["attention_mask"]}

    def features(self, batch: dict[str, torch.Tensor]) -> torch.Tensor:
        if self.family is Family.CHAR_GRU:
            return self.backbone(batch["input_ids"], batch["lengths"])
        out = self.backbone(input_ids=batch["input_ids"], attention_mask=batch["attention_mask"])
        hidden = out.last_hidden_state
        if self.family is Family.MLM_ENCODER:
            return hidden[:, 0]
        last = batch["attention_mask"].sum(dim=1) - 1
        return hidden[torch.arange(hidden.size(0)), last]

    def forward(self, batch: dict[str, torch.Tensor]) -> torch.Tensor:
        return self.head(self.features(batch))

    @torch.no_grad()
    def classify(self, inputs: Sequence[SerializedInput], batch_size: int = 256) -> list[ClassOutput]:
        if not inputs:
            raise ValueError("empty batch")
        was_training = self.training
        self.eval()
        outputs = []
        device = self.head.weight.device
        try:
            for start in range(0, len(inputs), batch_size):
                chunk = [x.text for x in inputs[start : start + batch_size]]
                batch = {k: v.to(device) for k, v in self.encode(chunk).items()}
                logits = self(batch).double().cpu().numpy()
                outputs.extend(ClassOutput(row, int(np.argmax(row))) for row in logits)
        finally:
            self.train(was_training)
        return outputs

    def save(self, directory: str | Path) -> Path:
        """Write config, head and base weights so :func:`load_classifier` can rebuild."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.json").write_text(json.dumps(self.config.to_dict(), indent=2) + "\n", "utf-8")
        torch.save(self.head.state_dict(), directory / "head.pt")
        if self.family is Family.CHAR_GRU:
            torch.save(self.backbone.state_dict(), directory / "encoder.pt")
        else:
            self.backbone.save_pretrained(directory / "backbone")
            self.tokenizer.save_pretrained(directory / "backbone")
        return directory


def _load_backbone(family: ModelFamily, source: str):
    from transformers import AutoModel, AutoTokenizer

    _quiet_transformers()
    cache = os.environ.get(CACHE_ENV)
    try:
        tokenizer = AutoTokenizer.from_pretrained(source, cache_dir=cache)
        if family.family is Family.MLM_ENCODER:
            try:
                backbone = AutoModel.from_pretrained(source, cache_dir=cache, add_pooling_layer=False)
            except TypeError:
                backbone = AutoModel.from_pretrained(source, cache_dir=cache)
        else:
            backbone = AutoModel.from_pretrained(source, cache_dir=cache)
    except OSError as exc:
        raise UnknownCheckpoint(f"cannot load checkpoint {source!r}: {exc}") from exc
    if backbone.config.hidden_size != family.hidden_size:
        raise HiddenSizeMismatch(f"{source} has hidden size {backbone.config.hidden_size}, not {family.hidden_size}")
    if family.family is Family.DECODER:
        if tokenizer.pad_token is None:
            tokenizer.pad_token = tokenizer.eos_token
        tokenizer.padding_side = "right"
    return backbone, tokenizer


def build_classifier(config: ClassifierConfig, weights_from: str | Path | None = None) -> ErrorClassifier:
    """Fresh head on a pretrained base (or a from-scratch character GRU).

    ``weights_from`` overrides where base weights are read, e.g. a
    domain-adapted copy of ``config.model.registry_name``.
    """
    if config.num_classes < 1:
        raise ValueError("need at least one class")
    model = config.model
    if model.family is Family.CHAR_GRU:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            encoder = CharGRUEncoder(model.hidden_size, config.gru_embedding, config.gru_layers)
        return ErrorClassifier(config, encoder)
    backbone, tokenizer = _load_backbone(model, str(weights_from or model.registry_name))
    return ErrorClassifier(config, backbone, tokenizer)


def load_classifier(directory: str | Path) -> ErrorClassifier:
    directory = Path(directory)
    config = ClassifierConfig(**json.loads((directory / "config.json").read_text("utf-8")))
    if config.model.family is Family.CHAR_GRU:
        clf = build_classifier(config)
        clf.backbone.load_state_dict(torch.load(directory / "encoder.pt", weights_only=True))
    else:
        clf = build_classifier(config, weights_from=directory / "backbone")
    clf.head.load_state_dict(torch.load(directory / "head.pt", weights_only=True))
    return clf


def forward(handle: ErrorClassifier, batch: Sequence[SerializedInput]) -> list[ClassOutput]:
    return handle.classify(batch)


def char_gru_forward(handle: ErrorClassifier, batch: Sequence[SerializedInput]) -> list[ClassOutput]:
    if handle.family is not Family.CHAR_GRU:
        raise TypeError("char_gru_forward needs a character GRU classifier")
    return handle.classify(batch)
