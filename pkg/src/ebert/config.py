"""Run configuration: presets plus flat ``key = value`` files.

Keys follow the hyperparameter table's row names in snake case
(``peak_learning_rate``, ``warmup_steps``, ``batch_size``, ``adam_beta1`` ...).
A file may start from a preset with ``preset = <name>``; later keys override.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .losses import LossConfig
from .model import ModelConfig
from .tokenizer import TokenizerConfig
from .training import FinetuneConfig, OptimConfig, PretrainConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # tokenizer
    input_size: int = 1000
    input_sequence_length: int = 150
    kmer_size: int = 7
    tokenization_stride: int = 7
    # model
    layers: int = 2
    attention_heads: int = 2
    hidden_size: int = 32
    filter_size: int = 64
    dropout: float = 0.1
    attention_dropout: float = 0.1
    dna_only: bool = False
    with_aux: bool = False
    dtype: str = "float32"
    # optimisation
    peak_learning_rate: float = 3e-3
    warmup_steps: int = 50
    batch_size: int = 16
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_epsilon: float = 1e-4
    weight_decay: float = 0.01
    loss_scale: float = 0.0  # accepted for compatibility; mixed precision is not implemented
    # objectives and loops
    alpha: float = 0.5
    mask_rate: float = 0.15
    steps: int = 500
    checkpoint_every: int = 0
    max_epochs: int = 20
    training_class_balance: int = 10  # negatives per positive
    patience: int = 3
    min_delta: float = 1e-4
    head_only: bool = False
    seed: int = 42
    extra: dict = field(default_factory=dict, compare=False)

    # ---- derived component configs

    def tokenizer(self) -> TokenizerConfig:
        return TokenizerConfig(self.kmer_size, self.tokenization_stride, self.input_sequence_length, self.input_size)

    def model(self) -> ModelConfig:
        return ModelConfig(
            layers=self.layers, heads=self.attention_heads, hidden=self.hidden_size,
            filter_size=self.filter_size, dna_vocab=4**self.kmer_size + 3,
            ideas_vocab=0 if self.dna_only else ModelConfig.ideas_vocab,
            l_input=self.input_sequence_length, dropout=self.dropout,
            attention_dropout=self.attention_dropout, with_aux=self.with_aux, dtype=self.dtype,
        )

    def loss(self) -> LossConfig:
        return LossConfig(self.alpha)

    def optim(self) -> OptimConfig:
        return OptimConfig(self.peak_learning_rate, self.warmup_steps, self.adam_beta1,
                           self.adam_beta2, self.adam_epsilon, self.weight_decay)

    def pretrain(self) -> PretrainConfig:
        return PretrainConfig(self.steps, self.batch_size, self.mask_rate, self.alpha, self.seed,
                              self.checkpoint_every, self.optim())

    def finetune(self) -> FinetuneConfig:
        return FinetuneConfig(self.max_epochs, self.batch_size, self.training_class_balance, self.patience,
                              self.min_delta, self.head_only, self.seed, optim=self.optim())

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        d = asdict(self)
        d.pop("extra")
        return "".join(f"{k} = {d[k]}\n" for k in d)


_PRESETS: dict[str, dict] = {
    # desk-scale runs
    "tiny": {},
    "tiny_finetune": dict(peak_learning_rate=1e-3, warmup_steps=20, batch_size=32,
                          adam_beta2=0.99, adam_epsilon=1e-5),
    # published columns (BERT_BASE encoder)
    "dbert": dict(layers=12, attention_heads=12, hidden_size=768, filter_size=3072, dna_only=True,
                  peak_learning_rate=4e-4, warmup_steps=24000, batch_size=4096, loss_scale=16000),
    "ebert": dict(layers=12, attention_heads=12, hidden_size=768, filter_size=3072,
                  peak_learning_rate=6e-5, warmup_steps=30000, batch_size=8192, loss_scale=16000),
    "tf_binding": dict(layers=12, attention_heads=12, hidden_size=768, filter_size=3072,
                       peak_learning_rate=1e-4, warmup_steps=25000, batch_size=320,
                       adam_beta2=0.99, adam_epsilon=1e-5, loss_scale=16000),
}

# table row names that do not map one-to-one onto a field
_ALIASES = {
    "input_size_bp": "input_size",
    "k_mer_size": "kmer_size",
    "k": "kmer_size",
    "stride": "tokenization_stride",
    "l_input": "input_sequence_length",
    "heads": "attention_heads",
    "hidden": "hidden_size",
    "lr": "peak_learning_rate",
    "adam_eps": "adam_epsilon",
}
# accepted for completeness; fixed by the architecture
_FIXED = {"convolution_layers": 2, "dense_layers": 2, "optimizer": "adamw"}


def preset_names() -> list[str]:
    return list(_PRESETS)


def preset(name: str) -> RunConfig:
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(_PRESETS)}")
    return RunConfig(**_PRESETS[name])


def _coerce(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            if key == "training_class_balance" and ":" in raw:
                neg, pos = raw.split(":")
                return int(neg) // int(pos)
            return int(float(raw)) if float(raw).is_integer() else int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


_TYPES = {f.name: {"int": int, "float": float, "bool": bool, "str": str}.get(f.type, str)
          for f in fields(RunConfig) if f.name != "extra"}


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    updates = {}
    for key, raw in pairs.items():
        k = _ALIASES.get(key, key)
        if k in _FIXED:
            if str(raw).strip().lower() != str(_FIXED[k]):
                raise ConfigError(f"{key} is fixed at {_FIXED[k]}")
            continue
        if k not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        updates[k] = _coerce(k, str(raw), _TYPES[k])
    out = replace(cfg, **updates)
    try:
        out.tokenizer(), out.model(), out.loss()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if out.loss_scale:
        log.info("loss_scale=%g recorded but not applied (no mixed-precision path)", out.loss_scale)
    return out


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    pairs: dict[str, str] = {}
    base = "tiny"
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lower().replace(" ", "_").replace("-", "_")
        if key == "preset":
            if pairs:
                raise ConfigError(f"{source}:{lineno}: 'preset' must come before other keys")
            base = val
            continue
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = val
    return apply_overrides(preset(base), pairs)


def load_config(spec: str | None, default: str = "tiny") -> RunConfig:
    """``spec`` is a preset name, a path to a key=value file, or None."""
    if spec is None:
        return preset(default)
    if spec in _PRESETS:
        return preset(spec)
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"{spec}: neither a preset nor an existing file")
    return parse_config_text(path.read_text(), str(path))
