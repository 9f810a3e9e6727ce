"""k-mer tokenization of DNA windows with aligned IDEAS and auxiliary pooling.

Token ``i`` always describes the bp span ``[i*stride, i*stride + k)`` of the
window, in every channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .genome_io import N_IDEAS_STATES, WINDOW_LEN, SampleWindow

PAD, MASK, UNK = 0, 1, 2
DNA_OFFSET = 3
MAX_K = 10

# byte -> base digit; anything other than ACGT maps to 4 (unknown)
_DIGITS = np.full(256, 4, dtype=np.uint8)
for _i, _b in enumerate(b"ACGT"):
    _DIGITS[_b] = _i
    _DIGITS[ord(chr(_b).lower())] = _i


@dataclass(frozen=True)
class TokenizerConfig:
    k: int = 7
    stride: int = 7
    l_input: int = 150
    window_len: int = WINDOW_LEN

    def __post_init__(self):
        if not 1 <= self.k <= MAX_K:
            raise ValueError(f"k must be in [1, {MAX_K}], got {self.k}")
        if not 1 <= self.stride <= self.k:
            raise ValueError(f"stride must be in [1, k], got {self.stride}")
        if self.window_len < self.k:
            raise ValueError("window shorter than k")
        if self.l_input < self.n_tokens(self.window_len):
            raise ValueError(
                f"l_input={self.l_input} cannot hold {self.n_tokens(self.window_len)} tokens"
            )

    def n_tokens(self, length: int) -> int:
        """Unpadded token count for a sequence of ``length`` bp."""
        return (length - self.k) // self.stride + 1


@dataclass(frozen=True)
class Vocab:
    k: int

    def __post_init__(self):
        if not 1 <= self.k <= MAX_K:
            raise ValueError(f"k must be in [1, {MAX_K}], got {self.k}")

    pad = PAD
    mask = MASK
    unk = UNK
    dna_offset = DNA_OFFSET

    @property
    def n_kmers(self) -> int:
        return 4**self.k

    @property
    def size(self) -> int:
        return self.n_kmers + DNA_OFFSET

    @cached_property
    def _powers(self) -> np.ndarray:
        return (4 ** np.arange(self.k - 1, -1, -1)).astype(np.int64)

    def encode(self, kmer: str) -> int:
        if len(kmer) != self.k:
            raise ValueError(f"expected a {self.k}-mer, got {kmer!r}")
        digits = _DIGITS[np.frombuffer(kmer.encode("ascii"), dtype=np.uint8)]
        if (digits > 3).any():
            return UNK
        return int(digits.astype(np.int64) @ self._powers) + DNA_OFFSET

    def decode(self, token: int) -> str:
        if not DNA_OFFSET <= token < self.size:
            raise ValueError(f"{token} is not a DNA k-mer id")
        v = token - DNA_OFFSET
        out = []
        for _ in range(self.k):
            v, d = divmod(v, 4)
            out.append("ACGT"[d])
        return "".join(reversed(out))

    def is_dna(self, ids: np.ndarray) -> np.ndarray:
        return (ids >= DNA_OFFSET) & (ids < self.size)


def build_vocab(k: int) -> Vocab:
    return Vocab(k)


@dataclass(frozen=True)
class TokenizedPair:
    dna_ids: np.ndarray  # int64 [l_input]
    attention_mask: np.ndarray  # uint8 [l_input], 1 on a prefix
    ideas_ids: np.ndarray | None = None  # uint8 [l_input]
    aux: np.ndarray | None = None  # float32 [l_input, 2]: (dnase, mappability)

    @property
    def n_real(self) -> int:
        return int(self.attention_mask.sum())


def _windows(arr: np.ndarray, cfg: TokenizerConfig) -> np.ndarray:
    """[n_tok, k] view of the token spans, truncated to l_input."""
    n = min(cfg.n_tokens(len(arr)), cfg.l_input)
    return sliding_window_view(arr, cfg.k)[:: cfg.stride][:n]


def tokenize_dna(seq: str, cfg: TokenizerConfig, vocab: Vocab) -> tuple[np.ndarray, np.ndarray]:
    if len(seq) < cfg.k:
        raise ValueError(f"sequence of length {len(seq)} is shorter than k={cfg.k}")
    if vocab.k != cfg.k:
        raise ValueError(f"vocab k={vocab.k} does not match tokenizer k={cfg.k}")
    digits = _DIGITS[np.frombuffer(seq.encode("ascii"), dtype=np.uint8)]
    win = _windows(digits, cfg)
    ids = np.full(cfg.l_input, PAD, dtype=np.int64)
    n = win.shape[0]
    kmer = win.astype(np.int64) @ vocab._powers + DNA_OFFSET
    kmer[(win > 3).any(axis=1)] = UNK
    ids[:n] = kmer
    mask = np.zeros(cfg.l_input, dtype=np.uint8)
    mask[:n] = 1
    return ids, mask


def pool_ideas(states_per_bp: np.ndarray, cfg: TokenizerConfig) -> np.ndarray:
    """Modal IDEAS state per token span; ties go to the smallest state id."""
    states = np.asarray(states_per_bp)
    if states.size and int(states.max()) >= N_IDEAS_STATES:
        raise ValueError("state id out of range")
    win = _windows(states.astype(np.intp), cfg)
    n = win.shape[0]
    counts = np.zeros((n, N_IDEAS_STATES), dtype=np.int32)
    np.add.at(counts, (np.repeat(np.arange(n), cfg.k), win.ravel()), 1)
    out = np.zeros(cfg.l_input, dtype=np.uint8)
    out[:n] = counts.argmax(axis=1)  # argmax returns the first (smallest) maximal state
    return out


def pool_auxiliary(signal_per_bp: np.ndarray, cfg: TokenizerConfig, mode: str) -> np.ndarray:
    """Per-token max or min of a bp-resolution signal.  PAD positions are 0."""
    if mode not in ("max", "min"):
        raise ValueError(f"mode must be 'max' or 'min', got {mode!r}")
    win = _windows(np.asarray(signal_per_bp, dtype=np.float32), cfg)
    out = np.zeros(cfg.l_input, dtype=np.float32)
    out[: win.shape[0]] = win.max(axis=1) if mode == "max" else win.min(axis=1)
    return out


def tokenize_window(
    w: SampleWindow,
    cfg: TokenizerConfig,
    vocab: Vocab,
    with_aux: bool = False,
    with_ideas: bool = True,
) -> TokenizedPair:
    n = len(w.dna)
    if n != cfg.window_len:
        raise ValueError(f"window length {n} != configured {cfg.window_len}")
    for name in ("ideas_states", "dnase", "mappability"):
        if len(getattr(w, name)) != n:
            raise ValueError(f"{name} length {len(getattr(w, name))} != {n}")
    dna_ids, mask = tokenize_dna(w.dna, cfg, vocab)
    ideas = pool_ideas(w.ideas_states, cfg) if with_ideas else None
    aux = None
    if with_aux:
        aux = np.stack(
            [pool_auxiliary(w.dnase, cfg, "max"), pool_auxiliary(w.mappability, cfg, "min")],
            axis=1,
        )
    return TokenizedPair(dna_ids=dna_ids, attention_mask=mask, ideas_ids=ideas, aux=aux)
