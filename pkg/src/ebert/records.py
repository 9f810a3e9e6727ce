"""EBRT0001 binary sample stream.

Layout: 8-byte magic ``EBRT0001`` then fixed-size little-endian records of
``u16 dna[L] | u8 ideas[L] | f32 dnase[L] | f32 mappability[L] | u8 label``
with L = 150.  Missing channels are written as zeros.  A sidecar
``<out>.index.tsv`` carries the bin coordinates of every record.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .tokenizer import TokenizedPair

MAGIC = b"EBRT0001"
RECORD_LEN = 150


def record_dtype(l_input: int = RECORD_LEN) -> np.dtype:
    return np.dtype(
        [
            ("dna", "<u2", (l_input,)),
            ("ideas", "u1", (l_input,)),
            ("dnase", "<f4", (l_input,)),
            ("mappability", "<f4", (l_input,)),
            ("label", "u1"),
        ]
    )


@dataclass(frozen=True)
class IndexRow:
    chrom: str
    start: int
    end: int
    label: int


def encode_records(pairs: Iterable[TokenizedPair], labels: Iterable[int]) -> np.ndarray:
    pairs = list(pairs)
    labels = list(labels)
    if len(pairs) != len(labels):
        raise ValueError("pairs and labels differ in length")
    recs = np.zeros(len(pairs), dtype=record_dtype())
    for i, (p, y) in enumerate(zip(pairs, labels)):
        if p.dna_ids.shape[0] != RECORD_LEN:
            raise ValueError(f"record stream requires l_input={RECORD_LEN}")
        if p.dna_ids.max(initial=0) > np.iinfo(np.uint16).max:
            raise ValueError("token id does not fit in u16 (k too large for the record stream)")
        recs[i]["dna"] = p.dna_ids
        if p.ideas_ids is not None:
            recs[i]["ideas"] = p.ideas_ids
        if p.aux is not None:
            recs[i]["dnase"] = p.aux[:, 0]
            recs[i]["mappability"] = p.aux[:, 1]
        recs[i]["label"] = y
    return recs


def write_records(path, pairs, labels, index: Iterable[IndexRow] | None = None) -> int:
    recs = encode_records(pairs, labels)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(recs.tobytes())
    if index is not None:
        with open(index_path(path), "w") as fh:
            fh.write("chrom\tstart\tend\tlabel\n")
            for r in index:
                fh.write(f"{r.chrom}\t{r.start}\t{r.end}\t{r.label}\n")
    return len(recs)


def index_path(path) -> Path:
    return Path(str(path) + ".index.tsv")


def read_records(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:8]!r}")
    dt = record_dtype()
    body = raw[8:]
    if len(body) % dt.itemsize:
        raise ValueError(f"{path}: truncated record stream")
    return np.frombuffer(body, dtype=dt)


def read_index(path) -> list[IndexRow]:
    rows = []
    with open(index_path(path)) as fh:
        next(fh)
        for line in fh:
            c, s, e, y = line.split()
            rows.append(IndexRow(c, int(s), int(e), int(y)))
    return rows


def to_pairs(recs: np.ndarray, with_ideas: bool = True, with_aux: bool = False) -> list[TokenizedPair]:
    """Rebuild TokenizedPairs; the attention mask is the non-PAD prefix."""
    out = []
    for r in recs:
        dna = r["dna"].astype(np.int64)
        mask = (dna != 0).astype(np.uint8)
        aux = np.stack([r["dnase"], r["mappability"]], axis=1).astype(np.float32) if with_aux else None
        out.append(
            TokenizedPair(
                dna_ids=dna,
                attention_mask=mask,
                ideas_ids=r["ideas"].copy() if with_ideas else None,
                aux=aux,
            )
        )
    return out
