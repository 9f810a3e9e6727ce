"""Readers for reference sequence, IDEAS segmentation, signal and label files.

All coordinates are 0-based, half-open.  Parsed tracks are plain frozen
dataclasses around numpy arrays and are safe to share between threads.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

IDEAS_RESOLUTION = 200
N_IDEAS_STATES = 36
BIN_WIDTH = 200
BIN_STRIDE = 50
FLANK = 400
WINDOW_LEN = BIN_WIDTH + 2 * FLANK

PRETRAIN_EVAL = ("chr8", "chr21")
FINETUNE_EVAL = ("chr1", "chr8", "chr21")
FINETUNE_TRAIN = tuple(f"chr{i}" for i in range(2, 23) if i not in (8, 21)) + ("chrX",)
NEVER_USED = ("chrY", "chrM")


class ParseError(ValueError):
    """Malformed input file.  ``line`` is 1-based, 0 when not line-specific."""

    def __init__(self, path: str, line: int, message: str):
        self.path = str(path)
        self.line = line
        where = f"{path}, line {line}" if line else str(path)
        super().__init__(f"{where}: {message}")


class MissingFileError(ParseError, FileNotFoundError):
    pass


class EmptyFileError(ParseError):
    pass


class OrphanSequenceError(ParseError):
    """Sequence data appeared before any FASTA header."""


class TrackError(KeyError):
    """A chromosome requested from a track is not present."""


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class GenomeAssembly:
    chromosomes: dict[str, str]

    def __post_init__(self):
        for name, seq in self.chromosomes.items():
            if not name:
                raise ValueError("empty chromosome name")
            bad = set(seq) - set("ACGTN")
            if bad:
                raise ValueError(f"{name}: invalid bases {sorted(bad)}")

    def __contains__(self, name: str) -> bool:
        return name in self.chromosomes

    def __getitem__(self, name: str) -> str:
        return self.chromosomes[name]

    def length(self, name: str) -> int:
        return len(self.chromosomes[name])

    @property
    def names(self) -> list[str]:
        return list(self.chromosomes)


@dataclass(frozen=True)
class IdeasTrack:
    cell_type: str
    segments: dict[str, np.ndarray]
    resolution: int = IDEAS_RESOLUTION

    def __post_init__(self):
        if self.resolution != IDEAS_RESOLUTION:
            raise ValueError(f"IDEAS resolution must be {IDEAS_RESOLUTION}, got {self.resolution}")
        for name, seg in self.segments.items():
            if seg.size and int(seg.max()) >= N_IDEAS_STATES:
                raise ValueError(f"{name}: state id >= {N_IDEAS_STATES}")

    def __contains__(self, name: str) -> bool:
        return name in self.segments

    def per_bp(self, chrom: str, start: int, end: int) -> np.ndarray:
        """State id for every bp in [start, end); bins past the track end read as 0."""
        seg = self.segments[chrom]
        idx = np.arange(start, end) // self.resolution
        out = np.zeros(end - start, dtype=np.uint8)
        ok = (idx >= 0) & (idx < seg.size)
        out[ok] = seg[idx[ok]]
        return out

    def covers(self, genome: GenomeAssembly) -> bool:
        return all(
            name in self.segments
            and self.segments[name].size * self.resolution >= genome.length(name) - self.resolution
            for name in genome.names
        )


@dataclass(frozen=True)
class SignalTrack:
    """Piecewise-constant signal; positions outside every interval are 0."""

    name: str
    # chrom -> (starts, ends, values), sorted by start, non-overlapping
    intervals: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]

    def __contains__(self, chrom: str) -> bool:
        return chrom in self.intervals

    def value_at(self, chrom: str, pos: int) -> float:
        if chrom not in self.intervals:
            return 0.0
        starts, ends, values = self.intervals[chrom]
        i = int(np.searchsorted(starts, pos, side="right")) - 1
        if i >= 0 and pos < ends[i]:
            return float(values[i])
        return 0.0

    def values(self, chrom: str, start: int, end: int) -> np.ndarray:
        """Dense float32 signal over [start, end)."""
        out = np.zeros(end - start, dtype=np.float32)
        if chrom not in self.intervals:
            return out
        starts, ends, values = self.intervals[chrom]
        lo = max(int(np.searchsorted(ends, start, side="right")), 0)
        hi = int(np.searchsorted(starts, end, side="left"))
        for s, e, v in zip(starts[lo:hi], ends[lo:hi], values[lo:hi]):
            a, b = max(int(s), start), min(int(e), end)
            if a < b:
                out[a - start : b - start] = v
        return out


class Label(enum.Enum):
    BOUND = "B"
    UNBOUND = "U"
    AMBIGUOUS = "A"


@dataclass(frozen=True)
class LabeledBin:
    chromosome: str
    start: int
    end: int
    label: Label

    def __post_init__(self):
        if self.end - self.start != BIN_WIDTH:
            raise ValueError(f"bin width must be {BIN_WIDTH}, got {self.end - self.start}")
        if self.start % BIN_STRIDE:
            raise ValueError(f"bin start {self.start} is not on the {BIN_STRIDE}bp grid")


@dataclass(frozen=True)
class SampleWindow:
    chromosome: str
    window_start: int
    window_end: int
    center_bin: LabeledBin
    dna: str
    ideas_states: np.ndarray
    dnase: np.ndarray
    mappability: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = self.window_end - self.window_start
        for name in ("dna", "ideas_states", "dnase", "mappability"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")


# --------------------------------------------------------------------------
# parsers


def _check_exists(path) -> None:
    if not os.path.exists(path):
        raise MissingFileError(path, 0, "file not found")


def _rows(path) -> Iterator[tuple[int, list[str]]]:
    """Whitespace-split data rows with 1-based line numbers; skips blanks, '#' and track lines."""
    _check_exists(path)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith(("#", "track", "browser")):
                continue
            yield lineno, line.split()


_FASTA_TABLE = bytes((c if c in b"ACGT" else ord("N")) for c in range(256))


def _normalize_bases(line: str) -> str:
    return line.upper().encode("ascii").translate(_FASTA_TABLE).decode("ascii")


def read_fasta(path) -> GenomeAssembly:
    """Read a FASTA file.  Letters outside ACGT (any case) become N."""
    _check_exists(path)
    chroms: dict[str, list[str]] = {}
    current: list[str] | None = None
    seen_any = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            seen_any = True
            if line.startswith(">"):
                name = line[1:].split()[0] if line[1:].split() else ""
                if not name:
                    raise ParseError(path, lineno, "empty sequence name")
                if name in chroms:
                    raise ParseError(path, lineno, f"duplicate sequence name {name!r}")
                current = chroms[name] = []
                continue
            if current is None:
                raise OrphanSequenceError(path, lineno, "sequence line before any '>' header")
            if not line.isalpha() or not line.isascii():
                raise ParseError(path, lineno, "sequence line contains non-letter characters")
            current.append(_normalize_bases(line))
    if not seen_any:
        raise EmptyFileError(path, 0, "empty FASTA file")
    return GenomeAssembly({name: "".join(parts) for name, parts in chroms.items()})


def write_fasta(genome: GenomeAssembly, path, width: int = 60) -> None:
    with open(path, "w") as fh:
        for name, seq in genome.chromosomes.items():
            fh.write(f">{name}\n")
            for i in range(0, len(seq), width):
                fh.write(seq[i : i + width] + "\n")


def _ints(path, lineno: int, fields: list[str], n: int) -> list[int]:
    try:
        return [int(f) for f in fields[:n]]
    except ValueError:
        raise ParseError(path, lineno, f"expected integer fields, got {fields[:n]}") from None


def read_ideas_segmentation(path, cell_type: str) -> IdeasTrack:
    """Read "chrom start end state" rows into dense per-200bp state arrays.

    Rows must be sorted and contiguous from 0 within each chromosome.  Only the
    last row of a chromosome may end off the 200bp grid.
    """
    res = IDEAS_RESOLUTION
    per_chrom: dict[str, list[np.ndarray]] = {}
    cursor: dict[str, int] = {}
    off_grid: dict[str, int] = {}
    last_chrom = None
    for lineno, f in _rows(path):
        if len(f) < 4:
            raise ParseError(path, lineno, f"expected 4 fields, got {len(f)}")
        chrom = f[0]
        start, end, state = _ints(path, lineno, f[1:], 3)
        if state < 0 or state >= N_IDEAS_STATES:
            raise ParseError(path, lineno, f"state id {state} outside [0, {N_IDEAS_STATES})")
        if chrom != last_chrom and chrom in cursor:
            raise ParseError(path, lineno, f"rows for {chrom} are not contiguous")
        last_chrom = chrom
        pos = cursor.get(chrom, 0)
        if chrom in off_grid:
            raise ParseError(path, lineno, f"row follows an off-grid end on line {off_grid[chrom]}")
        if start < pos:
            raise ParseError(path, lineno, f"unsorted or overlapping interval (start {start} < {pos})")
        if start > pos:
            raise ParseError(path, lineno, f"gap in coverage between {pos} and {start}")
        if end <= start:
            raise ParseError(path, lineno, f"empty interval [{start}, {end})")
        if start % res:
            raise ParseError(path, lineno, f"start {start} not a multiple of {res}")
        if end % res:
            off_grid[chrom] = lineno
        nbins = -(-(end - start) // res)
        per_chrom.setdefault(chrom, []).append(np.full(nbins, state, dtype=np.uint8))
        cursor[chrom] = end
    segments = {c: np.concatenate(parts) for c, parts in per_chrom.items()}
    return IdeasTrack(cell_type=cell_type, segments=segments)


def read_signal_track(path, name: str | None = None) -> SignalTrack:
    """Read a 4-column bedGraph-style file."""
    rows: dict[str, list[tuple[int, int, float, int]]] = {}
    for lineno, f in _rows(path):
        if len(f) < 4:
            raise ParseError(path, lineno, f"expected 4 fields, got {len(f)}")
        start, end = _ints(path, lineno, f[1:], 2)
        try:
            value = float(f[3])
        except ValueError:
            raise ParseError(path, lineno, f"bad value {f[3]!r}") from None
        if start < 0 or end < 0:
            raise ParseError(path, lineno, "negative coordinate")
        if start >= end:
            raise ParseError(path, lineno, f"start {start} >= end {end}")
        rows.setdefault(f[0], []).append((start, end, value, lineno))
    intervals = {}
    for chrom, items in rows.items():
        items.sort()
        for (s0, e0, _, l0), (s1, _, _, l1) in zip(items, items[1:]):
            if s1 < e0:
                raise ParseError(path, max(l0, l1), f"overlapping intervals on {chrom} at {s1}")
        intervals[chrom] = (
            np.array([r[0] for r in items], dtype=np.int64),
            np.array([r[1] for r in items], dtype=np.int64),
            np.array([r[2] for r in items], dtype=np.float32),
        )
    return SignalTrack(name=name or os.path.basename(str(path)), intervals=intervals)


def read_labels(path) -> list[LabeledBin]:
    """Read an ENCODE-DREAM label TSV (header row, then chrom/start/stop/code)."""
    bins = []
    header_seen = False
    for lineno, f in _rows(path):
        if not header_seen:
            header_seen = True
            if f[0].lower() in ("chr", "chrom", "chromosome"):
                continue
        if len(f) < 4:
            raise ParseError(path, lineno, f"expected 4 fields, got {len(f)}")
        start, end = _ints(path, lineno, f[1:], 2)
        try:
            label = Label(f[3])
        except ValueError:
            raise ParseError(path, lineno, f"unknown label code {f[3]!r}") from None
        if end - start != BIN_WIDTH:
            raise ParseError(path, lineno, f"bin width {end - start} != {BIN_WIDTH}")
        if start % BIN_STRIDE:
            raise ParseError(path, lineno, f"start {start} not on the {BIN_STRIDE}bp grid")
        bins.append(LabeledBin(f[0], start, end, label))
    return bins


def write_labels(bins: Iterable[LabeledBin], path, cell: str = "cell") -> None:
    with open(path, "w") as fh:
        fh.write(f"chr\tstart\tstop\t{cell}\n")
        for b in bins:
            fh.write(f"{b.chromosome}\t{b.start}\t{b.end}\t{b.label.value}\n")


# --------------------------------------------------------------------------
# windows and splits


def make_window(
    bin: LabeledBin,
    genome: GenomeAssembly,
    ideas: IdeasTrack | None,
    dnase: SignalTrack | None = None,
    mapp: SignalTrack | None = None,
) -> SampleWindow:
    """Expand a 200bp bin by 400bp each side, padding past chromosome ends.

    Padding uses base N, IDEAS state 0 and signal 0.  A track given as None
    contributes zeros; a track that lacks the chromosome is an error.
    """
    chrom = bin.chromosome
    for track, what in ((genome, "genome"), (ideas, "IDEAS"), (dnase, "DNase"), (mapp, "mappability")):
        if track is not None and chrom not in track:
            raise TrackError(f"{chrom} absent from {what} track")
    ws, we = bin.start - FLANK, bin.end + FLANK
    clen = genome.length(chrom)
    a, b = max(ws, 0), min(we, clen)
    lpad, rpad = a - ws, we - b
    n = we - ws

    dna = "N" * lpad + genome[chrom][a:b] + "N" * rpad
    states = np.zeros(n, dtype=np.uint8)
    dn = np.zeros(n, dtype=np.float32)
    mp = np.zeros(n, dtype=np.float32)
    if b > a:
        if ideas is not None:
            states[lpad : n - rpad] = ideas.per_bp(chrom, a, b)
        if dnase is not None:
            dn[lpad : n - rpad] = dnase.values(chrom, a, b)
        if mapp is not None:
            mp[lpad : n - rpad] = mapp.values(chrom, a, b)
    return SampleWindow(chrom, ws, we, bin, dna, states, dn, mp)


def chromosome_split(stage: str, names: Iterable[str]) -> tuple[list[str], list[str]]:
    """Train/eval chromosome lists for the given stage, preserving input order.

    Pre-training holds out chr8 and chr21; fine-tuning follows the ENCODE-DREAM
    rule (train on chr2-7, 9-20, 22, X; evaluate on chr1, 8, 21).  chrY and chrM
    are never used.
    """
    names = [n for n in names if n not in NEVER_USED]
    if stage == "pretrain":
        return [n for n in names if n not in PRETRAIN_EVAL], [n for n in names if n in PRETRAIN_EVAL]
    if stage == "finetune":
        return [n for n in names if n in FINETUNE_TRAIN], [n for n in names if n in FINETUNE_EVAL]
    raise ValueError(f"unknown stage {stage!r}")
