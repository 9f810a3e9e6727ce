"""Synthetic genomes, tracks and labels for desk-scale runs and tests.

The binding fixture plants one site per ~``spacing`` bp.  A site is a 200bp
bin carrying a fixed motif (token-aligned for a 7-mer/stride-7 tokenizer when
the bin is the window centre), a dedicated IDEAS state and a DNase peak.  The
bin over the site is Bound; bins whose 1000bp window touches a site
otherwise are Ambiguous; everything else is Unbound.  Each input channel on
its own therefore separates the classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .genome_io import (
    BIN_STRIDE,
    BIN_WIDTH,
    FLANK,
    IDEAS_RESOLUTION,
    N_IDEAS_STATES,
    GenomeAssembly,
    IdeasTrack,
    Label,
    LabeledBin,
    SignalTrack,
    write_fasta,
    write_labels,
)
from .tokenizer import TokenizedPair, TokenizerConfig, Vocab

BINDING_STATE = 12
MOTIF = "TGACTCAGCATGACTCAGCAT"  # 21bp = three 7-mers
MOTIF_OFFSET = 6  # (FLANK + 6) % 7 == 0


def random_genome(lengths: dict[str, int], rng: np.random.Generator, n_rate: float = 0.0) -> GenomeAssembly:
    chroms = {}
    for name, n in lengths.items():
        bases = np.frombuffer(b"ACGT", dtype=np.uint8)[rng.integers(0, 4, n)].copy()
        if n_rate:
            bases[rng.random(n) < n_rate] = ord("N")
        chroms[name] = bases.tobytes().decode("ascii")
    return GenomeAssembly(chroms)


def random_ideas(genome: GenomeAssembly, cell_type: str, rng: np.random.Generator,
                 mean_run: float = 4.0, exclude: tuple[int, ...] = ()) -> IdeasTrack:
    """Piecewise-constant states with geometric run lengths (in 200bp bins)."""
    allowed = np.array([s for s in range(N_IDEAS_STATES) if s not in exclude])
    segs = {}
    for name in genome.names:
        nbins = -(-genome.length(name) // IDEAS_RESOLUTION)
        out = np.empty(nbins, dtype=np.uint8)
        i = 0
        while i < nbins:
            run = int(rng.geometric(1.0 / mean_run))
            out[i : i + run] = rng.choice(allowed)
            i += run
        segs[name] = out
    return IdeasTrack(cell_type, segs)


def _track_from_dense(name: str, dense: dict[str, np.ndarray]) -> SignalTrack:
    """Run-length encode dense per-bp signals, dropping zero runs."""
    intervals = {}
    for chrom, v in dense.items():
        change = np.flatnonzero(np.diff(v)) + 1
        starts = np.r_[0, change]
        ends = np.r_[change, v.size]
        vals = v[starts]
        keep = vals != 0
        intervals[chrom] = (starts[keep].astype(np.int64), ends[keep].astype(np.int64), vals[keep].astype(np.float32))
    return SignalTrack(name, intervals)


@dataclass
class BindingFixture:
    genome: GenomeAssembly
    ideas: IdeasTrack
    dnase: SignalTrack
    mappability: SignalTrack
    bins: list[LabeledBin]
    sites: dict[str, list[int]]

    def write(self, out_dir) -> dict[str, Path]:
        """Write FASTA, IDEAS, signal and label files; returns their paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {k: out / f for k, f in (
            ("genome", "genome.fa"), ("ideas", "ideas.tsv"), ("dnase", "dnase.bedgraph"),
            ("mappability", "mappability.bedgraph"), ("labels", "labels.tsv"))}
        write_fasta(self.genome, paths["genome"])
        write_ideas(self.ideas, self.genome, paths["ideas"])
        write_signal(self.dnase, paths["dnase"])
        write_signal(self.mappability, paths["mappability"])
        write_labels(self.bins, paths["labels"], cell=self.ideas.cell_type)
        return paths


def write_ideas(track: IdeasTrack, genome: GenomeAssembly, path) -> None:
    res = track.resolution
    with open(path, "w") as fh:
        for chrom, seg in track.segments.items():
            clen = genome.length(chrom)
            change = np.flatnonzero(np.diff(seg)) + 1
            starts = np.r_[0, change]
            ends = np.r_[change, seg.size]
            for s, e in zip(starts, ends):
                fh.write(f"{chrom}\t{s * res}\t{min(e * res, clen)}\t{seg[s]}\n")


def write_signal(track: SignalTrack, path) -> None:
    with open(path, "w") as fh:
        for chrom, (starts, ends, vals) in track.intervals.items():
            for s, e, v in zip(starts, ends, vals):
                fh.write(f"{chrom}\t{s}\t{e}\t{float(v):.6g}\n")


def binding_fixture(
    seed: int = 0,
    chroms: tuple[str, ...] = ("chr1", "chr2", "chr3", "chr4"),
    chrom_len: int = 60_000,
    spacing: int = 2_000,
    cell_type: str = "synthetic",
) -> BindingFixture:
    rng = np.random.default_rng(seed)
    genome = random_genome({c: chrom_len for c in chroms}, rng)
    ideas = random_ideas(genome, cell_type, rng, exclude=(BINDING_STATE,))
    seqs = {c: bytearray(genome[c], "ascii") for c in chroms}
    dnase = {c: np.zeros(chrom_len, dtype=np.float32) for c in chroms}
    mapp = {c: np.ones(chrom_len, dtype=np.float32) for c in chroms}
    sites: dict[str, list[int]] = {}
    for c in chroms:
        # background: weak DNase bumps and mappability dips
        for _ in range(chrom_len // 1000):
            p = int(rng.integers(0, chrom_len - 100))
            dnase[c][p : p + int(rng.integers(20, 100))] = rng.uniform(0.1, 1.0)
            q = int(rng.integers(0, chrom_len - 50))
            mapp[c][q : q + int(rng.integers(10, 50))] = rng.uniform(0.2, 0.8)
        pos = []
        s = 1200 + int(rng.integers(0, 5)) * IDEAS_RESOLUTION
        while s + BIN_WIDTH + 1200 <= chrom_len:
            pos.append(s)
            seqs[c][s + MOTIF_OFFSET : s + MOTIF_OFFSET + len(MOTIF)] = MOTIF.encode()
            ideas.segments[c][s // IDEAS_RESOLUTION] = BINDING_STATE
            dnase[c][s + 40 : s + 160] = rng.uniform(4.0, 8.0)
            s += spacing + int(rng.integers(-2, 3)) * IDEAS_RESOLUTION
        sites[c] = pos
    genome = GenomeAssembly({c: seqs[c].decode("ascii") for c in chroms})

    bins = []
    for c in chroms:
        site_arr = np.array(sites[c])
        for b in range(0, chrom_len - BIN_WIDTH + 1, BIN_STRIDE):
            if b in sites[c]:
                label = Label.BOUND
            elif np.any((site_arr < b + BIN_WIDTH + FLANK) & (site_arr + BIN_WIDTH > b - FLANK)):
                label = Label.AMBIGUOUS
            else:
                label = Label.UNBOUND
            bins.append(LabeledBin(c, b, b + BIN_WIDTH, label))
    return BindingFixture(
        genome, ideas, _track_from_dense("dnase", dnase), _track_from_dense("mappability", mapp), bins, sites
    )


def periodic_corpus(n: int, cfg: TokenizerConfig, vocab: Vocab, rng: np.random.Generator,
                    period_tokens: int = 1) -> list[TokenizedPair]:
    """Sequences that repeat a random unit of ``period_tokens`` k-mers.

    Each sequence uses its own unit, so a masked token is recoverable from its
    unmasked neighbours.  IDEAS states are constant over 200bp bins.
    """
    out = []
    n_tok = cfg.n_tokens(cfg.window_len)
    for _ in range(n):
        unit = rng.integers(vocab.dna_offset, vocab.size, size=period_tokens)
        ids = np.zeros(cfg.l_input, dtype=np.int64)
        ids[:n_tok] = np.resize(unit, n_tok)
        mask = np.zeros(cfg.l_input, dtype=np.uint8)
        mask[:n_tok] = 1
        bin_states = rng.integers(0, N_IDEAS_STATES, size=-(-cfg.window_len // IDEAS_RESOLUTION))
        starts = np.arange(n_tok) * cfg.stride
        ideas = np.zeros(cfg.l_input, dtype=np.uint8)
        ideas[:n_tok] = bin_states[(starts + cfg.k // 2) // IDEAS_RESOLUTION]
        out.append(TokenizedPair(ids, mask, ideas, None))
    return out
