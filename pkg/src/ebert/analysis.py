"""Recompute the published aggregate results from the shipped metric tables.

Arithmetic is done in ``Decimal`` on the 4-dp published values so every
aggregate is exact before rounding (half-up) to the printed precision.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from pathlib import Path

from . import metrics

MODELS = ("DBERT", "EBERT", "EBERT+")
S1_COLUMNS = ("dataset", "model", "auprc", "auroc", "recall_at_10fdr", "recall_at_50fdr")
Q4 = Decimal("0.0001")


class FixtureError(ValueError):
    pass


def _rows(text: str) -> list[dict[str, str]]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def _read_text(path) -> str:
    if path is None:
        raise FixtureError("no path")
    return Path(path).read_text()


def default_fixture(name: str) -> Path:
    return Path(str(resources.files("ebert") / "data" / name))


def load_table_s1(path=None) -> dict[str, dict[str, dict[str, Decimal]]]:
    """``table[dataset][model][metric]`` as Decimals."""
    rows = _rows(_read_text(path or default_fixture("table_s1.csv")))
    if not rows:
        raise FixtureError("metric table is empty")
    missing = [c for c in S1_COLUMNS if c not in rows[0]]
    if missing:
        raise FixtureError(f"metric table missing column(s): {missing}")
    table: dict[str, dict[str, dict[str, Decimal]]] = {}
    for i, r in enumerate(rows, 1):
        try:
            vals = {m: Decimal(r[m].strip()) for m in metrics.METRICS}
        except Exception:
            raise FixtureError(f"metric table row {i}: non-numeric value") from None
        table.setdefault(r["dataset"].strip(), {})[r["model"].strip()] = vals
    for ds, per_model in table.items():
        absent = set(MODELS) - set(per_model)
        if absent:
            raise FixtureError(f"{ds}: missing model(s) {sorted(absent)}")
    if len(table) != 13:
        raise FixtureError(f"expected 13 datasets, found {len(table)}")
    return table


def load_table1(path=None) -> dict[str, dict[str, int]]:
    """``ranks[dataset][model]``."""
    rows = _rows(_read_text(path or default_fixture("table1.csv")))
    if not rows or "dataset" not in rows[0]:
        raise FixtureError("rank table missing 'dataset' column")
    models = [c for c in rows[0] if c != "dataset"]
    if len(models) != 5:
        raise FixtureError(f"rank table should have 5 model columns, found {len(models)}")
    ranks = {}
    for i, r in enumerate(rows, 1):
        try:
            ranks[r["dataset"].strip()] = {m: int(r[m]) for m in models}
        except (TypeError, ValueError):
            raise FixtureError(f"rank table row {i}: bad rank") from None
    if len(ranks) != 13:
        raise FixtureError(f"expected 13 datasets, found {len(ranks)}")
    return ranks


@dataclass(frozen=True)
class Claim:
    name: str
    published: str  # as printed in the published text
    reference: str  # exact value implied by the published tables
    computed: str
    note: str = ""
    informational: bool = False

    @property
    def passed(self) -> bool:
        return self.computed == self.reference

    @property
    def rounds_to_published(self) -> bool:
        try:
            p = Decimal(self.published)
            return Decimal(self.computed).quantize(p, rounding=ROUND_HALF_UP) == p
        except Exception:
            return self.computed == self.published

    @property
    def status(self) -> str:
        if self.informational:
            return "info"
        return "pass" if self.passed else "fail"


@dataclass
class AnalysisReport:
    claims: list[Claim]
    dataset_ranks: dict[str, dict[str, tuple[int, int]]]  # dataset -> model -> (by rank, by value)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.claims if not c.informational)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["claim", "published", "computed_value", "status", "rounds_to_published", "note"])
        for c in self.claims:
            w.writerow([c.name, c.published, c.computed, c.status, "yes" if c.rounds_to_published else "no", c.note])
        return buf.getvalue()

    def to_text(self) -> str:
        out = []
        width = max(len(c.name) for c in self.claims)
        for c in self.claims:
            flag = "" if c.rounds_to_published else f"  [published text says {c.published}]"
            out.append(f"{c.status.upper():4}  {c.name:<{width}}  computed {c.computed:<28} published {c.published}{flag}")
        agree = sum(
            1 for r in self.dataset_ranks.values() for by_rank, by_value in r.values() if by_rank == by_value
        )
        total = sum(len(r) for r in self.dataset_ranks.values())
        out.append(
            f"per-dataset ranking among {', '.join(MODELS)}: averaging metric ranks and averaging "
            f"metric values agree on {agree}/{total} placements"
        )
        n_fail = sum(1 for c in self.claims if c.status == "fail")
        out.append(f"{'ALL CLAIMS PASS' if n_fail == 0 else f'{n_fail} CLAIM(S) FAILED'}")
        return "\n".join(out)


def _q(x: Decimal, q: Decimal = Q4) -> str:
    return str(x.quantize(q, rounding=ROUND_HALF_UP))


def _median(values) -> Decimal:
    return Decimal(statistics.median(values))


def _mean(values) -> Decimal:
    values = list(values)
    return sum(values, Decimal(0)) / len(values)


def analyze_published_tables(table_s1=None, table1=None) -> AnalysisReport:
    s1 = load_table_s1(table_s1)
    t1 = load_table1(table1)
    au = {m: {ds: s1[ds][m]["auprc"] for ds in s1} for m in MODELS}
    ctcf = [ds for ds in s1 if ds.upper().startswith("CTCF")]
    other = [ds for ds in s1 if ds not in ctcf]
    claims: list[Claim] = []

    for model, published_value in (("EBERT+", "0.5405"), ("EBERT", "0.4061"), ("DBERT", "0.1495")):
        claims.append(Claim(f"median_auprc[{model}]", published_value, published_value, _q(_median(au[model].values()))))

    def delta(hi, lo, datasets):
        return _mean(au[hi][ds] - au[lo][ds] for ds in datasets)

    claims += [
        Claim("ctcf_mean_auprc_gain[EBERT+ vs EBERT]", "0.21", "0.2154", _q(delta("EBERT+", "EBERT", ctcf))),
        Claim("ctcf_mean_auprc_gain[EBERT vs DBERT]", "0.06", "0.0531", _q(delta("EBERT", "DBERT", ctcf))),
        Claim("nonctcf_mean_auprc_gain[EBERT vs DBERT]", "0.25", "0.2469", _q(delta("EBERT", "DBERT", other))),
        Claim("nonctcf_mean_auprc_gain[EBERT+ vs EBERT]", "0.12", "0.1164", _q(delta("EBERT+", "EBERT", other))),
    ]

    gains = {ds: au["EBERT+"][ds] - au["EBERT"][ds] for ds in s1}
    claims += [
        Claim("aux_auprc_gain_min", "0.033", "0.0334", _q(min(gains.values()))),
        Claim("aux_auprc_gain_max", "0.22", "0.2201", _q(max(gains.values()))),
        Claim("aux_auprc_gain_median", "0.14", "0.1375", _q(_median(gains.values()))),
        Claim("aux_auprc_gain_positive_datasets", "13", "13", str(sum(g > 0 for g in gains.values()))),
    ]
    top3 = sorted(gains, key=lambda d: gains[d], reverse=True)[:3]
    claims.append(
        Claim("aux_largest_gains", "CTCF,CTCF,JUND", "CTCF,CTCF,JUND", ",".join(d.split(":")[0] for d in top3))
    )

    epi = {ds: au["EBERT"][ds] - au["DBERT"][ds] for ds in s1}
    best_epi = max(epi, key=lambda d: epi[d])
    claims.append(Claim("epigenomic_largest_gain_dataset", "NANOG:iPSC", "NANOG:iPSC", best_epi))
    claims.append(Claim("epigenomic_largest_gain", "0.33", "0.3330", _q(epi[best_epi])))

    overall = metrics.rank_models(t1)
    row = ",".join(f"{m}={overall.rank[m]}" for m in overall.mean_rank)
    expected_row = "EBERT+=3,JTeam=1,FactorNet=2,Anchor=4,DeepGRN=5"
    claims.append(Claim("overall_rank_row", expected_row, expected_row, row,
                        note="mean per-dataset rank: " + ", ".join(f"{m} {v:.4f}" for m, v in overall.mean_rank.items())))
    first = sum(1 for r in t1.values() if r["EBERT+"] == 1)
    top4 = sum(1 for r in t1.values() if r["EBERT+"] <= 4)
    claims.append(Claim("datasets_ranked_first[EBERT+]", "4", "4", str(first)))
    claims.append(Claim("datasets_in_top4[EBERT+]", "12", "12", str(top4)))

    # informational: which variance convention reproduces the published spread
    for model, published_value in (("EBERT", "0.01"), ("EBERT+", "0.019")):
        vals = [float(v) for v in au[model].values()]
        pop, samp = statistics.pvariance(vals), statistics.variance(vals)
        prec = Decimal(published_value)
        match = [n for n, v in (("population", pop), ("sample", samp))
                 if Decimal(repr(v)).quantize(prec, rounding=ROUND_HALF_UP) == prec]
        claims.append(Claim(
            f"auprc_variance[{model}]", published_value, "", f"{samp:.4f}",
            note=f"population {pop:.4f}, sample {samp:.4f}; matches published: {', '.join(match) or 'neither'}",
            informational=True,
        ))
    strict = sum(1 for ds in s1 if all(s1[ds]["EBERT"][m] > s1[ds]["DBERT"][m] for m in metrics.METRICS))
    loose = sum(1 for ds in s1 if all(s1[ds]["EBERT"][m] >= s1[ds]["DBERT"][m] for m in metrics.METRICS))
    claims.append(Claim("datasets_improved_all_metrics[EBERT vs DBERT]", "12", "", str(loose),
                        note=f"no metric worse: {loose}; every metric strictly better: {strict}", informational=True))

    dataset_ranks = {}
    for ds in s1:
        reports = {m: {k: float(v) for k, v in s1[ds][m].items()} for m in MODELS}
        by_rank = metrics.rank_dataset(reports, by="rank").rank
        by_value = metrics.rank_dataset(reports, by="value").rank
        dataset_ranks[ds] = {m: (by_rank[m], by_value[m]) for m in MODELS}
    return AnalysisReport(claims, dataset_ranks)
