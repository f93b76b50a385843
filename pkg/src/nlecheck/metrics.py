"""Aggregate per-instance verdicts into rate tables and render reports.

All rates are computed from exact integer counts; rounding (half-up, two
decimals) happens only at render time so the identity
total = counter * counter_unfaith / 100 holds exactly on the counts.
"""

from __future__ import annotations

import copy
import csv
import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional


class MetricsError(Exception):
    pass


def _pct(numerator: int, denominator: int) -> Optional[float]:
    if denominator == 0:
        return None
    return 100.0 * numerator / denominator


@dataclass(frozen=True)
class RateRow:
    n_total: int
    n_errored: int
    n_counter: int
    n_unfaithful: int

    def __post_init__(self):
        ok = self.n_total - self.n_errored
        if not 0 <= self.n_unfaithful <= self.n_counter <= ok:
            raise MetricsError(
                f"inconsistent counts: unfaithful {self.n_unfaithful} <= "
                f"counter {self.n_counter} <= total-errored {ok} violated"
            )

    @property
    def pct_counter(self) -> Optional[float]:
        return _pct(self.n_counter, self.n_total - self.n_errored)

    @property
    def pct_counter_unfaith(self) -> Optional[float]:
        return _pct(self.n_unfaithful, self.n_counter)

    @property
    def pct_total_unfaith(self) -> Optional[float]:
        return _pct(self.n_unfaithful, self.n_total - self.n_errored)


@dataclass(frozen=True)
class ReconRow:
    n_total: int
    n_errored: int
    n_reconstructed: int
    n_unfaithful: int

    def __post_init__(self):
        if not 0 <= self.n_unfaithful <= self.n_reconstructed <= self.n_total - self.n_errored:
            raise MetricsError("inconsistent reconstruction counts")

    @property
    def pct_reconst(self) -> Optional[float]:
        return _pct(self.n_reconstructed, self.n_total - self.n_errored)

    @property
    def pct_total_unfaith(self) -> Optional[float]:
        return _pct(self.n_unfaithful, self.n_total - self.n_errored)


def counterfactual_rates(records) -> RateRow:
    records = list(records)
    return RateRow(
        n_total=len(records),
        n_errored=sum(1 for r in records if r.errored),
        n_counter=sum(1 for r in records if not r.errored and r.flipped),
        n_unfaithful=sum(1 for r in records if not r.errored and r.unfaithful),
    )


def union_rates(rand_records, edit_records) -> RateRow:
    """Instance counts as flipped/unfaithful when either run marks it so."""
    rand_by_id = {r.instance_id: r for r in rand_records}
    edit_by_id = {r.instance_id: r for r in edit_records}
    if set(rand_by_id) != set(edit_by_id):
        raise MetricsError("union requires identical instance id sets")
    n_errored = n_counter = n_unfaithful = 0
    for iid, rand in rand_by_id.items():
        edit = edit_by_id[iid]
        usable = [r for r in (rand, edit) if not r.errored]
        if not usable:
            n_errored += 1
            continue
        if any(r.flipped for r in usable):
            n_counter += 1
        if any(r.unfaithful for r in usable):
            n_unfaithful += 1
    return RateRow(
        n_total=len(rand_by_id),
        n_errored=n_errored,
        n_counter=n_counter,
        n_unfaithful=n_unfaithful,
    )


def reconstruction_rates(records) -> ReconRow:
    records = list(records)
    return ReconRow(
        n_total=len(records),
        n_errored=sum(1 for r in records if r.errored),
        n_reconstructed=sum(1 for r in records if not r.errored and r.reconstructable),
        n_unfaithful=sum(1 for r in records if not r.errored and bool(r.unfaithful)),
    )


def apply_audit(records, audit_rows) -> list:
    """Fold manual paraphrase verdicts back into counterfactual records.

    A `yes` verdict means the inserted words were paraphrased in the NLE:
    the record's overlap flips to true and its unfaithful verdict clears.
    Only unfaithful records are auditable.
    """
    by_id = {r.instance_id: r for r in records}
    adjusted = {r.instance_id: r for r in records}
    for row in audit_rows:
        rid = row.get("record_id", "")
        verdict = (row.get("paraphrase_present") or "").strip().lower()
        if rid not in by_id:
            raise MetricsError(f"audit references unknown record id {rid!r}")
        if verdict not in ("yes", "no"):
            raise MetricsError(f"malformed audit verdict {row.get('paraphrase_present')!r}")
        record = by_id[rid]
        if not record.unfaithful:
            raise MetricsError(f"record {rid!r} is not unfaithful; nothing to audit")
        if verdict == "yes":
            fixed = copy.copy(record)
            fixed.overlap = True
            fixed.unfaithful = False
            adjusted[rid] = fixed
    return [adjusted[r.instance_id] for r in records]


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _round2(numerator: int, denominator: int) -> Optional[str]:
    if denominator == 0:
        return None
    value = (Decimal(100) * Decimal(numerator) / Decimal(denominator)).quantize(
        Decimal("0.01"), rounding=ROUND_HALF_UP
    )
    return str(value)


@dataclass(frozen=True)
class ReportRow:
    model: str
    dataset: str
    editor: str  # rand | edit | rand+edit | - (reconstruction)
    row: object  # RateRow or ReconRow

    def cells(self) -> dict:
        r = self.row
        base = {"model": self.model, "dataset": self.dataset, "editor": self.editor}
        if isinstance(r, RateRow):
            ok = r.n_total - r.n_errored
            base.update(
                kind="counterfactual",
                n_total=r.n_total,
                n_errored=r.n_errored,
                n_counter=r.n_counter,
                n_unfaithful=r.n_unfaithful,
                pct_counter=_round2(r.n_counter, ok),
                pct_counter_unfaith=_round2(r.n_unfaithful, r.n_counter),
                pct_total_unfaith=_round2(r.n_unfaithful, ok),
            )
        elif isinstance(r, ReconRow):
            ok = r.n_total - r.n_errored
            base.update(
                kind="reconstruction",
                n_total=r.n_total,
                n_errored=r.n_errored,
                n_reconstructed=r.n_reconstructed,
                n_unfaithful=r.n_unfaithful,
                pct_reconst=_round2(r.n_reconstructed, ok),
                pct_total_unfaith=_round2(r.n_unfaithful, ok),
            )
        else:
            raise MetricsError(f"unknown row type {type(r).__name__}")
        return base


_CSV_COLUMNS = [
    "kind", "model", "dataset", "editor",
    "n_total", "n_errored", "n_counter", "n_unfaithful", "n_reconstructed",
    "pct_counter", "pct_counter_unfaith", "pct_total_unfaith", "pct_reconst",
]


def render_report(rows, format: str = "markdown") -> str:
    cells = [r.cells() for r in rows]
    if format == "json":
        return json.dumps(cells, indent=2, ensure_ascii=False) + "\n"
    if format == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=_CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for c in cells:
            writer.writerow({k: ("" if c.get(k) is None else c.get(k, "")) for k in _CSV_COLUMNS})
        return buf.getvalue()
    if format == "markdown":
        counter = [c for c in cells if c["kind"] == "counterfactual"]
        recon = [c for c in cells if c["kind"] == "reconstruction"]
        parts = []
        if counter:
            parts.append("## Counterfactual test\n")
            parts.append("| Model | Dataset | Editor | %Counter | %Counter Unfaith | %Total Unfaith |")
            parts.append("|---|---|---|---|---|---|")
            for c in counter:
                parts.append(
                    "| {model} | {dataset} | {editor} | {a} | {b} | {c} |".format(
                        model=c["model"], dataset=c["dataset"], editor=c["editor"],
                        a=c["pct_counter"] or "-",
                        b=c["pct_counter_unfaith"] or "-",
                        c=c["pct_total_unfaith"] or "-",
                    )
                )
            parts.append("")
        if recon:
            parts.append("## Input reconstruction test\n")
            parts.append("| Model | Dataset | %Reconst | %Total Unfaith |")
            parts.append("|---|---|---|---|")
            for c in recon:
                parts.append(
                    "| {model} | {dataset} | {a} | {b} |".format(
                        model=c["model"], dataset=c["dataset"],
                        a=c["pct_reconst"] or "-",
                        b=c["pct_total_unfaith"] or "-",
                    )
                )
            parts.append("")
        return "\n".join(parts)
    raise MetricsError(f"unknown report format {format!r}")
