"""Performance retention ratio (PRR) and performance elasticity of parameters (PEoP).

PRR compares a model's score to the MHA upper bound; PEoP divides the
relative score change over SHA by the relative parameter growth over SHA.
Both have a direct form (higher score is better) and an inverse form
(lower is better, e.g. perplexity).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable

from . import accounting
from .errors import ContractError, DomainError

PRR_ABS_TOL = 0.15
PEOP_REL_TOL = 0.15

# attention geometry behind each published architecture: (layers, heads, head_dim)
ARCH_GEOMETRY = {
    "encoder_only": (12, 12, 64),
    "decoder_only": (12, 12, 64),
    "encoder_decoder": (12, 8, 64),
}

INVERSE_METRICS = {"perplexity", "ppl", "loss", "error", "wer"}


class IndicatorKind(str, enum.Enum):
    DIRECT = "direct"
    INVERSE = "inverse"


@dataclass(frozen=True)
class Indicator:
    kind: IndicatorKind
    name: str = ""

    @classmethod
    def for_metric(cls, name: str) -> "Indicator":
        kind = IndicatorKind.INVERSE if name.lower() in INVERSE_METRICS else IndicatorKind.DIRECT
        return cls(kind, name)


def _kind(kind) -> IndicatorKind:
    if isinstance(kind, Indicator):
        return kind.kind
    try:
        return IndicatorKind(str(kind.value if isinstance(kind, enum.Enum) else kind).lower())
    except ValueError:
        raise ContractError(f"indicator kind must be 'direct' or 'inverse', got {kind!r}") from None


def prr(score: float, mha_score: float, kind="direct") -> float:
    """Retention ratio against MHA, in percent."""
    if mha_score <= 0:
        raise DomainError(f"MHA reference score must be positive, got {mha_score}")
    if _kind(kind) is IndicatorKind.DIRECT:
        return 100.0 * score / mha_score
    return 100.0 * (1.0 - (score - mha_score) / mha_score)


def peop(score: float, sha_score: float, params: int, sha_params: int, kind="direct") -> float:
    """Relative score gain over SHA per unit of relative parameter growth."""
    if sha_score <= 0:
        raise DomainError(f"SHA reference score must be positive, got {sha_score}")
    if sha_params <= 0:
        raise DomainError(f"SHA parameter count must be positive, got {sha_params}")
    if params == sha_params:
        raise DomainError("PEoP is undefined when the model has exactly the SHA parameter count")
    num = score / sha_score - 1.0
    if _kind(kind) is IndicatorKind.INVERSE:
        num = -num
    return num / (params / sha_params - 1.0)


@dataclass(frozen=True)
class ScoreRow:
    benchmark: str
    model: str
    score: float
    kind: IndicatorKind
    architecture: str = "encoder_only"
    score_decimals: int = 1
    published_prr: str = ""
    published_peop: str = ""


@dataclass
class MetricReport:
    benchmark: str
    model_name: str
    score: float
    mha_score: float
    sha_score: float
    params: int
    sha_params: int
    prr: float
    peop: float | None
    published_prr: float | None = None
    published_peop: float | None = None
    prr_ok: bool | None = None
    peop_ok: bool | None = None
    prr_rounding_consistent: bool | None = None
    peop_rounding_consistent: bool | None = None

    @property
    def flagged(self) -> bool:
        return self.prr_ok is False or self.peop_ok is False


def _decimals(text: str) -> int:
    exp = Decimal(text.strip()).as_tuple().exponent
    return max(0, -int(exp))


def read_scores(source) -> list[ScoreRow]:
    """Parse a published-scores CSV (path, text lines, or open file)."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_scores(fh.readlines())
    lines = [ln for ln in source if ln.strip() and not ln.lstrip().startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        missing = {"benchmark", "model", "score", "indicator_kind"} - set(rec)
        if missing:
            raise ContractError(f"scores file lacks columns {sorted(missing)}")
        rows.append(ScoreRow(
            benchmark=rec["benchmark"].strip(),
            model=rec["model"].strip().upper().replace("-", "_"),
            score=float(rec["score"]),
            kind=_kind(rec["indicator_kind"].strip()),
            architecture=(rec.get("architecture") or "encoder_only").strip(),
            score_decimals=_decimals(rec["score"]),
            published_prr=(rec.get("published_prr") or "").strip(),
            published_peop=(rec.get("published_peop") or "").strip(),
        ))
    return rows


def published_scores() -> list[ScoreRow]:
    """The bundled transcription of the published score tables."""
    text = resources.files("mhelab").joinpath("data/published_scores.csv").read_text("utf-8")
    return read_scores(text.splitlines(keepends=True))


def published_params(model: str, architecture: str) -> int:
    """Exact attention parameter count of the published model geometry."""
    layers, heads, d = ARCH_GEOMETRY[architecture]
    return accounting.experiment_params(model, layers, heads, d, arch=architecture)


def _prr_range(row: ScoreRow, mha: ScoreRow) -> tuple[float, float]:
    if row is mha:
        return 100.0, 100.0
    h, hm = 0.5 * 10.0 ** -row.score_decimals, 0.5 * 10.0 ** -mha.score_decimals
    corners = [prr(s, m, row.kind) for s in (row.score - h, row.score + h)
               for m in (mha.score - hm, mha.score + hm)]
    return min(corners), max(corners)


def _peop_range(row: ScoreRow, sha: ScoreRow, params: int, sha_params: int) -> tuple[float, float]:
    h, hs = 0.5 * 10.0 ** -row.score_decimals, 0.5 * 10.0 ** -sha.score_decimals
    corners = [peop(s, r, params, sha_params, row.kind) for s in (row.score - h, row.score + h)
               for r in (sha.score - hs, sha.score + hs)]
    return min(corners), max(corners)


def _overlaps(lo: float, hi: float, printed: str) -> bool:
    half = 0.5 * 10.0 ** -_decimals(printed)
    value = float(printed)
    return lo <= value + half + 1e-12 and hi >= value - half - 1e-12


def build_report(rows: Iterable[ScoreRow],
                 params_source: Callable[[str, str], int] = published_params) -> list[MetricReport]:
    """Recompute PRR/PEoP for every row and compare with any printed values.

    A printed PRR passes when within ``PRR_ABS_TOL`` of the recomputed value.
    A printed PEoP passes when the recomputed value, rounded to the printed
    number of decimals, is within ``PEOP_REL_TOL`` relative of it. Separately,
    ``*_rounding_consistent`` says whether some unrounded scores that round to
    the printed ones could have produced the printed cell.
    """
    rows = list(rows)
    by_bench: dict[str, list[ScoreRow]] = {}
    for r in rows:
        by_bench.setdefault(r.benchmark, []).append(r)
    out = []
    for bench, group in by_bench.items():
        refs = {r.model: r for r in group}
        if "MHA" not in refs or "SHA" not in refs:
            raise ContractError(f"benchmark {bench!r} needs both an MHA and an SHA reference row")
        mha, sha = refs["MHA"], refs["SHA"]
        for r in group:
            params = params_source(r.model, r.architecture)
            sha_params = params_source("SHA", sha.architecture)
            rep = MetricReport(bench, r.model, r.score, mha.score, sha.score, params, sha_params,
                               prr(r.score, mha.score, r.kind),
                               None if params == sha_params else
                               peop(r.score, sha.score, params, sha_params, r.kind))
            if r.published_prr:
                rep.published_prr = float(r.published_prr)
                rep.prr_ok = abs(rep.prr - rep.published_prr) <= PRR_ABS_TOL + 1e-9
                rep.prr_rounding_consistent = _overlaps(*_prr_range(r, mha), r.published_prr)
            if r.published_peop and rep.peop is not None:
                rep.published_peop = float(r.published_peop)
                shown = round(rep.peop, _decimals(r.published_peop))
                rep.peop_ok = abs(shown - rep.published_peop) <= PEOP_REL_TOL * abs(rep.published_peop) + 1e-12
                rep.peop_rounding_consistent = _overlaps(
                    *_peop_range(r, sha, params, sha_params), r.published_peop)
            out.append(rep)
    return out
