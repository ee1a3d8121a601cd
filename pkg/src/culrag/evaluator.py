"""Scoring, regional-variant aggregation and prompt ablation."""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
from dataclasses import dataclass, field
from decimal import ROUND_DOWN, ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from culrag.core import Locale, Question, Track, normalize_answer
from culrag.prompts import NO_ANSWER, AnswerKind, ParsedAnswer, TemplateId, parse_answer, resolve_option

logger = logging.getLogger(__name__)

_CENT = Decimal("0.01")


class EvaluationError(ValueError):
    pass


class Scheme(str, enum.Enum):
    SIMPLE_AVG = "SIMPLE_AVG"
    WEIGHTED_BY_COUNT = "WEIGHTED_BY_COUNT"


def to_percent(value: Fraction | Decimal | str | float, rounding: str = ROUND_HALF_UP) -> Decimal:
    """Quantize to two decimals. Floats go through ``repr`` so 44.4 stays 44.4."""
    if isinstance(value, Fraction):
        value = Decimal(value.numerator) / Decimal(value.denominator)
    elif not isinstance(value, Decimal):
        value = Decimal(str(value))
    return value.quantize(_CENT, rounding=rounding)


def score_saq(prediction: ParsedAnswer, references: Sequence[str], locale: Locale) -> bool:
    if not references:
        raise EvaluationError("cannot score an SAQ item without references")
    if prediction.kind is not AnswerKind.ANSWER:
        return False
    target = normalize_answer(prediction.text, locale).normalized
    return any(normalize_answer(r, locale).normalized == target for r in references)


def score_mcq(prediction: ParsedAnswer, gold_label: str) -> bool:
    """``prediction.text`` must already be a resolved option label."""
    return prediction.kind is AnswerKind.ANSWER and prediction.text == gold_label


@dataclass(frozen=True)
class ItemResult:
    question_id: str
    locale: Locale
    correct: bool


@dataclass
class Report:
    per_variant: dict[str, Decimal]
    per_language: dict[str, Decimal]
    overall: Decimal
    counts: dict[str, int]
    scheme: Scheme
    track: str = ""
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "track": self.track,
            "scheme": self.scheme.value,
            "per_variant": {k: f"{v:.2f}" for k, v in self.per_variant.items()},
            "per_language": {k: f"{v:.2f}" for k, v in self.per_language.items()},
            "overall": f"{self.overall:.2f}",
            "counts": dict(self.counts),
        }

    def format_table(self) -> str:
        lines = [f"{'locale':<10}{'n':>6}{'acc %':>9}"]
        for locale, acc in self.per_variant.items():
            lines.append(f"{locale:<10}{self.counts[locale]:>6}{acc:>9.2f}")
        lines.append("-" * 25)
        for language, acc in self.per_language.items():
            n = sum(c for loc, c in self.counts.items() if loc.split("-")[0] == language)
            lines.append(f"{language:<10}{n:>6}{acc:>9.2f}")
        lines.append("-" * 25)
        lines.append(f"{'overall':<10}{sum(self.counts.values()):>6}{self.overall:>9.2f}")
        header = f"{self.label} {self.track} ({self.scheme.value})".strip()
        return header + "\n" + "\n".join(lines) + "\n"


def average_language_scores(scores: Iterable[Decimal | str | float], rounding: str = ROUND_DOWN) -> Decimal:
    """Unweighted mean of per-language percentages, quantized to two decimals.

    Truncation is the default because it reproduces the published three-language
    averages from their printed per-language inputs; ``ROUND_HALF_UP`` is available.
    """
    values = [v if isinstance(v, Decimal) else Decimal(str(v)) for v in scores]
    if not values:
        raise EvaluationError("no language scores to average")
    return to_percent(sum(values) / Decimal(len(values)), rounding)


def aggregate(
    results: Iterable[ItemResult],
    scheme: Scheme | str = Scheme.SIMPLE_AVG,
    *,
    locales: Sequence[str] | None = None,
    overall_rounding: str = ROUND_DOWN,
) -> Report:
    """Accuracy per locale, per language and overall.

    Per-locale and per-language figures are exact fractions rounded half-up
    to two decimals. ``overall`` averages the reported per-language figures.
    Locales requested via ``locales`` but absent from ``results`` are dropped
    with a warning.
    """
    scheme = Scheme(scheme)
    tally: dict[str, list[int]] = {}
    for item in results:
        bucket = tally.setdefault(str(item.locale), [0, 0])
        bucket[0] += int(item.correct)
        bucket[1] += 1
    if locales is not None:
        for loc in locales:
            if loc not in tally:
                logger.warning("no scored items for locale %s; omitted from report", loc)
        tally = {k: v for k, v in tally.items() if k in set(locales)}
    if not tally:
        raise EvaluationError("no scored items to aggregate")

    per_variant, counts = {}, {}
    by_language: dict[str, list[tuple[Fraction, int, int]]] = {}
    for loc in sorted(tally):
        correct, total = tally[loc]
        frac = Fraction(100 * correct, total)
        per_variant[loc] = to_percent(frac)
        counts[loc] = total
        by_language.setdefault(loc.split("-")[0], []).append((frac, correct, total))

    per_language = {}
    for language in sorted(by_language):
        group = by_language[language]
        if scheme is Scheme.SIMPLE_AVG:
            value = sum((f for f, _, _ in group), Fraction(0)) / len(group)
        else:
            value = Fraction(100 * sum(c for _, c, _ in group), sum(t for _, _, t in group))
        per_language[language] = to_percent(value)

    overall = average_language_scores(per_language.values(), overall_rounding)
    return Report(per_variant, per_language, overall, counts, scheme)


# --- predictions -----------------------------------------------------------------


def write_predictions(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_predictions(path: str | Path) -> dict[str, dict]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            out[record["id"]] = record
        except (ValueError, KeyError, TypeError) as exc:
            raise EvaluationError(f"{path}: line {lineno}: bad prediction record ({exc})") from None
    return out


def prediction_answer(record: Mapping, question: Question) -> ParsedAnswer:
    answer = record.get("answer", NO_ANSWER)
    if not isinstance(answer, str) or NO_ANSWER in answer:
        return ParsedAnswer.abstain()
    parsed = parse_answer(answer, question.locale)
    if question.track is Track.MCQ and parsed.is_answer:
        label = resolve_option(parsed, question)
        return ParsedAnswer(AnswerKind.ANSWER, label, answer, label) if label else ParsedAnswer.abstain(answer)
    return parsed


def score_question(prediction: ParsedAnswer, question: Question) -> bool:
    if question.track is Track.MCQ:
        if question.gold_label is None:
            raise EvaluationError(f"{question.id}: MCQ item without gold label")
        return score_mcq(prediction, question.gold_label)
    if not question.references:
        raise EvaluationError(f"{question.id}: SAQ item without references")
    return score_saq(prediction, question.references, question.locale)


def evaluate(
    questions: Sequence[Question],
    predictions: Mapping[str, Mapping],
    scheme: Scheme | str = Scheme.SIMPLE_AVG,
) -> tuple[Report, list[ItemResult]]:
    """Score every labeled question; a missing prediction counts as wrong."""
    items = []
    for q in questions:
        record = predictions.get(q.id)
        parsed = prediction_answer(record, q) if record is not None else ParsedAnswer.abstain()
        items.append(ItemResult(q.id, q.locale, score_question(parsed, q)))
    report = aggregate(items, scheme)
    tracks = sorted({q.track.value for q in questions})
    report.track = "+".join(tracks)
    return report, items


def is_labeled(question: Question) -> bool:
    return bool(question.references) if question.track is Track.SAQ else question.gold_label is not None


# --- ablation --------------------------------------------------------------------


@dataclass
class AblationResult:
    reports: dict[TemplateId, Report]
    failed: dict[TemplateId, str] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.failed

    def table(self) -> dict:
        return {
            "prompts": [t.cli_name for t in self.reports],
            "rows": {t.cli_name: r.to_dict() for t, r in self.reports.items()},
            "failed": {t.cli_name: msg for t, msg in self.failed.items()},
        }

    def curve_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["prompt_id", "language", "track", "score"])
        for tid in _ordered(self.reports):
            report = self.reports[tid]
            for language, score in report.per_language.items():
                writer.writerow([tid.cli_name, language, report.track, f"{score:.2f}"])
            writer.writerow([tid.cli_name, "avg", report.track, f"{report.overall:.2f}"])
        return buf.getvalue()


def _ordered(ids: Iterable[TemplateId]) -> list[TemplateId]:
    order = list(TemplateId)
    return sorted(ids, key=order.index)


def run_ablation(
    questions: Sequence[Question],
    prompt_ids: Sequence[TemplateId | str],
    answer_all: Callable[[TemplateId, Sequence[Question]], Mapping[str, Mapping]],
    scheme: Scheme | str = Scheme.SIMPLE_AVG,
) -> AblationResult:
    """Evaluate ``questions`` once per prompt template, in MP, RP-v1, RP-v2 order.

    ``answer_all(template, questions)`` runs the fixed pipeline with only the
    template swapped and returns prediction records keyed by question id.
    """
    unlabeled = [q.id for q in questions if not is_labeled(q)]
    if unlabeled:
        raise EvaluationError(f"ablation needs labeled data; unlabeled: {', '.join(unlabeled[:5])}")
    result = AblationResult({})
    for tid in _ordered({TemplateId.parse(p) for p in prompt_ids}):
        try:
            predictions = answer_all(tid, questions)
            report, _ = evaluate(questions, predictions, scheme)
        except Exception as exc:  # a failed variant must not hide the others
            logger.error("ablation pass %s aborted: %s", tid.cli_name, exc)
            result.failed[tid] = str(exc)
            continue
        report.label = tid.cli_name
        result.reports[tid] = report
    return result
