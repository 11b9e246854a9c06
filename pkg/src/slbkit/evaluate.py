"""Agreement and accuracy metrics for label sets and classifier output."""

from __future__ import annotations

from dataclasses import dataclass

from .core import ConfigError, IntentionLabel, ValidationError


@dataclass(frozen=True)
class MatchRule:
    """How a candidate label may claim a reference label of the same class."""

    kind: str
    iou_threshold: float = 0.5
    onset_tolerance_ms: int = 500

    def __post_init__(self):
        if self.kind not in ("iou", "onset"):
            raise ConfigError(f"unknown match rule kind {self.kind!r}")
        if self.kind == "iou" and not (0.0 < self.iou_threshold <= 1.0):
            raise ConfigError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if self.kind == "onset" and self.onset_tolerance_ms < 0:
            raise ConfigError(f"onset_tolerance_ms must be >= 0, got {self.onset_tolerance_ms}")

    @classmethod
    def iou(cls, threshold: float = 0.5) -> "MatchRule":
        return cls(kind="iou", iou_threshold=threshold)

    @classmethod
    def onset(cls, tolerance_ms: int) -> "MatchRule":
        return cls(kind="onset", onset_tolerance_ms=tolerance_ms)

    def describe(self) -> str:
        if self.kind == "iou":
            return f"iou>={self.iou_threshold}"
        return f"onset<={self.onset_tolerance_ms}ms"

    def matches(self, reference: IntentionLabel, candidate: IntentionLabel) -> bool:
        if reference.class_id != candidate.class_id:
            return False
        if self.kind == "iou":
            return temporal_iou(reference, candidate) >= self.iou_threshold
        return abs(candidate.t_start_ms - reference.t_start_ms) <= self.onset_tolerance_ms


def temporal_iou(a: IntentionLabel, b: IntentionLabel) -> float:
    inter = min(a.t_end_ms, b.t_end_ms) - max(a.t_start_ms, b.t_start_ms)
    if inter <= 0:
        return 0.0
    union = max(a.t_end_ms, b.t_end_ms) - min(a.t_start_ms, b.t_start_ms)
    return inter / union


@dataclass
class AgreementReport:
    agreement: float
    matched: int
    total_reference: int
    total_candidate: int
    per_class: dict[int, tuple[int, int]]
    mean_onset_error_ms: float | None
    rule: str

    def to_dict(self) -> dict:
        return {
            "agreement": self.agreement,
            "matched": self.matched,
            "total_reference": self.total_reference,
            "total_candidate": self.total_candidate,
            "per_class": {
                str(cid): {"matched": m, "total": t}
                for cid, (m, t) in sorted(self.per_class.items())
            },
            "mean_onset_error_ms": self.mean_onset_error_ms,
            "rule": self.rule,
        }


def score_agreement(
    reference: list[IntentionLabel],
    candidate: list[IntentionLabel],
    rule: MatchRule,
) -> AgreementReport:
    """Greedy one-to-one matching of candidate labels against a reference.

    Both sides are walked in time order; each candidate claims the earliest
    unmatched reference its class and the rule allow.  Agreement is the
    matched fraction of the reference; with an empty reference it is 1.0
    only when the candidate is empty too.
    """
    refs = sorted(reference, key=lambda l: (l.t_start_ms, l.class_id))
    cands = sorted(candidate, key=lambda l: (l.t_start_ms, l.class_id))
    ref_matched = [False] * len(refs)
    onset_errors = []
    matched = 0
    per_class: dict[int, list[int]] = {}
    for lab in refs:
        per_class.setdefault(lab.class_id, [0, 0])[1] += 1
    for lab in cands:
        per_class.setdefault(lab.class_id, [0, 0])

    for cand in cands:
        for i, ref in enumerate(refs):
            if ref_matched[i]:
                continue
            if rule.matches(ref, cand):
                ref_matched[i] = True
                matched += 1
                per_class[ref.class_id][0] += 1
                onset_errors.append(abs(cand.t_start_ms - ref.t_start_ms))
                break

    if refs:
        agreement = matched / len(refs)
    else:
        agreement = 1.0 if not cands else 0.0
    return AgreementReport(
        agreement=agreement,
        matched=matched,
        total_reference=len(refs),
        total_candidate=len(cands),
        per_class={cid: (m, t) for cid, (m, t) in per_class.items()},
        mean_onset_error_ms=(sum(onset_errors) / len(onset_errors)) if onset_errors else None,
        rule=rule.describe(),
    )


def combine_agreement(reports: list[AgreementReport]) -> AgreementReport:
    """Pool per-recording reports into one corpus-level report.

    Counts add; agreement is recomputed from the pooled counts rather than
    averaged, so recordings with more labels weigh more.
    """
    if not reports:
        raise ValidationError("no reports to combine")
    rules = {r.rule for r in reports}
    if len(rules) > 1:
        raise ValidationError(f"reports use different match rules: {sorted(rules)}")
    matched = sum(r.matched for r in reports)
    total_ref = sum(r.total_reference for r in reports)
    total_cand = sum(r.total_candidate for r in reports)
    per_class: dict[int, list[int]] = {}
    for r in reports:
        for cid, (m, t) in r.per_class.items():
            bucket = per_class.setdefault(cid, [0, 0])
            bucket[0] += m
            bucket[1] += t
    onset_weight = 0
    onset_sum = 0.0
    for r in reports:
        if r.mean_onset_error_ms is not None:
            onset_sum += r.mean_onset_error_ms * r.matched
            onset_weight += r.matched
    if total_ref:
        agreement = matched / total_ref
    else:
        agreement = 1.0 if total_cand == 0 else 0.0
    return AgreementReport(
        agreement=agreement,
        matched=matched,
        total_reference=total_ref,
        total_candidate=total_cand,
        per_class={cid: (m, t) for cid, (m, t) in per_class.items()},
        mean_onset_error_ms=(onset_sum / onset_weight) if onset_weight else None,
        rule=reports[0].rule,
    )


@dataclass
class ConfusionMatrix:
    n_classes: int
    counts: list[list[int]]
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "counts": self.counts,
            "accuracy": self.accuracy,
        }


def build_confusion(
    truth: list[int],
    predicted: list[int],
    n_classes: int,
) -> ConfusionMatrix:
    """(n_classes+1) x (n_classes+1) matrix; class 0 is non-intention.

    Rows are truth, columns predictions; accuracy is the diagonal fraction.
    """
    if len(truth) != len(predicted):
        raise ValidationError(
            f"truth and predicted lengths differ: {len(truth)} vs {len(predicted)}"
        )
    if not truth:
        raise ValidationError("cannot build a confusion matrix from zero windows")
    size = n_classes + 1
    counts = [[0] * size for _ in range(size)]
    for t, p in zip(truth, predicted):
        if not (0 <= t <= n_classes):
            raise ValidationError(f"truth class {t} outside [0, {n_classes}]")
        if not (0 <= p <= n_classes):
            raise ValidationError(f"predicted class {p} outside [0, {n_classes}]")
        counts[t][p] += 1
    total = len(truth)
    diag = sum(counts[i][i] for i in range(size))
    accuracy = diag / total
    return ConfusionMatrix(n_classes=n_classes, counts=counts, accuracy=accuracy)


@dataclass(frozen=True)
class TimeSavingsReport:
    n_samples: int
    minutes_per_manual_label: float
    manual_hours: float
    slb_hours: float
    saved_hours: float


def time_savings(
    n_samples: int,
    minutes_per_manual_label: float,
    slb_hours: float,
) -> TimeSavingsReport:
    """Manual annotation cost versus the self-labeling run for a dataset."""
    if n_samples < 0:
        raise ValidationError(f"n_samples must be >= 0, got {n_samples}")
    if minutes_per_manual_label < 0:
        raise ValidationError("minutes_per_manual_label must be >= 0")
    if slb_hours < 0:
        raise ValidationError("slb_hours must be >= 0")
    manual_hours = n_samples * minutes_per_manual_label / 60.0
    return TimeSavingsReport(
        n_samples=n_samples,
        minutes_per_manual_label=minutes_per_manual_label,
        manual_hours=manual_hours,
        slb_hours=slb_hours,
        saved_hours=manual_hours - slb_hours,
    )
