"""Rater reliability filtering and clip-level label aggregation.

Raters are screened by correlating their fluidity ratings on the shared
reliability clips against the leave-one-out consensus of everyone else;
surviving ratings are averaged per clip and binarized at a fixed threshold.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .sessions import CORE_EVENTS, RatingRecord, SchemaError
from .stats import pearson_r

RELIABILITY_MIN_R = 0.2
MIN_RELIABILITY_COVERAGE = 0.75
BINARIZE_THRESHOLD = 2.5
MIN_RATERS = 4
EVENT_MAJORITY_SHARE = 0.40


@dataclass(frozen=True)
class RaterReliability:
    rater_id: str
    r: float | None
    included: bool


@dataclass(frozen=True)
class ClipLabels:
    clip_id: str
    n_raters: int
    mean_fluidity: float
    mean_enjoyment: float
    fluidity_label: int  # 1 = high, 0 = low
    enjoyment_label: int
    event_label: str | None


def filter_reliable_raters(
    ratings: Sequence[RatingRecord],
    reliability_clip_ids: set[str],
    min_r: float = RELIABILITY_MIN_R,
) -> list[RaterReliability]:
    """Score every rater against the leave-one-out consensus.

    A rater's r pairs each of their reliability-clip fluidity ratings (both
    presentations count as separate points) with the mean rating of all
    other raters on that clip. Raters covering less than 75% of the
    reliability clips, or with constant ratings, get an undefined r and are
    excluded; inclusion otherwise requires r strictly above min_r.
    """
    if not reliability_clip_ids:
        raise ValueError("no reliability clips given")
    rel = [r for r in ratings if r.clip_id in reliability_clip_ids]
    by_clip_sum: dict[str, float] = defaultdict(float)
    by_clip_n: dict[str, int] = defaultdict(int)
    by_rater_clip: dict[str, dict[str, list[int]]] = defaultdict(lambda: defaultdict(list))
    for r in rel:
        by_clip_sum[r.clip_id] += r.fluidity
        by_clip_n[r.clip_id] += 1
        by_rater_clip[r.rater_id][r.clip_id].append(r.fluidity)

    out = []
    for rater_id in sorted(by_rater_clip):
        clips = by_rater_clip[rater_id]
        coverage = len(clips) / len(reliability_clip_ids)
        if coverage < MIN_RELIABILITY_COVERAGE:
            out.append(RaterReliability(rater_id, None, False))
            continue
        own, consensus = [], []
        for clip_id in sorted(clips):
            mine = clips[clip_id]
            others_n = by_clip_n[clip_id] - len(mine)
            if others_n <= 0:
                continue
            others_mean = (by_clip_sum[clip_id] - sum(mine)) / others_n
            for v in mine:
                own.append(float(v))
                consensus.append(others_mean)
        try:
            r = pearson_r(own, consensus)
        except ValueError:
            out.append(RaterReliability(rater_id, None, False))
            continue
        out.append(RaterReliability(rater_id, r, r > min_r))
    return out


def majority_event(ratings: Sequence[RatingRecord]) -> str | None:
    """The modal event when unique, core, and strictly above a 40% share."""
    if not ratings:
        return None
    counts = Counter(r.event for r in ratings)
    top = counts.most_common()
    best, best_n = top[0]
    if len(top) > 1 and top[1][1] == best_n:
        return None
    if best not in CORE_EVENTS:
        return None
    if best_n / len(ratings) <= EVENT_MAJORITY_SHARE:
        return None
    return best


def aggregate_and_binarize(
    ratings: Sequence[RatingRecord],
    included_raters: set[str],
    threshold: float = BINARIZE_THRESHOLD,
    min_raters: int = MIN_RATERS,
) -> list[ClipLabels]:
    """Average included raters per clip and binarize both scales.

    Low means strictly below the threshold (a mean exactly at the threshold
    counts as high). Clips with fewer than min_raters distinct raters are
    omitted. Aggregation is independent of record order.
    """
    by_clip: dict[str, list[RatingRecord]] = defaultdict(list)
    for r in ratings:
        if r.rater_id in included_raters:
            by_clip[r.clip_id].append(r)

    out = []
    for clip_id in sorted(by_clip):
        records = by_clip[clip_id]
        n_raters = len({r.rater_id for r in records})
        if n_raters < min_raters:
            continue
        mean_fl = sum(r.fluidity for r in records) / len(records)
        mean_en = sum(r.enjoyment for r in records) / len(records)
        out.append(
            ClipLabels(
                clip_id=clip_id,
                n_raters=n_raters,
                mean_fluidity=mean_fl,
                mean_enjoyment=mean_en,
                fluidity_label=0 if mean_fl < threshold else 1,
                enjoyment_label=0 if mean_en < threshold else 1,
                event_label=majority_event(records),
            )
        )
    return out


def prepare_labels(
    ratings: Sequence[RatingRecord],
    threshold: float = BINARIZE_THRESHOLD,
    min_raters: int = MIN_RATERS,
    min_r: float = RELIABILITY_MIN_R,
) -> tuple[list[ClipLabels], list[RaterReliability]]:
    """Full label pipeline: reliability screen, then aggregate and binarize."""
    reliability_clips = {r.clip_id for r in ratings if r.is_reliability_block}
    if reliability_clips:
        reliability = filter_reliable_raters(ratings, reliability_clips, min_r=min_r)
        included = {r.rater_id for r in reliability if r.included}
    else:
        reliability = []
        included = {r.rater_id for r in ratings}
    labels = aggregate_and_binarize(
        ratings, included, threshold=threshold, min_raters=min_raters
    )
    return labels, reliability


# ---------------------------------------------------------------------------
# Labels CSV (header: clip_id,n_raters,mean_fluidity,mean_enjoyment,
#             label_fluidity,label_enjoyment,label_event)
# ---------------------------------------------------------------------------

_LABELS_HEADER = ["clip_id", "n_raters", "mean_fluidity", "mean_enjoyment",
                  "label_fluidity", "label_enjoyment", "label_event"]


def write_labels_csv(path: str | Path, labels: Iterable[ClipLabels]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_LABELS_HEADER)
        for c in labels:
            writer.writerow(
                [c.clip_id, c.n_raters, repr(float(c.mean_fluidity)), repr(float(c.mean_enjoyment)),
                 c.fluidity_label, c.enjoyment_label, c.event_label or ""]
            )


def read_labels_csv(path: str | Path) -> list[ClipLabels]:
    path = Path(path)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _LABELS_HEADER:
            raise SchemaError(f"{path}: bad labels header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise SchemaError(f"{path}:{lineno}: expected 7 columns")
            event = row[6] or None
            if event is not None and event not in CORE_EVENTS:
                raise SchemaError(f"{path}:{lineno}: bad event label {event!r}")
            out.append(
                ClipLabels(
                    clip_id=row[0],
                    n_raters=int(row[1]),
                    mean_fluidity=float(row[2]),
                    mean_enjoyment=float(row[3]),
                    fluidity_label=int(row[4]),
                    enjoyment_label=int(row[5]),
                    event_label=event,
                )
            )
    return out
