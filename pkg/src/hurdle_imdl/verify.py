"""Graded verification: confusion counts, RMSE/ME, POD/FAR/ETS per rain grade.

A grade is the event ``observation >= threshold``.  Scores whose denominator
vanishes are reported as ``None`` rather than zero.
"""
import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import DomainError

DEFAULT_THRESHOLDS = (0.0, 0.1, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0)

REPORT_COLUMNS = ("threshold", "n_grade", "rmse", "me",
                  "tp", "fp", "fn", "tn", "pod", "far", "ets")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self):
        return self.tp + self.fp + self.fn + self.tn


def check_thresholds(thresholds):
    th = np.asarray(thresholds, dtype=np.float64)
    if th.ndim != 1 or th.size == 0 or np.any(np.diff(th) <= 0):
        raise DomainError("thresholds must be a non-empty, strictly increasing sequence")
    return th


def _pair(retrievals, observations):
    ret = np.asarray(retrievals, dtype=np.float64).ravel()
    obs = np.asarray(observations, dtype=np.float64).ravel()
    if ret.shape != obs.shape:
        raise DomainError(f"length mismatch: {ret.size} retrievals, {obs.size} observations")
    if np.any(~(ret >= 0)) or np.any(~(obs >= 0)):
        raise DomainError("retrievals and observations must be finite and >= 0")
    return ret, obs


def confusion(retrievals, observations, threshold):
    ret, obs = _pair(retrievals, observations)
    counts = kernels.graded_tallies(ret, obs, np.array([threshold], dtype=np.float64))[0]
    return ConfusionCounts(*(int(v) for v in counts[0]))


def pod(c):
    d = c.tp + c.fn
    return c.tp / d if d else None


def far(c):
    """False alarm rate over observed non-events, FP / (FP + TN)."""
    d = c.fp + c.tn
    return c.fp / d if d else None


def ets(c):
    n = c.n
    if n == 0:
        return None
    hits_random = (c.tp + c.fp) * (c.tp + c.fn) / n
    d = c.tp + c.fp + c.fn - hits_random
    if d == 0:
        return None
    return (c.tp - hits_random) / d


def graded_errors(retrievals, observations, threshold):
    """RMSE and ME (retrieval minus observation) over ``obs >= threshold``.

    Returns ``(None, None)`` for an empty grade.
    """
    ret, obs = _pair(retrievals, observations)
    _, grade_n, sum_res, sum_sq = kernels.graded_tallies(
        ret, obs, np.array([threshold], dtype=np.float64))
    return _errors(int(grade_n[0]), sum_res[0], sum_sq[0])


def _errors(n, sum_res, sum_sq):
    if n == 0:
        return None, None
    return math.sqrt(float(sum_sq) / n), float(sum_res) / n


@dataclass(frozen=True)
class GradeRow:
    threshold: float
    n_grade: int
    rmse: float
    me: float
    tp: int
    fp: int
    fn: int
    tn: int
    pod: float
    far: float
    ets: float

    @property
    def counts(self):
        return ConfusionCounts(self.tp, self.fp, self.fn, self.tn)


@dataclass(frozen=True)
class GradedReport:
    rows: tuple

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    def row(self, threshold):
        for r in self.rows:
            if r.threshold == threshold:
                return r
        raise KeyError(threshold)

    def to_records(self):
        return [asdict(r) for r in self.rows]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for rec in self.to_records():
            w.writerow(["" if rec[k] is None else repr(rec[k]) for k in REPORT_COLUMNS])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"columns": list(REPORT_COLUMNS), "rows": self.to_records()},
                          indent=2) + "\n"

    @classmethod
    def from_records(cls, records):
        return cls(tuple(GradeRow(**{k: r[k] for k in REPORT_COLUMNS}) for r in records))


def full_report(retrievals, observations, thresholds=DEFAULT_THRESHOLDS):
    ret, obs = _pair(retrievals, observations)
    th = check_thresholds(thresholds)
    counts, grade_n, sum_res, sum_sq = kernels.graded_tallies(ret, obs, th)
    rows = []
    for j, t in enumerate(th):
        c = ConfusionCounts(*(int(v) for v in counts[j]))
        rmse, me = _errors(int(grade_n[j]), sum_res[j], sum_sq[j])
        rows.append(GradeRow(float(t), int(grade_n[j]), rmse, me,
                             c.tp, c.fp, c.fn, c.tn, pod(c), far(c), ets(c)))
    return GradedReport(tuple(rows))
