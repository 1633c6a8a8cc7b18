"""Ranking evaluation: score matrices, CMC curves, mean average precision.

Gallery candidates are ranked by descending margin score; equal scores are
broken by ascending gallery index so results are reproducible under input
permutations.  Probes without any true gallery match are excluded from the
denominators and counted separately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FeatureRecord, ModelState, pair_margins, stack_features


@dataclass
class ScoreMatrix:
    scores: np.ndarray  # (num_probes, num_gallery) margins
    probe_ids: list[str]
    gallery_ids: list[str]

    def __post_init__(self):
        if self.scores.shape != (len(self.probe_ids), len(self.gallery_ids)):
            raise ValueError(f"scores shape {self.scores.shape} does not match id vectors")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")


def score_all(state: ModelState, probes: list[FeatureRecord],
              gallery: list[FeatureRecord]) -> ScoreMatrix:
    """Margin of every probe-gallery combination."""
    if not probes or not gallery:
        raise ValueError("probes and gallery must be nonempty")
    Xp = stack_features(probes)
    Xg = stack_features(gallery)
    m = pair_margins(state.K, state.P,
                     np.repeat(Xp, len(gallery), axis=0),
                     np.tile(Xg, (len(probes), 1)))
    return ScoreMatrix(m.reshape(len(probes), len(gallery)),
                       [p.person_id for p in probes],
                       [g.person_id for g in gallery])


def _truth_matrix(sm: ScoreMatrix, truth: dict[str, str] | None) -> np.ndarray:
    gal = np.array(sm.gallery_ids)
    rows = []
    for pid in sm.probe_ids:
        target = pid if truth is None else truth.get(pid)
        rows.append(gal == target if target is not None else np.zeros(len(gal), bool))
    return np.array(rows)


def _rank_order(scores_row: np.ndarray) -> np.ndarray:
    # descending score, ties broken by ascending gallery index
    return np.lexsort((np.arange(scores_row.shape[0]), -scores_row))


@dataclass
class CmcResult:
    curve: np.ndarray  # curve[k-1] = recognition rate at rank k
    num_evaluated: int
    num_excluded: int  # probes with no true match in the gallery

    def rank(self, k: int) -> float:
        return float(self.curve[k - 1])


def cmc(sm: ScoreMatrix, truth: dict[str, str] | None = None) -> CmcResult:
    """Cumulative matching characteristic over ranks 1..|gallery|.

    ``truth`` maps probe id to its true gallery id; by default a gallery
    entry matches when its id equals the probe id.
    """
    matches = _truth_matrix(sm, truth)
    num_gallery = len(sm.gallery_ids)
    hits = np.zeros(num_gallery)
    evaluated = 0
    excluded = 0
    for row_scores, row_match in zip(sm.scores, matches):
        if not row_match.any():
            excluded += 1
            continue
        order = _rank_order(row_scores)
        first = int(np.flatnonzero(row_match[order])[0])
        hits[first:] += 1
        evaluated += 1
    if evaluated == 0:
        raise ValueError("no probe has a true match in the gallery")
    return CmcResult(hits / evaluated, evaluated, excluded)


def mean_average_precision(sm: ScoreMatrix, truth: dict[str, str] | None = None) -> float:
    """Mean over probes of average precision down the ranked gallery list."""
    matches = _truth_matrix(sm, truth)
    aps = []
    for row_scores, row_match in zip(sm.scores, matches):
        if not row_match.any():
            continue
        order = _rank_order(row_scores)
        rel = row_match[order]
        positions = np.flatnonzero(rel)
        precision_at = (np.arange(1, len(positions) + 1)) / (positions + 1)
        aps.append(float(precision_at.mean()))
    if not aps:
        raise ValueError("no probe has a true match in the gallery")
    return float(np.mean(aps))


@dataclass
class CheckpointEval:
    checkpoint: int          # number of batches consumed by this model
    labeled_pairs: int
    labeled_percent: float
    cmc: list[float]
    map: float
    excluded_probes: int = 0


@dataclass
class EvalReport:
    rows: list[CheckpointEval] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rows": [{
            "checkpoint": r.checkpoint,
            "labeled_pairs": r.labeled_pairs,
            "labeled_percent": r.labeled_percent,
            "cmc": list(r.cmc),
            "map": r.map,
            "excluded_probes": r.excluded_probes,
        } for r in self.rows]}

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalReport":
        return cls([CheckpointEval(**row) for row in raw["rows"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def write_cmc_csv(self, path: str | Path) -> None:
        """Rank-by-checkpoint CMC table, one rank per line."""
        with open(path, "w") as fh:
            fh.write("rank," + ",".join(f"ckpt_{r.checkpoint}" for r in self.rows) + "\n")
            max_rank = max(len(r.cmc) for r in self.rows)
            for k in range(max_rank):
                cells = [f"{r.cmc[k]:.6f}" if k < len(r.cmc) else "" for r in self.rows]
                fh.write(f"{k + 1}," + ",".join(cells) + "\n")


def evaluate_model(state: ModelState, test_records: list[FeatureRecord]) -> tuple[CmcResult, float]:
    from .data import Dataset  # late import: avoids a module cycle
    probes = Dataset.probes(test_records)
    gallery = Dataset.gallery(test_records)
    sm = score_all(state, probes, gallery)
    return cmc(sm), mean_average_precision(sm)


def report_for_session(session, test_records: list[FeatureRecord]) -> EvalReport:
    """Evaluate every checkpoint of an adaptation session on the test split.

    One row per checkpoint: CMC curve, mAP, and the cumulative labeled
    percentage at the time the checkpoint was taken.
    """
    if not session.checkpoints:
        raise ValueError("session has no checkpoints to evaluate")
    rows = []
    for ck in session.checkpoints:
        cmc_res, ap = evaluate_model(ck.state, test_records)
        labeled = len(ck.labeled_keys)
        rows.append(CheckpointEval(
            checkpoint=ck.batches_consumed,
            labeled_pairs=labeled,
            labeled_percent=100.0 * labeled / session.n_total,
            cmc=[float(v) for v in cmc_res.curve],
            map=ap,
            excluded_probes=cmc_res.num_excluded))
    return EvalReport(rows)
