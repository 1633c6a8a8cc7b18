"""Batch-incremental model adaptation with selective labeling.

The training universe is split into disjoint identity batches.  Batch 1 is
fully labeled and trains the initial model off-line.  Every later batch is
consumed incrementally: probe-relevant gallery persons are selected with the
current model, only those pairs are sent to the label oracle, and the model
is updated by warm-restart training on the batch's resolved pairs.

Labels are deduplicated at the person-pair level: a (probe id, gallery id)
pair is queried at most once per session and reuse pulls the stored label.
Effort is the number of unique labeled person pairs over the full person-pair
universe of the training set.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .core import (FeatureRecord, LabeledPair, LabelSource, ModelState,
                   pair_margins)
from .selection import (CalibrationError, DEFAULT_CALIBRATOR, PlattCalibrator,
                        platt_fit, probe_relevant_set)
from .trainer import TrainerConfig, train


@dataclass(frozen=True)
class AdaptationConfig:
    alpha: float = 0.001
    beta: float = 0.001
    eta: float = 1.0
    rho: float = 1.0
    offline_epochs: int = 200
    offline_iters: int | None = None   # None -> 2x the first batch's pair count
    update_epochs: int = 150
    update_iters: int | None = None    # None -> 2x the update batch's pair count
    num_batches: int = 4
    epsilon: float = 0.1
    support_tau: float | None = None
    replicator_max_iters: int = 10_000
    seed: int = 0
    cumulative_replay: bool = False

    def __post_init__(self):
        if self.num_batches < 1:
            raise ValueError("num_batches must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def trainer_config(self, epochs: int, iters: int | None, seed: int) -> TrainerConfig:
        return TrainerConfig(alpha=self.alpha, beta=self.beta, eta=self.eta,
                             rho=self.rho, epochs=epochs,
                             iters_per_epoch=iters, seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "AdaptationConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class BatchGroup:
    probe_ids: list[str]
    gallery_ids: list[str]


@dataclass
class BatchPartition:
    batches: list[BatchGroup]
    pairs_per_batch: int  # approximate person-pair count z per batch
    seed: int

    def to_dict(self) -> dict:
        return {"seed": self.seed, "pairs_per_batch": self.pairs_per_batch,
                "batches": [{"probes": b.probe_ids, "gallery": b.gallery_ids}
                            for b in self.batches]}

    @classmethod
    def from_dict(cls, raw: dict) -> "BatchPartition":
        return cls([BatchGroup(b["probes"], b["gallery"]) for b in raw["batches"]],
                   raw["pairs_per_batch"], raw["seed"])


def partition(probes: list[FeatureRecord], gallery: list[FeatureRecord],
              num_batches: int, seed: int = 0) -> BatchPartition:
    """Seeded disjoint split of person identities into batches.

    Identities are partitioned jointly across cameras, so a person's probe
    and gallery images always land in the same batch and each batch's pair
    universe is its probe group crossed with its gallery group.
    """
    if num_batches < 1:
        raise ValueError("num_batches must be >= 1")
    probe_ids = {r.person_id for r in probes}
    gallery_ids = {r.person_id for r in gallery}
    everyone = sorted(probe_ids | gallery_ids)
    if num_batches > len(everyone):
        raise ValueError(f"cannot split {len(everyone)} identities into {num_batches} batches")
    rng = np.random.default_rng(seed)
    order = [everyone[i] for i in rng.permutation(len(everyone))]
    groups = np.array_split(np.array(order, dtype=object), num_batches)
    batches = [BatchGroup(sorted(i for i in g if i in probe_ids),
                          sorted(i for i in g if i in gallery_ids))
               for g in groups]
    z = (len(probe_ids) // num_batches) * (len(gallery_ids) // num_batches)
    return BatchPartition(batches, z, seed)


class LabelOracle(Protocol):
    def label_pairs(self, pairs: Sequence[tuple[FeatureRecord, FeatureRecord]]
                    ) -> list[tuple[int, LabelSource] | None]:
        """One (label, source) per pair; None marks a pair the oracle cannot label."""


class GroundTruthOracle:
    def label_pairs(self, pairs):
        return [(1 if p.person_id == g.person_id else -1, LabelSource.GROUND_TRUTH)
                for p, g in pairs]


class NoisyOracle:
    """Ground-truth labels flipped independently with a fixed probability."""

    def __init__(self, base: LabelOracle, error_rate: float, seed: int = 0,
                 allow_full_flip: bool = False):
        limit = 1.0 if allow_full_flip else 1.0 - 1e-12
        if not 0.0 <= error_rate <= limit:
            raise ValueError(f"error rate must be in [0, 1), got {error_rate}")
        self.base = base
        self.error_rate = error_rate
        self._rng = np.random.default_rng(seed)

    def label_pairs(self, pairs):
        out = []
        for answer in self.base.label_pairs(pairs):
            if answer is None:
                out.append(None)
                continue
            label, _ = answer
            if self.error_rate > 0 and self._rng.random() < self.error_rate:
                label = -label
            out.append((label, LabelSource.SIMULATED))
        return out


def simulated_oracle(ground_truth: LabelOracle | None = None,
                     error_rate: float = 0.0, seed: int = 0,
                     allow_full_flip: bool = False) -> NoisyOracle:
    return NoisyOracle(ground_truth or GroundTruthOracle(), error_rate, seed,
                       allow_full_flip)


class SelectionMode(str, Enum):
    DOMINANT_SET = "dominant-set"
    UNSUPERVISED = "unsupervised"
    SEMI_SUPERVISED = "semi-supervised"
    SUPERVISED = "supervised"


@dataclass
class SessionCheckpoint:
    state: ModelState
    batches_consumed: int
    labeled_keys: frozenset


@dataclass
class AdaptationSession:
    config: AdaptationConfig
    partition: BatchPartition
    probes_by_id: dict[str, list[FeatureRecord]]
    gallery_by_id: dict[str, list[FeatureRecord]]
    model: ModelState
    label_log: list[LabeledPair] = field(default_factory=list)
    label_index: dict[tuple[str, str], LabeledPair] = field(default_factory=dict)
    label_batch: dict[tuple[str, str], int] = field(default_factory=dict)
    checkpoints: list[SessionCheckpoint] = field(default_factory=list)
    batches_consumed: int = 0
    events: list[str] = field(default_factory=list)
    offline_history: list = field(default_factory=list)

    @property
    def num_batches(self) -> int:
        return len(self.partition.batches)

    @property
    def n_total(self) -> int:
        return len(self.probes_by_id) * len(self.gallery_by_id)

    @property
    def labeled_pairs(self) -> int:
        return len(self.label_index)

    @property
    def effort_percent(self) -> float:
        return 100.0 * self.labeled_pairs / self.n_total

    def batch_group(self, batch_number: int) -> BatchGroup:
        if not 1 <= batch_number <= self.num_batches:
            raise ValueError(f"batch {batch_number} out of range 1..{self.num_batches}")
        return self.partition.batches[batch_number - 1]

    def batch_probe_images(self, batch_number: int) -> list[FeatureRecord]:
        g = self.batch_group(batch_number)
        return [img for pid in g.probe_ids for img in self.probes_by_id[pid]]

    def batch_gallery_images(self, batch_number: int) -> list[FeatureRecord]:
        g = self.batch_group(batch_number)
        return [img for gid in g.gallery_ids for img in self.gallery_by_id[gid]]

    def batch_image_pairs(self, batch_number: int) -> int:
        return len(self.batch_probe_images(batch_number)) * len(self.batch_gallery_images(batch_number))

    def record_label(self, pair: LabeledPair, batch_number: int) -> None:
        if pair.key in self.label_index:
            return
        self.label_log.append(pair)
        self.label_index[pair.key] = pair
        self.label_batch[pair.key] = batch_number


def _group_by_id(records: list[FeatureRecord]) -> dict[str, list[FeatureRecord]]:
    out: dict[str, list[FeatureRecord]] = {}
    for r in records:
        out.setdefault(r.person_id, []).append(r)
    return out


def _image_pairs_for(session: AdaptationSession,
                     person_pairs: list[tuple[str, str]]) -> list[LabeledPair]:
    """Expand labeled person pairs into all their image pairs, selection order."""
    out = []
    for key in person_pairs:
        labeled = session.label_index.get(key)
        if labeled is None:
            continue
        for p_img in session.probes_by_id[key[0]]:
            for g_img in session.gallery_by_id[key[1]]:
                out.append(LabeledPair(p_img, g_img, labeled.label, labeled.source))
    return out


def refreshed_calibrator(session: AdaptationSession) -> PlattCalibrator:
    """Refit the score calibrator on the labels of all completed batches.

    Scores are the current model's margins of the labeled pairs' image pairs.
    Only labels from already-consumed batches participate so that a batch's
    selection is a pure function of the model and the prior log (replayable
    after a restart).  Falls back to the default sigmoid when fitting is
    impossible.
    """
    keys = [k for k, b in session.label_batch.items()
            if b <= session.batches_consumed]
    if not keys:
        return DEFAULT_CALIBRATOR
    pairs = _image_pairs_for(session, keys)
    Xp = np.stack([p.probe.feature for p in pairs])
    Xg = np.stack([p.gallery.feature for p in pairs])
    scores = pair_margins(session.model.K, session.model.P, Xp, Xg)
    labels = np.array([p.label for p in pairs])
    try:
        return platt_fit(scores, labels)
    except CalibrationError:
        return DEFAULT_CALIBRATOR


def select_batch_pairs(session: AdaptationSession, batch_number: int,
                       mode: SelectionMode = SelectionMode.DOMINANT_SET
                       ) -> list[tuple[str, str]]:
    """Person pairs the given batch puts up for labeling, in deterministic order."""
    group = session.batch_group(batch_number)
    gallery_images = session.batch_gallery_images(batch_number)
    if mode in (SelectionMode.SUPERVISED, SelectionMode.UNSUPERVISED,
                SelectionMode.SEMI_SUPERVISED):
        return [(pid, gid) for pid in group.probe_ids for gid in group.gallery_ids]

    cal = refreshed_calibrator(session)
    cfg = session.config
    seen: set[tuple[str, str]] = set()
    ordered: list[tuple[str, str]] = []
    for probe_img in session.batch_probe_images(batch_number):
        prs = probe_relevant_set(probe_img, gallery_images, session.model, cal,
                                 epsilon=cfg.epsilon, support_tau=cfg.support_tau,
                                 max_iters=cfg.replicator_max_iters)
        if prs.degenerate:
            session.events.append(f"batch {batch_number}: degenerate graph for "
                                  f"probe {probe_img.person_id}")
        if prs.exhausted:
            session.events.append(f"batch {batch_number}: selection exhausted for "
                                  f"probe {probe_img.person_id}")
        for member in prs.members:
            key = (probe_img.person_id, member.person_id)
            if key not in seen:
                seen.add(key)
                ordered.append(key)
    return ordered


def _query_oracle(session: AdaptationSession, oracle: LabelOracle,
                  keys: list[tuple[str, str]], batch_number: int) -> None:
    """Ask the oracle for keys not yet labeled; skipped pairs are logged."""
    fresh = [k for k in keys if k not in session.label_index]
    if not fresh:
        return
    rep_pairs = [(session.probes_by_id[p][0], session.gallery_by_id[g][0])
                 for p, g in fresh]
    answers = oracle.label_pairs(rep_pairs)
    for key, rep, answer in zip(fresh, rep_pairs, answers):
        if answer is None:
            session.events.append(f"batch {batch_number}: oracle skipped pair {key}")
            continue
        label, source = answer
        session.record_label(LabeledPair(rep[0], rep[1], label, source), batch_number)


def apply_batch_update(session: AdaptationSession, batch_number: int,
                       selected: list[tuple[str, str]]) -> None:
    """Warm-restart training on the batch's resolved pairs, then checkpoint."""
    cfg = session.config
    if cfg.cumulative_replay:
        train_keys = list(session.label_index)
    else:
        train_keys = selected
    train_pairs = _image_pairs_for(session, train_keys)
    if train_pairs:
        z = session.batch_image_pairs(batch_number)
        tcfg = cfg.trainer_config(cfg.update_epochs,
                                  cfg.update_iters or 2 * z,
                                  cfg.seed + batch_number)
        session.model = train(train_pairs, tcfg, init=session.model).state
    else:
        session.events.append(f"batch {batch_number}: no labeled pairs, model kept")
    session.batches_consumed = batch_number
    session.checkpoints.append(SessionCheckpoint(
        session.model.copy(), batch_number, frozenset(session.label_index)))


def initialize_session(train_records: list[FeatureRecord],
                       config: AdaptationConfig) -> AdaptationSession:
    """Partition identities, fully label batch 1, and train the initial model."""
    cameras = sorted({r.camera_id for r in train_records})
    if len(cameras) != 2:
        raise ValueError(f"expected records from exactly two cameras, got {cameras}")
    probes = [r for r in train_records if r.camera_id == cameras[0]]
    gallery = [r for r in train_records if r.camera_id == cameras[1]]
    part = partition(probes, gallery, config.num_batches, config.seed)
    session = AdaptationSession(
        config=config, partition=part,
        probes_by_id=_group_by_id(probes), gallery_by_id=_group_by_id(gallery),
        model=None)  # type: ignore[arg-type]  # set right below

    group = part.batches[0]
    keys = [(p, g) for p in group.probe_ids for g in group.gallery_ids]
    _query_oracle(session, GroundTruthOracle(), keys, batch_number=1)
    train_pairs = _image_pairs_for(session, keys)
    z = session.batch_image_pairs(1)
    tcfg = config.trainer_config(config.offline_epochs,
                                 config.offline_iters or 2 * z, config.seed)
    result = train(train_pairs, tcfg, init=None)
    session.model = result.state
    session.offline_history = result.history
    session.batches_consumed = 1
    session.checkpoints.append(SessionCheckpoint(
        session.model.copy(), 1, frozenset(session.label_index)))
    return session


def run_adaptation(session: AdaptationSession, oracle: LabelOracle,
                   update_batches: list[int] | None = None,
                   mode: SelectionMode = SelectionMode.DOMINANT_SET
                   ) -> AdaptationSession:
    """Consume update batches: select, label through the oracle, update, checkpoint."""
    if update_batches is None:
        update_batches = list(range(session.batches_consumed + 1,
                                    session.num_batches + 1))
    for batch_number in update_batches:
        if batch_number <= 1:
            raise ValueError("batch 1 is the off-line batch; updates start at 2")
        selected = select_batch_pairs(session, batch_number, mode)
        if mode is SelectionMode.DOMINANT_SET or mode is SelectionMode.SUPERVISED:
            _query_oracle(session, oracle, selected, batch_number)
        else:
            _apply_baseline_labels(session, oracle, selected, batch_number, mode)
        apply_batch_update(session, batch_number, selected)
    return session


def _pair_score(session: AdaptationSession, key: tuple[str, str]) -> float:
    p_imgs = session.probes_by_id[key[0]]
    g_imgs = session.gallery_by_id[key[1]]
    Xp = np.stack([p.feature for p in p_imgs for _ in g_imgs])
    Xg = np.stack([g.feature for _ in p_imgs for g in g_imgs])
    return float(pair_margins(session.model.K, session.model.P, Xp, Xg).mean())


def _apply_baseline_labels(session: AdaptationSession, oracle: LabelOracle,
                           keys: list[tuple[str, str]], batch_number: int,
                           mode: SelectionMode) -> None:
    cal = refreshed_calibrator(session)
    scores = {k: _pair_score(session, k) for k in keys}
    if mode is SelectionMode.UNSUPERVISED:
        for k in keys:
            if k in session.label_index:
                continue
            label = -1 if float(cal.probability(scores[k])) < 0.5 else 1
            session.record_label(LabeledPair(session.probes_by_id[k[0]][0],
                                             session.gallery_by_id[k[1]][0],
                                             label, LabelSource.SIMULATED),
                                 batch_number)
        return
    # semi-supervised: per probe, auto-label the 20 best and 20 worst ranked
    # pairs as positive / negative, ask the oracle about the rest
    by_probe: dict[str, list[tuple[str, str]]] = {}
    for k in keys:
        by_probe.setdefault(k[0], []).append(k)
    to_query: list[tuple[str, str]] = []
    for pid, probe_keys in by_probe.items():
        ranked = sorted(probe_keys, key=lambda k: -scores[k])
        top = ranked[:20]
        bottom = ranked[20:][-20:] if len(ranked) > 20 else []
        for k in top:
            if k not in session.label_index:
                session.record_label(LabeledPair(session.probes_by_id[k[0]][0],
                                                 session.gallery_by_id[k[1]][0],
                                                 1, LabelSource.SIMULATED), batch_number)
        for k in bottom:
            if k not in session.label_index:
                session.record_label(LabeledPair(session.probes_by_id[k[0]][0],
                                                 session.gallery_by_id[k[1]][0],
                                                 -1, LabelSource.SIMULATED), batch_number)
        middle = ranked[20:len(ranked) - 20]
        to_query.extend(middle)
    _query_oracle(session, oracle, to_query, batch_number)


def selection_baselines(session: AdaptationSession, batch_number: int,
                        mode: SelectionMode, oracle: LabelOracle
                        ) -> tuple[list[tuple[str, str]], int]:
    """Label one batch under a baseline criterion without updating the model.

    Returns the batch's person-pair keys and the number of pairs that needed
    a human (oracle) query under the chosen criterion.
    """
    selected = select_batch_pairs(session, batch_number, mode)
    counting = _CountingOracle(oracle)
    if mode in (SelectionMode.SUPERVISED, SelectionMode.DOMINANT_SET):
        _query_oracle(session, counting, selected, batch_number)
    else:
        _apply_baseline_labels(session, counting, selected, batch_number, mode)
    return selected, counting.queries


class _CountingOracle:
    def __init__(self, base: LabelOracle):
        self.base = base
        self.queries = 0

    def label_pairs(self, pairs):
        self.queries += len(pairs)
        return self.base.label_pairs(pairs)


# --- persistence -----------------------------------------------------------

def append_label_jsonl(path: str | Path, pair: LabeledPair, batch_number: int,
                       timestamp: float | None = None) -> None:
    entry = {"probe_id": pair.probe.person_id,
             "gallery_id": pair.gallery.person_id,
             "label": pair.label,
             "source": pair.source.value,
             "timestamp": time.time() if timestamp is None else timestamp,
             "batch": batch_number}
    with open(path, "a") as fh:
        fh.write(json.dumps(entry) + "\n")


def read_label_jsonl(path: str | Path) -> list[dict]:
    entries = []
    path = Path(path)
    if not path.exists():
        return entries
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad label entry: {exc}") from exc
    return entries


def write_session_manifest(path: str | Path, session: AdaptationSession,
                           dataset_manifest: str) -> None:
    doc = {"dataset_manifest": dataset_manifest,
           "config": session.config.to_dict(),
           "partition": session.partition.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2))


def read_session_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
