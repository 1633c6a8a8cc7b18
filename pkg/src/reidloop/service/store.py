"""Session lifecycle for the annotation service.

Each session lives in its own directory: a session manifest, the append-only
label log, and one checkpoint per consumed batch.  Everything else (task
queues, calibrators, metrics) is recomputed deterministically, so replaying
the directory after a crash reproduces the exact pre-crash state -- including
bit-identical checkpoints for any update that completes twice.

Mutations are serialized per session; incremental updates run on a worker
thread while status reads keep serving consistent snapshots.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path

from ..adaptation import (AdaptationConfig, AdaptationSession, BatchPartition,
                          SessionCheckpoint, _group_by_id, append_label_jsonl,
                          apply_batch_update, initialize_session,
                          read_label_jsonl, read_session_manifest,
                          select_batch_pairs, write_session_manifest)
from ..checkpoint import load_checkpoint, save_checkpoint
from ..core import LabeledPair, LabelSource
from ..data import Dataset, load_dataset
from ..evaluation import evaluate_model


class SessionNotFound(KeyError):
    pass


class TaskConflict(RuntimeError):
    pass


class UpdateInProgress(RuntimeError):
    pass


@dataclass
class TaskRecord:
    task_id: str
    batch: int
    probe_id: str
    gallery_id: str
    state: str = "pending"  # pending | labeled | skipped
    label: int | None = None


@dataclass
class CheckpointMetrics:
    batch: int
    labeled_pairs: int
    labeled_percent: float
    rank1: float
    map: float
    cmc: list[float]
    excluded_probes: int = 0

    def to_dict(self) -> dict:
        return {"batch": self.batch, "labeled_pairs": self.labeled_pairs,
                "labeled_percent": self.labeled_percent, "rank1": self.rank1,
                "map": self.map, "cmc": self.cmc,
                "excluded_probes": self.excluded_probes}


class ManagedSession:
    def __init__(self, session_id: str, directory: Path, dataset: Dataset,
                 manifest_path: str, session: AdaptationSession):
        self.session_id = session_id
        self.directory = directory
        self.dataset = dataset
        self.manifest_path = manifest_path
        self.session = session
        self.phase = "ready"
        self.lock = threading.RLock()
        self.tasks: dict[str, TaskRecord] = {}
        self.task_order: list[str] = []
        self.open_batch: int | None = None
        self.selected_keys: list[tuple[str, str]] = []
        self.metrics: list[CheckpointMetrics] = []
        self.update_error: str | None = None
        self._update_thread: threading.Thread | None = None

    # --- paths ---------------------------------------------------------

    @property
    def labels_path(self) -> Path:
        return self.directory / "labels.jsonl"

    def checkpoint_path(self, batch: int) -> Path:
        return self.directory / "checkpoints" / f"ckpt_{batch:04d}.tma"

    @property
    def metrics_path(self) -> Path:
        return self.directory / "metrics.json"

    # --- bookkeeping ----------------------------------------------------

    def _evaluate_checkpoint(self, batch: int, state=None) -> CheckpointMetrics:
        session = self.session
        state = session.model if state is None else state
        cmc_res, ap = evaluate_model(state, self.dataset.test_records())
        labeled = sum(1 for b in session.label_batch.values() if b <= batch)
        return CheckpointMetrics(batch=batch,
                                 labeled_pairs=labeled,
                                 labeled_percent=100.0 * labeled / session.n_total,
                                 rank1=cmc_res.rank(1), map=ap,
                                 cmc=[float(v) for v in cmc_res.curve],
                                 excluded_probes=cmc_res.num_excluded)

    def _persist_metrics(self) -> None:
        self.metrics_path.write_text(json.dumps(
            [m.to_dict() for m in self.metrics], indent=2))

    def _save_checkpoint(self, batch: int) -> None:
        cfg = self.session.config
        if batch == 1:
            tcfg = cfg.trainer_config(cfg.offline_epochs, cfg.offline_iters, cfg.seed)
        else:
            tcfg = cfg.trainer_config(cfg.update_epochs, cfg.update_iters,
                                      cfg.seed + batch)
        path = self.checkpoint_path(batch)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, self.session.model, tcfg)

    # --- task queue ------------------------------------------------------

    def ensure_tasks(self, batch: int) -> list[TaskRecord]:
        """Generate (once) and return the task queue for the given batch."""
        with self.lock:
            session = self.session
            if not 1 <= batch <= session.num_batches:
                raise ValueError(f"batch {batch} out of range 1..{session.num_batches}")
            if batch <= session.batches_consumed:
                return []  # already consumed: nothing pending
            if self.phase == "updating":
                raise UpdateInProgress("model update in progress; poll status")
            if batch != session.batches_consumed + 1:
                raise ValueError(
                    f"batch {batch} is not next; current batch is "
                    f"{session.batches_consumed + 1}")
            if self.open_batch == batch:
                return [self.tasks[t] for t in self.task_order]
            selected = select_batch_pairs(session, batch)
            self.open_batch = batch
            self.selected_keys = selected
            self.tasks = {}
            self.task_order = []
            for idx, key in enumerate(selected):
                tid = f"b{batch}-{idx:05d}"
                rec = TaskRecord(tid, batch, key[0], key[1])
                stored = session.label_index.get(key)
                if stored is not None:
                    rec.state = "labeled"
                    rec.label = stored.label
                self.tasks[tid] = rec
                self.task_order.append(tid)
            if self._pending_count() == 0:
                self._schedule_update()
            return [self.tasks[t] for t in self.task_order]

    def _pending_count(self) -> int:
        return sum(1 for t in self.tasks.values() if t.state == "pending")

    def submit_label(self, task_id: str, label: int | None, skip: bool,
                     source: str) -> tuple[TaskRecord, int]:
        with self.lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise SessionNotFound(f"unknown task {task_id}")
            if task.state != "pending":
                raise TaskConflict(f"task {task_id} already {task.state}")
            if skip:
                task.state = "skipped"
                self.session.events.append(
                    f"batch {task.batch}: pair ({task.probe_id}, {task.gallery_id}) skipped")
            else:
                if label not in (-1, 1):
                    raise ValueError("label must be -1 or +1 unless skipping")
                src = LabelSource(source)
                pair = LabeledPair(self.session.probes_by_id[task.probe_id][0],
                                   self.session.gallery_by_id[task.gallery_id][0],
                                   label, src)
                self.session.record_label(pair, task.batch)
                append_label_jsonl(self.labels_path, pair, task.batch)
                task.state = "labeled"
                task.label = label
            pending = self._pending_count()
            if pending == 0:
                self._schedule_update()
            return task, pending

    # --- incremental update ----------------------------------------------

    def _schedule_update(self) -> None:
        # caller holds the lock; one update at a time per session
        if self.phase == "updating":
            return
        batch = self.open_batch
        if batch is None:
            return
        self.phase = "updating"
        self.update_error = None
        thread = threading.Thread(target=self._run_update, args=(batch,),
                                  name=f"update-{self.session_id}-b{batch}",
                                  daemon=True)
        self._update_thread = thread
        thread.start()

    def _run_update(self, batch: int) -> None:
        try:
            apply_batch_update(self.session, batch, self.selected_keys)
            self._save_checkpoint(batch)
            metrics = self._evaluate_checkpoint(batch)
            with self.lock:
                self.metrics.append(metrics)
                self._persist_metrics()
                self.tasks = {}
                self.task_order = []
                self.open_batch = None
                self.selected_keys = []
                self.phase = "ready"
        except Exception as exc:  # surfaced through status, not swallowed
            with self.lock:
                self.update_error = f"{type(exc).__name__}: {exc}"
                self.phase = "ready"

    def wait_idle(self, timeout: float = 60.0) -> None:
        thread = self._update_thread
        if thread is not None:
            thread.join(timeout)

    # --- views -----------------------------------------------------------

    def status_dict(self) -> dict:
        with self.lock:
            session = self.session
            current = (session.batches_consumed + 1
                       if session.batches_consumed < session.num_batches else None)
            progress = None
            if self.open_batch is not None:
                labeled = sum(1 for t in self.tasks.values() if t.state == "labeled")
                skipped = sum(1 for t in self.tasks.values() if t.state == "skipped")
                progress = {"batch": self.open_batch, "total": len(self.tasks),
                            "labeled": labeled, "skipped": skipped,
                            "pending": self._pending_count()}
            return {
                "session_id": self.session_id,
                "phase": self.phase,
                "dataset": self.dataset.name,
                "num_batches": session.num_batches,
                "batches_consumed": session.batches_consumed,
                "current_batch": current,
                "batch_progress": progress,
                "effort": {"labeled_pairs": session.labeled_pairs,
                           "total_pairs": session.n_total,
                           "percent": session.effort_percent},
                "checkpoints": [{"batch": m.batch,
                                 "labeled_percent": m.labeled_percent,
                                 "rank1": m.rank1, "map": m.map}
                                for m in self.metrics],
            }

    def report_dict(self) -> dict:
        with self.lock:
            return {"session_id": self.session_id,
                    "rows": [{"checkpoint": m.batch,
                              "labeled_pairs": m.labeled_pairs,
                              "labeled_percent": m.labeled_percent,
                              "cmc": m.cmc, "map": m.map,
                              "excluded_probes": m.excluded_probes}
                             for m in self.metrics]}


class SessionStore:
    """Registry of sessions under one data directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, ManagedSession] = {}
        self._lock = threading.Lock()

    def list_sessions(self) -> list[ManagedSession]:
        with self._lock:
            return list(self._sessions.values())

    def get(self, session_id: str) -> ManagedSession:
        with self._lock:
            found = self._sessions.get(session_id)
        if found is None:
            if (self.root / session_id / "session.json").exists():
                return self.load(session_id)
            raise SessionNotFound(session_id)
        return found

    def create(self, manifest: str, config_overrides: dict | None = None,
               session_id: str | None = None) -> tuple[ManagedSession, bool]:
        """Create a session (training the initial model) or reopen a persisted one."""
        if session_id:
            existing = self.root / session_id / "session.json"
            if existing.exists():
                return self.get(session_id), True
        sid = session_id or uuid.uuid4().hex[:12]
        directory = self.root / sid
        directory.mkdir(parents=True, exist_ok=True)
        config = AdaptationConfig.from_dict(config_overrides or {})
        dataset = load_dataset(manifest)

        session = initialize_session(dataset.train_records(), config)
        managed = ManagedSession(sid, directory, dataset, str(manifest), session)
        write_session_manifest(directory / "session.json", session, str(manifest))
        for pair in session.label_log:
            append_label_jsonl(managed.labels_path, pair, 1)
        managed._save_checkpoint(1)
        managed.metrics.append(managed._evaluate_checkpoint(1))
        managed._persist_metrics()
        with self._lock:
            self._sessions[sid] = managed
        return managed, False

    def load(self, session_id: str) -> ManagedSession:
        """Rebuild a session from its directory: manifest + log + checkpoints."""
        directory = self.root / session_id
        doc = read_session_manifest(directory / "session.json")
        dataset = load_dataset(doc["dataset_manifest"])
        config = AdaptationConfig.from_dict(doc["config"])
        part = BatchPartition.from_dict(doc["partition"])

        cameras = sorted({r.camera_id for r in dataset.train_records()})
        probes = [r for r in dataset.train_records() if r.camera_id == cameras[0]]
        gallery = [r for r in dataset.train_records() if r.camera_id == cameras[1]]
        session = AdaptationSession(config=config, partition=part,
                                    probes_by_id=_group_by_id(probes),
                                    gallery_by_id=_group_by_id(gallery),
                                    model=None)  # type: ignore[arg-type]

        for entry in read_label_jsonl(directory / "labels.jsonl"):
            pair = LabeledPair(session.probes_by_id[entry["probe_id"]][0],
                               session.gallery_by_id[entry["gallery_id"]][0],
                               entry["label"], LabelSource(entry["source"]))
            session.record_label(pair, entry["batch"])

        consumed = 0
        ckpt_dir = directory / "checkpoints"
        states = {}
        if ckpt_dir.exists():
            for path in sorted(ckpt_dir.glob("ckpt_*.tma")):
                batch = int(path.stem.split("_")[1])
                states[batch], _ = load_checkpoint(path)
                consumed = max(consumed, batch)
        if consumed == 0:
            raise SessionNotFound(f"{session_id}: no checkpoints on disk")
        session.model = states[consumed]
        session.batches_consumed = consumed
        for batch in sorted(states):
            keys = frozenset(k for k, b in session.label_batch.items() if b <= batch)
            session.checkpoints.append(SessionCheckpoint(states[batch], batch, keys))

        managed = ManagedSession(session_id, directory, dataset,
                                 doc["dataset_manifest"], session)
        if managed.metrics_path.exists():
            rows = json.loads(managed.metrics_path.read_text())
            managed.metrics = [CheckpointMetrics(**row) for row in rows
                               if row["batch"] <= consumed]
        while len(managed.metrics) < len(states):
            # metrics file lagged the checkpoints; recompute the missing rows
            batch = sorted(states)[len(managed.metrics)]
            managed.metrics.append(managed._evaluate_checkpoint(batch, states[batch]))
        managed._persist_metrics()

        with self._lock:
            self._sessions[session_id] = managed

        # resume an interrupted batch: labels logged for the next batch mean
        # its queue was open when the process stopped
        next_batch = consumed + 1
        if next_batch <= session.num_batches and any(
                b == next_batch for b in session.label_batch.values()):
            managed.ensure_tasks(next_batch)
        return managed
