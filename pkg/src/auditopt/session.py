"""Resumable multi-wave audit sessions.

A session walks the state machine

    created -> wave-planned -> wave-data-ingested -> ... -> finalized

where each cycle plans one wave's allocation, ingests the validated rows
that came back, and refits the model to drive the next plan.  Every
mutation is appended to an audit log; replaying the log from scratch
reconstructs the identical session, which is also how the directory and
key-value storage backends stay trivial.

Planning uses balanced sampling for the first wave (or a grid search when
prior parameters were supplied) and a floor-constrained grid search under
the latest refit afterwards.  Ingest counts are checked against the
planned incremental allocation per stratum.
"""

from __future__ import annotations

import json
import sqlite3
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CapacityExceeded,
    IllegalTransition,
    InvalidInput,
)
from .information import Design
from .likelihood import Dataset, fit_mle
from .model import ModelSpec, ParamVector, StratumTable
from .multiwave import wave_sizes
from .search import GridSchedule, adaptive_grid_search
from .strategies import bcc_star_design

STATES = ("created", "wave-planned", "wave-data-ingested", "finalized")

# Interim fits tolerate larger (finite) coefficients than the library
# default: early waves routinely lack validated disagreement cells, which
# pushes a misclassification slope into the teens without making the
# likelihood unbounded.  Genuine divergence still trips the guard.
FIT_SEPARATION_BOUND = 30.0


@dataclass
class Session:
    id: str
    strata: StratumTable
    spec: ModelSpec
    n: int
    m: int
    waves: int
    max_rows: int = 10_000
    prior_theta: ParamVector | None = None
    state: str = "created"
    version: int = 0
    plans: list[dict] = field(default_factory=list)
    ingested: list[dict] = field(default_factory=list)
    fits: list[dict] = field(default_factory=list)
    final_fit: dict | None = None
    audit_log: list[dict] = field(default_factory=list)

    # -- construction ---------------------------------------------------

    @classmethod
    def create(cls, strata: StratumTable, spec: ModelSpec, n: int, m: int,
               waves: int = 2, prior_theta: ParamVector | None = None,
               max_rows: int = 10_000, session_id: str | None = None) -> "Session":
        if not 0 < n <= strata.total:
            raise InvalidInput(f"need 0 < n <= {strata.total}")
        if waves < 1:
            raise InvalidInput("need at least one wave")
        if prior_theta is not None:
            prior_theta.validate(spec)
        session = cls(
            id=session_id or uuid.uuid4().hex,
            strata=strata, spec=spec, n=n, m=m, waves=waves,
            max_rows=max_rows, prior_theta=prior_theta,
        )
        session._append_log("init", {
            "strata": strata.to_json_dict(),
            "model": spec.to_json_dict(),
            "n": n, "m": m, "waves": waves, "max_rows": max_rows,
            "prior_theta": None if prior_theta is None else prior_theta.to_json_dict(),
            "id": session.id,
        })
        return session

    def _append_log(self, action: str, payload: dict):
        self.audit_log.append({"seq": len(self.audit_log), "action": action,
                               "payload": payload})
        self.version += 1

    def check_version(self, expected: int | None):
        if expected is not None and expected != self.version:
            raise IllegalTransition(
                f"version conflict: session is at {self.version}, caller expected {expected}"
            )

    # -- derived quantities ----------------------------------------------

    @property
    def waves_planned(self) -> int:
        return len(self.plans)

    def cumulative_planned(self) -> np.ndarray:
        total = np.zeros(self.strata.n_strata, dtype=int)
        for p in self.plans:
            total += np.asarray(p["incremental"], dtype=int)
        return total

    def validated_counts(self) -> np.ndarray:
        counts = np.zeros(self.strata.n_strata, dtype=int)
        key_pos = {k: i for i, k in enumerate(self.strata.keys)}
        for row in self.ingested:
            key = (row["ystar"], row["xstar"], row["z"])
            if key not in key_pos:
                raise InvalidInput(f"ingested record in unknown stratum {key}")
            counts[key_pos[key]] += 1
        return counts

    def _dataset(self) -> Dataset:
        """Phase I counts minus validated rows, plus the validated rows."""
        v, ystar, xstar, y, x, z = [], [], [], [], [], []
        for row in self.ingested:
            v.append(1)
            ystar.append(row["ystar"])
            xstar.append(row["xstar"])
            y.append(row["y"])
            x.append(row["x"])
            z.append(row["z"])
        validated = self.validated_counts()
        for (ys, xs, lv), count, seen in zip(self.strata.keys, self.strata.counts, validated):
            remaining = count - int(seen)
            if remaining < 0:
                raise InvalidInput(f"more validated rows than stratum ({ys},{xs},{lv}) holds")
            v.extend([0] * remaining)
            ystar.extend([ys] * remaining)
            xstar.extend([xs] * remaining)
            y.extend([-1] * remaining)
            x.extend([-1] * remaining)
            z.extend([lv] * remaining)
        return Dataset.from_arrays(np.array(v), np.array(ystar), np.array(xstar),
                                   np.array(y), np.array(x), np.array(z), self.spec)

    def _latest_theta(self) -> ParamVector | None:
        if self.fits:
            return ParamVector.from_json_dict(self.fits[-1]["theta"])
        return self.prior_theta

    # -- actions -----------------------------------------------------------

    def plan_wave(self, seed: int = 0, expected_version: int | None = None) -> dict:
        self.check_version(expected_version)
        if self.state not in ("created", "wave-data-ingested"):
            raise IllegalTransition(f"cannot plan a wave in state {self.state!r}")
        wave_no = self.waves_planned
        if wave_no >= self.waves:
            raise IllegalTransition(f"all {self.waves} waves already planned")
        if self.state == "wave-data-ingested":
            last_fit_seq = self.fits[-1]["seq"] if self.fits else -1
            last_ingest_seq = max(
                (e["seq"] for e in self.audit_log if e["action"] == "ingest"), default=-1
            )
            if last_fit_seq < last_ingest_seq:
                raise IllegalTransition("refit the model before planning the next wave")
        plan = self._compute_plan(wave_no, seed)
        self.plans.append(plan)
        self.state = "wave-planned"
        self._append_log("plan", {"seed": seed, "wave": wave_no, "plan": plan})
        return plan

    def _compute_plan(self, wave_no: int, seed: int) -> dict:
        sizes = wave_sizes(self.n, self.waves)
        size = sizes[wave_no]
        already = self.validated_counts()
        theta = self._latest_theta()
        schedule = GridSchedule(m=self.m, max_rows=self.max_rows)
        if theta is None:
            if wave_no > 0:
                raise IllegalTransition("no fitted parameters available to plan this wave")
            design = bcc_star_design(self.strata, size)
            incremental = np.asarray(design.allocation, dtype=int)
            strategy, trace_doc = "bccstar", None
        else:
            target_total = int(sum(sizes[: wave_no + 1]))
            floors = np.maximum(already, 0)
            trace = adaptive_grid_search(theta, self.spec, self.strata, target_total,
                                         schedule, floors=floors)
            incremental = np.asarray(trace.design.allocation, dtype=int) - already
            strategy, trace_doc = "optmle", trace.to_json_dict()
        return {
            "wave": wave_no,
            "strategy": strategy,
            "size": int(size),
            "incremental": [int(v) for v in incremental],
            "cumulative": [int(v) for v in (already + incremental)],
            "trace": trace_doc,
            "seed": seed,
        }

    def ingest(self, records: list[dict], expected_version: int | None = None) -> dict:
        self.check_version(expected_version)
        if self.state != "wave-planned":
            raise IllegalTransition(f"cannot ingest in state {self.state!r}; plan a wave first")
        plan = self.plans[-1]
        key_pos = {k: i for i, k in enumerate(self.strata.keys)}
        counts = np.zeros(self.strata.n_strata, dtype=int)
        for row in records:
            try:
                key = (int(row["ystar"]), int(row["xstar"]), int(row["z"]))
                y, x = int(row["y"]), int(row["x"])
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidInput(f"malformed validated record {row!r}") from exc
            if key not in key_pos:
                raise InvalidInput(f"record in unknown stratum {key}")
            if y not in (0, 1) or x not in (0, 1):
                raise InvalidInput("validated records need binary y and x")
            counts[key_pos[key]] += 1
        allowed = np.asarray(plan["incremental"], dtype=int)
        if np.any(counts > allowed):
            k = int(np.argmax(counts > allowed))
            raise CapacityExceeded(
                f"stratum {self.strata.keys[k]}: ingesting {int(counts[k])} records "
                f"but the plan allocates {int(allowed[k])}"
            )
        clean = [{"ystar": int(r["ystar"]), "xstar": int(r["xstar"]), "z": int(r["z"]),
                  "y": int(r["y"]), "x": int(r["x"])} for r in records]
        self.ingested.extend(clean)
        self.state = "wave-data-ingested"
        self._append_log("ingest", {"records": clean})
        return {"ingested": len(clean), "total_validated": len(self.ingested)}

    def refit(self, expected_version: int | None = None) -> dict:
        self.check_version(expected_version)
        if self.state != "wave-data-ingested":
            raise IllegalTransition(f"cannot refit in state {self.state!r}")
        result = fit_mle(self._dataset(), separation_bound=FIT_SEPARATION_BOUND)
        doc = {
            "seq": len(self.audit_log),
            "theta": result.theta_hat.to_json_dict(),
            "loglik": result.loglik,
            "converged": result.converged,
            "n_validated": len(self.ingested),
        }
        self.fits.append(doc)
        self._append_log("refit", {})
        return doc

    def finalize(self, expected_version: int | None = None) -> dict:
        self.check_version(expected_version)
        if self.state != "wave-data-ingested":
            raise IllegalTransition(f"cannot finalize in state {self.state!r}")
        result = fit_mle(self._dataset(), separation_bound=FIT_SEPARATION_BOUND)
        self.final_fit = {
            "theta": result.theta_hat.to_json_dict(),
            "loglik": result.loglik,
            "converged": result.converged,
            "n_validated": len(self.ingested),
        }
        self.state = "finalized"
        self._append_log("finalize", {})
        return self.final_fit

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "state": self.state,
            "version": self.version,
            "n": self.n, "m": self.m, "waves": self.waves,
            "max_rows": self.max_rows,
            **self.strata.to_json_dict(),
            "model": self.spec.to_json_dict(),
            "prior_theta": None if self.prior_theta is None else self.prior_theta.to_json_dict(),
            "plans": self.plans,
            "ingested": self.ingested,
            "fits": self.fits,
            "final_fit": self.final_fit,
            "audit_log": self.audit_log,
        }

    @classmethod
    def replay(cls, audit_log: list[dict]) -> "Session":
        """Rebuild a session by re-applying its audit log from scratch."""
        if not audit_log or audit_log[0]["action"] != "init":
            raise InvalidInput("audit log must start with an init action")
        init = audit_log[0]["payload"]
        session = cls.create(
            strata=StratumTable.from_json_dict(init["strata"]),
            spec=ModelSpec.from_json_dict(init["model"]),
            n=init["n"], m=init["m"], waves=init["waves"],
            max_rows=init.get("max_rows", 10_000),
            prior_theta=(None if init.get("prior_theta") is None
                         else ParamVector.from_json_dict(init["prior_theta"])),
            session_id=init["id"],
        )
        for entry in audit_log[1:]:
            action, payload = entry["action"], entry["payload"]
            if action == "plan":
                session.plan_wave(seed=payload["seed"])
            elif action == "ingest":
                session.ingest(payload["records"])
            elif action == "refit":
                session.refit()
            elif action == "finalize":
                session.finalize()
            else:
                raise InvalidInput(f"unknown audit action {action!r}")
        return session


# ---------------------------------------------------------------------------
# Storage backends
# ---------------------------------------------------------------------------

class DirectorySessionStore:
    """One session per directory: session.json plus an audit log."""

    def __init__(self, root):
        self.root = Path(root)

    def save(self, session: Session):
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.root / "session.json", "w", encoding="utf-8") as fh:
            json.dump(session.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(self.root / "audit.jsonl", "w", encoding="utf-8") as fh:
            for entry in session.audit_log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def load(self) -> Session:
        path = self.root / "audit.jsonl"
        if not path.exists():
            raise InvalidInput(f"no session at {self.root}")
        with open(path, encoding="utf-8") as fh:
            log = [json.loads(line) for line in fh if line.strip()]
        return Session.replay(log)


class SqliteSessionStore:
    """All sessions in one embedded key-value table.

    A single shared connection (guarded by a lock) keeps ':memory:'
    databases alive and makes the store safe under the service's
    thread pool.
    """

    def __init__(self, path):
        self.path = str(path)
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        with self._lock, self._conn:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS sessions (id TEXT PRIMARY KEY, log TEXT NOT NULL)"
            )

    def save(self, session: Session):
        doc = json.dumps(session.audit_log, sort_keys=True)
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO sessions (id, log) VALUES (?, ?) "
                "ON CONFLICT(id) DO UPDATE SET log = excluded.log",
                (session.id, doc),
            )

    def load(self, session_id: str) -> Session:
        with self._lock:
            row = self._conn.execute(
                "SELECT log FROM sessions WHERE id = ?", (session_id,)
            ).fetchone()
        if row is None:
            raise KeyError(session_id)
        return Session.replay(json.loads(row[0]))

    def ids(self) -> list[str]:
        with self._lock:
            return [r[0] for r in self._conn.execute("SELECT id FROM sessions ORDER BY id")]
