"""HTTP service closing the analyst feedback loop.

Ingested payloads are scored on arrival; only detector-flagged anomalies
enter the pending queue. Interpretations are computed lazily on first view
and cached. Feedback converts a tabular interpretation into a distiller
rule under a single writer lock; match responses report per-label
probabilities, the UNKNOWN/NORMAL routing decision and the concept-drift
flag.

State is an append-only anomaly log plus distiller snapshots, so a restart
replays to byte-identical match responses.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request

from .datahub import load_artifact_file, save_artifact, load_artifact
from .distiller import NORMAL, Distiller, StateSpace, map_to_states
from .errors import DataFormatError, DeepAIDError
from .interp_tabular import TabularInterpConfig, interpret_tabular
from .interp_timeseries import SaliencyConfig, interpret_sequence
from .interp_graph import GraphInterpConfig, interpret_link_greedy


@dataclass
class ServiceConfig:
    data_dir: str
    tabular_model: str | None = None
    sequence_model: str | None = None
    graph_model: str | None = None
    listen_host: str = "127.0.0.1"
    listen_port: int = 8340
    k: int = 10
    intervals: int = 20
    theta_match: float = 0.2
    theta_fp: float = 0.5
    theta_drift: float = 0.1
    sigma_n: float = 0.0
    auth_token: str | None = None
    mu1: float = 0.01
    mu2: float = 0.3

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise DataFormatError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class AnomalyRecord:
    id: str
    kind: str                  # tabular | sequence | graph
    payload: dict
    score: float
    threshold: float
    queued: bool
    received_at: int           # monotonic ingest counter
    status: str = "pending"    # pending|interpreted|labeled|suppressed
    label: str | None = None
    drift_flagged: bool = False

    def view(self) -> dict:
        return {
            "id": self.id, "kind": self.kind, "score": self.score,
            "threshold": self.threshold, "queued": self.queued,
            "received_at": self.received_at, "status": self.status,
            "label": self.label, "drift_flagged": self.drift_flagged,
        }


class ServiceState:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.lock = threading.Lock()
        self.records: dict[str, AnomalyRecord] = {}
        self.interpretations: dict[str, object] = {}
        self.counter = 0

        self.detectors = {}
        if config.tabular_model:
            self.detectors["tabular"] = load_artifact_file(config.tabular_model)
        if config.sequence_model:
            self.detectors["sequence"] = load_artifact_file(config.sequence_model)
        if config.graph_model:
            self.detectors["graph"] = load_artifact_file(config.graph_model)

        snap = self.data_dir / "distiller.json"
        if snap.exists():
            self.distiller = load_artifact(snap.read_text(encoding="utf-8"))
        else:
            n_dims = (self.detectors["tabular"].n_dims
                      if "tabular" in self.detectors else 1)
            self.distiller = Distiller(
                StateSpace(config.intervals, n_dims),
                theta_match=config.theta_match, theta_fp=config.theta_fp,
                theta_drift=config.theta_drift)
        self._replay()

    # ------------------------------------------------------------ persistence

    def _log_path(self) -> Path:
        return self.data_dir / "anomalies.jsonl"

    def _labels_path(self) -> Path:
        return self.data_dir / "labels.jsonl"

    def _replay(self) -> None:
        if self._log_path().exists():
            with open(self._log_path(), encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    d = json.loads(line)
                    rec = AnomalyRecord(**d)
                    self.records[rec.id] = rec
                    self.counter = max(self.counter, rec.received_at)
        if self._labels_path().exists():
            with open(self._labels_path(), encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    d = json.loads(line)
                    rec = self.records.get(d["id"])
                    if rec is not None:
                        rec.label = d["label"]
                        rec.status = "suppressed" if d["label"] == NORMAL else "labeled"

    def _append(self, path: Path, doc: dict) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")

    def snapshot_distiller(self) -> None:
        (self.data_dir / "distiller.json").write_text(
            save_artifact(self.distiller), encoding="utf-8")

    # ----------------------------------------------------------------- ingest

    def ingest(self, kind: str, payload: dict) -> AnomalyRecord:
        detector = self.detectors.get(kind)
        if detector is None:
            raise HTTPException(400, f"no detector configured for kind {kind!r}")
        score, flagged, norm_payload = self._score(kind, detector, payload)
        with self.lock:
            self.counter += 1
            rec = AnomalyRecord(
                id=f"a{self.counter:06d}", kind=kind, payload=norm_payload,
                score=score, threshold=self._threshold(kind), queued=flagged,
                received_at=self.counter)
            self.records[rec.id] = rec
            self._append(self._log_path(), rec.view() | {"payload": rec.payload})
        return rec

    def _threshold(self, kind: str) -> float:
        return float(self.detectors[kind].threshold)

    def _score(self, kind, detector, payload):
        try:
            if kind == "tabular":
                values = np.asarray(payload["values"], dtype=np.float64)
                if values.ndim != 1 or values.shape[0] != detector.n_dims:
                    raise HTTPException(
                        422, f"expected {detector.n_dims} values, got {values.shape}")
                err, flagged = detector.score(values)
                return float(err), bool(flagged), {"values": values.tolist()}
            if kind == "sequence":
                keys = [int(k) for k in payload["keys"]]
                if len(keys) != detector.window:
                    raise HTTPException(
                        422, f"expected a window of {detector.window} keys")
                p, flagged = detector.score_window(keys)
                return float(p), bool(flagged), {"keys": keys}
            if kind == "graph":
                a, b = payload["link"]
                err, flagged = detector.score_link(a, b)
                return float(err), bool(flagged), {"link": [a, b]}
        except HTTPException:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise HTTPException(400, f"malformed {kind} payload: {e}") from e
        except DataFormatError as e:
            raise HTTPException(422, str(e)) from e
        raise HTTPException(400, f"unknown payload kind {kind!r}")

    # ----------------------------------------------------------- interpretation

    def interpret(self, rec: AnomalyRecord):
        if rec.id in self.interpretations:
            return self.interpretations[rec.id]
        if not rec.queued:
            raise HTTPException(409, "record is not an anomaly")
        detector = self.detectors[rec.kind]
        if rec.kind == "tabular":
            cfg = TabularInterpConfig(k=self.config.k, sigma_n=self.config.sigma_n)
            interp = interpret_tabular(
                np.asarray(rec.payload["values"]), detector, cfg,
                seed=rec.received_at)
        elif rec.kind == "sequence":
            cfg = SaliencyConfig(mu1=self.config.mu1, mu2=self.config.mu2)
            interp = interpret_sequence(np.asarray(rec.payload["keys"]),
                                        detector, cfg)
        else:
            cfg = GraphInterpConfig(
                max_iter=len(detector.node_names),
                tabular=TabularInterpConfig(k=min(self.config.k, 2 * detector.dim)))
            interp = interpret_link_greedy(tuple(rec.payload["link"]),
                                           detector, cfg)
        self.interpretations[rec.id] = interp
        if rec.status == "pending":
            rec.status = "interpreted"
        return interp

    def interpretation_view(self, rec: AnomalyRecord) -> dict:
        interp = self.interpret(rec)
        if rec.kind == "tabular":
            det = self.detectors["tabular"]
            entries = []
            for e in interp.entries:
                lo, hi = det.norm.mins[e.dim], det.norm.maxs[e.dim]
                entries.append({
                    "dim": e.dim,
                    "feature": det.feature_names[e.dim],
                    "anomaly_value": e.anomaly_value,
                    "reference_value": e.reference_value,
                    "effectiveness": e.effectiveness,
                    "anomaly_display": e.anomaly_value * (hi - lo) + lo,
                    "reference_display": e.reference_value * (hi - lo) + lo,
                })
            return {"id": rec.id, "kind": rec.kind, "k": interp.k,
                    "converged": interp.converged, "entries": entries}
        if rec.kind == "sequence":
            return {"id": rec.id, "kind": rec.kind, "branch": interp.branch,
                    "converged": interp.converged,
                    "changed": [{"position": p, "old_key": o, "new_key": n}
                                for p, o, n in interp.changed],
                    "reference": [int(k) for k in interp.reference]}
        return {"id": rec.id, "kind": rec.kind,
                "reference_link": list(interp.reference),
                "converged": interp.converged,
                "objective": interp.objective}

    # ---------------------------------------------------------------- feedback

    def feedback(self, anomaly_id: str, label: str, overwrite: bool) -> dict:
        rec = self.records.get(anomaly_id)
        if rec is None:
            raise HTTPException(404, f"unknown anomaly {anomaly_id!r}")
        if rec.kind != "tabular":
            raise HTTPException(409, "feedback requires a tabular interpretation")
        if rec.label is not None and not overwrite:
            raise HTTPException(
                409, "record already labeled; pass overwrite=true to relabel")
        interp = self.interpret(rec)
        with self.lock:
            rule = (self.distiller.suppress_false_positive(interp)
                    if label == NORMAL else
                    self.distiller.add_feedback(interp, label))
            rec.label = label
            rec.status = "suppressed" if label == NORMAL else "labeled"
            self._append(self._labels_path(), {"id": rec.id, "label": label})
            self.snapshot_distiller()
        return {"anomaly_id": rec.id, "label": label,
                "rule_states": list(rule.states), "status": rec.status}

    def match(self, anomaly_id: str) -> dict:
        rec = self.records.get(anomaly_id)
        if rec is None:
            raise HTTPException(404, f"unknown anomaly {anomaly_id!r}")
        if rec.kind != "tabular":
            raise HTTPException(409, "matching requires a tabular interpretation")
        interp = self.interpret(rec)
        states = map_to_states(interp, self.distiller.space)
        decision, probs = self.distiller.match(states)
        drift_flagged, drift_score = self.distiller.flag_concept_drift(states)
        if drift_flagged:
            rec.drift_flagged = True
        suppressed = decision == NORMAL
        return {
            "anomaly_id": rec.id,
            "states": [int(s) for s in states],
            "probabilities": {k: float(v) for k, v in sorted(probs.items())},
            "decision": decision,
            "suppressed": suppressed,
            "drift_flagged": bool(drift_flagged),
            "drift_score": float(drift_score),
        }


def create_app(config: ServiceConfig) -> FastAPI:
    state = ServiceState(config)
    app = FastAPI(title="deepaid service")
    app.state.service = state

    @app.middleware("http")
    async def check_token(request: Request, call_next):
        if config.auth_token and request.headers.get("x-auth-token") != config.auth_token:
            from fastapi.responses import JSONResponse
            return JSONResponse({"detail": "invalid auth token"}, status_code=401)
        return await call_next(request)

    @app.get("/health")
    def health():
        return {"status": "ok", "detectors": sorted(state.detectors),
                "records": len(state.records)}

    @app.post("/anomalies")
    async def post_anomaly(request: Request):
        try:
            body = await request.json()
        except Exception as e:
            raise HTTPException(400, f"invalid JSON body: {e}") from e
        if not isinstance(body, dict) or "kind" not in body or "payload" not in body:
            raise HTTPException(400, "body must carry 'kind' and 'payload'")
        rec = state.ingest(body["kind"], body["payload"])
        return {"id": rec.id, "queued": rec.queued, "score": rec.score,
                "threshold": rec.threshold}

    @app.get("/anomalies")
    def list_anomalies(status: str | None = None):
        records = [r for r in state.records.values() if r.queued]
        if status:
            records = [r for r in records if r.status == status]
        records.sort(key=lambda r: -r.received_at)
        return {"anomalies": [r.view() for r in records]}

    @app.get("/anomalies/{anomaly_id}/interpretation")
    def get_interpretation(anomaly_id: str):
        rec = state.records.get(anomaly_id)
        if rec is None:
            raise HTTPException(404, f"unknown anomaly {anomaly_id!r}")
        return state.interpretation_view(rec)

    @app.post("/feedback")
    async def post_feedback(request: Request):
        try:
            body = await request.json()
        except Exception as e:
            raise HTTPException(400, f"invalid JSON body: {e}") from e
        if not isinstance(body, dict) or "anomaly_id" not in body or "label" not in body:
            raise HTTPException(400, "body must carry 'anomaly_id' and 'label'")
        return state.feedback(body["anomaly_id"], str(body["label"]),
                              bool(body.get("overwrite", False)))

    @app.get("/match/{anomaly_id}")
    def get_match(anomaly_id: str):
        return state.match(anomaly_id)

    @app.get("/distiller/export")
    def export_distiller():
        return json.loads(save_artifact(state.distiller))

    @app.post("/distiller/import")
    async def import_distiller(request: Request):
        body = await request.body()
        try:
            dist = load_artifact(body.decode("utf-8"))
        except DeepAIDError as e:
            raise HTTPException(400, str(e)) from e
        if not isinstance(dist, Distiller):
            raise HTTPException(400, "document is not a distiller artifact")
        with state.lock:
            state.distiller = dist
            state.snapshot_distiller()
        return {"imported": True, "labels": dist.labels}

    return app


def serve(config: ServiceConfig) -> None:
    import uvicorn
    uvicorn.run(create_app(config), host=config.listen_host,
                port=config.listen_port, log_level="warning")
