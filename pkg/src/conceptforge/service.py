"""HTTP interface for interactive conceptualization.

Stateless endpoints (templates, instantiate, annotate) depend only on the
request and the registry; sessions hold a target object plus the working
document, serialize their mutations through a per-session lock, and run
at most one optimize job at a time with trace polling. All payloads are
canonical JSON bytes, so responses are byte-comparable with library-level
serialization.
"""
from __future__ import annotations

import itertools
import os
import threading

import numpy as np
from fastapi import FastAPI, Request, Response

from . import asset_io
from .correspondence import Conceptualization, ConceptPart, build_correspondence
from .fitting import FitConfig, NonFiniteLossError, fit_continuous
from .geometry import PointCloud, RigidTransform, TriMesh, sample_surface
from .knowledge import (annotate_poses, annotate_regions, builtin_knowledge,
                        UnknownKnowledgeError)
from .templates import (builtin_registry, ConceptInstance,
                        instantiate_concept, UnknownTemplateError)

DEFAULT_CLOUD_POINTS = 4096


def _json(payload, status_code: int = 200) -> Response:
    return Response(content=asset_io.canonical_bytes(payload),
                    media_type="application/json", status_code=status_code)


def _error(status: int, message: str, **fields) -> Response:
    body = {"error": message}
    body.update(fields)
    return _json(body, status_code=status)


def _parse_pose(record) -> RigidTransform:
    if record is None:
        return RigidTransform.identity()
    return RigidTransform(
        np.asarray(record["quaternion"], dtype=np.float64),
        np.asarray(record["translation"], dtype=np.float64))


def _pose_record(pose: RigidTransform) -> dict:
    return {"quaternion": [float(v) for v in pose.quaternion],
            "translation": [float(v) for v in pose.translation]}


def _mesh_payload(mesh: TriMesh) -> dict:
    return {"vertices": [[float(v) for v in row] for row in mesh.vertices],
            "faces": [[int(v) for v in row] for row in mesh.faces]}


def _instance_record(inst: ConceptInstance) -> dict:
    return {"template_id": inst.template_id,
            "continuous": [float(v) for v in inst.continuous],
            "discrete": [int(v) for v in inst.discrete],
            "pose": _pose_record(inst.pose)}


class _Session:
    def __init__(self, session_id, object_id, category, mesh, cloud):
        self.session_id = session_id
        self.object_id = object_id
        self.category = category
        self.mesh = mesh
        self.cloud = cloud
        self.parts = {}          # name -> {"instance", "point_indices"}
        self.lock = threading.Lock()
        self.dirty = False
        self.saved = False
        self.job = None          # optimize state dict

    def conceptualization(self) -> Conceptualization:
        parts = tuple(ConceptPart(name, rec["instance"])
                      for name, rec in self.parts.items())
        return Conceptualization(self.object_id, self.category, parts)

    def document(self) -> dict:
        doc = {"object_id": self.object_id, "category": self.category,
               "parts": {name: _instance_record(rec["instance"])
                         for name, rec in self.parts.items()},
               "dirty": self.dirty}
        return doc


def create_app(registry=None, asset_dir: str = ".", session_dir: str = ".",
               max_sessions: int = 32) -> FastAPI:
    registry = registry or builtin_registry()
    knowledge = builtin_knowledge()
    app = FastAPI()
    sessions: dict = {}
    session_order: list = []           # access order for LRU eviction
    store_lock = threading.Lock()
    ids = (f"s{n:06d}" for n in itertools.count(1))

    def _touch(sid):
        if sid in session_order:
            session_order.remove(sid)
        session_order.append(sid)

    def _evict():
        # saved, idle sessions leave memory first; dirty ones are kept
        while len(sessions) > max_sessions:
            victim = next((sid for sid in session_order
                           if sessions[sid].saved and not sessions[sid].dirty
                           and sessions[sid].job is None), None)
            if victim is None:
                break
            session_order.remove(victim)
            del sessions[victim]

    def _get_session(sid):
        with store_lock:
            sess = sessions.get(sid)
            if sess is not None:
                _touch(sid)
            return sess

    # ------------------------------------------------------------------
    # stateless endpoints
    # ------------------------------------------------------------------

    @app.get("/templates")
    def templates():
        return _json(registry.descriptors())

    @app.post("/instantiate")
    async def instantiate(request: Request):
        body = await request.json()
        tid = body.get("template_id")
        if tid is None or tid not in registry:
            return _error(400, f"unknown template id {tid!r}", field="template_id")
        tdef = registry.get(tid)
        cont = body.get("continuous")
        if cont is None:
            cont = [s.default for s in tdef.param_specs]
        disc = body.get("discrete")
        if disc is None:
            disc = [s.default for s in tdef.discrete_specs] if tdef.is_concept else []
        resolution = int(body.get("resolution", 16))
        inst = ConceptInstance(tid, np.asarray(cont, dtype=np.float64),
                               np.asarray(disc, dtype=np.int64),
                               _parse_pose(body.get("pose")))
        try:
            registry.validate_instance(inst)
            expanded = instantiate_concept(registry, inst, resolution)
        except ValueError as exc:
            return _error(400, str(exc), field="continuous")
        return _json(_mesh_payload(expanded.merged))

    @app.post("/annotate")
    async def annotate(request: Request):
        body = await request.json()
        kids = body.get("knowledge_ids", [])
        resolution = int(body.get("resolution", 16))
        if "session_id" in body:
            sess = _get_session(body["session_id"])
            if sess is None:
                return _error(404, f"unknown session {body['session_id']!r}")
            with sess.lock:
                if not sess.parts:
                    return _error(409, "session has no parts")
                c = sess.conceptualization()
            points = sess.cloud
        else:
            try:
                c = asset_io.conceptualization_from_document(
                    body["conceptualization"], registry)
            except (KeyError, asset_io.DocumentError) as exc:
                return _error(400, str(exc))
            pts = body.get("points")
            if pts is None:
                return _error(400, "points required with an inline document")
            points = PointCloud(np.asarray(pts, dtype=np.float64))
        if not kids:
            return _json({"regions": [], "poses": []})
        try:
            knowledge.check(kids)
            cmap = build_correspondence(registry, points, c, resolution)
            regions = annotate_regions(registry, c, cmap, kids, knowledge)
            poses = annotate_poses(registry, c, kids, knowledge)
        except UnknownKnowledgeError as exc:
            return _error(400, str(exc))
        return _json({
            "regions": [[i, list(labels)] for i, labels in regions.point_labels],
            "poses": asset_io.pose_records(poses),
        })

    # ------------------------------------------------------------------
    # sessions
    # ------------------------------------------------------------------

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await request.json()
        object_id = body.get("object_id", "object")
        category = body.get("category", "Unknown")
        if "mesh" in body:
            m = body["mesh"]
            mesh = TriMesh(np.asarray(m["vertices"], dtype=np.float64),
                           np.asarray(m["faces"], dtype=np.int64))
        elif "mesh_path" in body:
            path = os.path.join(asset_dir, body["mesh_path"])
            try:
                mesh = asset_io.load_mesh(path)
            except (OSError, ValueError) as exc:
                return _error(400, str(exc))
        else:
            return _error(400, "mesh or mesh_path required")
        n = int(body.get("cloud_points", DEFAULT_CLOUD_POINTS))
        seed = int(body.get("seed", 0))
        cloud = sample_surface(mesh, n, seed)
        with store_lock:
            sid = next(ids)
            sessions[sid] = _Session(sid, object_id, category, mesh, cloud)
            _touch(sid)
            _evict()
        return _json({"session_id": sid, "cloud_points": len(cloud)})

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        sess = _get_session(sid)
        if sess is None:
            return _error(404, f"unknown session {sid!r}")
        with sess.lock:
            return _json(sess.document())

    @app.get("/sessions/{sid}/parts/{name}")
    def get_part(sid: str, name: str):
        sess = _get_session(sid)
        if sess is None:
            return _error(404, f"unknown session {sid!r}")
        with sess.lock:
            rec = sess.parts.get(name)
            if rec is None:
                return _error(404, f"unknown part {name!r}")
            out = _instance_record(rec["instance"])
            if rec["point_indices"] is not None:
                out["point_indices"] = [int(i) for i in rec["point_indices"]]
            return _json(out)

    @app.put("/sessions/{sid}/parts/{name}")
    async def put_part(sid: str, name: str, request: Request):
        sess = _get_session(sid)
        if sess is None:
            return _error(404, f"unknown session {sid!r}")
        body = await request.json()
        tid = body.get("template_id")
        if tid is None or tid not in registry:
            return _error(400, f"unknown template id {tid!r}", field="template_id")
        tdef = registry.get(tid)
        cont = body.get("continuous",
                        [s.default for s in tdef.param_specs])
        disc = body.get("discrete",
                        [s.default for s in tdef.discrete_specs]
                        if tdef.is_concept else [])
        inst = ConceptInstance(tid, np.asarray(cont, dtype=np.float64),
                               np.asarray(disc, dtype=np.int64),
                               _parse_pose(body.get("pose")))
        try:
            registry.validate_instance(inst)
        except ValueError as exc:
            return _error(400, str(exc))
        indices = body.get("point_indices")
        if indices is not None:
            indices = np.asarray(indices, dtype=np.int64)
            if indices.size and not (0 <= indices.min()
                                     and indices.max() < len(sess.cloud)):
                return _error(400, "point_indices out of range")
        with sess.lock:
            sess.parts[name] = {"instance": inst, "point_indices": indices}
            sess.dirty = True
        return _json({"ok": True, "part": name})

    @app.post("/sessions/{sid}/optimize")
    async def optimize(sid: str, request: Request):
        sess = _get_session(sid)
        if sess is None:
            return _error(404, f"unknown session {sid!r}")
        body = await request.json()
        name = body.get("part")
        cfg_fields = body.get("config", {})
        try:
            cfg = FitConfig(**cfg_fields)
        except (TypeError, ValueError) as exc:
            return _error(400, str(exc))
        with sess.lock:
            rec = sess.parts.get(name)
            if rec is None:
                return _error(404, f"unknown part {name!r}")
            if sess.job is not None and sess.job["status"] == "running":
                return _error(409, "an optimize job is already running")
            inst = rec["instance"]
            if rec["point_indices"] is not None:
                target = PointCloud(sess.cloud.points[rec["point_indices"]])
            else:
                target = sess.cloud
            job = {"status": "running", "part": name, "trace": [],
                   "final_loss": None, "error": None}
            sess.job = job

        def run():
            trace_lock = threading.Lock()

            def on_loss(value):
                with trace_lock:
                    job["trace"].append(float(value))

            try:
                result = fit_continuous(registry, inst.template_id, inst,
                                        target, cfg, progress=on_loss)
            except (NonFiniteLossError, ValueError) as exc:
                job["error"] = str(exc)
                job["status"] = "error"
                return
            with sess.lock:
                sess.parts[name]["instance"] = result.best_instance
                sess.dirty = True
                job["final_loss"] = result.final_loss
                job["converged"] = result.converged
                job["iterations_used"] = result.iterations_used
                job["result"] = _instance_record(result.best_instance)
                job["status"] = "done"

        if bool(body.get("wait", False)):
            run()
        else:
            threading.Thread(target=run, daemon=True).start()
        return _json({"status": job["status"], "part": name})

    @app.get("/sessions/{sid}/optimize")
    def poll_optimize(sid: str):
        sess = _get_session(sid)
        if sess is None:
            return _error(404, f"unknown session {sid!r}")
        with sess.lock:
            job = sess.job
            if job is None:
                return _error(404, "no optimize job for this session")
            out = {"status": job["status"], "part": job["part"],
                   "trace": list(job["trace"])}
            if job["status"] == "done":
                out["final_loss"] = job["final_loss"]
                out["converged"] = job["converged"]
                out["iterations_used"] = job["iterations_used"]
                out["result"] = job["result"]
            elif job["status"] == "error":
                out["error"] = job["error"]
            return _json(out)

    @app.post("/sessions/{sid}/save")
    def save(sid: str):
        sess = _get_session(sid)
        if sess is None:
            return _error(404, f"unknown session {sid!r}")
        with sess.lock:
            if not sess.parts:
                return _error(409, "cannot save an empty document")
            c = sess.conceptualization()
            path = os.path.join(session_dir, f"{sid}.json")
            asset_io.save_document(path, c)
            sess.dirty = False
            sess.saved = True
            with open(path, "rb") as fh:
                payload = fh.read()
        with store_lock:
            _evict()
        return Response(content=payload, media_type="application/json")

    return app
