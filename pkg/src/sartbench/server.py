"""HTTP service backing the interactive boundary-annotation workflow.

A single editing session per served demonstration: the client steps a
cursor through waypoints, creates/deletes spheres, nudges radii, and
commits the set to disk. Every mutating response carries the full
annotation state (dirty flag + per-boundary validation) so the client
can mirror the server verbatim. JSON request/response bodies, no
streaming; mutations are serialized by a lock.

Endpoints:
    GET    /api/demo
    GET    /api/scene
    GET    /api/annotations
    POST   /api/cursor              {"index": int}
    POST   /api/boundary            {"key_index": int (optional), "radius": float (optional)}
    POST   /api/boundary/<id>/radius {"delta": float}
    DELETE /api/boundary/<id>
    POST   /api/commit
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .annotation import (
    AnnotationSet,
    BoundaryNotFoundError,
    PrecisionBoundary,
    adjust_radius,
    boundary_at,
    save_annotations,
    validate_boundary,
)
from .geometry import rotation_to_quat
from .sim import TaskSpec
from .trajectory import Trajectory
from .world import Scene

log = logging.getLogger(__name__)

DEFAULT_RADIUS = 0.05
DEFAULT_EE_HALFWIDTH = 0.01


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class AnnotationSession:
    """Server-held editing state for one demonstration."""

    demo_id: str
    demo: Trajectory
    scene: Scene
    task: TaskSpec
    out_path: str
    ee_halfwidth: float = DEFAULT_EE_HALFWIDTH
    cursor: int = 0
    dirty: bool = False
    boundaries: list = field(default_factory=list)
    _next_id: int = 1
    _lock: threading.Lock = field(default_factory=threading.Lock)

    # -- queries ----------------------------------------------------------

    def demo_payload(self) -> dict:
        wps = []
        for wp in self.demo.waypoints:
            wps.append({
                "index": wp.index,
                "position": list(wp.ee_pose.position),
                "quaternion": list(rotation_to_quat(wp.ee_pose.rotation)),
                "gripper": wp.observation.gripper_state,
            })
        return {"demo_id": self.demo_id, "task": self.task.kind,
                "length": len(self.demo), "waypoints": wps}

    def scene_payload(self) -> dict:
        boxes = []
        for box in self.scene.obstacles:
            boxes.append({
                "id": box.box_id,
                "position": list(box.pose.position),
                "quaternion": list(rotation_to_quat(box.pose.rotation)),
                "half_extents": list(box.half_extents),
            })
        return {"boxes": boxes,
                "goal_position": list(self.scene.goal_pose.position),
                "goal_exclusions": list(self.scene.goal_exclusion_ids)}

    def state_payload(self) -> dict:
        entries = []
        for b in self.boundaries:
            report = validate_boundary(self.scene, b, self.ee_halfwidth)
            entries.append({
                "id": b.boundary_id,
                "key_index": b.key_index,
                "position": list(b.center_pose.position),
                "radius": b.radius,
                "collision_free": report.collision_free,
                "min_clearance": (None if np.isinf(report.min_clearance)
                                  else report.min_clearance),
                "offending_obstacle": report.offending_obstacle,
            })
        return {"demo_id": self.demo_id, "cursor": self.cursor,
                "dirty": self.dirty, "boundaries": entries}

    # -- mutations (caller holds the lock via handle()) ---------------------

    def _as_set(self) -> AnnotationSet:
        return AnnotationSet(self.demo_id, tuple(self.boundaries))

    def set_cursor(self, index) -> None:
        if not isinstance(index, int) or not 0 <= index < len(self.demo):
            raise ApiError(400, f"cursor index {index!r} outside demo of "
                                f"length {len(self.demo)}")
        self.cursor = index

    def create_boundary(self, key_index=None, radius=DEFAULT_RADIUS) -> None:
        index = self.cursor if key_index is None else key_index
        if not isinstance(index, int) or not 0 <= index < len(self.demo):
            raise ApiError(400, f"key_index {index!r} outside demo")
        if any(b.key_index == index for b in self.boundaries):
            raise ApiError(409, f"a boundary already exists at waypoint {index}")
        try:
            boundary = boundary_at(self.demo, f"b{self._next_id}", index,
                                   float(radius))
        except ValueError as exc:
            raise ApiError(400, str(exc)) from exc
        self._next_id += 1
        self.boundaries = sorted(self.boundaries + [boundary],
                                 key=lambda b: b.key_index)
        self.dirty = True

    def change_radius(self, boundary_id: str, delta) -> None:
        if not isinstance(delta, (int, float)):
            raise ApiError(400, f"radius delta {delta!r} is not a number")
        if not self.boundaries:
            raise ApiError(404, f"no boundary {boundary_id!r}")
        try:
            updated = adjust_radius(self._as_set(), boundary_id, float(delta))
        except BoundaryNotFoundError as exc:
            raise ApiError(404, f"no boundary {boundary_id!r}") from exc
        self.boundaries = list(updated.boundaries)
        self.dirty = True

    def delete_boundary(self, boundary_id: str) -> None:
        kept = [b for b in self.boundaries if b.boundary_id != boundary_id]
        if len(kept) == len(self.boundaries):
            raise ApiError(404, f"no boundary {boundary_id!r}")
        self.boundaries = kept
        self.dirty = True

    def commit(self) -> dict:
        if not self.boundaries:
            raise ApiError(400, "cannot commit an empty annotation set")
        save_annotations(self._as_set(), self.out_path)
        self.dirty = False
        log.info("committed %d boundaries to %s", len(self.boundaries),
                 self.out_path)
        return {"path": str(self.out_path), "count": len(self.boundaries)}

    # -- dispatch -----------------------------------------------------------

    def handle(self, method: str, path: str, body: dict) -> dict:
        parts = [p for p in path.split("/") if p]
        if parts[:1] != ["api"]:
            raise ApiError(404, f"unknown path {path!r}")
        route = parts[1:]
        with self._lock:
            if method == "GET" and route == ["demo"]:
                return self.demo_payload()
            if method == "GET" and route == ["scene"]:
                return self.scene_payload()
            if method == "GET" and route == ["annotations"]:
                return self.state_payload()
            if method == "POST" and route == ["cursor"]:
                self.set_cursor(body.get("index"))
                return self.state_payload()
            if method == "POST" and route == ["boundary"]:
                self.create_boundary(body.get("key_index"),
                                     body.get("radius", DEFAULT_RADIUS))
                return self.state_payload()
            if (method == "POST" and len(route) == 3 and route[0] == "boundary"
                    and route[2] == "radius"):
                self.change_radius(route[1], body.get("delta"))
                return self.state_payload()
            if method == "DELETE" and len(route) == 2 and route[0] == "boundary":
                self.delete_boundary(route[1])
                return self.state_payload()
            if method == "POST" and route == ["commit"]:
                result = self.commit()
                return {**self.state_payload(), **result}
        raise ApiError(404, f"no route for {method} {path}")


class _Handler(BaseHTTPRequestHandler):
    session: AnnotationSession
    ui_dir = None

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)

    def _send_json(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods",
                         "GET, POST, DELETE, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()
        self.wfile.write(data)

    def _dispatch(self, method: str) -> None:
        body = {}
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            try:
                body = json.loads(self.rfile.read(length))
            except json.JSONDecodeError:
                self._send_json(400, {"error": "request body is not JSON"})
                return
        try:
            payload = self.session.handle(method, self.path, body)
        except ApiError as exc:
            self._send_json(exc.status, {"error": exc.message})
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("unhandled error for %s %s", method, self.path)
            self._send_json(500, {"error": str(exc)})
        else:
            self._send_json(200, payload)

    def do_GET(self):
        if not self.path.startswith("/api") and self.ui_dir is not None:
            self._serve_static()
            return
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_DELETE(self):
        self._dispatch("DELETE")

    def do_OPTIONS(self):
        self._send_json(200, {})

    def _serve_static(self):
        import os
        rel = self.path.lstrip("/") or "index.html"
        full = os.path.realpath(os.path.join(self.ui_dir, rel))
        if not full.startswith(os.path.realpath(self.ui_dir)) or not os.path.isfile(full):
            self._send_json(404, {"error": f"no static file {self.path!r}"})
            return
        ctype = {"html": "text/html", "js": "text/javascript",
                 "css": "text/css"}.get(full.rsplit(".", 1)[-1],
                                        "application/octet-stream")
        with open(full, "rb") as fh:
            data = fh.read()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def make_server(session: AnnotationSession, host: str = "127.0.0.1",
                port: int = 0, ui_dir=None) -> ThreadingHTTPServer:
    """Bound server ready for serve_forever(); port 0 picks a free port."""
    handler = type("BoundHandler", (_Handler,),
                   {"session": session, "ui_dir": ui_dir})
    return ThreadingHTTPServer((host, port), handler)


def serve_annotation(session: AnnotationSession, host: str, port: int,
                     ui_dir=None) -> None:
    """Run until SIGINT/SIGTERM; commit state stays on disk."""
    import signal

    server = make_server(session, host, port, ui_dir)

    def _stop(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGINT, _stop)
    signal.signal(signal.SIGTERM, _stop)
    log.info("annotation service on http://%s:%d (demo %s)", host,
             server.server_address[1], session.demo_id)
    try:
        server.serve_forever()
    finally:
        server.server_close()
