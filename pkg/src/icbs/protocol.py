"""Newline-delimited JSON command protocol for the artificial world.

One command object per line over a local stream socket; every reply carries
{"ok": bool, "id"?, "events": [...], "error"?}. Poses travel as
[x, y, z, qw, qx, qy, qz]. Snapshot replies embed the frame as base64
PPM/PGM payloads, or file paths when "mode" is "file". The same dispatcher
is usable in-process without a socket.
"""

import base64
import json
import os
import socket
import threading

from .geometry import Pose6D
from .imgio import depth_to_mm, parse_pgm, parse_ppm, pgm16_bytes, ppm_bytes, write_frame
from .render import SensorFrame
from .world import WorldError, WorldState


def _frame_payload(frame: SensorFrame) -> dict:
    return {
        "rgb_ppm_b64": base64.b64encode(ppm_bytes(frame.rgb)).decode("ascii"),
        "depth_pgm_b64": base64.b64encode(pgm16_bytes(depth_to_mm(frame.depth))).decode("ascii"),
        "mask_pgm_b64": base64.b64encode(pgm16_bytes(frame.mask)).decode("ascii"),
        "camera": frame.camera_pose.to_list(),
        "timestamp": frame.timestamp,
    }


def decode_frame_payload(payload: dict, intrinsics) -> SensorFrame:
    """Rebuild a frame from a snapshot reply; depth comes back quantized to mm."""
    rgb = parse_ppm(base64.b64decode(payload["rgb_ppm_b64"]))
    depth = parse_pgm(base64.b64decode(payload["depth_pgm_b64"])).astype(float) / 1000.0
    mask = parse_pgm(base64.b64decode(payload["mask_pgm_b64"])).astype(int)
    return SensorFrame(rgb, depth, mask, Pose6D.from_list(payload["camera"]),
                       intrinsics, payload.get("timestamp", 0))


class CommandProcessor:
    """Dispatches one decoded command dict against a WorldState."""

    def __init__(self, world: WorldState, frame_dir: str = None):
        self.world = world
        self.frame_dir = frame_dir
        self._snapshot_count = 0

    def process(self, command: dict) -> dict:
        try:
            op = command.get("op")
            if op == "spawn":
                aw_id, events = self.world.spawn(
                    command["label"], Pose6D.from_list(command["pose"]))
                return self._ok(id=aw_id, events=events)
            if op == "set_pose":
                events = self.world.set_pose(
                    int(command["id"]), Pose6D.from_list(command["pose"]))
                return self._ok(id=int(command["id"]), events=events)
            if op == "delete":
                self.world.delete(int(command["id"]))
                return self._ok(id=int(command["id"]))
            if op == "snapshot":
                return self._snapshot(command)
            if op == "drain_events":
                return self._ok(events=self.world.drain_events())
            return self._error(f"unknown op {op!r}")
        except (WorldError, KeyError, ValueError) as exc:
            return self._error(str(exc))

    def _snapshot(self, command: dict) -> dict:
        camera = None
        if command.get("camera"):
            camera = Pose6D.from_list(command["camera"])
        frame = self.world.snapshot(camera_override=camera)
        if command.get("mode") == "file":
            out_dir = command.get("dir") or self.frame_dir
            if not out_dir:
                return self._error("file mode requires a 'dir'")
            prefix = os.path.join(out_dir, f"snapshot_{self._snapshot_count:05d}")
            self._snapshot_count += 1
            paths = write_frame(frame, prefix)
            reply = self._ok()
            reply["frame"] = {"paths": paths, "camera": frame.camera_pose.to_list(),
                              "timestamp": frame.timestamp}
            return reply
        reply = self._ok()
        reply["frame"] = _frame_payload(frame)
        return reply

    @staticmethod
    def _ok(id=None, events=()):
        reply = {"ok": True, "events": [e.to_dict() for e in events]}
        if id is not None:
            reply["id"] = id
        return reply

    @staticmethod
    def _error(message: str) -> dict:
        return {"ok": False, "error": message, "events": []}


class WorldServer:
    """Serves the command protocol on a unix stream socket.

    Handles one connection at a time; commands execute strictly in arrival
    order, matching the world's single-writer model.
    """

    def __init__(self, world: WorldState, socket_path: str, frame_dir: str = None):
        self.processor = CommandProcessor(world, frame_dir)
        self.socket_path = socket_path
        self._stop = threading.Event()
        self._sock = None

    def start(self):
        if os.path.exists(self.socket_path):
            os.unlink(self.socket_path)
        self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._sock.bind(self.socket_path)
        self._sock.listen(2)
        self._sock.settimeout(0.2)

    def stop(self):
        self._stop.set()

    def serve_forever(self):
        if self._sock is None:
            self.start()
        try:
            while not self._stop.is_set():
                try:
                    conn, _ = self._sock.accept()
                except socket.timeout:
                    continue
                with conn:
                    self._handle(conn)
        finally:
            self._sock.close()
            if os.path.exists(self.socket_path):
                os.unlink(self.socket_path)

    def _handle(self, conn: socket.socket):
        conn.settimeout(0.2)
        buf = b""
        while not self._stop.is_set():
            try:
                data = conn.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                return
            if not data:
                return
            buf += data
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if not line.strip():
                    continue
                try:
                    command = json.loads(line)
                except json.JSONDecodeError as exc:
                    reply = {"ok": False, "error": f"bad json: {exc}", "events": []}
                else:
                    reply = self.processor.process(command)
                conn.sendall(json.dumps(reply).encode() + b"\n")


class WorldClient:
    """Line-oriented client for the world protocol."""

    def __init__(self, socket_path: str, timeout: float = 10.0):
        self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self.sock.settimeout(timeout)
        self.sock.connect(socket_path)
        self._rfile = self.sock.makefile("rb")

    def close(self):
        self._rfile.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def call(self, command: dict) -> dict:
        self.sock.sendall(json.dumps(command).encode() + b"\n")
        line = self._rfile.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return json.loads(line)

    def spawn(self, label: str, pose) -> dict:
        return self.call({"op": "spawn", "label": label, "pose": list(pose)})

    def set_pose(self, aw_id: int, pose) -> dict:
        return self.call({"op": "set_pose", "id": aw_id, "pose": list(pose)})

    def delete(self, aw_id: int) -> dict:
        return self.call({"op": "delete", "id": aw_id})

    def snapshot(self, camera=None, mode=None, out_dir=None) -> dict:
        cmd = {"op": "snapshot"}
        if camera is not None:
            cmd["camera"] = list(camera)
        if mode:
            cmd["mode"] = mode
        if out_dir:
            cmd["dir"] = out_dir
        return self.call(cmd)

    def drain_events(self) -> dict:
        return self.call({"op": "drain_events"})
