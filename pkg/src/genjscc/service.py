"""Session service for interactive transmission.

Carries the session protocol (create session, label map, prompt, decode,
report) over HTTP. Realism-map decodes are receiver-side only and never move
symbols; only prompt messages transmit. Every response carries the session id
and a monotonically increasing revision counter, and all randomness is pinned
to the session seed, so a recorded transcript replays to byte-identical
images and reports.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from fastapi.responses import HTMLResponse, Response
from pydantic import BaseModel

from .config import ChannelConfig
from .content import (
    MSG_CREATE_SESSION,
    MSG_DECODE_REQUEST,
    MSG_IMAGE,
    MSG_LABEL_MAP,
    MSG_PROMPT,
    MSG_REPORT,
    MSG_STREAM,
    InstanceLabelMap,
    encode_label_map_bytes,
    encode_message,
)
from .jscc import encode_stream_bytes
from .data import image_to_png_bytes
from .entropy import BandwidthReport, RateAllocation, compute_cbr
from .jscc import ChannelSymbolStream
from .pipeline import (
    ContentPipeline,
    DistortionPerceptionPipeline,
    TransmissionModel,
)
from .srem import RealismMap


class CreateSessionRequest(BaseModel):
    mode: str = "cct"
    image_id: int = 0
    seed: int = 0


class PromptRequest(BaseModel):
    label: str


class DecodeRequest(BaseModel):
    beta: float | None = None
    beta_map: list[list[float]] | None = None


@dataclass
class _Session:
    sid: str
    mode: str
    revision: int = 0
    image: torch.Tensor | None = None
    report: BandwidthReport | None = None
    # dpct
    y_hat: torch.Tensor | None = None
    # cct
    w_map: InstanceLabelMap | None = None
    alloc: RateAllocation | None = None
    cache: dict[str, ChannelSymbolStream] = field(default_factory=dict)
    received: dict[str, ChannelSymbolStream] = field(default_factory=dict)
    prompt_history: list[str] = field(default_factory=list)
    pipeline: Any = None
    transcript: bytearray = field(default_factory=bytearray)

    def bump(self) -> int:
        self.revision += 1
        return self.revision

    def record(self, msg_type: int, payload: bytes) -> None:
        self.transcript += encode_message(msg_type, payload)


def _report_json(report: BandwidthReport | None) -> dict:
    return report.to_dict() if report is not None else {}


def create_app(
    models: dict[str, TransmissionModel],
    channel_cfg: ChannelConfig,
    dpct_images: list[torch.Tensor] | None = None,
    cct_scenes: list[tuple[torch.Tensor, InstanceLabelMap]] | None = None,
) -> FastAPI:
    """Build the session service around loaded model bundles.

    `models` maps mode name to its bundle; sessions of a mode require the
    matching bundle and at least one stored image (dpct) or labeled scene
    (cct).
    """
    app = FastAPI(title="genjscc session service")
    sessions: dict[str, _Session] = {}
    counter = {"next": 0}
    dpct_images = dpct_images or []
    cct_scenes = cct_scenes or []

    def get_session(sid: str) -> _Session:
        try:
            return sessions[sid]
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}") from None

    @app.get("/health")
    def health():
        return {"status": "ok", "modes": sorted(models)}

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        if req.mode not in models:
            raise HTTPException(status_code=422, detail=f"mode {req.mode!r} not served")
        sid = f"s{counter['next']:04d}"
        counter["next"] += 1
        session = _Session(sid=sid, mode=req.mode)
        cfg = ChannelConfig(
            kind=channel_cfg.kind,
            snr_db=channel_cfg.snr_db,
            seed=req.seed,
            equalization=channel_cfg.equalization,
        )
        if req.mode == "dpct":
            if not 0 <= req.image_id < len(dpct_images):
                raise HTTPException(status_code=422, detail=f"image_id {req.image_id} out of range")
            session.image = dpct_images[req.image_id]
            pipeline = DistortionPerceptionPipeline(models["dpct"], cfg)
            with torch.no_grad():
                session.y_hat, _, session.report = pipeline.transmit(session.image)
            session.pipeline = pipeline
            labels = []
        else:
            if not 0 <= req.image_id < len(cct_scenes):
                raise HTTPException(status_code=422, detail=f"image_id {req.image_id} out of range")
            image, w_map = cct_scenes[req.image_id]
            session.image = image.unsqueeze(0) if image.dim() == 3 else image
            session.w_map = w_map
            pipeline = ContentPipeline(models["cct"], cfg, seed=req.seed)
            session.alloc, session.cache = pipeline.build_cache(session.image, w_map)
            session.pipeline = pipeline
            session.report = pipeline.report_for(w_map, set(), session.alloc, session.image.shape[-2:])
            labels = w_map.labels()
        session.record(MSG_CREATE_SESSION, json.dumps(
            {"mode": req.mode, "image_id": req.image_id, "seed": req.seed}).encode())
        if session.w_map is not None:
            session.record(MSG_LABEL_MAP, encode_label_map_bytes(session.w_map))
        sessions[sid] = session
        h, w = session.image.shape[-2:]
        return {
            "session_id": sid,
            "revision": session.bump(),
            "mode": session.mode,
            "image_height": h,
            "image_width": w,
            "labels": labels,
            "report": _report_json(session.report),
        }

    @app.get("/sessions/{sid}/label_map")
    def label_map(sid: str):
        session = get_session(sid)
        if session.w_map is None:
            raise HTTPException(status_code=422, detail="session has no label map")
        return Response(
            content=encode_label_map_bytes(session.w_map),
            media_type="application/octet-stream",
            headers={"X-Session-Id": sid, "X-Session-Revision": str(session.revision)},
        )

    @app.get("/sessions/{sid}/labels")
    def labels(sid: str):
        session = get_session(sid)
        if session.w_map is None:
            return {"session_id": sid, "revision": session.revision, "labels": []}
        entries = []
        for rgb, name in session.w_map.registry.items():
            pixels = int(session.w_map.pixels_of(name).sum())
            entries.append({
                "name": name,
                "rgb": list(rgb),
                "pixels": pixels,
                "received": name in session.prompt_history,
            })
        return {"session_id": sid, "revision": session.revision, "labels": entries}

    @app.get("/sessions/{sid}/original.png")
    def original(sid: str):
        session = get_session(sid)
        return Response(
            content=image_to_png_bytes(session.image),
            media_type="image/png",
            headers={"X-Session-Id": sid, "X-Session-Revision": str(session.revision)},
        )

    @app.post("/sessions/{sid}/prompts")
    def prompt(sid: str, req: PromptRequest):
        session = get_session(sid)
        if session.mode != "cct":
            raise HTTPException(status_code=422, detail="prompts only apply to content sessions")
        if req.label not in session.cache:
            raise HTTPException(status_code=404, detail=f"unknown instance label {req.label!r}")
        if req.label in session.prompt_history:
            return {
                "session_id": sid,
                "revision": session.revision,
                "delivered": False,
                "notice": "prompt already served",
                "report": _report_json(session.report),
            }
        session.prompt_history.append(req.label)
        session.received[req.label] = session.pipeline.transmit_instance(req.label, session.cache)
        session.report = session.pipeline.report_for(
            session.w_map, set(session.prompt_history), session.alloc, session.image.shape[-2:]
        )
        session.record(MSG_PROMPT, req.label.encode("utf-8"))
        session.record(MSG_STREAM, encode_stream_bytes(session.received[req.label], models["cct"].rate_cfg))
        session.record(MSG_REPORT, json.dumps(_report_json(session.report)).encode())
        return {
            "session_id": sid,
            "revision": session.bump(),
            "delivered": True,
            "label": req.label,
            "stream_symbols": len(session.received[req.label]),
            "report": _report_json(session.report),
        }

    @app.post("/sessions/{sid}/decode")
    def decode(sid: str, req: DecodeRequest):
        session = get_session(sid)
        if session.mode != "dpct" and (req.beta is not None or req.beta_map is not None):
            raise HTTPException(status_code=422, detail="realism maps only apply to dpct sessions")
        with torch.no_grad():
            if session.mode == "dpct":
                model = models["dpct"]
                h, w = session.y_hat.shape[-2:]
                beta_max = model.srem_cfg.beta_max
                if req.beta_map is not None:
                    values = np.asarray(req.beta_map, dtype=np.float64)
                    if values.shape != (h, w):
                        raise HTTPException(
                            status_code=422,
                            detail=f"beta_map must be {h}x{w} (latent grid), got {list(values.shape)}",
                        )
                    if values.min() < 0 or values.max() > beta_max:
                        raise HTTPException(
                            status_code=422,
                            detail=f"beta values must lie in [0, {beta_max}]",
                        )
                    rmap = RealismMap(values=values, beta_max=beta_max)
                elif req.beta is not None:
                    if not 0 <= req.beta <= beta_max:
                        raise HTTPException(status_code=422, detail=f"beta must lie in [0, {beta_max}]")
                    rmap = RealismMap.constant(req.beta, h, w, beta_max)
                else:
                    rmap = RealismMap.zeros(h, w, beta_max)
                x_hat = session.pipeline.decode(session.y_hat, rmap)
            else:
                x_hat = session.pipeline.decode_subset(
                    session.w_map, session.received, session.alloc, session.image.shape[-2:]
                )
        png = image_to_png_bytes(x_hat)
        session.record(MSG_DECODE_REQUEST, json.dumps(
            {"beta": req.beta, "beta_map": req.beta_map}).encode())
        session.record(MSG_IMAGE, png)
        session.record(MSG_REPORT, json.dumps(_report_json(session.report)).encode())
        return {
            "session_id": sid,
            "revision": session.bump(),
            "report": _report_json(session.report),
            "image_png_base64": base64.b64encode(png).decode("ascii"),
        }

    @app.get("/sessions/{sid}/report")
    def report(sid: str):
        session = get_session(sid)
        return {
            "session_id": sid,
            "revision": session.revision,
            "prompts": list(session.prompt_history),
            "report": _report_json(session.report),
        }

    @app.get("/sessions/{sid}/transcript")
    def transcript(sid: str):
        """The session as length-prefixed protocol messages (CreateSession,
        LabelMap, Prompt, Stream, DecodeRequest, Image, Report); streams use
        the codec wire format."""
        session = get_session(sid)
        return Response(
            content=bytes(session.transcript),
            media_type="application/octet-stream",
            headers={"X-Session-Id": sid, "X-Session-Revision": str(session.revision)},
        )

    @app.get("/")
    def index():
        return HTMLResponse(
            "<html><body><h3>genjscc session service</h3>"
            "<p>POST /sessions, GET /sessions/{id}/labels, POST /sessions/{id}/prompts, "
            "POST /sessions/{id}/decode, GET /sessions/{id}/report</p></body></html>"
        )

    return app
