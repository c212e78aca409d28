"""Content-aware selective transmission: instance label maps, transmit
heatmaps, per-instance stream splitting, the interactive session cache, and
the byte-exact wire formats for label maps and session messages.

Instances are defined purely by pixel color: every pixel whose RGB value maps
to the same registry entry belongs to one instance. Transmit masks use
any-coverage downsampling (an embedding is transmitted if any pixel in its
receptive block is requested) while stream ownership uses majority coverage,
so every embedding's segment belongs to exactly one instance stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .entropy import RateAllocation
from .jscc import ChannelSymbolStream, full_mask

RGB = tuple[int, int, int]


@dataclass
class InstanceLabelMap:
    """RGB raster where equal colors denote one instance, plus the registry
    mapping each color to its label name (registry order breaks ties)."""

    raster: np.ndarray                 # (3, H, W) uint8
    registry: dict[RGB, str]

    def __post_init__(self):
        self.raster = np.asarray(self.raster, dtype=np.uint8)
        if self.raster.ndim != 3 or self.raster.shape[0] != 3:
            raise ValueError(f"label raster must be (3, H, W), got {self.raster.shape}")
        known = set(self.registry)
        colors = {tuple(int(v) for v in c) for c in self.raster.reshape(3, -1).T}
        unknown = colors - known
        if unknown:
            raise ValueError(f"raster contains colors missing from the registry: {sorted(unknown)}")
        names = list(self.registry.values())
        if len(names) != len(set(names)):
            raise ValueError("registry label names must be unique")

    @property
    def height(self) -> int:
        return int(self.raster.shape[1])

    @property
    def width(self) -> int:
        return int(self.raster.shape[2])

    def labels(self) -> list[str]:
        return list(self.registry.values())

    def index_raster(self) -> np.ndarray:
        """(H, W) registry index per pixel."""
        order = {rgb: i for i, rgb in enumerate(self.registry)}
        flat = self.raster.reshape(3, -1).T
        key = flat[:, 0].astype(np.int64) * 65536 + flat[:, 1].astype(np.int64) * 256 + flat[:, 2]
        lut = {r * 65536 + g * 256 + b: i for (r, g, b), i in order.items()}
        out = np.empty(key.size, dtype=np.int64)
        for packed, idx in lut.items():
            out[key == packed] = idx
        return out.reshape(self.height, self.width)

    def pixels_of(self, label: str) -> np.ndarray:
        """(H, W) boolean membership of one instance."""
        for rgb, name in self.registry.items():
            if name == label:
                target = np.array(rgb, dtype=np.uint8).reshape(3, 1, 1)
                return np.all(self.raster == target, axis=0)
        raise KeyError(f"unknown instance label {label!r}")

    def as_tensor(self, device=None, dtype=torch.float32) -> torch.Tensor:
        """(1, 3, H, W) float raster in [0, 1] for network conditioning."""
        return torch.as_tensor(self.raster, device=device).to(dtype).unsqueeze(0) / 255.0


@dataclass
class BinaryHeatmap:
    """Pixel-level transmit indicator: 1 marks regions to transmit."""

    m: np.ndarray  # (H, W) uint8

    def __post_init__(self):
        self.m = np.asarray(self.m)
        if self.m.ndim != 2:
            raise ValueError(f"heatmap must be (H, W), got {self.m.shape}")
        if not np.isin(self.m, (0, 1)).all():
            raise ValueError("heatmap entries must be 0 or 1")
        self.m = self.m.astype(np.uint8)

    def as_tensor(self, device=None, dtype=torch.float32) -> torch.Tensor:
        return torch.as_tensor(self.m, device=device).to(dtype)


def heatmap_from_prompts(w_map: InstanceLabelMap, prompts) -> BinaryHeatmap:
    """Union of the prompted instances' pixels; unknown labels are rejected."""
    m = np.zeros((w_map.height, w_map.width), dtype=np.uint8)
    for label in prompts:
        m |= w_map.pixels_of(label).astype(np.uint8)
    return BinaryHeatmap(m=m)


def downsample_mask(heatmap: BinaryHeatmap, grid_hw: tuple[int, int]) -> np.ndarray:
    """Any-coverage reduction onto the latent grid, flattened raster-order.

    Embedding (i, j) is transmitted iff any pixel of its df x df receptive
    block is marked, which never drops requested content at instance borders.
    """
    h, w = grid_hw
    H, W = heatmap.m.shape
    if H % h or W % w or H // h != W // w:
        raise ValueError(f"heatmap {H}x{W} incompatible with latent grid {h}x{w}")
    df = H // h
    blocks = heatmap.m.reshape(h, df, w, df)
    return (blocks.max(axis=(1, 3)) > 0).astype(np.uint8).reshape(-1)


def ownership_regions(w_map: InstanceLabelMap, grid_hw: tuple[int, int]) -> dict[str, np.ndarray]:
    """Assign every embedding to the instance covering the majority of its
    receptive block (ties fall to the registry-order-first label). The result
    partitions the latent grid."""
    h, w = grid_hw
    H, W = w_map.height, w_map.width
    if H % h or W % w or H // h != W // w:
        raise ValueError(f"label map {H}x{W} incompatible with latent grid {h}x{w}")
    df = H // h
    idx_raster = w_map.index_raster()
    labels = w_map.labels()
    blocks = idx_raster.reshape(h, df, w, df).transpose(0, 2, 1, 3).reshape(h * w, df * df)
    counts = np.zeros((h * w, len(labels)), dtype=np.int64)
    for i in range(len(labels)):
        counts[:, i] = (blocks == i).sum(axis=1)
    owner = counts.argmax(axis=1)  # argmax takes the first maximum: registry order
    return {label: np.flatnonzero(owner == i) for i, label in enumerate(labels)}


def split_streams(
    stream: ChannelSymbolStream,
    w_map: InstanceLabelMap,
    grid_hw: tuple[int, int],
) -> dict[str, ChannelSymbolStream]:
    """Divide a full unmasked stream into disjoint per-instance streams."""
    if not np.all(stream.mask == 1):
        raise ValueError("stream splitting expects the full unmasked stream")
    regions = ownership_regions(w_map, grid_hw)
    segments = stream.segments()
    out: dict[str, ChannelSymbolStream] = {}
    for label, indices in regions.items():
        mask = np.zeros(len(stream.alloc), dtype=np.uint8)
        mask[indices] = 1
        chosen = [segments[int(p)] for p in sorted(int(i) for i in indices)]
        symbols = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.float32)
        out[label] = ChannelSymbolStream(symbols=symbols, alloc=stream.alloc, mask=mask)
    return out


def merge_streams(
    streams: dict[str, ChannelSymbolStream] | list[ChannelSymbolStream],
    alloc: RateAllocation,
) -> ChannelSymbolStream:
    """Reassemble per-instance streams into one stream over the union mask.

    Masks must be disjoint; the merged symbols follow raster order, so merging
    all splits of a full stream reproduces it bitwise.
    """
    parts = list(streams.values()) if isinstance(streams, dict) else list(streams)
    l = len(alloc)
    union = np.zeros(l, dtype=np.uint8)
    segment_map: dict[int, np.ndarray] = {}
    for part in parts:
        if len(part.alloc) != l:
            raise ValueError("stream allocation length mismatch")
        overlap = union & part.mask
        if overlap.any():
            raise ValueError(f"streams overlap at embedding {int(np.flatnonzero(overlap)[0])}")
        union |= part.mask
        segment_map.update(part.segments())
    ordered = [segment_map[int(p)] for p in sorted(segment_map)]
    symbols = np.concatenate(ordered) if ordered else np.zeros(0, dtype=np.float32)
    return ChannelSymbolStream(symbols=symbols, alloc=alloc, mask=union)


def empty_stream(alloc: RateAllocation) -> ChannelSymbolStream:
    return ChannelSymbolStream(
        symbols=np.zeros(0, dtype=np.float32),
        alloc=alloc,
        mask=np.zeros(len(alloc), dtype=np.uint8),
    )


@dataclass
class SessionState:
    """One interactive transmission session.

    The server caches the clean per-instance streams once; prompts move the
    matching stream through the channel exactly once, and the client
    accumulates received streams. Duplicate prompts are idempotent no-ops.
    """

    session_id: str
    w_map: InstanceLabelMap
    alloc: RateAllocation
    cache: dict[str, ChannelSymbolStream]
    prompt_history: list[str] = field(default_factory=list)
    received: dict[str, ChannelSymbolStream] = field(default_factory=dict)

    def __post_init__(self):
        merged = merge_streams(self.cache, self.alloc)
        if not np.all(merged.mask == 1):
            raise ValueError("cached streams must partition the full stream")
        if len(self.prompt_history) != len(set(self.prompt_history)):
            raise ValueError("prompt history contains duplicates")

    def pending_labels(self) -> list[str]:
        return [lb for lb in self.w_map.labels() if lb not in self.prompt_history]


def session_prompt(state: SessionState, label: str) -> ChannelSymbolStream | None:
    """Serve one prompt: returns the cached stream to transmit, or None when
    the prompt was already served. Unknown labels are rejected."""
    if label not in state.cache:
        raise KeyError(f"unknown instance label {label!r}")
    if label in state.prompt_history:
        return None
    state.prompt_history.append(label)
    return state.cache[label]


def assemble_received(
    streams: dict[str, ChannelSymbolStream],
    alloc: RateAllocation,
) -> ChannelSymbolStream:
    """Client-side latent stream for any subset of received instance streams;
    an empty subset yields the all-masked stream (label-map-only decode)."""
    if not streams:
        return empty_stream(alloc)
    return merge_streams(streams, alloc)


def reconstruct_scalable(
    w_map: InstanceLabelMap,
    streams: dict[str, ChannelSymbolStream],
    alloc: RateAllocation,
    model,
) -> torch.Tensor:
    """Decode an image from the label map plus any subset of instance streams
    (including none: the label map alone yields a preliminary image).

    `model` is a transmission bundle providing decode_stream and
    synthesize_content; embeddings without a received segment fall back to
    the zero-padding / r_0 path inside the JSCC decoder.
    """
    merged = assemble_received(streams, alloc)
    df = model.cfg.downsample_factor
    grid_hw = (w_map.height // df, w_map.width // df)
    latent = model.decode_stream(merged, grid_hw)
    return model.synthesize_content(latent, w_map, clamp=True)


# --- label-map wire format ------------------------------------------------------
#
# Byte-exact run-length format (little-endian integers):
#   u32 W, u32 H
#   u16 palette size, then per entry: 3 x u8 RGB, u8 name length, UTF-8 name
#   u32 run count, then per run: u32 length, u16 palette index
# Runs cover the row-major pixel sequence exactly.


def encode_label_map_bytes(w_map: InstanceLabelMap) -> bytes:
    out = bytearray()
    out += int(w_map.width).to_bytes(4, "little")
    out += int(w_map.height).to_bytes(4, "little")
    palette = list(w_map.registry.items())
    out += len(palette).to_bytes(2, "little")
    for (r, g, b), name in palette:
        raw = name.encode("utf-8")
        if len(raw) > 255:
            raise ValueError(f"label name too long: {name!r}")
        out += bytes([r, g, b, len(raw)]) + raw
    idx = w_map.index_raster().reshape(-1)
    change = np.flatnonzero(np.diff(idx)) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [idx.size]]))
    out += int(starts.size).to_bytes(4, "little")
    for start, length in zip(starts, lengths):
        out += int(length).to_bytes(4, "little")
        out += int(idx[start]).to_bytes(2, "little")
    return bytes(out)


def decode_label_map_bytes(data: bytes) -> InstanceLabelMap:
    pos = 0
    W = int.from_bytes(data[pos : pos + 4], "little"); pos += 4
    H = int.from_bytes(data[pos : pos + 4], "little"); pos += 4
    n_palette = int.from_bytes(data[pos : pos + 2], "little"); pos += 2
    registry: dict[RGB, str] = {}
    colors: list[RGB] = []
    for _ in range(n_palette):
        r, g, b, nlen = data[pos : pos + 4]; pos += 4
        name = data[pos : pos + nlen].decode("utf-8"); pos += nlen
        registry[(r, g, b)] = name
        colors.append((r, g, b))
    run_count = int.from_bytes(data[pos : pos + 4], "little"); pos += 4
    idx = np.empty(W * H, dtype=np.int64)
    cursor = 0
    for _ in range(run_count):
        length = int.from_bytes(data[pos : pos + 4], "little"); pos += 4
        palette_idx = int.from_bytes(data[pos : pos + 2], "little"); pos += 2
        idx[cursor : cursor + length] = palette_idx
        cursor += length
    if cursor != W * H:
        raise ValueError(f"runs cover {cursor} pixels, expected {W * H}")
    rgb = np.array(colors, dtype=np.uint8)[idx.reshape(H, W)]
    return InstanceLabelMap(raster=rgb.transpose(2, 0, 1), registry=registry)


def label_map_side_symbols(w_map: InstanceLabelMap, bits_per_channel_symbol: float) -> float:
    """Bandwidth cost of the losslessly delivered label map, in channel
    symbols, measured from the actual encoded size."""
    return len(encode_label_map_bytes(w_map)) * 8.0 / bits_per_channel_symbol


# --- session message framing ----------------------------------------------------
#
# Every protocol message is length-prefixed: u32 little-endian payload length
# (including the type byte), u8 message type, payload bytes.

MSG_CREATE_SESSION = 1
MSG_LABEL_MAP = 2
MSG_PROMPT = 3
MSG_STREAM = 4
MSG_DECODE_REQUEST = 5
MSG_IMAGE = 6
MSG_REPORT = 7

MESSAGE_NAMES = {
    MSG_CREATE_SESSION: "CreateSession",
    MSG_LABEL_MAP: "LabelMap",
    MSG_PROMPT: "Prompt",
    MSG_STREAM: "Stream",
    MSG_DECODE_REQUEST: "DecodeRequest",
    MSG_IMAGE: "Image",
    MSG_REPORT: "Report",
}


def encode_message(msg_type: int, payload: bytes) -> bytes:
    if msg_type not in MESSAGE_NAMES:
        raise ValueError(f"unknown message type {msg_type}")
    return (len(payload) + 1).to_bytes(4, "little") + bytes([msg_type]) + payload


def decode_message(data: bytes) -> tuple[int, bytes, bytes]:
    """Parse one frame; returns (type, payload, remaining bytes)."""
    if len(data) < 5:
        raise ValueError("truncated message frame")
    length = int.from_bytes(data[:4], "little")
    if len(data) < 4 + length:
        raise ValueError("truncated message payload")
    msg_type = data[4]
    if msg_type not in MESSAGE_NAMES:
        raise ValueError(f"unknown message type {msg_type}")
    return msg_type, data[5 : 4 + length], data[4 + length :]


def iterate_messages(data: bytes):
    while data:
        msg_type, payload, data = decode_message(data)
        yield msg_type, payload
