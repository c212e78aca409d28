"""Variable-rate JSCC codec: shared transformer backbone with learnable rate
tokens and one projection head per grid value.

Each latent embedding (one spatial position) is mapped to a channel-symbol
segment whose length k_i comes from the rate allocation. Masked embeddings
contribute nothing to the stream and are replaced by the dedicated r_0 token
before the backbone, so their latent content can never leak into transmitted
symbols. The decoder rebuilds a dense latent by projecting received segments
back to the embedding width and zero-filling masked positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, RateConfig
from .entropy import RateAllocation, pack_bits_le, unpack_bits_le


def full_mask(l: int) -> np.ndarray:
    return np.ones(l, dtype=np.uint8)


def _check_mask(mask: np.ndarray, l: int) -> np.ndarray:
    mask = np.asarray(mask).reshape(-1)
    if mask.size != l:
        raise ValueError(f"mask length {mask.size} does not match embedding count {l}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask entries must be 0 or 1")
    return mask.astype(np.uint8)


def segment_layout(alloc: RateAllocation, mask: np.ndarray | None = None) -> list[tuple[int, int, int]]:
    """(embedding position, stream offset, segment length) for every
    transmitted embedding, in raster order. Offsets partition [0, total)."""
    mask = alloc.mask if mask is None else _check_mask(mask, len(alloc))
    layout = []
    offset = 0
    for pos in np.flatnonzero(mask):
        k = int(alloc.k[pos])
        if k == 0:
            raise ValueError(f"unmasked embedding {pos} has no grid rate assigned")
        layout.append((int(pos), offset, k))
        offset += k
    return layout


@dataclass
class ChannelSymbolStream:
    """Flat real-valued channel symbols plus the segmentation that defines them."""

    symbols: np.ndarray
    alloc: RateAllocation
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.mask is None:
            self.mask = self.alloc.mask
        self.mask = _check_mask(self.mask, len(self.alloc))
        self.symbols = np.asarray(self.symbols, dtype=np.float32).reshape(-1)
        expected = int(self.alloc.k[self.mask > 0].sum())
        if self.symbols.size != expected:
            raise ValueError(
                f"stream carries {self.symbols.size} symbols but layout requires {expected}"
            )

    def __len__(self) -> int:
        return int(self.symbols.size)

    def layout(self) -> list[tuple[int, int, int]]:
        return segment_layout(self.alloc, self.mask)

    def segments(self) -> dict[int, np.ndarray]:
        return {pos: self.symbols[off : off + ln] for pos, off, ln in self.layout()}

    def with_symbols(self, symbols: np.ndarray) -> "ChannelSymbolStream":
        return ChannelSymbolStream(symbols=symbols, alloc=self.alloc, mask=self.mask.copy())


def resegment(symbols: np.ndarray, alloc: RateAllocation, mask: np.ndarray) -> ChannelSymbolStream:
    """Re-wrap a flat symbol vector under (alloc, mask), rejecting length
    mismatches with the position of the first inconsistent segment."""
    symbols = np.asarray(symbols, dtype=np.float32).reshape(-1)
    layout = segment_layout(alloc, mask)
    total = layout[-1][1] + layout[-1][2] if layout else 0
    if symbols.size != total:
        for pos, off, ln in layout:
            if off + ln > symbols.size:
                raise ValueError(
                    f"stream too short: segment at embedding {pos} needs symbols "
                    f"[{off}, {off + ln}) but only {symbols.size} are present"
                )
        raise ValueError(
            f"stream too long: {symbols.size - total} symbols remain after the last segment"
        )
    return ChannelSymbolStream(symbols=symbols, alloc=alloc, mask=mask)


class RateTokenBank(nn.Module):
    """Learnable tokens, one per grid value plus r_0 for untransmitted slots."""

    def __init__(self, grid: list[int], dim: int):
        super().__init__()
        self.grid = list(grid)
        self.table = nn.Embedding(len(grid) + 1, dim)
        nn.init.normal_(self.table.weight, std=0.02)
        self._index = {v: i + 1 for i, v in enumerate(self.grid)}

    def indices(self, k: np.ndarray, mask: np.ndarray) -> torch.Tensor:
        idx = np.zeros(k.size, dtype=np.int64)
        for i, (ki, mi) in enumerate(zip(k, mask)):
            if mi:
                try:
                    idx[i] = self._index[int(ki)]
                except KeyError:
                    raise ValueError(f"rate {int(ki)} at embedding {i} is not a grid value") from None
        return torch.as_tensor(idx, device=self.table.weight.device)

    def lookup(self, k: np.ndarray, mask: np.ndarray) -> torch.Tensor:
        return self.table(self.indices(k, mask))


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 4), nn.GELU(), nn.Linear(dim * 4, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        normed = self.norm1(x)
        attn_out, _ = self.attn(normed, normed, normed, need_weights=False)
        x = x + attn_out
        return x + self.mlp(self.norm2(x))


class VariableRateJSCC(nn.Module):
    """Encoder f_e and decoder f_d around a simulated channel.

    Both sides share one rate-token bank; the backbone is plain multi-head
    self-attention over the l embeddings. Projection heads exist for every
    grid value up front so checkpoints are independent of which rates a
    training run happened to visit.
    """

    def __init__(self, cfg: ModelConfig, rate_cfg: RateConfig):
        super().__init__()
        self.cfg = cfg
        self.grid = list(rate_cfg.grid)
        c = cfg.channel_dim
        self.tokens = RateTokenBank(self.grid, c)
        self.enc_blocks = nn.ModuleList(TransformerBlock(c, cfg.jscc_heads) for _ in range(cfg.jscc_depth))
        self.dec_blocks = nn.ModuleList(TransformerBlock(c, cfg.jscc_heads) for _ in range(cfg.jscc_depth))
        self.enc_heads = nn.ModuleDict({str(k): nn.Linear(c, k) for k in self.grid})
        self.dec_heads = nn.ModuleDict({str(k): nn.Linear(k, c) for k in self.grid})

    def _prepare(self, alloc: RateAllocation, mask: np.ndarray | None) -> np.ndarray:
        mask = alloc.mask if mask is None else _check_mask(mask, len(alloc))
        bad = np.flatnonzero((mask > 0) & (alloc.k == 0))
        if bad.size:
            raise ValueError(f"unmasked embedding {int(bad[0])} has no grid rate assigned")
        return mask

    def encode(
        self,
        y: torch.Tensor,
        alloc: RateAllocation,
        mask: np.ndarray | None = None,
    ) -> torch.Tensor:
        """Map a single-image latent (1, c, h, w) to a flat symbol tensor in
        segment order. Masked embeddings are replaced by r_0 before the
        backbone and emit no symbols."""
        if y.dim() != 4 or y.shape[0] != 1:
            raise ValueError(f"encode expects a (1, c, h, w) latent, got {tuple(y.shape)}")
        _, c, h, w = y.shape
        l = h * w
        if len(alloc) != l:
            raise ValueError(f"allocation length {len(alloc)} does not match latent grid {l}")
        mask = self._prepare(alloc, mask)

        emb = y.flatten(2).transpose(1, 2).squeeze(0)  # (l, c)
        tok = self.tokens.lookup(alloc.k, mask)
        keep = torch.as_tensor(mask.astype(np.float32), device=y.device, dtype=y.dtype).unsqueeze(1)
        x = emb * keep + tok
        for block in self.enc_blocks:
            x = block(x.unsqueeze(0)).squeeze(0)

        layout = segment_layout(alloc, mask)
        total = layout[-1][1] + layout[-1][2] if layout else 0
        out = torch.zeros(total, device=y.device, dtype=y.dtype)
        by_rate: dict[int, list[tuple[int, int]]] = {}
        for pos, off, ln in layout:
            by_rate.setdefault(ln, []).append((pos, off))
        for k, entries in by_rate.items():
            positions = torch.as_tensor([p for p, _ in entries], device=y.device)
            offsets = torch.as_tensor([o for _, o in entries], device=y.device)
            seg = self.enc_heads[str(k)](x[positions])  # (n_k, k)
            flat_idx = (offsets.unsqueeze(1) + torch.arange(k, device=y.device)).reshape(-1)
            out = out.index_put((flat_idx,), seg.reshape(-1))
        return out

    def encode_batch(
        self,
        y: torch.Tensor,
        allocs: list[RateAllocation],
        masks: list[np.ndarray | None],
    ) -> list[torch.Tensor]:
        """Encode a batch of latents sharing one grid shape; the transformer
        runs once over the whole batch, heads run per image."""
        b, c, h, w = y.shape
        l = h * w
        prepared = [self._prepare(a, m) for a, m in zip(allocs, masks)]
        emb = y.flatten(2).transpose(1, 2)  # (b, l, c)
        toks = torch.stack([self.tokens.lookup(a.k, m) for a, m in zip(allocs, prepared)])
        keep = torch.stack([
            torch.as_tensor(m.astype(np.float32), device=y.device, dtype=y.dtype) for m in prepared
        ]).unsqueeze(2)
        x = emb * keep + toks
        for block in self.enc_blocks:
            x = block(x)
        outs = []
        for i in range(b):
            layout = segment_layout(allocs[i], prepared[i])
            total = layout[-1][1] + layout[-1][2] if layout else 0
            out = torch.zeros(total, device=y.device, dtype=y.dtype)
            by_rate: dict[int, list[tuple[int, int]]] = {}
            for pos, off, ln in layout:
                by_rate.setdefault(ln, []).append((pos, off))
            for k, entries in by_rate.items():
                positions = torch.as_tensor([p for p, _ in entries], device=y.device)
                offsets = torch.as_tensor([o for _, o in entries], device=y.device)
                seg = self.enc_heads[str(k)](x[i, positions])
                flat_idx = (offsets.unsqueeze(1) + torch.arange(k, device=y.device)).reshape(-1)
                out = out.index_put((flat_idx,), seg.reshape(-1))
            outs.append(out)
        return outs

    def decode_batch(
        self,
        symbol_list: list[torch.Tensor],
        allocs: list[RateAllocation],
        masks: list[np.ndarray | None],
        grid_hw: tuple[int, int],
    ) -> torch.Tensor:
        """Decode a batch of received streams into dense latents (B, c, h, w)."""
        h, w = grid_hw
        l = h * w
        c = self.cfg.channel_dim
        b = len(symbol_list)
        prepared = [self._prepare(a, m) for a, m in zip(allocs, masks)]
        device = self.tokens.table.weight.device
        dtype = symbol_list[0].dtype if symbol_list and symbol_list[0].numel() else self.tokens.table.weight.dtype
        emb = torch.zeros(b, l, c, device=device, dtype=dtype)
        for i, (symbols, alloc, mask) in enumerate(zip(symbol_list, allocs, prepared)):
            layout = segment_layout(alloc, mask)
            by_rate: dict[int, list[tuple[int, int]]] = {}
            for pos, off, ln in layout:
                by_rate.setdefault(ln, []).append((pos, off))
            for k, entries in by_rate.items():
                positions = torch.as_tensor([p for p, _ in entries], device=device)
                offsets = torch.as_tensor([o for _, o in entries], device=device)
                flat_idx = offsets.unsqueeze(1) + torch.arange(k, device=device)
                seg = symbols[flat_idx.reshape(-1)].reshape(-1, k)
                emb[i] = emb[i].index_put((positions,), self.dec_heads[str(k)](seg))
        emb = emb + torch.stack([self.tokens.lookup(a.k, m) for a, m in zip(allocs, prepared)])
        x = emb
        for block in self.dec_blocks:
            x = block(x)
        return x.transpose(1, 2).reshape(b, c, h, w)

    def decode(
        self,
        symbols: torch.Tensor,
        alloc: RateAllocation,
        mask: np.ndarray | None = None,
        grid_hw: tuple[int, int] | None = None,
    ) -> torch.Tensor:
        """Rebuild a dense latent (1, c, h, w) from received symbols."""
        if grid_hw is None:
            raise ValueError("decode requires the latent grid shape (h, w)")
        h, w = grid_hw
        l = h * w
        if len(alloc) != l:
            raise ValueError(f"allocation length {len(alloc)} does not match latent grid {l}")
        mask = self._prepare(alloc, mask)
        layout = segment_layout(alloc, mask)
        total = layout[-1][1] + layout[-1][2] if layout else 0
        if symbols.numel() != total:
            for pos, off, ln in layout:
                if off + ln > symbols.numel():
                    raise ValueError(
                        f"received stream inconsistent with allocation at embedding {pos}: "
                        f"needs symbols [{off}, {off + ln}), have {symbols.numel()}"
                    )
            raise ValueError(f"received stream has {symbols.numel() - total} extra symbols")

        c = self.cfg.channel_dim
        device = symbols.device
        dtype = symbols.dtype if symbols.numel() else self.tokens.table.weight.dtype
        emb = torch.zeros(l, c, device=device, dtype=dtype)
        by_rate: dict[int, list[tuple[int, int]]] = {}
        for pos, off, ln in layout:
            by_rate.setdefault(ln, []).append((pos, off))
        for k, entries in by_rate.items():
            positions = torch.as_tensor([p for p, _ in entries], device=device)
            offsets = torch.as_tensor([o for _, o in entries], device=device)
            flat_idx = offsets.unsqueeze(1) + torch.arange(k, device=device)
            seg = symbols[flat_idx.reshape(-1)].reshape(-1, k)
            emb = emb.index_put((positions,), self.dec_heads[str(k)](seg))
        emb = emb + self.tokens.lookup(alloc.k, mask)
        x = emb
        for block in self.dec_blocks:
            x = block(x.unsqueeze(0)).squeeze(0)
        return x.transpose(0, 1).reshape(1, c, h, w)


# --- stream wire format --------------------------------------------------------
#
# Byte-exact layout (all integers little-endian):
#   u32  l                 embedding count
#   u8   index_width       bits per rate index
#   u8   mask_flag         1 if explicit mask bits follow
#   ceil(l*index_width/8)  packed rate indices (masked slots use sentinel |V|)
#   ceil(l/8) bytes        mask bits, only when mask_flag == 1
#   u32  symbol_count
#   f32 * symbol_count     channel symbols in segment order


def encode_stream_bytes(stream: ChannelSymbolStream, rate_cfg: RateConfig) -> bytes:
    l = len(stream.alloc)
    width = rate_cfg.index_width
    lookup = {v: i for i, v in enumerate(rate_cfg.grid)}
    sentinel = len(rate_cfg.grid)
    indices = [lookup[int(k)] if k != 0 else sentinel for k in stream.alloc.k]
    if max(indices, default=0) >= (1 << width):
        raise ValueError("index width cannot represent this allocation")
    mask_flag = 0 if bool(np.all(stream.mask == 1)) else 1
    out = bytearray()
    out += int(l).to_bytes(4, "little")
    out.append(width)
    out.append(mask_flag)
    out += pack_bits_le(indices, width)
    if mask_flag:
        out += pack_bits_le(stream.mask.tolist(), 1)
    out += int(len(stream)).to_bytes(4, "little")
    out += stream.symbols.astype("<f4").tobytes()
    return bytes(out)


def decode_stream_bytes(data: bytes, rate_cfg: RateConfig) -> ChannelSymbolStream:
    if len(data) < 6:
        raise ValueError("truncated stream payload")
    l = int.from_bytes(data[:4], "little")
    width = data[4]
    mask_flag = data[5]
    if width != rate_cfg.index_width:
        raise ValueError(f"stream index width {width} does not match configuration {rate_cfg.index_width}")
    pos = 6
    nbytes = (l * width + 7) // 8
    indices = unpack_bits_le(data[pos : pos + nbytes], l, width)
    pos += nbytes
    sentinel = len(rate_cfg.grid)
    k = np.zeros(l, dtype=np.int64)
    for i, idx in enumerate(indices):
        if idx == sentinel:
            continue
        if idx > sentinel:
            raise ValueError(f"rate index {idx} at embedding {i} outside grid")
        k[i] = rate_cfg.grid[idx]
    if mask_flag:
        mbytes = (l + 7) // 8
        mask = np.array(unpack_bits_le(data[pos : pos + mbytes], l, 1), dtype=np.uint8)
        pos += mbytes
    else:
        mask = full_mask(l)
    count = int.from_bytes(data[pos : pos + 4], "little")
    pos += 4
    symbols = np.frombuffer(data[pos : pos + 4 * count], dtype="<f4").copy()
    if symbols.size != count:
        raise ValueError("truncated symbol payload")
    alloc = RateAllocation(k=k, grid=rate_cfg.grid)
    return resegment(symbols, alloc, mask)
