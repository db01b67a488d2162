"""Binary container for paired uplink/downlink CSI samples.

Layout (little-endian)::

    b"CSID" | u32 version=1 | u32 Nt | u32 Nc | u32 n_samples | u32 temporal_len
    | f64 band_gap_hz | f64 bandwidth_hz
    | per sample, per time step: uplink Nt*Nc, then downlink Nt*Nc,
      row-major, interleaved (re, im) float32
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ChannelConfig, csi_pair, path_sequence

log = logging.getLogger(__name__)

MAGIC = b"CSID"
VERSION = 1
_HEADER = struct.Struct("<4s5I2d")
HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class DatasetHeader:
    n_tx: int
    n_subcarriers: int
    n_samples: int
    temporal_len: int
    band_gap: float
    bandwidth: float

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC,
            VERSION,
            self.n_tx,
            self.n_subcarriers,
            self.n_samples,
            self.temporal_len,
            self.band_gap,
            self.bandwidth,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> DatasetHeader:
        magic, version, nt, nc, n, t, gap, bw = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise ValueError(f"not a CSI dataset (magic {magic!r})")
        if version != VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        return cls(nt, nc, n, t, gap, bw)

    @property
    def sample_bytes(self) -> int:
        return self.temporal_len * 2 * self.n_tx * self.n_subcarriers * 8


@dataclass(frozen=True)
class DatasetSummary:
    path: Path
    n_samples: int
    temporal_len: int
    n_tx: int
    n_subcarriers: int
    n_bytes: int
    checksum: str


@dataclass
class CsiDataset:
    """A dataset file mapped read-only into memory.

    ``csi`` has shape ``(n_samples, temporal_len, 2, Nt, Nc)`` where index 0 on
    the link axis is the uplink and 1 the downlink.
    """

    header: DatasetHeader
    csi: np.ndarray

    def __len__(self) -> int:
        return self.header.n_samples

    @property
    def uplink(self) -> np.ndarray:
        return self.csi[:, :, 0]

    @property
    def downlink(self) -> np.ndarray:
        return self.csi[:, :, 1]


def generate_sample(
    config: ChannelConfig, seed: int, temporal_len: int = 1, doppler_freq: float = 0.0, dt: float = 1e-3
) -> np.ndarray:
    """``(temporal_len, 2, Nt, Nc)`` complex128 array for one geometry draw."""
    seq = path_sequence(config, seed, temporal_len, doppler_freq, dt)
    return np.stack([np.stack(csi_pair(p)) for p in seq])


def build_dataset(
    config: ChannelConfig,
    n_samples: int,
    temporal_len: int,
    out_path: str | Path,
    doppler_freq: float = 0.0,
    dt: float = 1e-3,
) -> DatasetSummary:
    """Write ``n_samples`` independent draws; sample ``i`` uses seed ``config.seed + i``."""
    if n_samples < 0 or temporal_len < 1:
        raise ValueError("need n_samples >= 0 and temporal_len >= 1")
    ul, dl = config.uplink, config.downlink
    if (ul.n_subcarriers, ul.bandwidth) != (dl.n_subcarriers, dl.bandwidth):
        raise ValueError("dataset format requires equal uplink/downlink grids")
    header = DatasetHeader(
        n_tx=dl.n_tx_antennas,
        n_subcarriers=dl.n_subcarriers,
        n_samples=n_samples,
        temporal_len=temporal_len,
        band_gap=config.band_gap,
        bandwidth=dl.bandwidth,
    )
    out_path = Path(out_path)
    digest = hashlib.sha256()
    with open(out_path, "wb") as fh:
        raw = header.pack()
        fh.write(raw)
        digest.update(raw)
        for i in range(n_samples):
            block = generate_sample(config, config.seed + i, temporal_len, doppler_freq, dt)
            raw = block.astype("<c8").tobytes()
            fh.write(raw)
            digest.update(raw)
    n_bytes = out_path.stat().st_size
    log.info("wrote %d samples (%d bytes) to %s", n_samples, n_bytes, out_path)
    return DatasetSummary(
        path=out_path,
        n_samples=n_samples,
        temporal_len=temporal_len,
        n_tx=header.n_tx,
        n_subcarriers=header.n_subcarriers,
        n_bytes=n_bytes,
        checksum=digest.hexdigest(),
    )


def load_dataset(path: str | Path) -> CsiDataset:
    path = Path(path)
    with open(path, "rb") as fh:
        header = DatasetHeader.unpack(fh.read(HEADER_SIZE))
    expected = HEADER_SIZE + header.n_samples * header.sample_bytes
    actual = path.stat().st_size
    if actual != expected:
        raise ValueError(f"{path}: size {actual} does not match header ({expected})")
    shape = (header.n_samples, header.temporal_len, 2, header.n_tx, header.n_subcarriers)
    if header.n_samples == 0:
        return CsiDataset(header, np.zeros(shape, dtype="<c8"))
    csi = np.memmap(path, dtype="<c8", mode="r", offset=HEADER_SIZE, shape=shape)
    return CsiDataset(header, csi)
