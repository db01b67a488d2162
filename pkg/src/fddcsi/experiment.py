"""Experiment orchestration: per-cell datasets, codec training, evaluation and reports."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import codecs
from .channel import ChannelConfig, csi_pair, path_sequence, sample_paths
from .codecs import CodecBundle, Kind
from .metrics import cosine_sim, format_db, nmse_db
from .nn import Schedule, TrainingDivergedError
from .quantization import DEFAULT_TIERS, fit_tiers, normalize_tiers, quantize_batch
from .transforms import ad_transform

log = logging.getLogger(__name__)

VAL_SEED_OFFSET = 1_000_000
TEST_SEED_OFFSET = 2_000_000
FLOAT_BITS = 32

SCENARIOS = {
    "indoor": dict(dl_center=5.3e9, band_gap=180e6, bandwidth=20e6, n_clusters=6),
    "outdoor": dict(dl_center=930e6, band_gap=75e6, bandwidth=5e6, n_clusters=8),
}
PROTOCOL_CELLS = ("baseline", "zero_gap", "double_bw")


def _parse_ratio(text: str) -> float:
    return float(Fraction(text.strip()))


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep over codecs x compression ratios x (band gap, bandwidth) cells.

    ``cells`` entries are ``baseline``, ``zero_gap``, ``double_bw`` or an
    explicit ``<gap_hz>x<bandwidth_hz>`` pair.
    """

    scenario: str = "indoor"
    dl_center: float | None = None
    band_gap: float | None = None
    bandwidth: float | None = None
    crs: tuple[float, ...] = (1 / 8, 1 / 12, 1 / 16)
    kinds: tuple[str, ...] = ("CSINET", "DUALNET_MAG", "DUALNET_ABS", "U2D_MAG", "U2D_ABS", "U2D_ORG")
    cells: tuple[str, ...] = PROTOCOL_CELLS
    n_train: int = 20_000
    n_val: int = 2_000
    n_test: int = 3_000
    seed: int = 0
    out_dir: str = "results"
    n_tx: int = 32
    n_subcarriers: int = 256
    n_delay: int = 32
    epochs: int = 300
    batch_size: int = 16
    lr: float = 1e-2
    patience: int = 20
    phase_tiers: tuple = DEFAULT_TIERS
    seq_len: int = 4
    rest_ratio: float = 4.0
    doppler_freq: float = 0.0
    frame_interval: float = 1e-3
    plot: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        for k in self.kinds:
            Kind(k)
        for cr in self.crs:
            if not 0 < cr <= 1:
                raise ValueError(f"compression ratio {cr} outside (0, 1]")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("dataset sizes must be positive")
        for c in self.cells:
            self.cell_bands(c)
        object.__setattr__(self, "phase_tiers", normalize_tiers(self.phase_tiers))

    # -- scenario -------------------------------------------------------------

    def _default(self, name):
        value = getattr(self, name)
        return SCENARIOS[self.scenario][name] if value is None else value

    def base_channel(self) -> ChannelConfig:
        bw = self._default("bandwidth")
        return ChannelConfig.fdd(
            dl_center=self._default("dl_center"),
            band_gap=self._default("band_gap"),
            bandwidth=bw,
            n_subcarriers=self.n_subcarriers,
            n_tx_antennas=self.n_tx,
            n_clusters=SCENARIOS[self.scenario]["n_clusters"],
            seed=self.seed,
        )

    def cell_bands(self, cell: str) -> tuple[float, float]:
        gap, bw = self._default("band_gap"), self._default("bandwidth")
        if cell == "baseline":
            return gap, bw
        if cell == "zero_gap":
            return 0.0, bw
        if cell == "double_bw":
            return gap, 2 * bw
        try:
            g, b = cell.lower().split("x")
            return float(g), float(b)
        except ValueError:
            raise ValueError(f"bad cell {cell!r}; expected a protocol name or <gap>x<bandwidth>") from None

    def cell_channel(self, cell: str) -> ChannelConfig:
        gap, bw = self.cell_bands(cell)
        return self.base_channel().with_bands(band_gap=gap, bandwidth=bw)

    def schedule(self) -> Schedule:
        return Schedule(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, patience=self.patience)

    # -- flat key=value files ---------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if f.name == "phase_tiers":
                v = ";".join(f"{c}:{'float' if b is None else b}" for c, b in v)
            elif isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> ExperimentConfig:
        kw = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            kw[key] = value
        return cls.from_strings(kw)

    @classmethod
    def from_strings(cls, kw: dict[str, str]) -> ExperimentConfig:
        types = {f.name: f for f in dataclasses.fields(cls)}
        out = {}
        for key, value in kw.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            default = types[key].default
            if key == "phase_tiers":
                out[key] = tuple(
                    (int(c), None if b == "float" else int(b)) for c, b in (t.split(":") for t in value.split(";") if t)
                )
            elif key == "crs":
                out[key] = tuple(_parse_ratio(v) for v in value.split(",") if v.strip())
            elif key in ("kinds", "cells"):
                out[key] = tuple(v.strip() for v in value.split(",") if v.strip())
            elif isinstance(default, bool):
                out[key] = value.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                out[key] = int(float(value))
            elif isinstance(default, float) or default is None and key not in ("scenario", "out_dir"):
                out[key] = float(value)
            else:
                out[key] = value
        return cls(**out)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_text(Path(path).read_text())


@dataclass
class ResultRecord:
    kind: str
    cr: float | None
    cell: str
    band_gap: float
    bandwidth: float
    nmse_db: float
    nmse_mag_db: float
    rho: float
    payload_floats: float
    payload_bits: int
    seed: int
    nmse_quantized_db: float | None = None
    phase_bits: int = 0
    beats_zero: bool = True
    train: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("nmse_db", "nmse_mag_db", "nmse_quantized_db"):
            if d[k] is not None:
                d[k] = format_db(d[k])
        return d


CSV_COLUMNS = (
    "kind", "cr", "cell", "band_gap", "bandwidth", "nmse_db", "nmse_mag_db", "nmse_quantized_db",
    "rho", "payload_floats", "payload_bits", "phase_bits", "beats_zero", "seed",
)


# -- data ---------------------------------------------------------------------------


def _ad(csi: np.ndarray, n_delay: int) -> np.ndarray:
    return ad_transform(csi, n_delay).astype(np.complex64)


def cell_data(config: ChannelConfig, n: int, seed: int, n_delay: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Angular-delay ``(uplink, downlink)`` arrays ``(n, Nt, Ld)``; sample ``i`` uses seed ``seed + i``."""
    ul = np.empty((n, config.uplink.n_tx_antennas, n_delay), np.complex64)
    dl = np.empty_like(ul)
    for i in range(n):
        u, d = csi_pair(sample_paths(config, seed + i))
        ul[i], dl[i] = _ad(u, n_delay), _ad(d, n_delay)
    return ul, dl


def sequence_data(
    config: ChannelConfig, n: int, seed: int, length: int, doppler_freq: float = 0.0, dt: float = 1e-3, n_delay: int = 32
) -> tuple[np.ndarray, np.ndarray]:
    """Temporal ``(n, T, Nt, Ld)`` uplink and downlink arrays."""
    ul = np.empty((n, length, config.uplink.n_tx_antennas, n_delay), np.complex64)
    dl = np.empty_like(ul)
    for i in range(n):
        for t, paths in enumerate(path_sequence(config, seed + i, length, doppler_freq, dt)):
            u, d = csi_pair(paths)
            ul[i, t], dl[i, t] = _ad(u, n_delay), _ad(d, n_delay)
    return ul, dl


@dataclass
class CellData:
    train: tuple[np.ndarray, np.ndarray]
    val: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]


def build_cell_data(cfg: ExperimentConfig, cell: str, temporal: bool = False) -> CellData:
    ch = cfg.cell_channel(cell)
    if temporal:
        make = lambda n, s: sequence_data(ch, n, s, cfg.seq_len, cfg.doppler_freq, cfg.frame_interval, cfg.n_delay)
    else:
        make = lambda n, s: cell_data(ch, n, s, cfg.n_delay)
    return CellData(
        make(cfg.n_train, cfg.seed),
        make(cfg.n_val, cfg.seed + VAL_SEED_OFFSET),
        make(cfg.n_test, cfg.seed + TEST_SEED_OFFSET),
    )


# -- evaluation -------------------------------------------------------------------------


def payload(bundle: CodecBundle, phase_bits: int = 0) -> tuple[float, int]:
    """Feedback floats per frame and total bits (floats at 32 bits plus phase/sign bits)."""
    floats = bundle.feedback_floats()
    sign_bits = 2 * bundle.n_tx * bundle.n_delay if bundle.kind is Kind.DUALNET_ABS else 0
    return floats, int(round(floats * FLOAT_BITS)) + phase_bits + sign_bits


def evaluate_bundle(bundle: CodecBundle, ul_ad, dl_ad, phase_tiers=DEFAULT_TIERS) -> dict:
    """NMSE (dB), magnitude NMSE, cosine similarity and, for DualNet-MAG, quantized-phase NMSE.

    Phase tiers larger than the image are truncated to its tap count.
    """
    planes, target = codecs.run_joint(bundle, ul_ad, dl_ad)
    est = codecs.to_complex(bundle.kind.mode, planes, target)
    truth = np.asarray(dl_ad)
    if bundle.kind is Kind.CSINET_LSTM:
        truth = truth.reshape((-1,) + truth.shape[-2:])
        est = est.reshape(truth.shape)
    out = {
        "nmse_db": nmse_db(truth, est),
        "nmse_mag_db": nmse_db(np.abs(truth), np.abs(est)),
        "rho": cosine_sim(truth, est),
        "nmse_quantized_db": None,
        "phase_bits": 0,
    }
    if bundle.kind is Kind.DUALNET_MAG:
        mag_hat = np.abs(est)
        tiers = fit_tiers(phase_tiers, truth.shape[-2] * truth.shape[-1])
        phase_hat, bits = quantize_batch(np.angle(truth), mag_hat, tiers)
        out["nmse_quantized_db"] = nmse_db(truth, mag_hat * np.exp(1j * phase_hat))
        out["phase_bits"] = bits
    return out


def frame_nmse(bundle: CodecBundle, ul_ad, dl_ad) -> list[float]:
    """Per-frame NMSE (dB) for CSINET_LSTM sequences."""
    planes, target = codecs.run_joint(bundle, ul_ad, dl_ad)
    est = codecs.to_complex("ORG", planes, target)
    return [nmse_db(dl_ad[:, t], est[:, t]) for t in range(bundle.seq_len)]


# -- runs -------------------------------------------------------------------------------


def make_bundle(cfg: ExperimentConfig, kind: Kind, cr: float | None) -> CodecBundle:
    if kind is Kind.CSINET_LSTM:
        return codecs.csinet_lstm_build(cfg.n_tx, cfg.n_delay, cr, cr / cfg.rest_ratio, cfg.seq_len, cfg.seed)
    return codecs.build(kind, cfg.n_tx, cfg.n_delay, cr, seed=cfg.seed)


def train_cell(cfg: ExperimentConfig, data: CellData, kind: Kind, cr: float | None) -> CodecBundle:
    bundle = make_bundle(cfg, kind, cr)
    return codecs.train_codec(bundle, data.train, data.val, cfg.schedule(), seed=cfg.seed)


def _record(cfg, cell, kind, cr, bundle, metrics) -> ResultRecord:
    gap, bw = cfg.cell_bands(cell)
    floats, bits = payload(bundle, metrics["phase_bits"])
    return ResultRecord(
        kind=kind.value,
        cr=cr,
        cell=cell,
        band_gap=gap,
        bandwidth=bw,
        nmse_db=metrics["nmse_db"],
        nmse_mag_db=metrics["nmse_mag_db"],
        rho=metrics["rho"],
        payload_floats=floats,
        payload_bits=bits,
        seed=cfg.seed,
        nmse_quantized_db=metrics["nmse_quantized_db"],
        phase_bits=metrics["phase_bits"],
        beats_zero=bool(metrics["nmse_db"] < 0),
        train={k: bundle.metadata.get(k) for k in ("epochs", "best_epoch", "final_loss")},
    )


def run_cell(cfg: ExperimentConfig, cell: str, kind: str | Kind, cr: float | None, data: CellData | None = None) -> ResultRecord:
    """Train and evaluate a single (cell, codec, cr) job; regenerable from ``cfg`` alone."""
    kind = Kind(kind)
    if data is None:
        data = build_cell_data(cfg, cell, temporal=kind is Kind.CSINET_LSTM)
    bundle = train_cell(cfg, data, kind, None if not kind.has_encoder else cr)
    return _record(cfg, cell, kind, cr, bundle, evaluate_bundle(bundle, *data.test, cfg.phase_tiers))


@dataclass
class ExperimentResult:
    records: list[ResultRecord]
    divergences: list[dict]

    def flagged(self) -> list[ResultRecord]:
        """Records that do not beat the all-zeros predictor."""
        return [r for r in self.records if not r.beats_zero]


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Every (cell, codec, cr) job in order; divergent trainings are logged and skipped."""
    records, divergences = [], []
    kinds = [Kind(k) for k in cfg.kinds]
    for cell in cfg.cells if kinds else ():
        data = {}
        for kind in kinds:
            temporal = kind is Kind.CSINET_LSTM
            if temporal not in data:
                data[temporal] = build_cell_data(cfg, cell, temporal)
            d = data[temporal]
            # U2D has no codeword: train once, report against every cr
            shared = None
            for cr in cfg.crs:
                try:
                    if kind.has_encoder or shared is None:
                        bundle = train_cell(cfg, d, kind, cr if kind.has_encoder else None)
                        metrics = evaluate_bundle(bundle, *d.test, cfg.phase_tiers)
                        if not kind.has_encoder:
                            shared = (bundle, metrics)
                    else:
                        bundle, metrics = shared
                except TrainingDivergedError as exc:
                    log.warning("%s cr=%s cell=%s diverged: %s", kind.value, cr, cell, exc)
                    divergences.append({"kind": kind.value, "cr": cr, "cell": cell, "epoch": exc.epoch})
                    continue
                rec = _record(cfg, cell, kind, cr, bundle, metrics)
                if not rec.beats_zero:
                    log.warning("%s cr=%s cell=%s does not beat the zero predictor (%.2f dB)", kind.value, cr, cell, rec.nmse_db)
                log.info("%s cr=%s cell=%s NMSE %.2f dB", kind.value, cr, cell, rec.nmse_db)
                records.append(rec)
    result = ExperimentResult(records, divergences)
    if write:
        write_reports(cfg, result)
    return result


def records_csv(records: list[ResultRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        d = r.to_json()
        w.writerow(["" if d[c] is None else d[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def write_reports(cfg: ExperimentConfig, result: ExperimentResult) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(records_csv(result.records))
    doc = {
        "config": cfg.to_text(),
        "records": [r.to_json() for r in result.records],
        "divergences": result.divergences,
        "flagged": [(r.kind, r.cr, r.cell) for r in result.flagged()],
    }
    (out / "records.json").write_text(json.dumps(doc, indent=2, allow_nan=False))
    if cfg.plot and result.records:
        plot_records(result.records, out / "nmse.png")
    return out


def plot_records(records: list[ResultRecord], path: Path) -> None:
    """NMSE against compression ratio, one line per (codec, cell)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    groups: dict[tuple[str, str], list[ResultRecord]] = {}
    for r in records:
        groups.setdefault((r.kind, r.cell), []).append(r)
    for (kind, cell), rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: r.cr or 0)
        ys = [r.nmse_db if math.isfinite(r.nmse_db) else np.nan for r in rs]
        ax.plot([1 / r.cr for r in rs], ys, marker="o", label=f"{kind} / {cell}")
    ax.set_xlabel("1 / compression ratio")
    ax.set_ylabel("NMSE (dB)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
