"""CSI feedback architectures over angular-delay representation planes.

Every codec is an encoder graph (UE side) and a decoder graph (gNB side). The
two are trained jointly by splicing them at the ``codeword`` nodes and split
again afterwards.

Plane conventions (``P`` planes of ``Nt x Ld``):

* CSINET, CSINET_LSTM, U2D_ORG: ORG planes (real, imaginary), ``P = 2``
* DUALNET_MAG, U2D_MAG: the magnitude plane, ``P = 1``
* DUALNET_ABS, U2D_ABS: |real| and |imaginary| planes, ``P = 2``

Decoders output planes in [0, 1]; the per-sample scale record, the phases
(MAG) and the signs (ABS) complete the complex reconstruction.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .nn import GraphBuilder, ModelSpec, Schedule, TrainedModel, extract, init_model, load_model, predict, save_model, train
from .transforms import Mode, decompose, phase_of

STATE_DIM = 8


class Kind(str, Enum):
    CSINET = "CSINET"
    DUALNET_MAG = "DUALNET_MAG"
    DUALNET_ABS = "DUALNET_ABS"
    CSINET_LSTM = "CSINET_LSTM"
    U2D_MAG = "U2D_MAG"
    U2D_ABS = "U2D_ABS"
    U2D_ORG = "U2D_ORG"

    @property
    def n_planes(self) -> int:
        return 1 if self in (Kind.DUALNET_MAG, Kind.U2D_MAG) else 2

    @property
    def has_encoder(self) -> bool:
        return not self.name.startswith("U2D")

    @property
    def uses_uplink(self) -> bool:
        return self.name.startswith(("DUALNET", "U2D"))

    @property
    def mode(self) -> str:
        if self in (Kind.DUALNET_MAG, Kind.U2D_MAG):
            return "MAG"
        if self in (Kind.DUALNET_ABS, Kind.U2D_ABS):
            return "ABS"
        return "ORG"


class CodecError(ValueError):
    pass


def codeword_length(cr: float, n_tx: int, n_delay: int) -> int:
    """``round(cr * 2 * Nt * Ld)``; the denominator is the full complex image."""
    if not 0 < cr <= 1:
        raise CodecError(f"compression ratio {cr} outside (0, 1]")
    return max(1, int(round(cr * 2 * n_tx * n_delay)))


@dataclass(frozen=True)
class Codeword:
    values: np.ndarray
    cr: float
    mode: str

    @property
    def length(self) -> int:
        return self.values.shape[-1]


@dataclass
class CodecBundle:
    kind: Kind
    encoder: TrainedModel | None
    decoder: TrainedModel
    n_tx: int
    n_delay: int
    cr: float | None = None
    cr_rest: float | None = None
    seq_len: int | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def codeword_len(self) -> int | None:
        return None if self.cr is None else codeword_length(self.cr, self.n_tx, self.n_delay)

    @property
    def rest_len(self) -> int | None:
        return None if self.cr_rest is None else codeword_length(self.cr_rest, self.n_tx, self.n_delay)

    @property
    def plane_shape(self) -> tuple[int, int, int]:
        return (self.kind.n_planes, self.n_tx, self.n_delay)

    def feedback_floats(self) -> float:
        """Codeword floats per frame (average over the sequence for CSINET_LSTM)."""
        if not self.kind.has_encoder:
            return 0.0
        if self.kind is Kind.CSINET_LSTM:
            return (self.codeword_len + (self.seq_len - 1) * self.rest_len) / self.seq_len
        return float(self.codeword_len)

    def manifest(self) -> dict:
        return {
            "kind": self.kind.value,
            "cr": self.cr,
            "cr_rest": self.cr_rest,
            "seq_len": self.seq_len,
            "n_tx": self.n_tx,
            "n_delay": self.n_delay,
            "metadata": self.metadata,
        }


# -- graph construction -------------------------------------------------------


def _encoder_block(
    g: GraphBuilder, x: str, planes: int, nt: int, ld: int, m: int, prefix: str, out: str, tie: str | None = None, tie_out: str | None = None
):
    t = (lambda n: f"{tie}{n}") if tie else (lambda n: None)
    h = g.conv2d(x, planes, planes, name=f"{prefix}conv", tie=t("conv"))
    h = g.batch_norm(h, planes, name=f"{prefix}bn", tie=t("bn"))
    h = g.leaky_relu(h, name=f"{prefix}act")
    h = g.reshape(h, (planes * nt * ld,), name=f"{prefix}flat")
    return g.dense(h, planes * nt * ld, m, name=out, tie=tie_out)


def _refine(g: GraphBuilder, x: str, ch: int, prefix: str, tie: str | None = None) -> str:
    """Residual refinement: ch -> 8 -> 16 -> ch with a skip connection."""
    t = (lambda n: f"{tie}{n}") if tie else (lambda n: None)
    h = x
    for i, (cin, cout) in enumerate(((ch, 8), (8, 16), (16, ch))):
        h = g.conv2d(h, cin, cout, name=f"{prefix}conv{i}", tie=t(f"conv{i}"))
        h = g.batch_norm(h, cout, name=f"{prefix}bn{i}", tie=t(f"bn{i}"))
        if i < 2:
            h = g.leaky_relu(h, name=f"{prefix}act{i}")
    h = g.residual_add([h, x], name=f"{prefix}add")
    return g.leaky_relu(h, name=f"{prefix}out")


def _expand(g: GraphBuilder, cw: str, m: int, planes: int, nt: int, ld: int, prefix: str, tie: str | None = None) -> str:
    h = g.dense(cw, m, planes * nt * ld, name=f"{prefix}fc", tie=f"{tie}fc" if tie else None)
    return g.reshape(h, (planes, nt, ld), name=f"{prefix}img")


def _head(g: GraphBuilder, h: str, cin: int, cout: int, prefix: str, out: str, tie: str | None = None) -> str:
    h = g.conv2d(h, cin, cout, name=f"{prefix}head", tie=f"{tie}head" if tie else None)
    return g.sigmoid(h, name=out)


def _pair(kind: Kind, enc: ModelSpec | None, dec: ModelSpec, nt, ld, cr=None, cr_rest=None, seq_len=None) -> CodecBundle:
    return CodecBundle(
        kind=kind,
        encoder=None if enc is None else init_model(enc),
        decoder=init_model(dec),
        n_tx=nt,
        n_delay=ld,
        cr=cr,
        cr_rest=cr_rest,
        seq_len=seq_len,
    )


def csinet_build(n_tx: int = 32, n_delay: int = 32, cr: float = 1 / 16, seed: int = 0) -> CodecBundle:
    m = codeword_length(cr, n_tx, n_delay)
    shape = (2, n_tx, n_delay)
    ge = GraphBuilder({"x": shape}, seed=seed)
    _encoder_block(ge, "x", 2, n_tx, n_delay, m, "enc_", "codeword")
    gd = GraphBuilder({"codeword": (m,)}, seed=seed + 1)
    h = _expand(gd, "codeword", m, 2, n_tx, n_delay, "dec_")
    h = _refine(gd, h, 2, "dec_r0_")
    h = _refine(gd, h, 2, "dec_r1_")
    _head(gd, h, 2, 2, "dec_", "x_hat")
    return _pair(Kind.CSINET, ge.build("codeword"), gd.build("x_hat"), n_tx, n_delay, cr=cr)


def dualnet_build(n_tx: int = 32, n_delay: int = 32, cr: float = 1 / 16, mode: str = "MAG", seed: int = 0) -> CodecBundle:
    kind = {"MAG": Kind.DUALNET_MAG, "ABS": Kind.DUALNET_ABS}[mode.upper()]
    p = kind.n_planes
    m = codeword_length(cr, n_tx, n_delay)
    shape = (p, n_tx, n_delay)
    ge = GraphBuilder({"x": shape}, seed=seed)
    _encoder_block(ge, "x", p, n_tx, n_delay, m, "enc_", "codeword")
    gd = GraphBuilder({"codeword": (m,), "side": shape}, seed=seed + 1)
    h = _expand(gd, "codeword", m, p, n_tx, n_delay, "dec_")
    h = gd.concat([h, "side"], name="dec_join")
    h = _refine(gd, h, 2 * p, "dec_r0_")
    h = _refine(gd, h, 2 * p, "dec_r1_")
    _head(gd, h, 2 * p, p, "dec_", "x_hat")
    return _pair(kind, ge.build("codeword"), gd.build("x_hat"), n_tx, n_delay, cr=cr)


def u2d_build(n_tx: int = 32, n_delay: int = 32, mode: str = "MAG", seed: int = 0) -> CodecBundle:
    kind = {"MAG": Kind.U2D_MAG, "ABS": Kind.U2D_ABS, "ORG": Kind.U2D_ORG}[mode.upper()]
    p = kind.n_planes
    gd = GraphBuilder({"side": (p, n_tx, n_delay)}, seed=seed + 1)
    h = _refine(gd, "side", p, "dec_r0_")
    h = _refine(gd, h, p, "dec_r1_")
    _head(gd, h, p, p, "dec_", "x_hat")
    return _pair(kind, None, gd.build("x_hat"), n_tx, n_delay)


def csinet_lstm_build(
    n_tx: int = 32, n_delay: int = 32, cr_first: float = 1 / 8, cr_rest: float = 1 / 32, seq_len: int = 4, seed: int = 0
) -> CodecBundle:
    """CsiNet for the first frame, small tied encoders plus a gated recurrent decoder for the rest."""
    if seq_len < 2:
        raise CodecError("CSINET_LSTM needs a sequence of at least 2 frames")
    if not cr_first > cr_rest:
        raise CodecError("cr_first must exceed cr_rest")
    m1 = codeword_length(cr_first, n_tx, n_delay)
    m2 = codeword_length(cr_rest, n_tx, n_delay)
    shape = (2, n_tx, n_delay)
    ge = GraphBuilder({f"x{t}": shape for t in range(seq_len)}, seed=seed)
    _encoder_block(ge, "x0", 2, n_tx, n_delay, m1, "enc0_", "cw0")
    for t in range(1, seq_len):
        first = t == 1
        _encoder_block(
            ge, f"x{t}", 2, n_tx, n_delay, m2, f"enc{t}_", f"cw{t}", tie=None if first else "enc1_", tie_out=None if first else "cw1"
        )
    gd = GraphBuilder({f"cw{t}": (m1 if t == 0 else m2,) for t in range(seq_len)}, seed=seed + 1)
    h = _expand(gd, "cw0", m1, 2, n_tx, n_delay, "dec0_")
    h = _refine(gd, h, 2, "dec0_r0_")
    h = _refine(gd, h, 2, "dec0_r1_")
    prev = _head(gd, h, 2, 2, "dec0_", "x_hat0")
    state = None
    for t in range(1, seq_len):
        tie = None if t == 1 else "dec1_"
        e = _expand(gd, f"cw{t}", m2, 2, n_tx, n_delay, f"dec{t}_", tie=tie)
        z = gd.concat([e, prev], name=f"dec{t}_join")
        state = gd.recurrent_cell(z, state, 4, STATE_DIM, name=f"dec{t}_cell", tie=f"{tie}cell" if tie else None)
        h = gd.channel_slice(state, 0, STATE_DIM, name=f"dec{t}_h")
        h = gd.conv2d(h, STATE_DIM, 2, name=f"dec{t}_proj", tie=f"{tie}proj" if tie else None)
        h = _refine(gd, h, 2, f"dec{t}_r0_", tie=f"{tie}r0_" if tie else None)
        prev = _head(gd, h, 2, 2, f"dec{t}_", f"x_hat{t}", tie=tie)
    enc = ge.build([f"cw{t}" for t in range(seq_len)])
    dec = gd.build([f"x_hat{t}" for t in range(seq_len)])
    return _pair(Kind.CSINET_LSTM, enc, dec, n_tx, n_delay, cr=cr_first, cr_rest=cr_rest, seq_len=seq_len)


def build(kind: Kind | str, n_tx: int = 32, n_delay: int = 32, cr: float | None = 1 / 16, seed: int = 0, **kw) -> CodecBundle:
    kind = Kind(kind)
    if kind is Kind.CSINET:
        return csinet_build(n_tx, n_delay, cr, seed)
    if kind in (Kind.DUALNET_MAG, Kind.DUALNET_ABS):
        return dualnet_build(n_tx, n_delay, cr, kind.mode, seed)
    if kind is Kind.CSINET_LSTM:
        return csinet_lstm_build(n_tx, n_delay, kw.get("cr_first", cr), kw["cr_rest"], kw.get("seq_len", 4), seed)
    return u2d_build(n_tx, n_delay, kind.mode, seed)


# -- joint model ----------------------------------------------------------------


def _join(bundle: CodecBundle) -> TrainedModel:
    if bundle.encoder is None:
        return bundle.decoder
    enc, dec = bundle.encoder, bundle.decoder
    inputs = dict(enc.spec.inputs)
    inputs.update({k: v for k, v in dec.spec.inputs.items() if k not in enc.spec.outputs})
    spec = ModelSpec(inputs, enc.spec.layers + dec.spec.layers, dec.spec.outputs, enc.spec.seed)
    return TrainedModel(
        spec,
        {**enc.params, **dec.params},
        {**enc.buffers, **dec.buffers},
        copy.deepcopy(dec.metadata),
        dec.precision,
    )


def _split(bundle: CodecBundle, joint: TrainedModel) -> CodecBundle:
    out = copy.copy(bundle)
    out.metadata = dict(bundle.metadata)
    if bundle.encoder is None:
        out.decoder = joint
        return out
    enc_in = list(bundle.encoder.spec.inputs)
    cws = bundle.encoder.spec.outputs
    dec_in = list(bundle.decoder.spec.inputs)
    out.encoder = extract(joint, cws, enc_in)
    out.decoder = extract(joint, bundle.decoder.spec.outputs, dec_in)
    return out


# -- representation ---------------------------------------------------------------


@dataclass
class PlaneSet:
    """Normalized planes of one link plus what is needed to rebuild complex CSI."""

    planes: np.ndarray  # (..., P, Nt, Ld) in [0, 1]
    scale: np.ndarray  # (..., P, 2)
    phase: np.ndarray | None = None  # MAG: true phases (..., Nt, Ld)
    signs: np.ndarray | None = None  # ABS: (..., 2, Nt, Ld)


def planes_for(mode: str, ad: np.ndarray) -> PlaneSet:
    """Representation planes of complex angular-delay CSI ``(..., Nt, Ld)``."""
    ad = np.asarray(ad)
    if mode == "ORG":
        rp = decompose(ad, Mode.ORG)
        return PlaneSet(rp.planes.astype(np.float32), rp.scale)
    if mode == "MAG":
        rp = decompose(ad, Mode.POLAR)
        return PlaneSet(rp.planes[..., :1, :, :].astype(np.float32), rp.scale[..., :1, :], phase=phase_of(ad))
    if mode == "ABS":
        rp = decompose(ad, Mode.ABS)
        return PlaneSet(rp.planes.astype(np.float32), rp.scale, signs=rp.signs)
    raise CodecError(f"unknown plane mode {mode!r}")


def denormalize(planes: np.ndarray, scale: np.ndarray) -> np.ndarray:
    lo = scale[..., 0][..., None, None]
    hi = scale[..., 1][..., None, None]
    return lo + planes * (hi - lo)


def to_complex(mode: str, planes: np.ndarray, ps: PlaneSet, phase: np.ndarray | None = None) -> np.ndarray:
    """Complex CSI from decoded planes using the target's scale and phase/sign side data.

    ``phase`` overrides the true phases for MAG (e.g. quantized phases).
    """
    raw = denormalize(np.asarray(planes, dtype=np.float64), ps.scale)
    if mode == "ORG":
        return raw[..., 0, :, :] + 1j * raw[..., 1, :, :]
    if mode == "MAG":
        ph = ps.phase if phase is None else phase
        return raw[..., 0, :, :] * np.exp(1j * ph)
    signed = np.where(ps.signs, -raw, raw)
    return signed[..., 0, :, :] + 1j * signed[..., 1, :, :]


# -- encode / decode --------------------------------------------------------------


def _batch(planes):
    arr = np.asarray(planes, dtype=np.float32)
    return arr, arr.ndim == 3


def codec_encode(bundle: CodecBundle, planes) -> Codeword:
    """Compress normalized downlink planes ``(B, P, Nt, Ld)`` (or one sample)."""
    if not bundle.kind.has_encoder:
        raise CodecError(f"{bundle.kind.value} has no feedback encoder")
    if bundle.kind is Kind.CSINET_LSTM:
        raise CodecError("use sequence_encode for CSINET_LSTM")
    x, single = _batch(planes)
    if single:
        x = x[None]
    if x.shape[1:] != bundle.plane_shape:
        raise CodecError(f"expected planes {bundle.plane_shape}, got {x.shape[1:]}")
    cw = predict(bundle.encoder, x)
    return Codeword(cw[0] if single else cw, bundle.cr, bundle.kind.mode)


def codec_decode(bundle: CodecBundle, codeword: Codeword | np.ndarray, side_info=None) -> np.ndarray:
    """Normalized downlink planes from a codeword (and uplink planes for DualNet)."""
    if not bundle.kind.has_encoder or bundle.kind is Kind.CSINET_LSTM:
        raise CodecError(f"codec_decode does not apply to {bundle.kind.value}")
    values = codeword.values if isinstance(codeword, Codeword) else np.asarray(codeword)
    single = values.ndim == 1
    if single:
        values = values[None]
    inputs = {"codeword": values}
    if bundle.kind.uses_uplink:
        if side_info is None:
            raise CodecError(f"{bundle.kind.value} decoding needs uplink side information")
        side = np.asarray(side_info, dtype=np.float32)
        inputs["side"] = side[None] if single else side
    out = predict(bundle.decoder, inputs)
    return out[0] if single else out


def u2d_infer(bundle: CodecBundle, uplink_planes) -> np.ndarray:
    if bundle.kind.has_encoder:
        raise CodecError(f"{bundle.kind.value} is not a U2D model")
    x, single = _batch(uplink_planes)
    out = predict(bundle.decoder, {"side": x[None] if single else x})
    return out[0] if single else out


def sequence_encode(bundle: CodecBundle, frames) -> list[np.ndarray]:
    """Codewords for ``(B, T, 2, Nt, Ld)`` sequences: one array per frame."""
    x = np.asarray(frames, dtype=np.float32)
    out = predict(bundle.encoder, {f"x{t}": x[:, t] for t in range(bundle.seq_len)})
    return [out[f"cw{t}"] for t in range(bundle.seq_len)]


def sequence_decode(bundle: CodecBundle, codewords: list[np.ndarray]) -> np.ndarray:
    out = predict(bundle.decoder, {f"cw{t}": c for t, c in enumerate(codewords)})
    return np.stack([out[f"x_hat{t}"] for t in range(bundle.seq_len)], axis=1)


# -- training ---------------------------------------------------------------------


def codec_inputs(bundle: CodecBundle, ul_ad: np.ndarray, dl_ad: np.ndarray):
    """Joint-model ``(inputs, targets)`` plus the downlink :class:`PlaneSet`."""
    mode = bundle.kind.mode
    dl = planes_for(mode, dl_ad)
    if bundle.kind is Kind.CSINET_LSTM:
        t = bundle.seq_len
        inputs = {f"x{i}": dl.planes[:, i] for i in range(t)}
        targets = {f"x_hat{i}": dl.planes[:, i] for i in range(t)}
        return inputs, targets, dl
    inputs = {}
    if bundle.kind.has_encoder:
        inputs["x"] = dl.planes
    if bundle.kind.uses_uplink:
        inputs["side"] = planes_for(mode, ul_ad).planes
    return inputs, {"x_hat": dl.planes}, dl


def init_output_bias(bundle: CodecBundle, targets: dict[str, np.ndarray]) -> None:
    """Set each sigmoid head's bias to the logit of the mean target plane value.

    Normalized magnitude planes are sparse (mean a few percent), so a head
    starting at sigmoid(0) = 0.5 spends its first updates learning the mean
    and at large learning rates overshoots into saturation. Starting at the
    mean keeps the head in its responsive range.
    """
    dec = bundle.decoder
    by_name = {l.name: l for l in dec.spec.layers}
    means: dict[str, list[np.ndarray]] = {}
    for out, y in targets.items():
        head = by_name[by_name[out].inputs[0]]
        owner = head.tie or head.name
        means.setdefault(owner, []).append(np.mean(y, axis=(0, 2, 3), dtype=np.float64))
    for owner, ms in means.items():
        m = np.clip(np.mean(ms, axis=0), 1e-4, 1 - 1e-4)
        key = f"{owner}.b"
        dec.params[key] = np.log(m / (1 - m)).astype(dec.params[key].dtype)


def train_codec(
    bundle: CodecBundle,
    train_set: tuple[np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray] | None = None,
    schedule: Schedule | None = None,
    seed: int = 0,
) -> CodecBundle:
    """Train encoder and decoder end to end on ``(uplink_ad, downlink_ad)`` arrays.

    Untrained bundles first get their output biases set from the training
    targets (see :func:`init_output_bias`).
    """
    x, y, _ = codec_inputs(bundle, *train_set)
    if not bundle.decoder.metadata.get("epochs"):
        bundle = copy.copy(bundle)
        bundle.decoder = copy.deepcopy(bundle.decoder)
        init_output_bias(bundle, y)
    val = None
    if val_set is not None:
        vx, vy, _ = codec_inputs(bundle, *val_set)
        val = (vx, vy)
    joint = train(_join(bundle), (x, y), val, schedule, seed)
    out = _split(bundle, joint)
    out.metadata.update({k: joint.metadata[k] for k in ("epochs", "best_epoch", "final_loss", "seed")})
    return out


def run_joint(bundle: CodecBundle, ul_ad: np.ndarray, dl_ad: np.ndarray) -> tuple[np.ndarray, PlaneSet]:
    """Decoded downlink planes for paired CSI; returns ``(planes, target PlaneSet)``.

    For CSINET_LSTM the planes are ``(B, T, 2, Nt, Ld)``.
    """
    x, _, dl = codec_inputs(bundle, ul_ad, dl_ad)
    if bundle.kind is Kind.CSINET_LSTM:
        cws = sequence_encode(bundle, dl.planes)
        return sequence_decode(bundle, cws), dl
    if not bundle.kind.has_encoder:
        return u2d_infer(bundle, x["side"]), dl
    cw = codec_encode(bundle, x["x"])
    return codec_decode(bundle, cw, x.get("side")), dl


def reconstruct(bundle: CodecBundle, ul_ad: np.ndarray, dl_ad: np.ndarray, phase: np.ndarray | None = None) -> np.ndarray:
    """Complex downlink estimate; MAG/ABS kinds use the true phases/signs unless ``phase`` is given."""
    planes, dl = run_joint(bundle, ul_ad, dl_ad)
    return to_complex(bundle.kind.mode, planes, dl, phase)


# -- persistence ------------------------------------------------------------------


def save_bundle(bundle: CodecBundle, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "manifest.json").write_text(json.dumps(bundle.manifest(), indent=2, sort_keys=True))
    save_model(bundle.decoder, d / "decoder.ckpt")
    if bundle.encoder is not None:
        save_model(bundle.encoder, d / "encoder.ckpt")


def load_bundle(directory: str | Path) -> CodecBundle:
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    enc_path = d / "encoder.ckpt"
    return CodecBundle(
        kind=Kind(man["kind"]),
        encoder=load_model(enc_path) if enc_path.exists() else None,
        decoder=load_model(d / "decoder.ckpt"),
        n_tx=man["n_tx"],
        n_delay=man["n_delay"],
        cr=man["cr"],
        cr_rest=man["cr_rest"],
        seq_len=man["seq_len"],
        metadata=man.get("metadata", {}),
    )
