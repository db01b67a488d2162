"""Command-line entry point: ``fddcsi <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import codecs, correlation, cs, experiment
from .channel import ChannelConfig
from .dataset import build_dataset, load_dataset
from .metrics import format_db, nmse_db
from .nn import Schedule
from .transforms import ad_transform

log = logging.getLogger("fddcsi")


def _ratio(text: str) -> float:
    return experiment._parse_ratio(text)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _channel_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dl-center", type=float, default=5.3e9, help="downlink carrier (Hz)")
    p.add_argument("--band-gap", type=float, default=200e6, help="uplink/downlink gap (Hz)")
    p.add_argument("--bandwidth", type=float, default=20e6, help="Hz")
    p.add_argument("--subcarriers", type=int, default=256)
    p.add_argument("--antennas", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)


def _channel(args) -> ChannelConfig:
    return ChannelConfig.fdd(
        dl_center=args.dl_center,
        band_gap=args.band_gap,
        bandwidth=args.bandwidth,
        n_subcarriers=args.subcarriers,
        n_tx_antennas=args.antennas,
        seed=args.seed,
    )


def _ad_pairs(path, n_delay):
    ds = load_dataset(path)
    csi = np.asarray(ds.csi)
    ul = ad_transform(csi[:, :, 0], n_delay).astype(np.complex64)
    dl = ad_transform(csi[:, :, 1], n_delay).astype(np.complex64)
    if ds.header.temporal_len == 1:
        ul, dl = ul[:, 0], dl[:, 0]
    return ul, dl


def cmd_gen(args) -> int:
    s = build_dataset(_channel(args), args.n, args.frames, args.out, args.doppler, args.dt)
    print(json.dumps({"path": str(s.path), "samples": s.n_samples, "bytes": s.n_bytes, "sha256": s.checksum}))
    return 0


def cmd_corr(args) -> int:
    reports = correlation.correlation_reports(args.dataset, n_delay=args.delay_taps, domain=args.domain)
    text = correlation.reports_to_csv(reports.values() if isinstance(reports, dict) else reports)
    _emit(text, args.out)
    return 0


def cmd_sweep(args) -> int:
    base = _channel(args)
    table = correlation.sweep_bandgap_bandwidth(_floats(args.gaps), _floats(args.bandwidths), base, args.n, args.delay_taps)
    _emit(table.to_csv(), args.out)
    return 0


def cmd_train(args) -> int:
    kind = codecs.Kind(args.kind)
    train = _ad_pairs(args.train, args.delay_taps)
    val = _ad_pairs(args.val, args.delay_taps) if args.val else None
    n_tx = train[1].shape[-2]
    if kind is codecs.Kind.CSINET_LSTM:
        seq_len = train[1].shape[1]
        bundle = codecs.csinet_lstm_build(n_tx, args.delay_taps, args.cr, args.cr / args.rest_ratio, seq_len, args.seed)
    else:
        bundle = codecs.build(kind, n_tx, args.delay_taps, args.cr if kind.has_encoder else None, seed=args.seed)
    sched = Schedule(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, patience=args.patience)
    bundle = codecs.train_codec(bundle, train, val, sched, seed=args.seed)
    codecs.save_bundle(bundle, args.out)
    print(json.dumps({"bundle": args.out, **{k: bundle.metadata.get(k) for k in ("epochs", "best_epoch", "final_loss")}}))
    return 0


def cmd_eval(args) -> int:
    bundle = codecs.load_bundle(args.bundle)
    ul, dl = _ad_pairs(args.dataset, bundle.n_delay)
    m = experiment.evaluate_bundle(bundle, ul, dl)
    print(json.dumps({k: format_db(v) if k.startswith("nmse") and v is not None else v for k, v in m.items()}))
    return 0


def cmd_experiment(args) -> int:
    kw = {}
    if args.config:
        cfg = experiment.ExperimentConfig.load(args.config)
    else:
        cfg = experiment.ExperimentConfig()
    for key in ("scenario", "crs", "kinds", "cells", "n_train", "n_val", "n_test", "seed", "out_dir", "epochs", "band_gap", "bandwidth"):
        v = getattr(args, key)
        if v is not None:
            kw[key] = str(v)
    if args.plot:
        kw["plot"] = "true"
    if kw:
        cfg = experiment.ExperimentConfig.from_strings({**_as_strings(cfg), **kw})
    result = experiment.run_experiment(cfg)
    print(experiment.records_csv(result.records), end="")
    for d in result.divergences:
        print(f"diverged: {d}", file=sys.stderr)
    return 0


def _as_strings(cfg) -> dict[str, str]:
    return dict(
        (k.strip(), v.strip()) for k, v in (line.split("=", 1) for line in cfg.to_text().splitlines() if line.strip())
    )


def cmd_omp(args) -> int:
    ul, dl = _ad_pairs(args.dataset, args.delay_taps)
    if dl.ndim == 4:
        dl = dl[:, 0]
    ens = cs.MeasurementEnsemble.for_ratio(args.cr, dl.shape[-2], args.delay_taps, seed=args.seed)
    rec = cs.cs_roundtrip(dl, ens, args.sparsity, args.tol)
    print(json.dumps({"cr": args.cr, "measurements": ens.n_measurements, "nmse_db": format_db(nmse_db(dl, rec))}))
    return 0


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        print(text, end="")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fddcsi", description="FDD CSI simulation, correlation analysis and feedback codecs")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="simulate an uplink/downlink CSI dataset")
    _channel_args(p)
    p.add_argument("-n", type=int, default=1000, help="number of independent draws")
    p.add_argument("--frames", type=int, default=1, help="frames per draw (temporal mode)")
    p.add_argument("--doppler", type=float, default=0.0, help="max Doppler (Hz)")
    p.add_argument("--dt", type=float, default=1e-3, help="frame interval (s)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("corr", help="per-representation correlation report of a dataset")
    p.add_argument("dataset")
    p.add_argument("--delay-taps", type=int, default=32)
    p.add_argument("--domain", choices=("delay", "frequency"), default="delay")
    p.add_argument("--out")
    p.set_defaults(func=cmd_corr)

    p = sub.add_parser("sweep", help="magnitude correlation over band gaps and bandwidths")
    _channel_args(p)
    p.add_argument("--gaps", default="50e6,100e6,200e6,400e6,800e6")
    p.add_argument("--bandwidths", default="10e6,20e6,40e6")
    p.add_argument("-n", type=int, default=500, help="pairs per grid point")
    p.add_argument("--delay-taps", type=int, default=32)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train a codec on generated datasets")
    p.add_argument("--kind", required=True, choices=[k.value for k in codecs.Kind])
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--cr", type=_ratio, default=1 / 16)
    p.add_argument("--rest-ratio", type=float, default=4.0, help="CSINET_LSTM: cr_first / cr_rest")
    p.add_argument("--delay-taps", type=int, default=32)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="bundle directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained bundle on a dataset")
    p.add_argument("bundle")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="train and evaluate codecs over protocol cells")
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--scenario", choices=sorted(experiment.SCENARIOS))
    p.add_argument("--crs", help="comma-separated ratios, e.g. 1/8,1/16")
    p.add_argument("--kinds", help="comma-separated codec kinds")
    p.add_argument("--cells", help="baseline,zero_gap,double_bw or <gap>x<bw>")
    p.add_argument("--band-gap", dest="band_gap", type=float)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-val", dest="n_val", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--plot", action="store_true", help="render nmse.png (needs matplotlib)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("omp", help="compressive-sensing baseline on a dataset's downlink")
    p.add_argument("dataset")
    p.add_argument("--cr", type=_ratio, default=1 / 4)
    p.add_argument("--sparsity", type=int, default=48)
    p.add_argument("--tol", type=float, default=cs.DEFAULT_TOL)
    p.add_argument("--delay-taps", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_omp)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
