"""Command-line entry point: sweep, convergence, calibrate, replay."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .txchain import read_waveform, write_waveform

log = logging.getLogger("cvqkd_ukf")


def _flag(section: str, name: str) -> str:
    return f"--{section}-{name.replace('_', '-')}"


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides (same keys as the INI file)")
    for section, obj in ex.config_sections(ex.ExperimentConfig()).items():
        for f in ex._scalar_fields(obj):
            group.add_argument(
                _flag(section, f.name),
                dest=f"cfg__{section}__{f.name}",
                metavar="VALUE",
                help=f"[{section}] {f.name} (default {ex._unparse(getattr(obj, f.name))})",
            )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with [frame] [channel] [lasers] [ukf] [experiment]")
    common.add_argument("--seed", type=int, help="seed_base for all frames")
    common.add_argument("--frames", type=int, help="frames per sweep point")
    common.add_argument("--out", type=Path, help="output path")
    common.add_argument("--full-scale", action="store_true", help="use full_scale_frames frames per point")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")
    _add_override_flags(common)

    parser = argparse.ArgumentParser(prog="cvqkd-ukf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", parents=[common], help="pilot-bandwidth sweep to CSV")
    sw.add_argument("--dump-waveform", type=Path, help="also write the first received frame")
    sw.add_argument("--dump-config", action="store_true", help="print the effective INI and exit")

    cv = sub.add_parser("convergence", parents=[common], help="UKF convergence vs linewidth guess")
    cv.add_argument("--guesses", type=float, nargs="+", help="linewidth guesses in Hz")
    cv.add_argument("--stride", type=int, help="write every n-th symbol")

    sub.add_parser("calibrate", parents=[common], help="noise-only records, PSD CSV and JSON report")

    rp = sub.add_parser("replay", parents=[common], help="carrier recovery on a waveform file")
    rp.add_argument("waveform", type=Path)
    rp.add_argument("--bandwidth", type=float, help="pilot filter bandwidth in Hz")
    return parser


def resolve_config(args) -> ex.ExperimentConfig:
    config = ex.ExperimentConfig()
    if args.config:
        config = ex.load_config(args.config, config)
    overrides: dict[str, dict[str, str]] = {}
    for key, value in vars(args).items():
        if key.startswith("cfg__") and value is not None:
            _, section, name = key.split("__")
            overrides.setdefault(section, {})[name] = value
    if overrides:
        config = ex.apply_overrides(config, overrides)
    changes = {}
    if args.seed is not None:
        changes["seed_base"] = args.seed
    if args.full_scale:
        changes["frames_per_point"] = config.full_scale_frames
    if args.frames is not None:
        changes["frames_per_point"] = args.frames
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.out is not None:
        changes["output_path"] = str(args.out)
    return dataclasses.replace(config, **changes) if changes else config


def _write(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def cmd_sweep(args, config):
    if args.dump_config:
        sys.stdout.write(ex.config_to_ini(config))
        return
    if args.dump_waveform:
        _, _, record, _ = ex.simulate_frame(config.frame_config, config.channel, config.seed_base)
        write_waveform(args.dump_waveform, record.waveform)
    rows = ex.run_sweep(config)
    _write(config.output_path, ex.sweep_csv(rows))
    for r in rows:
        log.info("%10.4g Hz %5.1f dB %-9s e=%+.5f K=%+.4f failed=%d",
                 r.bandwidth_hz, r.snr_pilot_db, r.method, r.e_mean, r.key_rate, r.frames_failed)


def cmd_convergence(args, config):
    traces = ex.run_convergence(config, args.guesses)
    out = args.out or Path("convergence.csv")
    _write(out, ex.convergence_csv(traces, args.stride or config.convergence_stride))
    for tr in traces:
        log.info("guess %8.4g Hz converged_at=%s final rms=%.4f rad", tr.guess, tr.converged_at, tr.rms())


def cmd_calibrate(args, config):
    report = ex.run_calibration(config)
    out = Path(args.out or "calibration.csv")
    rows = zip(report.pop("freqs_hz"), report.pop("psd_vacuum"), report.pop("psd_vacuum_electronic"))
    _write(out, ex._csv(("freq_hz", "psd_vacuum", "psd_vacuum_electronic"),
                        [tuple(float(v) for v in r) for r in rows]))
    _write(out.with_suffix(".json"), json.dumps(report, indent=2, sort_keys=True) + "\n")


def cmd_replay(args, config):
    wave = read_waveform(args.waveform)
    text = ex.replay(wave, config, args.bandwidth)
    _write(args.out or Path("replay.csv"), text)


COMMANDS = {
    "sweep": cmd_sweep,
    "convergence": cmd_convergence,
    "calibrate": cmd_calibrate,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = resolve_config(args)
        COMMANDS[args.command](args, config)
    except Exception as exc:  # reported as one parseable line
        print(f"error: command={args.command} type={type(exc).__name__} message={json.dumps(str(exc))}",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
