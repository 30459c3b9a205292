#!/usr/bin/env python3
"""Command-line entry points for the probabilistic seizure detection pipeline.

  seizure_cli.py synth --seed 7 --seizures 4 --hours 2
  seizure_cli.py label --recording runs/patient.json
  seizure_cli.py train --manifest runs/patient_manifest.jsonl --epochs 20
  seizure_cli.py detect --recording runs/patient.json --checkpoint runs/checkpoints/model.json
  seizure_cli.py eval --recording runs/patient.json --trace runs/trace.csv
  seizure_cli.py eval --recording runs/patient.json --losocv --preset tiny
  seizure_cli.py export-trace --trace runs/trace.csv --start-s 100 --end-s 160 --out runs/window.csv

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
import argparse
import dataclasses
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from analysis.trace_plot import plot_trace
from detector.detector import DetectorConfig
from detector.stream import (
    PipPredictor, alarm_times, predict_pips, read_trace, run_detector, warmup_ticks, write_alarm_log,
    write_trace,
)
from evaluation.losocv import PatientData, losocv
from evaluation.metrics import (
    count_false_alarms, interictal_periods, pip_error, rpip_error, score_seizure, total_hours,
)
from evaluation.report import EvalReport, FoldResult, aggregate, print_summary, write_report
from features.labeling import build_manifest, load_feature_set, read_manifest, write_manifest
from features.spectral import SpectralConfig
from model.checkpoint_manager import CheckpointManager
from model.network import ModelConfig, model_size
from model.trainer import TrainConfig, train
from recordings.signal_io import OverlapPolicy, load_recording, save_recording
from recordings.synth import SynthConfig, evenly_spaced_schedule, generate
from shared.config import (
    BATCH_SIZE, DECISION_THR, DEFAULT_SEED, DETECT_RATE, EPOCHS, FOLD_WORKERS, HORIZON_S, LAMBDAS,
    LEARNING_RATE, LOCKOUT_S, MODEL_PRESET, NFFT, OUTPUT_DIR, POSTICTAL_S, SCALES, SEGMENT_S,
    SYNTH_CHANNELS, SYNTH_POSTICTAL_S, SYNTH_RAMP_S, SYNTH_RATE_HZ, SYNTH_SEIZURE_S, WINDOW_FN,
    load_toml, merge_settings,
)
from shared.console import log, set_level
from shared.errors import ConfigError, DataError
from shared.manifest import RunManifest

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

PRESETS = ('tiny', 'desk', 'full')


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        log('CLI', message, level='error')
        raise SystemExit(EXIT_USAGE)


def float_list(text):
    try:
        return tuple(float(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def int_list(text):
    try:
        return tuple(int(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


# ---------------------------------------------------------------- settings

def load_run_config(path):
    if not path:
        return {}
    try:
        return load_toml(path)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}")


def common_settings(args, run_cfg):
    top = {k: v for k, v in run_cfg.items() if not isinstance(v, dict)}
    return merge_settings(
        {'seed': DEFAULT_SEED, 'out_dir': OUTPUT_DIR, 'segment_s': SEGMENT_S},
        top,
        {'seed': args.seed, 'out_dir': args.out_dir, 'segment_s': getattr(args, 'segment_s', None)},
    )


def spectral_settings(args, run_cfg):
    s = merge_settings(
        {'scales': SCALES, 'nfft': NFFT, 'window_fn': WINDOW_FN},
        run_cfg.get('spectral'),
        {'scales': getattr(args, 'scales', None)},
    )
    return SpectralConfig(tuple(int(v) for v in s['scales']), int(s['nfft']), str(s['window_fn']))


def detector_settings(args, run_cfg):
    s = merge_settings(
        {'rate': DETECT_RATE, 'thr': DECISION_THR, 'lambdas': LAMBDAS, 'horizon_s': HORIZON_S,
         'lockout_s': LOCKOUT_S},
        run_cfg.get('detector'),
        {'rate': args.rate, 'thr': args.thr, 'lambdas': args.lambdas, 'lockout_s': args.lockout_s},
    )
    return DetectorConfig(int(s['rate']), float(s['thr']), tuple(float(v) for v in s['lambdas']),
                          float(s['horizon_s']), float(s['lockout_s']))


def model_settings(args, run_cfg, channels, spectral_cfg):
    s = merge_settings(
        {'preset': MODEL_PRESET, 'fc_width': None, 'width_multiplier': None},
        run_cfg.get('model'),
        {'preset': args.preset, 'fc_width': args.fc_width, 'width_multiplier': args.width_multiplier},
    )
    if s['preset'] not in PRESETS:
        raise ConfigError(f"unknown model preset '{s['preset']}' (choose from {', '.join(PRESETS)})")
    kwargs = dict(channels=channels, scales=spectral_cfg.scales, kept_bins=spectral_cfg.kept_bins)
    if s['preset'] == 'tiny':
        cfg = ModelConfig.tiny(**kwargs)
    elif s['preset'] == 'desk':
        cfg = ModelConfig.desk(**kwargs)
    else:
        cfg = ModelConfig(**kwargs)
    if s['fc_width'] is not None:
        cfg = dataclasses.replace(cfg, fc_width=int(s['fc_width']))
    if s['width_multiplier'] is not None:
        cfg = dataclasses.replace(cfg, channel_width_multiplier=float(s['width_multiplier']))
    return cfg


def train_settings(args, run_cfg, seed):
    s = merge_settings(
        {'epochs': EPOCHS, 'batch_size': BATCH_SIZE, 'lr': LEARNING_RATE, 'balance': True},
        run_cfg.get('train'),
        {'epochs': args.epochs, 'batch_size': args.batch_size, 'lr': args.lr},
    )
    return TrainConfig(epochs=int(s['epochs']), batch_size=int(s['batch_size']), lr=float(s['lr']),
                       seed=seed, balance=bool(s['balance']))


def overlap_policy(name, postictal_s):
    policy = OverlapPolicy.swec() if name == 'swec' else OverlapPolicy.chb()
    if postictal_s is not None:
        policy = dataclasses.replace(policy, postictal_s=float(postictal_s))
    return policy


def recording_id(path):
    return os.path.splitext(os.path.basename(path))[0]


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    run_cfg = load_run_config(args.config)
    common = common_settings(args, run_cfg)
    s = merge_settings(
        {'seizures': None, 'hours': None, 'channels': SYNTH_CHANNELS, 'rate_hz': SYNTH_RATE_HZ,
         'seizure_s': SYNTH_SEIZURE_S, 'postictal_s': SYNTH_POSTICTAL_S, 'ramp_s': SYNTH_RAMP_S,
         'ictal_gain': 4.0, 'name': 'patient'},
        run_cfg.get('synth'),
        {'seizures': args.seizures, 'hours': args.hours, 'channels': args.channels,
         'rate_hz': args.rate_hz, 'seizure_s': args.seizure_s, 'postictal_s': args.postictal_s,
         'ramp_s': args.ramp_s,
         'name': args.name},
    )
    if s['seizures'] is None or s['hours'] is None:
        args.parser.error("--seizures and --hours are required (flag or [synth] section)")

    schedule, duration = evenly_spaced_schedule(
        int(s['seizures']), float(s['hours']) * 3600.0, float(s['seizure_s']),
        float(s['postictal_s']), common['seed'])
    cfg = SynthConfig(seed=common['seed'], channels=int(s['channels']), rate_hz=float(s['rate_hz']),
                      duration_s=duration, ramp_s=float(s['ramp_s']), ictal_gain=float(s['ictal_gain']),
                      seizures=schedule)
    rec = generate(cfg)

    path = save_recording(rec, os.path.join(common['out_dir'], f"{s['name']}.json"))
    log('SYNTH', f"{rec.channels} channels, {rec.duration_s / 3600:.2f} h, {len(rec.annotations)} seizures -> {path}")
    RunManifest('synth', {**s, 'duration_s': duration, 'schedule': schedule}, common['seed'],
                outputs=[path]).write(common['out_dir'])
    return EXIT_OK


def cmd_label(args):
    run_cfg = load_run_config(args.config)
    common = common_settings(args, run_cfg)
    rec = load_recording(args.recording)
    policy = overlap_policy(args.policy, args.postictal_s)
    rid = recording_id(args.recording)

    records = build_manifest(rid, rec, common['segment_s'], policy)
    for record in records:
        record["recording_path"] = os.path.abspath(args.recording)
    path = args.out or os.path.join(common['out_dir'], f"{rid}_manifest.jsonl")
    write_manifest(records, path)

    counts = {}
    for record in records:
        counts[record["tag"]] = counts.get(record["tag"], 0) + 1
    log('LABEL', f"{len(records)} segments {counts} -> {path}")
    RunManifest('label', {'segment_s': common['segment_s'], **dataclasses.asdict(policy)}, common['seed'],
                inputs=[args.recording], outputs=[path]).write(common['out_dir'])
    return EXIT_OK


def cmd_train(args):
    run_cfg = load_run_config(args.config)
    common = common_settings(args, run_cfg)
    records = read_manifest(args.manifest)
    if not records:
        raise DataError(f"manifest {args.manifest} is empty")

    paths = {r["recording_id"]: r["recording_path"] for r in records if "recording_path" in r}
    for path in args.recording or []:
        paths[recording_id(path)] = path
    first = records[0]["recording_id"]
    if first not in paths:
        raise DataError(f"no recording path for '{first}'; pass --recording")
    channels = load_recording(paths[first]).channels

    spectral_cfg = spectral_settings(args, run_cfg)
    model_cfg = model_settings(args, run_cfg, channels, spectral_cfg)
    train_cfg = train_settings(args, run_cfg, common['seed'])
    log('TRAIN', f"model {model_size(model_cfg)['parameters']} parameters, {train_cfg.epochs} epochs, seed {train_cfg.seed}")

    dataset = load_feature_set(records, paths, spectral_cfg)
    history_path = os.path.join(common['out_dir'], 'train_history.csv')
    result = train(dataset, model_cfg, train_cfg, history_path=history_path)

    manager = CheckpointManager(os.path.join(common['out_dir'], 'checkpoints'))
    extra = {
        "spectral": {"scales": list(spectral_cfg.scales), "nfft": spectral_cfg.nfft,
                     "window_fn": spectral_cfg.window_fn},
        "segment_s": float(records[0].get("len_s", common['segment_s'])),
        "best_epoch": result.best_epoch,
    }
    header = manager.save_checkpoint(args.name, result.params, model_cfg, train_cfg.seed, extra)
    log('TRAIN', f"checkpoint -> {header}")
    RunManifest('train', {'model': model_cfg.to_dict(), 'train': dataclasses.asdict(train_cfg), **extra},
                common['seed'], inputs=[args.manifest] + sorted(paths.values()),
                outputs=[header, history_path]).write(common['out_dir'])
    return EXIT_OK


def load_predictor(checkpoint_path):
    directory, filename = os.path.split(os.path.abspath(checkpoint_path))
    name = filename[:-len('.json')] if filename.endswith('.json') else filename
    params, model_cfg, header = CheckpointManager(directory).load_checkpoint(name)
    extra = header.get("extra", {})
    spectral = extra.get("spectral", {})
    spectral_cfg = SpectralConfig(tuple(spectral.get("scales", model_cfg.scales)),
                                  int(spectral.get("nfft", NFFT)), spectral.get("window_fn", WINDOW_FN))
    if spectral_cfg.kept_bins != model_cfg.kept_bins or spectral_cfg.scales != tuple(model_cfg.scales):
        raise DataError(f"checkpoint {checkpoint_path}: spectral settings disagree with the model config")
    return PipPredictor(params, model_cfg, spectral_cfg), extra


def cmd_detect(args):
    run_cfg = load_run_config(args.config)
    common = common_settings(args, run_cfg)
    det_cfg = detector_settings(args, run_cfg)
    predictor, extra = load_predictor(args.checkpoint)
    len_s = args.segment_s if args.segment_s is not None else extra.get("segment_s", common['segment_s'])

    rec = load_recording(args.recording)
    if rec.channels != predictor.model_cfg.channels:
        raise DataError(f"recording has {rec.channels} channels, checkpoint expects {predictor.model_cfg.channels}")

    times, pips = predict_pips(rec, predictor, det_cfg.rate, len_s)
    trace, alarms = run_detector(times, pips, det_cfg)
    trace_path = write_trace(trace, os.path.join(common['out_dir'], 'trace.csv'))
    alarm_path = write_alarm_log(alarms, os.path.join(common['out_dir'], 'alarms.json'),
                                 {"recording": recording_id(args.recording), "thr": det_cfg.thr,
                                  "rate": det_cfg.rate})
    log('DETECT', f"{len(trace)} ticks after {warmup_ticks(det_cfg.rate, len_s)} warm-up, {len(alarms)} alarm(s)")
    RunManifest('detect', {**dataclasses.asdict(det_cfg), 'segment_s': len_s}, common['seed'],
                inputs=[args.recording, args.checkpoint], outputs=[trace_path, alarm_path]).write(common['out_dir'])
    return EXIT_OK


def evaluate_trace(trace, rec, len_s, postictal_s, rate, patient):
    periods = interictal_periods(rec, len_s, postictal_s)
    hours = total_hours(periods)
    n_false = count_false_alarms(alarm_times(trace), periods)
    folds = []
    for k, span in enumerate(rec.annotations):
        score = score_seizure(trace, span, len_s, rate)
        folds.append(FoldResult(k, k, span.onset_s, score.detected_in_crossing, score.detected,
                                score.latency_s, rpip_error(trace, span, len_s), pip_error(trace, span, len_s),
                                n_false, hours))
    report = EvalReport.from_folds(patient, folds)
    report.n_false = n_false
    report.interictal_hours = hours
    report.fdr_per_h = [n_false / hours if hours > 0 else 0.0]
    return report, folds


def cmd_eval(args):
    run_cfg = load_run_config(args.config)
    common = common_settings(args, run_cfg)
    det_cfg = detector_settings(args, run_cfg)
    ev = merge_settings(
        {'patient': recording_id(args.recording), 'postictal_s': POSTICTAL_S, 'workers': FOLD_WORKERS},
        run_cfg.get('evaluation'),
        {'patient': args.patient, 'postictal_s': args.postictal_s, 'workers': args.workers},
    )
    rec = load_recording(args.recording)
    patient = str(ev['patient'])
    postictal_s = float(ev['postictal_s'])

    if args.losocv:
        policy = overlap_policy(args.policy, postictal_s)
        spectral_cfg = spectral_settings(args, run_cfg)
        model_cfg = model_settings(args, run_cfg, rec.channels, spectral_cfg)
        train_cfg = train_settings(args, run_cfg, common['seed'])
        result = losocv(PatientData(patient, rec, common['segment_s'], policy), spectral_cfg, model_cfg,
                        train_cfg, det_cfg, int(ev['workers']), out_dir=common['out_dir'])
        row, folds = result.summary, result.folds
        config = {'detector': dataclasses.asdict(det_cfg), 'model': model_cfg.to_dict(),
                  'train': dataclasses.asdict(train_cfg), 'policy': dataclasses.asdict(policy)}
        inputs = [args.recording]
    else:
        if not args.trace:
            args.parser.error("--trace is required unless --losocv is given")
        report, folds = evaluate_trace(read_trace(args.trace), rec, common['segment_s'], postictal_s,
                                       det_cfg.rate, patient)
        row = aggregate(report)
        config = {'segment_s': common['segment_s'], 'postictal_s': postictal_s, 'rate': det_cfg.rate}
        inputs = [args.recording, args.trace]

    path = write_report(os.path.join(common['out_dir'], 'report.json'), row, folds)
    print_summary(row, folds)
    log('EVAL', f"report -> {path}")
    RunManifest('eval', config, common['seed'], inputs=inputs, outputs=[path]).write(common['out_dir'])
    return EXIT_OK


def cmd_export_trace(args):
    run_cfg = load_run_config(args.config)
    common = common_settings(args, run_cfg)
    trace = read_trace(args.trace)
    start = args.start_s if args.start_s is not None else float(trace["t_s"].min())
    end = args.end_s if args.end_s is not None else float(trace["t_s"].max())
    if end < start:
        args.parser.error("--end-s must not precede --start-s")
    window = trace[(trace["t_s"] >= start) & (trace["t_s"] <= end)].reset_index(drop=True)
    if window.empty:
        raise DataError(f"trace has no rows between {start}s and {end}s")
    outputs = [write_trace(window, args.out)]

    if args.png:
        onsets = []
        if args.recording:
            onsets = [s.onset_s for s in load_recording(args.recording).annotations if start <= s.onset_s <= end]
        outputs.append(plot_trace(window, args.png, onsets, args.thr))

    log('EXPORT', f"{len(window)} rows -> {args.out}")
    RunManifest('export-trace', {'start_s': start, 'end_s': end}, common['seed'],
                inputs=[args.trace], outputs=outputs).write(common['out_dir'])
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='TOML run file')
    common.add_argument('--seed', type=int, default=None)
    common.add_argument('--out-dir', default=None)
    common.add_argument('--log-level', default=None, choices=['debug', 'info', 'warning', 'error'])

    segment = argparse.ArgumentParser(add_help=False)
    segment.add_argument('--segment-s', type=float, default=None)

    detect = argparse.ArgumentParser(add_help=False)
    detect.add_argument('--rate', type=int, default=None, help='decisions per second')
    detect.add_argument('--thr', type=float, default=None, help='decision threshold')
    detect.add_argument('--lambdas', type=float_list, default=None, help='four comma-separated weights')
    detect.add_argument('--lockout-s', type=float, default=None)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument('--epochs', type=int, default=None)
    model.add_argument('--batch-size', type=int, default=None)
    model.add_argument('--lr', type=float, default=None)
    model.add_argument('--fc-width', type=int, default=None)
    model.add_argument('--width-multiplier', type=float, default=None)
    model.add_argument('--scales', type=int_list, default=None, help='e.g. 1,2,3')
    model.add_argument('--preset', choices=PRESETS, default=None)

    policy = argparse.ArgumentParser(add_help=False)
    policy.add_argument('--policy', choices=['chb', 'swec'], default='chb')
    policy.add_argument('--postictal-s', type=float, default=None)

    parser = CliParser(prog='seizure_cli.py', description='Probabilistic seizure detection pipeline')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=CliParser)

    p = sub.add_parser('synth', parents=[common], help='generate a synthetic patient recording')
    p.add_argument('--seizures', type=int, default=None)
    p.add_argument('--hours', type=float, default=None, help='interictal hours')
    p.add_argument('--channels', type=int, default=None)
    p.add_argument('--rate-hz', type=float, default=None)
    p.add_argument('--seizure-s', type=float, default=None)
    p.add_argument('--ramp-s', type=float, default=None, help='ictal amplitude ramp')
    p.add_argument('--postictal-s', type=float, default=None)
    p.add_argument('--name', default=None)
    p.set_defaults(handler=cmd_synth, parser=p)

    p = sub.add_parser('label', parents=[common, segment, policy], help='segment and label a recording')
    p.add_argument('--recording', required=True)
    p.add_argument('--out', default=None, help='manifest path (JSON lines)')
    p.set_defaults(handler=cmd_label, parser=p)

    p = sub.add_parser('train', parents=[common, model], help='train a patient-specific model')
    p.add_argument('--manifest', required=True)
    p.add_argument('--recording', action='append', help='recording header, repeatable')
    p.add_argument('--name', default='model', help='checkpoint name')
    p.set_defaults(handler=cmd_train, parser=p)

    p = sub.add_parser('detect', parents=[common, segment, detect], help='stream the decision rule over a recording')
    p.add_argument('--recording', required=True)
    p.add_argument('--checkpoint', required=True, help='checkpoint header (.json)')
    p.set_defaults(handler=cmd_detect, parser=p)

    p = sub.add_parser('eval', parents=[common, segment, detect, model, policy], help='score traces or run LOSOCV')
    p.add_argument('--recording', required=True)
    p.add_argument('--trace', default=None)
    p.add_argument('--losocv', action='store_true')
    p.add_argument('--patient', default=None)
    p.add_argument('--workers', type=int, default=None)
    p.set_defaults(handler=cmd_eval, parser=p)

    p = sub.add_parser('export-trace', parents=[common], help='cut a time window out of a trace')
    p.add_argument('--trace', required=True)
    p.add_argument('--start-s', type=float, default=None)
    p.add_argument('--end-s', type=float, default=None)
    p.add_argument('--out', required=True)
    p.add_argument('--png', default=None)
    p.add_argument('--recording', default=None, help='recording header for onset markers')
    p.add_argument('--thr', type=float, default=None)
    p.set_defaults(handler=cmd_export_trace, parser=p)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    try:
        return args.handler(args)
    except ConfigError as e:
        log('CLI', str(e), level='error')
        return EXIT_USAGE
    except (DataError, OSError) as e:
        log('CLI', str(e), level='error')
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
