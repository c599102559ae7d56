"""Batch command-line surface.

Subcommands: melspec, gen, estimate, align, eval, train. All outputs are
written atomically (temp file + rename). Exit codes: 0 success, 1 usage
error, 2 data error. The environment variable SYNCFORGE_SEED overrides
the config-file seed; an explicit --seed flag wins over both.
"""

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import dsp, formats, frontend, metrics, sync, synth, training

SEED_ENV = "SYNCFORGE_SEED"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _write_text(path, text):
    formats._atomic_write(path, text.encode())


def _dump_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        _write_text(path, text)


def _seed_from_env(seed):
    env = os.environ.get(SEED_ENV)
    return int(env) if env is not None else seed


def _load_config_file(path, defaults, what):
    values = dict(defaults)
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(values)
        if unknown:
            raise ValueError(f"unknown {what} config keys: {sorted(unknown)}")
        values.update(loaded)
    return values


def _train_config(args):
    defaults = {f: getattr(training.TrainConfig, f)
                for f in training.TrainConfig.__dataclass_fields__}
    values = _load_config_file(getattr(args, "config", None), defaults, "training")
    values["seed"] = _seed_from_env(values["seed"])
    for name in ("radius", "temperature", "learning_rate", "warmup_steps",
                 "total_steps", "batch_size", "seed"):
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return training.TrainConfig(**values).validate()


# ---------------------------------------------------------------------------
# subcommands

def cmd_melspec(args):
    wave = formats.read_wav(args.input)
    mel = dsp.mel_spectrogram(wave, window=args.window, hop=args.hop,
                              n_mels=args.mels)
    formats.write_fmat(args.output, mel)
    return 0


_GEN_DEFAULTS = {
    "count": 8,
    "kind": "harmonic",
    "duration_s": 1.5,
    "offset_range_ms": [-200, 200],
    "model_offset_ms": 0,
    "noise_snr_db": None,
    "seed": 0,
    "channels": 32,
    "latent_dim": 5,
}


def cmd_gen(args):
    cfg = _load_config_file(args.scenario, _GEN_DEFAULTS, "scenario")
    cfg["seed"] = _seed_from_env(cfg["seed"])
    if args.seed is not None:
        cfg["seed"] = args.seed
    lo, hi = cfg["offset_range_ms"]
    if lo % 10 or hi % 10 or lo > hi:
        raise ValueError("offset_range_ms must be an ordered pair on the 10 ms grid")
    os.makedirs(args.output, exist_ok=True)
    rng = np.random.default_rng((cfg["seed"] & 0x7FFFFFFF, 97))
    offsets = rng.integers(lo // 10, hi // 10 + 1, size=cfg["count"]) * 10
    rows = []
    pairs = []
    for i, o_d in enumerate(offsets):
        sample_id = f"s{i:04d}"
        sc = synth.AsyncScenario(kind=cfg["kind"], duration_s=cfg["duration_s"],
                                 data_offset_ms=int(o_d),
                                 model_offset_ms=cfg["model_offset_ms"],
                                 noise_snr_db=cfg["noise_snr_db"],
                                 seed=cfg["seed"] * 1_000_003 + i,
                                 channels=cfg["channels"],
                                 latent_dim=cfg["latent_dim"])
        mel, recon, truth = synth.gen_mel_pair(sc)
        video = synth.video_features(sc)
        files = {"video_fmat": f"{sample_id}_video.fmat",
                 "mel_fmat": f"{sample_id}_mel.fmat",
                 "recon_fmat": f"{sample_id}_recon.fmat"}
        formats.write_fmat(os.path.join(args.output, files["video_fmat"]), video)
        formats.write_fmat(os.path.join(args.output, files["mel_fmat"]), mel)
        formats.write_fmat(os.path.join(args.output, files["recon_fmat"]), recon)
        if sc.kind != "features":
            gen_wave, ref_wave, _ = synth.gen_audio_pair(sc)
            files["gen_wav"] = f"{sample_id}_gen.wav"
            files["ref_wav"] = f"{sample_id}_ref.wav"
            formats.write_wav(os.path.join(args.output, files["gen_wav"]), gen_wave)
            formats.write_wav(os.path.join(args.output, files["ref_wav"]), ref_wave)
            pairs.append([sample_id, files["gen_wav"], files["ref_wav"],
                          files["video_fmat"]])
        rows.append({"sample_id": sample_id, "o_d_ms": truth.o_d_ms,
                     "o_m_ms": truth.o_m_ms, "seed": sc.seed, "kind": sc.kind,
                     "files": files})
    _dump_json(os.path.join(args.output, "manifest.json"),
               {"config": cfg, "samples": rows})
    if pairs:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["sample_id", "gen_wav", "ref_wav", "video_fmat"])
        writer.writerows(pairs)
        _write_text(os.path.join(args.output, "pairs.csv"), buf.getvalue())
    return 0


def _load_params(path):
    weights, config = training.load_checkpoint(path)
    return training.predictor_params(weights, "data"), config


def cmd_estimate(args):
    video = formats.read_fmat(args.video)
    reference = formats.read_fmat(args.reference)
    mask = formats.read_fmat(args.mask).ravel() if args.mask else None
    params = None
    radius, temperature = args.radius, args.temperature
    mode = "oracle"
    if args.params:
        if os.path.isdir(args.params):
            params, ckpt_cfg = _load_params(args.params)
            radius = args.radius if args.radius is not None else ckpt_cfg.radius
            temperature = (args.temperature if args.temperature is not None
                           else ckpt_cfg.temperature)
            mode = "trained"
        else:
            print(f"warning: checkpoint {args.params} not found; "
                  "falling back to oracle-feature mode", file=sys.stderr)
    radius = 20 if radius is None else radius
    temperature = 0.07 if temperature is None else temperature
    est = sync.estimate_offset(video, reference, params=params, radius=radius,
                               temperature=temperature, mask=mask,
                               normalized=not args.raw_sync)
    _dump_json(args.output, {
        "mode": mode,
        "radius": radius,
        "temperature": temperature,
        "k_hat": est.lag,
        "offset_ms": est.offset_ms,
        "sync_vector": est.sync.values.tolist(),
        "distribution": est.distribution.probs.tolist(),
    })
    return 0


def cmd_align(args):
    gen = formats.read_wav(args.generated)
    ref = formats.read_wav(args.reference)
    result = frontend.align(gen, ref, search_ms=args.search, step_ms=args.step)
    payload = {
        "offset_ms": result.offset_ms,
        "shift_ms": result.shift_ms,
        "min_mse": result.min_mse,
        "mse_curve": result.mse_curve.tolist(),
        "a_mcd": frontend.aligned_metric(gen, ref, "mcd"),
        "a_mel_mse": frontend.aligned_metric(gen, ref, "mel_mse"),
    }
    _dump_json(args.output, payload)
    return 0


def _raw_pair_metrics(gen, ref):
    n = min(len(gen), len(ref))
    mel_g = dsp.mel_spectrogram(gen[:n])
    mel_r = dsp.mel_spectrogram(ref[:n])
    d = dsp.normalize_channels(mel_g) - dsp.normalize_channels(mel_r)
    return (metrics.mcd(metrics.mel_cepstra(mel_g), metrics.mel_cepstra(mel_r)),
            float((d * d).mean()))


def _eval_one(base, row, params, radius, temperature):
    gen = formats.read_wav(os.path.join(base, row["gen_wav"]))
    ref = formats.read_wav(os.path.join(base, row["ref_wav"]))
    video = formats.read_fmat(os.path.join(base, row["video_fmat"]))
    result = frontend.align(gen, ref)
    raw_mcd, raw_mel_mse = _raw_pair_metrics(gen, ref)
    n_mels = params.audio.d_in if params is not None else video.shape[1]
    ref_mel = dsp.mel_spectrogram(ref, n_mels=n_mels)
    est = sync.estimate_offset(video, ref_mel, params=params, radius=radius,
                               temperature=temperature)
    return {
        "sample_id": row["sample_id"],
        "o_f_ms": result.offset_ms,
        "dsm_offset_ms": est.offset_ms,
        "mcd": raw_mcd,
        "a_mcd": frontend.aligned_metric(gen, ref, "mcd"),
        "mel_mse": raw_mel_mse,
        "a_mel_mse": frontend.aligned_metric(gen, ref, "mel_mse"),
    }


def _safe_r2(predicted, reference):
    try:
        return metrics.offset_r2(predicted, reference)
    except ValueError:
        return None


def cmd_eval(args):
    with open(args.pairs, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{args.pairs}: no pairs listed")
    required = {"sample_id", "gen_wav", "ref_wav", "video_fmat"}
    if not required.issubset(rows[0]):
        raise ValueError(f"{args.pairs}: columns must include {sorted(required)}")
    base = os.path.dirname(os.path.abspath(args.pairs))
    params = None
    radius, temperature = args.radius or 20, args.temperature or 0.07
    if args.params:
        params, ckpt_cfg = _load_params(args.params)
        radius = args.radius or ckpt_cfg.radius
        temperature = args.temperature or ckpt_cfg.temperature

    def work(row):
        return _eval_one(base, row, params, radius, temperature)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(work, rows))
    else:
        results = [work(row) for row in rows]

    columns = ["sample_id", "o_f_ms", "dsm_offset_ms", "mcd", "a_mcd",
               "mel_mse", "a_mel_mse"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns)
    writer.writeheader()
    writer.writerows(results)
    _write_text(args.output + ".csv", buf.getvalue())

    dsm = [r["dsm_offset_ms"] for r in results]
    o_f = [r["o_f_ms"] for r in results]
    summary = {
        "n_pairs": len(results),
        "mean_mcd": float(np.mean([r["mcd"] for r in results])),
        "mean_a_mcd": float(np.mean([r["a_mcd"] for r in results])),
        "mean_mel_mse": float(np.mean([r["mel_mse"] for r in results])),
        "mean_a_mel_mse": float(np.mean([r["a_mel_mse"] for r in results])),
        "offset_r2": {"dsm_vs_frontend": _safe_r2(dsm, o_f)},
    }
    if args.manifest:
        with open(args.manifest, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        truth = {s["sample_id"]: s for s in manifest["samples"]}
        o_d = [truth[r["sample_id"]]["o_d_ms"] for r in results]
        total = [truth[r["sample_id"]]["o_d_ms"] + truth[r["sample_id"]]["o_m_ms"]
                 for r in results]
        summary["offset_r2"].update({
            "dsm_vs_truth": _safe_r2(dsm, o_d),
            "frontend_vs_truth": _safe_r2(o_f, total),
            "dummy_vs_truth": _safe_r2([0.0] * len(o_d), o_d),
        })
    _dump_json(args.output + ".json", summary)
    return 0


def cmd_train(args):
    config = _train_config(args)
    with open(os.path.join(args.data, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    samples = []
    for row in manifest["samples"]:
        files = row["files"]
        total = row["o_d_ms"] + row["o_m_ms"]
        if total % 10:
            raise ValueError(f"{row['sample_id']}: offset {total} ms is off-grid")
        samples.append(training.TrainingSample(
            video=formats.read_fmat(os.path.join(args.data, files["video_fmat"])),
            mel=formats.read_fmat(os.path.join(args.data, files["mel_fmat"])),
            recon=formats.read_fmat(os.path.join(args.data, files["recon_fmat"])),
            lag=total // 10))
    weights = training.init_weights(samples[0].video.shape[1],
                                    samples[0].mel.shape[1], config)
    result = training.train_offset_predictor(samples, weights, config)
    training.save_checkpoint(args.output, result.weights, config)
    log_path = args.log or os.path.join(args.output, "train_log.jsonl")
    lines = [json.dumps(rec, sort_keys=True) for rec in result.log]
    _write_text(log_path, "\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="syncforge",
                     description="offset estimation and alignment toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("melspec", help="waveform to log-mel FMAT")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--window", type=int, default=dsp.WINDOW)
    p.add_argument("--hop", type=int, default=dsp.HOP)
    p.add_argument("--mels", type=int, default=dsp.N_MELS)
    p.set_defaults(func=cmd_melspec)

    p = sub.add_parser("gen", help="generate synthetic offset data")
    p.add_argument("--scenario", help="scenario config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("estimate", help="estimate the offset of a feature stream")
    p.add_argument("video", help="25 Hz features FMAT")
    p.add_argument("reference", help="100 Hz reference FMAT")
    p.add_argument("--params", help="checkpoint directory")
    p.add_argument("--mask", help="0/1 validity FMAT (T x 1)")
    p.add_argument("--radius", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--raw-sync", action="store_true",
                   help="skip the per-lag count normalization")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("align", help="time-align generated audio to a reference")
    p.add_argument("generated")
    p.add_argument("reference")
    p.add_argument("--search", type=int, default=300, help="half range (ms)")
    p.add_argument("--step", type=int, default=10, help="proposal step (ms)")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval", help="batch metrics over a pairs list")
    p.add_argument("--pairs", required=True, help="CSV: sample_id, gen_wav, "
                   "ref_wav, video_fmat (paths relative to the CSV)")
    p.add_argument("--manifest", help="ground-truth manifest JSON")
    p.add_argument("--params", help="checkpoint directory")
    p.add_argument("--radius", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--output", required=True, help="report prefix")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train the offset predictor")
    p.add_argument("--data", required=True, help="directory from `syncforge gen`")
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--radius", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    p.add_argument("--total-steps", dest="total_steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="training log path (default: <ckpt>/train_log.jsonl)")
    p.add_argument("-o", "--output", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, training.TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
