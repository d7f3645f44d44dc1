"""Command-line interface.

Subcommands: synth (build synthetic scenes), train (unsupervised training),
enhance (beamform a multichannel WAV with a trained checkpoint), em (plain
cACGMM baseline), eval (SNR/gain table against oracle components).

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import os
import pathlib
import sys

import numpy as np

from . import cacgmm, masknet, scenes, trainer
from .beamformer import apply_beamformer, estimate_covariances, gev_weights
from .stft import AudioClip, StftConfig, istft, read_wav, stft, write_wav
from .tensorfile import read_tensor, write_tensor

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def parse_config(path):
    """key=value file; # starts a comment; values typed as bool/int/float/str."""
    out = {}
    try:
        text = pathlib.Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _parse_value(value)
    return out


def _parse_value(value):
    low = value.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def thread_count(args):
    env = os.environ.get("BEAMLEARN_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"BEAMLEARN_THREADS={env!r} is not an integer")
    elif getattr(args, "threads", None):
        n = args.threads
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, params_np, meta):
    path = pathlib.Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, value in params_np.items():
        write_tensor(path / f"{name}.btf", value)
    manifest = dict(meta)
    manifest["layers"] = {k: list(v.shape) for k, v in params_np.items()}
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(path):
    path = pathlib.Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"{path} is not a checkpoint (no manifest.json)")
    with open(manifest_path) as fh:
        meta = json.load(fh)
    params = {}
    for name, shape in meta["layers"].items():
        value = read_tensor(path / f"{name}.btf")
        if list(value.shape) != shape:
            raise ValueError(
                f"checkpoint tensor {name} has shape {list(value.shape)}, "
                f"manifest says {shape}"
            )
        params[name] = value
    return params, meta


# ---------------------------------------------------------------------------
# mask export

def write_pgm(path, mask):
    """8-bit binary PGM (P5) of a (T, F) mask in [0, 1], time across."""
    mask = np.asarray(mask, dtype=np.float64)
    data = np.round(255.0 * np.clip(mask, 0.0, 1.0)).astype(np.uint8)
    h, w = data.shape
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def export_masks(prefix, gamma):
    prefix = pathlib.Path(prefix)
    for k in range(gamma.shape[0]):
        write_pgm(prefix.with_suffix(f".class{k}.pgm"), gamma[k])
        write_tensor(prefix.with_suffix(f".class{k}.btf"), gamma[k])


def pick_speech_class(choice, gamma, spec):
    """Resolve which mask class is speech.

    "auto" picks the class whose mask concentrates on the loudest cells:
    speech bursts add energy on top of the noise floor, so the speech mask
    has the highest mask-weighted mean power on the reference channel.
    """
    if choice in ("0", "1", 0, 1):
        return int(choice)
    power = np.abs(spec[0]) ** 2  # (T, F)
    mass = gamma.sum(axis=(1, 2))
    weighted = np.einsum("ktf,tf->k", gamma, power)
    return int(np.argmax(weighted / np.maximum(mass, 1e-30)))


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    cfg = parse_config(args.config)
    count = int(cfg.pop("count", 0))
    if count < 1:
        raise UsageError("config must request count >= 1 scenes")
    seed = int(cfg.pop("seed", 0))
    snr_min = float(cfg.pop("snr_min_db", cfg.get("snr_db", 0.0)))
    snr_max = float(cfg.pop("snr_max_db", snr_min))
    cfg.pop("snr_db", None)
    allowed = {f.name for f in dataclasses.fields(scenes.SceneSpec)}
    unknown = set(cfg) - allowed
    if unknown:
        raise UsageError(f"unknown scene config keys: {sorted(unknown)}")

    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    snrs = rng.uniform(snr_min, snr_max, size=count)

    def build(i):
        spec = scenes.SceneSpec(seed=seed + 1000 * (i + 1),
                                snr_db=float(snrs[i]), **cfg)
        bundle = scenes.synth_scene(spec)
        return scenes.save_scene(bundle, out_dir, f"scene{i:04d}")

    with concurrent.futures.ThreadPoolExecutor(thread_count(args)) as pool:
        records = list(pool.map(build, range(count)))

    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote {count} scenes and {manifest}")
    return EXIT_OK


def _train_config(cfg_dict):
    allowed = {f.name for f in dataclasses.fields(trainer.TrainConfig)}
    unknown = set(cfg_dict) - allowed - {"stft"}
    if unknown:
        raise UsageError(f"unknown train config keys: {sorted(unknown)}")
    try:
        return trainer.TrainConfig(**cfg_dict)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad train config: {exc}") from None


def cmd_train(args):
    if not pathlib.Path(args.manifest).exists():
        raise UsageError(f"manifest {args.manifest} does not exist")
    cfg_dict = parse_config(args.config) if args.config else {}
    cfg = _train_config(cfg_dict)

    def log(step, loss):
        print(f"step {step}: loss {loss:.6f}", flush=True)

    params, report = trainer.train(args.manifest, cfg, log=log)
    meta = {
        "activation": cfg.activation,
        "num_bins": cfg.stft.num_bins,
        "hidden": cfg.hidden,
        "ff_units": cfg.ff_units,
        "loss_variant": cfg.loss_variant,
        "seed": cfg.seed,
    }
    save_checkpoint(args.out, params, meta)
    report_path = pathlib.Path(args.out) / "report.json"
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(f"checkpoint: {args.out}")
    print(f"loss first/last tenth: {report['loss_first_tenth']:.6f} "
          f"/ {report['loss_last_tenth']:.6f}")
    return EXIT_OK


def _load_multichannel(path):
    clip = read_wav(path)
    if clip.num_channels < 2:
        raise UsageError(
            f"{path} has {clip.num_channels} channel(s); need at least 2"
        )
    return clip


def cmd_enhance(args):
    params, meta = load_checkpoint(args.checkpoint)
    clip = _load_multichannel(args.wav)
    stft_cfg = StftConfig()
    spec = stft(clip, stft_cfg)

    if args.pool == "median":
        gamma = trainer.infer_masks(params, spec, meta["activation"],
                                    extra_em_step=args.extra_em_step)
    else:
        gamma = masknet.infer_masks_net(params, spec, meta["activation"], "mean")
        if args.extra_em_step:
            ytilde = cacgmm.normalize(spec)
            mp, _ = cacgmm.m_step(ytilde, gamma)
            gamma = cacgmm.e_step(ytilde, mp)

    speech = pick_speech_class(args.speech_class, gamma, spec)
    cov = estimate_covariances(spec, gamma, speech_class=speech)
    weights = gev_weights(cov)
    enhanced = apply_beamformer(spec, weights.w)
    out = pathlib.Path(args.out)
    write_wav(out, istft(enhanced, stft_cfg, clip.sample_rate))
    write_tensor(out.with_suffix(".weights.btf"), weights.w)
    if args.export_masks:
        export_masks(out, gamma)
    print(f"enhanced: {out} (speech class {speech})")
    return EXIT_OK


def cmd_em(args):
    clip = _load_multichannel(args.wav)
    stft_cfg = StftConfig()
    spec = stft(clip, stft_cfg)
    ytilde = cacgmm.normalize(spec)
    params, gamma, trace = cacgmm.em_fit(
        ytilde, num_classes=args.classes, iterations=args.iterations,
        seed=args.seed)
    if args.pa:
        gamma, _ = cacgmm.permutation_align(gamma)
    speech = pick_speech_class(args.speech_class, gamma, spec)
    cov = estimate_covariances(spec, gamma, speech_class=speech)
    weights = gev_weights(cov)
    enhanced = apply_beamformer(spec, weights.w)
    out = pathlib.Path(args.out)
    write_wav(out, istft(enhanced, stft_cfg, clip.sample_rate))
    write_tensor(out.with_suffix(".weights.btf"), weights.w)
    export_masks(out, gamma)
    with open(out.with_suffix(".trace.json"), "w") as fh:
        json.dump({"log_likelihood": trace, "speech_class": speech}, fh,
                  indent=2)
    print(f"em enhanced: {out} (speech class {speech}, "
          f"final ll {trace[-1]:.3f})")
    return EXIT_OK


def cmd_eval(args):
    records = trainer.load_manifest(args.manifest)
    base = pathlib.Path(args.manifest).parent
    stft_cfg = StftConfig()
    weights_dir = pathlib.Path(args.weights_dir) if args.weights_dir else None

    def one(rec):
        oracle = rec.get("oracle")
        if not oracle:
            raise ValueError(f"record {rec.get('id')} lacks oracle components")
        mixture = trainer.load_utterance(rec, base)
        x = read_wav(base / oracle["speech_image"])
        n = read_wav(base / oracle["noise"])
        bundle = scenes.SceneBundle(
            spec=None, mixture=mixture, speech_image=x, noise=n,
            oracle_mask=None, direction_deg=0.0)
        d = mixture.num_channels
        if weights_dir is not None:
            w = read_tensor(weights_dir / f"{rec['id']}.weights.btf")
        else:  # channel-0 passthrough
            w = np.zeros((stft_cfg.num_bins, d), dtype=np.complex128)
            w[:, 0] = 1.0
        rep = scenes.snr_metrics(bundle, w, stft_cfg)
        rep["id"] = rec["id"]
        return rep

    with concurrent.futures.ThreadPoolExecutor(thread_count(args)) as pool:
        reports = list(pool.map(one, records))

    header = f"{'id':<12} {'in(ch0)':>8} {'in(best)':>9} {'out':>8} " \
             f"{'gain0':>7} {'gainB':>7}"
    print(header)
    print("-" * len(header))
    for rep in reports:
        best = max(rep["input_snr_db"])
        print(f"{rep['id']:<12} {rep['input_snr_db'][0]:8.2f} {best:9.2f} "
              f"{rep['output_snr_db']:8.2f} {rep['gain_vs_ref_db']:7.2f} "
              f"{rep['gain_vs_best_db']:7.2f}")
    mean_gain = float(np.mean([r["gain_vs_best_db"] for r in reports]))
    print(f"mean gain vs best channel: {mean_gain:.2f} dB")
    summary = {"utterances": reports, "mean_gain_vs_best_db": mean_gain}
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="beamlearn",
        description="Unsupervised mask estimation and GEV beamforming.")
    parser.add_argument("--threads", type=int, default=0,
                        help="worker threads (default: all cores; "
                             "BEAMLEARN_THREADS overrides)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("config", help="key=value scene config")
    p.add_argument("out", help="output directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="unsupervised training")
    p.add_argument("manifest", help="JSON-lines training manifest")
    p.add_argument("out", help="checkpoint output directory")
    p.add_argument("--config", help="key=value training config")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enhance", help="beamform with a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("wav", help="multichannel input WAV")
    p.add_argument("out", help="enhanced WAV path")
    p.add_argument("--extra-em-step", action="store_true",
                   help="refine masks with one M-step and one E-step")
    p.add_argument("--pool", choices=("median", "mean"), default="median")
    p.add_argument("--export-masks", action="store_true",
                   help="write PGM images and tensors of the masks")
    p.add_argument("--speech-class", choices=("auto", "0", "1"),
                   default="auto")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("em", help="plain cACGMM baseline enhancement")
    p.add_argument("wav", help="multichannel input WAV")
    p.add_argument("out", help="enhanced WAV path")
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pa", action=argparse.BooleanOptionalAction, default=True,
                   help="permutation alignment of the masks")
    p.add_argument("--speech-class", choices=("auto", "0", "1"),
                   default="auto")
    p.set_defaults(fn=cmd_em)

    p = sub.add_parser("eval", help="SNR/gain table against oracle components")
    p.add_argument("manifest", help="manifest with oracle component paths")
    p.add_argument("--weights-dir",
                   help="directory with <id>.weights.btf files "
                        "(default: channel-0 passthrough)")
    p.add_argument("--json", help="write the table as JSON here")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
