"""Command-line entry point.

Subcommands: synth, preprocess, train, eval, ablate, attribute,
reduce-channels, count. Each accepts --config <json file> plus repeated
--set key=value overrides (dotted keys reach into nested fields; values are
parsed as JSON when possible, else kept as strings).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import attribution, data, features as feat, harness
from .checkpoint import load_checkpoint
from .errors import DataError, NumericalError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):                    # usage errors -> exit code 1
        raise UsageError(message)


def _set_by_path(config: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = config
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise UsageError(f"--set {dotted}: {key!r} is not a mapping")
    node[keys[-1]] = value


def _load_config(args) -> dict:
    config: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        try:
            config = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid JSON: {e}") from e
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_by_path(config, key, value)
    return config


def _band_set(name_or_list) -> list[feat.BandSpec]:
    if name_or_list in (None, "seed"):
        return list(feat.SEED_BANDS)
    if name_or_list == "deap":
        return list(feat.DEAP_BANDS)
    if isinstance(name_or_list, list):
        return [feat.BandSpec(b["name"], b["lo_hz"], b["hi_hz"])
                for b in name_or_list]
    raise UsageError(f"unknown band set {name_or_list!r}")


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field (repeatable)")


def build_parser() -> _Parser:
    parser = _Parser(prog="amdet",
                     description="EEG attention classifier toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic recording")
    p.add_argument("--out", required=True, help="output base path (EEGR v1)")
    _add_common(p)

    p = sub.add_parser("preprocess", help="recording -> feature tensors")
    p.add_argument("--recording", required=True)
    p.add_argument("--out", required=True, help="output base path (FEAT v1)")
    _add_common(p)

    for name, help_text in (("train", "five-fold cross-validated training"),
                            ("ablate", "train with one block removed")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--features", required=True)
        p.add_argument("--out", required=True)
        if name == "ablate":
            p.add_argument("--remove", required=True,
                           choices=["spectral", "spatial", "temporal"])
        _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a feature file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    _add_common(p)

    p = sub.add_parser("attribute", help="channel importance scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--topk", default=None,
                   help="comma-separated k values for topk_<k>.json "
                        "(default: min(8, channels))")
    _add_common(p)

    p = sub.add_parser("reduce-channels",
                       help="retrain on top-k channel subsets")
    p.add_argument("--features", required=True)
    p.add_argument("--scores", required=True,
                   help="channel_scores.csv from `attribute`")
    p.add_argument("--out", required=True)
    p.add_argument("--ks", default="",
                   help="comma-separated channel counts (default: full grid, "
                        "stride 4)")
    _add_common(p)

    p = sub.add_parser("count", help="parameter and FLOP accounting")
    p.add_argument("--features", help="derive model dims from this file")
    _add_common(p)
    return parser


def _experiment_config(args, config: dict) -> harness.ExperimentConfig:
    config = dict(config)
    if getattr(args, "features", None):
        config["features"] = args.features
    if getattr(args, "out", None):
        config["out_dir"] = args.out
    return harness.ExperimentConfig.from_dict(config)


def _print_report(report) -> None:
    accs = ", ".join(f"{a:.4f}" for a in report.fold_accuracies)
    print(f"folds: [{accs}]")
    print(f"accuracy: {report.mean_accuracy:.4f} +/- "
          f"{report.std_accuracy:.4f}  (macro-F1 {report.macro_f1:.4f})")
    print(f"params: {report.n_params}  flops/forward: "
          f"{report.flops_per_forward}  wall: {report.wall_time_s:.1f}s")


def cmd_synth(args) -> int:
    config = _load_config(args)
    spec = (data.SynthSpec.from_dict(config) if config
            else data.default_synth_spec())
    rec = data.synth_generate(spec)
    data.write_recording(args.out, rec)
    n = len(rec.trials)
    print(f"wrote {args.out}.json/.f32: {len(rec.channels)} channels, "
          f"{n} trials, {rec.data.shape[1]} samples at {rec.sample_rate_hz} Hz")
    return 0


def cmd_preprocess(args) -> int:
    config = _load_config(args)
    rec = data.read_recording(args.recording)
    bands = _band_set(config.get("bands"))
    if config.get("binarize_threshold") is not None:
        rec = feat.binarize_labels(rec, float(config["binarize_threshold"]))
    samples = feat.extract_features(
        rec, bands,
        sample_seconds=config.get("sample_seconds", 3.0),
        frame_seconds=config.get("frame_seconds", 0.5),
        subtract_baseline=config.get("subtract_baseline", True),
        baseline_psd=config.get("baseline_psd", False),
        normalize=config.get("normalize", True))
    data.write_features(args.out, samples, bands, channels=rec.channels)
    shape = samples[0].values.shape
    print(f"wrote {args.out}.json/.f32: {len(samples)} samples of shape "
          f"{list(shape)}")
    return 0


def cmd_train(args, remove: str | None = None) -> int:
    config = _experiment_config(args, _load_config(args))
    fs = data.read_features(config.features)
    report = harness.train(config, fs, remove=remove)
    _print_report(report)
    return 0


def cmd_eval(args) -> int:
    _load_config(args)
    params, model_cfg, extra = load_checkpoint(args.checkpoint)
    fs = data.read_features(args.features)
    acc, confusion = harness.evaluate(params, model_cfg, fs.values, fs.labels,
                                      remove=extra.get("ablate"))
    print(json.dumps({"accuracy": acc, "confusion": confusion.tolist(),
                      "n_samples": int(fs.n_samples)}, indent=1))
    return 0


def cmd_attribute(args) -> int:
    config = _load_config(args)
    params, model_cfg, extra = load_checkpoint(args.checkpoint)
    if extra.get("ablate"):
        raise DataError("attribution requires a full (non-ablated) model")
    fs = data.read_features(args.features)
    report = attribution.rank_channels(
        params, model_cfg, fs.values, fs.labels,
        target_layer=config.get("target_layer", "input"),
        weight_by_frame_attention=config.get("weight_by_frame_attention",
                                             False))
    if args.topk is None:
        top_ks = [min(8, len(fs.channels))]
    else:
        top_ks = [int(k) for k in str(args.topk).split(",") if k]
    attribution.write_channel_report(args.out, report, fs.channels, top_ks)
    ranked_names = [fs.channels[i] for i in report.ranking[:8]]
    print(f"wrote {args.out}/channel_scores.csv; top channels: "
          f"{', '.join(ranked_names)}")
    return 0


def cmd_reduce_channels(args) -> int:
    config = _experiment_config(args, _load_config(args))
    fs = data.read_features(config.features)
    ranking = attribution.read_ranking_csv(args.scores)
    if len(ranking) != fs.values.shape[-1]:
        raise DataError(
            f"ranking covers {len(ranking)} channels, features have "
            f"{fs.values.shape[-1]}")
    if args.ks:
        ks = [int(k) for k in args.ks.split(",")]
    else:
        ks = harness.default_k_grid(fs.values.shape[-1])
    rows = harness.reduce_channels_sweep(config, fs, ranking, ks)
    for row in rows:
        print(f"k={row['k']:>3d}  accuracy {row['mean']:.4f} "
              f"+/- {row['std']:.4f}")
    return 0


def cmd_count(args) -> int:
    config = _load_config(args)
    exp = harness.ExperimentConfig.from_dict(
        {k: v for k, v in config.items() if k != "features"})
    fs = data.read_features(args.features) if args.features else None
    model_cfg = exp.model_config(fs)
    n_params, flops = harness.count_params_flops(model_cfg)
    print(json.dumps({
        "params": n_params,
        "flops_per_forward": flops,
        "mlp_ratio": model_cfg.mlp_ratio,
        "config": model_cfg.to_dict(),
    }, indent=1))
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "preprocess":
            return cmd_preprocess(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "ablate":
            return cmd_train(args, remove=args.remove)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "attribute":
            return cmd_attribute(args)
        if args.command == "reduce-channels":
            return cmd_reduce_channels(args)
        if args.command == "count":
            return cmd_count(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
