"""Command line entry point: generate data, train, detect, evaluate.

Runs are described by a flat INI file with [run], [data], [model], [train]
and [detect] sections, so an experiment is a diffable artifact; unknown
sections or keys are rejected before any work happens. Every command is
reproducible from the config file alone: all randomness flows from the
single run seed through named substreams. Commands exit 0 on success, 2 on
configuration problems, 3 on missing or colliding data, and 4 on violated
internal contracts.

Subcommands: gen (synthetic dataset + manifest), train (checkpoint +
history), detect (per-sequence score reports), eval (metrics summary + PR
curve), ablate (attention vs. no-attention comparison), compare-reverse
(mean/first/last reassembly comparison). Reports are written as CSV/JSON
with rendered figures alongside.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as dp
from . import evaluate as ev
from . import report as rep
from . import synth
from .detect import (REVERSE_MODES, DetectionReport, detect, estimate_threshold,
                     report_to_csv, write_summaries)
from .errors import ConfigError, ContractError, DataError
from .model import Model, ModelConfig, attention_maps, init_model, load_model, save_model
from .seeding import substream
from .training import TrainConfig, train, write_history

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _to_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


_SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (int, 0),
        "out_dir": (str, "runs/default"),
    },
    "data": {
        "dir": (str, "data/default"),
        "rate_hz": (float, 2.0),
        "duration_s": (float, 300.0),
        "n_train": (int, 60),
        "n_val": (int, 12),
        "n_test_normal": (int, 40),
        "anomalies_per_type": (int, 4),
        "window": (int, 64),
        "autocorr_threshold": (float, 0.2),
    },
    "model": {
        "latent_dim": (int, 8),
        "outer_units": (int, 32),
        "inner_units": (int, 16),
        "n_heads": (int, 4),
        "d_head": (int, 2),
        "logvar_clip": (float, 10.0),
    },
    "train": {
        "max_epochs": (int, 300),
        "batch_size": (int, 32),
        "noise_std": (float, 0.01),
        "grace_epochs": (int, 25),
        "cycle_epochs": (int, 25),
        "beta_low": (float, 1e-8),
        "beta_high": (float, 1e-2),
        "patience": (int, 250),
        "learning_rate": (float, 1e-3),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-7),
    },
    "detect": {
        "reverse_mode": (str, "mean"),
        "figures": (_to_bool, True),
    },
}


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, dict[str, object]]

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["run"]["out_dir"])

    @property
    def data_dir(self) -> Path:
        return Path(self.values["data"]["dir"])


def default_config() -> RunConfig:
    return RunConfig({section: {key: default for key, (_, default) in keys.items()}
                      for section, keys in _SCHEMA.items()})


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    values = default_config().values
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key '{key}' in [{section}]")
            caster = _SCHEMA[section][key][0]
            try:
                values[section][key] = caster(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
    cfg = RunConfig(values)
    mode = cfg["detect"]["reverse_mode"]
    if mode not in REVERSE_MODES:
        raise ConfigError(
            f"detect.reverse_mode must be one of {', '.join(REVERSE_MODES)}, got {mode!r}")
    return cfg


def _synth_config(cfg: RunConfig) -> synth.SynthConfig:
    d = cfg["data"]
    plan = tuple((kind, d["anomalies_per_type"]) for kind in synth.ANOMALY_TYPES)
    sc = synth.SynthConfig(seed=cfg.seed, rate_hz=d["rate_hz"], duration_s=d["duration_s"],
                           n_train=d["n_train"], n_val=d["n_val"],
                           n_test_normal=d["n_test_normal"], anomaly_plan=plan)
    sc.validate()
    return sc


def _train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(max_epochs=t["max_epochs"], batch_size=t["batch_size"],
                       noise_std=t["noise_std"], grace_epochs=t["grace_epochs"],
                       cycle_epochs=t["cycle_epochs"], beta_low=t["beta_low"],
                       beta_high=t["beta_high"], patience=t["patience"],
                       learning_rate=t["learning_rate"], beta1=t["beta1"],
                       beta2=t["beta2"], eps=t["eps"], seed=cfg.seed)


# -- commands -------------------------------------------------------------


def run_gen(cfg: RunConfig, force: bool = False) -> Path:
    sc = _synth_config(cfg)
    out = cfg.data_dir
    manifest_path = out / "manifest.json"
    if manifest_path.exists() and not force:
        raise DataError(f"{manifest_path} already exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    dataset = synth.make_dataset(sc)
    manifest: dict[str, list[str]] = {}
    n_files = 0
    for split, sequences in dataset.items():
        names = []
        for seq in sequences:
            name = f"{seq.id}.seq"
            dp.save_sequence(seq, out / name)
            names.append(name)
            n_files += 1
        manifest[split] = names
    dp.write_manifest(manifest, manifest_path)
    print(f"wrote {n_files} sequences and manifest to {out}")
    return out


@dataclass
class PreparedData:
    window: int
    stats: dp.NormStats
    train_seqs: list[dp.Sequence]
    val_seqs: list[dp.Sequence]
    test_seqs: list[dp.Sequence]


def prepare_data(cfg: RunConfig) -> PreparedData:
    """Load the manifest splits, fit normalization on train, resolve W."""
    manifest_path = cfg.data_dir / "manifest.json"
    train_seqs = dp.load_split(manifest_path, "train")
    val_seqs = dp.load_split(manifest_path, "val")
    test_seqs = dp.load_split(manifest_path, "test")
    stats = dp.fit_norm(train_seqs)
    window = cfg["data"]["window"]
    if window == 0:
        window = dp.autocorr_window_size(train_seqs, cfg["data"]["autocorr_threshold"])

    def norm(seqs: list[dp.Sequence]) -> list[dp.Sequence]:
        return [dp.apply_norm(s, stats) for s in seqs]

    return PreparedData(window, stats, norm(train_seqs), norm(val_seqs), norm(test_seqs))


def run_train(cfg: RunConfig, use_attention: bool = True, tag: str = "model"
              ) -> tuple[Model, list[dict[str, float]]]:
    prepared = prepare_data(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    dp.save_norm(prepared.stats, out / "norm.json")

    m = cfg["model"]
    model_config = ModelConfig(
        n_features=len(prepared.stats.channels), window=prepared.window,
        latent_dim=m["latent_dim"], outer_units=m["outer_units"],
        inner_units=m["inner_units"], n_heads=m["n_heads"], d_head=m["d_head"],
        use_attention=use_attention, logvar_clip=m["logvar_clip"])
    model = init_model(model_config, substream(cfg.seed, "init"))

    train_windows = dp.training_windows(prepared.train_seqs, prepared.window)
    val_windows = dp.training_windows(prepared.val_seqs, prepared.window)
    model, history = train(model, train_windows, val_windows, _train_config(cfg))

    save_model(model, out / f"{tag}.bin")
    write_history(history, out / f"{tag}_history.csv")
    if cfg["detect"]["figures"]:
        rep.plot_history(history, out / f"{tag}_history.png")
    best = min(history, key=lambda row: row["val_recon"])
    print(f"trained {len(history)} epochs; best val recon {best['val_recon']:.4f} "
          f"at epoch {int(best['epoch'])}; saved {out / (tag + '.bin')}")
    return model, history


def _load_checkpoint(cfg: RunConfig, tag: str) -> Model:
    path = cfg.out_dir / f"{tag}.bin"
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist; run train first")
    return load_model(path)


def run_detect(cfg: RunConfig, tag: str = "model", mode: str | None = None
               ) -> tuple[float, list[DetectionReport], list[dp.Sequence]]:
    mode = mode or cfg["detect"]["reverse_mode"]
    model = _load_checkpoint(cfg, tag)
    prepared = prepare_data(cfg)
    threshold = estimate_threshold(model, prepared.val_seqs, mode)
    reports = [detect(model, seq, threshold, mode) for seq in prepared.test_seqs]

    out = cfg.out_dir / f"{tag}_reports_{mode}"
    out.mkdir(parents=True, exist_ok=True)
    channels = prepared.stats.channels
    for seq, report in zip(prepared.test_seqs, reports):
        report_to_csv(report, channels, out / f"{seq.id}.csv")
        if cfg["detect"]["figures"]:
            rep.plot_score_trace(report, out / f"{seq.id}.png")
    write_summaries(reports, out / "summaries.json")
    flagged = sum(r.label for r in reports)
    print(f"threshold {threshold:.4f} ({mode} mode); flagged {flagged}/{len(reports)} "
          f"test sequences; reports in {out}")
    return threshold, reports, prepared.test_seqs


def run_eval(cfg: RunConfig, tag: str = "model", mode: str | None = None) -> dict:
    mode = mode or cfg["detect"]["reverse_mode"]
    threshold, reports, test_seqs = run_detect(cfg, tag, mode)
    truth = {seq.id: seq.is_anomalous for seq in test_seqs}
    summary = ev.summarize(reports, truth, threshold)
    out = cfg.out_dir
    ev.curve_to_csv(summary["curve"], out / f"{tag}_pr_curve_{mode}.csv")
    ev.summary_to_json(summary, out / f"{tag}_metrics_{mode}.json")
    if cfg["detect"]["figures"]:
        rep.plot_pr_curves({mode: summary["curve"]}, out / f"{tag}_pr_curve_{mode}.png")
        rep.plot_peaks(reports, truth, threshold, out / f"{tag}_peaks_{mode}.png")
    print(f"precision {summary['precision']:.3f} recall {summary['recall']:.3f} "
          f"f1 {summary['f1']:.3f} f1_best {summary['f1_best']:.3f} "
          f"auprc {summary['auprc']:.3f} (fp {summary['fp']}, fn {summary['fn']})")
    return summary


def attention_uniform_deviation(model: Model, sequences: list[dp.Sequence],
                                n_windows: int = 8) -> float:
    """Largest deviation of any attention weight from the uniform 1/W row."""
    w = model.config.window
    windows = np.stack([seq.values[:w] for seq in sequences[:n_windows]])
    maps = attention_maps(model, windows)
    return float(np.abs(maps - 1.0 / w).max())


def run_ablate(cfg: RunConfig) -> dict:
    results = {}
    curves = {}
    for tag, with_attention in (("model_ma", True), ("model_noma", False)):
        run_train(cfg, use_attention=with_attention, tag=tag)
        summary = run_eval(cfg, tag=tag)
        key = "with_attention" if with_attention else "no_attention"
        results[key] = {k: v for k, v in summary.items() if k != "curve"}
        curves[key] = summary["curve"]

    model_ma = _load_checkpoint(cfg, "model_ma")
    prepared = prepare_data(cfg)
    deviation = attention_uniform_deviation(model_ma, prepared.test_seqs)
    results["attention_uniform_deviation"] = deviation

    out = cfg.out_dir
    ev.summary_to_json({k: v for k, v in results.items()}, out / "ablation.json")
    if cfg["detect"]["figures"]:
        rep.plot_pr_curves(curves, out / "ablation_pr_curves.png")
    print(f"auprc with attention {results['with_attention']['auprc']:.3f}, "
          f"without {results['no_attention']['auprc']:.3f}; "
          f"attention deviation from uniform {deviation:.4f}")
    return results


def run_compare_reverse(cfg: RunConfig, tag: str = "model") -> dict:
    results = {}
    curves = {}
    for mode in REVERSE_MODES:
        summary = run_eval(cfg, tag=tag, mode=mode)
        results[mode] = {k: v for k, v in summary.items() if k != "curve"}
        curves[mode] = summary["curve"]
    out = cfg.out_dir
    ev.summary_to_json(results, out / f"{tag}_reverse_comparison.json")
    import csv as _csv

    fields = ["mode", "threshold", "precision", "recall", "f1", "f1_best", "auprc"]
    with open(out / f"{tag}_reverse_comparison.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(fields)
        for mode, row in results.items():
            writer.writerow([mode] + [f"{row[k]:.17g}" for k in fields[1:]])
    if cfg["detect"]["figures"]:
        rep.plot_pr_curves(curves, out / f"{tag}_reverse_pr_curves.png")
    return results


# -- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnvae",
        description="Attention-augmented variational autoencoder for "
                    "multivariate time-series anomaly detection.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", required=True, help="run config INI file")
        return p

    p = add("gen", "generate the synthetic dataset and manifest")
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")

    p = add("train", "train a model and write checkpoint + history")
    p.add_argument("--no-attention", action="store_true",
                   help="train the variant without the attention block")
    p.add_argument("--tag", default="model", help="checkpoint name stem")

    for name, help_text in (("detect", "score the test split and write reports"),
                            ("eval", "detect plus metrics summary and PR curve")):
        p = add(name, help_text)
        p.add_argument("--reverse-mode", choices=REVERSE_MODES, default=None,
                       help="override the configured reassembly mode")
        p.add_argument("--tag", default="model", help="checkpoint name stem")

    add("ablate", "train and evaluate both attention variants")

    p = add("compare-reverse", "evaluate all three reassembly modes")
    p.add_argument("--tag", default="model", help="checkpoint name stem")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.cmd == "gen":
            run_gen(cfg, force=args.force)
        elif args.cmd == "train":
            run_train(cfg, use_attention=not args.no_attention, tag=args.tag)
        elif args.cmd == "detect":
            run_detect(cfg, tag=args.tag, mode=args.reverse_mode)
        elif args.cmd == "eval":
            run_eval(cfg, tag=args.tag, mode=args.reverse_mode)
        elif args.cmd == "ablate":
            run_ablate(cfg)
        elif args.cmd == "compare-reverse":
            run_compare_reverse(cfg, tag=args.tag)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except ContractError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 4
    return 0


def entry() -> None:
    raise SystemExit(main())
