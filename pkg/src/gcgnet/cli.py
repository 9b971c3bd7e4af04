"""Command-line entry point: ``gcgnet {train,ablate,eval,forecast,synth,gradcheck}``.

Exit codes: 0 success, 1 runtime failure, 2 invalid config or usage.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from gcgnet.baselines import BaselineConfig, FusionWrapper, LinearForecaster
from gcgnet.config import ConfigError, RunConfig, dump_config, load_config
from gcgnet.data import (
    Batch, DataError, Dataset, MaskSpec, ScalerStats, SeriesWindow, SynthSpec, fit_apply_scaler, load_csv,
    make_windows, split, synth_generate, write_csv,
)
from gcgnet.gradcheck import micro_config, model_gradcheck
from gcgnet.model import GCGNet, ModelConfig
from gcgnet.train import CheckpointError, Metrics, evaluate, load_checkpoint, save_checkpoint, train

log = logging.getLogger("gcgnet")


class UsageError(Exception):
    pass


@dataclass
class Prepared:
    train: list[SeriesWindow]
    val: list[SeriesWindow]
    test: list[SeriesWindow]
    scaler: ScalerStats
    dataset: Dataset


def prepare(cfg: RunConfig, T: int, F: int, base: Path | None = None, scaler: ScalerStats | None = None) -> Prepared:
    """Load, split 7:1:2 (by default), standardize with train stats and window every split."""
    ds = cfg.data.load(base)
    tr, va, te = split(ds, cfg.data.split)
    if scaler is None:
        (tr, va, te), scaler = fit_apply_scaler(tr, va, te)
    else:
        tr, va, te = (scaler.apply(d) for d in (tr, va, te))
    s = cfg.data.stride
    return Prepared(make_windows(tr, T, F, s), make_windows(va, T, F, s), make_windows(te, T, F, s), scaler, ds)


def build_model(cfg: RunConfig, N: int, D: int):
    mcfg = cfg.model_config(N, D)
    kind = cfg.experiment.kind
    if kind == "gcgnet":
        return GCGNet(mcfg)
    if kind == "linear":
        return LinearForecaster(mcfg)
    return FusionWrapper(mcfg)


class _Unscaled:
    """Wraps a forecaster so predictions and targets are compared in original units."""

    def __init__(self, model, scaler: ScalerStats):
        self.model, self.scaler = model, scaler

    def predict(self, batch):
        return self.scaler.invert_endo(self.model.predict(batch))


def _unscale_windows(windows, scaler: ScalerStats):
    return [replace(w, y_endo=scaler.invert_endo(w.y_endo)) for w in windows]


def run_metrics(model, windows, scaler: ScalerStats, original_units: bool, mask: MaskSpec | None = None) -> Metrics:
    if original_units:
        return evaluate(_Unscaled(model, scaler), _unscale_windows(windows, scaler), mask=mask)
    return evaluate(model, windows, mask=mask)


def _metrics_dict(m: Metrics) -> dict:
    return {"mse": m.mse, "mae": m.mae, "window_count": m.window_count}


# -- commands -----------------------------------------------------------------

def cmd_train(config_path, variant: str | None = None, output_dir: str | None = None) -> int:
    cfg = load_config(config_path)
    if variant is not None:
        cfg.experiment.variant = variant
    if output_dir is not None:
        cfg.output_dir = output_dir
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "resolved_config.yaml")

    T, F = int(cfg.model.get("T", ModelConfig.T)), int(cfg.model.get("F", ModelConfig.F))
    prep = prepare(cfg, T, F, Path(config_path).parent)
    model = build_model(cfg, prep.dataset.N, prep.dataset.D)
    model, history = train(model, prep.train, prep.val, cfg.train, verbose=True)
    history.to_csv(out / "history.csv")
    save_checkpoint(model, out / "checkpoint.gcgn", prep.scaler, history,
                    {"endo": prep.dataset.endo_names, "exo": prep.dataset.exo_names})
    units = cfg.experiment.original_units
    report = {
        "val": _metrics_dict(run_metrics(model, prep.val, prep.scaler, units)),
        "test": _metrics_dict(run_metrics(model, prep.test, prep.scaler, units)),
        "best_epoch": history.best_epoch,
        "epochs_run": len(history.epochs),
    }
    for spec in cfg.experiment.mask_specs():
        key = f"test_mask_{spec.kind.value}_{spec.ratio}_{spec.seed}"
        report[key] = _metrics_dict(run_metrics(model, prep.test, prep.scaler, units, spec))
    (out / "metrics.txt").write_text(yaml.safe_dump(report, sort_keys=False))
    print(yaml.safe_dump(report, sort_keys=False), end="")
    return 0


def cmd_eval(checkpoint, config_path, no_future_exo: bool = False, mask: str | None = None,
             split_name: str = "test") -> int:
    model, scaler, meta = load_checkpoint(checkpoint)
    cfg = load_config(config_path)
    c = model.config
    if no_future_exo:
        if not hasattr(c, "future_exo_available"):
            raise UsageError("model has no future-exo switch")
        c.future_exo_available = False
    prep = prepare(cfg, c.T, c.F, Path(config_path).parent, scaler)
    if (prep.dataset.N, prep.dataset.D) != (c.N, c.D):
        raise UsageError(f"data has N={prep.dataset.N}, D={prep.dataset.D}; checkpoint expects N={c.N}, D={c.D}")
    spec = MaskSpec.parse(mask) if mask else None
    windows = {"train": prep.train, "val": prep.val, "test": prep.test}[split_name]
    metrics = run_metrics(model, windows, scaler, cfg.experiment.original_units, spec)
    print(metrics.to_text(), end="")
    return 0


def cmd_forecast(checkpoint, csv_path, horizon: int | None = None, out_path: str | None = None) -> int:
    """Forecast the ``F`` steps after the history in ``csv_path``.

    With future exogenous input, the last ``F`` rows supply it (their
    endogenous values are ignored) and the ``T`` rows before them are history.
    """
    model, scaler, meta = load_checkpoint(checkpoint)
    c = model.config
    if horizon is not None and horizon != c.F:
        raise UsageError(f"--horizon {horizon} does not match the checkpoint horizon {c.F}")
    names = meta.get("extra", {})
    endo, exo = names.get("endo"), names.get("exo")
    if not endo or not exo:
        raise UsageError("checkpoint does not record channel names")
    ds = scaler.apply(load_csv(csv_path, endo, exo)) if scaler is not None else load_csv(csv_path, endo, exo)
    future = bool(getattr(c, "future_exo_available", False))
    need = c.T + (c.F if future else 0)
    if ds.length < need:
        raise UsageError(f"forecast needs at least {need} rows, file has {ds.length}")
    start = ds.length - need
    batch = Batch(ds.endo[None, :, start:start + c.T], ds.exo[None, :, start:start + c.T],
                  ds.exo[None, :, start + c.T:] if future else None, None)
    y = model.predict(batch)[0]
    if scaler is not None:
        y = scaler.invert_endo(y)
    target = Path(out_path) if out_path else Path(checkpoint).with_name("forecast.csv")
    with target.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel"] + [f"h{i + 1}" for i in range(c.F)])
        for name, row in zip(endo, y):
            w.writerow([name] + [repr(float(v)) for v in row])
    print(f"wrote {target} ({len(endo)} x {c.F})")
    return 0


def cmd_synth(spec_path, out_path, seed: int | None = None) -> int:
    raw = yaml.safe_load(Path(spec_path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError("synth spec must be a mapping")
    raw = dict(raw)
    file_seed = raw.pop("seed", 0)
    seed = file_seed if seed is None else seed
    try:
        spec = SynthSpec(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad synth spec: {exc}") from None
    ds = synth_generate(spec, seed)
    out = Path(out_path)
    write_csv(ds, out)
    resolved = {**vars(spec), "seed": seed}
    out.with_suffix(".spec.yaml").write_text(yaml.safe_dump(resolved, sort_keys=False))
    print(f"wrote {out} ({ds.length} rows, N={ds.N}, D={ds.D})")
    return 0


def cmd_gradcheck(config_path=None, tol: float = 1e-3) -> int:
    cfg = micro_config()
    if config_path is not None:
        raw = yaml.safe_load(Path(config_path).read_text()) or {}
        cfg = ModelConfig.from_dict({**cfg.to_dict(), **(raw.get("model") or raw)})
    report = model_gradcheck(cfg)
    print(f"parameters checked: {report.n_checked}")
    print(f"max relative error: {report.max_rel_error:.3e} ({report.worst})")
    return 0 if report.max_rel_error < tol else 1


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcgnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("config")
    t.add_argument("--variant", choices=["full", "a", "b", "c", "d"])
    t.add_argument("--output-dir")

    a = sub.add_parser("ablate", help="train an ablation variant (alias for train --variant)")
    a.add_argument("config")
    a.add_argument("--variant", required=True, choices=["a", "b", "c", "d"])
    a.add_argument("--output-dir")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the data of a run config")
    e.add_argument("checkpoint")
    e.add_argument("config")
    e.add_argument("--no-future-exo", action="store_true")
    e.add_argument("--mask", help="kind:ratio:seed, e.g. zeros:0.3:1")
    e.add_argument("--split", default="test", choices=["train", "val", "test"])

    f = sub.add_parser("forecast", help="forecast the horizon after a CSV history")
    f.add_argument("checkpoint")
    f.add_argument("csv")
    f.add_argument("--horizon", type=int)
    f.add_argument("--out")

    s = sub.add_parser("synth", help="write a synthetic dataset CSV")
    s.add_argument("spec")
    s.add_argument("out")
    s.add_argument("--seed", type=int)

    g = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    g.add_argument("config", nargs="?")
    g.add_argument("--tol", type=float, default=1e-3)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("train", "ablate"):
            return cmd_train(args.config, args.variant, args.output_dir)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.config, args.no_future_exo, args.mask, args.split)
        if args.command == "forecast":
            return cmd_forecast(args.checkpoint, args.csv, args.horizon, args.out)
        if args.command == "synth":
            return cmd_synth(args.spec, args.out, args.seed)
        return cmd_gradcheck(args.config, args.tol)
    except (ConfigError, UsageError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, FileNotFoundError, RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
