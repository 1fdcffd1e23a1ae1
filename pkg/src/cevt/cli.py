"""Command-line entry point: generate, train, evaluate, fit-gev, sweep.

Configuration is a flat ``key = value`` file overridden by ``--key value``
flags. Exit codes: 0 success, 1 runtime failure, 2 configuration error.
Every failure prints exactly one ``error: <kind>: <message>`` line to stderr.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .data import Dataset, SyntheticConfig, concat, generate_synthetic, load_features, save_features
from .errors import CevtError, ConfigError
from .gev import FitOptions, fit_gev_detailed
from .model import load_checkpoint
from .pipeline import (
    evaluate,
    load_bank,
    report_json,
    run_experiment,
    write_entropy_histogram_csv,
    write_learned_features_csv,
)
from .entropy import prediction_entropy
from .training import PRESET_FIELDS, PRESETS, Ablation, TrainConfig

logger = logging.getLogger("cevt")

COMMANDS = ("generate", "train", "evaluate", "fit-gev", "sweep")


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _float_list(raw: str) -> list[float]:
    items = [s for s in raw.replace(" ", "").split(",") if s]
    if not items:
        raise ValueError("empty list")
    return [float(s) for s in items]


def _opt_float(raw: str) -> float | None:
    return None if raw.strip().lower() in ("", "none") else float(raw)


@dataclass(frozen=True)
class Key:
    section: str
    parse: Callable[[str], Any]


KEYS: dict[str, Key] = {}
for _f in fields(TrainConfig):
    if _f.name not in ("ablation", "workers"):
        KEYS[_f.name] = Key("train", {"float": float, "int": int, "bool": _bool}[str(_f.type)])
for _f in fields(Ablation):
    KEYS[_f.name] = Key("ablation", _bool)
for _f in fields(SyntheticConfig):
    if _f.name != "seed":
        KEYS[_f.name] = Key("synth", {"float": float, "int": int}[str(_f.type)])
for _name in ("max_iters", "min_samples", "restarts"):
    KEYS[_name] = Key("fit", int)
KEYS["tol"] = Key("fit", float)
KEYS["preset"] = Key("run", str)
KEYS["eval_delta"] = Key("run", _opt_float)
KEYS["dump_features"] = Key("run", _bool)
for _name in ("sweep_beta", "sweep_gamma", "sweep_delta"):
    KEYS[_name] = Key("run", _float_list)
for _name in ("data", "out", "checkpoint", "bank", "input", "output"):
    KEYS[_name] = Key("paths", str)

BOOL_KEYS = {k for k, v in KEYS.items() if v.parse is _bool}


@dataclass
class RunConfig:
    command: str
    paths: dict[str, str] = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SyntheticConfig = field(default_factory=SyntheticConfig)
    fit: FitOptions = field(default_factory=FitOptions)
    overrides: dict[str, str] = field(default_factory=dict)
    eval_delta: float | None = None
    dump_features: bool = False
    sweep: dict[str, list[float]] = field(default_factory=dict)

    @property
    def out_dir(self) -> Path:
        return Path(self.paths.get("out", "cevt_out"))

    def path(self, key: str, default_name: str) -> Path:
        return Path(self.paths[key]) if key in self.paths else self.out_dir / default_name


def _canonical(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def read_config_file(path: str | Path) -> dict[str, str]:
    values = {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config: file {p} does not exist")
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config: line {n}: expected key=value")
        values[_canonical(key)] = value.strip()
    return values


def parse_flags(argv: list[str]) -> dict[str, str]:
    """``--key value`` pairs; boolean keys may be given bare (``--disable-le``)."""
    values = {}
    i = 0
    while i < len(argv):
        tok = argv[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key, eq, inline = tok[2:].partition("=")
        key = _canonical(key)
        if eq:
            values[key] = inline
            i += 1
        elif key in BOOL_KEYS and (i + 1 == len(argv) or argv[i + 1].startswith("--")):
            values[key] = "true"
            i += 1
        else:
            if i + 1 >= len(argv):
                raise ConfigError(f"{key}: missing value")
            values[key] = argv[i + 1]
            i += 2
    return values


def parse_config(command: str, config_file: str | None = None,
                 flags: dict[str, str] | None = None) -> RunConfig:
    """Build a validated RunConfig: defaults < preset < file < flags."""
    if command not in COMMANDS:
        raise ConfigError(f"command: unknown command {command!r}")
    raw = read_config_file(config_file) if config_file else {}
    flags = dict(flags or {})
    raw.update(flags)

    parsed = {}
    for key, value in raw.items():
        if key not in KEYS:
            raise ConfigError(f"{key}: unknown configuration key")
        try:
            parsed[key] = KEYS[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} ({exc})") from None

    train_kw: dict[str, Any] = {}
    preset = parsed.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}, choose from {sorted(PRESETS)}")
        train_kw.update(zip(PRESET_FIELDS, PRESETS[preset]))
    sections: dict[str, dict[str, Any]] = {"train": train_kw, "ablation": {}, "synth": {},
                                           "fit": {}, "paths": {}, "run": {}}
    for key, value in parsed.items():
        sections[KEYS[key].section][key] = value
    if "seed" in train_kw:
        sections["synth"]["seed"] = train_kw["seed"]
        sections["fit"]["seed"] = train_kw["seed"]

    cfg = RunConfig(command=command, overrides=flags)
    cfg.train = TrainConfig(ablation=Ablation(**sections["ablation"]), **sections["train"])
    cfg.synth = SyntheticConfig(**sections["synth"])
    _validate(cfg.train.validate)
    _validate(cfg.synth.validate)
    try:
        cfg.fit = FitOptions(**sections["fit"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg.paths = sections["paths"]
    run = sections["run"]
    cfg.eval_delta = run.get("eval_delta")
    if cfg.eval_delta is not None and not 0 < cfg.eval_delta < 1:
        raise ConfigError(f"eval_delta must lie in (0, 1), got {cfg.eval_delta}")
    cfg.dump_features = run.get("dump_features", False)
    cfg.sweep = {k[len("sweep_"):]: v for k, v in run.items() if k.startswith("sweep_")}
    for v in cfg.sweep.get("delta", []):
        if not 0 < v < 1:
            raise ConfigError(f"sweep_delta: every delta must lie in (0, 1), got {v}")
    return cfg


def _validate(fn):
    try:
        fn()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _threads() -> int:
    raw = os.environ.get("CEVT_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CEVT_THREADS: not an integer: {raw!r}") from None
    if n < 0:
        raise ConfigError("CEVT_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def _datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    if "data" in cfg.paths:
        data = load_features(cfg.paths["data"])
        return data.by_domain("source"), data.by_domain("target")
    return generate_synthetic(cfg.synth)


def cmd_generate(cfg: RunConfig) -> int:
    source, target = generate_synthetic(cfg.synth)
    out = cfg.path("output", "features.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_features(out, concat(source, target))
    print(f"wrote {len(source)} source and {len(target)} target videos to {out}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    source, target = _datasets(cfg)
    train_cfg = replace(cfg.train, workers=_threads())
    result = run_experiment(source, target, train_cfg, cfg.out_dir, cfg.eval_delta)
    print(result.report.table())
    print(f"artifacts written to {cfg.out_dir}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    _, target = _datasets(cfg)
    params = load_checkpoint(cfg.path("checkpoint", "checkpoint.bin"))
    bank = load_bank(cfg.path("bank", "bank.json"))
    report, _, probs = evaluate(params, bank, target, cfg.eval_delta)
    out = cfg.path("output", "report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report_json(report))
    if cfg.dump_features:
        source, _ = _datasets(cfg)
        write_learned_features_csv(cfg.out_dir / "learned_features.csv", concat(source, target), params)
        write_entropy_histogram_csv(cfg.out_dir / "entropy_hist.csv", prediction_entropy(probs),
                                    target.eval_labels(), target.c_known)
    print(report.table())
    return 0


def cmd_fit_gev(cfg: RunConfig) -> int:
    if "input" not in cfg.paths:
        raise ConfigError("input: fit-gev needs --input <file with one number per line>")
    src = Path(cfg.paths["input"])
    if not src.exists():
        raise ConfigError(f"input: file {src} does not exist")
    values = []
    for n, line in enumerate(src.read_text().splitlines(), 1):
        if line.strip():
            try:
                values.append(float(line))
            except ValueError:
                raise CevtError(f"{src}: line {n}: not a number: {line.strip()!r}") from None
    fit = fit_gev_detailed(np.asarray(values), cfg.fit)
    payload = json.dumps({"mu": fit.params.mu, "sigma": fit.params.sigma, "xi": fit.params.xi,
                          "nll": fit.nll, "n": len(values)}, sort_keys=True)
    if "output" in cfg.paths:
        Path(cfg.paths["output"]).write_text(payload + "\n")
    else:
        print(payload)
    return 0


def _fmt(v: float) -> str:
    return repr(float(v))


def cmd_sweep(cfg: RunConfig) -> int:
    if not cfg.sweep:
        raise ConfigError("sweep_beta: sweep needs at least one of sweep_beta, sweep_gamma, sweep_delta")
    source, target = _datasets(cfg)
    base = replace(cfg.train, workers=_threads())
    grid = {k: cfg.sweep.get(k, [getattr(base, k)]) for k in ("beta", "gamma", "delta")}
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for beta, gamma, delta in itertools.product(grid["beta"], grid["gamma"], grid["delta"]):
        cell = replace(base, beta=beta, gamma=gamma, delta=delta)
        result = run_experiment(source, target, cell, None, cfg.eval_delta)
        name = f"report_beta{_fmt(beta)}_gamma{_fmt(gamma)}_delta{_fmt(delta)}.json"
        (out / name).write_text(report_json(result.report))
        r = result.report
        rows.append([_fmt(beta), _fmt(gamma), _fmt(delta), _fmt(r.all), _fmt(r.os),
                     _fmt(r.os_star), _fmt(r.unk), _fmt(r.hos), name])
        print(f"beta={beta} gamma={gamma} delta={delta}: HOS={r.hos:.2f}")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beta", "gamma", "delta", "all", "os", "os_star", "unk", "hos", "report"])
        w.writerows(rows)
    return 0


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "fit-gev": cmd_fit_gev,
    "sweep": cmd_sweep,
}


def run(cfg: RunConfig) -> int:
    """Dispatch a parsed configuration; returns the process exit code."""
    try:
        return HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        _fail("config", exc)
        return 2
    except (CevtError, OSError, RuntimeError, ValueError) as exc:
        _fail("runtime", exc)
        return 1


def _fail(kind: str, exc: Exception) -> None:
    msg = " ".join(str(exc).split())
    print(f"error: {kind}: {msg}", file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("config", Exception(message))
        raise SystemExit(2)


def _split_builtin(argv: list[str]) -> tuple[list[str], list[str]]:
    """Separate argparse-handled arguments from free-form ``--key value`` overrides.

    The command must precede the overrides.
    """
    known, rest = [], []
    seen_command = False
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok == "--config":
            known += argv[i:i + 2]
            i += 2
            continue
        if tok.startswith("--config=") or tok in ("-v", "--verbose", "-h", "--help"):
            known.append(tok)
        elif not seen_command and not tok.startswith("-"):
            known.append(tok)
            seen_command = True
        else:
            rest.append(tok)
        i += 1
    return known, rest


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _Parser(prog="cevt", description=__doc__.splitlines()[0],
                     epilog="Any configuration key may be passed as --key value. Keys: "
                     + ", ".join(sorted(KEYS)))
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--verbose", "-v", action="store_true")
    known, rest = _split_builtin(argv)
    try:
        args = parser.parse_args(known)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.command, args.config, parse_flags(rest))
    except ConfigError as exc:
        _fail("config", exc)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
