"""Command-line entry point: ``adaptmix {train,eval,synth,report}``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import copy
import csv
import logging
import shutil
import sys
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from . import nnlm
from .corpus import CorpusError, CorpusSet, MarkovSpec, Vocab, build_vocab, generate_synthetic, load_corpus
from .eval_report import emit_report, evaluate_ppl, plot_trajectories, read_trajectory, write_results
from .experiments import adaptation_setup
from .nnlm import CheckpointError, ModelConfig
from .sampler import WeightsError
from .trainer import EpochRecord, TrainConfig, TrainingDiverged, TrainReport, train

log = logging.getLogger("adaptmix")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

DEFAULT_SPEC = {
    "name": None,
    "output_dir": "runs/{name}",
    "corpora": [],
    "validation": None,
    "test": [],
    "vocab": {"max_size": 8000, "file": None},
    "model": {"context_size": 3, "embed_dim": 32, "hidden_dim": 64, "seed": 0},
    "train": {f.name: f.default for f in fields(TrainConfig)},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _apply_override(spec: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    node = spec
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} does not address a config section")
    node[parts[-1]] = yaml.safe_load(raw)


def load_run_spec(path, overrides=()) -> dict:
    """Read a run config, fill defaults, apply overrides and resolve paths."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: run config must be a mapping")
    unknown = set(raw) - set(DEFAULT_SPEC)
    if unknown:
        raise ConfigError(f"{path}: unknown config fields {sorted(unknown)}")
    spec = _merge(DEFAULT_SPEC, raw)
    for item in overrides:
        _apply_override(spec, item)
    base = path.parent
    spec["name"] = spec["name"] or path.stem
    if not spec["corpora"]:
        raise ConfigError("config field 'corpora' must list at least one training corpus")
    for c in spec["corpora"]:
        if not isinstance(c, dict) or "path" not in c:
            raise ConfigError("each entry of 'corpora' needs a 'path'")
        c["path"] = str(base / c["path"])
        c.setdefault("name", Path(c["path"]).stem)
    if not spec["validation"]:
        raise ConfigError("config field 'validation' is required")
    spec["validation"] = str(base / spec["validation"])
    tests = spec["test"] or []
    spec["test"] = [str(base / t) for t in ([tests] if isinstance(tests, str) else tests)]
    if spec["vocab"].get("file"):
        spec["vocab"]["file"] = str(base / spec["vocab"]["file"])
    spec["output_dir"] = str(base / str(spec["output_dir"]).format(name=spec["name"]))
    unknown_train = set(spec["train"]) - {f.name for f in fields(TrainConfig)}
    if unknown_train:
        raise ConfigError(f"unknown train fields {sorted(unknown_train)}")
    return spec


def _check_paths(spec: dict) -> None:
    paths = [c["path"] for c in spec["corpora"]] + [spec["validation"], *spec["test"]]
    if spec["vocab"].get("file"):
        paths.append(spec["vocab"]["file"])
    missing = [p for p in paths if not Path(p).is_file()]
    if missing:
        raise FileNotFoundError(f"missing input file(s): {', '.join(missing)}")


def _train_config(spec: dict) -> TrainConfig:
    try:
        return TrainConfig(**spec["train"])
    except WeightsError as exc:
        raise ConfigError(f"train.static_weights: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    for flag in ("strategy", "epochs", "workers", "seed"):
        if getattr(args, flag) is not None:
            overrides.append(f"train.{flag}={getattr(args, flag)}")
    if args.seed is not None:
        overrides.append(f"model.seed={args.seed}")
    spec = load_run_spec(args.config, overrides)
    if args.out:
        spec["output_dir"] = args.out
    cfg = _train_config(spec)
    _check_paths(spec)
    out = Path(spec["output_dir"])
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    with open(out / "config.resolved.yaml", "w", encoding="utf-8") as fh:
        resolved = copy.deepcopy(spec)
        resolved["train"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}
        yaml.safe_dump(resolved, fh, sort_keys=True)

    if spec["vocab"].get("file"):
        vocab = Vocab.load(spec["vocab"]["file"])
    else:
        # validation/test text never feeds the vocabulary
        vocab = build_vocab([c["path"] for c in spec["corpora"]], int(spec["vocab"]["max_size"]))
    vocab.save(out / "vocab.txt")
    corpora = tuple(load_corpus(c["path"], vocab, c["name"]) for c in spec["corpora"])
    cs = CorpusSet(corpora, load_corpus(spec["validation"], vocab, "validation"))
    mcfg = ModelConfig(vocab_size=len(vocab), **spec["model"])
    meta = {"run": spec["name"], "strategy": cfg.strategy, "corpora": [c.name for c in corpora]}

    def on_epoch(epoch, model, rec):
        nnlm.save_checkpoint(model, out / "checkpoints" / f"epoch_{epoch:03d}.ckpt", vocab, meta)

    traj = out / f"trajectory_{spec['name']}.csv"
    try:
        model, report = train(cs, mcfg, cfg, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        exc.report.to_csv(traj)
        print(f"error: training diverged ({exc}); partial trajectory in {traj}", file=sys.stderr)
        return EXIT_DIVERGED
    nnlm.save_checkpoint(model, out / "final.ckpt", vocab, meta)
    evals = [evaluate_ppl(model, load_corpus(t, vocab)) for t in spec["test"]]
    emit_report([report], [evals], out, [spec["name"]])
    for ev in evals:
        print(f"{ev.corpus_name}\tppl={ev.ppl:.4f}\tnll={ev.nll_per_token:.5f}\ttokens={ev.tokens}")
    print(f"wrote {traj}")
    return EXIT_OK


def cmd_eval(args) -> int:
    header = nnlm.read_checkpoint_header(args.checkpoint)
    model = nnlm.load_checkpoint(args.checkpoint)
    if args.vocab:
        vocab = Vocab.load(args.vocab)
    elif "vocab" in header:
        vocab = Vocab(header["vocab"])
    else:
        raise ConfigError("checkpoint carries no vocabulary; pass --vocab")
    if len(vocab) != model.config.vocab_size:
        raise ConfigError("vocabulary size does not match the checkpoint")
    missing = [t for t in args.test if not Path(t).is_file()]
    if missing:
        raise FileNotFoundError(f"missing test file(s): {', '.join(missing)}")
    meta = header.get("meta", {})
    strategy = meta.get("strategy", "unknown")
    corpora = "+".join(meta.get("corpora", []))
    rows = []
    for t in args.test:
        ev = evaluate_ppl(model, load_corpus(t, vocab))
        rows.append((strategy, corpora, ev))
        print(f"{ev.corpus_name}\tppl={ev.ppl:.4f}\tnll={ev.nll_per_token:.5f}\ttokens={ev.tokens}")
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "results.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results(rows, out)
    return EXIT_OK


PRESET_RUNS = {
    "adaptive": {"strategy": "adaptive"},
    "uniform": {"strategy": "uniform"},
    "ngram_opt": {"strategy": "ngram_opt"},
}


def write_preset(out: Path, seed: int) -> list[Path]:
    """Materialize the three-corpus adaptation setup plus ready-to-run configs."""
    setup = adaptation_setup(seed)
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    written = []
    for key, src in setup.sources.items():
        p = out / f"markov_{key}.yaml"
        src.save(p)
        written.append(p)
    for c in (*setup.corpus_set.corpora, setup.corpus_set.validation, setup.test):
        p = data / f"{c.name}.txt"
        c.save(p)
        written.append(p)
    for name, train_over in PRESET_RUNS.items():
        cfg = {
            "name": name,
            "output_dir": "runs/{name}",
            "corpora": [{"name": c.name, "path": f"data/{c.name}.txt"} for c in setup.corpus_set.corpora],
            "validation": "data/valid.txt",
            "test": ["data/test.txt"],
            "vocab": {"max_size": 8000},
            "model": {"context_size": 3, "embed_dim": 32, "hidden_dim": 64, "seed": seed},
            "train": {"epochs": 6, "batch_size": 32, "base_lr": 0.3, "lr_decay": 0.7, "seed": seed, **train_over},
        }
        p = out / f"{name}.yaml"
        with open(p, "w", encoding="utf-8") as fh:
            yaml.safe_dump(cfg, fh, sort_keys=False)
        written.append(p)
    return written


def cmd_synth(args) -> int:
    if args.preset:
        for p in write_preset(Path(args.out), args.seed):
            print(p)
        return EXIT_OK
    if args.spec is None:
        raise ConfigError("give a Markov spec file or --preset")
    if args.n is None or args.n < 1:
        raise ConfigError("-n must be a positive record count")
    spec = MarkovSpec.load(args.spec)
    corpus = generate_synthetic(spec, args.n, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    corpus.save(args.out)
    print(f"wrote {args.n} records to {args.out}")
    return EXIT_OK


def _load_run(run_dir: Path):
    cfg_path = run_dir / "config.resolved.yaml"
    if not cfg_path.is_file():
        raise FileNotFoundError(f"{run_dir}: no config.resolved.yaml (not a training run directory)")
    with open(cfg_path, encoding="utf-8") as fh:
        spec = yaml.safe_load(fh)
    names = [c["name"] for c in spec["corpora"]]
    report = TrainReport(spec["train"]["strategy"], names)
    for row in read_trajectory(run_dir / f"trajectory_{spec['name']}.csv"):
        report.epochs.append(EpochRecord(
            int(row["epoch"]), [float(row[f"w_{k + 1}"]) for k in range(len(names))],
            float(row["train_loss"]), float(row["val_nll"]), float(row["val_ppl"]), float(row["wall_time"])))
    return spec["name"], report


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = [_load_run(Path(d)) for d in args.runs]
    rows = []
    for d, (name, _) in zip(args.runs, runs):
        res = Path(d) / "results.csv"
        if res.is_file():
            with open(res, newline="") as fh:
                rows.extend(csv.DictReader(fh))
        traj = Path(d) / f"trajectory_{name}.csv"
        if traj.resolve() != (out / traj.name).resolve():
            shutil.copyfile(traj, out / traj.name)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "corpora", "test_set", "ppl"])
        for r in rows:
            w.writerow([r["strategy"], r["corpora"], r["test_set"], r["ppl"]])
    for r in rows:
        print(f"{r['strategy']:>10}  {r['test_set']:<12} ppl={float(r['ppl']):.4f}")
    if args.plot:
        for p in plot_trajectories([rep for _, rep in runs], [n for n, _ in runs], out):
            print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaptmix", description="Adaptive multi-corpora language model training.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one training configuration end to end")
    t.add_argument("config", help="run config (YAML)")
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config field, e.g. --set train.epochs=3 (repeatable)")
    t.add_argument("--out", help="output directory (overrides output_dir)")
    t.add_argument("--strategy", help="shortcut for --set train.strategy=...")
    t.add_argument("--epochs", type=int, help="shortcut for --set train.epochs=...")
    t.add_argument("--seed", type=int, help="seeds both training and model init")
    t.add_argument("--workers", type=int, help="parallel fine-tune workers (capped by ADAPTMIX_WORKERS)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="perplexity of a checkpoint on test corpora")
    e.add_argument("checkpoint")
    e.add_argument("test", nargs="+", help="test corpora, one record per line")
    e.add_argument("--vocab", help="vocabulary file (default: the one stored in the checkpoint)")
    e.add_argument("--out", help="results CSV path (default: results.csv next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="sample a corpus from a Markov spec, or write the bundled preset")
    s.add_argument("spec", nargs="?", help="Markov spec (YAML/JSON)")
    s.add_argument("out", help="output corpus file, or directory with --preset")
    s.add_argument("-n", type=int, help="number of records")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--preset", choices=["adaptation"],
                   help="write the three-corpus adaptation setup and run configs into OUT")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("report", help="combine finished runs into one results table and plots")
    r.add_argument("runs", nargs="+", help="run output directories")
    r.add_argument("--out", required=True)
    r.add_argument("--plot", action="store_true", help="also render trajectories.png (needs matplotlib)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CorpusError, WeightsError, CheckpointError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except nnlm.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
