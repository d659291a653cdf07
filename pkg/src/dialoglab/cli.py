"""``dialoglab`` command line: train, generate, evaluate, compare, perturb,
heatmap, stats and gradcheck.

Configuration is a flat ``key = value`` file (``#`` comments) overridden by
``--set key=value`` and the dedicated flags.  Precedence, highest first:
command-line flags, the ``DIALOGLAB_SEED`` environment variable (seed only),
the config file, built-in defaults.  Relative corpus/embedding paths in a
config file are resolved against the file's directory.

Every command writes under ``--out`` and refreshes ``manifest.json`` there.
Errors print one line, ``error: <code>: <message>``, and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from dialoglab.corpus import Corpus, build_vocab, encode_dialog, format_stats, load_corpus, split_corpus, stats
from dialoglab.errors import CompatibilityError, ConfigError, DialogLabError
from dialoglab.models import ARCHITECTURES, ModelConfig, build_model, check_architecture, display_name
from dialoglab.models.checkpoint import load_checkpoint
from dialoglab.training import TrainConfig, train

SEED_ENV = "DIALOGLAB_SEED"

_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"architecture", "vocab_size", "word_attention"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}

# key -> (parser, default); None parser means free string
_SETTINGS: dict[str, tuple] = {
    "arch": (str, "hred_wa"),
    "train": (str, None),
    "valid": (str, None),
    "test": (str, None),
    "embeddings": (str, None),
    "embedding_dim": (int, 64),
    "embedding_seed": (int, 0),
    "max_turns": (int, None),
    "max_len": (int, None),
    "vocab_max": (int, 50000),
    "min_freq": (int, 1),
    "lowercase": ("bool", True),
    "valid_fraction": (float, 0.1),
    "scorer_epochs": (int, 200),
    "metrics": (str, "learned_score,greedy_idf_f1"),
    "kinds": (str, "all"),
}
_PATH_KEYS = ("train", "valid", "test", "embeddings")


def _field_parser(cls, name):
    default = next(f for f in fields(cls) if f.name == name).default
    if isinstance(default, bool):
        return "bool", default
    if isinstance(default, int):
        return int, default
    if isinstance(default, float):
        return float, default
    return int, default  # optional ints (d_model, attn_dim)


for _k in sorted(_MODEL_KEYS):
    _SETTINGS[_k] = _field_parser(ModelConfig, _k)
for _k in sorted(_TRAIN_KEYS):
    _SETTINGS[_k] = _field_parser(TrainConfig, _k)


def _coerce(key: str, raw):
    if key not in _SETTINGS:
        raise ConfigError(f"unknown config key {key!r}")
    parser, _ = _SETTINGS[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if parser == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return parser(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {parser.__name__}") from None


def parse_config_text(text: str, base_dir: Path | None = None) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = _coerce(key, value)
        if key in _PATH_KEYS and values[key] is not None and base_dir is not None:
            p = Path(values[key])
            values[key] = str(p if p.is_absolute() else base_dir / p)
    return values


def resolve_settings(config_path=None, overrides: dict | None = None, env=None) -> dict:
    """Defaults < config file < DIALOGLAB_SEED < command-line overrides."""
    env = os.environ if env is None else env
    settings = {k: default for k, (_, default) in _SETTINGS.items()}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        settings.update(parse_config_text(path.read_text(encoding="utf-8"), path.parent))
    if env.get(SEED_ENV, "").strip():
        settings["seed"] = _coerce("seed", env[SEED_ENV])
    for key, value in (overrides or {}).items():
        settings[key] = _coerce(key, value)
    check_architecture(settings["arch"])
    return settings


def model_config(settings: dict, vocab_size: int) -> ModelConfig:
    kwargs = {k: settings[k] for k in _MODEL_KEYS if settings.get(k) is not None}
    return ModelConfig(settings["arch"], vocab_size, **kwargs)


def train_config(settings: dict) -> TrainConfig:
    return TrainConfig(**{k: settings[k] for k in _TRAIN_KEYS if settings.get(k) is not None})


def _require(settings: dict, *keys):
    for key in keys:
        if settings.get(key) is None:
            raise ConfigError(f"missing required setting {key!r}")
        if key in _PATH_KEYS and not Path(settings[key]).exists():
            raise ConfigError(f"{key} path {settings[key]} does not exist")


def _corpus(settings, key) -> Corpus:
    return load_corpus(settings[key], lowercase=settings["lowercase"])


# outputs ------------------------------------------------------------------------------------


class Outputs:
    """Writes files under the output directory and keeps the manifest current."""

    def __init__(self, root, command: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.files: list[str] = []

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if rel not in self.files:
            self.files.append(rel)
        return p

    def text(self, rel: str, content: str) -> Path:
        p = self.path(rel)
        p.write_text(content, encoding="utf-8")
        return p

    def json(self, rel: str, data) -> Path:
        return self.text(rel, json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")

    def finish(self) -> None:
        manifest = self.root / "manifest.json"
        entries = {}
        if manifest.is_file():
            try:
                for e in json.loads(manifest.read_text(encoding="utf-8")).get("files", []):
                    entries[e["path"]] = e
            except (ValueError, KeyError, TypeError):
                entries = {}
        for rel in self.files:
            digest = hashlib.sha256((self.root / rel).read_bytes()).hexdigest()
            entries[rel] = {"path": rel, "sha256": digest, "command": self.command}
        body = {"files": [entries[k] for k in sorted(entries)]}
        manifest.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# commands -----------------------------------------------------------------------------------


def cmd_train(settings: dict, out: Outputs) -> int:
    _require(settings, "train")
    corpus = _corpus(settings, "train")
    if settings.get("valid"):
        _require(settings, "valid")
        train_dialogs, valid_dialogs = list(corpus), list(_corpus(settings, "valid"))
    else:
        train_dialogs, valid_dialogs = split_corpus(corpus, settings["seed"], 1.0 - settings["valid_fraction"])
    vocab = build_vocab(train_dialogs, settings["vocab_max"], settings["min_freq"])

    def enc(ds):
        return [encode_dialog(d, vocab, settings["max_turns"], settings["max_len"]) for d in ds]

    cfg = model_config(settings, len(vocab))
    tcfg = train_config(settings)
    model = build_model(cfg, tcfg.seed)
    ckpt_extra = {"max_turns": settings["max_turns"], "max_len": settings["max_len"], "lowercase": settings["lowercase"]}
    from dialoglab.models.checkpoint import save_checkpoint

    log = train(model, enc(train_dialogs), enc(valid_dialogs), tcfg)
    arch = cfg.architecture
    save_checkpoint(out.path(f"{arch}/best.ckpt"), model, vocab, dict(ckpt_extra, best_epoch=log.best_epoch))
    out.text(f"{arch}/train_log.csv", log.to_csv())
    out.text(f"{arch}/train_log.json", log.to_json() + "\n")
    out.json(f"{arch}/config.json", {"model": cfg.to_dict(), "train": tcfg.to_dict(), "corpus": ckpt_extra})
    print(f"trained {arch}: {len(log)} epochs, best valid loss {log.best_valid:.4f} at epoch {log.best_epoch}")
    print(f"checkpoint: {out.root / arch / 'best.ckpt'}")
    return 0


def _load(path):
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint {path} does not exist")
    return load_checkpoint(path)


def _encode_for(header, vocab, dialogs):
    extra = header.get("extra", {})
    return [encode_dialog(d, vocab, extra.get("max_turns"), extra.get("max_len")) for d in dialogs]


def _generate(model, vocab, header, dialogs, max_len=None, batch_size: int = 32):
    encoded = _encode_for(header, vocab, dialogs)
    traces = []
    for start in range(0, len(encoded), batch_size):
        traces.extend(model.generate_batch(encoded[start : start + batch_size], max_len))
    return encoded, traces


def cmd_generate(settings: dict, out: Outputs, checkpoint: str) -> int:
    _require(settings, "test")
    model, vocab, header = _load(checkpoint)
    dialogs = list(_corpus(settings, "test"))
    _, traces = _generate(model, vocab, header, dialogs, settings.get("max_decode_len"))
    lines = []
    for d, t in zip(dialogs, traces):
        lines.append(
            json.dumps(
                {
                    "context": [" ".join(u.tokens) for u in d.context],
                    "reference": " ".join(d.response.tokens),
                    "output": " ".join(vocab.decode(t.tokens, strip_special=True)),
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    out.text("generations.jsonl", "\n".join(lines) + "\n")
    print(f"wrote {len(lines)} generations to {out.root / 'generations.jsonl'}")
    return 0


def _provider(settings, references):
    from dialoglab.metrics import FileEmbeddings, RandomEmbeddings

    if settings.get("embeddings"):
        _require(settings, "embeddings")
        provider = FileEmbeddings.from_file(settings["embeddings"])
    else:
        provider = RandomEmbeddings(settings["embedding_dim"], settings["embedding_seed"])
    return provider.fit_idf(references)


def _scorer(settings, provider, fallback_dialogs):
    """Learned scorer trained on the training corpus when configured, else on ``fallback_dialogs``."""
    from dialoglab.metrics import train_unreferenced

    if settings.get("scorer_epochs") == 0:
        return None
    source = list(_corpus(settings, "train")) if settings.get("train") else list(fallback_dialogs)
    return train_unreferenced(source, provider, seed=settings["seed"], epochs=settings["scorer_epochs"])


def _score_checkpoint(model, vocab, header, dialogs, provider, scorer, settings):
    from dialoglab.metrics import evaluate

    _, traces = _generate(model, vocab, header, dialogs, settings.get("max_decode_len"))
    outputs = [vocab.decode(t.tokens, strip_special=True) for t in traces]
    refs = [list(d.response.tokens) for d in dialogs]
    return evaluate(outputs, refs, [d.context for d in dialogs], provider, scorer), outputs


def cmd_evaluate(settings: dict, out: Outputs, checkpoint: str) -> int:
    from dialoglab.metrics import format_table

    _require(settings, "test")
    if settings.get("train"):
        _require(settings, "train")
    model, vocab, header = _load(checkpoint)
    dialogs = list(_corpus(settings, "test"))
    provider = _provider(settings, [d.response.tokens for d in dialogs])
    scorer = _scorer(settings, provider, dialogs)
    report, _ = _score_checkpoint(model, vocab, header, dialogs, provider, scorer, settings)
    name = display_name(model.architecture)
    out.text("metrics.json", report.to_json())
    table = format_table([(name, report)])
    out.text("metrics.txt", table)
    sys.stdout.write(table)
    return 0


def rank_marks(rows: Sequence[tuple[str, object]], columns: Sequence[str]) -> dict:
    """``*`` for the best and ``+`` for the second-best value per column (higher is
    better); ties go to the row listed first."""
    marks = {}
    for col in columns:
        vals = [(getattr(rep, col), i) for i, (_, rep) in enumerate(rows) if getattr(rep, col) is not None]
        order = sorted(vals, key=lambda t: (-t[0], t[1]))
        for symbol, (_, i) in zip("*+", order):
            marks[(rows[i][0], col)] = symbol
    return marks


def cmd_compare(settings: dict, out: Outputs, checkpoints: Sequence[str]) -> int:
    from dialoglab.metrics import COLUMNS, format_table

    if len(checkpoints) < 2:
        raise ConfigError("compare needs at least two checkpoints")
    _require(settings, "test")
    loaded = [_load(p) for p in checkpoints]
    vocab0 = loaded[0][1]
    for path, (_, vocab, _) in zip(checkpoints[1:], loaded[1:]):
        if vocab != vocab0:
            raise CompatibilityError(f"{path} uses a different vocabulary than {checkpoints[0]}")
    dialogs = list(_corpus(settings, "test"))
    provider = _provider(settings, [d.response.tokens for d in dialogs])
    scorer = _scorer(settings, provider, dialogs)
    rows, seen = [], {}
    for path, (model, vocab, header) in zip(checkpoints, loaded):
        name = display_name(model.architecture)
        seen[name] = seen.get(name, 0) + 1
        if seen[name] > 1:
            name = f"{name} [{seen[name]}]"
        report, _ = _score_checkpoint(model, vocab, header, dialogs, provider, scorer, settings)
        rows.append((name, report))
    marks = rank_marks(rows, list(COLUMNS))
    table = format_table(rows, marks)
    out.text("compare.txt", table + "* best, + second best\n")
    out.json(
        "compare.json",
        {
            "rows": [{"model": n, "checkpoint": str(p), "metrics": r.to_dict()} for (n, r), p in zip(rows, checkpoints)],
            "marks": {f"{n}|{c}": m for (n, c), m in sorted(marks.items())},
        },
    )
    sys.stdout.write(table)
    return 0


def _kinds(settings) -> list[str]:
    from dialoglab.perturb import KINDS, check_kind

    raw = settings["kinds"]
    if raw in (None, "all"):
        return list(KINDS)
    return [check_kind(k.strip()) for k in raw.split(",") if k.strip()]


def cmd_perturb(settings: dict, out: Outputs, checkpoint: str) -> int:
    from dialoglab.perturb import model_generator, perturbation_suite, report_metrics

    _require(settings, "test")
    model, vocab, header = _load(checkpoint)
    dialogs = list(_corpus(settings, "test"))
    kinds = _kinds(settings)
    names = [m.strip() for m in settings["metrics"].split(",") if m.strip()]
    provider = _provider(settings, [d.response.tokens for d in dialogs])
    scorer = _scorer(settings, provider, dialogs) if "learned_score" in names else None
    extra = header.get("extra", {})
    from dialoglab.corpus import truncate

    def gen(ds):
        trimmed = [truncate(d, extra.get("max_turns"), extra.get("max_len")) for d in ds]
        return model_generator(model, vocab, settings.get("max_decode_len"))(trimmed)

    report = perturbation_suite(gen, dialogs, report_metrics(names, provider, scorer), kinds, settings["seed"])
    out.text("perturb.json", report.to_json())
    out.text("perturb.txt", report.format())
    sys.stdout.write(report.format())
    return 0


def heatmap_records(model, vocab, header, dialogs, max_len=None) -> list[dict]:
    """Per dialog: context tokens and, per generated token, the attention
    distributions that produced it (``null`` for levels the model lacks)."""
    encoded, traces = _generate(model, vocab, header, dialogs, max_len)
    records = []
    for enc, trace in zip(encoded, traces):
        steps = []
        for tok, att in zip(trace.tokens, trace.steps):
            steps.append(
                {
                    "token": vocab.decode([tok])[0],
                    "word_weights": None if att.word_weights is None else [w.tolist() for w in att.word_weights],
                    "utterance_weights": None if att.utterance_weights is None else att.utterance_weights.tolist(),
                    "extra": {k: v.tolist() for k, v in sorted(att.extra.items())},
                }
            )
        records.append({"context": [vocab.decode(u) for u in enc.context], "steps": steps})
    return records


def cmd_heatmap(settings: dict, out: Outputs, checkpoint: str, dialogs_path: str | None) -> int:
    model, vocab, header = _load(checkpoint)
    if dialogs_path is not None:
        settings = dict(settings, test=dialogs_path)
    _require(settings, "test")
    dialogs = list(_corpus(settings, "test"))
    records = heatmap_records(model, vocab, header, dialogs, settings.get("max_decode_len"))
    out.json("heatmap.json", {"architecture": model.architecture, "dialogs": records})
    print(f"wrote attention for {len(records)} dialogs to {out.root / 'heatmap.json'}")
    return 0


def cmd_stats(settings: dict, out: Outputs, corpora: Sequence[str]) -> int:
    paths = list(corpora) or [settings[k] for k in ("train", "valid", "test") if settings.get(k)]
    if not paths:
        raise ConfigError("stats needs at least one corpus path")
    rows = []
    for p in paths:
        if not Path(p).is_file():
            raise ConfigError(f"corpus {p} does not exist")
        rows.append(stats(load_corpus(p, lowercase=settings["lowercase"])))
    table = format_stats(rows) + "\n"
    out.text("stats.txt", table)
    out.json("stats.json", [r.to_dict() for r in rows])
    sys.stdout.write(table)
    return 0


def cmd_gradcheck(settings: dict, out: Outputs, archs: Sequence[str], sweep: bool) -> int:
    from dialoglab.verify import GRADCHECK_TOLERANCE, parameter_sweep, tiny_gradcheck

    archs = list(archs) or list(ARCHITECTURES)
    results = {}
    ok = True
    for arch in archs:
        check_architecture(arch)
        res = tiny_gradcheck(arch, seed=settings["seed"])
        passed = res.max_error < GRADCHECK_TOLERANCE
        ok &= passed
        entry = res.to_dict()
        line = f"{arch:<14} input-to-loss max relative error {res.max_error:.3e}  {'ok' if passed else 'FAIL'}"
        if sweep:
            sw = parameter_sweep(arch, seed=settings["seed"])
            entry["sweep"] = {
                "coordinates": sw.coordinates,
                "max_error": sw.max_error,
                "quantum": sw.quantum,
                "max_gap_quanta": sw.max_gap_quanta,
                "failures": sw.failures,
            }
            line += f" | all parameters: max {sw.max_error:.2e}, {len(sw.failures)}/{sw.coordinates} coordinates >= tol"
            line += f", worst gap {sw.max_gap_quanta:.2f} loss quanta"
        print(line)
        results[arch] = entry
    out.json("gradcheck.json", results)
    return 0 if ok else 1


# argument parsing -----------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dialoglab", description="Multi-turn dialog generation toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", default="runs", help="output directory (default: runs)")
        p.add_argument("--seed", type=int, help="random seed (overrides config and DIALOGLAB_SEED)")
        return p

    p = common(sub.add_parser("train", help="train one architecture"))
    p.add_argument("--arch", help="architecture: " + ", ".join(ARCHITECTURES))
    p.add_argument("--corpus", help="training corpus (jsonl)")
    p.add_argument("--epochs", type=int)

    for name, text in (("generate", "greedy decoding"), ("evaluate", "automatic metrics")):
        p = common(sub.add_parser(name, help=text))
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--corpus", help="test corpus (jsonl)")

    p = common(sub.add_parser("compare", help="metric table over several checkpoints"))
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--corpus", help="test corpus (jsonl)")

    p = common(sub.add_parser("perturb", help="context perturbation test"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", help="test corpus (jsonl)")
    p.add_argument("--kinds", help="comma-separated perturbations or 'all'")
    p.add_argument("--metrics", help="comma-separated metric fields")

    p = common(sub.add_parser("heatmap", help="export attention weights per decoded token"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dialogs", help="dialogs to decode (jsonl)")

    p = common(sub.add_parser("stats", help="corpus statistics table"))
    p.add_argument("corpora", nargs="*")

    p = common(sub.add_parser("gradcheck", help="end-to-end gradient check at tiny dimensions"))
    p.add_argument("--arch", action="append", default=[], help="repeatable; default all twelve")
    p.add_argument("--sweep", action="store_true", help="also probe every parameter coordinate (slow)")
    return parser


def _overrides(args) -> dict:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.command == "train":
        if args.arch:
            overrides["arch"] = args.arch
        if args.corpus:
            overrides["train"] = args.corpus
        if args.epochs is not None:
            overrides["epochs"] = args.epochs
    elif getattr(args, "corpus", None):
        overrides["test"] = args.corpus
    if args.command == "perturb":
        if args.kinds:
            overrides["kinds"] = args.kinds
        if args.metrics:
            overrides["metrics"] = args.metrics
    return overrides


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = resolve_settings(args.config, _overrides(args))
    out = Outputs(args.out, args.command)
    if args.command == "train":
        code = cmd_train(settings, out)
    elif args.command == "generate":
        code = cmd_generate(settings, out, args.checkpoint)
    elif args.command == "evaluate":
        code = cmd_evaluate(settings, out, args.checkpoint)
    elif args.command == "compare":
        code = cmd_compare(settings, out, args.checkpoints)
    elif args.command == "perturb":
        code = cmd_perturb(settings, out, args.checkpoint)
    elif args.command == "heatmap":
        code = cmd_heatmap(settings, out, args.checkpoint, args.dialogs)
    elif args.command == "stats":
        code = cmd_stats(settings, out, args.corpora)
    else:
        code = cmd_gradcheck(settings, out, args.arch, args.sweep)
    out.finish()
    return code


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


def main(argv: Sequence[str] | None = None) -> int:
    try:
        return run(argv)
    except DialogLabError as exc:
        print(f"error: {exc.code}: {_one_line(exc)}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
