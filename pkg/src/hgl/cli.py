"""Command-line pipeline: synth, label, estimate, train, block, denoise, eval.

Every command writes into a staging directory that replaces the output
files only on success, and records a ``manifest.json`` with the resolved
arguments and library versions.  Exit codes: 0 success, 1 usage or
configuration error, 2 data error, 3 numeric failure.
"""

import argparse
import configparser
import json
import logging
import os
from pathlib import Path
import platform
import shutil
import sys
import tempfile

import numpy as np
import scipy

from . import __version__
from .blocking import (
    block_instances,
    build_block,
    estimate_block_accuracy,
    extract_candidates,
    joint_train,
    train_phrase_classifier,
    write_block,
)
from .corpus import estimate_noise_rate, load_corpus, load_dictionary, weak_label
from .denoiser import load_model, save_model, score_instances, sentence_vocab
from .errors import ConfigError, HGLError, NumericError, ParameterError, UsageError
from .evaluation import RECALL_LEVELS, RankedResult, export_denoised, pr_auc, precision_at_recall, span_f1
from .evaluation import write_metrics, write_pr_curve
from .synth import load_synth_config, SynthConfig, synth_generate, write_synth
from .training import LOSS_KINDS, Pool, TrainConfig, fit, new_model

__all__ = ["main", "run"]

log = logging.getLogger("hgl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# small file helpers


def _parse_rate_overrides(items):
    """``["PER=0.35", "LOC=0.5"]`` (noise rates) -> {type: accuracy}."""
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise ConfigError(f"--noise-rate expects TYPE=RATE, got {item!r}")
        try:
            rate = float(value)
        except ValueError:
            raise ConfigError(f"--noise-rate {item!r}: {value!r} is not a number") from None
        if not 0.0 <= rate <= 1.0:
            raise ConfigError(f"--noise-rate {item!r}: rate must lie in [0, 1]")
        out[name.strip()] = round(1.0 - rate, 12)
    return out


def _load_profile(path):
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    profile = {}
    for etype, entry in raw.items():
        if isinstance(entry, dict):
            profile[etype] = float(entry["accuracy"])
        else:
            profile[etype] = float(entry)
    return profile


def _resolve_profile(args, default_path=None):
    profile = {}
    path = getattr(args, "noise", None) or default_path
    if path is not None and Path(path).exists():
        profile.update(_load_profile(path))
    elif getattr(args, "noise", None):
        raise FileNotFoundError(f"noise profile {args.noise} not found")
    profile.update(_parse_rate_overrides(getattr(args, "noise_rate", None)))
    return profile


def _instances_by_type(instances):
    out = {}
    for inst in instances:
        out.setdefault(inst.entity_type, []).append(inst)
    return out


def _flag(value):
    return "-" if value is None else str(int(value))


def _write_instances(path, instances, scores=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ["doc_id", "sent_id", "sent_index", "start", "end", "type", "phrase", "gold"]
        fh.write("\t".join(cols + (["score"] if scores is not None else [])) + "\n")
        for k, inst in enumerate(instances):
            row = [inst.sentence.doc_id, str(inst.sentence.sent_id), str(inst.sent_index), str(inst.span.start),
                   str(inst.span.end), inst.entity_type, " ".join(inst.phrase), _flag(inst.gold)]
            if scores is not None:
                row.append(repr(float(scores[k])))
            fh.write("\t".join(row) + "\n")


def _read_scores(path):
    """Rows of a scores file as dicts; gold is True/False/None."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        need = {"type", "start", "end", "gold", "score"}
        if not need <= set(header):
            raise ParameterError(f"{path}: header must include {sorted(need)}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            vals = dict(zip(header, line.rstrip("\n").split("\t")))
            try:
                gold = {"1": True, "0": False, "-": None}[vals["gold"]]
                rows.append({**vals, "gold": gold, "score": float(vals["score"]),
                             "length": int(vals["end"]) - int(vals["start"])})
            except (KeyError, ValueError):
                raise ParameterError(f"{path}:{lineno}: malformed scores row") from None
    return rows


def _model_path(outdir, etype):
    if not etype or any(c in etype for c in "/\\\0") or etype.startswith("."):
        raise ParameterError(f"entity type {etype!r} cannot name a model file")
    return Path(outdir) / f"model-{etype}.json"


def _train_config(args):
    hidden = tuple(None if h in ("", "d") else int(h) for h in args.hidden.split(",")) if args.hidden else ()
    return TrainConfig(batch_size=args.batch_size, lr=args.lr, epochs=args.epochs, seed=args.seed, loss=args.loss,
                       dim=args.dim, hidden=hidden, context=args.context, ranking=args.ranking,
                       em_snapshot=args.em_snapshot)


def _corpus_vocab(corpus):
    return sentence_vocab(corpus.sentences)


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, out):
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.config:
        config = load_synth_config(args.config, **overrides)
    else:
        try:
            config = SynthConfig(**overrides)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    data = synth_generate(config, args.seed)
    write_synth(data, out)
    return {"synth_config": config.to_dict()}


def cmd_label(args, out):
    corpus, dictionary = load_corpus(args.corpus), load_dictionary(args.dict)
    instances = weak_label(corpus, dictionary)
    _write_instances(out / "instances.tsv", instances)
    counts = {t: len(v) for t, v in sorted(_instances_by_type(instances).items())}
    return {"counts": counts}


def cmd_estimate(args, out):
    dev, dictionary = load_corpus(args.dev), load_dictionary(args.dict)
    if not dev.has_gold:
        raise ParameterError(f"{args.dev}: noise-rate estimation needs gold tags")
    dev_pools = _instances_by_type(weak_label(dev, dictionary))
    train_pools = _instances_by_type(weak_label(load_corpus(args.train), dictionary)) if args.train else None
    profile = {}
    for etype in sorted(dev_pools):
        population = len(train_pools.get(etype, ())) if train_pools is not None else None
        entry = estimate_noise_rate(dev_pools[etype], etype, population)
        profile[etype] = {"accuracy": entry.accuracy, "population": entry.population}
    with open(out / "noise.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(profile, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"profile": profile}


def _build_block(args, corpus, dictionary, matched, etype, seed):
    cands = extract_candidates(corpus, dictionary, etype, chunker=args.chunker, matched=matched)
    clf = train_phrase_classifier(dictionary, etype, cands, seed=seed)
    return build_block(cands, clf, args.block_fraction), clf


def cmd_train(args, out):
    corpus, dictionary = load_corpus(args.corpus), load_dictionary(args.dict)
    config = _train_config(args)
    profile = _resolve_profile(args)
    matched = weak_label(corpus, dictionary)
    pools = _instances_by_type(matched)
    types = sorted(args.type) if args.type else sorted(pools)
    vocab = _corpus_vocab(corpus)
    dev = load_corpus(args.dev) if args.dev else None
    records, summary = [], {}
    for etype in types:
        if etype not in pools:
            raise ParameterError(f"no weakly labeled instances of type {etype!r}")
        if etype not in profile:
            raise ConfigError(f"no noise rate for type {etype!r}; pass --noise or --noise-rate {etype}=RATE")
        entry = {"accuracy": profile[etype], "population": len(pools[etype])}
        if args.blocking:
            block, clf = _build_block(args, corpus, dictionary, matched, etype, config.seed)
            blocked = block_instances(block, corpus, etype)
            p_blk = args.block_accuracy
            if p_blk is None:
                if dev is None:
                    raise ConfigError("blocking needs --block-accuracy or a gold --dev corpus")
                dev_cands = extract_candidates(dev, dictionary, etype, chunker=args.chunker)
                p_blk = estimate_block_accuracy(block_instances(build_block(dev_cands, clf, args.block_fraction),
                                                                dev, etype))
            model, recs = joint_train(pools[etype], blocked, profile[etype], p_blk, config,
                                      block_weight=args.block_weight, entity_type=etype, vocab=vocab)
            write_block(block, out / f"block-{etype}.tsv")
            entry.update({"block_accuracy": p_blk, "block_size": len(blocked)})
        else:
            model = new_model(pools[etype], config, entity_type=etype, vocab=vocab)
            recs = fit(model, Pool(model, pools[etype], profile[etype]), config, log_prefix={"type": etype})
        save_model(model, _model_path(out, etype))
        records.extend(recs)
        summary[etype] = entry
    with open(out / "train_log.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "profile.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"train_config": config.to_dict(), "profile": summary}


def cmd_block(args, out):
    corpus, dictionary = load_corpus(args.corpus), load_dictionary(args.dict)
    matched = weak_label(corpus, dictionary)
    types = sorted(args.type) if args.type else dictionary.types
    sizes = {}
    for etype in types:
        block, _ = _build_block(args, corpus, dictionary, matched, etype, args.seed)
        write_block(block, out / f"block-{etype}.tsv")
        sizes[etype] = {"candidates": len(block.ranked), "admitted": len(block)}
    return {"blocks": sizes}


def _load_models(models_dir):
    models = {}
    for path in sorted(Path(models_dir).glob("model-*.json")):
        model = load_model(path)
        models[model.entity_type] = model
    if not models:
        raise FileNotFoundError(f"no model-*.json files in {models_dir}")
    return models


def cmd_denoise(args, out):
    corpus, dictionary = load_corpus(args.corpus), load_dictionary(args.dict)
    models = _load_models(args.models)
    profile = _resolve_profile(args, default_path=Path(args.models) / "profile.json")
    pools = _instances_by_type(weak_label(corpus, dictionary))
    scored, all_inst, all_scores = {}, [], []
    for etype in sorted(models):
        insts = pools.get(etype, [])
        if etype not in profile:
            raise ConfigError(f"no noise rate for type {etype!r}")
        scores = score_instances(models[etype], insts) if insts else np.empty(0)
        scored[etype] = list(zip(insts, scores.tolist()))
        all_inst.extend(insts)
        all_scores.extend(scores.tolist())
    export_denoised(corpus, scored, profile, out / "denoised.tsv")
    _write_instances(out / "scores.tsv", all_inst, all_scores)
    return {"types": sorted(models), "profile": {t: profile[t] for t in sorted(models)}}


def cmd_eval(args, out):
    rows = _read_scores(args.scores)
    report = {"types": {}}
    by_type = {}
    for r in rows:
        by_type.setdefault(r["type"], []).append(r)
    for etype in sorted(by_type):
        rs = by_type[etype]
        if any(r["gold"] is None for r in rs):
            raise ParameterError(f"{args.scores}: type {etype!r} has rows without gold flags")
        ranked = RankedResult.from_scores([r["score"] for r in rs], [r["gold"] for r in rs],
                                          [r["length"] for r in rs])
        entry = {"instances": len(rs), "positives": int(ranked.gold.sum())}
        if entry["positives"]:
            curve = pr_auc(ranked)
            entry["auc"] = curve.auc
            entry["precision_at_recall"] = {str(k): v for k, v in precision_at_recall(ranked, RECALL_LEVELS).items()}
            entry["token_precision_at_recall"] = {
                str(k): v for k, v in precision_at_recall(ranked, RECALL_LEVELS, token_level=True).items()}
            write_pr_curve(curve, out / f"pr-{etype}.csv")
        else:
            entry["auc"] = None
        report["types"][etype] = entry
    if args.predicted or args.gold:
        if not (args.predicted and args.gold):
            raise UsageError("--predicted and --gold must be given together")
        pred, gold = load_corpus(args.predicted), load_corpus(args.gold)
        if len(pred) != len(gold):
            raise ParameterError("predicted and gold corpora have different sentence counts")
        p, r, f = span_f1(pred.gold_mentions(), gold.gold_mentions())
        report["span"] = {"precision": p, "recall": r, "f1": f}
    write_metrics(report, out / "metrics.json")
    return {}


# --------------------------------------------------------------------------
# argument parsing


def _add_train_options(p):
    p.add_argument("--loss", choices=LOSS_KINDS, default="hgl")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=150)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--hidden", default="d", help="comma-separated hidden widths; 'd' means the embedding width")
    p.add_argument("--context", type=int, default=0)
    p.add_argument("--ranking", choices=("batch", "epoch"), default="batch")
    p.add_argument("--em-snapshot", choices=("batch", "epoch"), default="batch")


def _add_noise_options(p):
    p.add_argument("--noise", help="noise profile JSON (from `estimate`)")
    p.add_argument("--noise-rate", action="append", metavar="TYPE=RATE",
                   help="explicit noise rate for a type; repeatable; overrides --noise")


def _add_block_options(p):
    p.add_argument("--block-fraction", type=float, default=0.1)
    p.add_argument("--chunker", choices=("auto", "capitalized", "column"), default="auto")


def build_parser():
    parser = _Parser(prog="hgl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hgl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value file of option defaults (command line wins)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus, dev set and dictionary")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one generator setting")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", parents=[common], help="weak-label a corpus with a dictionary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("estimate", parents=[common], help="estimate per-type noise rates from a gold dev corpus")
    p.add_argument("--dev", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--train", help="training corpus; sets the population size")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("train", parents=[common], help="train one denoiser per entity type")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--type", action="append", help="restrict to these types; repeatable")
    _add_train_options(p)
    _add_noise_options(p)
    p.add_argument("--blocking", action="store_true", help="train jointly with a mention block")
    _add_block_options(p)
    p.add_argument("--block-weight", type=float, default=1.0)
    p.add_argument("--block-accuracy", type=float, help="true-mention rate of the block")
    p.add_argument("--dev", help="gold dev corpus for estimating the block accuracy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("block", parents=[common], help="score candidate phrases and dump the block")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--type", action="append")
    p.add_argument("--seed", type=int, required=True)
    _add_block_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_block)

    p = sub.add_parser("denoise", parents=[common], help="rank weak labels and export the denoised corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--models", required=True, help="directory written by `train`")
    _add_noise_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", parents=[common], help="ranking metrics and span F1")
    p.add_argument("--scores", required=True, help="scores.tsv written by `denoise`")
    p.add_argument("--predicted", help="denoised corpus for span F1")
    p.add_argument("--gold", help="gold corpus for span F1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def _read_flat_config(path):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string("[options]\n" + Path(path).read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {k.replace("-", "_"): v for k, v in cp["options"].items()}


def _apply_config(parser, argv):
    """Parse ``argv`` with config-file values as subcommand defaults.

    ``synth`` reads its own generator config instead.
    """
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    pre, rest = probe.parse_known_args(argv)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((tok for tok in rest if tok in subparsers.choices), None)
    if pre.config and command and command != "synth":
        if not Path(pre.config).is_file():
            raise FileNotFoundError(f"config file not found: {pre.config}")
        sub = subparsers.choices[command]
        actions = {a.dest: a for a in sub._actions}
        values = _read_flat_config(pre.config)
        unknown = sorted(set(values) - set(actions) - {"help"})
        if unknown:
            raise ConfigError(f"{pre.config}: unknown options for {command}: {unknown}")
        defaults = {}
        for key, raw in values.items():
            act = actions[key]
            try:
                if act.nargs == 0:
                    defaults[key] = raw.strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(act, argparse._AppendAction):
                    defaults[key] = [v.strip() for v in raw.split(",") if v.strip()]
                else:
                    defaults[key] = act.type(raw) if act.type else raw
            except ValueError:
                raise ConfigError(f"{pre.config}: bad value {raw!r} for {key}") from None
            if act.choices is not None and defaults[key] not in act.choices:
                raise ConfigError(f"{pre.config}: {key} must be one of {sorted(act.choices)}")
            # Satisfied by the file, so no longer required on the command line.
            act.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _manifest(args, extra):
    echo = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "verbose")}
    return {
        "command": args.command,
        "arguments": echo,
        "seed": getattr(args, "seed", None),
        "versions": {
            "hgl": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        **extra,
    }


def _check_inputs(args):
    for name in ("corpus", "dict", "dev", "train", "scores", "predicted", "gold", "noise", "config"):
        path = getattr(args, name, None)
        if path is not None and not Path(path).is_file():
            raise FileNotFoundError(f"input file not found: {path}")
    models = getattr(args, "models", None)
    if models is not None and not Path(models).is_dir():
        raise FileNotFoundError(f"model directory not found: {models}")


def run(argv=None):
    """Run one subcommand; returns the process exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    staging = None
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _check_inputs(args)
        out = Path(args.out)
        if out.exists() and not out.is_dir():
            raise UsageError(f"--out {out} exists and is not a directory")
        out.parent.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
        extra = args.func(args, staging)
        with open(staging / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_manifest(args, extra), fh, indent=2, sort_keys=True)
            fh.write("\n")
        out.mkdir(exist_ok=True)
        for item in sorted(staging.iterdir()):
            os.replace(item, out / item.name)
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        print(f"hgl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"hgl: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (HGLError, OSError, ValueError, KeyError) as exc:
        print(f"hgl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        if staging is not None and staging.exists():
            shutil.rmtree(staging, ignore_errors=True)


def main():
    sys.exit(run())
