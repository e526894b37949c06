"""Command-line front end: ``glyphguard <subcommand> [options]``.

Every subcommand accepts ``--config FILE``; flags override config values,
which override built-in defaults. Exit codes: 1 usage, 2 I/O, 3 protocol or
validation, 4 internal.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass

from . import attackkit, augmentor, chargraph, evaluator, fusionnet, graphembed, targets
from .config import ConfigError, coerce, load_config
from .datasets import bundled_chars, load_jsonl

log = logging.getLogger("glyphguard")

EXIT_USAGE, EXIT_IO, EXIT_INVALID, EXIT_INTERNAL = 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class _Opt:
    dest: str
    key: str | None
    kind: type
    default: object


_OPTS: dict[str, list[_Opt]] = {}


def _opt(sub, p, flag, key=None, kind=str, default=None, help=None, **kw):
    dest = flag.lstrip("-").replace("-", "_")
    if "action" not in kw:
        kw["type"] = kind
    p.add_argument(flag, dest=dest, default=None, help=help, **kw)
    _OPTS.setdefault(sub, []).append(_Opt(dest, key, kind, default))


def _resolve(args) -> dict:
    cfg = load_config(args.config) if args.config else {}
    known = {o.key for opts in _OPTS.values() for o in opts if o.key}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    out = {}
    for o in _OPTS[args.command]:
        val = getattr(args, o.dest)
        if val is None and o.key in cfg:
            val = coerce(cfg[o.key], o.kind)
        out[o.dest] = o.default if val is None else val
    return out


# ---------------------------------------------------------------------------
# shared loaders

def _graph(path):
    if path:
        return chargraph.load_graph(path)
    return chargraph.build_graph(chargraph.load_character_table(bundled_chars()))


def _classifier(o) -> attackkit.ClassifierHandle:
    if o.get("remote") and o.get("model"):
        raise UsageError("--model and --remote are mutually exclusive")
    if o.get("remote"):
        return targets.remote_adapter(o["remote"], timeout=o.get("timeout", 10.0))
    if not o.get("model"):
        raise UsageError("a classifier is required: pass --model or --remote")
    return targets.local_adapter(fusionnet.load_checkpoint(o["model"], o.get("embeddings")))


def _attack_cfg(o, max_mr=None) -> attackkit.AttackConfig:
    return attackkit.AttackConfig(algorithm=o["algo"], candidate_cap=o["candidate_cap"],
                                  max_mr=max_mr if max_mr is not None else o.get("max_mr"),
                                  seed=o["seed"], segmenter_dict=o.get("dict"))


def _sample(o):
    rows = load_jsonl(o["data"])
    if o.get("n"):
        rows = evaluator.sample_eval_set(rows, o["n"], o["seed"])
    return rows


def _emit(obj) -> None:
    print(json.dumps(obj, ensure_ascii=False, sort_keys=True))


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_build_graph(o):
    records = chargraph.load_character_table(o["chars"] or bundled_chars())
    if o["visual_features"]:
        records = chargraph.attach_visual_features(records, chargraph.load_visual_features(o["visual_features"]))
    g = chargraph.build_graph(records, glyph_threshold=o["glyph_threshold"], candidate_cap=o["candidate_cap"],
                              weights=chargraph.SimilarityWeights(o["alpha"]),
                              fuzzy_initials=o["fuzzy_initials"], frequency_cutoff=o["frequency_cutoff"])
    chargraph.save_graph(g, o["out"])
    counts = g.counts()
    _emit({"nodes": len(g.nodes), "edges": len(g.edges), **counts})


def cmd_embed(o):
    g = _graph(o["graph"])
    n2v = graphembed.Node2Vec(dim=o["dim"], p=o["p"], q=o["q"], walk_length=o["walk_length"],
                              walks_per_node=o["walks_per_node"], window=o["window"],
                              negatives=o["negatives"], epochs=o["epochs"], seed=o["seed"]).fit(g)
    n2v.embedding_table_.save(o["out"])
    _emit({"nodes": len(n2v.embedding_table_), "dim": o["dim"], "sha256": graphembed.file_sha256(o["out"])})


def cmd_train(o):
    rows = load_jsonl(o["data"])
    table = None
    if o["mode"] != "baseline":
        if not o["embeddings"]:
            raise UsageError(f"--embeddings is required for mode {o['mode']}")
        table = graphembed.EmbeddingTable.load(o["embeddings"])
    model = fusionnet.FusionClassifier(
        mode=o["mode"], node_table=table, d1=o["d1"], max_len=o["max_len"], epochs=o["epochs"],
        batch_size=o["batch_size"], lr=o["lr"], optimizer=o["optimizer"], seed=o["seed"])
    model.fit([r.text for r in rows], [r.label for r in rows])
    fusionnet.save_checkpoint(model, o["out"], o["embeddings"] if table is not None else None)
    _emit({"mode": o["mode"], "train_size": len(rows), "history": model.history_[-1]})


def cmd_attack(o):
    f = _classifier(o)
    g = _graph(o["graph"])
    rows = _sample(o)
    outs = attackkit.run_attacks(rows, f, g, _attack_cfg(o), jobs=o["jobs"])
    attackkit.save_traces(outs, o["out"])
    rep = evaluator.robustness_report(outs, o["lasr_cap"]) if any(not x.skipped for x in outs) else {}
    rep["queries"] = sum(x.queries for x in outs)
    _write_json(rep, o["report"] or o["out"] + ".report.json")
    _emit(rep)


def cmd_augment(o):
    if o["preset"] and o["epsilon"] is not None:
        raise UsageError("--preset and --epsilon are mutually exclusive")
    if o["preset"]:
        eps = augmentor.preset_epsilon(o["preset"], o["algo"])
    elif o["epsilon"] is not None:
        eps = o["epsilon"]
    else:
        raise UsageError("pass --preset or --epsilon")
    f = _classifier(o)
    g = _graph(o["graph"])
    rows = load_jsonl(o["data"])
    cfg = augmentor.AugmentConfig(epsilon_max=eps, attack=_attack_cfg(o), stop_ratio=o["stop_ratio"],
                                  shuffle_seed=o["seed"])
    if o["conventional"]:
        D_ag, rep = augmentor.conventional_augment(rows, f, g, _attack_cfg(o), jobs=o["jobs"])
    else:
        D_ag, rep = augmentor.augment(rows, f, g, cfg, jobs=o["jobs"])
        augmentor.check_report(rep)
    side = augmentor.save_augmented(D_ag, rep, o["out"])
    summary = {k: v for k, v in rep.to_dict().items() if k != "chains"}
    summary["report"] = side
    _emit(summary)


def cmd_evaluate(o):
    f = _classifier(o)
    rows = load_jsonl(o["data"])
    rep = {"accuracy": evaluator.accuracy(f, rows)}
    if o["traces"]:
        outs = attackkit.load_traces(o["traces"])
    elif o["attack"]:
        outs = attackkit.run_attacks(_sample(o), f, _graph(o["graph"]), _attack_cfg(o), jobs=o["jobs"])
    else:
        outs = None
    if outs is not None:
        rep.update(evaluator.robustness_report(outs, o["lasr_cap"]))
    if o["out"]:
        _write_json(rep, o["out"])
    _emit(rep)


def cmd_curve(o):
    caps = [float(c) for c in o["caps"].split(",")]
    if o["traces"]:
        curve = evaluator.curve_from_outcomes(attackkit.load_traces(o["traces"]), caps)
    else:
        f = _classifier(o)
        curve = evaluator.asr_curve(_sample(o), f, _graph(o["graph"]), _attack_cfg(o), caps, jobs=o["jobs"])
    evaluator.save_curve(curve, o["out"])
    _emit([list(c) for c in curve])


def cmd_export_repr(o):
    model = fusionnet.load_checkpoint(o["model"], o["embeddings"])
    texts = [r.text for r in load_jsonl(o["data"])]
    mat = fusionnet.export_representations(model, texts, o["layer"], o["out"])
    _emit({"layer": o["layer"], "rows": mat.shape[0], "cols": mat.shape[1]})


def cmd_serve_toy(o):
    handle = targets.local_adapter(fusionnet.load_checkpoint(o["model"], o["embeddings"]))
    server = targets.make_server(handle, o["host"], o["port"])
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


COMMANDS = {
    "build-graph": cmd_build_graph, "embed": cmd_embed, "train": cmd_train, "attack": cmd_attack,
    "augment": cmd_augment, "evaluate": cmd_evaluate, "curve": cmd_curve,
    "export-repr": cmd_export_repr, "serve-toy": cmd_serve_toy,
}


def _classifier_opts(sub, p):
    _opt(sub, p, "--model", "model.checkpoint", help="fusion checkpoint")
    _opt(sub, p, "--embeddings", "model.embeddings", help="override the embedding file named in the checkpoint")
    _opt(sub, p, "--remote", "model.remote", help="base URL of a classifier speaking the /predict protocol")
    _opt(sub, p, "--timeout", "model.timeout", float, 10.0)


def _attack_opts(sub, p, n_default=None):
    _opt(sub, p, "--graph", "graph.path", help="graph file (default: built from the bundled table)")
    _opt(sub, p, "--algo", "attack.algorithm", str, "textbugger", choices=attackkit.ALGORITHMS)
    _opt(sub, p, "--candidate-cap", "attack.candidate_cap", int, 40)
    _opt(sub, p, "--dict", "attack.dictionary", help="segmentation word list")
    _opt(sub, p, "--seed", "attack.seed", int, 0)
    _opt(sub, p, "--n", "eval.n", int, n_default, help="sample this many texts")
    _opt(sub, p, "--jobs", "eval.jobs", int, 1)
    _opt(sub, p, "--lasr-cap", "eval.lasr_cap", float, 0.2)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="glyphguard", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    subs = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def sub(name, help):
        p = subs.add_parser(name, help=help)
        p.add_argument("--config", help="key = value configuration file")
        return p

    p = sub("build-graph", "build the adversarial character graph")
    _opt("build-graph", p, "--chars", "graph.chars", help="character table (default: bundled)")
    _opt("build-graph", p, "--out", "graph.path", required=False)
    _opt("build-graph", p, "--glyph-threshold", "graph.glyph_threshold", float, 0.5)
    _opt("build-graph", p, "--candidate-cap", "graph.candidate_cap", int, 40)
    _opt("build-graph", p, "--alpha", "graph.alpha", float, 0.7)
    _opt("build-graph", p, "--visual-features", "graph.visual_features")
    _opt("build-graph", p, "--fuzzy-initials", "graph.fuzzy_initials", bool, False, action="store_const", const=True)
    _opt("build-graph", p, "--frequency-cutoff", "graph.frequency_cutoff", int, None)

    p = sub("embed", "train node2vec embeddings on a graph")
    _opt("embed", p, "--graph", "graph.path")
    _opt("embed", p, "--out", "embed.path")
    for flag, kind, default in (("--dim", int, 64), ("--p", float, 1.0), ("--q", float, 1.0),
                                ("--walk-length", int, 40), ("--walks-per-node", int, 10),
                                ("--window", int, 5), ("--negatives", int, 5), ("--epochs", int, 5),
                                ("--seed", int, 0)):
        _opt("embed", p, flag, "embed." + flag.lstrip("-").replace("-", "_"), kind, default)

    p = sub("train", "train a classifier")
    _opt("train", p, "--data", "model.data")
    _opt("train", p, "--mode", "model.mode", str, "full_fusion", choices=fusionnet.MODES)
    _opt("train", p, "--embeddings", "model.embeddings")
    _opt("train", p, "--out", "model.checkpoint")
    for flag, kind, default in (("--d1", int, 128), ("--max-len", int, 64), ("--epochs", int, 10),
                                ("--batch-size", int, 32), ("--lr", float, 1e-3),
                                ("--optimizer", str, "adam"), ("--seed", int, 0)):
        _opt("train", p, flag, "model." + flag.lstrip("-").replace("-", "_"), kind, default)

    p = sub("attack", "attack a classifier and store traces")
    _classifier_opts("attack", p)
    _attack_opts("attack", p)
    _opt("attack", p, "--data", "eval.data")
    _opt("attack", p, "--max-mr", "attack.max_mr", float, None)
    _opt("attack", p, "--out", "attack.traces")
    _opt("attack", p, "--report", "attack.report")

    p = sub("augment", "curriculum data augmentation")
    _classifier_opts("augment", p)
    _attack_opts("augment", p)
    _opt("augment", p, "--data", "augment.data")
    _opt("augment", p, "--out", "augment.out")
    _opt("augment", p, "--preset", "augment.preset", choices=sorted(augmentor.PRESETS))
    _opt("augment", p, "--epsilon", "augment.epsilon_max", float, None)
    _opt("augment", p, "--stop-ratio", "augment.stop_ratio", float, 1.0)
    _opt("augment", p, "--conventional", "augment.conventional", bool, False, action="store_const", const=True,
         help="attack every source and keep final adversarial texts only")

    p = sub("evaluate", "accuracy and attack success rates")
    _classifier_opts("evaluate", p)
    _attack_opts("evaluate", p)
    _opt("evaluate", p, "--data", "eval.data")
    _opt("evaluate", p, "--traces", "eval.traces", help="score stored traces instead of attacking")
    _opt("evaluate", p, "--attack", "eval.attack", bool, False, action="store_const", const=True,
         help="run the attack on the (sampled) data")
    _opt("evaluate", p, "--max-mr", "attack.max_mr", float, None)
    _opt("evaluate", p, "--out", "eval.report")

    p = sub("curve", "attack success rate against the modification budget")
    _classifier_opts("curve", p)
    _attack_opts("curve", p)
    _opt("curve", p, "--data", "eval.data")
    _opt("curve", p, "--traces", "eval.traces")
    _opt("curve", p, "--caps", "eval.caps", str, "0.1,0.2,0.3,0.4,0.5")
    _opt("curve", p, "--out", "eval.curve")

    p = sub("export-repr", "dump per-text representations of one layer")
    _opt("export-repr", p, "--model", "model.checkpoint")
    _opt("export-repr", p, "--embeddings", "model.embeddings")
    _opt("export-repr", p, "--data", "eval.data")
    _opt("export-repr", p, "--layer", "eval.layer", str, "H4", choices=fusionnet.LAYERS)
    _opt("export-repr", p, "--out", "eval.repr")

    p = sub("serve-toy", "serve a checkpoint over the /predict protocol")
    _opt("serve-toy", p, "--model", "model.checkpoint")
    _opt("serve-toy", p, "--embeddings", "model.embeddings")
    _opt("serve-toy", p, "--host", "serve.host", str, "127.0.0.1")
    _opt("serve-toy", p, "--port", "serve.port", int, 8765)
    return ap


_REQUIRED = {
    "build-graph": ("out",), "embed": ("out",), "train": ("data", "out"), "attack": ("data", "out"),
    "augment": ("data", "out"), "evaluate": ("data",), "curve": ("out",), "export-repr": ("model", "data", "out"),
    "serve-toy": ("model",),
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        o = _resolve(args)
        missing = [k for k in _REQUIRED[args.command] if not o.get(k)]
        if args.command == "curve" and not o.get("traces") and not o.get("data"):
            missing.append("data")
        if missing:
            raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
        COMMANDS[args.command](o)
    except UsageError as exc:
        print(f"glyphguard {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (targets.ProtocolError, fusionnet.CheckpointError, ConfigError) as exc:
        print(f"glyphguard {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:  # includes TransportError and DictionaryError
        print(f"glyphguard {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"glyphguard {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # pragma: no cover
        log.exception("internal error")
        print(f"glyphguard {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
