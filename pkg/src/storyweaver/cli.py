"""Operator entry points: train both learners, evaluate, chat, serve.

All progress output is plain machine-parseable lines (one metric per line)
so scripts and tests can assert on it.
"""

from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path

from . import config as cfg_mod
from .config import load_config
from .encoding import DEFAULT_BITS, DEFAULT_DIM, ProjectionMatrix
from .pipeline import CandidateGenerator
from .poetry import ConfigError, load_glossary, load_lexicon, load_templates
from .selector import (
    CorpusEmpty,
    Hyperparams,
    evaluate_policy,
    load_corpus,
    load_qtable,
    load_rules,
    save_qtable,
    train_selector,
)
from .seq2seq import (
    DEFAULT_EMBED_DIM,
    DEFAULT_HIDDEN_DIM,
    DEFAULT_VOCAB_SIZE,
    build_vocab,
    init_model,
    load_model,
    save_model,
    train_step,
    training_pairs,
)
from .topic import EmptyTopic, build_index


def _add_poetry_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--templates", default=None, help="poetry templates file")
    p.add_argument("--rhymes", default=None, help="pronouncing dictionary file")
    p.add_argument("--glossary", default=None, help="word definitions file")


def _add_selector_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--topic", required=True, help="topic text file (title = file stem)")
    p.add_argument("--rules", default=None, help="lexical rules file")
    p.add_argument("--context-model", default=None, help="trained context model file")
    _add_poetry_flags(p)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--epsilon-start", type=float, default=0.2)
    p.add_argument("--epsilon-end", type=float, default=0.01)
    p.add_argument("--lambda-conf", type=float, default=0.3)
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.add_argument("--bits", type=int, default=DEFAULT_BITS)
    p.add_argument("--window", type=int, default=4)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="storyweaver")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-context", help="train the seq2seq reply model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-size", type=int, default=DEFAULT_VOCAB_SIZE)
    p.add_argument("--embed-dim", type=int, default=DEFAULT_EMBED_DIM)
    p.add_argument("--hidden-dim", type=int, default=DEFAULT_HIDDEN_DIM)
    p.add_argument("--window", type=int, default=4)

    p = sub.add_parser("train-selector", help="train the reply selector Q-table")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_selector_flags(p)

    p = sub.add_parser("eval", help="mean greedy reward of a Q-table on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--qtable", required=True)
    _add_selector_flags(p)

    p = sub.add_parser("chat", help="line-oriented REPL through the full pipeline")
    p.add_argument("--config", default=None)

    p = sub.add_parser("serve", help="run the HTTP/WebSocket chat service")
    p.add_argument("--config", default=None)

    return parser


def _fail(message: str) -> int:
    print(message, file=sys.stderr)
    return 1


def cmd_train_context(args: argparse.Namespace) -> int:
    try:
        dialogues = load_corpus(args.corpus)
    except OSError as exc:
        return _fail(f"corpus: {exc}")
    utterances = [u for d in dialogues for u in d]
    if not utterances:
        return _fail("corpus: no utterances")
    vocab = build_vocab(utterances, max_size=args.vocab_size)
    model = init_model(
        vocab_size=len(vocab),
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        seed=args.seed,
    )
    pairs = training_pairs(dialogues, vocab, context_window=args.window)
    if not pairs and args.epochs > 0:
        return _fail("corpus: no adjacent utterance pairs")
    rng = random.Random(args.seed)
    for epoch in range(1, args.epochs + 1):
        order = list(range(len(pairs)))
        rng.shuffle(order)
        total = 0.0
        for i in order:
            ctx, tgt = pairs[i]
            total += train_step(model, ctx, tgt, lr=args.lr)
        print(f"epoch {epoch} loss {total / len(pairs):.6f}")
    save_model(model, vocab, args.out)
    return 0


def _build_generator(args: argparse.Namespace) -> CandidateGenerator:
    templates = load_templates(args.templates or cfg_mod.asset_path("templates.txt"))
    lexicon = load_lexicon(args.rhymes or cfg_mod.asset_path("rhymes.dict"))
    glossary = load_glossary(args.glossary or cfg_mod.asset_path("glossary.tsv"))
    topic_path = Path(args.topic)
    topic_index = build_index(topic_path.stem, topic_path.read_text(encoding="utf-8"))
    model = vocab = None
    if args.context_model:
        model, vocab = load_model(args.context_model)
    return CandidateGenerator(
        templates=templates,
        lexicon=lexicon,
        glossary=glossary,
        topic_index=topic_index,
        model=model,
        vocab=vocab,
    )


def cmd_train_selector(args: argparse.Namespace) -> int:
    try:
        corpus = load_corpus(args.corpus)
        gen = _build_generator(args)
        rules = load_rules(args.rules) if args.rules else []
    except (OSError, ConfigError, EmptyTopic, ValueError) as exc:
        return _fail(str(exc))
    hp = Hyperparams(
        alpha=args.alpha,
        gamma=args.gamma,
        epsilon_start=args.epsilon_start,
        epsilon_end=args.epsilon_end,
        lambda_conf=args.lambda_conf,
    )
    proj = ProjectionMatrix(seed=args.seed, bits=args.bits, dim=args.dim)

    def progress(turn: int, mean_reward: float) -> None:
        print(f"turn {turn} mean_reward {mean_reward:.6f}")

    try:
        table = train_selector(
            corpus,
            gen,
            hp,
            proj,
            seed=args.seed,
            rules=rules,
            context_window=args.window,
            progress=progress,
        )
    except CorpusEmpty as exc:
        return _fail(str(exc))
    save_qtable(table, args.out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        corpus = load_corpus(args.corpus)
        gen = _build_generator(args)
        rules = load_rules(args.rules) if args.rules else []
        table = load_qtable(args.qtable)
    except (OSError, ConfigError, EmptyTopic, ValueError) as exc:
        return _fail(str(exc))
    hp = Hyperparams(
        alpha=args.alpha,
        gamma=args.gamma,
        epsilon_start=args.epsilon_start,
        epsilon_end=args.epsilon_end,
        lambda_conf=args.lambda_conf,
    )
    # the Q-table's metadata pins the projection it was trained with
    meta = table.meta
    proj = ProjectionMatrix(
        seed=int(meta.get("seed", 0)),
        bits=int(meta.get("k", args.bits)),
        dim=int(meta.get("D", args.dim)),
    )
    try:
        mean = evaluate_policy(corpus, table, gen, hp, proj, rules=rules, context_window=args.window)
    except CorpusEmpty as exc:
        return _fail(str(exc))
    print(f"mean_reward {mean:.6f}")
    return 0


def _load_app_config(args: argparse.Namespace):
    path = args.config or cfg_mod.config_path_from_env()
    if not path:
        return None, _fail(f"no config: pass --config or set {cfg_mod.ENV_CONFIG}")
    try:
        return load_config(path), 0
    except (OSError, ValueError, KeyError) as exc:
        return None, _fail(f"config: {exc}")


def cmd_chat(args: argparse.Namespace) -> int:
    from .service import build_engine

    cfg, code = _load_app_config(args)
    if cfg is None:
        return code
    try:
        engine = build_engine(cfg)
    except (OSError, ConfigError, ValueError) as exc:
        return _fail(f"config: {exc}")
    sid = engine.create_session()
    while True:
        print("you> ", end="", flush=True)
        line = sys.stdin.readline()
        if not line:
            break
        text = line.strip()
        if not text:
            continue
        if text in {"quit", "exit"}:
            break
        reply, _ = engine.post_message(sid, text)
        print(f"story> {reply}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import build_engine, create_app

    cfg, code = _load_app_config(args)
    if cfg is None:
        return code
    try:
        engine = build_engine(cfg)
    except (OSError, ConfigError, ValueError) as exc:
        return _fail(f"config: {exc}")
    app = create_app(engine, static_dir=cfg.server.static_dir)
    uvicorn.run(app, host=cfg.server.bind, port=cfg.server.port, log_level="warning")
    return 0


_COMMANDS = {
    "train-context": cmd_train_context,
    "train-selector": cmd_train_selector,
    "eval": cmd_eval,
    "chat": cmd_chat,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
