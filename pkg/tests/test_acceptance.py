"""End-to-end acceptance gates, one test per criterion.

Run ``pytest -s tests/test_acceptance.py`` to see the PASS line each
criterion prints after its assertions hold.
"""

import json
import math
import random
import re
import subprocess
import sys
import threading
import time
from pathlib import Path

import pytest
import uvicorn
from fastapi.testclient import TestClient

from storyweaver.cli import main as cli_main
from storyweaver.config import AppConfig, asset_path
from storyweaver.dialogue import Source, from_utterances
from storyweaver.encoding import ProjectionMatrix, encode_state, project_bucket, tokenize
from storyweaver.pipeline import CandidateGenerator
from storyweaver.poetry import (
    load_glossary,
    load_lexicon,
    load_templates,
    propose_poetry,
    rhymes,
)
from storyweaver.selector import (
    Hyperparams,
    QTable,
    _exploit_pick,
    _score_survivors,
    apply_rules,
    evaluate_policy,
    load_corpus,
    load_rules,
    q_update,
    train_selector,
)
from storyweaver.seq2seq import (
    build_vocab,
    forward_decode,
    gradient_check,
    init_model,
    load_model,
    train_step,
    training_pairs,
)
from storyweaver.service import build_engine, create_app
from storyweaver.topic import bm25_score, build_index, propose_topic

FIXTURES = Path(__file__).parent / "fixtures"


def _ok(n: int, detail: str) -> None:
    print(f"criterion {n} PASS: {detail}")


# --- criterion 1: gradient correctness -----------------------------------------

def test_criterion_1_gradient_check():
    start = time.monotonic()
    worst = 0.0
    for seed in range(5):
        model = init_model(vocab_size=12, embed_dim=4, hidden_dim=4, seed=seed)
        err = gradient_check(model, [5, 6, 7, 4, 8], [9, 10, 11], h=1e-4)
        worst = max(worst, err)
    elapsed = time.monotonic() - start
    assert worst < 1e-3
    assert elapsed < 60.0
    _ok(1, f"max rel gradient error {worst:.2e} over 5 seeds in {elapsed:.1f}s")


# --- criterion 2: seq2seq memorization ------------------------------------------

def test_criterion_2_memorization(tmp_path, capsys):
    corpus_path = str(asset_path("corpus_toy.txt"))
    model_path = tmp_path / "toy_model.bin"
    start = time.monotonic()
    code = cli_main(
        [
            "train-context", "--corpus", corpus_path, "--out", str(model_path),
            "--epochs", "2000", "--lr", "0.5", "--seed", "0",
        ]
    )
    elapsed = time.monotonic() - start
    out = capsys.readouterr().out
    assert code == 0
    last = out.strip().splitlines()[-1]
    final_loss = float(re.fullmatch(r"epoch 2000 loss (\d+\.\d+)", last).group(1))
    assert final_loss < 0.1

    model, vocab = load_model(model_path)
    dialogues = load_corpus(corpus_path)
    pairs = training_pairs(dialogues, vocab)
    assert len(pairs) == 10
    exact = sum(forward_decode(model, ctx)[0] == tgt for ctx, tgt in pairs)
    assert exact >= 9
    assert elapsed < 300.0
    _ok(2, f"{exact}/10 exact decodes, final loss {final_loss:.4f}, {elapsed:.0f}s")


# --- criterion 3: Q-learning convergence ----------------------------------------

def test_criterion_3_q_convergence():
    hp = Hyperparams(alpha=0.1, gamma=0.9, epsilon_start=0.2, epsilon_end=0.01)
    rewards = {10: 0.1, 20: 0.5, 30: 0.9}
    state = 7
    table = QTable()
    rng = random.Random(123)
    updates = {a: 0 for a in rewards}
    total = 1000
    for step in range(total):
        eps = hp.epsilon_start + (hp.epsilon_end - hp.epsilon_start) * step / (total - 1)
        if rng.random() < eps:
            action = rng.choice(sorted(rewards))
        else:
            action = max(sorted(rewards), key=lambda a: table.q(state, a))
        q_update(table, state, action, rewards[action], state, [], hp)
        updates[action] += 1

    greedy = max(sorted(rewards), key=lambda a: table.q(state, a))
    assert greedy == 30
    # closed-form geometric oracle: q_n = r * (1 - (1-alpha)^n)
    expected = 0.9 * (1.0 - (1.0 - hp.alpha) ** updates[30])
    assert table.q(state, 30) == pytest.approx(expected, abs=1e-12)
    assert abs(table.q(state, 30) - 0.9) < 1e-3
    _ok(3, f"greedy picks the 0.9 action after {updates[30]} updates, "
           f"|Q-r| = {abs(table.q(state, 30) - 0.9):.2e}")


# --- criterion 4: selector learning ----------------------------------------------

@pytest.fixture(scope="module")
def trio():
    templates = load_templates(asset_path("templates.txt"))
    lexicon = load_lexicon(asset_path("rhymes.dict"))
    glossary = load_glossary(asset_path("glossary.tsv"))
    index = build_index("Dinosaur", asset_path("Dinosaur.txt").read_text("utf-8"))
    vocab = build_vocab(["a little story"], max_size=50)
    model = init_model(len(vocab), embed_dim=4, hidden_dim=4, seed=0)
    return CandidateGenerator(
        templates=templates,
        lexicon=lexicon,
        glossary=glossary,
        topic_index=index,
        model=model,
        vocab=vocab,
    )


def test_criterion_4_selector_learning(trio):
    # corpus construction: next utterance is verbatim the topic proposal,
    # filtered so the untrained policy cannot already prefer TOPIC
    # (poetry certainty 0.9 must beat the topic certainty at q=0)
    queries = [
        "did they walk on legs my friend",
        "who hatched from an egg by the river",
        "did bones turn to stones",
        "do museums have a king",
        "did the weather change the snow",
        "did they munch ferns all day",
        "were plates keeping them safe like a bee",
        "did the first ones come from the sea",
        "did hunters run fast to the pool",
        "were some small like a mouse and a cat",
    ]
    pool = []
    for q in queries:
        tp = propose_topic(trio.topic_index, q)
        pp = propose_poetry(trio.templates, trio.lexicon, trio.glossary, q, 0)
        if tp is not None and tp.certainty <= 0.85 and pp.certainty == 0.9:
            pool.append([q, tp.text])
    assert len(pool) >= 8, "corpus construction must leave enough valid pairs"

    rng = random.Random(7)
    train = [pool[rng.randrange(len(pool))] for _ in range(600)]
    held = [pool[rng.randrange(len(pool))] for _ in range(40)]
    # generous exploration and a small certainty weight so the Q-values,
    # not the subsystems' own confidence, decide the trained policy
    hp = Hyperparams(alpha=0.2, epsilon_start=0.6, epsilon_end=0.1, lambda_conf=0.1)
    proj = ProjectionMatrix(seed=99)

    table = train_selector(train, trio, hp, proj, seed=11)

    picks = []
    for dialogue in held:
        state = from_utterances(dialogue[:1])
        proposals = trio.generate(state, 0)
        survivors = apply_rules([], dialogue[0], proposals)
        s_bucket = project_bucket(encode_state(state, proj.dim), proj)
        pick = _exploit_pick(_score_survivors(survivors, s_bucket, table, hp, proj))
        picks.append(pick.source)
    topic_frac = sum(p is Source.TOPIC for p in picks) / len(picks)
    assert topic_frac >= 0.9

    trained = evaluate_policy(held, table, trio, hp, proj)
    untrained = evaluate_policy(held, QTable(), trio, hp, proj)
    assert trained > untrained
    _ok(4, f"TOPIC picked on {topic_frac:.0%} of held-out turns; "
           f"mean reward {trained:.3f} > {untrained:.3f}")


# --- criterion 5: BM25 oracle equivalence ----------------------------------------

def _brute_bm25(sentences, query, k1=1.2, b=0.75):
    toks = [tokenize(s) for s in sentences]
    ns = len(sentences)
    lengths = [len(t) for t in toks]
    avg = sum(lengths) / ns
    out = []
    for i, sent in enumerate(toks):
        score = 0.0
        for q in tokenize(query):
            df = sum(1 for t in toks if q in t)
            tf = sent.count(q)
            if df and tf:
                idf = math.log(1 + (ns - df + 0.5) / (df + 0.5))
                score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * lengths[i] / avg))
        out.append(score)
    return out


def test_criterion_5_bm25_oracle():
    words = (
        "dragon castle moon star river forest giant whisper stone cloud "
        "apple knight boat song tiny brave green gold shadow dream"
    ).split()
    rng = random.Random(42)
    sentences = [
        " ".join(rng.choice(words) for _ in range(rng.randint(3, 9))) + "."
        for _ in range(20)
    ]
    index = build_index("synthetic", " ".join(sentences))
    assert len(index.sentences) == 20

    checked = 0
    for _ in range(50):
        query = " ".join(rng.choice(words + ["zzz"]) for _ in range(rng.randint(1, 6)))
        expected = _brute_bm25(list(index.sentences), query)
        got = [bm25_score(index, tokenize(query), i) for i in range(20)]
        for g, e in zip(got, expected):
            assert abs(g - e) <= 1e-9
        if max(expected) > 0:
            assert got.index(max(got)) == expected.index(max(expected))
            prop = propose_topic(index, query)
            assert prop.text == index.sentences[expected.index(max(expected))]
        checked += 1
    assert checked == 50
    _ok(5, "scores within 1e-9 and identical top-1 on 50 seeded queries")


# --- criterion 6: rhyme oracle -----------------------------------------------------

_VOWEL_RE = re.compile(
    r"^(AA|AE|AH|AO|AW|AY|EH|ER|EY|IH|IY|OW|OY|UH|UW)([012])?$"
)


def _oracle_tail(phonemes):
    primary, any_vowel = None, None
    for i, ph in enumerate(phonemes):
        m = _VOWEL_RE.match(ph)
        if m:
            any_vowel = i
            if m.group(2) == "1":
                primary = i
    cut = primary if primary is not None else any_vowel
    return list(phonemes[cut:]) if cut is not None else []


def _oracle_rhymes(a, b, entries):
    if a == b or a not in entries or b not in entries:
        return False
    ta, tb = _oracle_tail(entries[a]), _oracle_tail(entries[b])
    if not ta or not tb or len(ta) != len(tb) or ta[0] != tb[0]:
        return False
    strip = lambda p: p[:-1] if p and p[-1] in "012" else p
    return all(strip(x) == strip(y) for x, y in zip(ta[1:], tb[1:]))


def test_criterion_6_rhyme_oracle(bundled_lexicon):
    # independent parse of the raw dictionary file
    entries = {}
    for line in asset_path("rhymes.dict").read_text("utf-8").splitlines():
        if line.startswith(";;;") or not line.strip():
            continue
        parts = line.split()
        entries.setdefault(parts[0].lower(), tuple(parts[1:]))
    assert len(entries) >= 200

    rng = random.Random(6)
    sample = rng.sample(sorted(entries), 200)
    pairs = agreements = 0
    for a in sample:
        for b in sample:
            got = rhymes(a, b, bundled_lexicon)
            assert got == _oracle_rhymes(a, b, entries), (a, b)
            if a < b:
                assert got == rhymes(b, a, bundled_lexicon), (a, b)
            pairs += 1
            agreements += 1
    assert pairs == 40000
    _ok(6, f"comparator agreement on all {pairs} ordered pairs, symmetry holds")


# --- criterion 7: safety fuzz --------------------------------------------------------

def _contains(tokens, pattern):
    n = len(pattern)
    return any(tuple(tokens[i : i + n]) == pattern for i in range(len(tokens) - n + 1))


def test_criterion_7_safety_fuzz(tmp_path):
    # context model deliberately trained to parrot blocked insults, so the
    # selector's BLOCK filter is doing real work on every turn
    naughty = [
        ["why", "you are stupid and dumb"],
        ["what", "shut up you ugly thing"],
        ["where", "i hate you go away"],
        ["how", "stupid dumb ugly hate"],
    ]
    vocab = build_vocab([u for d in naughty for u in d], max_size=100)
    model = init_model(len(vocab), embed_dim=8, hidden_dim=12, seed=1)
    for _ in range(250):
        for ctx, tgt in training_pairs(naughty, vocab):
            train_step(model, ctx, tgt, lr=0.5)
    model_path = tmp_path / "naughty.bin"
    from storyweaver.seq2seq import save_model

    save_model(model, vocab, model_path)

    cfg = AppConfig(seed=3, context_model=model_path)
    engine = build_engine(cfg)
    block_patterns = [r.pattern for r in engine.rules if r.kind.value == "block"]
    assert block_patterns

    blocked_words = [w for p in block_patterns for w in p]
    fillers = ["tell", "me", "about", "the", "cat", "dragon", "why", "what", "story", "moon"]
    rng = random.Random(99)
    sid = engine.create_session()
    checked = 0
    for i in range(10_000):
        k = rng.randint(1, 6)
        words = rng.choices(fillers, k=k)
        # seed every message with at least one blocklist word
        words[rng.randrange(k)] = rng.choice(blocked_words)
        if rng.random() < 0.3:
            words.append("shut up" if rng.random() < 0.5 else "go away")
        reply, _ = engine.post_message(sid, " ".join(words))
        assert reply.strip(), "reply must be non-empty"
        toks = tokenize(reply)
        for pattern in block_patterns:
            assert not _contains(toks, pattern), (reply, pattern)
        checked += 1
        if i % 250 == 249:
            sid = engine.create_session()
    assert checked == 10_000
    _ok(7, "10000 fuzzed inputs: all replies non-empty, zero blocked tokens")


# --- criterion 8: routing fidelity ----------------------------------------------------

def test_criterion_8_routing():
    engine = build_engine(AppConfig(seed=5))
    sid = engine.create_session()

    engine.post_message(sid, "Tell me a joke about Dinosaurs")
    chosen = [c for c in engine.get_debug(sid) if c["chosen"]]
    assert chosen[0]["source"] == "poetry"

    engine.post_message(sid, "Do all Dinosaurs have legs?")
    chosen = [c for c in engine.get_debug(sid) if c["chosen"]]
    assert chosen[0]["source"] == "topic"
    _ok(8, "joke request answered by POETRY, legs question by TOPIC")


# --- criterion 9: determinism -----------------------------------------------------------

def _scripted_chat(tmp_path, name, script):
    run_dir = tmp_path / name
    run_dir.mkdir()
    cfg = {
        "seed": 4,
        "fixed_clock": "2024-04-04T00:00:00Z",
        "transcript_dir": "logs",
        "topic": {"title": "Dinosaur", "offline": True},
    }
    config_path = run_dir / "config.json"
    config_path.write_text(json.dumps(cfg), encoding="utf-8")
    proc = subprocess.run(
        [sys.executable, "-m", "storyweaver.cli", "chat", "--config", str(config_path)],
        input=script,
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    (log,) = (run_dir / "logs").glob("*.jsonl")
    return log.read_bytes(), proc.stdout


def test_criterion_9_determinism(tmp_path, capsys):
    topics = ["moon", "cat", "dragon", "legs", "eggs", "stars", "a joke", "teeth", "bones", "snow"]
    script = "".join(f"tell me about {t} number {i}\n" for i in range(10) for t in topics)
    assert script.count("\n") == 100

    log_a, out_a = _scripted_chat(tmp_path, "a", script)
    log_b, out_b = _scripted_chat(tmp_path, "b", script)
    assert log_a == log_b
    assert out_a == out_b
    n_records = len(log_a.decode("utf-8").splitlines())
    assert n_records == 200  # 100 user + 100 system turns

    # training commands: byte-identical outputs across runs
    toy = str(asset_path("corpus_toy.txt"))
    sample = str(asset_path("corpus_sample.txt"))
    topic = str(asset_path("Dinosaur.txt"))
    for run in ("x", "y"):
        code = cli_main(
            ["train-context", "--corpus", toy, "--out", str(tmp_path / f"m_{run}.bin"),
             "--epochs", "5", "--seed", "6"]
        )
        assert code == 0
        code = cli_main(
            ["train-selector", "--corpus", sample, "--topic", topic,
             "--out", str(tmp_path / f"q_{run}.json"), "--seed", "6", "--bits", "10"]
        )
        assert code == 0
    capsys.readouterr()
    assert (tmp_path / "m_x.bin").read_bytes() == (tmp_path / "m_y.bin").read_bytes()
    assert (tmp_path / "q_x.json").read_bytes() == (tmp_path / "q_y.json").read_bytes()
    _ok(9, "100-turn scripted chats and both trainers byte-identical across runs")


# --- criterion 10: API contract -----------------------------------------------------------

class _LiveServer:
    """Real uvicorn server on an ephemeral port, run in a thread."""

    def __init__(self, app):
        self._config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
        self.server = uvicorn.Server(self._config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self):
        self.thread.start()
        while not self.server.started:
            time.sleep(0.01)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        return f"http://127.0.0.1:{port}"

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=5)


def _check_http_fixture(fx, response):
    expected = fx["response"]
    assert response.status_code == expected["status"], fx["name"]
    if "text" in expected:
        assert response.text == expected["text"], fx["name"]
    if "json" in expected:
        assert _json_equal(response.json(), expected["json"]), (
            fx["name"], response.json(), expected["json"],
        )
    if "json_keys" in expected:
        body = response.json()
        assert sorted(body) == sorted(expected["json_keys"]), fx["name"]
        if "session_id_pattern" in expected:
            assert re.match(expected["session_id_pattern"], body["session_id"])


def _json_equal(got, want):
    if isinstance(want, float) or isinstance(got, float):
        return isinstance(got, (int, float)) and abs(got - want) <= 1e-9
    if isinstance(want, dict):
        return (
            isinstance(got, dict)
            and sorted(got) == sorted(want)
            and all(_json_equal(got[k], want[k]) for k in want)
        )
    if isinstance(want, list):
        return (
            isinstance(got, list)
            and len(got) == len(want)
            and all(_json_equal(g, w) for g, w in zip(got, want))
        )
    return got == want


def test_criterion_10_api_contract():
    import httpx

    fixtures = json.loads((FIXTURES / "api_fixtures.json").read_text("utf-8"))
    engine = build_engine(AppConfig(seed=5, fixed_clock="2023-03-03T00:00:00Z"))
    app = create_app(engine)

    # the five HTTP endpoints against a real socket-listening server
    with _LiveServer(app) as base:
        sid = None
        for fx in fixtures["http"]:
            req = fx["request"]
            path = req["path"].replace("{sid}", sid or "")
            response = httpx.request(
                req["method"], base + path,
                json=req.get("json") if "json" in req else None,
                timeout=30,
            )
            _check_http_fixture(fx, response)
            if fx["name"] == "create_session":
                sid = response.json()["session_id"]

    # the WebSocket frame exchange through the same ASGI app
    client = TestClient(create_app(build_engine(AppConfig(seed=5, fixed_clock="2023-03-03T00:00:00Z"))))
    sid = client.post("/api/sessions").json()["session_id"]
    client.post(f"/api/sessions/{sid}/messages", json={"text": "Do all Dinosaurs have legs?"})
    with client.websocket_connect(f"/api/sessions/{sid}/stream") as ws:
        for fx in fixtures["ws"]:
            if "send_raw" in fx:
                ws.send_text(fx["send_raw"])
            else:
                ws.send_text(json.dumps(fx["send"]))
            assert _json_equal(ws.receive_json(), fx["expect"]), fx
    _ok(10, "all five HTTP endpoints and the WS exchange match recorded fixtures")
