"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) and
then asserts. The learning experiments train the desk configuration several
times and take a few minutes in total.
"""

import random
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from ocrcap import cli
from ocrcap.batch import encode_scenes
from ocrcap.checkpoint import Checkpoint, save_checkpoint
from ocrcap.config import TrainConfig, load_config
from ocrcap.decoding import decode_captions
from ocrcap.embedding import embed_prev_outputs
from ocrcap.generation import add_duplicate_scores, add_duplicate_scores_indexed, common_words_from_counts
from ocrcap.metrics import bleu4, cider_d, repetition_rate
from ocrcap.mmt import mmt_forward
from ocrcap.model import embed_scene_batch, init_params
from ocrcap.reading import TaskSpec, generate_scenes
from ocrcap.reading.scenes import read_records
from ocrcap.tensor import grad_check
from ocrcap.training import lr_at, step_loss, teacher_forcing, train
from ocrcap.vocab import Vocabulary, build_vocabulary, count_words

from test_metrics import bleu_oracle, cider_corpus_oracle, random_corpus

DESK = load_config(Path(__file__).resolve().parents[1] / "configs" / "desk.toml")
SEEDS = (0, 1, 2)


def perturbed(cfg, V, seed, std):
    p = init_params(cfg, V, seed)
    rng = np.random.default_rng(seed + 1000)
    for _, t in p.items():
        t.data = t.data + rng.normal(0, std, t.shape)
    return p


def mixed_scenes(n, seed):
    tasks = ("copy-max-conf", "describe-object", "no-repeat-pairs")
    rng = random.Random(seed)
    out = []
    for i in range(n):
        spec = TaskSpec(tasks[i % 3], num_ocr=rng.randint(2, 10))
        out.extend(generate_scenes(spec, 1, seed * 10_000 + i))
    return out


def captions_of(scenes):
    return [list(c) for s in scenes for c in s.captions]


# ---------------------------------------------------------------------------
# 1. gradient integrity
# ---------------------------------------------------------------------------

def test_01_gradient_integrity(verdict):
    cfg = DESK.model
    pool = generate_scenes("copy-max-conf", 200, 1)
    vocab = build_vocabulary(captions_of(pool), DESK.data.min_count)
    start = time.perf_counter()
    errors = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        picked = [pool[i] for i in rng.choice(len(pool), size=3, replace=False)]
        batch = encode_scenes(picked, cfg, vocab)
        tf = teacher_forcing([list(s.captions[0]) for s in picked], batch, vocab, cfg.max_steps)
        params = perturbed(cfg, len(vocab), seed, 0.1)
        errors.append(grad_check(lambda p: step_loss(p, cfg, batch, tf, vocab).loss, params,
                                 max_coords=4, seed=seed))
    elapsed = time.perf_counter() - start
    worst = max(errors)
    ok = verdict(1, worst < 1e-4 and elapsed < 120,
                 f"max rel err {worst:.2e} over 10 seeds in {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. duplicate-score oracle
# ---------------------------------------------------------------------------

def naive_fusion(y_voc, y_ocr, texts, words):
    out = list(y_voc)
    for n, word in enumerate(words):
        for i, text in enumerate(texts):
            if text is not None and text == word:
                out[n] = out[n] + y_ocr[i]
    return np.array(out)


def test_02_duplicate_score_oracle(verdict):
    pool = [f"w{k}" for k in range(12)]
    rng = random.Random(2)
    nrng = np.random.default_rng(2)
    mismatches = 0
    instances = 1200
    for _ in range(instances):
        words = ["<pad>", "<s>", "</s>"] + rng.sample(pool, rng.randint(0, 9))
        vocab = Vocabulary(words)
        N = rng.randint(1, 12)
        texts = [None if rng.random() < 0.2 else rng.choice(pool) for _ in range(N)]
        y_voc = nrng.normal(0, rng.choice([1e-3, 1.0, 1e3]), len(words))
        y_ocr = nrng.normal(0, rng.choice([1e-3, 1.0, 1e3]), N)
        want = naive_fusion(y_voc, y_ocr, texts, words)
        got = add_duplicate_scores(y_voc, y_ocr, texts, vocab).data
        mismatches += got.tobytes() != want.tobytes()
    # batched form used by the model, several rows per scene
    for trial in range(100):
        B, T, N = 3, 4, rng.randint(1, 8)
        words = ["<pad>", "<s>", "</s>"] + pool[:rng.randint(1, 12)]
        vocab = Vocabulary(words)
        texts = [[None if rng.random() < 0.2 else rng.choice(pool) for _ in range(N)] for _ in range(B)]
        dup = np.array([[vocab.index(t) if t is not None and t in vocab else -1 for t in row] for row in texts])
        y_voc = nrng.normal(size=(B, T, len(words)))
        y_ocr = nrng.normal(size=(B, T, N))
        got = add_duplicate_scores_indexed(y_voc, y_ocr, dup).data
        for b in range(B):
            for t in range(T):
                want = naive_fusion(y_voc[b, t], y_ocr[b, t], texts[b], words)
                mismatches += got[b, t].tobytes() != want.tobytes()
        instances += B * T
    ok = verdict(2, mismatches == 0, f"{mismatches} bitwise mismatches in {instances} instances")
    assert ok


# ---------------------------------------------------------------------------
# 3. repetition guarantee
# ---------------------------------------------------------------------------

def test_03_repetition_guarantee(verdict, tmp_path, capsys):
    cfg = DESK.model
    train_scenes = mixed_scenes(300, 30)
    counts = count_words(captions_of(train_scenes))
    vocab = build_vocabulary(captions_of(train_scenes), 1)
    common = common_words_from_counts(counts, 20)
    captions = []
    for draw in range(50):
        params = perturbed(cfg, len(vocab), draw, 0.3)
        scenes = mixed_scenes(20, 100 + draw)
        captions.extend(r.caption for r in decode_captions(params, cfg, scenes, vocab, common))
    masked_rate = repetition_rate(captions, common)
    copies = sum(w not in vocab for c in captions for w in c)
    mean_len = np.mean([len(c) for c in captions])

    # a parameter set that strongly prefers one non-common word, through the CLI
    word = next(w for w in vocab.words[3:] if w not in common)
    rigged = init_params(cfg, len(vocab), 0)
    rigged["voc.b"].data[vocab.index(word)] = 50.0
    save_checkpoint(Checkpoint(DESK, 0, rigged.snapshot(), vocab, dict(counts)), tmp_path / "rig.ckpt")
    data = tmp_path / "scenes.jsonl"
    cli.main(["gen-data", "--task", "copy-max-conf", "--num-scenes", "20", "--seed", "3", "--out", str(data)])
    rates = {}
    for flag in ([], ["--no-mask"]):
        out = tmp_path / f"caps{len(flag)}.jsonl"
        assert cli.main(["decode", "--ckpt", str(tmp_path / "rig.ckpt"), "--data", str(data),
                         "--out", str(out), *flag]) == 0
        recs = list(read_records(out))
        rates[bool(flag)] = repetition_rate([rec["caption"] for _, rec in recs], common)
    capsys.readouterr()
    ok = verdict(3, len(captions) >= 1000 and masked_rate == 0.0 and rates[False] == 0.0 and rates[True] > 0,
                 f"{len(captions)} random decodes (mean length {mean_len:.1f}, {copies} copied tokens) "
                 f"rate {masked_rate}; rigged {word!r}: masked {rates[False]}, --no-mask {rates[True]}")
    assert ok


# ---------------------------------------------------------------------------
# 4. mask construction does not touch the training loss
# ---------------------------------------------------------------------------

def test_04_mask_training_inertness(verdict):
    cfg = DESK.model
    scenes = generate_scenes("no-repeat-pairs", 160, 4) + generate_scenes("copy-max-conf", 160, 4)
    counts = count_words(captions_of(scenes))
    vocab = build_vocabulary(captions_of(scenes), DESK.data.min_count)
    params = perturbed(cfg, len(vocab), 4, 0.1)
    checked = differing = 0
    for k in range(10):
        picked = scenes[32 * k: 32 * (k + 1)]
        batch = encode_scenes(picked, cfg, vocab)
        tf = teacher_forcing([list(s.captions[0]) for s in picked], batch, vocab, cfg.max_steps)
        base = np.float64(step_loss(params, cfg, batch, tf, vocab).loss.data).tobytes()
        for C in (0, 20):
            res = step_loss(params, cfg, batch, tf, vocab, construct_masks=True,
                            common_words=common_words_from_counts(counts, C))
            assert res.masks
            checked += 1
            differing += np.float64(res.loss.data).tobytes() != base
    ok = verdict(4, differing == 0, f"{differing} of {checked} masked-construction losses differ bitwise")
    assert ok


# ---------------------------------------------------------------------------
# 5. causality and leakage
# ---------------------------------------------------------------------------

def test_05_causality_and_leakage(verdict):
    cfg = DESK.model
    violations = probes = 0
    for seed in range(5):
        scenes = mixed_scenes(6, 50 + seed)
        vocab = build_vocabulary(captions_of(scenes), 1)
        params = perturbed(cfg, len(vocab), seed, 0.3)
        batch = encode_scenes(scenes, cfg, vocab)
        x_obj, x_ocr = embed_scene_batch(params, cfg, batch)
        rng = np.random.default_rng(seed)
        slots = rng.integers(0, len(vocab) + cfg.max_ocr, size=(len(scenes), cfg.max_steps))
        slots[:, 0] = vocab.bos
        x_dec = embed_prev_outputs(params, slots, x_ocr, cfg.ln_eps).data
        ref = mmt_forward(x_obj, x_ocr, x_dec, cfg, params, batch.obj_pad, batch.ocr_pad)
        for t in range(cfg.max_steps):
            bumped = x_dec.copy()
            bumped[:, t] += rng.normal(0, 1.0, bumped[:, t].shape)
            out = mmt_forward(x_obj, x_ocr, bumped, cfg, params, batch.obj_pad, batch.ocr_pad)
            probes += 1
            same = (np.array_equal(out.z_obj.data, ref.z_obj.data)
                    and np.array_equal(out.z_ocr.data, ref.z_ocr.data)
                    and np.array_equal(out.z_dec.data[:, :t], ref.z_dec.data[:, :t]))
            moved = not np.array_equal(out.z_dec.data[:, t], ref.z_dec.data[:, t])
            violations += not (same and moved)
    ok = verdict(5, violations == 0, f"{violations} violations in {probes} row perturbations")
    assert ok


# ---------------------------------------------------------------------------
# 6-8. learning experiments
# ---------------------------------------------------------------------------

def says_slot_accuracy(results, scenes):
    hits = 0
    for r, s in zip(results, scenes):
        gold = max(s.ocr, key=lambda t: t.conf).text
        cap = r.caption
        if "says" in cap:
            i = cap.index("says")
            hits += i + 1 < len(cap) and cap[i + 1] == gold
    return hits / len(scenes)


def task_split(task, seed):
    spec = TaskSpec(task, num_ocr=8)
    return (generate_scenes(spec, 2000, 100 + seed), generate_scenes(spec, 200, 200 + seed),
            generate_scenes(spec, 300, 300 + seed))


@pytest.fixture(scope="module")
def copy_runs():
    runs = {}
    for seed in SEEDS:
        tr, va, te = task_split("copy-max-conf", seed)
        for mode in ("embed", "none"):
            cfg = DESK.replace("train", seed=seed).replace("model", confidence_mode=mode)
            start = time.perf_counter()
            ck = train(tr, va, cfg).best
            elapsed = time.perf_counter() - start
            common = common_words_from_counts(ck.caption_counts, cfg.decode.common_threshold)
            res = decode_captions(ck.store(), cfg.model, te, ck.vocab, common)
            runs[seed, mode] = (says_slot_accuracy(res, te), elapsed)
    return runs


@pytest.mark.slow
def test_06_synthetic_learning(verdict, copy_runs):
    accs = [copy_runs[s, "embed"][0] for s in SEEDS]
    slowest = max(copy_runs[s, "embed"][1] for s in SEEDS)
    med = statistics.median(accs)
    ok = verdict(6, med >= 0.9 and DESK.train.total_iters <= 2000 and slowest < 1800,
                 f"says-slot accuracy {accs} median {med:.3f}; {DESK.train.total_iters} iterations, "
                 f"slowest run {slowest:.0f}s")
    assert ok


@pytest.mark.slow
def test_07_confidence_embedding_direction(verdict, copy_runs):
    pairs = [(copy_runs[s, "embed"][0], copy_runs[s, "none"][0]) for s in SEEDS]
    ok = verdict(7, all(e > n for e, n in pairs),
                 "embed vs none per seed: " + ", ".join(f"{e:.3f}>{n:.3f}" for e, n in pairs))
    assert ok


@pytest.mark.slow
def test_08_threshold_behavior(verdict):
    scores = {0: [], 20: []}
    for seed in SEEDS:
        tr, va, _ = task_split("no-repeat-pairs", seed)
        cfg = DESK.replace("train", seed=seed)
        ck = train(tr, va, cfg).best
        for C in scores:
            common = common_words_from_counts(ck.caption_counts, C)
            res = decode_captions(ck.store(), cfg.model, va, ck.vocab, common)
            scores[C].append(bleu4([(r.caption, [list(c) for c in s.captions]) for r, s in zip(res, va)]))
    m0, m20 = statistics.median(scores[0]), statistics.median(scores[20])
    ok = verdict(8, m0 < m20, f"validation BLEU-4 median C=0 {m0:.4f} vs C=20 {m20:.4f} "
                              f"(per seed {[round(x, 4) for x in scores[0]]} / {[round(x, 4) for x in scores[20]]})")
    assert ok


# ---------------------------------------------------------------------------
# 9-11
# ---------------------------------------------------------------------------

def test_09_metric_fidelity(verdict):
    worst = 0.0
    for seed in range(60):
        rng = random.Random(1000 + seed)
        pairs = random_corpus(rng, rng.randint(2, 10))
        worst = max(worst, abs(bleu4(pairs) - bleu_oracle(pairs)),
                    abs(bleu4(pairs, smooth=True) - bleu_oracle(pairs, smooth=True)),
                    abs(cider_d(pairs) - cider_corpus_oracle(pairs)))
    identical = []
    for seed in range(20):
        rng = random.Random(seed)
        caps = [[rng.choice("abcdefgh") for _ in range(rng.randint(4, 12))] for _ in range(rng.randint(1, 6))]
        identical.append(bleu4([(c, [c]) for c in caps]))
    ok = verdict(9, worst <= 1e-9 and all(b == 1.0 for b in identical),
                 f"max |metric - oracle| {worst:.1e} on 60 corpora; identical BLEU-4 values {set(identical)}")
    assert ok


def test_10_schedule_fidelity(verdict):
    cfg = TrainConfig()
    got = {i: lr_at(i, cfg) for i in (0, 4999, 5000, 6999, 7000, cfg.total_iters - 1)}
    want = {0: 1e-4, 4999: 1e-4, 5000: 1e-5, 6999: 1e-5, 7000: 1e-6, cfg.total_iters - 1: 1e-6}
    ok = verdict(10, got == want, f"lr_at {got}")
    assert ok


def run_pipeline(root: Path, monkeypatch, capsys) -> dict:
    """gen-data, train, decode and eval with relative paths inside ``root``."""
    root.mkdir()
    monkeypatch.chdir(root)
    Path("desk.toml").write_text((Path(__file__).resolve().parents[1] / "configs" / "desk.toml").read_text())
    steps = [
        ["gen-data", "--task", "copy-max-conf", "--num-scenes", "400", "--seed", "5", "--out", "scenes.jsonl"],
        ["train", "--config", "desk.toml", "--data", "scenes.jsonl", "--out", "run",
         "--set", "train.total_iters=200", "--set", "train.eval_every=100"],
        ["decode", "--ckpt", "run/best.ckpt", "--data", "scenes.jsonl", "--out", "caps.jsonl"],
        ["eval", "--hyp", "caps.jsonl", "--ref", "scenes.jsonl", "--out", "report.jsonl"],
    ]
    out = {}
    for argv in steps:
        assert cli.main(argv) == 0
        out[argv[0] + " stdout"] = capsys.readouterr().out.encode()
    for name in ("scenes.jsonl", "run/best.ckpt", "run/latest.ckpt", "run/train.log", "caps.jsonl", "report.jsonl"):
        out[name] = Path(name).read_bytes()
    return out


def test_11_determinism(verdict, tmp_path, monkeypatch, capsys):
    first = run_pipeline(tmp_path / "first", monkeypatch, capsys)
    second = run_pipeline(tmp_path / "second", monkeypatch, capsys)
    differ = [k for k in first if first[k] != second[k]]
    ok = verdict(11, not differ, f"{len(first) - len(differ)} of {len(first)} artifacts byte-identical"
                                 + (f"; differing: {differ}" if differ else ""))
    assert ok
