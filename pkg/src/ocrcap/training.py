"""Teacher-forced loss, learning-rate schedule and the training loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Optional, Sequence

import numpy as np

from .batch import SceneBatch, encode_scenes
from .checkpoint import Checkpoint
from .config import Config, ModelConfig, TrainConfig
from .decoding import greedy_decode
from .generation import OCR, VOCAB, DecodeState, TokenRef, build_repetition_mask, common_word_set
from .metrics import bleu4
from .model import forward_scores, init_params
from .reading import Scene
from .tensor import GradTape, NonFiniteError, ParameterStore, Tensor, adam_step, backward, ops
from .vocab import EOS, Vocabulary, build_vocabulary, count_words


class TrainingDiverged(RuntimeError):
    """Non-finite loss or parameters; carries the last good checkpoint."""

    def __init__(self, iteration: int, last_good: Optional[Checkpoint], reason: str = "non-finite loss"):
        super().__init__(f"{reason} at iteration {iteration}")
        self.iteration = iteration
        self.last_good = last_good


def target_slot(word: str, vocab: Vocabulary, ocr_texts: Sequence[Optional[str]]) -> Optional[int]:
    """Vocab slot if ``word`` is a vocabulary word, else ``V +`` its first OCR slot, else None."""
    n = vocab.index(word)
    if n is not None:
        return n
    for i, text in enumerate(ocr_texts):
        if text == word:
            return len(vocab) + i
    return None


@dataclass
class TeacherForcing:
    slots: np.ndarray     # [B, T] previous-output slots fed to the decoder
    targets: np.ndarray   # [B, T] gold slot per position (0 where weight is 0)
    weights: np.ndarray   # [B, T] 1 for scored positions
    words: list           # gold word per scored position (None where unscored)


def teacher_forcing(captions: Sequence[Sequence[str]], batch: SceneBatch, vocab: Vocabulary,
                    max_steps: int) -> TeacherForcing:
    """Decoder inputs ``<s> w1 .. w_{T-1}`` and targets ``w1 .. wk </s>`` per caption.

    Each caption uses ``T_b = min(len + 1, max_steps)`` positions. Words
    found in neither the vocabulary nor the scene's OCR get weight 0, and
    when such a word is fed back as input the ``<pad>`` row stands in.
    """
    B = len(captions)
    T = max(min(len(c) + 1, max_steps) for c in captions) if B else 1
    slots = np.full((B, T), vocab.pad, dtype=np.int64)
    targets = np.zeros((B, T), dtype=np.int64)
    weights = np.zeros((B, T))
    words = [[None] * T for _ in range(B)]
    for b, cap in enumerate(captions):
        texts = batch.ocr_texts[b]
        seq = list(cap) + [EOS]
        slots[b, 0] = vocab.bos
        for t in range(min(len(seq), max_steps)):
            s = target_slot(seq[t], vocab, texts)
            if s is not None:
                targets[b, t], weights[b, t] = s, 1.0
                words[b][t] = seq[t]
            if t + 1 < T and t + 1 < min(len(seq), max_steps):
                slots[b, t + 1] = s if s is not None else vocab.pad
    return TeacherForcing(slots, targets, weights, words)


def _multi_hot(tf: TeacherForcing, batch: SceneBatch, vocab: Vocabulary, width: int) -> np.ndarray:
    labels = np.zeros(tf.targets.shape + (width,))
    V = len(vocab)
    for b, row in enumerate(tf.words):
        texts = batch.ocr_texts[b]
        for t, word in enumerate(row):
            if word is None:
                continue
            n = vocab.index(word)
            if n is not None:
                labels[b, t, n] = 1.0
            for i, text in enumerate(texts):
                if text == word:
                    labels[b, t, V + i] = 1.0
    return labels


@dataclass
class LossResult:
    loss: Tensor
    masks: Optional[list] = None   # filled only when mask construction is requested


def step_loss(params: ParameterStore, cfg: ModelConfig, batch: SceneBatch, tf: TeacherForcing,
              vocab: Vocabulary, loss_kind: str = "softmax", construct_masks: bool = False,
              common_words=frozenset()) -> LossResult:
    """Mean per-position loss over the ``V + N`` scores of every teacher-forced row.

    No repetition mask enters the loss. ``construct_masks`` builds, for
    inspection only, the mask each gold prefix would induce at inference.
    """
    scores = forward_scores(params, cfg, batch, tf.slots).scores
    masks = None
    if construct_masks:
        masks = []
        V = len(vocab)
        for b in range(len(batch)):
            texts = batch.ocr_texts[b]
            state = DecodeState()
            for t in range(tf.slots.shape[1]):
                masks.append(build_repetition_mask(state, vocab, common_words, texts, batch.ocr_pad[b]))
                s = int(tf.targets[b, t])
                text = vocab.words[s] if s < V else texts[s - V]
                state.push(TokenRef(VOCAB if s < V else OCR, s if s < V else s - V, text))
    if loss_kind == "softmax":
        loss = ops.cross_entropy(scores, tf.targets, tf.weights)
    elif loss_kind == "bce":
        labels = _multi_hot(tf, batch, vocab, scores.shape[-1])
        loss = ops.binary_cross_entropy_with_logits(scores, labels, tf.weights)
    else:
        raise ValueError(f"unknown loss {loss_kind!r}")
    return LossResult(loss, masks)


def scene_loss(scene: Scene, caption: Sequence[str], params: ParameterStore, cfg: ModelConfig,
               vocab: Vocabulary, loss_kind: str = "softmax") -> Tensor:
    batch = encode_scenes([scene], cfg, vocab)
    return step_loss(params, cfg, batch, teacher_forcing([caption], batch, vocab, cfg.max_steps),
                     vocab, loss_kind).loss


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    k = sum(1 for s in cfg.decay_steps if s <= iteration)
    # decimal product of the configured literals, so 1e-4 * 0.1**2 lands on 1e-6 exactly
    return float(Decimal(repr(cfg.lr)) * Decimal(repr(cfg.decay_factor)) ** k)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

@dataclass
class EvalRecord:
    iteration: int
    lr: float
    train_loss: float
    val_bleu4: float

    def log_line(self) -> str:
        return (f"iter={self.iteration} lr={self.lr:.6e} train_loss={self.train_loss:.6f} "
                f"val_bleu4={self.val_bleu4:.6f}")


@dataclass
class TrainResult:
    best: Checkpoint
    latest: Checkpoint
    history: list = field(default_factory=list)
    losses: list = field(default_factory=list)   # per-iteration training loss


def split_scenes(scenes: Sequence[Scene], val_fraction: float, seed: int):
    """Seeded train/validation split (at least one scene on each side when possible)."""
    n = len(scenes)
    order = np.random.default_rng([seed, 7]).permutation(n)
    n_val = min(max(1, int(round(n * val_fraction))), n - 1) if n > 1 else 0
    val = sorted(order[:n_val].tolist())
    train = sorted(order[n_val:].tolist())
    return [scenes[i] for i in train], [scenes[i] for i in val]


def evaluate_bleu(params, cfg: ModelConfig, scenes, vocab, common, batch=None) -> float:
    batch = batch if batch is not None else encode_scenes(scenes, cfg, vocab)
    out = greedy_decode(params, cfg, batch, vocab, common)
    return bleu4([(r.caption, [list(c) for c in s.captions]) for r, s in zip(out, scenes)])


def train(train_scenes: Sequence[Scene], val_scenes: Sequence[Scene], cfg: Config,
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    mcfg, tcfg = cfg.model, cfg.train
    captions = [list(c) for s in train_scenes for c in s.captions]
    vocab = build_vocabulary(captions, cfg.data.min_count)
    counts = dict(count_words(captions))
    common = common_word_set(captions, cfg.decode.common_threshold)
    params = init_params(mcfg, len(vocab), tcfg.seed)

    examples = [(i, list(c)) for i, s in enumerate(train_scenes) for c in s.captions]
    if not examples:
        raise ValueError("no training captions")
    full = encode_scenes(train_scenes, mcfg, vocab)
    val_batch = encode_scenes(val_scenes, mcfg, vocab) if val_scenes else None
    rng = np.random.default_rng(tcfg.seed)

    def snapshot(it, best_rec=None):
        return Checkpoint(cfg, it, params.snapshot(), vocab, counts, best_rec)

    order, cursor = rng.permutation(len(examples)), 0
    state = None
    best, best_rec = None, None
    history, losses, window = [], [], []
    last_good = snapshot(0)
    for it in range(tcfg.total_iters):
        if cursor + tcfg.batch_size > len(order) and cursor > 0:
            order, cursor = rng.permutation(len(examples)), 0
        pick = order[cursor:cursor + tcfg.batch_size]
        cursor += len(pick)
        batch = full.take([examples[j][0] for j in pick])
        tf = teacher_forcing([examples[j][1] for j in pick], batch, vocab, mcfg.max_steps)
        lr = lr_at(it, tcfg)
        try:
            with GradTape() as tape:
                loss = step_loss(params, mcfg, batch, tf, vocab, tcfg.loss).loss
            grads = params.grads_by_name(backward(loss, tape))
        except NonFiniteError:
            raise TrainingDiverged(it, last_good) from None
        value = float(loss.data)
        if not np.isfinite(value) or not all(np.isfinite(g).all() for g in grads.values()):
            raise TrainingDiverged(it, last_good)
        state = adam_step(params, grads, lr, state=state)
        if not all(np.isfinite(p.data).all() for _, p in params.items()):
            raise TrainingDiverged(it, last_good, "non-finite parameters")
        losses.append(value)
        window.append(value)
        done = it + 1
        if done % tcfg.eval_every == 0 or done == tcfg.total_iters:
            score = evaluate_bleu(params, mcfg, val_scenes, vocab, common, val_batch) if val_scenes else 0.0
            rec = EvalRecord(done, lr, float(np.mean(window)), score)
            window = []
            history.append(rec)
            if log is not None:
                log(rec.log_line())
            if best_rec is None or score > best_rec["bleu4"]:
                best_rec = {"iteration": done, "bleu4": score}
                best = snapshot(done, best_rec)
            last_good = snapshot(done, best_rec)
    latest = snapshot(tcfg.total_iters, best_rec)
    return TrainResult(best, latest, history, losses)
