"""Optimizers, 1cycle schedule, discriminative learning rates, and the
three transfer-learning phase drivers (pretrain, LM fine-tune, classifier
fine-tune).

All stochastic choices (shuffles, dropout masks, init) flow from explicit
seeds, so a (seed, data, config) triple reproduces its metric trajectory
exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .model import AwdLstmLM, TextClassifier, build_lm
from .tensor import Rng, Tensor
from .textpipe import PAD_ID, NumericalizedCorpus, Vocabulary

METRICS_HEADER = "phase,stage,epoch,train_loss,valid_loss,valid_accuracy,seconds"


# ---------------------------------------------------------------------------
# schedules


@dataclass
class OneCycleConfig:
    lr_max: float
    total_steps: int
    pct_start: float = 0.25
    div_start: float = 25.0
    div_final: float = 1e5
    mom_high: float = 0.8
    mom_low: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.pct_start < 1.0:
            raise ValueError(f"pct_start must be in (0, 1), got {self.pct_start}")
        if self.div_start <= 1.0 or self.div_final <= 1.0:
            raise ValueError("div factors must exceed 1")
        if self.mom_low >= self.mom_high:
            raise ValueError("mom_low must be below mom_high")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


def _cos_interp(a: float, b: float, t: float) -> float:
    if t <= 0.0:
        return a
    if t >= 1.0:
        return b
    return a + (b - a) * (1.0 - math.cos(math.pi * t)) / 2.0


def one_cycle(step: float, cfg: OneCycleConfig) -> tuple[float, float]:
    """(lr, momentum) at a step: cosine warmup to lr_max over pct_start of
    the run, cosine anneal to lr_max/div_final after; momentum moves
    oppositely between mom_high and mom_low."""
    if step < 0 or step > cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    peak = cfg.pct_start * cfg.total_steps
    if step <= peak:
        t = step / peak
        return (_cos_interp(cfg.lr_max / cfg.div_start, cfg.lr_max, t),
                _cos_interp(cfg.mom_high, cfg.mom_low, t))
    t = (step - peak) / (cfg.total_steps - peak)
    return (_cos_interp(cfg.lr_max, cfg.lr_max / cfg.div_final, t),
            _cos_interp(cfg.mom_low, cfg.mom_high, t))


def discriminative_lrs(base_lr: float, n_groups: int, factor: float = 2.6) -> list[float]:
    """Geometric learning-rate ladder, lowest layer group first."""
    if n_groups < 1:
        raise ValueError("n_groups must be >= 1")
    if factor <= 1.0:
        raise ValueError("factor must exceed 1")
    return [base_lr / factor ** (n_groups - 1 - i) for i in range(n_groups)]


# ---------------------------------------------------------------------------
# optimizers


def _check_grad(p: Tensor) -> np.ndarray:
    g = p.grad if p.grad is not None else np.zeros_like(p.data)
    if np.isnan(g).any():
        raise FloatingPointError(f"NaN gradient in parameter {p.name or '<unnamed>'}")
    return g


def adam_step(params, state: dict, lr: float, momentum: float, weight_decay: float,
              beta2: float = 0.99, eps: float = 1e-8) -> None:
    """One decoupled-weight-decay Adam update; ``momentum`` is beta1.

    ``state`` maps parameter name to (m, v, step) and is owned by the
    caller; frozen parameters must not be passed in.
    """
    for p in params:
        g = _check_grad(p)
        m, v, t = state.get(p.name, (np.zeros_like(p.data), np.zeros_like(p.data), 0))
        t += 1
        m = momentum * m + (1.0 - momentum) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - momentum ** t)
        v_hat = v / (1.0 - beta2 ** t)
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        state[p.name] = (m, v, t)


def sgd_step(params, state: dict, lr: float, momentum: float, weight_decay: float) -> None:
    """Momentum SGD with decoupled weight decay."""
    for p in params:
        g = _check_grad(p)
        v = state.get(p.name, np.zeros_like(p.data))
        v = momentum * v + g
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * v
        state[p.name] = v


def clip_gradients(params, max_norm: float) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def set_trainable(groups: list[list[Tensor]], first_trainable: int) -> None:
    for i, group in enumerate(groups):
        for p in group:
            p.requires_grad = i >= first_trainable
            if not p.requires_grad:
                p.grad = None


# ---------------------------------------------------------------------------
# phase configuration


@dataclass
class PhaseConfig:
    """Full hyperparameter record for one transfer-learning phase."""

    phase: str
    epochs: int
    lr: float
    batch_size: int
    bptt_len: int = 70
    dropout_multiplier: float = 0.5
    weight_decay: float = 0.0
    seed: int = 0
    preset: str = "tiny"
    pct_start: float = 0.25
    div_start: float = 25.0
    div_final: float = 1e5
    mom_high: float = 0.8
    mom_low: float = 0.7
    beta2: float = 0.99
    grad_clip: float = 0.25
    ar_alpha: float = 2.0
    tar_beta: float = 1.0
    max_len: int = 400
    lr_factor: float = 2.6
    stage_lr_decay: float = 2.0
    # LM fine-tune only: last-group warm stage before training all layers
    stage1_lr: float = 4e-2
    stage1_epochs: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.bptt_len < 1:
            raise ValueError("epochs, batch_size, and bptt_len must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.dropout_multiplier < 0:
            raise ValueError("dropout_multiplier must be >= 0")

    def cycle(self, total_steps: int, lr: float | None = None) -> OneCycleConfig:
        return OneCycleConfig(
            lr_max=lr if lr is not None else self.lr, total_steps=total_steps,
            pct_start=self.pct_start, div_start=self.div_start, div_final=self.div_final,
            mom_high=self.mom_high, mom_low=self.mom_low,
        )


def pretrain_defaults(**overrides) -> PhaseConfig:
    cfg = PhaseConfig(phase="pretrain", epochs=20, lr=1e-2, batch_size=128,
                      dropout_multiplier=0.5)
    return replace(cfg, **overrides)


def lm_finetune_defaults(**overrides) -> PhaseConfig:
    # stage 1 (last group only) runs 1 epoch at 4e-2; stage 2 (all groups)
    # runs `epochs` at `lr`
    cfg = PhaseConfig(phase="lm-finetune", epochs=7, lr=4e-3, batch_size=128,
                      dropout_multiplier=0.5)
    return replace(cfg, **overrides)


def clf_finetune_defaults(**overrides) -> PhaseConfig:
    cfg = PhaseConfig(phase="clf-finetune", epochs=2, lr=5e-2, batch_size=64,
                      dropout_multiplier=0.3, weight_decay=0.1)
    return replace(cfg, **overrides)


@dataclass
class EpochMetrics:
    phase: str
    stage: int
    epoch: int
    train_loss: float
    valid_loss: float | None
    valid_accuracy: float | None
    seconds: float

    def as_line(self) -> str:
        vl = "" if self.valid_loss is None else f"{self.valid_loss:.6f}"
        va = "" if self.valid_accuracy is None else f"{self.valid_accuracy:.6f}"
        return (f"{self.phase},{self.stage},{self.epoch},{self.train_loss:.6f},"
                f"{vl},{va},{self.seconds:.3f}")


# ---------------------------------------------------------------------------
# language-model training


def batchify(streams: list[list[int]], batch_size: int) -> np.ndarray:
    """Concatenate streams into one token ribbon cut into batch_size rows."""
    flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in streams if s])
    n = len(flat) // batch_size
    if n < 2:
        raise ValueError(
            f"corpus too small: {len(flat)} tokens cannot fill batch_size {batch_size}"
        )
    return flat[: n * batch_size].reshape(batch_size, n)


def _lm_windows(data: np.ndarray, bptt: int):
    n = data.shape[1]
    for pos in range(0, n - 1, bptt):
        steps = min(bptt, n - 1 - pos)
        yield data[:, pos : pos + steps], data[:, pos + 1 : pos + 1 + steps]


def lm_windows_per_epoch(data: np.ndarray, bptt: int) -> int:
    return len(range(0, data.shape[1] - 1, bptt))


def lm_loss_terms(model: AwdLstmLM, x: np.ndarray, y: np.ndarray, state, cfg: PhaseConfig):
    logits, new_state, raw, dropped = model.forward(x, state)
    b, s, v = logits.shape
    ce = T.cross_entropy(T.reshape(logits, (b * s, v)), y.reshape(-1))
    loss = ce
    if model.training and cfg.ar_alpha > 0:
        loss = T.add(loss, T.mul(T.mean(T.mul(dropped, dropped)), T._as_tensor(cfg.ar_alpha)))
    if model.training and cfg.tar_beta > 0 and s > 1:
        diff = T.sub(raw[:, 1:, :], raw[:, :-1, :])
        loss = T.add(loss, T.mul(T.mean(T.mul(diff, diff)), T._as_tensor(cfg.tar_beta)))
    return loss, ce, new_state


def lm_epoch(model: AwdLstmLM, data: np.ndarray, cfg: PhaseConfig, *, train: bool,
             optimizer_state: dict | None = None, cycle: OneCycleConfig | None = None,
             step_offset: int = 0) -> tuple[float, int]:
    """One pass over the token ribbon; returns (mean token loss, steps run)."""
    model.train() if train else model.eval()
    state = model.init_state(data.shape[0])
    total_ce, total_tokens, steps = 0.0, 0, 0
    trainable = [p for _, p in model.named_parameters() if p.requires_grad]
    for x, y in _lm_windows(data, cfg.bptt_len):
        loss, ce, state = lm_loss_terms(model, x, y, state, cfg)
        if train:
            for p in trainable:
                p.zero_grad()
            T.backward(loss)
            clip_gradients(trainable, cfg.grad_clip)
            lr, mom = one_cycle(min(step_offset + steps, cycle.total_steps), cycle)
            adam_step(trainable, optimizer_state, lr, mom, cfg.weight_decay, beta2=cfg.beta2)
        total_ce += ce.item() * y.size
        total_tokens += y.size
        steps += 1
    return total_ce / total_tokens, steps


def _run_lm_stage(model: AwdLstmLM, train_data, valid_data, cfg: PhaseConfig, *,
                  stage: int, epochs: int, lr: float, metrics: list[EpochMetrics],
                  track_best: dict | None = None) -> None:
    steps_per_epoch = lm_windows_per_epoch(train_data, cfg.bptt_len)
    cycle = cfg.cycle(max(epochs * steps_per_epoch, 1), lr=lr)
    opt_state: dict = {}
    done = 0
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        train_loss, steps = lm_epoch(model, train_data, cfg, train=True,
                                     optimizer_state=opt_state, cycle=cycle, step_offset=done)
        done += steps
        valid_loss = None
        if valid_data is not None:
            valid_loss, _ = lm_epoch(model, valid_data, cfg, train=False)
            if track_best is not None and valid_loss < track_best.get("loss", math.inf):
                track_best["loss"] = valid_loss
                track_best["state"] = model.state_dict()
        metrics.append(EpochMetrics(cfg.phase, stage, epoch, train_loss, valid_loss,
                                    None, time.perf_counter() - t0))
    model.eval()


def pretrain_lm(train_corpus: NumericalizedCorpus, valid_corpus: NumericalizedCorpus | None,
                vocab_size: int, cfg: PhaseConfig,
                model: AwdLstmLM | None = None) -> tuple[AwdLstmLM, list[EpochMetrics]]:
    """Train a language model from scratch with truncated BPTT under 1cycle.

    Returns the model restored to its best-validation-loss epoch (or the
    final epoch when no validation corpus is given) plus per-epoch metrics.
    """
    if not train_corpus.streams:
        raise ValueError("pretrain_lm: empty corpus")
    if model is None:
        model = build_lm(vocab_size, preset=cfg.preset,
                         dropout_multiplier=cfg.dropout_multiplier, seed=cfg.seed)
    else:
        model.dropouts = model.dropouts.with_multiplier(cfg.dropout_multiplier)
    train_data = batchify(train_corpus.streams, cfg.batch_size)
    valid_data = batchify(valid_corpus.streams, cfg.batch_size) if valid_corpus else None
    metrics: list[EpochMetrics] = []
    best: dict = {}
    _run_lm_stage(model, train_data, valid_data, cfg, stage=1, epochs=cfg.epochs,
                  lr=cfg.lr, metrics=metrics, track_best=best if valid_data is not None else None)
    if best.get("state") is not None:
        model.load_state_dict(best["state"])
    return model, metrics


def map_vocab(pretrained: AwdLstmLM, old_vocab: Vocabulary, new_vocab: Vocabulary) -> AwdLstmLM:
    """Re-home a pretrained LM onto a new vocabulary.

    Tokens present in both vocabularies keep their embedding rows and
    decoder bias entries; unseen tokens start at the mean pretrained
    embedding (and mean bias).
    """
    new = AwdLstmLM(len(new_vocab), pretrained.emb_dim, pretrained.hid_dim,
                    pretrained.n_layers, dropouts=pretrained.dropouts,
                    seed=pretrained.rng.seed, preset=pretrained.preset)
    old_emb = pretrained.embedding.data
    old_bias = pretrained.decoder_bias.data
    mean_row = old_emb.mean(axis=0)
    mean_bias = old_bias.mean()
    emb = np.tile(mean_row, (len(new_vocab), 1))
    bias = np.full(len(new_vocab), mean_bias)
    for new_id, token in enumerate(new_vocab.id_to_token):
        old_id = old_vocab.token_to_id.get(token)
        if old_id is not None:
            emb[new_id] = old_emb[old_id]
            bias[new_id] = old_bias[old_id]
    state = pretrained.state_dict()
    state["embedding"] = emb
    state["decoder_bias"] = bias
    new.load_state_dict(state)
    return new


def finetune_lm(pretrained: AwdLstmLM, old_vocab: Vocabulary, new_vocab: Vocabulary,
                train_corpus: NumericalizedCorpus, valid_corpus: NumericalizedCorpus | None,
                cfg: PhaseConfig) -> tuple[AwdLstmLM, list[EpochMetrics]]:
    """Two-stage LM fine-tune on the target corpus: first the
    embedding/decoder group alone for one epoch at a high rate, then every
    group at a lower rate."""
    model = map_vocab(pretrained, old_vocab, new_vocab)
    model.dropouts = model.dropouts.with_multiplier(cfg.dropout_multiplier)
    train_data = batchify(train_corpus.streams, cfg.batch_size)
    valid_data = batchify(valid_corpus.streams, cfg.batch_size) if valid_corpus else None
    metrics: list[EpochMetrics] = []
    groups = model.layer_groups()
    set_trainable(groups, len(groups) - 1)
    _run_lm_stage(model, train_data, valid_data, cfg, stage=1,
                  epochs=cfg.stage1_epochs, lr=cfg.stage1_lr, metrics=metrics)
    set_trainable(groups, 0)
    _run_lm_stage(model, train_data, valid_data, cfg, stage=2, epochs=cfg.epochs,
                  lr=cfg.lr, metrics=metrics)
    return model, metrics


# ---------------------------------------------------------------------------
# classifier training


def make_clf_batches(corpus: NumericalizedCorpus, batch_size: int, max_len: int,
                     order: np.ndarray | None = None):
    """Pad each batch to its longest sequence (capped at max_len)."""
    n = len(corpus.streams)
    idx = order if order is not None else np.arange(n)
    batches = []
    for lo in range(0, n, batch_size):
        chunk = idx[lo : lo + batch_size]
        seqs = [corpus.streams[i][:max_len] for i in chunk]
        lengths = np.array([max(len(s), 1) for s in seqs])
        width = lengths.max()
        ids = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
        for r, s in enumerate(seqs):
            ids[r, : len(s)] = s
        labels = np.array([corpus.labels[i] for i in chunk]) if corpus.labels is not None else None
        batches.append((ids, lengths, labels))
    return batches


def classifier_metrics(clf: TextClassifier, corpus: NumericalizedCorpus,
                       batch_size: int = 64, max_len: int = 400) -> tuple[float, float]:
    """(mean loss, accuracy) in eval mode; deterministic."""
    clf.eval()
    total_loss, correct, n = 0.0, 0, 0
    for ids, lengths, labels in make_clf_batches(corpus, batch_size, max_len):
        logits = clf.forward(ids, lengths)
        loss = T.cross_entropy(logits, labels)
        total_loss += loss.item() * len(labels)
        correct += int((logits.data.argmax(axis=1) == labels).sum())
        n += len(labels)
    return total_loss / n, correct / n


def finetune_classifier(encoder: AwdLstmLM, train_corpus: NumericalizedCorpus,
                        valid_corpus: NumericalizedCorpus | None, cfg: PhaseConfig,
                        clf: TextClassifier | None = None,
                        ) -> tuple[TextClassifier, list[EpochMetrics]]:
    """Gradual-unfreezing classifier fine-tune with discriminative rates.

    One stage per layer group: the head alone first, then one more group
    per stage, all groups in the last stage (which runs cfg.epochs epochs,
    the others one each). The stage base rate halves each stage and is
    spread across unfrozen groups by the geometric ladder; 1cycle runs
    within each stage.
    """
    if train_corpus.labels is None or len(set(train_corpus.labels)) < 2:
        raise ValueError("classifier training needs both labels present in the corpus")
    if clf is None:
        clf = TextClassifier(encoder, seed=cfg.seed)
    encoder.dropouts = encoder.dropouts.with_multiplier(cfg.dropout_multiplier)
    shuffle_rng = Rng(cfg.seed).child("clf-shuffle")
    n_groups = len(clf.layer_groups())
    metrics: list[EpochMetrics] = []
    for stage in range(n_groups):
        clf.freeze_to(n_groups - 1 - stage)
        groups = clf.trainable_groups()
        stage_lr = cfg.lr / cfg.stage_lr_decay ** stage
        epochs = cfg.epochs if stage == n_groups - 1 else 1
        steps_per_epoch = math.ceil(len(train_corpus.streams) / cfg.batch_size)
        cycle = cfg.cycle(max(epochs * steps_per_epoch, 1), lr=stage_lr)
        ladder = discriminative_lrs(stage_lr, len(groups), cfg.lr_factor)
        opt_state: dict = {}
        step = 0
        for epoch in range(1, epochs + 1):
            t0 = time.perf_counter()
            clf.train()
            order = shuffle_rng.permutation(len(train_corpus.streams))
            total_loss, n = 0.0, 0
            for ids, lengths, labels in make_clf_batches(train_corpus, cfg.batch_size,
                                                         cfg.max_len, order):
                logits = clf.forward(ids, lengths)
                loss = T.cross_entropy(logits, labels)
                for g in groups:
                    for p in g:
                        p.zero_grad()
                T.backward(loss)
                clip_gradients([p for g in groups for p in g], cfg.grad_clip)
                lr_t, mom = one_cycle(min(step, cycle.total_steps), cycle)
                scale = lr_t / stage_lr
                for g, base in zip(groups, ladder):
                    adam_step(g, opt_state, base * scale, mom, cfg.weight_decay,
                              beta2=cfg.beta2)
                total_loss += loss.item() * len(labels)
                n += len(labels)
                step += 1
            valid_loss = valid_acc = None
            if valid_corpus is not None and len(valid_corpus.streams):
                valid_loss, valid_acc = classifier_metrics(clf, valid_corpus,
                                                           cfg.batch_size, cfg.max_len)
            metrics.append(EpochMetrics(cfg.phase, stage + 1, epoch, total_loss / n,
                                        valid_loss, valid_acc, time.perf_counter() - t0))
    clf.eval()
    return clf, metrics


def write_metrics_log(path, metrics: list[EpochMetrics]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(METRICS_HEADER + "\n")
        for m in metrics:
            f.write(m.as_line() + "\n")
