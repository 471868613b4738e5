"""Metrics, the training-data degradation protocol, and top-losses analysis.

The degradation suite retrains the full transfer pipeline (LM fine-tune +
classifier fine-tune) on shrinking fractions of the training set, several
seeds per fraction, and reports the relative accuracy drop against the
full-data average. The test split is fixed and checksummed so every run
scores against identical data.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import TextClassifier
from .textpipe import NumericalizedCorpus


@dataclass
class EvalResult:
    accuracy: float
    mean_loss: float
    n: int


@dataclass
class LossRankedExample:
    text: str
    target: int
    predicted: int
    loss: float
    probability: float


@dataclass
class SplitRecord:
    fraction: float
    n_train: int
    repeats: int
    mean_accuracy: float
    mean_loss: float
    degradation_pct: float
    accuracies: list[float] = field(default_factory=list)


@dataclass
class DegradationReport:
    rows: list[SplitRecord]
    base_seed: int
    test_checksum: str

    CSV_HEADER = "fraction,n_train,repeats,mean_accuracy,mean_loss,degradation_pct"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(f"{r.fraction},{r.n_train},{r.repeats},"
                         f"{r.mean_accuracy:.6f},{r.mean_loss:.6f},{r.degradation_pct:.4f}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        header = f"{'fraction':>9} {'n_train':>8} {'repeats':>8} {'accuracy':>9} {'loss':>8} {'degr.%':>7}"
        lines = [header]
        for r in self.rows:
            lines.append(f"{r.fraction:>9.2f} {r.n_train:>8} {r.repeats:>8} "
                         f"{r.mean_accuracy:>9.4f} {r.mean_loss:>8.4f} {r.degradation_pct:>7.2f}")
        return "\n".join(lines) + "\n"


class DegradationSuiteError(RuntimeError):
    """A training run inside the suite failed; carries the partial report."""

    def __init__(self, message: str, partial: DegradationReport):
        super().__init__(f"{message}\npartial report:\n{partial.to_csv()}")
        self.partial_report = partial


def evaluate(clf: TextClassifier, corpus: NumericalizedCorpus, batch_size: int = 64,
             max_len: int = 400) -> EvalResult:
    """Accuracy and mean cross-entropy on a labeled corpus, in eval mode."""
    if not corpus.streams:
        raise ValueError("evaluate: empty test set")
    if corpus.labels is None:
        raise ValueError("evaluate: corpus has no labels")
    from .train import classifier_metrics

    loss, acc = classifier_metrics(clf, corpus, batch_size, max_len)
    return EvalResult(accuracy=acc, mean_loss=loss, n=len(corpus.streams))


def degradation_pct(metric_full: float, metric_reduced: float) -> float:
    """Relative performance drop, in percent, of reduced-data training."""
    if metric_full <= 0:
        raise ValueError(f"metric_full must be positive, got {metric_full}")
    return 100.0 * (metric_full - metric_reduced) / metric_full


def subsample_train(corpus: NumericalizedCorpus, fraction: float, seed: int,
                    max_tries: int = 100) -> NumericalizedCorpus:
    """Uniform subset without replacement of size round(fraction * n).

    When the corpus is labeled, resamples (with derived seeds) until both
    classes are present; a one-class subsample makes training ill-posed.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(corpus.streams)
    k = round(fraction * n)
    if k < 2:
        raise ValueError(f"fraction {fraction} of {n} examples leaves {k} < 2")
    if k == n:
        return corpus
    for attempt in range(max_tries):
        idx = np.sort(T.Rng(seed).child(f"subsample-{attempt}").choice(n, k))
        labels = None
        if corpus.labels is not None:
            labels = [corpus.labels[i] for i in idx]
            if len(set(labels)) < 2:
                continue
        return NumericalizedCorpus([corpus.streams[i] for i in idx], labels, corpus.split_tag)
    raise RuntimeError(f"could not draw a two-class subsample after {max_tries} tries")


def corpus_checksum(corpus: NumericalizedCorpus) -> str:
    h = hashlib.sha256()
    for i, stream in enumerate(corpus.streams):
        h.update(np.asarray(stream, dtype=np.int64).tobytes())
        if corpus.labels is not None:
            h.update(bytes([corpus.labels[i]]))
    return h.hexdigest()


def run_degradation_suite(pretrained, old_vocab, target_vocab,
                          train_corpus: NumericalizedCorpus,
                          valid_corpus: NumericalizedCorpus | None,
                          test_corpus: NumericalizedCorpus,
                          lm_cfg, clf_cfg,
                          fractions=(1.0, 0.5, 0.1), repeats: int = 5,
                          base_seed: int = 0) -> DegradationReport:
    """Run the full fine-tuning pipeline per (fraction, repeat) and average.

    Every run starts from the same pretrained LM, fine-tunes the LM on the
    subsampled training text, fine-tunes a classifier on the same subsample,
    and scores on the shared test set. Degradation is computed from mean
    accuracy against the largest fraction's mean accuracy.
    """
    from dataclasses import replace

    from .train import finetune_classifier, finetune_lm

    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    fractions = sorted(set(fractions), reverse=True)
    checksum = corpus_checksum(test_corpus)
    report = DegradationReport(rows=[], base_seed=base_seed, test_checksum=checksum)
    for fraction in fractions:
        accs, losses, n_train = [], [], 0
        for rep in range(repeats):
            seed = base_seed + rep
            try:
                assert corpus_checksum(test_corpus) == checksum, "test set mutated"
                sub = subsample_train(train_corpus, fraction, seed)
                n_train = len(sub.streams)
                lm_text = NumericalizedCorpus(sub.streams, None, "train")
                lm, _ = finetune_lm(pretrained, old_vocab, target_vocab, lm_text,
                                    None, replace(lm_cfg, seed=seed))
                clf, _ = finetune_classifier(lm, sub, None, replace(clf_cfg, seed=seed))
                result = evaluate(clf, test_corpus, clf_cfg.batch_size, clf_cfg.max_len)
            except Exception as exc:  # noqa: BLE001 - abort with partial dump
                raise DegradationSuiteError(
                    f"run failed at fraction={fraction} repeat={rep}: {exc}", report
                ) from exc
            accs.append(result.accuracy)
            losses.append(result.mean_loss)
        report.rows.append(SplitRecord(
            fraction=fraction, n_train=n_train, repeats=repeats,
            mean_accuracy=float(np.mean(accs)), mean_loss=float(np.mean(losses)),
            degradation_pct=0.0, accuracies=accs,
        ))
    full = report.rows[0].mean_accuracy
    for row in report.rows:
        row.degradation_pct = degradation_pct(full, row.mean_accuracy)
    return report


def per_example_losses(clf: TextClassifier, corpus: NumericalizedCorpus,
                       max_len: int = 400) -> list[tuple[int, float, float]]:
    """(predicted label, loss, predicted probability) per example, in order."""
    from .train import make_clf_batches

    clf.eval()
    out = []
    for ids, lengths, labels in make_clf_batches(corpus, 64, max_len):
        probs = T.softmax(T.Tensor(clf.forward(ids, lengths).data), axis=1).data
        for row, label in zip(probs, labels):
            pred = int(row.argmax())
            out.append((pred, float(-np.log(max(row[label], 1e-300))), float(row[pred])))
    return out


def top_losses(clf: TextClassifier, corpus: NumericalizedCorpus, k: int,
               texts: list[str] | None = None, max_len: int = 400) -> list[LossRankedExample]:
    """The k examples the model gets most confidently wrong, loss-descending."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if k > len(corpus.streams):
        raise ValueError(f"k={k} exceeds corpus size {len(corpus.streams)}")
    if corpus.labels is None:
        raise ValueError("top_losses: corpus has no labels")
    stats = per_example_losses(clf, corpus, max_len)
    ranked = sorted(range(len(stats)), key=lambda i: -stats[i][1])[:k]
    return [
        LossRankedExample(
            text=texts[i] if texts else "",
            target=corpus.labels[i],
            predicted=stats[i][0],
            loss=stats[i][1],
            probability=stats[i][2],
        )
        for i in ranked
    ]


def vocab_label_association(corpus: NumericalizedCorpus, token_id: int) -> tuple[int, int]:
    """How many sequences contain the token, split by label (not-hate, hate).

    Absent tokens yield (0, 0)."""
    if corpus.labels is None:
        raise ValueError("vocab_label_association: corpus has no labels")
    counts = [0, 0]
    for stream, label in zip(corpus.streams, corpus.labels):
        if token_id in stream:
            counts[label] += 1
    return counts[0], counts[1]
