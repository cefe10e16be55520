"""Classifier and querier networks over masked query-answer histories.

Both networks are two-hidden-layer MLPs with LayerNorm + ReLU between
layers, fed the concatenation [answers * mask, mask] (length 2n) so that
an answered -1 stays distinguishable from an unasked query. The querier
emits a hard one-hot selection in the forward pass and routes gradients
through the temperature-scaled softmax (straight-through).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffmath import Tensor, concat, layer_norm, no_grad
from .query_dictionary import LearnableDictionary


class HistorySaturatedError(RuntimeError):
    """All queries already asked; no selection possible."""


@dataclass
class History:
    """Observed query-answer pairs for one sample, as mask + masked answers."""

    mask: np.ndarray            # (n,), {0, 1}
    masked_answers: np.ndarray  # (n,), answers where mask == 1, else 0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float64)
        self.masked_answers = np.asarray(self.masked_answers, dtype=np.float64)
        if self.mask.shape != self.masked_answers.shape:
            raise ValueError("mask and answers must share shape")
        if np.any(self.masked_answers[self.mask == 0.0] != 0.0):
            raise ValueError("answers must be zero at masked-out positions")

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def empty(cls, n: int) -> "History":
        return cls(np.zeros(n), np.zeros(n))


def update_history(h: History, selection: np.ndarray, answers: np.ndarray) -> History:
    """Add the selected query's answer; saturating on double selection."""
    selection = np.asarray(selection, dtype=np.float64)
    new_mask = np.minimum(h.mask + selection, 1.0)
    gained = new_mask - h.mask
    return History(new_mask, h.masked_answers + np.asarray(answers) * gained)


@dataclass
class TemperatureSchedule:
    """Linear interpolation from start to end over total_epochs."""

    total_epochs: int
    start: float = 1.0
    end: float = 0.2

    def at(self, epoch: int) -> float:
        if self.total_epochs <= 1:
            return self.end if self.total_epochs == 1 and epoch > 0 else self.start
        frac = min(max(epoch / (self.total_epochs - 1), 0.0), 1.0)
        return self.start + frac * (self.end - self.start)


class MLPHead:
    """linear -> LN -> ReLU -> linear -> LN -> ReLU -> linear."""

    def __init__(self, in_dim: int, hidden: tuple[int, int], out_dim: int,
                 rng: np.random.Generator, prefix: str):
        self.prefix = prefix
        dims = [in_dim, hidden[0], hidden[1], out_dim]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        self.ln_gains: list[Tensor] = []
        self.ln_biases: list[Tensor] = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            scale = np.sqrt(2.0 / a)
            self.weights.append(Tensor(rng.standard_normal((a, b)) * scale,
                                       requires_grad=True))
            self.biases.append(Tensor(np.zeros((1, b)), requires_grad=True))
            if i < len(dims) - 2:
                self.ln_gains.append(Tensor(np.ones((1, b)), requires_grad=True))
                self.ln_biases.append(Tensor(np.zeros((1, b)), requires_grad=True))

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < len(self.weights) - 1:
                h = layer_norm(h, self.ln_gains[i], self.ln_biases[i]).relu()
        return h

    def parameters(self) -> list[Tensor]:
        return self.weights + self.biases + self.ln_gains + self.ln_biases

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named.append((f"{self.prefix}.w{i}", w))
            named.append((f"{self.prefix}.b{i}", b))
        for i, (g, b) in enumerate(zip(self.ln_gains, self.ln_biases)):
            named.append((f"{self.prefix}.ln_g{i}", g))
            named.append((f"{self.prefix}.ln_b{i}", b))
        return named

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            t.data = state[name].reshape(t.data.shape).copy()


class PursuitModel:
    """Classifier f and querier g over a shared dictionary (no shared weights)."""

    def __init__(self, dictionary: LearnableDictionary, num_classes: int,
                 hidden: tuple[int, int] = (512, 512), seed: int = 0):
        n = dictionary.size
        rng = np.random.default_rng(seed)
        self.dictionary = dictionary
        self.num_classes = num_classes
        self.classifier = MLPHead(2 * n, hidden, num_classes, rng, "clf")
        self.querier = MLPHead(2 * n, hidden, n, rng, "qry")

    @property
    def num_queries(self) -> int:
        return self.dictionary.size

    def history_input(self, answers: Tensor | np.ndarray,
                      mask: Tensor | np.ndarray) -> Tensor:
        answers = answers if isinstance(answers, Tensor) else Tensor(answers)
        mask = mask if isinstance(mask, Tensor) else Tensor(mask)
        return concat([answers * mask, mask], axis=1)

    def classifier_logits(self, answers, mask) -> Tensor:
        return self.classifier.forward(self.history_input(answers, mask))

    def classifier_forward(self, answers, mask) -> Tensor:
        """Class probability rows (softmax over logits)."""
        return self.classifier_logits(answers, mask).softmax(axis=1)

    def querier_forward(self, answers, mask, temperature: float,
                        exclude_asked: bool = True) -> tuple[Tensor, Tensor]:
        """Returns (one-hot selection, soft probabilities).

        Forward emits the argmax one-hot of softmax(logits / T); gradients
        flow through the soft probabilities (straight-through).
        """
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        logits = self.querier.forward(self.history_input(answers, mask))
        mask_np = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
        if exclude_asked:
            asked = mask_np >= 0.5
            if np.any(asked.all(axis=1)):
                raise HistorySaturatedError("every query already asked")
            logits = logits.masked_fill(asked, -1e30)
        probs = (logits * (1.0 / temperature)).softmax(axis=1)
        return probs.onehot_argmax_st(axis=1), probs

    def parameters(self) -> list[Tensor]:
        return (self.classifier.parameters() + self.querier.parameters()
                + self.dictionary.parameters())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return (self.classifier.named_parameters()
                + self.querier.named_parameters()
                + self.dictionary.named_state())

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.classifier.load_state(state)
        self.querier.load_state(state)
        self.dictionary.load_state(state)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        self.load_state(snap)


def sample_random_history(answers_row: np.ndarray, max_k: int,
                          rng: np.random.Generator) -> History:
    """k ~ uniform{0..max_k}, then k distinct query indices uniformly."""
    n = answers_row.shape[0]
    if max_k > n:
        raise ValueError("max_k exceeds dictionary size")
    k = int(rng.integers(0, max_k + 1))
    mask = np.zeros(n)
    if k:
        mask[rng.choice(n, size=k, replace=False)] = 1.0
    return History(mask, np.asarray(answers_row) * mask)


def sample_random_masks(batch_size: int, n: int, max_k: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Vectorized mask sampling: per row k ~ uniform{0..max_k}, indices
    uniform without replacement."""
    if max_k > n:
        raise ValueError("max_k exceeds dictionary size")
    ks = rng.integers(0, max_k + 1, size=batch_size)
    # rank of uniform noise per row is a uniform permutation; taking the
    # positions with rank < k draws k indices without replacement
    ranks = np.argsort(np.argsort(rng.random((batch_size, n)), axis=1), axis=1)
    return (ranks < ks[:, None]).astype(np.float64)


def rollout_masks(model: PursuitModel, answers: np.ndarray,
                  lengths: np.ndarray, temperature: float) -> np.ndarray:
    """Build histories with the current querier, advancing all samples in
    lockstep; selections computed without gradients and never repeated.

    `lengths[i]` is the rollout length for sample i (0 <= length <= n).
    """
    b, n = answers.shape
    lengths = np.asarray(lengths)
    if np.any(lengths > n):
        raise ValueError("rollout length exceeds dictionary size")
    masks = np.zeros((b, n))
    with no_grad():
        for step in range(int(lengths.max(initial=0))):
            active = lengths > step
            if not active.any():
                break
            sel, _ = model.querier_forward(answers[active], masks[active],
                                           temperature, exclude_asked=True)
            masks[active] = np.minimum(masks[active] + sel.data, 1.0)
    return masks


def rollout_biased_history(model: PursuitModel, answers_row: np.ndarray,
                           k_target: int, temperature: float,
                           rng: np.random.Generator | None = None) -> History:
    """Single-sample biased rollout. Training draws k ~ uniform{0..k_target}
    (pass `rng`); evaluation uses k = k_target exactly (rng omitted)."""
    n = answers_row.shape[0]
    if k_target > n:
        raise ValueError("k_target exceeds dictionary size")
    k = int(rng.integers(0, k_target + 1)) if rng is not None else k_target
    mask = rollout_masks(model, answers_row[None, :], np.array([k]), temperature)[0]
    return History(mask, np.asarray(answers_row) * mask)
