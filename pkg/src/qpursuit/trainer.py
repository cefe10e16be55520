"""Phased optimization of the querier/classifier/dictionary triple.

The full schedule is: initialization, warm-up (dictionary + classifier on
random histories, no querier), then per outer iteration a querier phase
(dictionary frozen; random-sampling epochs then biased-sampling epochs)
and a dictionary phase (querier frozen; biased sampling). The classifier
is trained in every phase. A joint-optimization variant and a black-box
MLP baseline are provided for comparison runs.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffmath import Adam, Tensor, cross_entropy, no_grad, zero_grads
from .embedding_store import EmbeddingDataset, split
from .pursuit_nets import (
    MLPHead,
    PursuitModel,
    TemperatureSchedule,
    rollout_masks,
    sample_random_masks,
)
from .query_dictionary import (
    LearnableDictionary,
    init_from_concepts,
    init_random,
    learnable_answers,
)


@dataclass
class TrainPlan:
    """Full training configuration; every field has a default."""

    num_classes: int = 2
    dict_size: int = 16
    budget: int = 5
    warmup_epochs: int = 60
    querier_random_epochs: int = 10
    querier_biased_epochs: int = 60
    dictionary_epochs: int = 80
    outer_iterations: int = 1
    batch_size: int = 128
    lr_classifier: float = 0.001
    lr_querier: float = 0.001
    lr_dictionary: float = 0.001
    hidden_width: int = 128
    val_fraction: float = 0.25
    seed: int = 0
    joint_optimization: bool = False
    skip_warmup: bool = False
    soft_answers: bool = False
    bn_off: bool = False
    init_mode: str = "random"  # "random" | "concepts"
    selection: str = "mean_over_k"  # best-model metric; or "at_budget"
    anneal_across_run: bool = False  # default: per-phase temperature restart
    exclude_asked: bool = True

    def __post_init__(self):
        counts = (self.warmup_epochs, self.querier_random_epochs,
                  self.querier_biased_epochs, self.dictionary_epochs,
                  self.outer_iterations)
        if any(c < 0 for c in counts):
            raise ValueError("epoch counts must be nonnegative")
        if self.budget > self.dict_size:
            raise ValueError("budget cannot exceed dictionary size")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (batch-norm variance)")
        if self.init_mode not in ("random", "concepts"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.selection not in ("mean_over_k", "at_budget"):
            raise ValueError(f"unknown selection {self.selection!r}")


_BOOL_KEYS = {"joint_optimization", "skip_warmup", "soft_answers", "bn_off",
              "anneal_across_run", "exclude_asked"}


def load_plan(path: str | Path, overrides: dict | None = None) -> TrainPlan:
    """Parse a flat key=value config file; unknown keys are errors."""
    fields = {f.name: f.type for f in dataclasses.fields(TrainPlan)}
    kwargs: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        kwargs[key] = _parse_value(key, value)
    if overrides:
        for key, value in overrides.items():
            if key not in fields:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = value
    return TrainPlan(**kwargs)


def _parse_value(key: str, value: str):
    if key in _BOOL_KEYS:
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean for {key}: {value!r}")
    if key in ("init_mode", "selection"):
        return value
    if key in ("val_fraction", "lr_classifier", "lr_querier", "lr_dictionary"):
        return float(value)
    return int(value)


@dataclass
class LogRecord:
    epoch: int
    phase: str
    loss: float
    val_acc_at_budget: float
    temperature: float
    seconds: float


@dataclass
class TrainLog:
    records: list[LogRecord] = field(default_factory=list)

    def append(self, **kw) -> None:
        self.records.append(LogRecord(**kw))

    def phases(self) -> list[str]:
        return [r.phase for r in self.records]

    def to_csv(self, path: str | Path, timing: bool = True) -> None:
        """Write the log. With timing=False the seconds column is zeroed so
        repeated runs with one seed emit byte-identical files."""
        lines = ["epoch,phase,loss,val_acc_at_budget,temperature,seconds"]
        for r in self.records:
            secs = r.seconds if timing else 0.0
            lines.append(f"{r.epoch},{r.phase},{r.loss:.10f},"
                         f"{r.val_acc_at_budget:.6f},{r.temperature:.6f},{secs:.3f}")
        Path(path).write_text("\n".join(lines) + "\n")


def vip_loss(model: PursuitModel, emb_batch: np.ndarray, labels: np.ndarray,
             masks: np.ndarray, temperature: float, use_querier: bool = True,
             dict_train: bool = False, dict_frozen: bool = False,
             exclude_asked: bool = True) -> Tensor:
    """Cross-entropy of the classifier on history S (plus the querier's
    added query-answer pair when `use_querier`). Equals the KL objective up
    to the label-entropy constant for hard labels."""
    if emb_batch.shape[0] == 0:
        raise ValueError("empty batch")
    if dict_frozen:
        with no_grad():
            answers = learnable_answers(model.dictionary, emb_batch, train=False)
    else:
        answers = learnable_answers(model.dictionary, emb_batch, train=dict_train)
    mask_t = Tensor(masks)
    if use_querier:
        sel, _ = model.querier_forward(answers, masks, temperature,
                                       exclude_asked=exclude_asked)
        mask_t = mask_t + sel
    logits = model.classifier_logits(answers, mask_t)
    return cross_entropy(logits, labels)


def rollout_vip_loss(model: PursuitModel, emb_batch: np.ndarray,
                     labels: np.ndarray, budget: int, temperature: float,
                     dict_train: bool = False, dict_frozen: bool = False,
                     exclude_asked: bool = True) -> Tensor:
    """Biased-sampling objective: a differentiable querier rollout with the
    classifier cross-entropy averaged over every history prefix length
    1..budget. Each summand is the single-step objective on the biased
    history of that length; averaging gives the querier gradient signal at
    all depths instead of just the final selection."""
    if dict_frozen:
        with no_grad():
            answers = learnable_answers(model.dictionary, emb_batch, train=False)
    else:
        answers = learnable_answers(model.dictionary, emb_batch, train=dict_train)
    mask = Tensor(np.zeros(answers.shape))
    total: Tensor | None = None
    for _ in range(budget):
        sel, _ = model.querier_forward(answers, mask.data, temperature,
                                       exclude_asked=exclude_asked)
        mask = mask + sel
        step_loss = cross_entropy(model.classifier_logits(answers, mask), labels)
        total = step_loss if total is None else total + step_loss
    assert total is not None
    return total * (1.0 / budget)


def evaluate_accuracy(model: PursuitModel, ds: EmbeddingDataset, k: int,
                      batch_size: int = 2048) -> float:
    """Accuracy of the classifier after a deterministic length-k rollout."""
    correct = 0
    with no_grad():
        for lo in range(0, ds.num_samples, batch_size):
            emb = ds.embeddings[lo : lo + batch_size].astype(np.float64)
            answers = learnable_answers(model.dictionary, emb, train=False)
            masks = rollout_masks(model, answers.data,
                                  np.full(emb.shape[0], k), temperature=1.0)
            probs = model.classifier_forward(answers.data, masks)
            pred = probs.data.argmax(axis=1)
            correct += int((pred == ds.labels[lo : lo + batch_size]).sum())
    return correct / ds.num_samples


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield perm[lo : lo + batch_size]


class _Run:
    """Shared state for one training run."""

    def __init__(self, plan: TrainPlan, data: EmbeddingDataset,
                 concept_vectors: np.ndarray | None = None):
        self.plan = plan
        self.train_ds, self.val_ds = split(data, plan.val_fraction, plan.seed)
        mode = "soft" if plan.soft_answers else "hard"
        if plan.init_mode == "concepts":
            if concept_vectors is None:
                raise ValueError("init_mode=concepts requires concept vectors")
            dictionary = init_from_concepts(concept_vectors, answer_mode=mode)
        else:
            dictionary = init_random(plan.dict_size, data.dim, plan.seed,
                                     answer_mode=mode)
        dictionary.use_bn = not plan.bn_off
        self.model = PursuitModel(dictionary, plan.num_classes,
                                  hidden=(plan.hidden_width, plan.hidden_width),
                                  seed=plan.seed + 1)
        self.rng = np.random.default_rng(plan.seed + 2)
        self.log = TrainLog()
        self.epoch = 0
        self.best_acc = -1.0
        self.best_snapshot = self.model.snapshot()
        self._opts: dict[str, _GroupedAdam] = {}

    def _record(self, phase: str, loss: float, temperature: float,
                started: float) -> None:
        if self.plan.selection == "mean_over_k":
            per_k = [evaluate_accuracy(self.model, self.val_ds, k)
                     for k in range(1, self.plan.budget + 1)]
            acc = per_k[-1]
            metric = float(np.mean(per_k))
        else:
            acc = evaluate_accuracy(self.model, self.val_ds, self.plan.budget)
            metric = acc
        if metric > self.best_acc:
            self.best_acc = metric
            self.best_snapshot = self.model.snapshot()
        self.log.append(epoch=self.epoch, phase=phase, loss=loss,
                        val_acc_at_budget=acc, temperature=temperature,
                        seconds=time.perf_counter() - started)
        self.epoch += 1

    def _epoch_pass(self, phase: str, params, temperature: float,
                    make_loss) -> None:
        started = time.perf_counter()
        opt = self._optimizer(phase, params)
        losses = []
        for idx in _batches(self.train_ds.num_samples, self.plan.batch_size,
                            self.rng):
            if idx.size < 2 and phase in ("warmup", "dictionary", "joint"):
                continue  # batch-norm needs a variance estimate
            emb = self.train_ds.embeddings[idx].astype(np.float64)
            labels = self.train_ds.labels[idx]
            loss = make_loss(emb, labels, temperature)
            zero_grads(self.model.parameters())
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        self._record(phase, float(np.mean(losses)) if losses else float("nan"),
                     temperature, started)

    def _optimizer(self, phase: str,
                   params: list[tuple[Tensor, float]]) -> "_GroupedAdam":
        if phase not in self._opts:
            self._opts[phase] = _GroupedAdam(params)
        return self._opts[phase]


class _GroupedAdam:
    """One Adam instance per learning-rate group; state persists per phase."""

    def __init__(self, params: list[tuple[Tensor, float]]):
        groups: dict[float, list[Tensor]] = {}
        for p, lr in params:
            groups.setdefault(lr, []).append(p)
        self.opts = [Adam(ps, lr=lr) for lr, ps in groups.items()]

    def step(self) -> None:
        for opt in self.opts:
            opt.step()


def _group(model: PursuitModel, plan: TrainPlan, *, clf=False, qry=False,
           dic=False) -> list[tuple[Tensor, float]]:
    params: list[tuple[Tensor, float]] = []
    if clf:
        params += [(p, plan.lr_classifier) for p in model.classifier.parameters()]
    if qry:
        params += [(p, plan.lr_querier) for p in model.querier.parameters()]
    if dic:
        params += [(p, plan.lr_dictionary) for p in model.dictionary.parameters()]
    return params


def warmup_phase(run: _Run) -> None:
    plan = run.plan
    params = _group(run.model, plan, clf=True, dic=True)
    def make_loss(emb, labels, _t):
        masks = sample_random_masks(emb.shape[0], plan.dict_size, plan.budget,
                                    run.rng)
        return vip_loss(run.model, emb, labels, masks, temperature=1.0,
                        use_querier=False, dict_train=True)
    for _ in range(plan.warmup_epochs):
        run._epoch_pass("warmup", params, 1.0, make_loss)


def querier_phase(run: _Run) -> None:
    plan = run.plan
    params = _group(run.model, plan, clf=True, qry=True)
    total = plan.querier_random_epochs + plan.querier_biased_epochs
    schedule = TemperatureSchedule(total)
    for e in range(plan.querier_random_epochs):
        t = schedule.at(e)
        def make_loss(emb, labels, temperature):
            masks = sample_random_masks(emb.shape[0], plan.dict_size,
                                        max(plan.budget - 1, 0), run.rng)
            return vip_loss(run.model, emb, labels, masks, temperature,
                            dict_frozen=True, exclude_asked=plan.exclude_asked)
        run._epoch_pass("querier_random", params, t, make_loss)
    for e in range(plan.querier_biased_epochs):
        t = schedule.at(plan.querier_random_epochs + e)
        def make_loss(emb, labels, temperature):
            return rollout_vip_loss(run.model, emb, labels, plan.budget,
                                    temperature, dict_frozen=True,
                                    exclude_asked=plan.exclude_asked)
        run._epoch_pass("querier_biased", params, t, make_loss)


def dictionary_phase(run: _Run) -> None:
    plan = run.plan
    params = _group(run.model, plan, clf=True, dic=True)
    schedule = TemperatureSchedule(plan.dictionary_epochs)
    for e in range(plan.dictionary_epochs):
        t = schedule.at(e)
        def make_loss(emb, labels, temperature):
            return rollout_vip_loss(run.model, emb, labels, plan.budget,
                                    temperature, dict_train=True,
                                    exclude_asked=plan.exclude_asked)
        run._epoch_pass("dictionary", params, t, make_loss)


def run_algorithm1(plan: TrainPlan, data: EmbeddingDataset,
                   concept_vectors: np.ndarray | None = None
                   ) -> tuple[PursuitModel, TrainLog]:
    """Initialization -> warm-up -> [querier phase -> dictionary phase] x
    outer iterations; returns the best-validation snapshot."""
    run = _Run(plan, data, concept_vectors)
    if not plan.skip_warmup:
        warmup_phase(run)
    for _ in range(plan.outer_iterations):
        querier_phase(run)
        dictionary_phase(run)
    run.model.restore(run.best_snapshot)
    return run.model, run.log


def joint_train(plan: TrainPlan, data: EmbeddingDataset,
                concept_vectors: np.ndarray | None = None
                ) -> tuple[PursuitModel, TrainLog]:
    """Single loop updating classifier, querier, and dictionary together:
    random-sampling epochs then biased-sampling epochs."""
    run = _Run(plan, data, concept_vectors)
    params = _group(run.model, plan, clf=True, qry=True, dic=True)
    total = plan.querier_random_epochs + plan.querier_biased_epochs
    schedule = TemperatureSchedule(total)
    for e in range(plan.querier_random_epochs):
        t = schedule.at(e)
        def make_loss(emb, labels, temperature):
            masks = sample_random_masks(emb.shape[0], plan.dict_size,
                                        max(plan.budget - 1, 0), run.rng)
            return vip_loss(run.model, emb, labels, masks, temperature,
                            dict_train=True, exclude_asked=plan.exclude_asked)
        run._epoch_pass("joint_random", params, t, make_loss)
    for e in range(plan.querier_biased_epochs):
        t = schedule.at(plan.querier_random_epochs + e)
        def make_loss(emb, labels, temperature):
            return rollout_vip_loss(run.model, emb, labels, plan.budget,
                                    temperature, dict_train=True,
                                    exclude_asked=plan.exclude_asked)
        run._epoch_pass("joint_biased", params, t, make_loss)
    run.model.restore(run.best_snapshot)
    return run.model, run.log


class BlackboxMLP:
    """Unconstrained MLP over raw embeddings: dropout(0.5) on the input,
    fully connected layers with LayerNorm + ReLU, linear class head."""

    def __init__(self, dim: int, num_classes: int,
                 widths: tuple[int, ...] = (256, 128), seed: int = 0,
                 dropout: float = 0.5):
        rng = np.random.default_rng(seed)
        self.dropout = dropout
        self.net = MLPHead(dim, (widths[0], widths[1]), num_classes, rng, "bb")
        self._rng = np.random.default_rng(seed + 1)

    def logits(self, emb: np.ndarray, train: bool = False) -> Tensor:
        x = Tensor(np.asarray(emb, dtype=np.float64))
        if train and self.dropout > 0:
            keep = (self._rng.random(x.shape) >= self.dropout) / (1.0 - self.dropout)
            x = x * Tensor(keep)
        return self.net.forward(x)

    def accuracy(self, ds: EmbeddingDataset) -> float:
        with no_grad():
            pred = self.logits(ds.embeddings.astype(np.float64)).data.argmax(axis=1)
        return float((pred == ds.labels).mean())


def train_blackbox(data: EmbeddingDataset, epochs: int = 30,
                   batch_size: int = 512, lr: float = 0.001,
                   weight_decay: float = 0.0001, seed: int = 0,
                   widths: tuple[int, ...] = (256, 128)) -> BlackboxMLP:
    model = BlackboxMLP(data.dim, data.num_classes, widths=widths, seed=seed)
    opt = Adam(model.net.parameters(), lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed + 2)
    for _ in range(epochs):
        for idx in _batches(data.num_samples, batch_size, rng):
            logits = model.logits(data.embeddings[idx].astype(np.float64),
                                  train=True)
            loss = cross_entropy(logits, data.labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return model
