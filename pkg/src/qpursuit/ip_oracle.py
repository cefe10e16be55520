"""Exact Information Pursuit on small discrete instances.

The joint distribution over the label and all binary query answers is held
as a dense table of 2^n * C probabilities (n <= 20), making greedy
conditional-mutual-information selection, Bayesian posterior updates, and
entropy-based stopping exact. Entropy and mutual information are in bits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffmath import no_grad
from .embedding_store import EmbeddingDataset
from .query_dictionary import LearnableDictionary, learnable_answers

MAX_QUERIES = 20
_MASS_TOL = 1e-12


def _xlogx(p: np.ndarray) -> np.ndarray:
    """p * log2(p) with the 0 * log 0 := 0 convention."""
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log2(p[nz])
    return out


def entropy_bits(p: np.ndarray) -> float:
    return float(-_xlogx(np.asarray(p, dtype=np.float64)).sum())


@dataclass(frozen=True)
class DiscreteInstance:
    """Dense joint P(Y, q_1(X), ..., q_n(X)); table shape (2^n, C).

    Atom index bit i set means q_i answered +1.
    """

    table: np.ndarray
    num_queries: int
    num_classes: int

    def __post_init__(self):
        table = np.ascontiguousarray(self.table, dtype=np.float64)
        object.__setattr__(self, "table", table)
        if self.num_queries > MAX_QUERIES:
            raise ValueError(f"n={self.num_queries} exceeds the dense-table cap")
        if table.shape != (2 ** self.num_queries, self.num_classes):
            raise ValueError("table shape must be (2^n, C)")
        if np.any(table < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(table.sum() - 1.0) > _MASS_TOL:
            raise ValueError(f"total mass {table.sum()} differs from 1")

    def answer_bits(self) -> np.ndarray:
        """(2^n, n) matrix of atom answer bits (1 means answer +1)."""
        atoms = np.arange(2 ** self.num_queries)
        return (atoms[:, None] >> np.arange(self.num_queries)) & 1


@dataclass
class OracleState:
    history: list[tuple[int, int]] = field(default_factory=list)  # (index, ±1)
    posterior: np.ndarray | None = None

    def asked(self) -> set[int]:
        return {i for i, _ in self.history}


def mutual_information(joint: np.ndarray) -> float:
    """I(A; Y) in bits from a joint probability table (any 2-D shape)."""
    joint = np.asarray(joint, dtype=np.float64)
    if np.any(joint < 0):
        raise ValueError("probabilities must be nonnegative")
    if abs(joint.sum() - 1.0) > 1e-9:
        raise ValueError("joint mass must be 1")
    pa = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    terms = np.zeros_like(joint)
    terms[nz] = joint[nz] * np.log2(joint[nz] / (pa @ py)[nz])
    return float(terms.sum())


def _atom_weights(inst: DiscreteInstance, history: list[tuple[int, int]]) -> np.ndarray:
    """(2^n,) indicator of atoms consistent with the observed history."""
    bits = inst.answer_bits()
    keep = np.ones(bits.shape[0], dtype=bool)
    for idx, ans in history:
        keep &= bits[:, idx] == (1 if ans > 0 else 0)
    return keep


def _conditional_table(inst: DiscreteInstance,
                       history: list[tuple[int, int]]) -> np.ndarray:
    keep = _atom_weights(inst, history)
    cond = np.where(keep[:, None], inst.table, 0.0)
    mass = cond.sum()
    if mass <= 0:
        raise ValueError("observed history has probability zero")
    return cond / mass


def conditional_mutual_information(inst: DiscreteInstance, query: int,
                                   history: list[tuple[int, int]]) -> float:
    """I(q(X); Y | observed history), in bits."""
    cond = _conditional_table(inst, history)
    bits = inst.answer_bits()[:, query]
    joint = np.stack([cond[bits == 0].sum(axis=0), cond[bits == 1].sum(axis=0)])
    return mutual_information(joint)


def exact_ip_select(inst: DiscreteInstance, state: OracleState) -> int:
    """Unasked query maximizing conditional MI; ties break to lowest index."""
    asked = state.asked()
    candidates = [i for i in range(inst.num_queries) if i not in asked]
    if not candidates:
        raise ValueError("all queries asked")
    best_idx, best_mi = candidates[0], -1.0
    for i in candidates:
        mi = conditional_mutual_information(inst, i, state.history)
        if mi > best_mi + 1e-15:
            best_idx, best_mi = i, mi
    return best_idx


def posterior_update(inst: DiscreteInstance, state: OracleState,
                     query: int, answer: int) -> OracleState:
    """Bayes update of P(Y | observed answers) on the dense table."""
    history = state.history + [(query, answer)]
    cond = _conditional_table(inst, history)
    return OracleState(history=history, posterior=cond.sum(axis=0))


def prior_posterior(inst: DiscreteInstance) -> np.ndarray:
    return inst.table.sum(axis=0)


def run_ip(inst: DiscreteInstance, x_answers: np.ndarray,
           entropy_threshold: float, budget: int
           ) -> tuple[int, list[tuple[int, int, np.ndarray]]]:
    """Greedy select/observe/update loop.

    `x_answers` holds the n ±1 answers of the observed sample. Stops once
    posterior entropy (bits) drops below the threshold or after `budget`
    steps; prediction is the posterior argmax (lowest index on ties).
    Returns (prediction, trace) with trace rows (query index, answer,
    posterior after the update).
    """
    x_answers = np.asarray(x_answers)
    state = OracleState(posterior=prior_posterior(inst))
    trace: list[tuple[int, int, np.ndarray]] = []
    while (entropy_bits(state.posterior) > entropy_threshold
           and len(state.history) < budget
           and len(state.history) < inst.num_queries):
        idx = exact_ip_select(inst, state)
        answer = int(x_answers[idx])
        state = posterior_update(inst, state, idx, answer)
        trace.append((idx, answer, state.posterior.copy()))
    return int(state.posterior.argmax()), trace


def estimate_class_conditionals(dictionary: LearnableDictionary,
                                dataset: EmbeddingDataset) -> np.ndarray:
    """Empirical P(q_i(X) = +1 | Y = y), shape (n, C)."""
    answers = _hard_answers(dictionary, dataset)
    out = np.empty((dictionary.size, dataset.num_classes))
    for c in range(dataset.num_classes):
        members = dataset.labels == c
        if not members.any():
            raise ValueError(f"class {c} has no samples")
        out[:, c] = (answers[members] > 0).mean(axis=0)
    return out


def _hard_answers(dictionary: LearnableDictionary,
                  dataset: EmbeddingDataset) -> np.ndarray:
    if dictionary.answer_mode != "hard":
        raise ValueError("discrete instances require hard answers")
    with no_grad():
        return learnable_answers(
            dictionary, dataset.embeddings.astype(np.float64), train=False
        ).data


def instance_from_dataset(dictionary: LearnableDictionary,
                          dataset: EmbeddingDataset) -> DiscreteInstance:
    """Empirical joint over (Y, hard answers); unseen atoms get mass 0."""
    n = dictionary.size
    if n > MAX_QUERIES:
        raise ValueError(f"n={n} exceeds the dense-table cap")
    answers = _hard_answers(dictionary, dataset)
    bits = (answers > 0).astype(np.int64)
    atoms = bits @ (1 << np.arange(n))
    table = np.zeros((2 ** n, dataset.num_classes))
    np.add.at(table, (atoms, dataset.labels.astype(np.int64)), 1.0)
    table /= dataset.num_samples
    return DiscreteInstance(table, n, dataset.num_classes)


def save_instance(inst: DiscreteInstance, path: str | Path) -> None:
    """Serialize as the sidecar text format's #joint section."""
    lines = ["#joint", str(inst.num_classes), str(inst.num_queries)]
    lines.extend(f"{p:.17g}" for p in inst.table.reshape(-1))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_instance(path: str | Path) -> DiscreteInstance:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    try:
        start = lines.index("#joint")
    except ValueError:
        raise ValueError(f"{path}: no #joint section") from None
    c = int(lines[start + 1])
    n = int(lines[start + 2])
    values = [float(s) for s in lines[start + 3 : start + 3 + (2 ** n) * c]]
    if len(values) != (2 ** n) * c:
        raise ValueError(f"{path}: expected {(2 ** n) * c} probabilities")
    return DiscreteInstance(np.asarray(values).reshape(2 ** n, c), n, c)
