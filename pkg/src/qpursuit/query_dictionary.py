"""Query spaces over semantic embeddings.

Two families:

* FixedDictionary — a frozen set of concept vectors. Soft answers are the
  Z-score-normalized dot products (one global mean/std pooled over all
  queries and training samples); hard answers threshold each dot product at
  its training-set mean.
* LearnableDictionary — trainable hyperplanes parameterized through a
  per-query batch-norm of the normalized dot product, with a hard sign
  output and a tanh straight-through surrogate for gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffmath import Tensor, no_grad
from .embedding_store import EmbeddingDataset

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class FixedDictionary:
    """Frozen concept-embedding dictionary (unit rows)."""

    concept_vectors: np.ndarray  # (n, d), unit rows
    concept_names: list[str] | None = None
    zscore_mean: float | None = None
    zscore_std: float | None = None
    thresholds: np.ndarray | None = None  # (n,), present iff hard mode

    def __post_init__(self):
        self.concept_vectors = np.asarray(self.concept_vectors, dtype=np.float64)
        norms = np.linalg.norm(self.concept_vectors, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("concept vectors must have unit L2 norm")
        if self.concept_names is not None and len(self.concept_names) != self.size:
            raise ValueError("concept name count must equal dictionary size")

    @property
    def size(self) -> int:
        return self.concept_vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.concept_vectors.shape[1]


def fit_zscore(dictionary: FixedDictionary, train: EmbeddingDataset) -> FixedDictionary:
    """Fit the single global mean/std of dot products pooled over all queries
    and all training samples."""
    if train.num_samples == 0:
        raise ValueError("cannot fit statistics on an empty training set")
    dots = train.embeddings.astype(np.float64) @ dictionary.concept_vectors.T
    dictionary.zscore_mean = float(dots.mean())
    dictionary.zscore_std = float(np.sqrt(((dots - dots.mean()) ** 2).mean()))
    if dictionary.zscore_std <= 0:
        raise ValueError("degenerate dot products: pooled std is zero")
    return dictionary


def fixed_soft_answers(dictionary: FixedDictionary, batch: np.ndarray) -> np.ndarray:
    """Z-scored dot products, shape (B, n)."""
    if dictionary.zscore_mean is None or dictionary.zscore_std is None:
        raise ValueError("Z-score statistics not fitted; call fit_zscore first")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[1] != dictionary.dim:
        raise ValueError("embedding dimension mismatch")
    dots = batch @ dictionary.concept_vectors.T
    return (dots - dictionary.zscore_mean) / dictionary.zscore_std


def fit_thresholds(dictionary: FixedDictionary, train: EmbeddingDataset) -> FixedDictionary:
    """Per-query threshold = mean dot product over the training set."""
    if train.num_samples == 0:
        raise ValueError("cannot fit thresholds on an empty training set")
    dots = train.embeddings.astype(np.float64) @ dictionary.concept_vectors.T
    dictionary.thresholds = dots.mean(axis=0)
    return dictionary


def fixed_hard_answers(dictionary: FixedDictionary, batch: np.ndarray) -> np.ndarray:
    """sgn(dot - threshold) with the sgn(0) := +1 tie rule, shape (B, n)."""
    if dictionary.thresholds is None:
        raise ValueError("thresholds not fitted; call fit_thresholds first")
    batch = np.asarray(batch, dtype=np.float64)
    dots = batch @ dictionary.concept_vectors.T
    return np.where(dots - dictionary.thresholds >= 0.0, 1.0, -1.0)


@dataclass
class LearnableDictionary:
    """Batch-norm-parameterized hyperplane queries.

    Trainable state: v (n, d), gamma (1, n), beta (1, n). Non-trainable
    batch-norm running statistics track the mean/variance of the normalized
    dot products for inference.
    """

    v: Tensor
    gamma: Tensor
    beta: Tensor
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    answer_mode: str = "hard"  # "hard" | "soft"
    use_bn: bool = True  # False: plain affine sgn(<v/|v|, e> * gamma - beta)
    bn_epsilon: float = BN_EPSILON
    bn_momentum: float = BN_MOMENTUM
    concept_names: list[str] | None = None

    @property
    def size(self) -> int:
        return self.v.shape[0]

    @property
    def dim(self) -> int:
        return self.v.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.v, self.gamma, self.beta]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [("dict.v", self.v), ("dict.gamma", self.gamma),
                ("dict.beta", self.beta)]

    def named_state(self) -> list[tuple[str, Tensor]]:
        """Full checkpoint state, running statistics included."""
        return self.named_parameters() + [
            ("dict.bn_mean", Tensor(self.bn_running_mean[None, :])),
            ("dict.bn_var", Tensor(self.bn_running_var[None, :])),
        ]

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.v.data = state["dict.v"].copy()
        self.gamma.data = state["dict.gamma"].reshape(1, -1).copy()
        self.beta.data = state["dict.beta"].reshape(1, -1).copy()
        self.bn_running_mean = state["dict.bn_mean"].reshape(-1).copy()
        self.bn_running_var = state["dict.bn_var"].reshape(-1).copy()

    def effective_hyperplanes(self) -> tuple[np.ndarray, np.ndarray]:
        """Recover (w, b) such that inference hard answers equal
        sgn(<w, e> - b), using the running statistics for mean/std.

        The std includes the batch-norm epsilon so the recovery matches the
        normalization actually applied at inference.
        """
        v = self.v.data
        vn = v / np.linalg.norm(v, axis=1, keepdims=True)
        sigma = np.sqrt(self.bn_running_var + self.bn_epsilon)
        gamma = self.gamma.data.reshape(-1)
        beta = self.beta.data.reshape(-1)
        w = vn * (gamma / sigma)[:, None]
        b = self.bn_running_mean / sigma * gamma - beta
        return w, b


def init_random(n: int, d: int, seed: int, answer_mode: str = "hard") -> LearnableDictionary:
    """v ~ N(0, I), gamma = 1, beta = 0, running stats (0, 1)."""
    if n < 1 or d < 2:
        raise ValueError("need n >= 1 and d >= 2")
    rng = np.random.default_rng(seed)
    return LearnableDictionary(
        v=Tensor(rng.standard_normal((n, d)), requires_grad=True),
        gamma=Tensor(np.ones((1, n)), requires_grad=True),
        beta=Tensor(np.zeros((1, n)), requires_grad=True),
        bn_running_mean=np.zeros(n),
        bn_running_var=np.ones(n),
        answer_mode=answer_mode,
    )


def init_from_concepts(vectors: np.ndarray, names: list[str] | None = None,
                       answer_mode: str = "hard") -> LearnableDictionary:
    """Seed v with given concept vectors; scalars as in random init."""
    vectors = np.asarray(vectors, dtype=np.float64)
    n, d = vectors.shape
    if np.any(np.linalg.norm(vectors, axis=1) == 0.0):
        raise ValueError("concept vectors must be nonzero")
    if names is not None and len(names) != n:
        raise ValueError("concept name count must equal vector count")
    return LearnableDictionary(
        v=Tensor(vectors.copy(), requires_grad=True),
        gamma=Tensor(np.ones((1, n)), requires_grad=True),
        beta=Tensor(np.zeros((1, n)), requires_grad=True),
        bn_running_mean=np.zeros(n),
        bn_running_var=np.ones(n),
        answer_mode=answer_mode,
        concept_names=names,
    )


def _normalized_dots(dictionary: LearnableDictionary, batch: np.ndarray) -> Tensor:
    """<v_i/||v_i||, e> for every row of the batch, differentiable in v."""
    norms = np.linalg.norm(dictionary.v.data, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm dictionary vector")
    sq = (dictionary.v * dictionary.v).sum(axis=1, keepdims=True)
    vn = dictionary.v * sq ** -0.5
    return Tensor(np.asarray(batch, dtype=np.float64)) @ _transpose(vn)


def _transpose(t: Tensor) -> Tensor:
    out = Tensor._node(t.data.T, (t,))
    out._backward = lambda: t._accumulate(out.grad.T)
    return out


def learnable_answers(dictionary: LearnableDictionary, batch: np.ndarray,
                      train: bool = False) -> Tensor:
    """Answer batch (B, n) as a graph tensor.

    Train phase normalizes with batch statistics (and updates the running
    averages once per call, momentum rule new = (1-m)*old + m*batch);
    inference uses the stored running statistics. Hard mode emits exact
    signs with a tanh straight-through gradient; soft mode emits the
    batch-norm output directly.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] < 1:
        raise ValueError("empty batch")
    dots = _normalized_dots(dictionary, batch)
    if not dictionary.use_bn:
        pre = dots * dictionary.gamma - dictionary.beta
        return pre.sign_st() if dictionary.answer_mode == "hard" else pre
    if train:
        if batch.shape[0] < 2:
            raise ValueError("train-phase batch must have size >= 2 (variance)")
        m = dots.mean(axis=0, keepdims=True)
        centered = dots - m
        var = (centered * centered).mean(axis=0, keepdims=True)
        mom = dictionary.bn_momentum
        dictionary.bn_running_mean = (1.0 - mom) * dictionary.bn_running_mean + mom * m.data.reshape(-1)
        dictionary.bn_running_var = (1.0 - mom) * dictionary.bn_running_var + mom * var.data.reshape(-1)
        normalized = centered * (var + dictionary.bn_epsilon) ** -0.5
    else:
        mean = Tensor(dictionary.bn_running_mean[None, :])
        inv = Tensor(1.0 / np.sqrt(dictionary.bn_running_var + dictionary.bn_epsilon)[None, :])
        normalized = (dots - mean) * inv
    pre = normalized * dictionary.gamma + dictionary.beta
    if dictionary.answer_mode == "hard":
        return pre.sign_st()
    return pre


def pre_sign_activations(dictionary: LearnableDictionary, batch: np.ndarray,
                         train: bool = False) -> np.ndarray:
    """Batch-norm output before the sign, detached (for diagnostics)."""
    mode = dictionary.answer_mode
    dictionary.answer_mode = "soft"
    try:
        with no_grad():
            saved = (dictionary.bn_running_mean.copy(), dictionary.bn_running_var.copy())
            out = learnable_answers(dictionary, batch, train=train).data.copy()
            if train:
                # diagnostics must not perturb running statistics
                dictionary.bn_running_mean, dictionary.bn_running_var = saved
    finally:
        dictionary.answer_mode = mode
    return out
