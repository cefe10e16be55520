"""Evaluation metrics, explanation traces, report emission, and the CLI.

CSV files are the source of truth; plots are emitted as small standalone
SVG files with no plotting dependency. Re-emission on identical inputs is
byte-identical.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ip_oracle
from .diffmath import no_grad, save_checkpoint
from .embedding_store import (
    EmbeddingDataset,
    SynthSpec,
    load_dataset,
    save_dataset,
    synth_gaussian_mixture,
)
from .pursuit_nets import PursuitModel, rollout_masks
from .query_dictionary import (
    FixedDictionary,
    fit_thresholds,
    fit_zscore,
    fixed_hard_answers,
    fixed_soft_answers,
    init_random,
    learnable_answers,
)
from .trainer import (
    TrainPlan,
    evaluate_accuracy,
    joint_train,
    load_plan,
    run_algorithm1,
)


@dataclass
class AccuracyCurve:
    """Test accuracy after k = 1..budget querier-selected queries."""

    accuracies: list[float]
    dataset_tag: str = "dataset"
    model_tag: str = "model"
    seed: int = 0

    def __post_init__(self):
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")


@dataclass
class ExplanationTrace:
    """Greedy query-answer records with the posterior after each step."""

    steps: list[tuple[int, int, np.ndarray]]  # (k-th query index, answer, posterior)
    prediction: int
    sample_id: int = 0

    def __post_init__(self):
        indices = [i for i, _, _ in self.steps]
        if len(set(indices)) != len(indices):
            raise ValueError("trace query indices must be distinct")
        for _, _, post in self.steps:
            if abs(post.sum() - 1.0) > 1e-6:
                raise ValueError("posterior rows must sum to 1")


def accuracy_curve(model: PursuitModel, test_data: EmbeddingDataset,
                   budget: int, dataset_tag: str = "dataset",
                   model_tag: str = "model", seed: int = 0) -> AccuracyCurve:
    if budget > model.num_queries:
        raise ValueError("budget exceeds dictionary size")
    accs = [evaluate_accuracy(model, test_data, k) for k in range(1, budget + 1)]
    return AccuracyCurve(accs, dataset_tag, model_tag, seed)


def explanation_trace(model: PursuitModel, x: np.ndarray, budget: int,
                      entropy_threshold: float = 0.0,
                      sample_id: int = 0) -> ExplanationTrace:
    """Greedy rollout on one sample, recording the classifier posterior
    after each query; stops once posterior entropy (bits) reaches the
    threshold or the budget is exhausted."""
    x = np.asarray(x, dtype=np.float64)[None, :]
    n = model.num_queries
    with no_grad():
        answers = learnable_answers(model.dictionary, x, train=False).data
        mask = np.zeros((1, n))
        posterior = model.classifier_forward(answers, mask).data[0]
        steps: list[tuple[int, int, np.ndarray]] = []
        while (ip_oracle.entropy_bits(posterior) > entropy_threshold
               and len(steps) < budget):
            sel, _ = model.querier_forward(answers, mask, temperature=1.0)
            idx = int(sel.data[0].argmax())
            mask = np.minimum(mask + sel.data, 1.0)
            posterior = model.classifier_forward(answers, mask).data[0]
            steps.append((idx, int(answers[0, idx]), posterior.copy()))
    return ExplanationTrace(steps, int(posterior.argmax()), sample_id)


def _write_csv(path: Path, header: str, rows: list[str]) -> None:
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")


def _svg_line_plot(values: list[float], title: str) -> str:
    """Tiny standalone SVG line plot over k = 1..len(values), y in [0, 1]."""
    w, h, pad = 480, 320, 40
    n = len(values)
    pts = []
    for i, v in enumerate(values):
        x = pad + (w - 2 * pad) * (i / max(n - 1, 1))
        y = h - pad - (h - 2 * pad) * min(max(v, 0.0), 1.0)
        pts.append(f"{x:.1f},{y:.1f}")
    poly = " ".join(pts)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">'
        f'<rect width="{w}" height="{h}" fill="white"/>'
        f'<text x="{w / 2:.0f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>'
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>'
        f'<polyline points="{poly}" fill="none" stroke="steelblue" stroke-width="2"/>'
        "</svg>\n"
    )


def emit_reports(curves: list[AccuracyCurve],
                 traces: list[ExplanationTrace],
                 matrices: dict[str, np.ndarray],
                 out_dir: str | Path) -> list[Path]:
    """Write accuracy-curve, trace, and matrix CSVs plus SVG curve plots.

    File names embed dataset/model/seed tags; identical inputs yield
    byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for curve in curves:
        stem = f"curve_{curve.dataset_tag}_{curve.model_tag}_s{curve.seed}"
        rows = [f"{k + 1},{a:.6f}" for k, a in enumerate(curve.accuracies)]
        _write_csv(out / f"{stem}.csv", "k,accuracy", rows)
        (out / f"{stem}.svg").write_text(
            _svg_line_plot(curve.accuracies, stem), encoding="utf-8")
        written += [out / f"{stem}.csv", out / f"{stem}.svg"]
    for trace in traces:
        rows = []
        for k, (idx, ans, post) in enumerate(trace.steps, 1):
            post_cols = ",".join(f"{p:.6f}" for p in post)
            rows.append(f"{k},{idx},{ans},{post_cols}")
        path = out / f"trace_sample{trace.sample_id}.csv"
        c = len(trace.steps[0][2]) if trace.steps else 0
        header = "k,query,answer," + ",".join(f"p{j}" for j in range(c))
        _write_csv(path, header, rows)
        written.append(path)
    for name, matrix in matrices.items():
        rows = [",".join(f"{v:.6f}" for v in row) for row in np.atleast_2d(matrix)]
        path = out / f"matrix_{name}.csv"
        _write_csv(path, ",".join(f"c{j}" for j in range(np.atleast_2d(matrix).shape[1])), rows)
        written.append(path)
    return written


# -- CLI ---------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))


def _plan_from_args(args) -> TrainPlan:
    overrides: dict = {"seed": args.seed}
    if args.budget is not None:
        overrides["budget"] = args.budget
    if args.dict_size is not None:
        overrides["dict_size"] = args.dict_size
    if args.variant is not None:
        overrides["soft_answers"] = args.variant == "soft"
    if args.init is not None:
        overrides["init_mode"] = args.init
    if args.phase_epochs is not None:
        w, qr, qb, d = (int(s) for s in args.phase_epochs.split(","))
        overrides.update(warmup_epochs=w, querier_random_epochs=qr,
                         querier_biased_epochs=qb, dictionary_epochs=d)
    if args.config is not None:
        return load_plan(args.config, overrides)
    defaults = {f: v for f, v in overrides.items()}
    return TrainPlan(**defaults)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--dict-size", dest="dict_size", type=int, default=None)
    p.add_argument("--variant", choices=("hard", "soft"), default=None)
    p.add_argument("--init", choices=("random", "concepts"), default=None)
    p.add_argument("--phase-epochs", dest="phase_epochs", default=None,
                   metavar="W,QR,QB,D")


def cli_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="qpursuit",
        description="Sequential-query classification with learned "
                    "hyperplane query dictionaries.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--samples-per-class", type=int, default=200)
    p.add_argument("--separation", type=float, default=20.0)
    p.add_argument("--std", type=float, default=1.0)

    p = sub.add_parser("train", help="run the phased training algorithm")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--joint", action="store_true",
                   help="joint optimization instead of phased")

    p = sub.add_parser("evaluate", help="accuracy curve of a checkpoint")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("explain", help="explanation traces for test samples")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--entropy-threshold", type=float, default=0.0)

    p = sub.add_parser("oracle-check",
                       help="verify greedy selection against exhaustive "
                            "conditional-MI enumeration")
    _add_common(p)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--trials", type=int, default=200)

    p = sub.add_parser("export-baseline-answers",
                       help="Z-scored soft and mean-thresholded hard answers "
                            "for a fixed concept dictionary")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--concepts", type=Path, required=True)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return _dispatch(args)
    except Exception as exc:  # CLI boundary: report, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    if args.command == "synth-data":
        spec = SynthSpec(num_classes=args.classes, dim=args.dim,
                         samples_per_class=args.samples_per_class,
                         center_separation=args.separation,
                         within_cluster_std=args.std, seed=args.seed)
        path = args.out / "synth.embd"
        save_dataset(synth_gaussian_mixture(spec), path)
        print(f"wrote {path}")
        return 0

    if args.command == "train":
        plan = _plan_from_args(args)
        data = load_dataset(args.data)
        plan = TrainPlan(**{**dataclass_asdict(plan), "num_classes": data.num_classes})
        model, log = (joint_train if args.joint else run_algorithm1)(plan, data)
        log.to_csv(args.out / "trainlog.csv", timing=False)
        save_checkpoint(model.named_parameters(), args.out / "model.prms")
        final = evaluate_accuracy(model, data, plan.budget)
        print(f"final accuracy at budget {plan.budget}: {final:.4f}")
        return 0

    if args.command in ("evaluate", "explain"):
        plan = _plan_from_args(args)
        data = load_dataset(args.data)
        model = _load_model(args.checkpoint, plan, data)
        if args.command == "evaluate":
            curve = accuracy_curve(model, data, plan.budget,
                                   dataset_tag=args.data.stem, seed=args.seed)
            emit_reports([curve], [], {}, args.out)
            print(",".join(f"{a:.4f}" for a in curve.accuracies))
            return 0
        traces = [
            explanation_trace(model, data.embeddings[i].astype(np.float64),
                              plan.budget, args.entropy_threshold, sample_id=i)
            for i in range(min(args.samples, data.num_samples))
        ]
        cc = ip_oracle.estimate_class_conditionals(model.dictionary, data)
        emit_reports([], traces, {"class_conditionals": cc}, args.out)
        print(f"wrote {len(traces)} traces")
        return 0

    if args.command == "oracle-check":
        rng = np.random.default_rng(args.seed)
        for _ in range(args.trials):
            inst = random_instance(args.n, args.classes, rng)
            state = ip_oracle.OracleState(
                posterior=ip_oracle.prior_posterior(inst))
            got = ip_oracle.exact_ip_select(inst, state)
            mis = [ip_oracle.conditional_mutual_information(inst, i, [])
                   for i in range(args.n)]
            want = int(np.argmax(np.round(mis, 12)))
            if mis[got] < mis[want] - 1e-12:
                print(f"disagreement: selected {got}, exhaustive {want}")
                return 1
        print(f"oracle agreement on {args.trials} instances")
        return 0

    if args.command == "export-baseline-answers":
        data = load_dataset(args.data)
        concepts = load_dataset(args.concepts)
        fixed = FixedDictionary(
            concepts.embeddings.astype(np.float64),
            concept_names=concepts.concept_names)
        fit_zscore(fixed, data)
        fit_thresholds(fixed, data)
        soft = fixed_soft_answers(fixed, data.embeddings)
        hard = fixed_hard_answers(fixed, data.embeddings)
        emit_reports([], [], {"soft_answers": soft, "hard_answers": hard},
                     args.out)
        print(f"wrote answers for {data.num_samples} samples, "
              f"{fixed.size} queries")
        return 0

    raise ValueError(f"unknown command {args.command!r}")


def random_instance(n: int, num_classes: int,
                    rng: np.random.Generator) -> ip_oracle.DiscreteInstance:
    """Random dense joint for oracle self-checks."""
    table = rng.random((2 ** n, num_classes))
    table /= table.sum()
    return ip_oracle.DiscreteInstance(table, n, num_classes)


def _load_model(checkpoint: Path, plan: TrainPlan,
                data: EmbeddingDataset) -> PursuitModel:
    from .diffmath import load_checkpoint
    state = load_checkpoint(checkpoint)
    n = state["dict.v"].shape[0]
    dictionary = init_random(n, data.dim, plan.seed,
                             answer_mode="soft" if plan.soft_answers else "hard")
    model = PursuitModel(dictionary, data.num_classes,
                         hidden=(plan.hidden_width, plan.hidden_width),
                         seed=plan.seed + 1)
    model.load_state(state)
    return model


def dataclass_asdict(plan: TrainPlan) -> dict:
    import dataclasses
    return dataclasses.asdict(plan)


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
