"""Command-line entry points: simulate, train, predict, evaluate.

Every run writes a manifest JSON recording the resolved configuration, seed,
input digests, output paths, and wall-clock duration, so experiments can be
audited and replayed. The MIXTOPIC_SEED environment variable overrides
--seed when set.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    Corpus,
    CorpusError,
    PatientRecord,
    Token,
    Vocabulary,
    load_corpus,
    load_labels,
    write_corpus,
)
from .evaluation import (
    ScoredLabels,
    auprc,
    auroc,
    perplexity,
    pr_curve_points,
    roc_curve_points,
    topic_recovery,
)
from .inference import InferenceError, StochasticConfig, TrainConfig, train
from .model import InitConfig, TrainedModel, build_trained_model
from .probit import fold_in
from .simulate import SimConfig, load_truth, simulate, write_truth

logger = logging.getLogger(__name__)


def _resolve_seed(args: argparse.Namespace) -> int:
    env = os.environ.get("MIXTOPIC_SEED")
    return int(env) if env is not None else args.seed


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(
    manifest_path: Path,
    command: str,
    config: dict,
    seed: int,
    inputs: list[Path],
    outputs: list[Path],
    started: float,
) -> None:
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "duration_seconds": time.monotonic() - started,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def _collapse_specialists(corpus: Corpus) -> Corpus:
    """Map every specialist to one bucket; with T=1 the model degenerates to
    a plain (unsupervised, if requested) latent Dirichlet topic model."""
    patients = [
        PatientRecord(p.patient_id, [Token(t.code_id, 0) for t in p.tokens], p.label)
        for p in corpus.patients
    ]
    return Corpus(patients, corpus.code_vocab, Vocabulary(["all"]))


def cmd_simulate(args: argparse.Namespace) -> int:
    started = time.monotonic()
    seed = _resolve_seed(args)
    config = SimConfig(
        n_patients=args.patients,
        n_codes=args.codes,
        n_specialists=args.specialists,
        n_topics=args.topics,
        tokens_per_patient=(args.tokens_min, args.tokens_max),
        alpha=args.alpha,
        iota=args.iota,
        zeta=args.zeta,
        tau=args.tau,
        seed=seed,
    )
    corpus, truth = simulate(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    events = out_dir / "events.tsv"
    labels = out_dir / "labels.tsv"
    truth_path = out_dir / "truth.json"
    write_corpus(corpus, events, labels)
    write_truth(truth, truth_path)
    _write_manifest(
        out_dir / "manifest.json",
        "simulate",
        {k: getattr(args, k) for k in (
            "patients", "codes", "specialists", "topics",
            "tokens_min", "tokens_max", "alpha", "iota", "zeta", "tau",
        )},
        seed,
        [],
        [events, labels, truth_path],
        started,
    )
    logger.info("wrote %s, %s, %s", events, labels, truth_path)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    started = time.monotonic()
    seed = _resolve_seed(args)
    corpus = load_corpus(args.events, args.labels)
    if args.specialist_collapse:
        corpus = _collapse_specialists(corpus)
    config = TrainConfig(
        K=args.topics,
        max_sweeps=args.max_sweeps,
        elbo_rel_tol=args.tol,
        mode=args.mode,
        stochastic=(
            StochasticConfig(batch_size=args.batch, kappa=args.kappa, delay=args.delay)
            if args.stochastic
            else None
        ),
        seed=seed,
        hyper_update_every=args.hyper_update_every,
        hyper_fixed_point_iters=args.hyper_fixed_point_iters,
        threads=args.threads,
        init=InitConfig(
            alpha0=args.init_alpha, iota0=args.init_iota, zeta0=args.init_zeta, tau=args.tau
        ),
    )
    state, estimates, trace = train(corpus, config)
    model = build_trained_model(state, corpus, estimates)
    model_path = Path(args.model_out)
    trace_path = Path(args.trace_out)
    model.save(model_path)
    trace.to_csv(trace_path)
    resolved = {
        "topics": args.topics,
        "max_sweeps": args.max_sweeps,
        "tol": args.tol,
        "mode": args.mode,
        "stochastic": args.stochastic,
        "batch": args.batch,
        "kappa": args.kappa,
        "delay": args.delay,
        "threads": args.threads,
        "tau": args.tau,
        "init_alpha": args.init_alpha,
        "init_iota": args.init_iota,
        "init_zeta": args.init_zeta,
        "hyper_update_every": args.hyper_update_every,
        "hyper_fixed_point_iters": args.hyper_fixed_point_iters,
        "specialist_collapse": args.specialist_collapse,
        "converged": trace.converged,
        "sweeps_run": trace.sweeps[-1],
        "final_elbo": trace.elbos[-1],
    }
    inputs = [Path(args.events)] + ([Path(args.labels)] if args.labels else [])
    _write_manifest(
        Path(str(model_path) + ".manifest.json"),
        "train", resolved, seed, inputs, [model_path, trace_path], started,
    )
    logger.info(
        "trained K=%d in %d sweeps (converged=%s), model -> %s",
        args.topics, trace.sweeps[-1], trace.converged, model_path,
    )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    started = time.monotonic()
    model = TrainedModel.load(args.model)
    corpus = load_corpus(args.events)
    out_path = Path(args.out)
    dropped_total = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("patient_id\tprobability\tlabel\n")
        for patient in corpus.patients:
            result = fold_in(patient, model, corpus=corpus, iters=args.fold_in_iters)
            dropped_total += result.n_dropped
            hard = 1 if result.probability >= 0.5 else 0
            fh.write(f"{patient.patient_id}\t{result.probability!r}\t{hard}\n")
    if dropped_total:
        logger.warning("dropped %d tokens unknown to the model vocabulary", dropped_total)
    _write_manifest(
        Path(str(out_path) + ".manifest.json"),
        "predict",
        {"fold_in_iters": args.fold_in_iters, "dropped_tokens": dropped_total},
        _resolve_seed(args),
        [Path(args.model), Path(args.events)],
        [out_path],
        started,
    )
    return 0


def _read_predictions(path: Path) -> dict[str, float]:
    scores: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("patient_id"):
            raise CorpusError(f"{path}: missing predictions header")
        for line in fh:
            if not line.strip():
                continue
            pid, prob, _label = line.rstrip("\n").split("\t")
            scores[pid] = float(prob)
    return scores


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.monotonic()
    metrics: dict[str, object] = {}
    inputs: list[Path] = []
    outputs: list[Path] = []
    out_path = Path(args.out)

    scored = None
    if args.predictions and args.labels:
        inputs += [Path(args.predictions), Path(args.labels)]
        scores = _read_predictions(Path(args.predictions))
        labels_by_id = dict(load_labels(Path(args.labels)))
        ids = [pid for pid in scores if pid in labels_by_id]
        if not ids:
            raise ValueError("no patient appears in both predictions and labels")
        scored = ScoredLabels(
            scores=np.array([scores[p] for p in ids]),
            labels=np.array([labels_by_id[p] for p in ids]),
        )
        metrics["auroc"] = auroc(scored)
        metrics["auprc"] = auprc(scored)

    model = None
    if args.model:
        inputs.append(Path(args.model))
        model = TrainedModel.load(args.model)

    if args.heldout_events:
        if model is None:
            raise ValueError("--heldout-events requires --model")
        inputs.append(Path(args.heldout_events))
        heldout = load_corpus(args.heldout_events, args.heldout_labels)
        if args.heldout_labels:
            inputs.append(Path(args.heldout_labels))
        metrics["perplexity"] = perplexity(model, heldout, args.fold_in_iters)

    if args.truth:
        if model is None:
            raise ValueError("--truth requires --model")
        inputs.append(Path(args.truth))
        truth = load_truth(args.truth)
        truth_rows = {pid: i for i, pid in enumerate(truth.patient_ids)}
        common = [pid for pid in model.patient_ids if pid in truth_rows]
        if not common:
            raise ValueError("no patient appears in both the model and the truth file")
        hat_rows = {pid: i for i, pid in enumerate(model.patient_ids)}
        theta_hat = model.estimates.theta_hat[[hat_rows[p] for p in common]]
        theta_true = truth.theta[[truth_rows[p] for p in common]]
        report = topic_recovery(theta_hat, theta_true)
        metrics["topic_recovery"] = {
            "matched_mean": report.matched_mean,
            "matched_correlations": report.matched_correlations.tolist(),
            "matching": report.matching.tolist(),
        }

    if args.curves:
        if scored is None:
            raise ValueError("--curves requires --predictions and --labels")
        roc_path = out_path.with_suffix(".roc.csv")
        pr_path = out_path.with_suffix(".pr.csv")
        np.savetxt(roc_path, roc_curve_points(scored), delimiter=",", header="threshold,fpr,tpr", comments="")
        np.savetxt(pr_path, pr_curve_points(scored), delimiter=",", header="threshold,recall,precision", comments="")
        outputs += [roc_path, pr_path]

    if not metrics:
        raise ValueError("nothing to evaluate: supply predictions/labels, a model with held-out data, or a truth file")

    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2)
    outputs.append(out_path)
    _write_manifest(
        Path(str(out_path) + ".manifest.json"),
        "evaluate",
        {"fold_in_iters": args.fold_in_iters, "curves": args.curves},
        _resolve_seed(args),
        inputs,
        outputs,
        started,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixtopic",
        description="Supervised multi-specialist topic model: simulate, train, predict, evaluate.",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="sample a synthetic corpus with known topics")
    p_sim.add_argument("--patients", type=int, default=2500)
    p_sim.add_argument("--codes", type=int, default=750)
    p_sim.add_argument("--specialists", type=int, default=48)
    p_sim.add_argument("--topics", type=int, required=True)
    p_sim.add_argument("--tokens-min", type=int, default=20)
    p_sim.add_argument("--tokens-max", type=int, default=60)
    p_sim.add_argument("--alpha", type=float, default=0.1, help="patient mixture concentration")
    p_sim.add_argument("--iota", type=float, default=0.5, help="specialist concentration")
    p_sim.add_argument("--zeta", type=float, default=0.05, help="code concentration")
    p_sim.add_argument("--tau", type=float, default=0.04, help="coefficient prior precision")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out-dir", default="sim")
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="fit the model to an events/labels corpus")
    p_train.add_argument("--events", required=True)
    p_train.add_argument("--labels", default=None)
    p_train.add_argument("--topics", type=int, required=True)
    p_train.add_argument("--tol", type=float, default=1e-6, help="relative ELBO change to stop at")
    p_train.add_argument("--mode", choices=("supervised", "unsupervised"), default="supervised")
    p_train.add_argument("--stochastic", action="store_true", help="minibatch updates instead of full sweeps")
    p_train.add_argument("--batch", type=int, default=256)
    p_train.add_argument("--kappa", type=float, default=0.9)
    p_train.add_argument("--delay", type=float, default=1.0)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--max-sweeps", type=int, default=500)
    p_train.add_argument("--threads", type=int, default=1, help=">1 switches to the sweep-synchronous parallel pass")
    p_train.add_argument("--tau", type=float, default=1.0, help="regression coefficient prior precision (fixed)")
    p_train.add_argument("--init-alpha", type=float, default=0.1)
    p_train.add_argument("--init-iota", type=float, default=0.1)
    p_train.add_argument("--init-zeta", type=float, default=0.01)
    p_train.add_argument("--hyper-update-every", type=int, default=1)
    p_train.add_argument("--hyper-fixed-point-iters", type=int, default=5)
    p_train.add_argument("--specialist-collapse", action="store_true",
                         help="map all specialists to one (plain-LDA degenerate mode)")
    p_train.add_argument("--model-out", default="model.json")
    p_train.add_argument("--trace-out", default="trace.csv")
    p_train.set_defaults(func=cmd_train)

    p_pred = sub.add_parser("predict", help="label probabilities for held-out patients")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--events", required=True)
    p_pred.add_argument("--fold-in-iters", type=int, default=50)
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.add_argument("--out", default="predictions.tsv")
    p_pred.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("evaluate", help="ranking metrics, perplexity, topic recovery")
    p_eval.add_argument("--predictions", default=None)
    p_eval.add_argument("--labels", default=None)
    p_eval.add_argument("--model", default=None)
    p_eval.add_argument("--heldout-events", default=None)
    p_eval.add_argument("--heldout-labels", default=None)
    p_eval.add_argument("--truth", default=None)
    p_eval.add_argument("--fold-in-iters", type=int, default=50)
    p_eval.add_argument("--curves", action="store_true", help="also write ROC/PR curve CSVs")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", default="metrics.json")
    p_eval.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CorpusError, InferenceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
