"""Command line interface: train a model, then score scenario datasets.

    edharness train --features features.csv --family gradient-boosting \
        --out model.pkl
    edharness predict --model model.pkl --features features.csv \
        --dataset dataset_baseline.csv --out predictions_baseline.csv

`train` fits one family on the features file (seeded 80/20 split by default)
and prints a one-line JSON report of the held-out metrics. `predict` scores
every stay in a dataset CSV with the stay's source-patient feature row and
writes `id,predicted_label,score` rows, where id is "run_id:sim_id" and the
label is 1 exactly when the score reaches 0.5. Codes present at predict time
but unknown to the training schema are reported on stderr as warnings and
activate no feature column.

Exit codes: 0 success, 2 invalid input or arguments, 3 unexpected failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import features as ft
from . import models as md

_PREDICTIONS_HEADER = ("id", "predicted_label", "score")


def _require_files(*paths: str) -> None:
    for path in paths:
        if not Path(path).is_file():
            raise FileNotFoundError(f"input file not found: {path}")


def cmd_train(args: argparse.Namespace) -> int:
    _require_files(args.features)
    matrix = ft.featurize(args.features, threshold=args.los_threshold)
    model, report = md.train(
        matrix,
        args.family,
        split=args.split,
        seed=args.seed,
        los_threshold=args.los_threshold,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(json.dumps(asdict(report), sort_keys=True))
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    _require_files(args.model, args.features, args.dataset)
    model = md.TrainedModel.load(args.model)
    rows, _ = ft.read_patient_rows(args.features)
    matrix, unseen = ft.encode(rows, model.schema)
    for message in unseen:
        print(f"warning: {message}", file=sys.stderr)
    patient_rows = {row.patient_id: matrix[i] for i, row in enumerate(rows)}
    stay_index = ft.read_stay_index(args.dataset)
    entries = md.predict_stays(model, stay_index, patient_rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_PREDICTIONS_HEADER)
        for stay_id, label, score in entries:
            writer.writerow([stay_id, label, repr(score)])
    print(f"wrote {len(entries)} predictions to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edharness",
        description="Train long-stay classifiers and score synthetic ED datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fit one model family on a features file")
    train.add_argument("--features", required=True, help="patient features CSV")
    train.add_argument("--family", required=True, choices=md.FAMILIES)
    train.add_argument("--out", required=True, help="path for the saved model")
    train.add_argument("--seed", type=int, default=0, help="split and estimator seed")
    train.add_argument("--split", type=float, default=md.DEFAULT_SPLIT, help="training fraction")
    train.add_argument(
        "--los-threshold",
        type=float,
        default=ft.DEFAULT_LOS_THRESHOLD_HOURS,
        help="hours above which a stay is labeled long",
    )
    train.set_defaults(func=cmd_train)

    predict = sub.add_parser("predict", help="score one dataset CSV with a saved model")
    predict.add_argument("--model", required=True, help="model file from train")
    predict.add_argument("--features", required=True, help="patient features CSV")
    predict.add_argument("--dataset", required=True, help="synthetic dataset CSV")
    predict.add_argument("--out", required=True, help="path for the predictions CSV")
    predict.set_defaults(func=cmd_predict)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ft.HarnessError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
