"""Command line front end.

Every subcommand prints a JSON summary (with its effective
configuration) to stdout and reports failures as JSON on stderr with a
distinct exit code: 3 missing file, 4 malformed file, 5 shape mismatch,
1 anything else. Option precedence is defaults, then config file, then
explicit flags. Timing figures appear only in the stdout summary, never
in output files, so outputs stay byte-reproducible.
"""

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .datasets import NON_SWM, LabeledDataset
from .errors import FileFormatError, ShapeMismatchError, SwmparcError
from .evaluation import (
    accuracy,
    cluster_distance_to_atlas,
    cluster_identification_rate,
    inter_subject_variability,
    macro_f1,
    final_class_index,
    population_heatmap,
    weighted_dice,
)
from .fileformats import (
    jsonable,
    read_config,
    read_heatmap,
    read_labels,
    read_tractogram,
    write_heatmap,
    write_heatmap_csv,
    write_json,
    write_labels,
    write_tractogram,
)
from .geometry import resample_many, streamline_length
from .network import count_flops, load_model, save_model
from .pipeline import parcellate, point_importance, to_final_labels
from .synthdata import (
    AtlasSpec,
    generate_atlas,
    kfold_split,
    prototype_assignments,
)
from .training import StageOneConfig, StageTwoConfig, train_stage_one, train_stage_two


# ---------------------------------------------------------------------------
# option resolution


def _cast_bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _cast_ints(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ValueError(f"expected comma-separated integers, got {text!r}")
    return tuple(int(p) for p in parts)


_WIDTHS = (64, 128, 1024)
_HIDDEN = (512, 256)

SYNTH_SCHEMA = {
    "seed": (int, 0),
    "clusters": (int, 8),
    "per_cluster": (int, 600),
    "outlier_fraction": (float, 1.0 / 6.0),
    "dwm": (int, 4000),
    "coordinate_noise": (float, 1.5),
    "outlier_noise": (float, 8.0),
    "min_length": (float, 40.0),
    "bilateral": (_cast_bool, True),
}

TRAIN1_SCHEMA = {
    "seed": (int, 0),
    "n_points": (int, 15),
    "epochs": (int, 50),
    "batch_size": (int, 1024),
    "learning_rate": (float, 1e-3),
    "val_fraction": (float, 0.1),
    "encoder_widths": (_cast_ints, _WIDTHS),
    "classifier_hidden": (_cast_ints, _HIDDEN),
    "weight_decay": (float, 0.0),
}

TRAIN2_SCHEMA = {
    **TRAIN1_SCHEMA,
    "contrastive": (_cast_bool, True),
    "contrastive_epochs": (int, 100),
    "contrastive_batch_size": (int, 3072),
    "contrastive_learning_rate": (float, 1e-2),
    "temperature": (float, 0.1),
}

PARCELLATE_SCHEMA = {
    "batch_size": (int, 4096),
    "workers": (int, 1),
}

EVAL_SCHEMA = {
    "clusters": (int, None),
    "cir_threshold": (int, 10),
    "n_points": (int, 15),
    "voxel_size": (float, 2.0),
    "heatmap_resample": (int, None),
}

IMPORTANCE_SCHEMA = {
    "batch_size": (int, 4096),
}

FLOPS_SCHEMA = {
    "n_points": (int, 15),
    "classes": (int, 199),
    "encoder_widths": (_cast_ints, _WIDTHS),
    "classifier_hidden": (_cast_ints, _HIDDEN),
}

CROSSVAL_SCHEMA = {
    "seed": (int, 0),
    "folds": (int, 5),
    "n_points": (int, 15),
    "cir_threshold": (int, 10),
    "encoder_widths": (_cast_ints, _WIDTHS),
    "classifier_hidden": (_cast_ints, _HIDDEN),
    "stage1_epochs": (int, 50),
    "stage1_batch_size": (int, 1024),
    "stage1_learning_rate": (float, 1e-3),
    "contrastive": (_cast_bool, True),
    "contrastive_epochs": (int, 100),
    "contrastive_batch_size": (int, 3072),
    "contrastive_learning_rate": (float, 1e-2),
    "temperature": (float, 0.1),
    "stage2_epochs": (int, 50),
    "stage2_batch_size": (int, 1024),
    "stage2_learning_rate": (float, 1e-3),
}


def _resolve(args, schema):
    """defaults < config file < explicit flags, with typed casting."""
    cfg = {key: default for key, (_, default) in schema.items()}
    config_path = getattr(args, "config", None)
    if config_path:
        for key, raw in read_config(config_path).items():
            if key not in schema:
                raise ValueError(f"unknown config key {key!r}")
            cast, _ = schema[key]
            try:
                cfg[key] = cast(raw)
            except ValueError as err:
                raise FileFormatError(f"config key {key!r}: {err}") from None
    for key, (cast, _) in schema.items():
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = cast(value)
    return cfg


def _schema_flags(parser, schema):
    for key, (cast, default) in schema.items():
        flag = "--" + key.replace("_", "-")
        helptext = f"default {default}" if default is not None else "optional"
        parser.add_argument(flag, default=None, help=helptext)
    parser.add_argument("--config", default=None,
                        help="flat key = value config file")


def _load_dataset(tract_path, labels_path):
    streamlines = read_tractogram(tract_path)
    labels = read_labels(labels_path)
    if len(streamlines) != labels.shape[0]:
        raise ShapeMismatchError(
            f"{len(streamlines)} streamlines but {labels.shape[0]} labels"
        )
    return LabeledDataset(streamlines=streamlines, labels=labels)


def _val_split(dataset, fraction, seed):
    n_val = int(round(len(dataset) * fraction))
    if n_val == 0:
        return dataset, None
    if n_val >= len(dataset):
        raise ValueError(f"val_fraction {fraction} leaves no training data")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    return (
        dataset.subset(np.sort(perm[n_val:])),
        dataset.subset(np.sort(perm[:n_val])),
    )


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _emit(payload):
    print(json.dumps(jsonable(payload), indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args):
    start = time.monotonic()
    cfg = _resolve(args, SYNTH_SCHEMA)
    spec = AtlasSpec(
        num_clusters=cfg["clusters"],
        streamlines_per_cluster=cfg["per_cluster"],
        outlier_fraction=cfg["outlier_fraction"],
        dwm_count=cfg["dwm"],
        coordinate_noise=cfg["coordinate_noise"],
        outlier_noise=cfg["outlier_noise"],
        min_length=cfg["min_length"],
        bilateral=cfg["bilateral"],
    )
    atlas = generate_atlas(spec, seed=cfg["seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "d1_tract": out / "d1.tract",
        "d1_labels": out / "d1_labels.csv",
        "d2_tract": out / "d2.tract",
        "d2_labels": out / "d2_labels.csv",
        "prototypes": out / "prototypes.tract",
        "prototype_labels": out / "prototype_labels.csv",
    }
    write_tractogram(paths["d1_tract"], atlas.d1.streamlines)
    write_labels(paths["d1_labels"], atlas.d1.labels)
    write_tractogram(paths["d2_tract"], atlas.d2.streamlines)
    write_labels(paths["d2_labels"], atlas.d2.labels)
    write_tractogram(paths["prototypes"], list(atlas.prototypes))
    write_labels(paths["prototype_labels"], np.arange(spec.num_clusters))

    lengths = np.array([streamline_length(s) for s in atlas.d1.streamlines])
    oracle = prototype_assignments(atlas)
    truth_cluster = atlas.d2.labels % spec.num_clusters
    plaus = atlas.d2.labels < spec.num_clusters
    manifest = {
        "config": cfg,
        "counts": {
            "d1": len(atlas.d1),
            "d2": len(atlas.d2),
            "dwm": int((atlas.d1.labels == 0).sum()),
            "plausible_per_cluster": spec.plausible_per_cluster,
            "outliers_per_cluster": spec.outliers_per_cluster,
        },
        "length_mm": {
            "min": float(lengths.min()),
            "mean": float(lengths.mean()),
            "max": float(lengths.max()),
        },
        "oracle_cluster_agreement": {
            "plausible": float((oracle[plaus] == truth_cluster[plaus]).mean()),
            "all": float((oracle == truth_cluster).mean()),
        },
        "checksums": {
            "d1_tract": _sha256(paths["d1_tract"]),
            "d2_tract": _sha256(paths["d2_tract"]),
        },
    }
    write_json(out / "manifest.json", manifest)
    _emit({
        "command": "synth",
        **manifest,
        "outputs": {k: str(v) for k, v in paths.items()},
        "duration_seconds": time.monotonic() - start,
    })
    return 0


def _history_summary(history):
    return history[-3:] if len(history) > 3 else history


def _cmd_train_stage1(args):
    start = time.monotonic()
    cfg = _resolve(args, TRAIN1_SCHEMA)
    dataset = _load_dataset(args.tract, args.labels)
    train_set, val_set = _val_split(dataset, cfg["val_fraction"], cfg["seed"])
    config = StageOneConfig(
        seed=cfg["seed"],
        n_points=cfg["n_points"],
        encoder_widths=cfg["encoder_widths"],
        classifier_hidden=cfg["classifier_hidden"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        weight_decay=cfg["weight_decay"],
    )
    result = train_stage_one(train_set, config, val=val_set)
    save_model(args.model_out, result.model)
    _emit({
        "command": "train-stage1",
        "config": cfg,
        "counts": {"train": len(train_set),
                   "val": len(val_set) if val_set is not None else 0},
        "history": result.history,
        "final": _history_summary(result.history),
        "model": str(args.model_out),
        "duration_seconds": time.monotonic() - start,
    })
    return 0


def _cmd_train_stage2(args):
    start = time.monotonic()
    cfg = _resolve(args, TRAIN2_SCHEMA)
    dataset = _load_dataset(args.tract, args.labels)
    train_set, val_set = _val_split(dataset, cfg["val_fraction"], cfg["seed"])
    config = StageTwoConfig(
        seed=cfg["seed"],
        n_points=cfg["n_points"],
        encoder_widths=cfg["encoder_widths"],
        classifier_hidden=cfg["classifier_hidden"],
        use_contrastive=cfg["contrastive"],
        contrastive_epochs=cfg["contrastive_epochs"],
        contrastive_batch_size=cfg["contrastive_batch_size"],
        contrastive_learning_rate=cfg["contrastive_learning_rate"],
        temperature=cfg["temperature"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        weight_decay=cfg["weight_decay"],
    )
    classes = int(args.classes) if args.classes is not None else None
    result = train_stage_two(train_set, config, val=val_set, num_classes=classes)
    save_model(args.model_out, result.model)
    _emit({
        "command": "train-stage2",
        "config": cfg,
        "classes": result.model.num_classes,
        "counts": {"train": len(train_set),
                   "val": len(val_set) if val_set is not None else 0},
        "history": result.history,
        "final": _history_summary(result.history),
        "model": str(args.model_out),
        "duration_seconds": time.monotonic() - start,
    })
    return 0


def _cmd_parcellate(args):
    start = time.monotonic()
    cfg = _resolve(args, PARCELLATE_SCHEMA)
    model1 = load_model(args.stage1, expect_stage=1)
    model2 = load_model(args.stage2, expect_stage=2)
    streamlines = read_tractogram(args.tract)
    result = parcellate(model1, model2, streamlines,
                        batch_size=cfg["batch_size"], workers=cfg["workers"])
    if args.extended:
        write_labels(args.out, result.final, stage_one=result.stage_one,
                     stage_two=result.stage_two)
    else:
        write_labels(args.out, result.final)
    elapsed = time.monotonic() - start
    counts = result.cluster_counts()
    _emit({
        "command": "parcellate",
        "config": {**cfg, "tract": str(args.tract), "stage1": str(args.stage1),
                   "stage2": str(args.stage2), "extended": bool(args.extended)},
        "counts": {
            "total": len(streamlines),
            "kept_stage_one": int((result.stage_one == 1).sum()),
            "non_swm": int((result.final == NON_SWM).sum()),
            "clusters_detected": int((counts > 0).sum()),
        },
        "output": str(args.out),
        "duration_seconds": elapsed,
        "streamlines_per_second": len(streamlines) / elapsed if elapsed > 0 else None,
    })
    return 0


def _infer_clusters(cfg, *label_arrays):
    if cfg["clusters"] is not None:
        return cfg["clusters"]
    peak = max((int(a.max()) for a in label_arrays if a.size), default=-1)
    if peak < 0:
        raise ValueError("cannot infer cluster count; pass --clusters")
    return peak + 1


def _cmd_eval(args):
    start = time.monotonic()
    cfg = _resolve(args, EVAL_SCHEMA)
    report = {"command": "eval", "config": cfg}

    if args.pred or args.truth:
        if not (args.pred and args.truth):
            raise ValueError("--pred and --truth go together")
        pred = read_labels(args.pred)
        truth = read_labels(args.truth)
        k = _infer_clusters(cfg, pred, truth)
        pred_idx = final_class_index(pred, k)
        truth_idx = final_class_index(truth, k)
        f1 = macro_f1(pred_idx, truth_idx, k + 1)
        report["labels"] = {
            "clusters": k,
            "count": pred.shape[0],
            "accuracy": accuracy(pred_idx, truth_idx),
            "macro_f1": f1.to_dict(),
            "cir": cluster_identification_rate(
                pred, k, threshold=cfg["cir_threshold"]).to_dict(),
        }

    if args.tract or args.atlas_tract or args.atlas_labels:
        if not (args.pred and args.tract and args.atlas_tract and args.atlas_labels):
            raise ValueError(
                "distance evaluation needs --pred, --tract, --atlas-tract "
                "and --atlas-labels"
            )
        subject = read_tractogram(args.tract)
        pred = read_labels(args.pred)
        atlas = read_tractogram(args.atlas_tract)
        atlas_labels = read_labels(args.atlas_labels)
        k = _infer_clusters(cfg, pred, atlas_labels)
        report["cda"] = cluster_distance_to_atlas(
            subject, pred, atlas, atlas_labels, k, n_points=cfg["n_points"]
        ).to_dict()

    if args.ispv_counts:
        rows = []
        with open(args.ispv_counts) as fh:
            header = fh.readline()
            if not header.strip():
                raise FileFormatError(f"{args.ispv_counts}: empty counts file")
            for line in fh:
                if line.strip():
                    rows.append([int(v) for v in line.strip().split(",")])
        report["ispv"] = inter_subject_variability(np.asarray(rows)).to_dict()

    if args.heatmap_tracts or args.heatmap_out:
        if not (args.heatmap_tracts and args.heatmap_out):
            raise ValueError("--heatmap-tracts and --heatmap-out go together")
        subjects = []
        for path in args.heatmap_tracts.split(","):
            streamlines = read_tractogram(path.strip())
            if cfg["heatmap_resample"]:
                pts = resample_many(streamlines, cfg["heatmap_resample"])
                subjects.append(pts.reshape(-1, 3))
            elif streamlines:
                subjects.append(np.concatenate(streamlines, axis=0))
            else:
                subjects.append(np.zeros((0, 3)))
        heatmap = population_heatmap(subjects, voxel_size=cfg["voxel_size"])
        write_heatmap(args.heatmap_out, heatmap)
        write_heatmap_csv(str(args.heatmap_out) + ".csv", heatmap)
        report["heatmap"] = {
            "subjects": len(subjects),
            "dims": list(heatmap.grid.dims),
            "voxel_size": heatmap.grid.voxel_size,
            "nonzero_voxels": int((heatmap.values > 0).sum()),
            "output": str(args.heatmap_out),
        }

    if args.wdice_a or args.wdice_b:
        if not (args.wdice_a and args.wdice_b):
            raise ValueError("--wdice-a and --wdice-b go together")
        value = weighted_dice(read_heatmap(args.wdice_a),
                              read_heatmap(args.wdice_b))
        report["weighted_dice"] = value

    if len(report) == 2:
        raise ValueError("nothing to evaluate; pass --pred/--truth or other inputs")
    if args.out:
        file_report = dict(report)
        write_json(args.out, file_report)
        report["output"] = str(args.out)
    report["duration_seconds"] = time.monotonic() - start
    _emit(report)
    return 0


def _cmd_importance(args):
    start = time.monotonic()
    cfg = _resolve(args, IMPORTANCE_SCHEMA)
    model = load_model(args.model)
    streamlines = read_tractogram(args.tract)
    profile = point_importance(model, streamlines, batch_size=cfg["batch_size"])
    payload = {
        "command": "importance",
        "config": {**cfg, "model": str(args.model), "tract": str(args.tract)},
        "profile": profile.to_dict(),
    }
    if args.out:
        write_json(args.out, {"profile": profile.to_dict()})
        payload["output"] = str(args.out)
    payload["duration_seconds"] = time.monotonic() - start
    _emit(payload)
    return 0


def _cmd_flops(args):
    cfg = _resolve(args, FLOPS_SCHEMA)
    breakdown = count_flops(
        n_points=cfg["n_points"],
        encoder_widths=cfg["encoder_widths"],
        classifier_hidden=cfg["classifier_hidden"],
        num_classes=cfg["classes"],
    )
    _emit({"command": "flops", "config": cfg, **breakdown})
    return 0


def _cmd_crossval(args):
    start = time.monotonic()
    cfg = _resolve(args, CROSSVAL_SCHEMA)
    d1 = _load_dataset(args.tract1, args.labels1)
    d2 = _load_dataset(args.tract2, args.labels2)
    k = int(d2.labels.max()) + 1
    if k % 2 != 0:
        raise ValueError(f"cluster dataset holds {k} classes, expected an even count")
    num_clusters = k // 2

    cfg1 = StageOneConfig(
        seed=cfg["seed"], n_points=cfg["n_points"],
        encoder_widths=cfg["encoder_widths"],
        classifier_hidden=cfg["classifier_hidden"],
        epochs=cfg["stage1_epochs"], batch_size=cfg["stage1_batch_size"],
        learning_rate=cfg["stage1_learning_rate"],
    )
    cfg2 = StageTwoConfig(
        seed=cfg["seed"], n_points=cfg["n_points"],
        encoder_widths=cfg["encoder_widths"],
        classifier_hidden=cfg["classifier_hidden"],
        use_contrastive=cfg["contrastive"],
        contrastive_epochs=cfg["contrastive_epochs"],
        contrastive_batch_size=cfg["contrastive_batch_size"],
        contrastive_learning_rate=cfg["contrastive_learning_rate"],
        temperature=cfg["temperature"],
        epochs=cfg["stage2_epochs"], batch_size=cfg["stage2_batch_size"],
        learning_rate=cfg["stage2_learning_rate"],
    )

    folds1 = kfold_split(len(d1), cfg["folds"], cfg["seed"])
    folds2 = kfold_split(len(d2), cfg["folds"], cfg["seed"])
    fold_reports = []
    for i in range(cfg["folds"]):
        train1, test1 = folds1[i]
        train2, test2 = folds2[i]
        r1 = train_stage_one(d1.subset(train1), cfg1)
        r2 = train_stage_two(d2.subset(train2), cfg2, num_classes=k)

        test_d1 = d1.subset(test1)
        x1 = resample_many(test_d1.streamlines, cfg["n_points"])
        pred1 = _predict_labels(r1.model, x1)
        stage1_acc = accuracy(pred1, test_d1.labels)

        test_d2 = d2.subset(test2)
        x2 = resample_many(test_d2.streamlines, cfg["n_points"])
        pred2 = _predict_labels(r2.model, x2)
        truth_final = final_class_index(
            to_final_labels(test_d2.labels, num_clusters), num_clusters)
        pred_final = final_class_index(
            to_final_labels(pred2, num_clusters), num_clusters)
        f1_final = macro_f1(pred_final, truth_final, num_clusters + 1)
        f1_raw = macro_f1(pred2, test_d2.labels, k)

        pipe = parcellate(r1.model, r2.model, test_d2.streamlines)
        pipe_acc = accuracy(final_class_index(pipe.final, num_clusters), truth_final)
        cir = cluster_identification_rate(pipe.final, num_clusters,
                                          threshold=cfg["cir_threshold"])
        fold_reports.append({
            "fold": i,
            "stage_one": {"accuracy": stage1_acc, "test_count": len(test_d1)},
            "stage_two": {
                "accuracy_final": accuracy(pred_final, truth_final),
                "macro_f1_final": f1_final.to_dict(),
                "accuracy_raw": accuracy(pred2, test_d2.labels),
                "macro_f1_raw": f1_raw.to_dict(),
                "test_count": len(test_d2),
            },
            "pipeline": {"accuracy_final": pipe_acc, "cir": cir.to_dict()},
        })

    def _agg(values):
        arr = np.asarray(values, dtype=np.float64)
        return {"mean": float(arr.mean()), "std": float(arr.std()),
                "per_fold": [float(v) for v in arr]}

    result = {
        "command": "crossval",
        "config": cfg,
        "clusters": num_clusters,
        "folds": fold_reports,
        "aggregate": {
            "stage_one_accuracy": _agg(
                [f["stage_one"]["accuracy"] for f in fold_reports]),
            "stage_two_accuracy_final": _agg(
                [f["stage_two"]["accuracy_final"] for f in fold_reports]),
            "stage_two_macro_f1_final": _agg(
                [f["stage_two"]["macro_f1_final"]["mean"] for f in fold_reports]),
            "pipeline_accuracy_final": _agg(
                [f["pipeline"]["accuracy_final"] for f in fold_reports]),
        },
    }
    if args.out:
        write_json(args.out, result)
        result["output"] = str(args.out)
    result["duration_seconds"] = time.monotonic() - start
    _emit(result)
    return 0


def _predict_labels(model, x, batch=4096):
    from .network import classify, encode, predict

    out = np.empty(x.shape[0], dtype=np.int64)
    for s in range(0, x.shape[0], batch):
        e = min(s + batch, x.shape[0])
        out[s:e] = predict(classify(
            model.classifier, encode(model.encoder, x[s:e], with_argmax=False).g))
    return out


# ---------------------------------------------------------------------------
# parser and dispatch


def build_parser():
    parser = argparse.ArgumentParser(
        prog="swmparc",
        description="Two-stage superficial white matter parcellation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled atlas")
    p.add_argument("--out", required=True, help="output directory")
    _schema_flags(p, SYNTH_SCHEMA)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train-stage1", help="train the keep/discard filter")
    p.add_argument("--tract", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--model-out", required=True)
    _schema_flags(p, TRAIN1_SCHEMA)
    p.set_defaults(func=_cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="train the cluster classifier")
    p.add_argument("--tract", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--classes", default=None,
                   help="total class count (2x clusters); inferred when omitted")
    _schema_flags(p, TRAIN2_SCHEMA)
    p.set_defaults(func=_cmd_train_stage2)

    p = sub.add_parser("parcellate", help="label a tractogram with both stages")
    p.add_argument("--tract", required=True)
    p.add_argument("--stage1", required=True, help="stage-one model file")
    p.add_argument("--stage2", required=True, help="stage-two model file")
    p.add_argument("--out", required=True, help="output label csv")
    p.add_argument("--extended", action="store_true",
                   help="also record per-stage outputs")
    _schema_flags(p, PARCELLATE_SCHEMA)
    p.set_defaults(func=_cmd_parcellate)

    p = sub.add_parser("eval", help="quality metrics for parcellations")
    p.add_argument("--pred", default=None, help="predicted label csv")
    p.add_argument("--truth", default=None, help="reference label csv")
    p.add_argument("--tract", default=None, help="subject tractogram (distances)")
    p.add_argument("--atlas-tract", default=None)
    p.add_argument("--atlas-labels", default=None)
    p.add_argument("--ispv-counts", default=None,
                   help="csv of per-subject cluster counts")
    p.add_argument("--heatmap-tracts", default=None,
                   help="comma-separated subject tractograms")
    p.add_argument("--heatmap-out", default=None)
    p.add_argument("--wdice-a", default=None, help="heatmap file")
    p.add_argument("--wdice-b", default=None, help="heatmap file")
    p.add_argument("--out", default=None, help="write the report as json")
    _schema_flags(p, EVAL_SCHEMA)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("importance", help="max-pool win counts per point")
    p.add_argument("--model", required=True)
    p.add_argument("--tract", required=True)
    p.add_argument("--out", default=None)
    _schema_flags(p, IMPORTANCE_SCHEMA)
    p.set_defaults(func=_cmd_importance)

    p = sub.add_parser("flops", help="inference cost of the architecture")
    _schema_flags(p, FLOPS_SCHEMA)
    p.set_defaults(func=_cmd_flops)

    p = sub.add_parser("crossval", help="k-fold training protocol with metrics")
    p.add_argument("--tract1", required=True, help="filter dataset tractogram")
    p.add_argument("--labels1", required=True)
    p.add_argument("--tract2", required=True, help="cluster dataset tractogram")
    p.add_argument("--labels2", required=True)
    p.add_argument("--out", default=None, help="write the report as json")
    _schema_flags(p, CROSSVAL_SCHEMA)
    p.set_defaults(func=_cmd_crossval)

    return parser


_EXIT_CODES = (
    (FileNotFoundError, 3),
    (IsADirectoryError, 3),
    (FileFormatError, 4),
    (ShapeMismatchError, 5),
)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - single reporting point
        code = 1
        for exc_type, exc_code in _EXIT_CODES:
            if isinstance(err, exc_type):
                code = exc_code
                break
        if not isinstance(err, (SwmparcError, ValueError, OSError, TypeError)):
            raise
        print(
            json.dumps({
                "error": {
                    "type": type(err).__name__,
                    "message": str(err),
                    "exit_code": code,
                }
            }),
            file=sys.stderr,
        )
        return code


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
