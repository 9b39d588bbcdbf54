"""Command-line front end: synth, pose, features, split, train, evaluate, report."""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import classifier, evaluation, features, pnp, synthetic
from .errors import HeadPoseError, InvalidInputError, ParseError
from .face_camera import MODEL_ENV_VAR, approximate_intrinsics, default_model_path, load_landmarks
from .face_camera import load_model as load_face_model

log = logging.getLogger("headpose_forensics")

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_MISSING = 3

EPILOG = f"""\
exit status:
  0  success
  1  unexpected failure
  2  usage error (bad flags or values)
  3  missing input file
  4  malformed input file or undefined metric
  5  split constraints cannot be satisfied
  6  degenerate training data or incomplete model
  7  numerical failure in the pose solver

file formats (version 1):
  model       CSV "index,U,V,W" (68 rows, mm) + JSON sidecar with inner/all indices
  landmarks   CSV "index,x,y" (68 rows, px)
  manifest    JSON lines: frame_id, label, subject_ids, landmarks, image_width, image_height
  poses       JSON lines: frame_id, set, rotation (row-major), translation, cost,
              flipped, converged, iterations; skipped frames carry "skipped"
  features    CSV: frame_id, dR00..dR22, dtx, dty, dtz, cosine_distance,
              inner_flipped, all_flipped, label, subject_ids (';'-joined),
              Euler angles and translations of both poses
  svm model   JSON with version tag {classifier.FORMAT_VERSION}

The default face model is the bundled one unless ${MODEL_ENV_VAR} names a file.
"""


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"no such file: {p}")


def _num(v):
    return repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_num(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# ------------------------------------------------------------------ commands


def cmd_synth(args):
    spec_kw = {}
    if args.spec:
        _require(args.spec)
        spec_kw = json.loads(Path(args.spec).read_text())
    for key, val in (
        ("seed", args.seed),
        ("n_frames", args.frames),
        ("n_subjects", args.subjects),
        ("noise_sigma", args.noise),
        ("swap_perturbation", args.swap),
        ("subject_deformation", args.deformation),
        ("image_width", args.width),
        ("image_height", args.height),
    ):
        if val is not None:
            spec_kw[key] = val
    spec = synthetic.SceneSpec.from_dict(spec_kw)
    manifest = synthetic.generate_dataset(spec, args.out)
    log.info("wrote %d frames to %s", len(manifest), args.out)


def _solver_config(args):
    kw = {}
    if args.max_iterations is not None:
        kw["max_lm_iterations"] = args.max_iterations
    if args.correction_after is not None:
        kw["correction_after_iterations"] = args.correction_after
    if args.damping is not None:
        kw["lm_initial_damping"] = args.damping
    if args.tol is not None:
        kw["convergence_tol"] = args.tol
    if args.no_correction:
        kw["correction_enabled"] = False
    return pnp.SolverConfig(**kw)


def _face_model(args):
    path = Path(args.model) if args.model else default_model_path()
    _require(path)
    return load_face_model(path)


def cmd_pose(args):
    _require(args.manifest)
    manifest = evaluation.load_manifest(args.manifest)
    model = _face_model(args)
    config = _solver_config(args)
    if not 0.0 <= args.adversarial_init <= 1.0:
        raise InvalidInputError("--adversarial-init must lie in [0, 1]")
    rng = np.random.default_rng([args.seed, 0x616476])
    records = sorted(manifest.records, key=lambda r: r.frame_id)
    adversarial = rng.random(len(records)) < args.adversarial_init
    lines = []
    n_done = 0
    for rec, adv in zip(records, adversarial):
        try:
            lm = load_landmarks(manifest.resolve(rec), rec.image_width, rec.image_height)
            cam = approximate_intrinsics(rec.image_width, rec.image_height)
            out = []
            for which in ("inner", "all"):
                init = None
                if adv:
                    init = pnp.flip_pose(pnp.initial_pose(model, which, lm, cam))
                pose = pnp.estimate_pose(model, which, lm, cam, config, init_pose=init)
                out.append(pnp.pose_record(rec.frame_id, which, pose))
        except (OSError, HeadPoseError) as exc:
            log.warning("skipping frame %s: %s", rec.frame_id, exc)
            lines.append({"frame_id": rec.frame_id, "set": None, "skipped": str(exc)})
            continue
        lines.extend(out)
        n_done += 1
    with open(args.out, "w") as fh:
        for rec in lines:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    log.info("estimated poses for %d of %d frames", n_done, len(records))


def read_pose_file(path):
    """Map ``frame_id -> PosePair`` plus the list of skipped frame ids."""
    path = Path(path)
    poses, skipped = {}, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec.get("skipped") is not None:
                    skipped.append(rec["frame_id"])
                    continue
                if rec["set"] not in ("inner", "all"):
                    raise ValueError(f"unknown pose set {rec['set']!r}")
                poses.setdefault(rec["frame_id"], {})[rec["set"]] = pnp.pose_from_record(rec)
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(str(exc), path, lineno) from exc
    pairs = {}
    for fid, d in poses.items():
        if set(d) != {"inner", "all"}:
            raise ParseError(f"frame {fid} lacks one of the two pose sets", path)
        pairs[fid] = features.PosePair(d["inner"], d["all"], fid)
    return pairs, skipped


def cmd_features(args):
    _require(args.manifest, args.poses)
    manifest = evaluation.load_manifest(args.manifest)
    pairs, skipped = read_pose_file(args.poses)
    rows = []
    for rec in sorted(manifest.records, key=lambda r: r.frame_id):
        if rec.frame_id not in pairs:
            log.warning("no poses for frame %s", rec.frame_id)
            continue
        rows.append(features.feature_record(pairs[rec.frame_id], rec.label, rec.subject_ids))
    features.write_feature_file(rows, args.out)
    log.info("wrote %d feature rows (%d frames skipped)", len(rows), len(manifest) - len(rows))


def _relocated(manifest, out_dir):
    recs = []
    for r in manifest.records:
        rel = os.path.relpath(manifest.resolve(r).resolve(), Path(out_dir).resolve())
        recs.append(evaluation.ManifestRecord(**{**r.to_dict(), "landmarks": rel}))
    return evaluation.DatasetManifest(tuple(recs), out_dir)


def cmd_split(args):
    _require(args.manifest)
    manifest = evaluation.load_manifest(args.manifest)
    train, test = evaluation.split_dataset(
        manifest, args.mode, args.seed, not args.no_balance, args.test_fraction
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_manifest(_relocated(train, out), out / "train.jsonl")
    evaluation.write_manifest(_relocated(test, out), out / "test.jsonl")
    log.info("split %d frames into %d train / %d test", len(manifest), len(train), len(test))


def _select(rows, split_path):
    if split_path is None:
        return rows
    _require(split_path)
    keep = {r.frame_id for r in evaluation.load_manifest(split_path).records}
    return [r for r in rows if r.frame_id in keep]


def cmd_train(args):
    _require(args.features)
    rows = _select(features.read_feature_file(args.features), args.split)
    model = classifier.train([r.vector for r in rows], C=args.C, seed=args.seed)
    classifier.save_model(model, args.out)
    log.info("trained on %d frames, %d support vectors", len(rows), len(model.dual_coef))


def cmd_evaluate(args):
    _require(args.model, args.features)
    model = classifier.load_model(args.model)
    rows = _select(features.read_feature_file(args.features), args.split)
    if not rows:
        raise InvalidInputError("no feature rows to evaluate")
    X = np.array([r.vector.values for r in rows])
    f = classifier.decision_values(model, X)
    p = classifier.predict_proba(model, X)
    labels = [r.label for r in rows]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "scores.csv",
        ("frame_id", "label", "decision_value", "probability"),
        [(r.frame_id, r.label, float(fv), float(pv)) for r, fv, pv in zip(rows, f, p)],
    )
    curve = evaluation.roc_auc(p, labels)
    _write_roc(out / "roc.csv", curve)
    _write_json(out / "summary.json", {"auc": curve.auc, "frames": len(rows)})
    print(f"AUC {curve.auc:.4f} on {len(rows)} frames")


def _write_roc(path, curve):
    _write_csv(
        path,
        ("threshold", "fpr", "tpr"),
        [
            (float(t), float(a), float(b))
            for t, a, b in zip(curve.thresholds, curve.fpr, curve.tpr)
        ],
    )


def _fmt_prob(v):
    return "" if v is None else _num(v)


def cmd_report(args):
    _require(args.features, args.scores, args.manifest)
    rows = _select(features.read_feature_file(args.features), args.split)
    if not rows:
        raise InvalidInputError("no feature rows to report on")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    flags = [(r.inner_flipped, r.all_flipped) for r in rows]
    table = evaluation.flip_contingency(flags)
    prop = table.proportions()
    _write_csv(
        out / "contingency.csv",
        ("inner", "all_flipped", "all_correct"),
        [("flipped", prop["both"], prop["inner_only"]), ("correct", prop["all_only"], prop["neither"])],
    )
    labelled = [(fl, r.label) for fl, r in zip(flags, rows) if r.label]
    cond = evaluation.conditional_fake_prob(labelled) if labelled else None
    with open(out / "conditional.csv", "w") as fh:
        fh.write("condition,p_fake,frames\n")
        for name, val, pick in (
            ("conflicting", cond and cond.conflicting, True),
            ("non_conflicting", cond and cond.non_conflicting, False),
        ):
            n = sum(1 for fl, _ in labelled if (fl[0] != fl[1]) == pick)
            fh.write(f"{name},{_fmt_prob(val)},{n}\n")

    dist = np.array([r.cosine_distance for r in rows])
    edges, counts = evaluation.histogram(dist, args.bins)
    by_class = {}
    for name in ("authentic", "fake"):
        sel = dist[[r.label == name for r in rows]]
        by_class[name] = np.histogram(sel, bins=edges)[0] if sel.size else np.zeros(args.bins, int)
    _write_csv(
        out / "histogram_cosine.csv",
        ("bin_lo", "bin_hi", "all", "authentic", "fake"),
        [
            (float(edges[k]), float(edges[k + 1]), int(counts[k]),
             int(by_class["authentic"][k]), int(by_class["fake"][k]))
            for k in range(len(counts))
        ],
    )
    params = np.array([r.parameters for r in rows])
    hist_rows = []
    for j, name in enumerate(features.POSE_PARAMETER_NAMES):
        e, c = evaluation.histogram(params[:, j], args.bins)
        hist_rows.extend((name, float(e[k]), float(e[k + 1]), int(c[k])) for k in range(len(c)))
    _write_csv(out / "histogram_parameters.csv", ("parameter", "bin_lo", "bin_hi", "count"), hist_rows)

    summary = {
        "frames": len(rows),
        "flip_both": prop["both"],
        "flip_inner_only": prop["inner_only"],
        "flip_all_only": prop["all_only"],
        "flip_neither": prop["neither"],
        "flip_at_least_one": table.at_least_one,
        "conflicting": table.conflicting,
        "p_fake_given_conflicting": cond and cond.conflicting,
        "p_fake_given_non_conflicting": cond and cond.non_conflicting,
    }
    if args.manifest:
        n_manifest = len(evaluation.load_manifest(args.manifest))
        summary["coverage"] = len(rows) / n_manifest if n_manifest else 0.0
    curve = None
    if args.scores:
        scores = _read_scores(args.scores)
        curve = evaluation.roc_auc([s for s, _ in scores], [lab for _, lab in scores])
        _write_roc(out / "roc.csv", curve)
        summary["auc"] = curve.auc
    _write_json(out / "summary.json", summary)

    if not args.no_figures:
        from . import plotting

        plotting.plot_contingency(table, out / "contingency.png")
        plotting.plot_class_histogram(edges, by_class, out / "histogram_cosine.png")
        if curve is not None:
            plotting.plot_roc(curve, out / "roc.png")


def _read_scores(path):
    import csv

    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append((float(row["probability"]), row["label"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad score row: {exc}", path, lineno) from exc
    return out


# -------------------------------------------------------------------- parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(
        prog="headpose-forensics",
        description="Head-pose inconsistency DeepFake detection pipeline.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        sp = sub.add_parser(
            name, help=help_text, description=help_text, epilog=EPILOG,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic landmark dataset")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--spec", help="scene specification JSON (flags override it)")
    sp.add_argument("--frames", type=_positive_int)
    sp.add_argument("--subjects", type=_positive_int)
    sp.add_argument("--noise", type=float, help="pixel noise sigma")
    sp.add_argument("--swap", type=float, help="inner-region swap perturbation (mm)")
    sp.add_argument("--deformation", type=float, help="per-subject shape deformation (mm)")
    sp.add_argument("--width", type=_positive_int)
    sp.add_argument("--height", type=_positive_int)
    sp.set_defaults(seed=None)

    sp = add("pose", cmd_pose, "estimate inner and whole-face head poses")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="pose JSON-lines output")
    sp.add_argument("--model", help=f"face model CSV (default: ${MODEL_ENV_VAR} or bundled)")
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--no-correction", action="store_true", help="disable flipped-pose correction")
    grp.add_argument("--correction-after", type=_positive_int, help="LM steps before flip check")
    sp.add_argument("--max-iterations", type=_positive_int)
    sp.add_argument("--damping", type=float, help="initial LM damping")
    sp.add_argument("--tol", type=float, help="relative cost decrease for convergence")
    sp.add_argument(
        "--adversarial-init", type=float, default=0.0, metavar="FRACTION",
        help="start this fraction of frames from the flipped DLT pose",
    )

    sp = add("features", cmd_features, "compute pose-difference features")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--poses", required=True)
    sp.add_argument("--out", required=True)

    sp = add("split", cmd_split, "split a manifest into train and test sets")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--mode", choices=evaluation.SPLIT_MODES, default="disjoint-subjects")
    sp.add_argument("--no-balance", action="store_true", help="keep class imbalance")
    sp.add_argument("--test-fraction", type=float, default=0.5)
    sp.add_argument("--out-dir", required=True)

    sp = add("train", cmd_train, "train the SVM on a feature file")
    sp.add_argument("--features", required=True)
    sp.add_argument("--split", help="manifest restricting the frames used")
    sp.add_argument("--C", type=float, default=1.0, help="SVM regularisation (default 1)")
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, "score frames and compute the ROC curve")
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--split", help="manifest restricting the frames used")
    sp.add_argument("--out-dir", required=True)

    sp = add("report", cmd_report, "flip tables, conditional probabilities, histograms")
    sp.add_argument("--features", required=True)
    sp.add_argument("--split", help="manifest restricting the frames used")
    sp.add_argument("--scores", help="scores.csv from evaluate, adds the ROC summary")
    sp.add_argument("--manifest", help="full manifest, adds the coverage statistic")
    sp.add_argument("--bins", type=_positive_int, default=20)
    sp.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    sp.add_argument("--out-dir", required=True)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except HeadPoseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
