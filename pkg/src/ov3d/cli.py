"""Command line interface: ``ov3d <command> ...``.

Commands: synth, lift, eval, loss, prompts, classify, validate.
Exit status is 0 on success, 1 when an error was reported, 2 on bad usage.
Only the embedding endpoint (``OV3D_EMBEDDING_URL``) and the log level
(``OV3D_LOG_LEVEL``) are read from the environment.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import io, prompts
from .evaluation import DEFAULT_THRESHOLDS, LabeledBox3D, evaluate
from .lifting import FIT_MODES, LiftParams, LiftRejected, lift_box
from .losses import DEFAULT_TAU, loc_loss, positives_by_category, recog_loss, total_loss, contrastive_loss
from .scene import Scene
from .synth import SynthSpec, write_dataset

__version__ = "0.1.0"
log = logging.getLogger("ov3d")

DEFAULT_CATEGORY = "object"


class CommandError(Exception):
    pass


def _positive_float(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s!r}")
    if not (v > 0 and v != float("inf")):
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {s}")
    return v


def _positive_int(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {s}")
    return v


def _thresholds(s):
    try:
        vals = tuple(float(x) for x in s.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {s!r}")
    if not vals or any(not (0 < v <= 1) for v in vals):
        raise argparse.ArgumentTypeError("thresholds must lie in (0, 1]")
    return vals


def _emit(args, payload, text=None):
    if args.json or text is None:
        print(json.dumps(payload, indent=2))
    else:
        print(text)


# ------------------------------------------------------------------ synth

def cmd_synth(args) -> int:
    spec = SynthSpec()
    if args.spec:
        spec = SynthSpec.from_dict(json.loads(Path(args.spec).read_text()))
    over = {}
    if args.scenes is not None:
        over["n_scenes"] = args.scenes
    if args.seed is not None:
        over["seed"] = args.seed
    if over:
        spec = SynthSpec.from_dict({**spec.to_dict(), **over})
    ids = write_dataset(spec, args.out, threads=args.threads)
    _emit(args, {"scenes": len(ids), "out": str(args.out)}, f"wrote {len(ids)} scenes to {args.out}")
    return 0


# ------------------------------------------------------------------- lift

def _lift_scene(scene: Scene, boxes, params: LiftParams):
    out, reasons = [], Counter()
    for b in boxes:
        try:
            box = lift_box(scene, b, params)
        except LiftRejected as e:
            reasons[e.reason] += 1
            continue
        out.append(LabeledBox3D(box, b.phrase or DEFAULT_CATEGORY, 1.0 if b.score is None else b.score))
    return out, reasons


def cmd_lift(args) -> int:
    params = LiftParams(args.eps, args.min_pts, args.min_cluster, args.fit_mode)
    out_dir = Path(args.out)
    explicit = (args.cloud, args.calib, args.boxes2d)
    if args.data and any(explicit):
        raise CommandError("use either --data or --cloud/--calib/--boxes2d, not both")

    if args.data:
        try:
            ids = io.read_index(args.data)
        except io.ManifestError as e:
            raise CommandError(str(e))
        jobs = [(sid, io.scene_dir(args.data, sid)) for sid in ids]

        def load(job):
            sid, d = job
            scene = io.read_scene(args.data, sid)
            ref, boxes = io.read_boxes2d(d / io.BOXES2D_FILE)
            if ref != sid:
                raise io.MalformedDocumentError(f"{d / io.BOXES2D_FILE}: names scene {ref!r}, expected {sid!r}")
            return scene, boxes
    else:
        if not all(explicit):
            raise CommandError("need --data, or all of --cloud, --calib and --boxes2d")
        jobs = [(None, None)]

        def load(job):
            for p in explicit:
                if not Path(p).exists():
                    raise io.MalformedDocumentError(f"{p}: no such file")
            sid, boxes = io.read_boxes2d(args.boxes2d)
            return Scene(sid, io.read_cloud(args.cloud), io.read_calibration(args.calib)), boxes

    out_dir.mkdir(parents=True, exist_ok=True)

    def work(job):
        try:
            scene, boxes = load(job)
        except (io.ManifestError, OSError) as e:
            return job[0], None, str(e)
        lifted, reasons = _lift_scene(scene, boxes, params)
        io.write_boxes3d(out_dir / f"{scene.scene_id}.json", scene.scene_id, lifted)
        return scene.scene_id, (len(boxes), len(lifted), reasons), None

    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as ex:
            results = list(ex.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    n_in = n_out = 0
    reasons, errors = Counter(), []
    for sid, stats, err in results:
        if err:
            errors.append(err)
            log.error(err)
            continue
        n_in += stats[0]
        n_out += stats[1]
        reasons.update(stats[2])
    summary = {"scenes": len(results) - len(errors), "boxes_in": n_in, "lifted": n_out,
               "rejected": n_in - n_out, "reasons": dict(sorted(reasons.items())), "errors": errors}
    text = (f"scenes {summary['scenes']}  boxes in {n_in}  lifted {n_out}  rejected {n_in - n_out}"
            + "".join(f"\n  {k}: {v}" for k, v in summary["reasons"].items())
            + "".join(f"\nerror: {e}" for e in errors))
    _emit(args, summary, text)
    return 1 if errors else 0


# ------------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    try:
        gts = io.load_box_collection(args.gt, gt=True)
        preds = io.load_box_collection(args.pred) if args.pred else {}
    except io.ManifestError as e:
        raise CommandError(str(e))
    cats = None
    if args.categories:
        cats = list(io.read_vocab(args.categories))
    report = evaluate(preds, gts, args.iou, cats)
    doc = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    _emit(args, doc, report.table())
    return 0


# ------------------------------------------------------------------- loss

def _load_manifest(args):
    url = args.provider_url or os.environ.get("OV3D_EMBEDDING_URL")
    if args.embeddings:
        return io.load_embeddings(io.ProviderConfig("file", path=args.embeddings))
    if url:
        if not args.ids:
            raise CommandError("--ids is required with an HTTP embedding provider")
        ids = [ln.strip() for ln in Path(args.ids).read_text().splitlines() if ln.strip()]
        return io.load_embeddings(io.ProviderConfig("http", url=url, timeout=args.timeout), ids)
    return None


def _explicit_positives(spec, anchors, pool, key):
    table = spec.get(key)
    if not isinstance(table, dict):
        raise CommandError(f"positives file lacks a {key!r} table")
    index = {f.id: k for k, f in enumerate(pool)}
    out = []
    for a in anchors:
        ids = table.get(a.id)
        if not ids:
            raise CommandError(f"no {key} positives for anchor {a.id!r}")
        try:
            out.append([index[i] for i in ids])
        except KeyError as e:
            raise CommandError(f"{key} positive {e.args[0]!r} of {a.id!r} not in the batch")
    return out


def cmd_loss(args) -> int:
    report = {"l_loc": 0.0, "l_recog": 0.0, "l_total": 0.0}
    if bool(args.pred) != bool(args.target):
        raise CommandError("--pred and --target go together")
    if args.pred:
        preds = io.load_box_collection(args.pred)
        targets = io.load_box_collection(args.target, gt=True)
        l_loc, matched = 0.0, 0
        for sid in sorted(set(preds) | set(targets)):
            v, a = loc_loss([b.box for b in preds.get(sid, [])], [b.box for b in targets.get(sid, [])],
                            mean=args.mean_loc)
            l_loc += v
            matched += len(a.pairs)
        report["l_loc"] = l_loc
        report["matched"] = matched

    feats = _load_manifest(args)
    if feats:
        pc = [f for f in feats if f.modality == "pc"]
        img = [f for f in feats if f.modality == "image"]
        txt = [f for f in feats if f.modality == "text"]
        if args.mean_text and txt:
            cats = list(dict.fromkeys(f.category for f in txt if f.category is not None))
            txt = [prompts.mean_class_feature(txt, c) for c in cats]
        if pc:
            if not img or not txt:
                raise CommandError("recognition loss needs image and text features alongside pc anchors")
            if args.positives:
                spec = json.loads(Path(args.positives).read_text())
                pos_2d = _explicit_positives(spec, pc, img, "image")
                pos_t = _explicit_positives(spec, pc, txt, "text")
            else:
                try:
                    pos_2d = positives_by_category(pc, img)
                    pos_t = positives_by_category(pc, txt)
                except ValueError as e:
                    raise CommandError(str(e))
            report["l_cl_image"] = contrastive_loss(pc, img, pos_2d, args.tau)[0]
            report["l_cl_text"] = contrastive_loss(pc, txt, pos_t, args.tau)[0]
            report["l_recog"] = recog_loss(pc, img, txt, pos_2d, pos_t, args.tau)
    report["l_total"] = total_loss(report["l_loc"], report["l_recog"])
    print(json.dumps(report, indent=2))
    return 0


# ---------------------------------------------------------------- prompts

def cmd_prompts(args) -> int:
    action = args.action
    if action in ("expand", "sample"):
        vocab = io.read_vocab(args.vocab)
        if args.sample_m is not None:
            vocab = prompts.sample_vocab(vocab, args.sample_m, args.seed)
        elif action == "sample":
            raise CommandError("prompts sample needs --sample-m")
        if action == "sample":
            if args.out:
                io.write_vocab(args.out, vocab)
            _emit(args, {"classes": list(vocab)}, "\n".join(vocab))
            return 0
        templates = io.read_templates(args.templates) if args.templates else prompts.PromptTemplateSet()
        pset = prompts.expand_prompts(vocab, templates, args.rounds)
    elif action == "select":
        pset = {}
        for f in sorted(Path(args.descriptions).glob("*.json")):
            cat, texts = io.read_description(f)
            if cat in pset:
                raise CommandError(f"{f}: duplicate class {cat!r}")
            pset[cat] = texts
    elif action == "aggregate":
        feats = io.load_embeddings(io.ProviderConfig("file", path=args.embeddings))
        txt = [f for f in feats if f.modality == "text" and f.category is not None]
        if args.vocab:
            names = list(io.read_vocab(args.vocab))
        else:
            names = list(dict.fromkeys(f.category for f in txt))
        means = [prompts.mean_class_feature(txt, c) for c in names]
        io.write_embeddings(args.out, means)
        _emit(args, {"classes": len(means), "out": str(args.out)}, f"wrote {len(means)} class features to {args.out}")
        return 0
    else:  # pragma: no cover - argparse restricts choices
        raise CommandError(f"unknown action {action}")

    if args.limit_per_class is not None:
        short = {c: len(v) for c, v in pset.items() if len(v) < args.limit_per_class}
        for c, n in short.items():
            log.warning("class %r has only %d prompts (< %d)", c, n, args.limit_per_class)
        pset = prompts.limit_per_class(pset, args.limit_per_class)
    io.write_prompt_files(args.out, pset)
    counts = {c: len(v) for c, v in pset.items()}
    _emit(args, {"classes": len(pset), "prompts": sum(counts.values()), "per_class": counts},
          f"wrote {sum(counts.values())} prompts for {len(pset)} classes to {args.out}")
    return 0


def cmd_classify(args) -> int:
    crops = io.load_embeddings(io.ProviderConfig("file", path=args.crops))
    classes = io.load_embeddings(io.ProviderConfig("file", path=args.classes))
    out = []
    for c in crops:
        cat, score = prompts.classify_embedding(c, classes)
        out.append({"id": c.id, "class": cat, "score": score})
    _emit(args, {"labels": out}, "\n".join(f"{r['id']}\t{r['class']}\t{r['score']:.4f}" for r in out))
    return 0


def cmd_validate(args) -> int:
    vs = io.validate_dataset(args.data)
    payload = {"violations": [vars(v) for v in vs], "errors": sum(v.severity == "error" for v in vs)}
    _emit(args, payload, "\n".join(map(str, vs)) if vs else "no violations")
    return 1 if io.has_errors(vs) else 0


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ov3d", description="Open-vocabulary 3D pseudo-labels, losses and evaluation.")
    p.add_argument("--version", action="version", version=f"ov3d {__version__} (schema {io.SCHEMA_VERSION})")
    p.add_argument("--log-level", default=os.environ.get("OV3D_LOG_LEVEL", "WARNING"),
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--spec", help="JSON file with SynthSpec fields")
    s.add_argument("--scenes", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=_positive_int, default=1)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("lift", parents=[common], help="lift 2D boxes to 3D pseudo-labels")
    s.add_argument("--data", help="dataset root")
    s.add_argument("--cloud")
    s.add_argument("--calib")
    s.add_argument("--boxes2d")
    s.add_argument("--out", required=True)
    s.add_argument("--eps", type=_positive_float, default=0.15)
    s.add_argument("--min-pts", type=_positive_int, default=10)
    s.add_argument("--min-cluster", type=_positive_int, default=20)
    s.add_argument("--fit-mode", choices=FIT_MODES, default="axis-aligned")
    s.add_argument("--threads", type=_positive_int, default=1)
    s.set_defaults(func=cmd_lift)

    s = sub.add_parser("eval", parents=[common], help="AP/AR of 3D detections")
    s.add_argument("--pred", help="prediction box file or directory")
    s.add_argument("--gt", required=True, help="ground-truth box file, directory or dataset root")
    s.add_argument("--iou", type=_thresholds, default=DEFAULT_THRESHOLDS)
    s.add_argument("--categories", help="vocabulary file fixing the evaluated classes")
    s.add_argument("--out", help="write the JSON report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("loss", parents=[common], help="localization + recognition loss")
    s.add_argument("--embeddings", help="embedding manifest")
    s.add_argument("--provider-url")
    s.add_argument("--ids", help="id list for the HTTP provider, one per line")
    s.add_argument("--timeout", type=_positive_float, default=10.0)
    s.add_argument("--positives", help="JSON {image: {pc_id: [ids]}, text: {...}}")
    s.add_argument("--pred")
    s.add_argument("--target")
    s.add_argument("--tau", type=_positive_float, default=DEFAULT_TAU)
    s.add_argument("--mean-loc", action="store_true", help="average the box loss over matched pairs")
    s.add_argument("--mean-text", action="store_true", help="use one mean text feature per class")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("prompts", parents=[common], help="prompt expansion, vocabulary sampling, class features")
    s.add_argument("action", choices=["expand", "sample", "select", "aggregate"])
    s.add_argument("--vocab")
    s.add_argument("--templates")
    s.add_argument("--rounds", type=_positive_int, default=1)
    s.add_argument("--sample-m", type=_positive_int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--limit-per-class", type=_positive_int)
    s.add_argument("--descriptions", help="directory of description manifests")
    s.add_argument("--embeddings")
    s.add_argument("--out")
    s.set_defaults(func=cmd_prompts)

    s = sub.add_parser("classify", parents=[common], help="label crop embeddings by nearest class feature")
    s.add_argument("--crops", required=True)
    s.add_argument("--classes", required=True)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("validate", parents=[common], help="check a dataset directory")
    s.add_argument("data")
    s.set_defaults(func=cmd_validate)
    return p


_REQUIRED = {
    "expand": ("vocab", "out"),
    "sample": ("vocab",),
    "select": ("descriptions", "out"),
    "aggregate": ("embeddings", "out"),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "prompts":
        missing = [f"--{k.replace('_', '-')}" for k in _REQUIRED[args.action] if getattr(args, k) is None]
        if missing:
            parser.error(f"prompts {args.action} requires {', '.join(missing)}")
    if args.command == "lift" and args.min_cluster < args.min_pts:
        parser.error("--min-cluster must be >= --min-pts")
    try:
        return args.func(args)
    except (CommandError, io.ManifestError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
