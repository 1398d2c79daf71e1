"""Command-line entry point: ``ocrcap {gen-data,train,decode,eval,inspect}``.

Exit codes: 0 success, 2 usage or configuration, 3 numeric failure,
4 data or I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, config_from_dict, dump_config, load_config, tomllib
from .decoding import decode_captions
from .embedding import EmbeddingError
from .generation import common_words_from_counts
from .metrics import MetricError, bleu4, cider_d, per_scene_scores, repetition_rate
from .reading import TASKS, SceneFormatError, TaskSpec, generate_scenes, load_scenes, save_scenes
from .reading.scenes import read_records
from .tensor import NonFiniteError
from .tensor.nn import ConfigError as LayerConfigError
from .training import TrainingDiverged, split_scenes, train
from .vocab import count_words

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DATA = 0, 2, 3, 4
METRICS = ("bleu4", "cider")


class DataError(ValueError):
    """Inputs that do not line up (missing scene ids, unknown scenes)."""


class CompatibilityError(ConfigError):
    """Checkpoint configuration does not fit the data."""


def _echo(title: str, body: str) -> None:
    print(f"# {title}")
    for line in body.rstrip("\n").splitlines():
        print(f"#   {line}")


def _write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = TaskSpec(args.task, num_ocr=args.num_ocr)
    _echo("resolved options", f"task = {args.task}\nnum_scenes = {args.num_scenes}\nseed = {args.seed}\n"
                              f"num_ocr = {args.num_ocr}\nout = {args.out}")
    scenes = generate_scenes(spec, args.num_scenes, args.seed)
    save_scenes(scenes, args.out)
    counts = count_words(c for s in scenes for c in s.captions)
    preview = sorted(counts, key=lambda w: (-counts[w], w))[:10]
    print(f"wrote {len(scenes)} scenes to {args.out}")
    print(f"caption words: {len(counts)} distinct; most frequent: {' '.join(preview)}")
    return EXIT_OK


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _apply_overrides(cfg, pairs: Sequence[str]):
    raw = cfg.to_dict()
    for item in pairs:
        key, sep, value = item.partition("=")
        section, _, name = key.partition(".")
        if not sep or section not in raw or name not in raw[section]:
            raise ConfigError(f"bad override {item!r} (expected section.key=value)")
        raw[section][name] = _parse_value(value)
    return config_from_dict(raw)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.set:
        cfg = _apply_overrides(cfg, args.set)
    _echo("resolved config", dump_config(cfg))
    scenes = load_scenes(args.data, cfg.data.c_default)
    tr, va = split_scenes(scenes, cfg.data.val_fraction, cfg.train.seed)
    print(f"train scenes: {len(tr)}  validation scenes: {len(va)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_lines = []

    def log(line):
        log_lines.append(line)
        print(line, flush=True)

    try:
        result = train(tr, va, cfg, log=log)
    except TrainingDiverged as exc:
        path = out / "last_good.ckpt"
        if exc.last_good is not None:
            save_checkpoint(exc.last_good, path)
        (out / "train.log").write_text("".join(l + "\n" for l in log_lines) + f"diverged: {exc}\n")
        print(f"error: training diverged: {exc}; last good checkpoint: {path}", file=sys.stderr)
        return EXIT_NUMERIC
    (out / "train.log").write_text("".join(l + "\n" for l in log_lines))
    digest = save_checkpoint(result.best, out / "best.ckpt")
    save_checkpoint(result.latest, out / "latest.ckpt")
    print(f"best checkpoint: {out / 'best.ckpt'} (iteration {result.best.iteration}, "
          f"val_bleu4={result.best.best['bleu4']:.6f}, sha256={digest})")
    return EXIT_OK


def _check_compatible(cfg, scenes) -> None:
    m = cfg.model
    seen = {}
    for s in scenes:
        for o in s.objects:
            if o.feat is not None:
                seen.setdefault("f_obj", len(o.feat))
        for t in s.ocr:
            if t.feat is not None:
                seen.setdefault("f_ocr", len(t.feat))
    bad = {k: v for k, v in seen.items() if getattr(m, k) != v}
    if bad:
        data = ", ".join(f"{k}={v}" for k, v in sorted(seen.items()))
        ckpt = ", ".join(f"{k}={getattr(m, k)}" for k in sorted(seen))
        raise CompatibilityError(f"data features ({data}) incompatible with checkpoint config ({ckpt})")


def _decode_setup(args):
    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.config
    C = cfg.decode.common_threshold if args.common_threshold is None else args.common_threshold
    use_mask = cfg.decode.use_mask and not args.no_mask
    cfg = cfg.replace("decode", common_threshold=C, use_mask=use_mask)
    _echo("resolved config", dump_config(cfg))
    scenes = load_scenes(args.data, cfg.data.c_default)
    _check_compatible(cfg, scenes)
    common = common_words_from_counts(ckpt.caption_counts, C)
    return ckpt, cfg, scenes, common


def cmd_decode(args) -> int:
    ckpt, cfg, scenes, common = _decode_setup(args)
    results = decode_captions(ckpt.store(), cfg.model, scenes, ckpt.vocab, common,
                              cfg.decode.use_mask, top_k=args.top_k)
    _write_jsonl(args.out, (r.to_record() for r in results))
    rate = repetition_rate([r.caption for r in results], common)
    print(f"wrote {len(results)} captions to {args.out}; repetition_rate={rate:.6f}")
    return EXIT_OK


def _load_refs(path) -> dict:
    refs = {}
    for lineno, rec in read_records(path):
        if "scene_id" not in rec:
            raise DataError(f"{path}:{lineno}: record without scene_id")
        if "captions" in rec:
            refs[rec["scene_id"]] = [list(c) for c in rec["captions"]]
        elif "caption" in rec:
            refs[rec["scene_id"]] = [list(rec["caption"])]
        else:
            raise DataError(f"{path}:{lineno}: record without captions")
    return refs


def cmd_eval(args) -> int:
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in wanted if m not in METRICS]
    if unknown or not wanted:
        raise ConfigError(f"unknown metric(s) {unknown}; choose from {', '.join(METRICS)}")
    _echo("resolved options", f"hyp = {args.hyp}\nref = {args.ref}\nmetrics = {','.join(wanted)}")
    refs = _load_refs(args.ref)
    corpus = {}
    for lineno, rec in read_records(args.hyp):
        sid = rec.get("scene_id")
        if sid not in refs:
            raise DataError(f"scene_id {sid!r} from {args.hyp}:{lineno} has no reference in {args.ref}")
        corpus[sid] = (list(rec.get("caption", [])), refs[sid])
    if not corpus:
        raise DataError(f"{args.hyp}: no hypotheses")
    values = {}
    if "bleu4" in wanted:
        values["bleu4"] = bleu4(corpus)
    if "cider" in wanted:
        values["cider"] = cider_d(corpus)
    per = per_scene_scores(corpus)
    breakdown = args.out or str(args.hyp) + ".scores.jsonl"
    _write_jsonl(breakdown, ({"scene_id": sid, **{k: per[sid][k] for k in ("bleu4", "cider")
                                                   if k in wanted}} for sid in corpus))
    print(f"{'metric':<8} {'value':>12}")
    for k, v in values.items():
        print(f"{k:<8} {v:>12.6f}")
    print(f"scenes   {len(corpus):>12d}")
    print(f"per-scene breakdown: {breakdown}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    ckpt, cfg, scenes, common = _decode_setup(args)
    match = [s for s in scenes if s.scene_id == args.scene_id]
    if not match:
        raise DataError(f"scene {args.scene_id!r} not found in {args.data}")
    scene = match[0]
    (result,) = decode_captions(ckpt.store(), cfg.model, [scene], ckpt.vocab, common,
                                cfg.decode.use_mask, top_k=args.top_k)
    print(f"scene {scene.scene_id}")
    print("ocr tokens: " + ", ".join(f"{t}({c:.2f})" for t, c in scene.confidence_table()))
    for t, (rows, tok) in enumerate(zip(result.steps, result.tokens)):
        print(f"step {t + 1}: chose {tok.text!r} from {tok.source}")
        for surface, score, masked in rows:
            print(f"    {surface:<16} {score:>12.4f}  {'masked' if masked else ''}".rstrip())
    print("caption: " + " ".join(result.caption))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _nonneg(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocrcap", description="Confidence-aware scene-text captioning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic scene file")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--num-scenes", type=_nonneg, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-ocr", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train and keep the best validation BLEU-4 checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.set_defaults(func=cmd_train)

    for name, helptext in (("decode", "greedy-decode captions"), ("inspect", "per-step score/mask table")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--no-mask", action="store_true", help="disable the repetition mask")
        p.add_argument("--common-threshold", type=_nonneg, default=None, metavar="C")
        if name == "decode":
            p.add_argument("--out", required=True)
            p.add_argument("--top-k", type=_nonneg, default=0, help="dump top-k scores per step")
            p.set_defaults(func=cmd_decode)
        else:
            p.add_argument("--scene-id", required=True)
            p.add_argument("--top-k", type=_nonneg, default=5)
            p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("eval", help="score captions against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metrics", default="bleu4,cider")
    p.add_argument("--out", default=None, help="per-scene breakdown file")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LayerConfigError, MetricError, EmbeddingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SceneFormatError, CheckpointError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
