"""``mofg`` command line: gen-data, train, eval, infer, ablate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import torch

from .ablation import AblationGrid, Datasets, corpus_vocab, format_table
from .checkpoint import load_checkpoint, model_config, save_checkpoint
from .config import RunConfig
from .data import ForensicExample, _decode_image, gen_caption_set, gen_forensic_set, load_jsonl, save_jsonl
from .errors import ConfigError, MofgError, ValidationError
from .evaluate import evaluate
from .fusion import Fusion
from .judge import RemoteJudge, keyword_judge
from .model import MoFModel, generate
from .train import AdapterSetting, Stage, encode_dataset, stage1_align, stage2_ground, train_protocol

log = logging.getLogger("mofg")

QUICK_SIZES = {"n_train": 200, "n_test": 50, "n_captions": 100}
QUICK_EPOCHS = 1


class UsageError(MofgError):
    """Bad flag combination; exits with status 2."""


def _setup_logging() -> None:
    level = os.environ.get("MOF_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    over = {"seed": args.seed, "fusion": getattr(args, "fusion", None),
            "adapter_setting": getattr(args, "setting", None)}
    if getattr(args, "judge", None):
        over["eval__judge"] = args.judge
    if getattr(args, "endpoint", None):
        over["eval__endpoint"] = args.endpoint
    if getattr(args, "max_new", None) is not None:
        over["eval__max_new"] = args.max_new
    if args.quick:
        over.update(QUICK_SIZES)
        over["schedule__epochs"] = QUICK_EPOCHS
    for key in ("n_train", "n_test", "n_captions"):
        if getattr(args, key, None) is not None:
            if getattr(args, key) < 1:
                flag = "--n" if key == "n_train" else "--" + key.replace("_", "-")
                raise UsageError(f"{flag} must be >= 1")
            over[key] = getattr(args, key)
    return cfg.override(**over)


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise MofgError(f"cannot create output directory {out}: {e.strerror}") from e
    return out


def _echo_config(out: Path, command: str, cfg: RunConfig) -> None:
    (out / f"config.{command}.json").write_text(cfg.to_json() + "\n", encoding="utf-8")


def _load_split(data_dir: Path, name: str) -> list[ForensicExample]:
    path = data_dir / f"{name}.jsonl"
    if not path.is_file():
        raise MofgError(f"missing dataset {path}")
    return load_jsonl(path)


def _judge(cfg: RunConfig):
    e = cfg.eval
    if e.judge == "remote":
        return RemoteJudge(e.endpoint, e.prompt_template, e.timeout, e.max_in_flight)
    return keyword_judge


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    seeds = cfg.data_seeds()
    sets = {
        "captions": gen_caption_set(cfg.n_captions, seeds["captions"], cfg.data),
        "train": gen_forensic_set(cfg.n_train, seeds["train"], cfg.data),
        "test": gen_forensic_set(cfg.n_test, seeds["test"], cfg.data),
    }
    for name, ds in sets.items():
        save_jsonl(ds, out / f"{name}.jsonl")
    _echo_config(out, "gen-data", cfg)
    print(f"wrote {cfg.n_captions} captions, {cfg.n_train} train, {cfg.n_test} test examples to {out}")
    return 0


def _checkpoint_config(model: MoFModel, cfg: RunConfig, stage: str) -> dict:
    d = model_config(model, cfg.seed)
    d.update({"stage": stage, "adapter_setting": cfg.adapter_setting, "schedule": cfg.to_dict()["schedule"]})
    return d


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    data_dir = Path(args.data) if args.data else out
    fusion = Fusion.parse(cfg.fusion)
    setting = AdapterSetting.parse(cfg.adapter_setting)
    sched = cfg.schedule
    train = _load_split(data_dir, "train")
    if not train:
        raise UsageError("training set is empty")
    wants_captions = args.stage != "ground" and setting in (AdapterSetting.FULL, AdapterSetting.NO_REFINE)
    captions = _load_split(data_dir, "captions") if wants_captions or (data_dir / "captions.jsonl").is_file() else []

    if args.init:
        ckpt = load_checkpoint(args.init, fusion)
        model, vocab = ckpt.model, ckpt.vocab
    else:
        vocab = corpus_vocab(Datasets(captions, train, []))
        model = MoFModel(cfg.vision, cfg.lm, len(vocab), fusion, cfg.seed)
    forensic = encode_dataset(model, train, vocab, sched.max_len)
    enc_captions = encode_dataset(model, captions, vocab, sched.max_len) if captions else None
    _echo_config(out, "train", cfg)
    history: dict[str, list[float]] = {}

    def save(stage: str) -> None:
        path = out / f"{stage}.ckpt"
        save_checkpoint(path, model, vocab, _checkpoint_config(model, cfg, stage))
        print(f"saved {path}")

    if args.stage == "both":
        def after_align(m):
            save(Stage.ALIGN.value)

        result = train_protocol(model, setting, sched, forensic, enc_captions, after_align=after_align)
        if result.align is not None:
            history["align"] = result.align.epoch_losses
        history["ground"] = result.ground.epoch_losses
        save(Stage.GROUND.value)
    elif args.stage == "align":
        if setting is AdapterSetting.JOINT_ONLY:
            raise UsageError("adapter setting joint_only has no align stage")
        data = forensic if setting is AdapterSetting.NO_PREALIGN else enc_captions
        if fusion.uses_adapter():
            history["align"] = stage1_align(model, data, sched.stage_config(Stage.ALIGN, fusion)).epoch_losses
        else:
            log.info("fusion %s has no adapter; align stage is a no-op", fusion.value)
        save(Stage.ALIGN.value)
    else:
        frozen = setting in (AdapterSetting.NO_REFINE, AdapterSetting.NO_PREALIGN)
        cfg_g = sched.stage_config(Stage.GROUND, fusion, adapter_frozen=frozen)
        history["ground"] = stage2_ground(model, forensic, cfg_g).epoch_losses
        save(Stage.GROUND.value)
    (out / "train_log.json").write_text(json.dumps({"epoch_losses": history}, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    data_dir = Path(args.data) if args.data else out
    ckpt_path = Path(args.checkpoint) if args.checkpoint else out / "ground.ckpt"
    explicit_fusion = args.fusion or (args.config and "fusion" in json.loads(Path(args.config).read_text()))
    ckpt = load_checkpoint(ckpt_path, cfg.fusion if explicit_fusion else None)
    test = _load_split(data_dir, "test")
    if not test:
        raise UsageError("test set is empty")
    report = evaluate(ckpt.model, ckpt.vocab, test, _judge(cfg), cfg.eval.failure_policy, cfg.eval.max_new)
    _echo_config(out, "eval", cfg)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    summary = dict(report.metrics(), n_examples=report.n_examples, n_judge_failures=report.n_judge_failures)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _read_image(path: Path):
    try:
        obj = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    except OSError as e:
        raise MofgError(f"cannot read image file {path}: {e.strerror}") from e
    except (IndexError, json.JSONDecodeError) as e:
        raise MofgError(f"image file {path} is not a JSON tensor") from e
    if isinstance(obj, dict) and "image" in obj:
        obj = obj["image"]
    try:
        return _decode_image(obj)
    except (ValueError, TypeError) as e:
        raise MofgError(f"bad image in {path}: {e}") from e


def cmd_infer(args) -> int:
    cfg = _config(args)
    ckpt = load_checkpoint(args.checkpoint, args.fusion)
    img = _read_image(Path(args.image))
    expected = (cfg.vision.image_size, cfg.vision.image_size, 3)
    if tuple(img.shape) != (ckpt.model.vcfg.image_size, ckpt.model.vcfg.image_size, 3):
        raise ValidationError(f"image shape {tuple(img.shape)} does not match the model input {expected}")
    print(generate(torch.from_numpy(img), args.question, ckpt.model, ckpt.vocab, cfg.eval.max_new))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    if args.data:
        data_dir = Path(args.data)
        ds = Datasets(_load_split(data_dir, "captions"), _load_split(data_dir, "train"), _load_split(data_dir, "test"))
    else:
        seeds = cfg.data_seeds()
        ds = Datasets(gen_caption_set(cfg.n_captions, seeds["captions"], cfg.data),
                      gen_forensic_set(cfg.n_train, seeds["train"], cfg.data),
                      gen_forensic_set(cfg.n_test, seeds["test"], cfg.data))
    grid = AblationGrid(ds, cfg.seed, cfg.schedule, cfg.vision, cfg.lm, _judge(cfg))
    fusion_rows = grid.fusion_table()
    adapter_rows = grid.adapter_table()
    _echo_config(out, "ablate", cfg)
    dump = {
        "fusion": {r.fusion.value: r.report.metrics() for r in fusion_rows},
        "adapter": {r.setting.value: r.report.metrics() for r in adapter_rows},
    }
    (out / "ablation.json").write_text(json.dumps(dump, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(format_table(fusion_rows, "fusion"))
    print()
    print(format_table(adapter_rows, "adapter"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config; flags override its values")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--out", metavar="DIR", default="run", help="output directory (default ./run)")
    common.add_argument("--quick", action="store_true", help="tiny datasets and one epoch, for smoke tests")

    fusion = argparse.ArgumentParser(add_help=False)
    fusion.add_argument("--fusion", choices=[f.value for f in Fusion])

    sizes = argparse.ArgumentParser(add_help=False)
    sizes.add_argument("--n", dest="n_train", type=int, help="forensic training examples (default 2000)")
    sizes.add_argument("--n-test", type=int, help="forensic test examples (default 400)")
    sizes.add_argument("--n-captions", type=int, help="caption examples (default 1000)")

    judging = argparse.ArgumentParser(add_help=False)
    judging.add_argument("--judge", choices=["keyword", "remote"])
    judging.add_argument("--endpoint", metavar="URL", help="remote judge URL")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", metavar="DIR", help="dataset directory (default: --out)")

    setting = argparse.ArgumentParser(add_help=False)
    setting.add_argument("--setting", choices=[s.value for s in AdapterSetting], help="adapter training setting")

    p = argparse.ArgumentParser(prog="mofg", description="Dual-encoder forensic VQA at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common, sizes], help="write caption/train/test JSONL sets")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common, fusion, data, setting], help="train one or both stages")
    t.add_argument("--stage", choices=["align", "ground", "both"], default="both")
    t.add_argument("--init", metavar="CKPT", help="start from this checkpoint instead of a fresh model")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common, fusion, data, judging], help="score a checkpoint on the test split")
    e.add_argument("--checkpoint", metavar="CKPT", help="default: OUT/ground.ckpt")
    e.add_argument("--max-new", type=int)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", parents=[common, fusion], help="answer one question about one image")
    i.add_argument("--checkpoint", metavar="CKPT", required=True)
    i.add_argument("--image", metavar="PATH", required=True, help="JSON tensor or dataset line")
    i.add_argument("--question", required=True)
    i.add_argument("--max-new", type=int)
    i.set_defaults(func=cmd_infer)

    a = sub.add_parser("ablate", parents=[common, sizes, data, judging], help="run the fusion and adapter grids")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "max_new", None) is not None and args.max_new < 0:
        parser.error("--max-new must be >= 0")
    try:
        return args.func(args)
    except UsageError as e:
        parser.error(str(e))
    except (MofgError, ConfigError, OSError, FloatingPointError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"mofg {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
