"""Command-line entry point: prepare, train, eval, infer, serve.

Runs are driven by a TOML config plus repeatable `--override key=value`
flags (overrides win); the fully resolved config is echoed into the output
directory so every run is reproducible from its artifacts. Exit codes:
0 success, 2 argument/config errors, 3 data errors, 4 runtime failures.
"""

from __future__ import annotations

import argparse
import copy
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import data
from .losses import LossWeights
from .metrics import evaluate, render_report
from .training import (
    CheckpointIntegrityError,
    CheckpointVersionError,
    TrainConfig,
    TrainingDiverged,
    initialize_joint_state,
    load_checkpoint,
    load_model,
    train_stage,
)

EXIT_OK = 0
EXIT_ARGS = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

CACHE_ENV = "SEG_INPAINT_CACHE"

DEFAULT_CONFIG = {
    "train": {
        "epochs": 200,
        "decay_start": 100,
        "lr": 2e-4,
        "batch_size": 1,
        "seed": 0,
        "width_scale": 1.0,
        "norm": "instance",
        "num_categories": 8,
        "disc_base_channels": 64,
        "checkpoint_every": 0,
        "perceptual_seed": 0,
        "train_perceptual_weights": False,
        "max_steps": 0,
    },
    "data": {
        "root": "",
        "image_size": 256,
        "hole_lo": 0.125,
        "hole_hi": 0.5,
        "fill": 0.0,
        "mapping": "identity",
    },
    "weights": {
        "adversarial": 1.0,
        "perceptual": 10.0,
        "alex": 10.0,
    },
}


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "seg-inpaint"))


def _coerce(raw: str, like) -> object:
    if isinstance(like, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def resolve_config(config_path: Path | None, overrides: list[str]) -> dict:
    """defaults <- config file <- --override pairs; unknown keys are rejected."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if config_path is not None:
        with open(config_path, "rb") as f:
            loaded = tomllib.load(f)
        for section, values in loaded.items():
            if section not in config:
                raise ValueError(f"unknown config section [{section}]")
            if not isinstance(values, dict):
                raise ValueError(f"top-level config key {section!r} must be a section")
            for key, value in values.items():
                if key not in config[section]:
                    raise ValueError(f"unknown config key {section}.{key}")
                config[section][key] = value
    for pair in overrides:
        if "=" not in pair:
            raise ValueError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        if "." in key:
            section, name = key.split(".", 1)
            if section not in config or name not in config[section]:
                raise ValueError(f"unknown override key {key!r}")
        else:
            hits = [s for s in config if key in config[s]]
            if not hits:
                raise ValueError(f"unknown override key {key!r}")
            if len(hits) > 1:
                raise ValueError(f"ambiguous override key {key!r}; use one of "
                                 + ", ".join(f"{s}.{key}" for s in hits))
            section, name = hits[0], key
        config[section][name] = _coerce(raw, config[section][name])
    return config


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def echo_config(config: dict, path: Path) -> None:
    lines = []
    for section, values in config.items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    path.write_text("\n".join(lines))


def _mapping_from_name(name: str, num_categories: int) -> data.CategoryMapping:
    if name == "cityscapes":
        return data.cityscapes_mapping()
    if name == "identity":
        return data.identity_mapping(num_categories)
    raise ValueError(f"unknown mapping {name!r} (expected 'cityscapes' or 'identity')")


def _resolve_checkpoint_path(path_str: str) -> Path:
    path = Path(path_str)
    if not path.exists():
        cached = cache_dir() / path_str
        if cached.exists():
            return cached
        raise OSError(f"checkpoint not found: {path}")
    return path


def _load_generators(args):
    sp = load_model(load_checkpoint(_resolve_checkpoint_path(args.sp)), "sp_gen")
    sg = load_model(load_checkpoint(_resolve_checkpoint_path(args.sg)), "sg_gen")
    if sp.config.output_depth != sg.config.input_depth - 4:
        raise ValueError(
            f"checkpoints disagree on category count: sp outputs {sp.config.output_depth}, "
            f"sg expects {sg.config.input_depth - 4}")
    return sp, sg


# ---------------------------------------------------------------------------
# Commands

def cmd_prepare(args) -> int:
    out = Path(args.out)
    if args.demo:
        n_train, _, n_test = args.demo.partition(",")
        data.write_demo_dataset(out, int(n_train), int(n_test or 2),
                                size=args.image_size, seed=args.seed)
        print(f"demo dataset written to {out}")
        return EXIT_OK
    if not args.data_root:
        raise ValueError("prepare needs either --demo N[,M] or --data-root")
    mapping = _mapping_from_name(args.mapping, args.num_categories)
    root = Path(args.data_root)
    count = 0
    for split in ("train", "test"):
        src_images = root / split / "images"
        src_labels = root / split / "labels"
        if not src_images.is_dir():
            continue
        (out / split / "images").mkdir(parents=True, exist_ok=True)
        (out / split / "labels").mkdir(parents=True, exist_ok=True)
        for img_path in sorted(src_images.iterdir()):
            if img_path.suffix.lower() not in data.IMAGE_EXTENSIONS:
                continue
            label_path = src_labels / (img_path.stem + ".png")
            if not label_path.exists():
                print(f"warning: skipping {img_path.name}, no label pair", file=sys.stderr)
                continue
            image = data.load_image(img_path, args.image_size)
            labels = data.remap_labels(data.load_labels(label_path, args.image_size), mapping)
            data.save_image(image, out / split / "images" / f"{img_path.stem}.png")
            data.save_labels_png(labels, out / split / "labels" / f"{img_path.stem}.png")
            count += 1
    print(f"prepared {count} pairs into {out}")
    return EXIT_OK


def _train_config_from(config: dict, stage: str) -> TrainConfig:
    t, w = config["train"], config["weights"]
    return TrainConfig(
        stage=stage,
        epochs=t["epochs"],
        decay_start=t["decay_start"],
        lr=t["lr"],
        batch_size=t["batch_size"],
        image_size=config["data"]["image_size"],
        width_scale=t["width_scale"],
        seed=t["seed"],
        num_categories=t["num_categories"],
        weights=LossWeights(w["adversarial"], w["perceptual"], w["alex"]),
        norm=t["norm"],
        disc_base_channels=t["disc_base_channels"],
        perceptual_seed=t["perceptual_seed"],
        train_perceptual_weights=t["train_perceptual_weights"],
        checkpoint_every=t["checkpoint_every"],
    )


def cmd_train(args) -> int:
    config = resolve_config(args.config, args.override)
    if args.data_root:
        config["data"]["root"] = args.data_root
    if args.seed is not None:
        config["train"]["seed"] = args.seed
    if args.image_size is not None:
        config["data"]["image_size"] = args.image_size
    if args.width_scale is not None:
        config["train"]["width_scale"] = args.width_scale
    if not config["data"]["root"]:
        raise ValueError("no dataset root; pass --data-root or set data.root in the config")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(config, out / "config.resolved.toml")

    train_config = _train_config_from(config, args.stage)
    mapping = _mapping_from_name(config["data"]["mapping"], train_config.num_categories)
    dataset = data.InpaintDataset(
        Path(config["data"]["root"]), "train", mapping,
        image_size=config["data"]["image_size"],
        seed=train_config.seed,
        hole_fraction=(config["data"]["hole_lo"], config["data"]["hole_hi"]),
        fill=config["data"]["fill"],
    )

    resume = None
    if args.resume:
        resume = load_checkpoint(_resolve_checkpoint_path(args.resume))
    elif args.stage == "joint" and (args.init_sp or args.init_sg):
        sp_state = load_checkpoint(_resolve_checkpoint_path(args.init_sp)) if args.init_sp else None
        sg_state = load_checkpoint(_resolve_checkpoint_path(args.init_sg)) if args.init_sg else None
        resume = initialize_joint_state(train_config, dataset, sp_state, sg_state)

    max_steps = config["train"]["max_steps"] or None
    state = train_stage(train_config, dataset, resume=resume, out_dir=out, max_steps=max_steps)
    print(f"finished at epoch {state.epoch}, step {state.step}; checkpoints in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate(Path(args.pred), Path(args.gt),
                      mask_dir=Path(args.masks) if args.masks else None,
                      hole_only=args.hole_only)
    sys.stdout.write(render_report(report))
    if args.strict and report.unpaired:
        print(f"error: {len(report.unpaired)} unpaired files", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_infer(args) -> int:
    from .pipeline import GroundTruthSegmenter, SubprocessSegmenter, inpaint, run_batch

    sp, sg = _load_generators(args)
    out = Path(args.out)
    if args.input_dir:
        names = run_batch(Path(args.input_dir), out, sp, sg,
                          segmenter_command=args.segmenter_cmd.split() if args.segmenter_cmd else None,
                          use_sp_hole=args.sp_hole)
        print(f"inpainted {len(names)} items into {out}")
        return EXIT_OK
    if not (args.image and args.mask):
        raise ValueError("infer needs --image and --mask (or --input-dir)")
    image = data.load_image(Path(args.image))
    mask = data.load_mask_png(Path(args.mask))
    edited = None
    if args.labels:
        labels = data.load_labels(Path(args.labels))
        segmenter = GroundTruthSegmenter(labels)
        if not args.sp_hole:
            edited = labels
    elif args.segmenter_cmd:
        segmenter = SubprocessSegmenter(args.segmenter_cmd.split())
    else:
        raise ValueError("infer needs --labels or --segmenter-cmd to obtain the label map")
    masked = data.apply_hole(image, mask)
    result = inpaint(masked, mask, segmenter, sp, sg, edited_labels=edited)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    data.save_labels_png(result.predicted_labels, out / f"{stem}_labels.png")
    data.save_labels_color_png(result.predicted_labels, out / f"{stem}_labels_color.png")
    data.save_image(result.image, out / f"{stem}_inpainted.png")
    print(f"wrote {stem}_labels.png, {stem}_labels_color.png, {stem}_inpainted.png to {out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .pipeline import ColorPrototypeSegmenter
    from .service import ModelBundle, create_app

    sp, sg = _load_generators(args)
    bundle = ModelBundle(sp=sp, sg=sg, num_categories=sp.config.output_depth,
                         segmenter=ColorPrototypeSegmenter())
    static_dir = args.frontend or None
    if static_dir and not Path(static_dir).is_dir():
        raise OSError(f"frontend directory not found: {static_dir}")
    app = create_app(bundle, ttl_seconds=args.ttl_minutes * 60, static_dir=static_dir)
    print(f"serving on http://{args.host}:{args.port}"
          + (f" (editor at /)" if static_dir else ""))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seg-inpaint",
                                     description="segmentation-guided image inpainting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="remap/resize a dataset or generate a synthetic demo set")
    p.add_argument("--data-root", default="")
    p.add_argument("--out", required=True)
    p.add_argument("--demo", default="", metavar="N_TRAIN[,N_TEST]")
    p.add_argument("--mapping", default="cityscapes", choices=["cityscapes", "identity"])
    p.add_argument("--num-categories", type=int, default=8)
    p.add_argument("--image-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one stage (sp, sg, or joint)")
    p.add_argument("--stage", required=True, choices=["sp", "sg", "joint"])
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--data-root", default="")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--width-scale", type=float, default=None)
    p.add_argument("--resume", default="")
    p.add_argument("--init-sp", default="", help="sp checkpoint to initialize the joint stage")
    p.add_argument("--init-sg", default="", help="sg checkpoint to initialize the joint stage")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute l1/l2/SSIM/PSNR over paired directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--masks", default="")
    p.add_argument("--hole-only", action="store_true")
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero when any file is unpaired")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="inpaint one image or a directory of triples")
    p.add_argument("--sp", required=True, help="checkpoint containing the sp generator")
    p.add_argument("--sg", required=True, help="checkpoint containing the sg generator")
    p.add_argument("--image", default="")
    p.add_argument("--mask", default="")
    p.add_argument("--labels", default="", help="full-frame label map; its in-hole values are "
                                                "used as the edit unless --sp-hole is set")
    p.add_argument("--sp-hole", action="store_true",
                   help="ignore --labels inside the hole; use the network's own completion")
    p.add_argument("--input-dir", default="")
    p.add_argument("--out", required=True)
    p.add_argument("--segmenter-cmd", default="",
                   help="external segmenter command with {image} and {labels} placeholders")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("serve", help="run the interactive editing HTTP service")
    p.add_argument("--sp", required=True)
    p.add_argument("--sg", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ttl-minutes", type=float, default=30.0)
    p.add_argument("--frontend", default="",
                   help="directory with the built browser editor (frontend/), served at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, CheckpointVersionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ARGS
    except (OSError, CheckpointIntegrityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
