"""Run the whole pipeline end to end on a small synthetic world.

Reads a bundle config with one section per stage (configs/demo.json by
default), writes per-stage configs and artifacts under --out, and chains
the CLI subcommands in-process:

    synth -> extract -> train-cls -> train-seg -> eval -> tsne -> ribbon

Usage:
    python3 scripts/run_demo.py --out demo_out [--config configs/demo.json] [--seed N]
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from boldts.cli import main as cli_main  # noqa: E402

STAGES = ("synth", "extract", "train-cls", "train-seg", "eval", "tsne", "ribbon")


def run_stage(name: str, cfg: dict, seed: int, out_root: Path) -> Path:
    stage_dir = out_root / name.replace("-", "_")
    cfg_path = out_root / f"{name}.config.json"
    cfg_path.write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    argv = [name, "--config", str(cfg_path), "--seed", str(seed),
            "--out", str(stage_dir)]
    print(f"$ boldts {' '.join(argv[1:])}")
    code = cli_main(argv)
    if code != 0:
        sys.exit(code)
    return stage_dir


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/demo.json",
                        help="bundle config with one section per stage")
    parser.add_argument("--out", default="demo_out", help="output root directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the bundle seed")
    args = parser.parse_args()

    bundle = json.loads(Path(args.config).read_text())
    unknown = sorted(set(bundle) - set(STAGES) - {"seed"})
    if unknown:
        sys.exit(f"unknown bundle section(s): {', '.join(unknown)}")
    seed = args.seed if args.seed is not None else int(bundle.get("seed", 0))
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)

    synth_dir = run_stage("synth", bundle.get("synth", {}), seed, out_root)

    extract_cfg = {"in_dir": str(synth_dir), **bundle.get("extract", {})}
    extract_dir = run_stage("extract", extract_cfg, seed, out_root)

    cls_cfg = {"segments": str(extract_dir / "segments.jsonl"),
               **bundle.get("train-cls", {})}
    cls_dir = run_stage("train-cls", cls_cfg, seed, out_root)

    seg_cfg = {"trials": str(extract_dir / "trials.jsonl"),
               **bundle.get("train-seg", {})}
    seg_dir = run_stage("train-seg", seg_cfg, seed, out_root)

    eval_cfg = {"reports": str(cls_dir / "fold_reports.jsonl"),
                "predictions": str(seg_dir / "predictions.jsonl")}
    eval_dir = run_stage("eval", eval_cfg, seed, out_root)

    tsne_cfg = {"segments": str(extract_dir / "segments.jsonl"),
                **bundle.get("tsne", {})}
    if (cls_dir / "cls_model.meta.json").exists():
        tsne_cfg.setdefault("model", str(cls_dir / "cls_model"))
    tsne_dir = run_stage("tsne", tsne_cfg, seed, out_root)

    ribbon_cfg = {"predictions": str(seg_dir / "predictions.jsonl"),
                  **bundle.get("ribbon", {})}
    ribbon_dir = run_stage("ribbon", ribbon_cfg, seed, out_root)

    result = json.loads((eval_dir / "eval.json").read_text())
    print()
    print(f"classification mean accuracy: {result['mean_accuracy']:.4f}")
    seg = result.get("segmentation", {})
    if seg:
        dice = ", ".join(f"class {c}: {v:.3f}" for c, v in sorted(seg["mean_dice"].items()))
        print(f"segmentation dice by class:   {dice}")
        print(f"per-timestamp accuracy:       {seg['timestamp_accuracy']:.4f}")
    print(f"figures: {tsne_dir / 'scatter.svg'}, {ribbon_dir / 'ribbon.svg'}")


if __name__ == "__main__":
    main()
