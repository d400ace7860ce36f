"""Command-line interface.

Subcommands: render, classify, learn, eval grid, synth, serve.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import kb as kbmod
from . import similarity
from .evalharness import generate_synthetic_dataset, run_grid
from .gateway import BackendConfig, KIND_HTTP, KIND_MOCK
from .learner import LearnConfig, SpectrogramCache, run
from .spectro import StftConfig, compute_spectrogram, load_audio, render_spectrogram


def _backend_from_args(args) -> BackendConfig:
    if args.backend == "mock":
        return BackendConfig(kind=KIND_MOCK)
    return BackendConfig(kind=KIND_HTTP, endpoint_url=args.endpoint,
                         model_name=args.model)


def _add_backend_args(parser):
    parser.add_argument("--backend", choices=["mock", "http"], default="mock")
    parser.add_argument("--endpoint", default="http://127.0.0.1:8000/v1",
                        help="base URL of the OpenAI-compatible endpoint")
    parser.add_argument("--model", default="Qwen2.5-VL-7B-Instruct")


def cmd_render(args) -> int:
    clip = load_audio(args.input)
    cfg = StftConfig(window_len=args.window, hop_len=args.hop)
    matrix = compute_spectrogram(clip, cfg)
    image = render_spectrogram(matrix, args.size, args.size)
    Path(args.out).write_bytes(image.encoding)
    print(f"wrote {args.out} ({image.width}x{image.height}, "
          f"{matrix.freq_bins} bins x {matrix.time_frames} frames)")
    return 0


def cmd_classify(args) -> int:
    if args.text is not None:
        query = args.text
    else:
        query = Path(args.pattern_file).read_text(encoding="utf-8").strip()
    kb = kbmod.load(args.kb)
    if kb.total_patterns() == 0:
        print("knowledge base is empty; seed or learn first", file=sys.stderr)
        return 2
    index = similarity.build_index(kb)
    result = similarity.classify(index, kb, query)
    for score in result.ranked[:args.top]:
        line = f"{score.total:.4f}  {score.species}"
        if args.explain:
            line += (f"  (max {score.max_sim:.4f}, mean {score.mean_sim:.4f}, "
                     f"diversity {score.diversity:.4f})")
        print(line)
    print(f"predicted: {result.predicted}")
    return 0


def cmd_learn(args) -> int:
    from .evalharness import load_manifest

    kb = _load_kb_or_seed(args.kb)
    entries = load_manifest(args.manifest)
    train_map: dict[str, list] = {}
    for entry in entries:
        train_map.setdefault(entry.species, []).append(entry.audio_path)
    cfg = LearnConfig(iterations=args.iterations, samples_per_species=args.k,
                      rng_seed=args.seed, backend=_backend_from_args(args))
    result = run(kb, train_map, cfg, cache=SpectrogramCache())
    kbmod.save(result.kb, args.out)
    if args.report:
        report_doc = {
            "failure": result.failure,
            "iterations": [r.as_dict() for r in result.reports],
        }
        Path(args.report).write_text(json.dumps(report_doc, indent=2) + "\n",
                                     encoding="utf-8")
    for report in result.reports:
        print(f"iteration {report.iteration}: proposed {report.proposed}, "
              f"accepted {report.accepted}, "
              f"rejected quality/novelty {report.rejected_quality}/"
              f"{report.rejected_novelty}, kb size {report.kb_size_after}")
    if result.failure:
        print(f"run aborted: {result.failure}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


def _load_kb_or_seed(path):
    try:
        return kbmod.load(path)
    except (kbmod.KbError, KeyError):
        return kbmod.init_fixed(path)


def cmd_eval_grid(args) -> int:
    summary = run_grid(
        manifest_path=args.manifest,
        seed_kb_path=args.seed_kb,
        backend=_backend_from_args(args),
        systems=args.systems.split(","),
        n_ways=[int(x) for x in args.nway.split(",")],
        samples_per_round=[int(x) for x in args.k.split(",")],
        seeds=[int(x) for x in args.seeds.split(",")],
        iterations=args.iterations,
        out_dir=args.out_dir,
    )
    print(summary.table_text(), end="")
    if args.out_dir:
        print(f"summary written to {args.out_dir}/summary.csv")
    return 0


def cmd_synth(args) -> int:
    manifest = generate_synthetic_dataset(args.species, args.clips, args.seed,
                                          args.out_dir)
    print(f"wrote {manifest} (+ clips/ and seed_kb.json)")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    ui_dir = args.ui_dir
    if ui_dir is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = candidate if candidate.is_dir() else None
    serve(args.kb, args.manifest, _backend_from_args(args), bind=args.bind,
          ui_dir=ui_dir)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="soniclex",
        description="Bioacoustic pattern knowledge base and classifier")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a WAV to a spectrogram PNG")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=1024)
    p.add_argument("--hop", type=int, default=256)
    p.add_argument("--size", type=int, default=512)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("classify", help="classify a pattern text against a KB")
    p.add_argument("pattern_file", nargs="?",
                   help="file containing the pattern text")
    p.add_argument("--text", help="pattern text given inline")
    p.add_argument("--kb", required=True)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--explain", action="store_true")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("learn", help="run progressive knowledge accumulation")
    p.add_argument("--kb", required=True, help="KB or seed JSON to start from")
    p.add_argument("--manifest", required=True)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    _add_backend_args(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("eval", help="evaluation harness")
    eval_sub = p.add_subparsers(dest="eval_command", required=True)
    g = eval_sub.add_parser("grid", help="run the three-system experiment grid")
    g.add_argument("--manifest", required=True)
    g.add_argument("--seed-kb", required=True)
    g.add_argument("--systems", default="vanilla,fixed,progressive")
    g.add_argument("--nway", default="5")
    g.add_argument("--k", default="3")
    g.add_argument("--seeds", default="41,42,43")
    g.add_argument("--iterations", type=int, default=3)
    g.add_argument("--out-dir")
    _add_backend_args(g)
    g.set_defaults(func=cmd_eval_grid)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--species", type=int, default=5)
    p.add_argument("--clips", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="start the curation service")
    p.add_argument("--kb", required=True)
    p.add_argument("--manifest")
    p.add_argument("--bind", default="127.0.0.1:8080")
    p.add_argument("--ui-dir", help="directory with the built web UI")
    _add_backend_args(p)
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "classify" and args.text is None and args.pattern_file is None:
        parser.error("classify needs a pattern file or --text")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
