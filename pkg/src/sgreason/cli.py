"""Command-line interface.

Exit codes: 0 success, 1 operational failure (failed validation, execution
or training error), 2 usage/configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor

from .core import Vocabulary, load_vocabulary
from .datagen import (
    GenSpec,
    default_vocabulary,
    gen_dataset,
    read_dataset,
    write_atomic,
    write_dataset,
)
from .diagnosis import (
    DiagnosisReport,
    NeuralHandle,
    SymbolicHandle,
    build_report,
    emit_report,
    parse_csv_report,
)
from .errors import ExecutionError, SgError
from .exec_neural import ExecutorParams, exec_neural, load_params, save_params
from .exec_symbolic import exec_symbolic
from .scene_graph import PerturbationSpec, one_hot_encode
from .training import TrainConfig, generate_supervision, train

_PERTURB_KINDS = {
    "bg": "background_removal",
    "fg": "foreground_removal",
    "rand": "randomize",
}


def _load_vocab(path: str | None) -> Vocabulary:
    return load_vocabulary(path) if path else default_vocabulary()


def _write_out(path: str | None, text: str) -> None:
    if path:
        write_atomic(path, text)
    else:
        sys.stdout.write(text)


def cmd_gen(args) -> int:
    vocab = _load_vocab(args.vocab)
    spec = GenSpec(
        seed=args.seed,
        num_scenes=args.scenes,
        questions_per_scene=args.questions,
    )
    records = gen_dataset(spec, vocab)
    if args.noise_sd or args.flip_rate:
        for i, record in enumerate(records):
            record.perturb = {
                "noise_sd": args.noise_sd,
                "flip_rate": args.flip_rate,
                "seed": args.seed * 1000003 + i,
            }
    write_dataset(records, args.out, vocab)
    manifest = {
        "spec": dataclasses.asdict(spec),
        "noise_sd": args.noise_sd,
        "flip_rate": args.flip_rate,
        "num_questions": len(records),
        "templates": sorted({r.template for r in records}),
    }
    manifest_path = args.manifest or args.out + ".manifest.json"
    write_atomic(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if args.vocab_out:
        write_atomic(
            args.vocab_out, json.dumps(vocab.to_json_dict(), indent=2, sort_keys=True) + "\n"
        )
    print(f"wrote {len(records)} questions to {args.out}")
    return 0


def cmd_validate(args) -> int:
    vocab = _load_vocab(args.vocab)
    records = read_dataset(args.data, vocab)
    bad = 0
    for record in records:
        try:
            trace = exec_symbolic(record.program, record.graph_gt, vocab)
        except ExecutionError as exc:
            print(f"{record.question_id}: execution failed: {exc}")
            bad += 1
            continue
        if trace.answer != record.answer:
            print(
                f"{record.question_id}: stored answer {record.answer!r} "
                f"!= executed {trace.answer!r}"
            )
            bad += 1
    print(f"validated {len(records)} questions, {bad} inconsistent")
    return 1 if bad else 0


def _exec_one(task):
    record, vocab, mode, params = task
    out = {"question_id": record.question_id, "gt_answer": record.answer}
    try:
        if mode == "symbolic":
            trace = exec_symbolic(record.program, record.graph_gt, vocab)
            out["answer"] = trace.answer
            out["referred"] = [
                sorted(s) if s is not None else None for s in trace.referred_sets()
            ]
            out["grounded"] = sorted(trace.grounded)
        else:
            graph = record.predicted_graph(vocab) or one_hot_encode(record.graph_gt, vocab)
            trace = exec_neural(record.program, graph, vocab, params)
            out["answer"] = trace.answer
            out["referred"] = [
                sorted(s) if s is not None else None for s in trace.selected_sets()
            ]
            out["attention"] = [float(a) for a in trace.final_attention]
        out["error"] = None
    except ExecutionError as exc:
        out.update(answer=None, error=str(exc))
    out["correct"] = out["answer"] == record.answer
    return out


def cmd_exec(args) -> int:
    vocab = _load_vocab(args.vocab)
    records = read_dataset(args.data, vocab)
    params = None
    if args.mode == "neural":
        params = load_params(args.params) if args.params else ExecutorParams()
        params = dataclasses.replace(
            params,
            pointing_threshold=args.threshold,
            relate_reduce=args.relate_reduce or params.relate_reduce,
        )
    tasks = [(r, vocab, args.mode, params) for r in records]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_exec_one, tasks, chunksize=max(1, len(tasks) // (4 * args.jobs))))
    else:
        results = [_exec_one(t) for t in tasks]
    lines = [json.dumps(r, sort_keys=True) for r in results]
    _write_out(args.out, "\n".join(lines) + ("\n" if lines else ""))
    n_ok = sum(1 for r in results if r["correct"])
    print(f"accuracy {100.0 * n_ok / max(1, len(results)):.2f}% ({n_ok}/{len(results)})")
    return 0


def cmd_train(args) -> int:
    vocab = _load_vocab(args.vocab)
    records = read_dataset(args.data, vocab)
    init = load_params(args.params) if args.params else ExecutorParams()
    samples = []
    for record in records:
        graph = record.predicted_graph(vocab) or one_hot_encode(record.graph_gt, vocab)
        sup = generate_supervision(
            record.program, record.graph_gt, graph.boxes, vocab, args.iou
        )
        samples.append((record.program, graph, sup))
    config = TrainConfig(
        learning_rate=args.lr,
        iterations=args.iterations,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    trained, curve = train(init, samples, config, vocab)
    save_params(trained, args.out)
    if args.curve:
        write_atomic(
            args.curve,
            "".join(f"{i},{v!r}\n" for i, v in enumerate(curve)),
        )
    print(f"trained on {len(samples)} questions; final loss {curve[-1]:.4f}")
    return 0


def _make_handle(args, vocab):
    if args.mode == "symbolic":
        return SymbolicHandle(vocab)
    params = load_params(args.params) if args.params else ExecutorParams()
    return NeuralHandle(vocab, params)


def cmd_diagnose(args) -> int:
    vocab = _load_vocab(args.vocab)
    records = read_dataset(args.data, vocab)
    handle = _make_handle(args, vocab)
    specs = [
        PerturbationSpec(_PERTURB_KINDS[p], seed=args.seed, noise_scale=args.noise_scale)
        for p in args.perturb
    ]
    if args.mode == "symbolic" and any(s.kind == "randomize" for s in specs):
        raise SgError("randomize perturbation requires --mode neural")
    report = build_report(records, handle, specs, args.iou, args.jobs)
    _write_out(args.out, emit_report(report, args.format))
    return 0


def cmd_report(args) -> int:
    with open(args.input) as fh:
        text = fh.read()
    if args.input.endswith(".csv"):
        report = parse_csv_report(text)
    else:
        report = DiagnosisReport.from_json_dict(json.loads(text))
    _write_out(args.out, emit_report(report, args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgreason")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--questions", type=int, default=3)
    p.add_argument("--vocab")
    p.add_argument("--vocab-out")
    p.add_argument("--manifest")
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--flip-rate", type=float, default=0.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("validate", help="re-execute a dataset and check answers")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("exec", help="execute programs and emit traces")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab")
    p.add_argument("--mode", choices=("symbolic", "neural"), default="symbolic")
    p.add_argument("--params")
    p.add_argument("--relate-reduce", choices=("max", "softmax_avg"))
    p.add_argument("--threshold", type=float, default=5.0)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_exec)

    p = sub.add_parser("train", help="teacher-forced training of executor parameters")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab")
    p.add_argument("--params", help="initial parameters (default: untrained)")
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="write the loss curve as CSV")
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("diagnose", help="grounding and robustness report")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab")
    p.add_argument("--mode", choices=("symbolic", "neural"), default="symbolic")
    p.add_argument("--params")
    p.add_argument("--perturb", nargs="*", choices=sorted(_PERTURB_KINDS), default=[])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--format", choices=("json", "csv", "markdown"), default="json")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("report", help="re-render a saved report")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("json", "csv", "markdown"), required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
