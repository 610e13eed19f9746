"""Command-line harness: ``bench``, ``gen-corpus`` and ``check-adherence``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .corpus import CorpusError, CorpusRecord, gen_corpus, read_corpus, write_corpus
from .engine import ABLATION_LABELS, ABLATIONS, SYSTEM_PROMPT, DecodeStats, Engine, EngineConfig
from .errors import ToolDraftError
from .model import NgramModel, ScriptedModel, TargetModel
from .retrieval import RetrievalConfig
from .schema import ToolSchema, check_format_adherence, load_tool_docs, render_docs
from .tokenizer import Tokenizer

log = logging.getLogger("tooldraft")

FORMAT_VERSION = 1
_ABLATE_ALIASES = {
    "none": "none", "no-sad": "no-sad", "no-ras": "no-ras", "no-both": "no-both",
    "w/o-sad": "no-sad", "w/o-ras": "no-ras", "w/o-both": "no-both", "all": "all",
}


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_tokenizer(schema: ToolSchema, records: Sequence[CorpusRecord], extra: Sequence[str] = ()) -> Tokenizer:
    texts = [SYSTEM_PROMPT, render_docs(schema), "\nUser: \nAssistant: "]
    texts += [r.query for r in records] + [r.gold for r in records if r.gold] + list(extra)
    return Tokenizer.from_texts(texts)


def build_model(spec: str, engine: Engine, records: Sequence[CorpusRecord], ngram_lines: Sequence[str]) -> TargetModel:
    tok = engine.tokenizer
    if spec == "scripted":
        scripts = {}
        for r in records:
            if r.gold is not None:
                scripts[tuple(engine.context(r.query))] = tok.encode(r.gold) + [tok.eos_id]
        return ScriptedModel(scripts, tok.vocab_size, tok.eos_id)
    if spec.startswith("ngram:"):
        return NgramModel.from_texts(ngram_lines, tok)
    raise ValueError(f"unknown model spec {spec!r} (expected scripted or ngram:PATH)")


def _stats_json(stats: DecodeStats, vanilla_fp: int) -> dict:
    return {
        "mat": round(stats.mat, 6),
        "forward_passes": stats.forward_passes,
        "emitted": stats.emitted_tokens,
        "histogram": {str(k): v for k, v in sorted(stats.acceptance_histogram.items())},
        "per_state": dict(sorted(stats.per_state.items())),
        "per_source": dict(sorted(stats.per_source.items())),
        "speedup_proxy": round(vanilla_fp / stats.forward_passes, 6) if stats.forward_passes else 0.0,
    }


def run_bench(schema_path: str, corpus_path: str, model_spec: str = "scripted", *, mode: str = "greedy",
              seed: int = 0, ablate: str = "none", k: int = 10, suffix_lens=(7, 6, 5),
              cont_lens=(32, 16, 8, 8), budget: int = 64, capacity: int | None = None,
              max_tokens: int = 256, dump_trees: bool = False, out: str | None = None) -> tuple[dict, bool]:
    """Run vanilla plus the selected configurations over a corpus.

    Returns the report and whether every configuration reproduced the vanilla
    output exactly.
    """
    schema = load_tool_docs(schema_path)
    records = read_corpus(corpus_path)
    ngram_lines: list[str] = []
    if model_spec.startswith("ngram:"):
        ngram_lines = [ln for ln in Path(model_spec[6:]).read_text(encoding="utf-8").splitlines() if ln.strip()]
    tokenizer = build_tokenizer(schema, records, ngram_lines)
    engine = Engine(tokenizer, schema)
    model = build_model(model_spec, engine, records, ngram_lines)

    ablate = _ABLATE_ALIASES[ablate]
    names = ["full"] if ablate == "none" else (["full", "no-sad", "no-ras", "no-both"] if ablate == "all" else ["full", ablate])
    names = list(dict.fromkeys(names))
    rcfg = RetrievalConfig(k=k, suffix_lengths=tuple(suffix_lens), continuation_lengths=tuple(cont_lens))

    def cfg(name: str) -> EngineConfig:
        extra = ABLATIONS[name]
        return EngineConfig(retrieval=rcfg, drafting_budget=budget, max_tokens=max_tokens, mode=mode,
                            seed=seed, **extra)

    mode_cfg = EngineConfig(max_tokens=max_tokens, mode=mode, seed=seed)
    vanilla_out = []
    vanilla_stats = DecodeStats()
    for r in records:
        o, st = engine.generate_vanilla(model, r.query, mode_cfg)
        vanilla_out.append(o)
        vanilla_stats = vanilla_stats.merge(st)

    # records whose tool already appeared earlier in the corpus
    seen_tools: set[str] = set()
    repeated = []
    for r in records:
        tool = _gold_tool(r.gold)
        repeated.append(tool is not None and tool in seen_tools)
        if tool is not None:
            seen_tools.add(tool)

    report: dict = {"format_version": FORMAT_VERSION, "model": model_spec, "mode": mode, "seed": seed,
                    "records": len(records), "configs": {}, "exact_match": {}, "repeated_subset": {}}
    report["configs"]["vanilla"] = _stats_json(vanilla_stats, vanilla_stats.forward_passes)
    lossless = True
    step_lines: list[str] = []
    tree_lines: list[str] = []
    for name in names:
        label = ABLATION_LABELS[name]
        store = engine.new_store(capacity)
        total, rep_total = DecodeStats(), DecodeStats()
        rep_vanilla_fp = 0
        matches = 0
        for i, r in enumerate(records):
            def on_step(record, tree, _i=i):
                step_lines.append(json.dumps({"config": label, "record": _i, **record}, sort_keys=True))
                if dump_trees and tree is not None:
                    tree_lines.append(f"# {label} record {_i} step {record['step']}\n{tree.dump(tokenizer)}")
            o, st = engine.generate(model, r.query, store, cfg(name), on_step=on_step)
            total = total.merge(st)
            if repeated[i]:
                rep_total = rep_total.merge(st)
                rep_vanilla_fp += len(vanilla_out[i])
            if o == vanilla_out[i]:
                matches += 1
            else:
                lossless = False
                log.error("%s: output differs from vanilla on record %d", label, i)
        report["configs"][label] = _stats_json(total, vanilla_stats.forward_passes)
        report["exact_match"][label] = matches / len(records) if records else 1.0
        if rep_total.steps:
            report["repeated_subset"][label] = _stats_json(rep_total, rep_vanilla_fp)

    if out is not None:
        base = Path(out)
        base.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        base.with_suffix(".txt").write_text(render_table(report), encoding="utf-8")
        base.with_suffix(".steps.jsonl").write_text("\n".join(step_lines) + "\n", encoding="utf-8")
        if dump_trees:
            base.with_suffix(".trees.txt").write_text("\n\n".join(tree_lines) + "\n", encoding="utf-8")
    return report, lossless


def _gold_tool(gold: str | None) -> str | None:
    if not gold:
        return None
    start = gold.find("{")
    try:
        obj, _ = json.JSONDecoder().raw_decode(gold, start)
        return obj.get("name") if isinstance(obj, dict) else None
    except (ValueError, AttributeError):
        return None


def render_table(report: dict) -> str:
    rows = [f"{'config':<10} {'#MAT':>8} {'forward_passes':>15} {'speedup_proxy':>14}"]
    for name, c in report["configs"].items():
        rows.append(f"{name:<10} {c['mat']:>8.3f} {c['forward_passes']:>15d} {c['speedup_proxy']:>14.3f}")
    return "\n".join(rows) + "\n"


def check_adherence_file(path: str | Path) -> dict:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    results = []
    for i, line in enumerate(lines, 1):
        rep = check_format_adherence(line)
        results.append({"line": i, "adherent": rep.adherent, "violation_kind": rep.violation_kind,
                        "location": rep.location})
    n_ok = sum(r["adherent"] for r in results)
    return {"total": len(results), "adherent": n_ok, "rate": n_ok / len(results) if results else 1.0,
            "results": results}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tooldraft", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="compare speculative configurations against vanilla decoding")
    b.add_argument("--schema", required=True)
    b.add_argument("--corpus", required=True)
    b.add_argument("--model", default="scripted", help="scripted or ngram:PATH")
    b.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--ablate", choices=sorted(_ABLATE_ALIASES), default="none")
    b.add_argument("--k", type=int, default=10)
    b.add_argument("--suffix-lens", type=_int_list, default=(7, 6, 5))
    b.add_argument("--cont-lens", type=_int_list, default=(32, 16, 8, 8))
    b.add_argument("--budget", type=int, default=64)
    b.add_argument("--capacity", type=int, default=None)
    b.add_argument("--max-tokens", type=int, default=256)
    b.add_argument("--dump-trees", action="store_true")
    b.add_argument("--out", default="report.json")

    g = sub.add_parser("gen-corpus", help="write a synthetic repeated-call corpus and its schema")
    g.add_argument("--tools", type=int, default=5)
    g.add_argument("--reps", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="corpus.jsonl")
    g.add_argument("--schema-out", default="schema.json")

    c = sub.add_parser("check-adherence", help="strict format check, one output per line")
    c.add_argument("path")
    c.add_argument("--json", action="store_true", help="print the full per-line report as JSON")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "bench":
            mode = "sampled" if args.mode == "sample" else "greedy"
            report, lossless = run_bench(
                args.schema, args.corpus, args.model, mode=mode, seed=args.seed, ablate=args.ablate,
                k=args.k, suffix_lens=args.suffix_lens, cont_lens=args.cont_lens, budget=args.budget,
                capacity=args.capacity, max_tokens=args.max_tokens, dump_trees=args.dump_trees, out=args.out,
            )
            print(render_table(report), end="")
            for label, rate in report["exact_match"].items():
                print(f"{label}: exact match with vanilla {rate:.1%}")
            return 0 if lossless else 1
        if args.command == "gen-corpus":
            doc, records = gen_corpus(args.tools, args.reps, args.seed)
            write_corpus(records, args.out)
            Path(args.schema_out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            print(f"wrote {len(records)} records to {args.out} and schema to {args.schema_out}")
            return 0
        if args.command == "check-adherence":
            summary = check_adherence_file(args.path)
            if args.json:
                print(json.dumps(summary, indent=2))
            else:
                for r in summary["results"]:
                    if not r["adherent"]:
                        print(f"line {r['line']}: {r['violation_kind']} at offset {r['location']}")
                print(f"adherence rate: {summary['rate']:.4f} ({summary['adherent']}/{summary['total']})")
            return 0
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except (ToolDraftError, CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
