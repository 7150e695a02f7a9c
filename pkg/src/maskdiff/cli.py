"""Command line harness: seeded sampling runs, sampler comparisons, Gumbel
truncation reports and cost benchmarks.

Every output file starts with a provenance record (tool, version, seed,
config hash). Outputs are byte-identical across re-runs with the same seed,
except measured wall-clock timings, which are written to ``timing.*`` files.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from ._validation import check_prob_vector, spawn_generators
from .core import UniformPredictor
from .gumbel import (M_BINARY32, M_BINARY64, PrecisionMode, truncated_argmax_counts,
                     truncated_argmax_probs)
from .metrics import (cost_model, fit_cost_model, generative_perplexity, sequence_entropy,
                      speedup_ratio)
from .oracle import (MAX_ENUM_STATES, TOY_KINDS, ToyDistribution, make_toy,
                     optimal_predictor, order_enum_distribution, skewed_product_predictor,
                     total_variation)
from .samplers import METHODS, SamplerConfig, sample

log = logging.getLogger("maskdiff")

TOOL = "maskdiff"
PREDICTOR_KINDS = TOY_KINDS + ("skewed", "uniform")
GUMBEL_PRESETS = {
    "two-class": [0.2, 0.8],
    "uniform4": [0.25, 0.25, 0.25, 0.25],
    "skewed8": [0.6, 0.2, 0.1, 0.05, 0.03, 0.01, 0.007, 0.003],
}
TRACE_COLUMNS = ("chain", "chunk", "chunk_nfe", "chunk_ncs", "unmask_order", "transition_times")
COMPARE_COLUMNS = ("config", "method", "steps", "precision", "temperature", "samples",
                   "tv_oracle", "tv_first", "entropy_mean", "gen_ppl", "gen_ppl_clipped",
                   "nfe_mean", "ncs_mean")
BENCH_COLUMNS = ("method", "N", "L", "vocab", "nfe", "ncs")
TIMING_COLUMNS = ("method", "N", "nfe", "ncs", "seconds")


class UsageError(Exception):
    pass


# --- config, provenance and output helpers ---

def read_config_file(path):
    """JSON object, or ``key=value`` lines (``#`` comments, values parsed as JSON if possible)."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return json.loads(text)
    out = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"bad config line {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key.replace("-", "_")] = json.loads(value)
        except json.JSONDecodeError:
            out[key.replace("-", "_")] = value
    return out


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance(args, cfg):
    return {"tool": TOOL, "version": __version__, "seed": args.seed, "config_hash": config_hash(cfg)}


def _csv_text(columns, rows, prov):
    buf = io.StringIO()
    buf.write("# " + " ".join(f"{k}={v}" for k, v in prov.items()) + "\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _write(out_dir, name, text):
    with open(os.path.join(out_dir, name), "w", newline="") as fh:
        fh.write(text)


def _json_text(obj):
    return json.dumps(obj, indent=2) + "\n"


def _fmt(x):
    return repr(float(x))


# --- predictors and sampling ---

def build_predictor(toy, L, vocab, seed):
    """``(predictor, toy table or None)`` for a bundled kind or a JSON table path."""
    if toy in TOY_KINDS:
        table = make_toy(toy, L, vocab, seed)
        return optimal_predictor(table), table
    if toy == "skewed":
        return skewed_product_predictor(L, vocab), None
    if toy == "uniform":
        return UniformPredictor(vocab, L), None
    if os.path.exists(str(toy)):
        table = ToyDistribution.load(toy)
        return optimal_predictor(table), table
    raise UsageError(f"unknown toy {toy!r}; use one of {', '.join(PREDICTOR_KINDS)} or a JSON file")


def run_sampler(cfg, predictor, n, seed, threads):
    """Draw ``n`` sequences in chunks of ``cfg.batch`` chains, one spawned stream per chain.

    Chunks may run on a thread pool; results are assembled in chunk order so
    the output depends only on the seed.
    """
    sizes = [cfg.batch] * (n // cfg.batch) + ([n % cfg.batch] if n % cfg.batch else [])
    children = np.random.SeedSequence(seed).spawn(len(sizes))

    def job(args):
        size, child = args
        c = SamplerConfig(cfg.method, cfg.steps, cfg.precision, cfg.temperature, size, seed, cfg.grid)
        return sample(c, predictor, rng=spawn_generators(child, size))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(job, zip(sizes, children)))
    return results


def _sampler_config(args, method=None, steps=None, temperature=None, precision=None):
    try:
        return SamplerConfig(
            method=method or args.method,
            steps=int(steps or args.steps),
            precision=PrecisionMode.parse(precision or args.precision),
            temperature=float(temperature or args.temperature),
            batch=int(args.batch),
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _resolved(args, keys):
    return {k: getattr(args, k) for k in keys}


# --- commands ---

SAMPLE_KEYS = ("method", "steps", "toy", "L", "vocab", "seed", "n", "precision", "temperature",
               "batch")


def cmd_sample(args):
    cfg = _sampler_config(args)
    predictor, _ = build_predictor(args.toy, args.L, args.vocab, args.seed)
    prov = provenance(args, _resolved(args, SAMPLE_KEYS))
    t0 = time.perf_counter()
    results = run_sampler(cfg, predictor, args.n, args.seed, args.threads)
    wall = time.perf_counter() - t0

    seq_lines = [json.dumps(dict(prov, config=_resolved(args, SAMPLE_KEYS)))]
    trace_rows = []
    chain = 0
    for chunk, (X, trace) in enumerate(results):
        for c, row in enumerate(X):
            seq_lines.append(json.dumps({"chain": chain, "tokens": row.tolist()}))
            trace_rows.append({
                "chain": chain, "chunk": chunk, "chunk_nfe": trace.nfe, "chunk_ncs": trace.ncs,
                "unmask_order": " ".join(map(str, trace.unmask_order[c])),
                "transition_times": " ".join(_fmt(t) for t in trace.transition_times[c]),
            })
            chain += 1
    X = np.concatenate([r[0] for r in results])
    summary = dict(prov)
    summary.update({
        "config": _resolved(args, SAMPLE_KEYS),
        "samples": int(X.shape[0]),
        "nfe": int(max(r[1].nfe for r in results)),
        "nfe_per_chunk": [int(r[1].nfe) for r in results],
        "ncs": int(sum(r[1].ncs for r in results)),
        "ncs_per_chain": float(sum(r[1].ncs for r in results) / X.shape[0]),
        "entropy_mean": float(np.mean(sequence_entropy(X, predictor.vocab_size))),
        "wall_time_file": "timing.json",
    })
    os.makedirs(args.out_dir, exist_ok=True)
    _write(args.out_dir, "sequences.jsonl", "\n".join(seq_lines) + "\n")
    _write(args.out_dir, "trace.csv", _csv_text(TRACE_COLUMNS, trace_rows, prov))
    _write(args.out_dir, "summary.json", _json_text(summary))
    _write(args.out_dir, "timing.json", _json_text(dict(prov, wall_seconds=wall)))
    return 0


def parse_config_spec(text, args):
    """``method[:key=value,...]`` with keys steps, temperature, precision."""
    method, _, rest = text.partition(":")
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r} in config {text!r}")
    opts = {}
    for item in filter(None, rest.split(",")):
        key, _, value = item.partition("=")
        if key not in ("steps", "temperature", "precision"):
            raise UsageError(f"unknown config key {key!r} in {text!r}")
        opts[key] = value
    return _sampler_config(args, method=method, steps=opts.get("steps"),
                           temperature=opts.get("temperature"), precision=opts.get("precision"))


def _histogram(X):
    keys, counts = np.unique(X, axis=0, return_counts=True)
    return {k.tobytes(): c / X.shape[0] for k, c in zip(keys, counts)}


def _tv_hist(a, b):
    # sorted keys: a fixed summation order keeps the float result reproducible
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in sorted(set(a) | set(b)))


def cmd_compare(args):
    specs = args.configs
    if not specs or len(specs) < 2:
        raise UsageError("compare needs at least two --configs entries")
    configs = [parse_config_spec(s, args) for s in specs]
    predictor, table = build_predictor(args.toy, args.L, args.vocab, args.seed)
    keys = SAMPLE_KEYS + ("configs",)
    prov = provenance(args, _resolved(args, keys))
    oracle = None
    if predictor.vocab_size ** predictor.length <= MAX_ENUM_STATES and not predictor.time_dependent:
        oracle = order_enum_distribution(predictor)
    else:
        log.warning("oracle infeasible for this size; reporting pairwise empirical TV only")
    rows = []
    first_hist = None
    children = np.random.SeedSequence(args.seed).spawn(len(configs))
    for spec, cfg, child in zip(specs, configs, children):
        seed = int(child.generate_state(1)[0])
        results = run_sampler(cfg, predictor, args.n, seed, args.threads)
        X = np.concatenate([r[0] for r in results])
        hist = _histogram(X)
        if first_hist is None:
            first_hist = hist
        row = {
            "config": spec, "method": cfg.method, "steps": cfg.steps,
            "precision": cfg.precision.label, "temperature": _fmt(cfg.temperature),
            "samples": X.shape[0], "tv_first": _fmt(_tv_hist(hist, first_hist)),
            "entropy_mean": _fmt(np.mean(sequence_entropy(X, predictor.vocab_size))),
            "nfe_mean": _fmt(np.mean([r[1].nfe for r in results])),
            "ncs_mean": _fmt(np.mean([r[1].ncs for r in results])),
            "tv_oracle": "", "gen_ppl": "", "gen_ppl_clipped": "",
        }
        if oracle is not None:
            mass = np.zeros_like(oracle.mass)
            enc = X @ (predictor.vocab_size ** np.arange(X.shape[1] - 1, -1, -1))
            np.add.at(mass, enc, 1.0 / X.shape[0])
            row["tv_oracle"] = _fmt(total_variation(mass, oracle.mass))
        if table is not None:
            g = generative_perplexity(X, table)
            row["gen_ppl"], row["gen_ppl_clipped"] = _fmt(g.value), g.clipped
        rows.append(row)
    os.makedirs(args.out_dir, exist_ok=True)
    _write(args.out_dir, "compare.csv", _csv_text(COMPARE_COLUMNS, rows, prov))
    _write(args.out_dir, "compare.json", _json_text(dict(prov, rows=rows)))
    return 0


def _parse_probs(args):
    if args.probs_file:
        with open(args.probs_file) as fh:
            text = fh.read()
        values = json.loads(text) if text.lstrip().startswith("[") else text.replace(",", " ").split()
    elif args.probs:
        values = args.probs.split(",")
    else:
        values = GUMBEL_PRESETS[args.preset]
    try:
        return check_prob_vector([float(v) for v in values], atol=1e-9)
    except ValueError as exc:
        raise UsageError(f"invalid probabilities: {exc}") from exc


def cmd_gumbel_analyze(args):
    table1 = {"binary32": M_BINARY32, "binary64": M_BINARY64}
    if args.table1:
        print(f"binary32 M = {M_BINARY32:.4f}")
        print(f"binary64 M = {M_BINARY64:.4f}")
    p = _parse_probs(args)
    Ms = [float(x) for x in args.M.split(",")] if args.M else [0.0, 1.0, 5.0, M_BINARY32, M_BINARY64]
    cfg = {"probs": p.tolist(), "M": Ms, "mc_draws": args.mc_draws}
    prov = provenance(args, cfg)
    seeds = np.random.SeedSequence(args.seed).generate_state(len(Ms))
    reports = []
    for M, s in zip(Ms, seeds):
        rep = truncated_argmax_probs(p, M).to_dict()
        if args.mc_draws > 0:
            counts = truncated_argmax_counts(p, M, args.mc_draws, int(s))
            freq = counts / args.mc_draws
            shifted = np.asarray(rep["shifted"])
            sigma = np.sqrt(np.maximum(shifted * (1 - shifted), 1e-300) / args.mc_draws)
            rep["mc_frequency"] = freq.tolist()
            rep["mc_max_sigma"] = float(np.max(np.abs(freq - shifted) / sigma))
        reports.append(rep)
    out = dict(prov)
    out.update({"table1": table1, "uniform_grid": "u = k * 2**-24 (binary32), native (binary64)",
                "reports": reports})
    os.makedirs(args.out_dir, exist_ok=True)
    _write(args.out_dir, "gumbel.json", _json_text(out))
    return 0


def cmd_bench(args):
    grid = [int(x) for x in args.grid.split(",")]
    methods = args.methods.split(",")
    for mth in methods:
        if mth not in METHODS:
            raise UsageError(f"unknown method {mth!r}")
    cfg = {"grid": grid, "methods": methods, "L": args.L, "vocab": args.vocab,
           "synthetic": args.synthetic, "seed": args.seed}
    prov = provenance(args, cfg)
    predictor = UniformPredictor(args.vocab, args.L)
    rows, timing = [], []
    rng = np.random.default_rng(args.seed)
    true_t1, true_t2 = 1e-3, 2e-8
    for mth in methods:
        for N in grid:
            c = SamplerConfig(mth, N, batch=1, seed=args.seed)
            t0 = time.perf_counter()
            _, trace = sample(c, predictor, rng=spawn_generators(args.seed, 1))
            seconds = time.perf_counter() - t0
            if args.synthetic:
                seconds = cost_model(trace.nfe, trace.ncs, true_t1, true_t2) * (
                    1.0 + 0.02 * rng.standard_normal())
            rows.append({"method": mth, "N": N, "L": args.L, "vocab": args.vocab,
                         "nfe": trace.nfe, "ncs": trace.ncs})
            timing.append({"method": mth, "N": N, "nfe": trace.nfe, "ncs": trace.ncs,
                           "seconds": _fmt(seconds)})
    t1, t2, r2 = fit_cost_model([r["nfe"] for r in timing], [r["ncs"] for r in timing],
                                [float(r["seconds"]) for r in timing])
    lv_t2 = args.L * args.vocab * t2
    predicted = {str(N): speedup_ratio(N, args.L, t1, lv_t2) for N in grid}
    measured = {}
    by = {(r["method"], r["N"]): float(r["seconds"]) for r in timing}
    if "ancestral-cached" in methods and "fhs" in methods:
        measured = {str(N): by[("ancestral-cached", N)] / by[("fhs", N)] for N in grid}
    os.makedirs(args.out_dir, exist_ok=True)
    _write(args.out_dir, "bench.csv", _csv_text(BENCH_COLUMNS, rows, prov))
    _write(args.out_dir, "timing.csv", _csv_text(TIMING_COLUMNS, timing, prov))
    _write(args.out_dir, "timing.json", _json_text(dict(
        prov, t1=t1, t2=t2, r2=r2, predicted_speedup=predicted, measured_speedup=measured,
        synthetic=bool(args.synthetic))))
    return 0


# --- argument parsing ---

def _common(p):
    p.add_argument("--config", help="JSON or key=value file; explicit flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for independent chunks (default: all cores)")


def _sampling(p):
    p.add_argument("--method", choices=METHODS, default="fhs")
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--toy", default="markov",
                   help=f"{', '.join(PREDICTOR_KINDS)} or a JSON table {{\"L\",\"m\",\"probs\"}}")
    p.add_argument("--L", type=int, default=3)
    p.add_argument("--vocab", type=int, default=3)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--precision", default="f64", help="f64, f32emu or truncM=<x>")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=256, help="chains per sampler batch")


def build_parser():
    parser = argparse.ArgumentParser(prog=TOOL, description="Masked diffusion sampling toolkit.")
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="run one sampler",
                       description="Writes sequences.jsonl (header line, then one chain per "
                                   "line), trace.csv (columns: " + ", ".join(TRACE_COLUMNS) +
                                   "), summary.json and timing.json (wall time, not reproducible).")
    _common(p)
    _sampling(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("compare", help="compare sampler configs against the exact oracle",
                       description="Writes compare.csv (columns: " + ", ".join(COMPARE_COLUMNS) +
                                   ") and compare.json.")
    _common(p)
    _sampling(p)
    p.add_argument("--configs", nargs="+",
                   help="method[:steps=N,temperature=T,precision=P] entries, at least two")
    p.set_defaults(func=cmd_compare, n=20000)

    p = sub.add_parser("gumbel-analyze", help="truncated-Gumbel shifted probabilities",
                       description="Writes gumbel.json with closed-form and Monte-Carlo columns.")
    _common(p)
    p.add_argument("--probs", help="comma separated probability vector")
    p.add_argument("--probs-file", help="file with a JSON list or whitespace separated numbers")
    p.add_argument("--preset", choices=sorted(GUMBEL_PRESETS), default="two-class")
    p.add_argument("--M", help="comma separated truncation levels")
    p.add_argument("--mc-draws", type=int, default=1_000_000)
    p.add_argument("--table1", action="store_true", help="print the binary32/binary64 maxima")
    p.set_defaults(func=cmd_gumbel_analyze)

    p = sub.add_parser("bench", help="time samplers and fit the NFE/NCS cost model",
                       description="Writes bench.csv (columns: " + ", ".join(BENCH_COLUMNS) +
                                   "), timing.csv (" + ", ".join(TIMING_COLUMNS) +
                                   ") and timing.json. --synthetic replaces wall time with "
                                   "seeded cost-model timings.")
    _common(p)
    p.add_argument("--grid", default="100,1000,10000")
    p.add_argument("--methods", default="ancestral,ancestral-cached,fhs")
    p.add_argument("--L", type=int, default=64)
    p.add_argument("--vocab", type=int, default=32)
    p.add_argument("--synthetic", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            file_cfg = read_config_file(args.config)
        except (OSError, ValueError, UsageError) as exc:
            parser.error(f"cannot read config: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(file_cfg) - known
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        sub.set_defaults(**file_cfg)
        args = parser.parse_args(argv)
    return parser, args


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser, args = parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
