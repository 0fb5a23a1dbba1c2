"""Reproducible experiment harness.

Every random choice in an experiment draws from a stream derived as
SeedSequence(master, spawn_key=(trial, stream_index)), so trials are
independent, re-runnable in any order, and stable under parallel
execution. Experiments are described by a flat JSON config, run to a list
of per-trial records plus a summary, and written as JSONL (one record per
line), CSV (same records, flat columns), and a summary JSON.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import operator
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack import (
    FixedQueryAnalyst,
    InfoRoundAnalyst,
    build_block_instance,
    build_hard_instance,
    calibrated_attack_constant,
    instance_shape,
    run_score_attack,
    run_simple_attack,
)
from .bounds import (
    accuracy_noise_scale,
    all_queries_good,
    breaking_rounds_details,
    divergence_diagnostics,
    max_accurate_rounds,
    max_accurate_rounds_details,
    run_llr_experiment,
    score_attack_rounds,
    transcript_accurate,
)
from .core import FiniteDistribution, Query, Sample
from .mechanisms import MechanismKind, MechanismState, NoiseSpec, run_interaction

STREAMS = (
    "sample_draw",
    "mech_noise_real",
    "mech_noise_oracle",
    "attack_bernoulli",
    "attack_p",
)

EXPERIMENT_KINDS = (
    "attack",
    "simple_attack",
    "positive_accuracy",
    "coupling",
    "llr",
    "divergence",
    "bounds_table",
)

_TRIAL_KINDS = ("attack", "simple_attack", "positive_accuracy", "coupling")


def derive_seedseq(master: int, trial: int, stream: str) -> np.random.SeedSequence:
    """Seed for one named stream of one trial under one master seed."""
    try:
        index = STREAMS.index(stream)
    except ValueError:
        raise ValueError(f"unknown stream {stream!r}; expected one of {STREAMS}") from None
    return np.random.SeedSequence(entropy=master, spawn_key=(trial, index))


def derive_rng(master: int, trial: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(derive_seedseq(master, trial, stream))


def derive_entropy(master: int, trial: int, stream: str) -> int:
    """256-bit integer seed, for mechanisms that key per-round streams."""
    words = derive_seedseq(master, trial, stream).generate_state(4, np.uint64)
    return int.from_bytes(words.tobytes(), "little")


@dataclass
class ExperimentConfig:
    kind: str
    trials: int = 1
    seed: int = 0
    params: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    out: str | None = None
    threads: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {EXPERIMENT_KINDS}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if not isinstance(self.params, dict):
            raise ValueError("params must be a JSON object")
        if not isinstance(self.assertions, list):
            raise ValueError("assertions must be a list")


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ValueError(f"unknown config keys: {unknown}")
    return ExperimentConfig(**raw)


@dataclass
class ExperimentResult:
    kind: str
    records: list[dict]
    summary: dict


# --- shared builders ------------------------------------------------------------


def _noise_from_params(params: dict, *, scale_default: float = 0.1, grid_default: float = 2.0**-20) -> NoiseSpec:
    return NoiseSpec(
        family=params.get("noise_family", "laplace"),
        scale=float(params.get("noise_scale", scale_default)),
        clip_lo=float(params.get("clip_lo", -0.5)),
        clip_hi=float(params.get("clip_hi", 1.5)),
        grid_step=float(params.get("grid_step", grid_default)),
        tail_tolerance=float(params.get("tail_tolerance", 0.05)),
    )


def _mechanism(
    kind_name: str,
    params: dict,
    noise: NoiseSpec,
    *,
    sample: Sample | None,
    distribution: FiniteDistribution | None,
    master: int,
    trial: int,
) -> MechanismState:
    if kind_name == "real":
        return MechanismState(
            MechanismKind.real(),
            noise,
            sample=sample,
            real_rng=derive_rng(master, trial, "mech_noise_real"),
        )
    if kind_name == "oracle":
        return MechanismState(
            MechanismKind.oracle(),
            noise,
            distribution=distribution,
            oracle_seed=derive_entropy(master, trial, "mech_noise_oracle"),
        )
    if kind_name == "hybrid":
        eps_switch = params.get("epsilon_switch")
        if eps_switch is None:
            raise ValueError("hybrid mechanism requires an epsilon_switch parameter")
        return MechanismState(
            MechanismKind.hybrid(float(eps_switch)),
            noise,
            sample=sample,
            distribution=distribution,
            real_rng=derive_rng(master, trial, "mech_noise_real"),
            oracle_seed=derive_entropy(master, trial, "mech_noise_oracle"),
        )
    raise ValueError(f"unknown mechanism {kind_name!r}; expected real, oracle, or hybrid")


def _two_sample_instance(n: int, ones: int) -> tuple[Sample, Sample, FiniteDistribution]:
    """Two equally likely samples over elements {0, 1}.

    The first is all zeros; the second holds ``ones`` copies of element 1.
    The indicator query of element 1 then has true mean ones/(2n) and
    empirical mean ones/n on the mixed sample, an exact gap of ones/(2n).
    """
    if not (0 < ones <= n):
        raise ValueError("ones must lie in 1..n")
    zeros = Sample((0,) * n)
    mixed = Sample((1,) * ones + (0,) * (n - ones))
    dist = FiniteDistribution([zeros, mixed], np.array([0.5, 0.5]))
    return zeros, mixed, dist


def _require(params: dict, keys: tuple[str, ...], kind: str) -> None:
    missing = [key for key in keys if key not in params]
    if missing:
        raise ValueError(f"{kind} experiment needs params {missing}")


# --- per-trial runners ----------------------------------------------------------


def _attack_trial(params: dict, master: int, trial: int) -> dict:
    inst = build_hard_instance(float(params["eps"]), float(params["gamma"]), int(params["n"]))
    slot = int(derive_rng(master, trial, "sample_draw").integers(inst.support_size))
    sample = inst.make_sample(slot)
    noise = _noise_from_params(params)
    mech_name = params.get("mechanism", "real")
    dist = inst.distribution if mech_name == "hybrid" else None
    mech = _mechanism(
        mech_name, params, noise, sample=sample, distribution=dist, master=master, trial=trial
    )
    result = run_score_attack(
        inst,
        mech,
        int(params["k"]),
        rng_p=derive_rng(master, trial, "attack_p"),
        rng_table=derive_rng(master, trial, "attack_bernoulli"),
    )
    record = {
        "trial": trial,
        "j_s": result.true_index,
        "j_star": result.guess_index,
        "success": bool(result.success),
        "final_deviation": result.final_deviation,
        "sample_deviation": result.sample_deviation,
    }
    if mech_name == "hybrid":
        record["switched"] = mech.switched
        record["switch_round"] = -1 if mech.switch_round is None else mech.switch_round
    return record


def _simple_attack_trial(params: dict, master: int, trial: int) -> dict:
    gamma = float(params["gamma"])
    n = int(params["n"])
    inst = build_block_instance(gamma, n)
    held = int(derive_rng(master, trial, "sample_draw").integers(inst.num_candidates))
    sample = inst.distribution.samples[held]
    noise = _noise_from_params(params)
    mech = _mechanism(
        params.get("mechanism", "real"),
        params,
        noise,
        sample=sample,
        distribution=None,
        master=master,
        trial=trial,
    )
    result = run_simple_attack(gamma, n, mech)
    return {
        "trial": trial,
        "held_block": held,
        "breaking_query_index": result.breaking_query_index,
        "identified": result.breaking_query_index == held,
        "worst_deviation": result.worst_deviation,
    }


def _positive_trial(params: dict, master: int, trial: int) -> dict:
    k = int(params["k"])
    if k == 0:
        return {
            "trial": trial,
            "rounds": 0,
            "accurate": True,
            "queries_good": True,
            "switched": False,
            "switch_round": -1,
        }
    eps = float(params["eps"])
    inst = build_hard_instance(eps, float(params["gamma"]), int(params["n"]))
    slot = int(derive_rng(master, trial, "sample_draw").integers(inst.support_size))
    sample = inst.make_sample(slot)
    noise = _noise_from_params(params)
    hybrid_params = {"epsilon_switch": params.get("epsilon_switch", eps)}
    mech = _mechanism(
        "hybrid",
        hybrid_params,
        noise,
        sample=sample,
        distribution=inst.distribution,
        master=master,
        trial=trial,
    )
    analyst = InfoRoundAnalyst(
        inst,
        derive_rng(master, trial, "attack_p"),
        derive_rng(master, trial, "attack_bernoulli"),
    )
    transcript = run_interaction(analyst, mech, k)
    return {
        "trial": trial,
        "rounds": k,
        "accurate": transcript_accurate(transcript, inst.distribution, float(params["alpha"])),
        "queries_good": all_queries_good(transcript.queries, sample, inst.distribution, eps),
        "switched": mech.switched,
        "switch_round": -1 if mech.switch_round is None else mech.switch_round,
    }


def _coupling_trial(params: dict, master: int, trial: int) -> dict:
    n = int(params.get("n", 8))
    k = int(params["k"])
    bad_round = int(params["bad_round"])
    if not (0 <= bad_round < k):
        raise ValueError("bad_round must index a round within k")
    eps_switch = float(params["epsilon_switch"])
    noise = _noise_from_params(params, grid_default=2.0**-10)
    _, held, dist = _two_sample_instance(n, n)
    good = Query(0.5)
    bad = Query(0.0, {1: 1.0})
    schedule = [good] * bad_round + [bad] + [good] * (k - bad_round - 1)
    mech_h = MechanismState(
        MechanismKind.hybrid(eps_switch),
        noise,
        sample=held,
        distribution=dist,
        real_rng=derive_rng(master, trial, "mech_noise_real"),
        oracle_seed=derive_entropy(master, trial, "mech_noise_oracle"),
    )
    mech_r = MechanismState(
        MechanismKind.real(),
        noise,
        sample=held,
        real_rng=derive_rng(master, trial, "mech_noise_real"),
    )
    answers_h = run_interaction(FixedQueryAnalyst(schedule), mech_h, k).answers
    answers_r = run_interaction(FixedQueryAnalyst(schedule), mech_r, k).answers
    first_divergence = next(
        (i for i, (a, b) in enumerate(zip(answers_h, answers_r)) if a != b), -1
    )
    switch_round = -1 if mech_h.switch_round is None else mech_h.switch_round
    cutoff = switch_round if switch_round >= 0 else k
    return {
        "trial": trial,
        "switch_round": switch_round,
        "first_divergence_round": first_divergence,
        "prefix_identical": first_divergence == -1 or first_divergence >= cutoff,
        "equal_rounds": sum(a == b for a, b in zip(answers_h, answers_r)),
    }


_TRIAL_RUNNERS = {
    "attack": _attack_trial,
    "simple_attack": _simple_attack_trial,
    "positive_accuracy": _positive_trial,
    "coupling": _coupling_trial,
}


def _chunk_worker(kind: str, params: dict, master: int, trials: list[int]) -> list[dict]:
    runner = _TRIAL_RUNNERS[kind]
    return [runner(params, master, t) for t in trials]


# --- parameter resolution -------------------------------------------------------


def _resolve_params(config: ExperimentConfig) -> dict:
    """Fill derived defaults so trial workers see fully explicit params."""
    params = dict(config.params)
    kind = config.kind
    if kind == "attack":
        _require(params, ("eps", "gamma", "n"), kind)
        noise = _noise_from_params(params)
        r, _, _ = instance_shape(float(params["eps"]), float(params["gamma"]))
        if "constant" not in params:
            params["constant"] = calibrated_attack_constant(r, noise.variance())
        if "k" not in params:
            params["k"] = score_attack_rounds(
                float(params["eps"]),
                float(params["gamma"]),
                float(params.get("beta", 0.1)),
                float(params["constant"]),
            )
        build_hard_instance(float(params["eps"]), float(params["gamma"]), int(params["n"]))
    elif kind == "simple_attack":
        _require(params, ("gamma", "n"), kind)
        build_block_instance(float(params["gamma"]), int(params["n"]))
    elif kind == "positive_accuracy":
        _require(params, ("eps", "gamma", "alpha", "beta", "n"), kind)
        eps, alpha = float(params["eps"]), float(params["alpha"])
        params.setdefault("noise_scale", accuracy_noise_scale(alpha, eps))
        if "k" not in params:
            budget = params.get("budget")
            params["k"] = (
                max_accurate_rounds(eps, float(params["gamma"]), alpha, float(params["beta"]), tuple(budget))
                if budget is not None
                else max_accurate_rounds(eps, float(params["gamma"]), alpha, float(params["beta"]))
            )
        build_hard_instance(eps, float(params["gamma"]), int(params["n"]))
    elif kind == "coupling":
        _require(params, ("k", "bad_round", "epsilon_switch"), kind)
    elif kind == "llr":
        _require(params, ("eps", "k", "rho", "n"), kind)
        params.setdefault("grid_step", 2.0**-5)
        params.setdefault("ones", round(2 * int(params["n"]) * float(params["eps"])))
    elif kind == "divergence":
        _require(params, ("mech_a", "mech_b", "n", "ones"), kind)
    elif kind == "bounds_table":
        _require(params, ("mode", "eps_values", "gamma", "beta"), kind)
        if params["mode"] not in ("negative", "positive"):
            raise ValueError("bounds_table mode must be 'negative' or 'positive'")
        if params["mode"] == "positive":
            _require(params, ("alpha",), kind)
    return params


# --- summary aggregation ----------------------------------------------------------


def _mean_radius(values) -> tuple[float, float]:
    """Sample mean and a three-sigma-of-the-mean radius."""
    arr = np.asarray(list(values), dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    return mean, 3.0 * float(arr.std(ddof=1)) / math.sqrt(arr.size)


def _rate(records: list[dict], key: str) -> tuple[float, float]:
    return _mean_radius(float(bool(r[key])) for r in records)


def _summarize_attack(records: list[dict], params: dict) -> dict:
    success_rate, success_radius = _rate(records, "success")
    final_mean, final_radius = _mean_radius(r["final_deviation"] for r in records)
    summary = {
        "success_rate": success_rate,
        "success_radius": success_radius,
        "mean_final_deviation": final_mean,
        "final_deviation_radius": final_radius,
        "mean_sample_deviation": _mean_radius(r["sample_deviation"] for r in records)[0],
        "min_sample_deviation_on_success": min(
            (r["sample_deviation"] for r in records if r["success"]), default=float("nan")
        ),
        "k": int(params["k"]),
    }
    if records and "switched" in records[0]:
        summary["switch_rate"] = _rate(records, "switched")[0]
    return summary


def _summarize_simple_attack(records: list[dict], params: dict) -> dict:
    worst_mean, worst_radius = _mean_radius(r["worst_deviation"] for r in records)
    return {
        "identification_rate": _rate(records, "identified")[0],
        "mean_worst_deviation": worst_mean,
        "worst_deviation_radius": worst_radius,
        "min_worst_deviation": min(r["worst_deviation"] for r in records),
        "rounds": build_block_instance(float(params["gamma"]), int(params["n"])).num_candidates,
    }


def _summarize_positive(records: list[dict], params: dict) -> dict:
    accuracy_rate, accuracy_radius = _rate(records, "accurate")
    return {
        "accuracy_rate": accuracy_rate,
        "accuracy_radius": accuracy_radius,
        "queries_good_rate": _rate(records, "queries_good")[0],
        "switch_rate": _rate(records, "switched")[0],
        "k": int(params["k"]),
        "noise_scale": float(params.get("noise_scale", 0.0)),
    }


def _summarize_coupling(records: list[dict], params: dict) -> dict:
    bad_round = int(params["bad_round"])
    switch_hits = sum(r["switch_round"] == bad_round for r in records)
    return {
        "prefix_identical_rate": _rate(records, "prefix_identical")[0],
        "switch_round_match_rate": switch_hits / len(records),
        "mean_equal_rounds": _mean_radius(r["equal_rounds"] for r in records)[0],
        "expected_switch_round": bad_round,
    }


_SUMMARIZERS = {
    "attack": _summarize_attack,
    "simple_attack": _summarize_simple_attack,
    "positive_accuracy": _summarize_positive,
    "coupling": _summarize_coupling,
}


# --- one-shot experiment kinds ---------------------------------------------------


def _run_llr(config: ExperimentConfig, params: dict) -> tuple[list[dict], dict]:
    n = int(params["n"])
    k = int(params["k"])
    eps = float(params["eps"])
    noise = _noise_from_params(params, grid_default=2.0**-5)
    _, held, dist = _two_sample_instance(n, int(params["ones"]))
    query = Query(0.0, {1: 1.0})
    report = run_llr_experiment(
        FixedQueryAnalyst([query] * k),
        held,
        dist,
        k,
        eps,
        noise,
        float(params["rho"]),
        config.trials,
        config.seed,
        epsilon_switch=params.get("epsilon_switch"),
    )
    record = {
        "threshold": report.threshold,
        "frac_exceed_hybrid": report.frac_exceed_hybrid,
        "frac_exceed_oracle": report.frac_exceed_oracle,
        "trials": report.trials,
        "k": report.k,
    }
    return [record], dict(record)


def _run_divergence(config: ExperimentConfig, params: dict) -> tuple[list[dict], dict]:
    noise = _noise_from_params(params, grid_default=2.0**-10)
    _, held, dist = _two_sample_instance(int(params["n"]), int(params["ones"]))
    query = Query(0.0, {1: 1.0})
    mechs = []
    for side in ("mech_a", "mech_b"):
        name = params[side]
        mechs.append(
            _mechanism(
                name,
                params,
                noise,
                sample=None if name == "oracle" else held,
                distribution=None if name == "real" else dist,
                master=config.seed,
                trial=0,
            )
        )
    report = divergence_diagnostics(mechs[0], mechs[1], query)
    record = {
        "mech_a": params["mech_a"],
        "mech_b": params["mech_b"],
        "max_divergence_ab": report.max_divergence_ab,
        "max_divergence_ba": report.max_divergence_ba,
        "kl_ab": report.kl_ab,
        "kl_ba": report.kl_ba,
    }
    return [record], dict(record)


def _run_bounds_table(config: ExperimentConfig, params: dict) -> tuple[list[dict], dict]:
    mode = params["mode"]
    gamma = float(params["gamma"])
    beta = float(params["beta"])
    rows = []
    for eps in params["eps_values"]:
        eps = float(eps)
        if mode == "negative":
            row = {"eps": eps, **breaking_rounds_details(eps, gamma, beta, params.get("constant"))}
        else:
            row = {"eps": eps, **max_accurate_rounds_details(eps, gamma, float(params["alpha"]), beta)}
            row["budget"] = json.dumps(row["budget"])
        rows.append(row)
    return rows, {"mode": mode, "rows": len(rows)}


# --- driver -----------------------------------------------------------------------


def _thread_count(config: ExperimentConfig) -> int:
    if config.threads is not None:
        return max(1, int(config.threads))
    return max(1, int(os.environ.get("ADALAB_THREADS", "1")))


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    params = _resolve_params(config)
    if config.kind in _TRIAL_KINDS:
        threads = _thread_count(config)
        if threads > 1 and config.trials > 1:
            chunks = [list(map(int, c)) for c in np.array_split(range(config.trials), threads) if len(c)]
            with ProcessPoolExecutor(max_workers=threads) as pool:
                futures = [
                    pool.submit(_chunk_worker, config.kind, params, config.seed, chunk)
                    for chunk in chunks
                ]
                records = [record for future in futures for record in future.result()]
        else:
            runner = _TRIAL_RUNNERS[config.kind]
            records = [runner(params, config.seed, t) for t in range(config.trials)]
        records.sort(key=lambda r: r["trial"])
        summary = _SUMMARIZERS[config.kind](records, params)
    elif config.kind == "llr":
        records, summary = _run_llr(config, params)
    elif config.kind == "divergence":
        records, summary = _run_divergence(config, params)
    else:
        records, summary = _run_bounds_table(config, params)
    summary["kind"] = config.kind
    summary["trials"] = config.trials
    summary["seed"] = config.seed
    summary["params"] = params
    return ExperimentResult(kind=config.kind, records=records, summary=summary)


# --- output + assertions -----------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_outputs(result: ExperimentResult, out_prefix: str) -> dict[str, str]:
    """Write <prefix>.jsonl, <prefix>.csv, and <prefix>.summary.json."""
    directory = os.path.dirname(out_prefix)
    if directory:
        os.makedirs(directory, exist_ok=True)
    paths = {
        "jsonl": f"{out_prefix}.jsonl",
        "csv": f"{out_prefix}.csv",
        "summary": f"{out_prefix}.summary.json",
    }
    with open(paths["jsonl"], "w", encoding="utf-8") as fh:
        for record in result.records:
            fh.write(json.dumps(record, default=_json_default) + "\n")
    fieldnames: list[str] = []
    for record in result.records:
        for key in record:
            if key not in fieldnames:
                fieldnames.append(key)
    with open(paths["csv"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, restval="")
        writer.writeheader()
        writer.writerows(result.records)
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(result.summary, fh, indent=2, default=_json_default, sort_keys=True)
        fh.write("\n")
    return paths


_OPS = {"ge": operator.ge, "gt": operator.gt, "le": operator.le, "lt": operator.lt, "eq": operator.eq}


def _lookup_metric(summary: dict, metric: str):
    node = summary
    for part in metric.split("."):
        if not isinstance(node, dict) or part not in node:
            raise KeyError(metric)
        node = node[part]
    return node


def evaluate_assertions(summary: dict, assertions: list[dict]) -> list[str]:
    """Check each {metric, op, value} claim; return failure descriptions."""
    failures = []
    for claim in assertions:
        try:
            metric, op_name, target = claim["metric"], claim["op"], claim["value"]
        except (TypeError, KeyError):
            failures.append(f"malformed assertion {claim!r}: needs metric, op, value")
            continue
        if op_name not in _OPS:
            failures.append(f"assertion on {metric!r}: unknown op {op_name!r}")
            continue
        try:
            actual = _lookup_metric(summary, metric)
        except KeyError:
            failures.append(f"assertion on {metric!r}: metric not found in summary")
            continue
        if not _OPS[op_name](actual, target):
            failures.append(f"assertion failed: {metric} = {actual!r} not {op_name} {target!r}")
    return failures
