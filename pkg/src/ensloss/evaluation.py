"""Replication statistics: paired one-tailed t-tests and the benchmark harness.

The Student-t CDF is computed here via the regularized incomplete beta
continued fraction rather than pulled from a stats dependency; tests pin it
against an independent reference.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datasets import SplitDataset
from .trainer import ModelSpec, RunRecord, TrainConfig, train

ALPHA = 0.05

_BETA_EPS = 3e-16
_BETA_FPMIN = 1e-300
_BETA_MAXIT = 300


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_FPMIN:
        d = _BETA_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    """P(T <= t) for Student's t with df degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0 if t < 0 else 1.0
    x = df / (df + t * t)
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return tail if t < 0 else 1.0 - tail


@dataclass(frozen=True)
class ComparisonCell:
    dataset: str
    method: str
    accuracies: tuple[float, ...]
    mean: float
    stderr: float


@dataclass(frozen=True)
class TestResult:
    method_a: str
    method_b: str
    t_statistic: float
    p_value: float
    verdict: str  # better | no_diff | worse, from A's perspective


def paired_t_test_one_tailed(
    a: Sequence[float],
    b: Sequence[float],
    method_a: str = "A",
    method_b: str = "B",
    alpha: float = ALPHA,
) -> TestResult:
    """Test whether method A's replicate values exceed method B's.

    Pairs are aligned by position (seed order). Zero-variance differences:
    all-zero means no_diff; all-equal nonzero decides by sign with p pinned
    to 0 or 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be equal-length 1-D vectors")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 replicate pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TestResult(method_a, method_b, 0.0, 0.5, "no_diff")
        t = math.inf if mean > 0 else -math.inf
        p = 0.0 if mean > 0 else 1.0
        return TestResult(method_a, method_b, t, p, "better" if mean > 0 else "worse")
    t = mean / (sd / math.sqrt(n))
    p = 1.0 - student_t_cdf(t, n - 1)
    if p <= alpha:
        verdict = "better"
    elif student_t_cdf(t, n - 1) <= alpha:  # the reversed test's p-value
        verdict = "worse"
    else:
        verdict = "no_diff"
    return TestResult(method_a, method_b, t, p, verdict)


@dataclass
class BenchmarkResult:
    cells: list[ComparisonCell]
    tests: dict[str, list[TestResult]]  # keyed by dataset
    dominant: dict[str, str | None]     # dataset -> dominant method, if any
    summary: dict[tuple[str, str], dict[str, int]]
    failures: list[tuple[str, str, int, str]]
    warnings: list[str]
    records: dict[tuple[str, str, int], RunRecord]

    def cells_csv(self) -> str:
        lines = ["dataset,method,n_replicates,mean,stderr,accuracies"]
        for c in self.cells:
            accs = ";".join(repr(v) for v in c.accuracies)
            lines.append(f"{c.dataset},{c.method},{len(c.accuracies)},{c.mean!r},{c.stderr!r},{accs}")
        return "\n".join(lines) + "\n"

    def tests_json_obj(self) -> list[dict]:
        out = []
        for dataset in sorted(self.tests):
            for t in self.tests[dataset]:
                out.append({"dataset": dataset, **dataclasses.asdict(t)})
        return out

    def summary_text(self) -> str:
        lines = []
        for (a, b), counts in sorted(self.summary.items()):
            lines.append(
                f"{a} vs {b}: (better={counts['better']}, no_diff={counts['no_diff']}, "
                f"worse={counts['worse']})"
            )
        for dataset in sorted(self.dominant):
            dom = self.dominant[dataset]
            if dom:
                lines.append(f"{dataset}: {dom} significantly better than all competitors")
        return "\n".join(lines) + "\n"


def run_benchmark(
    datasets: Mapping[str, SplitDataset],
    methods: Mapping[str, TrainConfig],
    seeds: Sequence[int],
    model_spec: ModelSpec,
    jobs: int = 1,
    metric: str = "final_test_acc",
) -> BenchmarkResult:
    """Train every (dataset, method, seed) cell and compare methods pairwise.

    Cells run concurrently up to ``jobs`` workers; aggregation is a
    deterministic reduce over sorted keys, so the result does not depend on
    completion order. Diverged runs are excluded from the statistics with a
    warning. With a single seed no tests are attempted.
    """
    if metric not in ("final_test_acc", "best_test_acc"):
        raise ValueError("metric must be final_test_acc or best_test_acc")
    if not seeds:
        raise ValueError("need at least one seed")
    cells_keys = [
        (ds, m, s) for ds in sorted(datasets) for m in sorted(methods) for s in seeds
    ]

    def run_cell(key):
        ds, m, s = key
        cfg = dataclasses.replace(methods[m], seed=s)
        return key, train(datasets[ds], model_spec, cfg)

    records: dict[tuple[str, str, int], RunRecord] = {}
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for key, (_, record) in pool.map(run_cell, cells_keys):
            records[key] = record

    warnings: list[str] = []
    failures: list[tuple[str, str, int, str]] = []
    acc: dict[tuple[str, str], dict[int, float]] = {}
    for (ds, m, s), record in sorted(records.items()):
        if record.summary["diverged"]:
            failures.append((ds, m, s, f"diverged at epoch {record.summary['diverged_epoch']}"))
            warnings.append(f"run ({ds}, {m}, seed {s}) diverged; excluded from statistics")
            continue
        value = record.summary[metric]
        if value is None:
            failures.append((ds, m, s, "no test split metric"))
            continue
        acc.setdefault((ds, m), {})[s] = value

    result = aggregate_benchmark(sorted(datasets), sorted(methods), list(seeds), acc, failures, warnings)
    result.records = records
    return result


def aggregate_benchmark(
    dataset_names: Sequence[str],
    method_names: Sequence[str],
    seeds: Sequence[int],
    acc: Mapping[tuple[str, str], Mapping[int, float]],
    failures: list[tuple[str, str, int, str]] | None = None,
    warnings: list[str] | None = None,
) -> BenchmarkResult:
    """Turn per-cell accuracies into comparison cells, pairwise tests, and summaries.

    Deterministic in the inputs; seed-order permutations of ``acc`` do not
    change the aggregation.
    """
    failures = failures if failures is not None else []
    warnings = warnings if warnings is not None else []
    method_names = sorted(method_names)
    cells = []
    for ds in sorted(dataset_names):
        for m in method_names:
            by_seed = acc.get((ds, m), {})
            values = tuple(by_seed[s] for s in seeds if s in by_seed)
            if not values:
                continue
            mean = float(np.mean(values))
            stderr = (
                float(np.std(values, ddof=1) / math.sqrt(len(values)))
                if len(values) > 1
                else math.nan
            )
            cells.append(
                ComparisonCell(dataset=ds, method=m, accuracies=values, mean=mean, stderr=stderr)
            )

    tests: dict[str, list[TestResult]] = {}
    dominant: dict[str, str | None] = {}
    summary: dict[tuple[str, str], dict[str, int]] = {}
    if len(seeds) < 2:
        warnings.append("single replicate: t-tests skipped, reporting means only")
    else:
        for ds in sorted(dataset_names):
            ds_tests = []
            verdicts: dict[tuple[str, str], str] = {}
            for i, ma in enumerate(method_names):
                for mb in method_names[i + 1 :]:
                    sa = acc.get((ds, ma), {})
                    sb = acc.get((ds, mb), {})
                    common = [s for s in seeds if s in sa and s in sb]
                    if len(common) < 2:
                        warnings.append(
                            f"{ds}: fewer than 2 surviving pairs for {ma} vs {mb}; test skipped"
                        )
                        continue
                    res = paired_t_test_one_tailed(
                        [sa[s] for s in common], [sb[s] for s in common], ma, mb
                    )
                    ds_tests.append(res)
                    verdicts[(ma, mb)] = res.verdict
                    verdicts[(mb, ma)] = {"better": "worse", "worse": "better"}.get(
                        res.verdict, "no_diff"
                    )
            tests[ds] = ds_tests
            dom = None
            for m in method_names:
                others = [o for o in method_names if o != m]
                if others and all(verdicts.get((m, o)) == "better" for o in others):
                    dom = m
            dominant[ds] = dom
            for pair, verdict in verdicts.items():
                counts = summary.setdefault(pair, {"better": 0, "no_diff": 0, "worse": 0})
                counts[verdict] += 1

    return BenchmarkResult(
        cells=cells,
        tests=tests,
        dominant=dominant,
        summary=summary,
        failures=failures,
        warnings=warnings,
        records={},
    )
