"""Complexity sweeps: run one scenario template across committee sizes and fit log-log slopes."""
from __future__ import annotations

import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .simnet.network import Simulation
from .simnet.scenario import parse_scenario


@dataclass
class SweepPoint:
    n: int
    seed: int
    status: str
    messages: dict[str, int]
    bits: dict[str, int]
    rounds: int
    a: int


def instantiate(template: dict, n: int, seed: int) -> dict:
    data = {k: v for k, v in template.items() if k != "per_n"}
    data.update(n=n, seed=seed)
    data.update(template.get("per_n", {}).get(str(n), {}))
    return data


def run_point(args: tuple[dict, int, int]) -> SweepPoint:
    template, n, seed = args
    sim = Simulation(parse_scenario(instantiate(template, n, seed)), record=False).run()
    c = sim.counters.as_dict()
    return SweepPoint(n, seed, sim.status, c["messages"], c["bits"], sim.max_round(), sim.a())


def slope(xs: list[float], ys: list[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return statistics.linear_regression([math.log(x) for x in xs], [math.log(y) for y in ys]).slope


def sweep(template: dict, n_list: list[int], seeds: list[int], workers: int = 1) -> list[SweepPoint]:
    if len(set(n_list)) < 3:
        raise ValueError("a slope needs at least three distinct committee sizes")
    jobs = [(template, n, s) for n in n_list for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(run_point, jobs))
    else:
        points = [run_point(j) for j in jobs]
    return sorted(points, key=lambda p: (p.n, p.seed))


def fit(points: list[SweepPoint], metric: str = "messages") -> dict[str, float]:
    """Per-layer slope of the per-n mean of ``metric``."""
    by_n: dict[int, list[SweepPoint]] = {}
    for p in points:
        by_n.setdefault(p.n, []).append(p)
    ns = sorted(by_n)
    layers = sorted({k for p in points for k in getattr(p, metric)})
    out = {}
    for layer in layers:
        means = [statistics.fmean(getattr(p, metric).get(layer, 0) for p in by_n[n]) for n in ns]
        if all(m > 0 for m in means):
            out[layer] = slope(ns, means)
    return out
