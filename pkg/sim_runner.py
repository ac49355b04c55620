# sim_runner.py

import concurrent.futures
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import simnet
import zlb_runner
from records_handler import error_row
from simnet import RunRecord

logger = logging.getLogger(__name__)


@dataclass
class SeedResult:
    seed: int
    record: Optional[RunRecord]
    row: dict
    error: Optional[str] = None

    @property
    def status(self) -> str:
        return self.row["status"]


def run_one(scenario, seed: int) -> RunRecord:
    """One seeded run, dispatched on the scenario's protocol."""
    if scenario.protocol == "zlb":
        return zlb_runner.run(scenario, seed)
    return simnet.run(scenario, seed)


def _guarded(scenario, seed: int) -> SeedResult:
    try:
        record = run_one(scenario, seed)
        return SeedResult(seed, record, record.row())
    except Exception as e:
        # one failing seed must not stop the batch
        logger.warning("seed %d of %s failed: %s", seed, scenario.name, e)
        return SeedResult(seed, None, error_row(scenario.name, seed, scenario.protocol, str(e)), str(e))


def run_batch(scenario, seeds: list[int], workers: int = 1,
              on_result: Optional[Callable[[SeedResult], None]] = None) -> list[SeedResult]:
    """
    Runs every seed, in parallel when workers > 1. Each run owns its
    simulator, so seeds share nothing. Results come back in seed order
    whatever order the workers finish in.
    """
    if workers <= 1:
        results = []
        for seed in seeds:
            res = _guarded(scenario, seed)
            if on_result is not None:
                on_result(res)
            results.append(res)
        return results

    by_seed: dict[int, SeedResult] = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_guarded, scenario, seed): seed for seed in seeds}
        for fut in concurrent.futures.as_completed(futures):
            res = fut.result()
            by_seed[res.seed] = res
    results = [by_seed[seed] for seed in seeds]
    if on_result is not None:
        for res in results:
            on_result(res)
    return results
