"""
Writing and reading back surfaces, estimate records, Monte Carlo results,
error curves, audits and simulated villages.
"""

import json
import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from diffusion_trim.config import FLOAT_FORMAT, OUTPUT_DIR
from diffusion_trim.diagnostics import ErrorCurve, SubgraphAudit
from diffusion_trim.errors import InputError
from diffusion_trim.estimation import EstimateRecord, Grid, LikelihoodSurface
from diffusion_trim.model import InfoScenario, Village
from diffusion_trim.network_loader import MANIFEST_NAME
from diffusion_trim.simulation import ReplicationResult

logger = logging.getLogger(__name__)


def _write_csv(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _write_json(payload, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


class ResultsStore:
    """Output directory with one file per artifact."""

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir or OUTPUT_DIR
        os.makedirs(self.output_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    # Surfaces

    def save_surface(self, surface: LikelihoodSurface, name: str) -> str:
        """Save a surface as ``p,q,loglik,dead_branches`` rows in grid order."""
        p, q = np.meshgrid(surface.grid.p_values, surface.grid.q_values, indexing="ij")
        frame = pd.DataFrame({
            "p": p.ravel(),
            "q": q.ravel(),
            "loglik": surface.values.ravel(),
            "dead_branches": surface.dead_branches.ravel(),
        })
        path = self.path(name)
        _write_csv(frame, path)
        logger.info("Saved surface to %s", path)
        return path

    @staticmethod
    def load_surface(path: str, d: Optional[int] = None) -> LikelihoodSurface:
        if not os.path.exists(path):
            raise InputError(f"surface file not found: {path}", path=path)
        frame = pd.read_csv(path, float_precision="round_trip")
        grid = Grid(np.unique(frame["p"].to_numpy()), np.unique(frame["q"].to_numpy()))
        if len(frame) != grid.shape[0] * grid.shape[1]:
            raise InputError(f"{path} is not a rectangular grid", path=path)
        frame = frame.sort_values(["p", "q"])
        return LikelihoodSurface(grid, frame["loglik"].to_numpy().reshape(grid.shape), d,
                                 frame["dead_branches"].to_numpy(dtype=np.int64).reshape(grid.shape))

    # Estimates

    def save_estimates(self, records: Sequence[EstimateRecord], name: str = "estimates.json") -> str:
        path = self.path(name)
        _write_json({"estimates": [r.to_dict() for r in records]}, path)
        logger.info("Saved %d estimate record(s) to %s", len(records), path)
        return path

    @staticmethod
    def load_estimates(path: str) -> List[EstimateRecord]:
        with open(path, "r", encoding="utf-8") as f:
            return [EstimateRecord.from_dict(r) for r in json.load(f)["estimates"]]

    @staticmethod
    def estimate_table(records: Sequence[EstimateRecord], level: float = 0.95) -> pd.DataFrame:
        """Estimates with the size of the confidence set at ``level``, one row per record."""
        return pd.DataFrame([{
            "estimator": r.label,
            "p_hat": r.p_hat,
            "q_hat": r.q_hat,
            "log_likelihood": r.log_likelihood,
            "boundary": r.boundary,
            f"set_size_{level:g}": len(r.confidence_sets.get(level, [])),
            "error": r.error,
        } for r in records])

    def save_estimate_table(self, records: Sequence[EstimateRecord], name: str = "estimates.csv") -> str:
        path = self.path(name)
        _write_csv(self.estimate_table(records), path)
        return path

    # Monte Carlo

    def save_results(self, results: Sequence[ReplicationResult], name: str = "results.jsonl") -> str:
        path = self.path(name)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for result in results:
                f.write(json.dumps(result.to_dict()) + "\n")
        logger.info("Saved %d replication record(s) to %s", len(results), path)
        return path

    @staticmethod
    def load_results(path: str) -> List[ReplicationResult]:
        with open(path, "r", encoding="utf-8") as f:
            return [ReplicationResult.from_dict(json.loads(line)) for line in f if line.strip()]

    def save_table(self, frame: pd.DataFrame, name: str) -> str:
        path = self.path(name)
        _write_csv(frame, path)
        logger.info("Saved %s", path)
        return path

    # Diagnostics

    def save_curve(self, curve: ErrorCurve, name: str) -> str:
        frame = pd.DataFrame({
            "d": curve.d_values,
            "loglik_trimmed": curve.log_retained,
            "loglik_exact": np.full(len(curve.log_retained), curve.exact),
            "epsilon": curve.epsilons,
            "log_new_mass": curve.log_new_mass,
        })
        return self.save_table(frame, name)

    @staticmethod
    def load_curve(path: str, village: str, params) -> ErrorCurve:
        frame = pd.read_csv(path, float_precision="round_trip")
        return ErrorCurve(village, params, float(frame["loglik_exact"].iloc[0]),
                          frame["loglik_trimmed"].to_numpy(), frame["log_new_mass"].to_numpy(),
                          int(frame["d"].iloc[-1]))

    def save_audits(self, audits: Sequence[SubgraphAudit], name: str) -> str:
        frame = pd.DataFrame([{
            "node": a.node,
            "group": a.group,
            "b": a.b,
            "in_degree": a.in_degree,
            "out_degree": a.out_degree,
            "default": a.default,
            "verdict": a.verdict.value,
            "log_chosen_mass": a.log_chosen_mass,
            "log_alternative_mass": a.log_alternative_mass,
        } for a in audits], columns=["node", "group", "b", "in_degree", "out_degree", "default", "verdict",
                                     "log_chosen_mass", "log_alternative_mass"])
        return self.save_table(frame, name)

    # Simulated villages

    def save_village(self, village: Village, scenario: Optional[InfoScenario] = None,
                     subdir: str = "") -> Dict[str, str]:
        """Write network, outcomes and (optionally) the latent scenario; returns a manifest entry."""
        folder = self.path(subdir)
        os.makedirs(folder, exist_ok=True)
        entry = {"name": village.name,
                 "network": os.path.join(subdir, f"{village.name}_network.csv"),
                 "outcomes": os.path.join(subdir, f"{village.name}_outcomes.csv")}
        np.savetxt(self.path(entry["network"]), village.network.adjacency.astype(np.uint8),
                   fmt="%d", delimiter=",")
        nodes = np.arange(1, village.n + 1)
        outcomes = pd.DataFrame({"node": nodes, "ip": village.seeds.s0.astype(np.uint8)})
        for t in range(village.periods):
            outcomes[f"y{t + 1}"] = village.outcomes.y[:, t].astype(np.uint8)
        _write_csv(outcomes, self.path(entry["outcomes"]))
        if scenario is not None:
            entry["scenario"] = os.path.join(subdir, f"{village.name}_scenario.csv")
            latent = pd.DataFrame({"node": nodes})
            for t in range(scenario.exchanges):
                latent[f"s{t + 1}"] = scenario.s[:, t].astype(np.uint8)
            _write_csv(latent, self.path(entry["scenario"]))
        return entry

    def save_manifest(self, entries: Sequence[Dict[str, str]], name: str = MANIFEST_NAME) -> str:
        path = self.path(name)
        _write_json({"villages": list(entries)}, path)
        logger.info("Saved manifest of %d village(s) to %s", len(entries), path)
        return path
