"""Communication-overhead accounting, provisioning analysis, and persistence.

Link load is counted in single-float parameters, never measured: every round
the server pushes the global model to all clients, selected clients push
their weights back, and attribution-driven policies additionally exchange
attribution vectors (plus per-client scores and the global importance vector
for the score baseline). Provisioning error is prediction minus truth in
original CPU-percent units.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .nn import ModelParams, forward_batch
from .selection import POLICIES, POLICY_INTELLISELECT, POLICY_NO_POLICY, POLICY_SCORE

SUMMARY_SCHEMA_VERSION = 1
ROUNDS_HEADER = ("round", "mse", "cum_time_ms", "selected_ids", "params_transmitted")
SELECTED_IDS_SEP = ";"


def _fmt(value: float) -> str:
    return f"{float(value):.17g}"


def per_round_comm(policy: str, n_clients: int, n_selected: int, n_features: int,
                   param_count: int) -> tuple[int, int]:
    """(downlink, uplink) single-float parameters exchanged in one round.

    All policies broadcast the global model to every client. Only selected
    clients upload weights under the attribution policies; the all-clients
    baseline uploads everyone's. Attribution policies upload one importance
    value per client per feature; the score baseline additionally uploads one
    score per client and broadcasts the global importance vector.
    """
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}")
    downlink = n_clients * param_count
    if policy == POLICY_NO_POLICY:
        return downlink, n_clients * param_count
    uplink = n_selected * param_count + n_clients * n_features
    if policy == POLICY_SCORE:
        return downlink + n_features, uplink + n_clients
    return downlink, uplink


@dataclass(frozen=True)
class CommLedger:
    """Exact per-round and cumulative link-load counts for one policy."""

    policy: str
    n_rounds: int
    downlink_per_round: int
    uplink_per_round: int

    @property
    def round_total(self) -> int:
        return self.downlink_per_round + self.uplink_per_round

    @property
    def total(self) -> int:
        return self.round_total * self.n_rounds

    def rows(self) -> list[tuple[int, int, int, int, int]]:
        """(round, downlink, uplink, round_total, cumulative_total) per round."""
        out = []
        for t in range(self.n_rounds):
            out.append((t, self.downlink_per_round, self.uplink_per_round,
                        self.round_total, self.round_total * (t + 1)))
        return out


def comm_cost(policy: str, n_clients: int, n_selected: int, n_features: int,
              param_count: int, n_rounds: int) -> CommLedger:
    downlink, uplink = per_round_comm(policy, n_clients, n_selected, n_features, param_count)
    return CommLedger(policy, n_rounds, downlink, uplink)


@dataclass(frozen=True)
class ProvisioningReport:
    """Per-sample prediction errors in CPU-percent units, sign-partitioned.

    Positive error means resources beyond the real need (over-provisioning),
    negative means starvation (under-provisioning); both sums are reported as
    non-negative magnitudes.
    """

    errors: np.ndarray
    client_ids: np.ndarray

    def __post_init__(self) -> None:
        e = np.ascontiguousarray(self.errors, dtype=np.float64)
        c = np.ascontiguousarray(self.client_ids, dtype=np.int64)
        if e.shape != c.shape or e.ndim != 1:
            raise ConfigError("errors and client_ids must be matching 1-D arrays")
        e.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "errors", e)
        object.__setattr__(self, "client_ids", c)

    @property
    def over_sum(self) -> float:
        return float(self.errors[self.errors > 0.0].sum())

    @property
    def under_sum(self) -> float:
        return float(-self.errors[self.errors < 0.0].sum())


def provisioning_report(params: ModelParams, scaled_features: np.ndarray,
                        raw_targets: np.ndarray, scaler,
                        client_id: int = 0) -> ProvisioningReport:
    """Prediction error of one client's samples in original CPU-percent units."""
    y = np.asarray(raw_targets, dtype=np.float64).reshape(-1)
    if y.shape[0] == 0:
        raise ValueError("cannot report provisioning on an empty sample set")
    pred_pct = scaler.inverse_target(forward_batch(params, scaled_features))
    return ProvisioningReport(pred_pct - y, np.full(y.shape[0], client_id, dtype=np.int64))


def slice_provisioning(params: ModelParams, datasets) -> ProvisioningReport:
    """Slice-level report over every client's test split, each in its own units."""
    reports = [
        provisioning_report(
            params,
            ds.test_features,
            ds.targets[ds.test_indices],
            ds.scaler,
            ds.client_id,
        )
        for ds in datasets
    ]
    return ProvisioningReport(
        np.concatenate([r.errors for r in reports]),
        np.concatenate([r.client_ids for r in reports]),
    )


def convergence_round(mses: list[float], tolerance: float = 0.05) -> int:
    """First round whose MSE is within `tolerance` of the final round's MSE."""
    if not mses:
        raise ValueError("cannot locate convergence in an empty MSE series")
    threshold = mses[-1] * (1.0 + tolerance)
    for t, mse in enumerate(mses):
        if mse <= threshold:
            return t
    return len(mses) - 1


def write_rounds_csv(path: Path, records) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_HEADER)
        for r in records:
            writer.writerow([
                r.round_index,
                _fmt(r.mse),
                _fmt(r.cum_time_ms),
                SELECTED_IDS_SEP.join(str(c) for c in r.selected),
                r.params_transmitted,
            ])


def read_rounds_csv(path: Path) -> list[dict]:
    """Parse a rounds CSV back into plain dicts (inverse of write_rounds_csv)."""
    out = []
    with Path(path).open("r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != ROUNDS_HEADER:
            raise ConfigError(f"{path}: unexpected rounds header {header}")
        for row in reader:
            selected = tuple(int(c) for c in row[3].split(SELECTED_IDS_SEP)) if row[3] else ()
            out.append({
                "round": int(row[0]),
                "mse": float(row[1]),
                "cum_time_ms": float(row[2]),
                "selected": selected,
                "params_transmitted": int(row[4]),
            })
    return out


def write_comm_ledger_csv(path: Path, ledgers: list[CommLedger]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "round", "downlink_params", "uplink_params",
                         "round_total", "cumulative_total"])
        for ledger in ledgers:
            for row in ledger.rows():
                writer.writerow([ledger.policy, *row])


def write_attributions_csv(path: Path, chi_rounds: list[np.ndarray]) -> None:
    n_features = chi_rounds[0].shape[1] if chi_rounds else 0
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "client_id"] + [f"chi_{f}" for f in range(n_features)])
        for t, chi in enumerate(chi_rounds):
            for k in range(chi.shape[0]):
                writer.writerow([t, k] + [_fmt(v) for v in chi[k]])


def write_selection_csv(path: Path, selections) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "client_id", "selected_by_feature", "chi_value"])
        for t, sel in enumerate(selections):
            for audit in sel.audit:
                writer.writerow([t, audit.client_id, audit.feature, _fmt(audit.chi_value)])


def write_provisioning_csv(path: Path, policy: str,
                           round_reports: list[tuple[int, ProvisioningReport]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "round", "client_id", "sample_index", "p_err"])
        for round_index, report in round_reports:
            for i, (cid, err) in enumerate(zip(report.client_ids, report.errors)):
                writer.writerow([policy, round_index, int(cid), i, _fmt(err)])


def build_summary(config_echo: dict, runs, ledgers: list[CommLedger],
                  provisioning: dict[str, dict]) -> dict:
    """Plot-ready run summary; see validate_summary for the schema."""
    slices: dict[str, dict] = {}
    for run in runs:
        mses = [r.mse for r in run.records]
        ledger = next(l for l in ledgers if l.policy == run.policy)
        entry = {
            "rounds": len(run.records),
            "final_mse": mses[-1] if mses else None,
            "convergence_round": convergence_round(mses) if mses else None,
            "cum_time_ms": run.records[-1].cum_time_ms if run.records else 0.0,
            "total_comm_params": ledger.total,
        }
        slices.setdefault(run.slice_name, {})[run.policy] = entry

    comm_model = {
        ledger.policy: {
            "downlink_per_round": ledger.downlink_per_round,
            "uplink_per_round": ledger.uplink_per_round,
            "rounds": ledger.n_rounds,
            "total": ledger.total,
        }
        for ledger in ledgers
    }
    return {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "config": config_echo,
        "comm_model": comm_model,
        "slices": slices,
        "provisioning": provisioning,
        "total_comm_params": sum(ledger.total for ledger in ledgers),
    }


def validate_summary(summary: dict) -> None:
    """Raise ValueError when a summary does not match the documented schema."""
    if summary.get("schema_version") != SUMMARY_SCHEMA_VERSION:
        raise ValueError(f"summary schema_version must be {SUMMARY_SCHEMA_VERSION}")
    for key, kind in (("config", dict), ("comm_model", dict), ("slices", dict),
                      ("provisioning", dict), ("total_comm_params", int)):
        if not isinstance(summary.get(key), kind):
            raise ValueError(f"summary[{key!r}] must be a {kind.__name__}")
    for policy, model in summary["comm_model"].items():
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r} in comm_model")
        for field in ("downlink_per_round", "uplink_per_round", "rounds", "total"):
            if not isinstance(model.get(field), int):
                raise ValueError(f"comm_model[{policy!r}][{field!r}] must be an int")
    for slice_name, policies in summary["slices"].items():
        for policy, entry in policies.items():
            if policy not in POLICIES:
                raise ValueError(f"unknown policy {policy!r} under slice {slice_name!r}")
            if not isinstance(entry.get("rounds"), int):
                raise ValueError("slice entry 'rounds' must be an int")
            for field in ("final_mse", "cum_time_ms"):
                value = entry.get(field)
                if value is not None and not isinstance(value, (int, float)):
                    raise ValueError(f"slice entry {field!r} must be numeric or null")
            if not isinstance(entry.get("total_comm_params"), int):
                raise ValueError("slice entry 'total_comm_params' must be an int")


def persist(out_dir: str | Path, runs, ledgers: list[CommLedger],
            provisioning_rows: dict[str, tuple[str, list[tuple[int, ProvisioningReport]]]],
            config_echo: dict) -> dict[str, Path]:
    """Write round CSVs, audit CSVs, the comm ledger and the summary JSON.

    Returns a mapping of logical names to the written paths; raises OSError
    annotated with the path on I/O failure.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    for run in runs:
        stem = f"{run.slice_name}_{run.policy}"
        rounds_path = out / f"rounds_{stem}.csv"
        write_rounds_csv(rounds_path, run.records)
        paths[f"rounds_{stem}"] = rounds_path
        if run.chi_rounds:
            chi_path = out / f"attributions_{stem}.csv"
            write_attributions_csv(chi_path, run.chi_rounds)
            paths[f"attributions_{stem}"] = chi_path
        selections = [s for s in run.selections if s is not None and s.audit]
        if selections:
            sel_path = out / f"selection_{stem}.csv"
            write_selection_csv(sel_path, [s for s in run.selections if s is not None])
            paths[f"selection_{stem}"] = sel_path

    ledger_path = out / "comm_ledger.csv"
    write_comm_ledger_csv(ledger_path, ledgers)
    paths["comm_ledger"] = ledger_path

    provisioning_summary: dict[str, dict] = {}
    for slice_name, (policy, round_reports) in provisioning_rows.items():
        prov_path = out / f"provisioning_{slice_name}.csv"
        write_provisioning_csv(prov_path, policy, round_reports)
        paths[f"provisioning_{slice_name}"] = prov_path
        provisioning_summary[slice_name] = {
            "policy": policy,
            "rounds": {
                str(round_index): {
                    "over_provisioning_sum": report.over_sum,
                    "under_provisioning_sum": report.under_sum,
                }
                for round_index, report in round_reports
            },
        }

    summary = build_summary(config_echo, runs, ledgers, provisioning_summary)
    validate_summary(summary)
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["summary"] = summary_path
    return paths
