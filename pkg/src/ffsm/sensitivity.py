"""Leave-one-factor-out (jackknife) sensitivity using the relative AUC decrease."""
import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .backbones import build
from .data import drop_factor
from .metrics import roc_auc
from .train import predict, train

log = logging.getLogger(__name__)


def prd(auc_o, auc_i):
    """Percentage of relative decrease: 100 * |AUC_o - AUC_i| / AUC_o."""
    if auc_o <= 0:
        raise ValueError(f"reference AUC must be positive, got {auc_o}")
    return 100.0 * abs(auc_o - auc_i) / auc_o


@dataclass
class SensitivityReport:
    auc_o: float
    entries: list = field(default_factory=list)   # dicts: factor, auc, prd, fraction, rank

    def ranking(self):
        return [e["factor"] for e in sorted(self.entries, key=lambda e: e["rank"])]

    def to_dict(self):
        return {"auc_o": self.auc_o, "prd_units": "percent (fraction = prd / 100)",
                "entries": self.entries}

    def write(self, csv_path, json_path):
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["factor", "auc", "prd", "rank"])
            for e in sorted(self.entries, key=lambda e: e["rank"]):
                w.writerow([e["factor"], "" if e["auc"] is None else repr(e["auc"]),
                            "" if e["prd"] is None else repr(e["prd"]), e["rank"]])
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _test_auc(model, dataset):
    idx = dataset.indices("test")
    return roc_auc(predict(model, dataset.X[idx]), dataset.y[idx]).auc


def _fit(dataset, spec, config, seed):
    model = build(replace(spec, factors=len(dataset.factors)), seed)
    train(model, dataset, replace(config, seed=seed))
    return model


def jackknife(dataset, spec, config, seed=0, mode="retrain", jobs=1):
    """Rank factors by how much test AUC moves when each one is left out.

    ``mode="retrain"`` fits a fresh model on the remaining F-1 channels (same
    split, seed and config).  ``mode="zero"`` keeps the full model and zeroes
    the channel at inference, a cheap approximation for smoke runs.
    """
    n_factors = len(dataset.factors)
    if n_factors < 2:
        raise ValueError("jackknife needs at least two factors")
    if mode not in ("retrain", "zero"):
        raise ValueError(f"unknown jackknife mode {mode!r}")
    full = _fit(dataset, spec, config, seed)
    auc_o = _test_auc(full, dataset)

    def run(j):
        try:
            if mode == "retrain":
                reduced = drop_factor(dataset, j)
                return _test_auc(_fit(reduced, spec, config, seed), reduced), None
            idx = dataset.indices("test")
            X = dataset.X[idx].copy()
            X[:, j] = 0.0
            return roc_auc(predict(full, X), dataset.y[idx]).auc, None
        except Exception as exc:  # recorded per factor, never fatal
            log.warning("jackknife factor %s failed: %s", dataset.factors[j], exc)
            return None, f"{type(exc).__name__}: {exc}"

    if jobs > 1 and mode == "retrain":
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(n_factors)))
    else:
        results = [run(j) for j in range(n_factors)]

    entries = []
    for name, (auc, err) in zip(dataset.factors, results):
        entry = {"factor": name, "auc": auc, "prd": None, "fraction": None}
        if auc is not None:
            entry["prd"] = prd(auc_o, auc)
            entry["fraction"] = entry["prd"] / 100.0
        if err:
            entry["error"] = err
        entries.append(entry)
    order = sorted(range(n_factors), key=lambda i: (
        entries[i]["prd"] is None, -(entries[i]["prd"] or 0.0), i))
    for rank, i in enumerate(order, start=1):
        entries[i]["rank"] = rank
    return SensitivityReport(auc_o, entries)

