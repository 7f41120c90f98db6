"""Error-rate measurement and the experiment suites behind the report tables."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import attacks as attacks_mod
from . import blackbox, defenses, models
from .seeding import derive_seed


@dataclass
class ErrorTable:
    """Rows keyed by (model id, defense tag), columns keyed by attack id."""

    cells: dict = field(default_factory=dict)  # (model, defense) -> {attack: rate}
    metadata: dict = field(default_factory=dict)

    def set(self, model_id, defense, attack_id, rate):
        if not (0.0 <= rate <= 1.0):
            raise ValueError(f"error rate {rate} outside [0,1]")
        self.cells.setdefault((model_id, defense), {})[attack_id] = rate

    def get(self, model_id, defense, attack_id):
        return self.cells[(model_id, defense)][attack_id]

    def rows(self):
        """Stable iteration: sorted row keys, sorted attack columns."""
        for key in sorted(self.cells):
            for attack_id in sorted(self.cells[key]):
                yield key[0], key[1], attack_id, self.cells[key][attack_id]

    def to_dict(self):
        return {
            "cells": [
                {"model": m, "defense": d, "attack": a, "error_rate": r}
                for m, d, a, r in self.rows()
            ],
            "metadata": self.metadata,
        }


def error_rate(model, x_adv, y, squeeze: int | None = None) -> float:
    """Fraction of (optionally squeezed) predictions that mismatch y."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty evaluation batch")
    pred = defenses.defended_predict(model, x_adv, squeeze=squeeze)
    return float((pred != y).mean())


def clean_error(model, ds, squeeze=None) -> float:
    return error_rate(model, ds.images, ds.labels, squeeze=squeeze)


def _check_reserve(ds):
    if getattr(ds, "provenance", None) not in (None, "attack_reserve"):
        raise ValueError(
            f"attack evaluation requires the attack_reserve split, "
            f"got provenance {ds.provenance!r}"
        )


def run_whitebox_suite(model_rows, attack_list, reserve, seed=0,
                       squeeze=None) -> ErrorTable:
    """Craft each attack on each model itself and measure its error rate.

    ``model_rows`` is a list of (model_id, defense_tag, ModelState).
    """
    _check_reserve(reserve)
    table = ErrorTable(metadata={"suite": "whitebox", "seed": seed,
                                 "squeeze": squeeze})
    for model_id, defense, model in model_rows:
        for attack in attack_list:
            batch = attacks_mod.craft(
                model, reserve.images, reserve.labels, attack,
                seed=derive_seed(seed, "whitebox", model_id, defense, attack.kind),
            )
            rate = error_rate(model, batch.x_adv, reserve.labels, squeeze=squeeze)
            table.set(model_id, defense, attack.kind, rate)
    return table


def run_blackbox_suite(model_rows, proxy, attack_list, reserve, seed=0,
                       squeeze=None) -> ErrorTable:
    """Craft on the evaluation proxy P'' and measure error on each target."""
    _check_reserve(reserve)
    table = ErrorTable(metadata={"suite": "blackbox", "seed": seed,
                                 "proxy": proxy.tag, "squeeze": squeeze})
    for attack in attack_list:
        batch = blackbox.transfer_attack(
            proxy, attack, reserve.images, reserve.labels,
            seed=derive_seed(seed, "blackbox", attack.kind),
        )
        for model_id, defense, model in model_rows:
            rate = error_rate(model, batch.x_adv, reserve.labels, squeeze=squeeze)
            table.set(model_id, defense, attack.kind, rate)
    return table


def leave_one_out(m0, undefended_row, holdout, data, cascade_cfg,
                  reserve, seed=0, squeeze_bits=None) -> ErrorTable:
    """Train the cascade on every attack except the holdout, then attack it
    with the holdout (plain and squeezed)."""
    if any(a.kind == holdout.kind for a in cascade_cfg.attack_order):
        raise ValueError(
            f"holdout attack {holdout.kind!r} present in the cascade order"
        )
    if cascade_cfg.num_levels < 1:
        raise ValueError("nothing to train on")
    amc_model, _ = defenses.amc_train(m0, data, cascade_cfg)
    table = ErrorTable(metadata={"suite": "leave_one_out", "seed": seed,
                                 "holdout": holdout.kind})
    rows = [undefended_row, ("amc_loo", "amc", amc_model)]
    for model_id, defense, model in rows:
        batch = attacks_mod.craft(
            model, reserve.images, reserve.labels, holdout,
            seed=derive_seed(seed, "loo", model_id, holdout.kind),
        )
        table.set(model_id, defense, holdout.kind,
                  error_rate(model, batch.x_adv, reserve.labels))
        if squeeze_bits is not None:
            table.set(model_id, defense + "+fs",
                      holdout.kind,
                      error_rate(model, batch.x_adv, reserve.labels,
                                 squeeze=squeeze_bits))
    return table


CSV_HEADER = "model,defense,attack,error_rate,seed"


def emit_report(table: ErrorTable, path, fmt: str = "csv") -> None:
    """Write an error table with a stable row order and deterministic bytes."""
    if fmt == "csv":
        seed = table.metadata.get("seed", "")
        lines = [CSV_HEADER]
        for m, d, a, r in table.rows():
            lines.append(f"{m},{d},{a},{r:.6f},{seed}")
        text = "\n".join(lines) + "\n"
    elif fmt == "markdown":
        lines = ["| model | defense | attack | error_rate |",
                 "|---|---|---|---|"]
        for m, d, a, r in table.rows():
            lines.append(f"| {m} | {d} | {a} | {r:.6f} |")
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        text = json.dumps(table.to_dict(), sort_keys=True, indent=2) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w") as f:
        f.write(text)


def parse_csv(path) -> ErrorTable:
    table = ErrorTable()
    with open(path) as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header!r}")
        for line in f:
            m, d, a, r, _seed = line.strip().split(",")
            table.set(m, d, a, float(r))
    return table
