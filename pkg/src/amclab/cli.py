"""Command-line driver: train / attack / suite from a single JSON config."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import attacks as attacks_mod
from . import blackbox, config as config_mod, data, defenses, evaluate, figures, models
from .seeding import derive_seed


def _train_cfg(section, seed):
    return models.TrainConfig(
        epochs=section["epochs"],
        learning_rate=section["learning_rate"],
        batch_size=section["batch_size"],
        seed=seed,
    )


def prepare_data(cfg: config_mod.ExperimentConfig):
    """Build train / validation / attack_reserve / test / proxy-pool splits."""
    master = cfg.seed
    ds = cfg.dataset
    if ds["kind"] == "synthetic":
        train = data.synth_generate(
            ds["num_classes"], ds["train_size"], ds["side"],
            seed=derive_seed(master, "train-data"),
        )
        train.provenance = "train"
        test_part = data.synth_generate(
            ds["num_classes"], ds["test_size"], ds["side"],
            seed=derive_seed(master, "test-data"),
        )
        pool = data.synth_generate(
            ds["num_classes"], cfg.proxy_train["pool_size"], ds["side"],
            seed=derive_seed(master, "proxy-pool"),
        )
        # shifted distribution for the proxy: the adversary's own data source
        pool = data.augment_shift(pool, 1, seed=derive_seed(master, "pool-shift"))
        pool.provenance = "proxy_pool"
    else:
        full_train = data.load_idx(ds["train_images"], ds["train_labels"])
        test_part = data.load_idx(ds["test_images"], ds["test_labels"])
        subset = ds.get("subset")
        rng = np.random.Generator(np.random.PCG64(derive_seed(master, "idx-subset")))
        order = rng.permutation(len(full_train))
        n_train = subset if subset else len(full_train)
        pool_n = cfg.proxy_train["pool_size"]
        train = full_train.subset(order[:n_train], provenance="train")
        pool = full_train.subset(order[n_train:n_train + pool_n],
                                 provenance="proxy_pool")
    spec = data.SplitSpec(
        validation_fraction=cfg.split["validation_fraction"],
        attack_fraction=cfg.split["attack_fraction"],
        seed=derive_seed(master, "split"),
    )
    val, reserve, test = data.split(test_part, spec)
    return {"train": train, "validation": val, "reserve": reserve,
            "test": test, "pool": pool}


def _input_shape(parts):
    return tuple(parts["train"].images.shape[1:])


def _whitebox_attacks(cfg):
    return {k: cfg.attacks[k]["whitebox"] for k in config_mod.ATTACK_KINDS}


def _blackbox_attacks(cfg):
    return {k: cfg.attacks[k]["blackbox"] for k in config_mod.ATTACK_KINDS}


def _cascade_config(cfg, order_kinds=None, variant="whitebox", seed=None):
    ca = cfg.cascade
    order_kinds = order_kinds if order_kinds is not None else ca["order"]
    order = [cfg.attacks[k][variant] for k in order_kinds]
    tc = models.TrainConfig(
        epochs=ca["epochs"], learning_rate=ca["learning_rate"],
        batch_size=ca["batch_size"],
        seed=seed if seed is not None else derive_seed(cfg.seed, "cascade"),
    )
    return defenses.CascadeConfig(
        attack_order=order,
        adv=defenses.AdvTrainConfig(alpha=ca["alpha"], train=tc),
        current_fraction=ca["current_fraction"],
    )


def _adv_cfg(cfg, stage):
    ca = cfg.cascade
    return defenses.AdvTrainConfig(
        alpha=ca["alpha"],
        train=models.TrainConfig(
            epochs=ca["epochs"], learning_rate=ca["learning_rate"],
            batch_size=ca["batch_size"], seed=derive_seed(cfg.seed, stage),
        ),
    )


def _train_undefended(cfg, parts):
    spec = models.target_spec(_input_shape(parts), parts["train"].num_classes)
    m = models.build(spec, seed=derive_seed(cfg.seed, "init"))
    return models.train_plain(
        m, parts["train"], _train_cfg(cfg.target_train, derive_seed(cfg.seed, "plain"))
    )


def _iface(cfg):
    return blackbox.PredictionInterface(
        kind=cfg.interface["kind"], flip_p=cfg.interface["flip_p"]
    )


def cmd_train(cfg: config_mod.ExperimentConfig, out_dir) -> dict:
    parts = prepare_data(cfg)
    os.makedirs(out_dir, exist_ok=True)
    log = {"defense": cfg.defense, "seed": cfg.seed}
    m0 = _train_undefended(cfg, parts)
    if cfg.defense == "none":
        model = m0
    elif cfg.defense == "adversarial-train":
        attack = cfg.attacks[cfg.adv_attack]["whitebox"]
        model = defenses.adversarial_train(
            m0, attack, parts["train"], _adv_cfg(cfg, "advtrain")
        )
        log["attack"] = cfg.adv_attack
    elif cfg.defense == "amc-target":
        cascade = _cascade_config(cfg)
        model, clog = defenses.amc_train(
            m0, parts["train"], cascade, checkpoint_dir=out_dir
        )
        log["cascade"] = clog
    else:  # amc-proxy
        cascade = _cascade_config(cfg, variant="blackbox")
        model, info = blackbox.harden_via_proxy(
            m0, parts["pool"], cascade, parts["train"], _iface(cfg),
            _train_cfg(cfg.proxy_train, derive_seed(cfg.seed, "proxy")),
            checkpoint_dir=out_dir,
        )
        log["blackbox"] = {
            "proxy_query_counts": info["proxy_query_counts"],
            "proxy_retrainings": info["proxy_retrainings"],
        }
        log["cascade"] = info["cascade_log"]
    models.save(model, os.path.join(out_dir, "model.amcm"))
    log["clean_error_test"] = evaluate.clean_error(model, parts["test"])
    log["clean_error_validation"] = evaluate.clean_error(model, parts["validation"])
    with open(os.path.join(out_dir, "train_log.json"), "w") as f:
        json.dump(log, f, sort_keys=True, indent=2)
    if "cascade" in log:
        figures.render_training_log(
            log["cascade"], os.path.join(out_dir, "training_loss.png"),
            title=f"cascade training ({cfg.defense})",
        )
    return log


def cmd_attack(cfg: config_mod.ExperimentConfig, model_path, out_dir) -> evaluate.ErrorTable:
    parts = prepare_data(cfg)
    os.makedirs(out_dir, exist_ok=True)
    model = models.load(model_path)
    reserve = parts["reserve"]
    table = evaluate.ErrorTable(metadata={"suite": "attack", "seed": cfg.seed})
    clean = evaluate.error_rate(model, reserve.images, reserve.labels)
    table.set("target", "loaded", "clean", clean)
    for kind, attack in _whitebox_attacks(cfg).items():
        batch = attacks_mod.craft(
            model, reserve.images, reserve.labels, attack,
            seed=derive_seed(cfg.seed, "attack", kind),
        )
        attacks_mod.save_adv_batch(batch, os.path.join(out_dir, f"adv_{kind}.amcm"))
        table.set("target", "loaded", kind,
                  evaluate.error_rate(model, batch.x_adv, reserve.labels))
    evaluate.emit_report(table, os.path.join(out_dir, "errors.csv"), "csv")
    figures.render_error_table(table, os.path.join(out_dir, "errors.png"),
                               title="error rates on attack reserve")
    return table


def cmd_suite(cfg: config_mod.ExperimentConfig, out_dir, fmt="csv") -> dict:
    """Full experiment: white-box, black-box, squeezing, leave-one-out,
    no-transfer and reversed-order ablations. Partial results are preserved
    and flagged when a stage fails."""
    t_start = time.time()
    parts = prepare_data(cfg)
    os.makedirs(out_dir, exist_ok=True)
    ck = os.path.join(out_dir, "checkpoints")
    os.makedirs(ck, exist_ok=True)
    wb = _whitebox_attacks(cfg)
    attack_list = [wb[k] for k in config_mod.ATTACK_KINDS]
    reserve, test, train = parts["reserve"], parts["test"], parts["train"]
    report = {"schema_version": 1, "config": cfg.raw, "failures": [],
              "clean_errors": {}, "tables": {}}
    failures = report["failures"]

    def stage(name, fn):
        try:
            return fn()
        except Exception as e:  # keep going; partial results are still useful
            failures.append({"stage": name, "error": f"{type(e).__name__}: {e}"})
            return None

    # -- white-box rows ------------------------------------------------
    m0 = _train_undefended(cfg, parts)
    models.save(m0, os.path.join(ck, "undefended.amcm"))
    rows = [("target", "undefended", m0)]
    for kind in config_mod.ATTACK_KINDS:
        def harden(kind=kind):
            mh = defenses.adversarial_train(
                m0, wb[kind], train, _adv_cfg(cfg, f"adv-{kind}")
            )
            models.save(mh, os.path.join(ck, f"hardened_{kind}.amcm"))
            rows.append(("target", kind, mh))
        stage(f"harden-{kind}", harden)

    amc_model = None
    def run_amc():
        nonlocal amc_model
        cascade = _cascade_config(cfg)
        amc_model, clog = defenses.amc_train(m0, train, cascade, checkpoint_dir=ck)
        models.save(amc_model, os.path.join(ck, "amc_target.amcm"))
        rows.append(("target", "amc", amc_model))
        report["cascade_log"] = clog
    stage("amc-target", run_amc)

    def run_ablations():
        cascade = _cascade_config(cfg)
        no_transfer, _ = defenses.amc_train_no_transfer(m0, train, cascade)
        rows.append(("target", "amc_no_transfer", no_transfer))
        rev = _cascade_config(cfg, order_kinds=list(reversed(cfg.cascade["order"])),
                              seed=derive_seed(cfg.seed, "cascade-rev"))
        reversed_model, _ = defenses.amc_train(m0, train, rev)
        rows.append(("target", "amc_reversed", reversed_model))
    stage("ablations", run_ablations)

    def run_whitebox():
        table = evaluate.run_whitebox_suite(
            rows, attack_list, reserve, seed=derive_seed(cfg.seed, "wb-suite")
        )
        report["tables"]["whitebox"] = table.to_dict()
        evaluate.emit_report(table, os.path.join(out_dir, f"whitebox.{fmt}"), fmt)
        figures.render_error_table(
            table, os.path.join(out_dir, "whitebox.png"),
            title="white-box error rates",
        )
    stage("whitebox-suite", run_whitebox)

    for _, tag, m in rows:
        report["clean_errors"][tag] = evaluate.clean_error(m, test)

    # -- black-box rows ------------------------------------------------
    iface = _iface(cfg)
    bb = _blackbox_attacks(cfg)
    bb_list = [bb[k] for k in config_mod.ATTACK_KINDS]
    proxy_cfg = _train_cfg(cfg.proxy_train, derive_seed(cfg.seed, "proxy"))
    bb_rows = [("target", "undefended", m0)]
    query_counts = {}

    def harden_proxy_rows():
        for kind in config_mod.ATTACK_KINDS:
            mh, info = blackbox.harden_via_proxy(
                m0, parts["pool"], (bb[kind], _adv_cfg(cfg, f"advP-{kind}")),
                train, iface, proxy_cfg,
            )
            models.save(mh, os.path.join(ck, f"hardened_{kind}_proxy.amcm"))
            bb_rows.append(("target", f"{kind}[P]", mh))
            query_counts[f"{kind}[P]"] = info["proxy_query_counts"]
    stage("harden-proxy", harden_proxy_rows)

    def run_amc_proxy():
        cascade = _cascade_config(cfg, variant="blackbox",
                                  seed=derive_seed(cfg.seed, "cascade-proxy"))
        mh, info = blackbox.harden_via_proxy(
            m0, parts["pool"], cascade, train, iface, proxy_cfg,
        )
        models.save(mh, os.path.join(ck, "amc_proxy.amcm"))
        bb_rows.append(("target", "amc[P]", mh))
        query_counts["amc[P]"] = info["proxy_query_counts"]
    stage("amc-proxy", run_amc_proxy)

    def run_blackbox():
        table = evaluate.ErrorTable(metadata={
            "suite": "blackbox", "seed": cfg.seed, "interface": iface.kind,
        })
        for model_id, tag, target in bb_rows:
            oracle = blackbox.TargetOracle(target, iface)
            pp, qlog = blackbox.train_proxy(
                oracle, parts["pool"], tag="P''",
                cfg=blackbox._reseeded(proxy_cfg, derive_seed(cfg.seed, "pp", tag)),
            )
            query_counts[f"P''({tag})"] = [qlog.count]
            for attack in bb_list:
                batch = blackbox.transfer_attack(
                    pp, attack, reserve.images, reserve.labels,
                    seed=derive_seed(cfg.seed, "bb", tag, attack.kind),
                )
                table.set(model_id, tag, attack.kind,
                          evaluate.error_rate(target, batch.x_adv, reserve.labels))
        report["tables"]["blackbox"] = table.to_dict()
        evaluate.emit_report(table, os.path.join(out_dir, f"blackbox.{fmt}"), fmt)
        figures.render_error_table(
            table, os.path.join(out_dir, "blackbox.png"),
            title=f"black-box error rates ({iface.kind} interface)",
        )
    stage("blackbox-suite", run_blackbox)
    report["query_counts"] = query_counts

    # -- feature squeezing under strengthened attacks -------------------
    def run_squeeze():
        if amc_model is None:
            raise RuntimeError("amc model unavailable")
        p = wb["pgm"].params
        strong_pgm = attacks_mod.AttackConfig(
            "pgm", attacks_mod.PgmConfig(eps=2 * p.eps, nb_iter=2 * p.nb_iter)
        )
        e = wb["eap"].params
        strong_eap = attacks_mod.AttackConfig(
            "eap", attacks_mod.EapConfig(
                beta=e.beta, binary_steps=2 * e.binary_steps,
                max_iterations=2 * e.max_iterations,
                initial_const=e.initial_const, learning_rate=e.learning_rate,
            )
        )
        table = evaluate.ErrorTable(metadata={"suite": "squeeze",
                                              "seed": cfg.seed,
                                              "bits": cfg.squeeze_bits})
        for label, attack in [("pgm", wb["pgm"]), ("pgm_strong", strong_pgm),
                              ("eap", wb["eap"]), ("eap_strong", strong_eap)]:
            batch = attacks_mod.craft(
                amc_model, reserve.images, reserve.labels, attack,
                seed=derive_seed(cfg.seed, "squeeze", label),
            )
            table.set("target", "amc", label,
                      evaluate.error_rate(amc_model, batch.x_adv, reserve.labels))
            table.set("target", "amc+fs", label,
                      evaluate.error_rate(amc_model, batch.x_adv, reserve.labels,
                                          squeeze=cfg.squeeze_bits))
        report["tables"]["squeeze"] = table.to_dict()
        evaluate.emit_report(table, os.path.join(out_dir, f"squeeze.{fmt}"), fmt)
        figures.render_error_table(
            table, os.path.join(out_dir, "squeeze.png"),
            title="feature squeezing under strengthened attacks",
        )
    stage("squeeze", run_squeeze)

    # -- leave one attack out -------------------------------------------
    def run_loo():
        holdout_kind = cfg.cascade["order"][0]
        rest = [k for k in cfg.cascade["order"] if k != holdout_kind]
        loo_cfg = _cascade_config(cfg, order_kinds=rest,
                                  seed=derive_seed(cfg.seed, "cascade-loo"))
        table = evaluate.leave_one_out(
            m0, ("target", "undefended", m0), wb[holdout_kind],
            train, loo_cfg, reserve,
            seed=derive_seed(cfg.seed, "loo"), squeeze_bits=cfg.squeeze_bits,
        )
        report["tables"]["leave_one_out"] = table.to_dict()
        evaluate.emit_report(table, os.path.join(out_dir, f"leave_one_out.{fmt}"), fmt)
    stage("leave-one-out", run_loo)

    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report, f, sort_keys=True, indent=2)
    # timing lives outside report.json so reruns stay byte-identical
    with open(os.path.join(out_dir, "run_info.json"), "w") as f:
        json.dump({"wall_clock_seconds": time.time() - t_start,
                   "failures": len(failures)}, f, indent=2)
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="amclab",
        description="Adversarial robustness lab: attacks, cascades, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "attack", "suite"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        if name == "attack":
            p.add_argument("--model", required=True, help="model checkpoint path")
        if name == "suite":
            p.add_argument("--format", default="csv",
                           choices=("csv", "markdown", "json"))
    args = parser.parse_args(argv)

    try:
        if args.config:
            cfg = config_mod.load_config(args.config)
        else:
            cfg = config_mod.validate({})
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.raw["seed"] = args.seed
        out_dir = args.out or cfg.output_dir
        if args.command == "train":
            cmd_train(cfg, out_dir)
        elif args.command == "attack":
            cmd_attack(cfg, args.model, out_dir)
        else:
            report = cmd_suite(cfg, out_dir, fmt=args.format)
            if report["failures"]:
                for failure in report["failures"]:
                    print(f"stage failed: {failure['stage']}: {failure['error']}",
                          file=sys.stderr)
                return 1
    except (config_mod.ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
