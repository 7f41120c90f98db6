import numpy as np
import pytest

from amclab import attacks, blackbox, data, defenses, models


def trained_target(seed=0, side=8, ncls=3, n=96):
    ds = data.synth_generate(ncls, n, side, seed=seed)
    m = models.build(models.target_spec((1, side, side), ncls), seed=seed + 1)
    return models.train_plain(m, ds, models.TrainConfig(6, 0.1, 16, seed + 2)), ds


class TestInterfaces:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            blackbox.PredictionInterface(kind="logits")

    def test_bad_flip_probability_rejected(self):
        with pytest.raises(ValueError):
            blackbox.PredictionInterface(kind="noisy_label", flip_p=1.0)

    def test_label_interface_matches_model_argmax(self):
        target, ds = trained_target(1)
        oracle = blackbox.TargetOracle(target, blackbox.PredictionInterface("label"))
        out = oracle.query(ds.images[:20])
        assert np.array_equal(out, models.predict_label(target, ds.images[:20]))

    def test_zero_flip_noise_equals_label_interface(self):
        target, ds = trained_target(2)
        clean = blackbox.query(target, blackbox.PredictionInterface("label"),
                               ds.images)
        noisy = blackbox.query(
            target, blackbox.PredictionInterface("noisy_label", flip_p=0.0),
            ds.images, seed=7,
        )
        assert np.array_equal(clean, noisy)

    def test_flip_fraction_matches_probability(self):
        target, _ = trained_target(3)
        x = np.random.default_rng(0).random((10_000, 1, 8, 8))
        clean = blackbox.query(target, blackbox.PredictionInterface("label"), x)
        noisy = blackbox.query(
            target, blackbox.PredictionInterface("noisy_label", flip_p=0.2),
            x, seed=11,
        )
        flipped = float((clean != noisy).mean())
        assert abs(flipped - 0.2) < 0.02  # flips always land on another class

    def test_prob_vector_rows_are_distributions(self):
        target, ds = trained_target(4)
        probs = blackbox.query(target, blackbox.PredictionInterface("prob_vector"),
                               ds.images[:32])
        assert probs.shape == (32, 3)
        assert probs.min() > 0.0
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.array_equal(probs.argmax(axis=1),
                              models.predict_label(target, ds.images[:32]))


class TestOracleAccounting:
    def test_query_count_accumulates(self):
        target, ds = trained_target(5)
        oracle = blackbox.TargetOracle(target, blackbox.PredictionInterface())
        oracle.query(ds.images[:13])
        oracle.query(ds.images[:29])
        assert oracle.query_count == 42

    def test_proxy_training_accounts_every_pool_image(self):
        target, _ = trained_target(6)
        pool = data.synth_generate(3, 150, 8, seed=50)
        oracle = blackbox.TargetOracle(target, blackbox.PredictionInterface())
        _, qlog = blackbox.train_proxy(
            oracle, pool, tag="P'", cfg=models.TrainConfig(1, 0.1, 32, 0))
        assert qlog.count == 150
        assert oracle.query_count == 150


class TestProxyTraining:
    def test_proxy_mimics_target_well_above_chance(self):
        target, _ = trained_target(7)
        pool = data.synth_generate(3, 240, 8, seed=60)
        holdout = data.synth_generate(3, 120, 8, seed=61)
        oracle = blackbox.TargetOracle(target, blackbox.PredictionInterface())
        proxy, _ = blackbox.train_proxy(
            oracle, pool, tag="P''", cfg=models.TrainConfig(8, 0.1, 32, 1))
        agreement = float((
            models.predict_label(proxy.model, holdout.images)
            == models.predict_label(target, holdout.images)
        ).mean())
        assert agreement >= 1.0 / 3.0 + 0.2

    def test_soft_label_training_runs_on_prob_interface(self):
        target, _ = trained_target(8)
        pool = data.synth_generate(3, 120, 8, seed=70)
        oracle = blackbox.TargetOracle(
            target, blackbox.PredictionInterface("prob_vector"))
        proxy, qlog = blackbox.train_proxy(
            oracle, pool, tag="P'", cfg=models.TrainConfig(3, 0.1, 32, 2))
        assert qlog.count == 120
        assert proxy.model.spec == models.proxy_spec((1, 8, 8), 3)

    def test_empty_pool_rejected(self):
        target, _ = trained_target(9)
        oracle = blackbox.TargetOracle(target, blackbox.PredictionInterface())
        with pytest.raises(ValueError):
            blackbox.train_proxy(oracle, np.zeros((0, 1, 8, 8)), tag="P'",
                                 cfg=models.TrainConfig(1, 0.1, 32, 0))


class TestTransfer:
    def test_transfer_attack_is_whitebox_on_the_proxy(self):
        target, ds = trained_target(10)
        pool = data.synth_generate(3, 120, 8, seed=80)
        oracle = blackbox.TargetOracle(target, blackbox.PredictionInterface())
        proxy, _ = blackbox.train_proxy(
            oracle, pool, tag="P''", cfg=models.TrainConfig(4, 0.1, 32, 3))
        attack = attacks.AttackConfig("fgsm", attacks.FgsmConfig(eps=0.25))
        batch = blackbox.transfer_attack(proxy, attack, ds.images[:16],
                                         ds.labels[:16], seed=4)
        direct = attacks.craft(proxy.model, ds.images[:16], ds.labels[:16],
                               attack, seed=4)
        assert np.array_equal(batch.x_adv, direct.x_adv)

    def test_crafting_on_proxy_never_queries_the_target(self):
        target, ds = trained_target(11)
        pool = data.synth_generate(3, 120, 8, seed=81)
        oracle = blackbox.TargetOracle(target, blackbox.PredictionInterface())
        proxy, _ = blackbox.train_proxy(
            oracle, pool, tag="P''", cfg=models.TrainConfig(2, 0.1, 32, 3))
        before = oracle.query_count
        blackbox.transfer_attack(
            proxy, attacks.AttackConfig("pgm", attacks.PgmConfig(eps=0.2, nb_iter=3)),
            ds.images[:16], ds.labels[:16])
        assert oracle.query_count == before


class TestHardenViaProxy:
    def test_single_attack_defense_returns_new_model(self):
        target, ds = trained_target(12)
        pool = data.synth_generate(3, 120, 8, seed=90)
        attack = attacks.AttackConfig("fgsm", attacks.FgsmConfig(eps=0.25))
        adv_cfg = defenses.AdvTrainConfig(
            alpha=0.5, train=models.TrainConfig(1, 0.1, 32, 5))
        hardened, info = blackbox.harden_via_proxy(
            target, pool, (attack, adv_cfg), ds,
            blackbox.PredictionInterface(), models.TrainConfig(2, 0.1, 32, 6))
        assert info["proxy_retrainings"] == 1
        assert info["proxy_query_counts"] == [120]
        assert any(
            not np.array_equal(hardened.params[k], target.params[k])
            for k in target.params
        )

    def test_cascade_defense_retrains_proxy_per_level(self):
        target, ds = trained_target(13)
        pool = data.synth_generate(3, 120, 8, seed=91)
        cascade = defenses.CascadeConfig(
            attack_order=(
                attacks.AttackConfig("fgsm", attacks.FgsmConfig(eps=0.2)),
                attacks.AttackConfig("fgsm", attacks.FgsmConfig(eps=0.3)),
            ),
            adv=defenses.AdvTrainConfig(
                alpha=0.5, train=models.TrainConfig(1, 0.1, 32, 7)),
        )
        _, info = blackbox.harden_via_proxy(
            target, pool, cascade, ds,
            blackbox.PredictionInterface(), models.TrainConfig(1, 0.1, 32, 8))
        assert info["proxy_retrainings"] == 2
        assert len(info["proxy_query_counts"]) == 2
        assert len(info["cascade_log"]["levels"]) == 2
