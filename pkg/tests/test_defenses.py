import numpy as np
import pytest

from amclab import attacks, data, defenses, models

from conftest import mlp_spec


def fgsm_cfg(eps):
    return attacks.AttackConfig("fgsm", attacks.FgsmConfig(eps=eps))


def cascade_of(eps_list, alpha=0.5, epochs=2, seed=0):
    return defenses.CascadeConfig(
        attack_order=tuple(fgsm_cfg(e) for e in eps_list),
        adv=defenses.AdvTrainConfig(
            alpha=alpha,
            train=models.TrainConfig(epochs=epochs, learning_rate=0.1,
                                     batch_size=16, seed=seed),
        ),
    )


def small_task(seed=0):
    ds = data.synth_generate(3, 96, 8, seed=seed)
    m = models.build(models.target_spec((1, 8, 8), 3), seed=seed + 1)
    m = models.train_plain(m, ds, models.TrainConfig(6, 0.1, 16, seed + 2))
    return m, ds


def params_equal(a, b):
    return all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


class TestComposeBatch:
    def test_first_level_is_all_current(self):
        comp = defenses.compose_batch(1, 37, cascade_of([0.1, 0.2]))
        assert comp.counts == [37]

    def test_level_four_of_hundred_splits_80_7_7_6(self):
        comp = defenses.compose_batch(4, 100, cascade_of([0.1] * 4))
        assert comp.counts[-1] == 80  # current attack
        assert comp.counts[:-1] == [7, 7, 6]  # leftover favors earlier attacks
        assert comp.total == 100

    def test_counts_sum_to_batch_size_for_random_pairs(self):
        rng = np.random.default_rng(123)
        cascade = cascade_of([0.1] * 4)
        for _ in range(1000):
            i = int(rng.integers(1, 5))
            m = int(rng.integers(0, 257))
            comp = defenses.compose_batch(i, m, cascade)
            assert comp.total == m
            assert len(comp.counts) == i
            assert all(c >= 0 for c in comp.counts)

    def test_out_of_range_level_rejected(self):
        cascade = cascade_of([0.1, 0.2])
        with pytest.raises(ValueError):
            defenses.compose_batch(0, 10, cascade)
        with pytest.raises(ValueError):
            defenses.compose_batch(3, 10, cascade)

    def test_full_current_fraction_gives_no_replay(self):
        cascade = defenses.CascadeConfig(
            attack_order=(fgsm_cfg(0.1), fgsm_cfg(0.2)),
            adv=defenses.AdvTrainConfig(
                alpha=0.5, train=models.TrainConfig(1, 0.1, 16, 0)),
            current_fraction=1.0,
        )
        assert defenses.compose_batch(2, 50, cascade).counts == [0, 50]


class TestQuantize:
    def test_idempotent_exactly(self):
        x = np.random.default_rng(0).random((20, 1, 4, 4))
        for bits in (1, 3, 4, 8):
            q = defenses.quantize(x, bits)
            assert np.array_equal(defenses.quantize(q, bits), q)

    def test_monotone(self):
        x = np.sort(np.random.default_rng(1).random(500))
        q = defenses.quantize(x, 3)
        assert np.all(np.diff(q) >= 0)

    def test_endpoints_and_level_count(self):
        x = np.linspace(0, 1, 1000)
        q = defenses.quantize(x, 3)
        assert q[0] == 0.0 and q[-1] == 1.0
        assert len(np.unique(q)) == 2 ** 3

    def test_one_bit_is_binary(self):
        q = defenses.quantize(np.random.default_rng(2).random(100), 1)
        assert set(np.unique(q)) <= {0.0, 1.0}

    def test_bad_inputs_rejected(self):
        with pytest.raises(ValueError):
            defenses.quantize(np.array([0.5]), 0)
        with pytest.raises(ValueError):
            defenses.quantize(np.array([0.5]), 9)
        with pytest.raises(ValueError):
            defenses.quantize(np.array([1.5]), 4)

    def test_defended_predict_equals_predict_on_squeezed(self):
        m, ds = small_task(3)
        x = ds.images[:16]
        via_defense = defenses.defended_predict(m, x, squeeze=4)
        direct = models.predict_label(m, defenses.quantize(x, 4))
        assert np.array_equal(via_defense, direct)
        assert np.array_equal(defenses.defended_predict(m, x),
                              models.predict_label(m, x))


class TestAdversarialTrain:
    def test_alpha_one_reduces_to_plain_training_bit_for_bit(self):
        m, ds = small_task(4)
        cfg = defenses.AdvTrainConfig(
            alpha=1.0, train=models.TrainConfig(2, 0.1, 16, 9))
        hardened = defenses.adversarial_train(m, fgsm_cfg(0.25), ds, cfg)
        plain = models.train_plain(m, ds, cfg.train)
        assert params_equal(hardened, plain)

    def test_deterministic_under_equal_seeds(self):
        m, ds = small_task(5)
        cfg = defenses.AdvTrainConfig(
            alpha=0.5, train=models.TrainConfig(2, 0.1, 16, 9))
        a = defenses.adversarial_train(m, fgsm_cfg(0.25), ds, cfg)
        b = defenses.adversarial_train(m, fgsm_cfg(0.25), ds, cfg)
        assert params_equal(a, b)

    def test_hardening_lowers_own_attack_error(self):
        m, ds = small_task(6)
        holdout = data.synth_generate(3, 60, 8, seed=99)
        attack = fgsm_cfg(0.25)
        cfg = defenses.AdvTrainConfig(
            alpha=0.5, train=models.TrainConfig(6, 0.1, 16, 9))
        hardened = defenses.adversarial_train(m, attack, ds, cfg)

        def err(model):
            adv = attacks.craft(model, holdout.images, holdout.labels, attack)
            return float(adv.success.mean())

        assert err(hardened) < err(m)

    def test_source_model_is_untouched(self):
        m, ds = small_task(7)
        before = {k: v.copy() for k, v in m.params.items()}
        defenses.adversarial_train(
            m, fgsm_cfg(0.25), ds,
            defenses.AdvTrainConfig(alpha=0.5,
                                    train=models.TrainConfig(1, 0.1, 16, 0)))
        assert all(np.array_equal(before[k], m.params[k]) for k in before)

    def test_alpha_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            defenses.AdvTrainConfig(alpha=1.5,
                                    train=models.TrainConfig(1, 0.1, 16, 0))


class TestCascade:
    def test_single_level_cascade_equals_adversarial_training(self):
        m, ds = small_task(8)
        cascade = cascade_of([0.25], epochs=2, seed=5)
        via_cascade, _ = defenses.amc_train(m, ds, cascade)
        direct = defenses.adversarial_train(m, fgsm_cfg(0.25), ds, cascade.adv)
        assert params_equal(via_cascade, direct)

    def test_each_level_starts_from_previous_final(self, tmp_path):
        m, ds = small_task(9)
        cascade = cascade_of([0.1, 0.2, 0.3], epochs=1, seed=5)
        seen = {}

        def capture(level, current):
            seen[level] = {k: v.copy() for k, v in current.params.items()}
            return None  # keep white-box crafting

        defenses.amc_train(m, ds, cascade, crafter_for_level=capture,
                           checkpoint_dir=str(tmp_path))
        assert all(np.array_equal(seen[1][k], m.params[k]) for k in seen[1])
        for level in (2, 3):
            prev = models.load(tmp_path / f"cascade_level{level - 1}.amcm")
            assert all(
                np.array_equal(seen[level][k], prev.params[k]) for k in seen[level]
            )

    def test_no_transfer_ablation_differs_for_multiple_levels(self):
        m, ds = small_task(10)
        cascade = cascade_of([0.1, 0.3], epochs=1, seed=5)
        with_transfer, _ = defenses.amc_train(m, ds, cascade)
        without, _ = defenses.amc_train_no_transfer(m, ds, cascade)
        assert not params_equal(with_transfer, without)

    def test_cumulative_counts_non_increasing_in_attack_index(self):
        m, ds = small_task(11)
        cascade = cascade_of([0.1, 0.15, 0.2, 0.25], epochs=1, seed=5)
        _, log = defenses.amc_train(m, ds, cascade)
        counts = log["cumulative_attack_counts"]
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert log["realized_ratio"][-1] == 1.0
        assert len(log["levels"]) == 4

    def test_cascade_deterministic(self):
        m, ds = small_task(12)
        cascade = cascade_of([0.1, 0.2], epochs=1, seed=5)
        a, _ = defenses.amc_train(m, ds, cascade)
        b, _ = defenses.amc_train(m, ds, cascade)
        assert params_equal(a, b)
