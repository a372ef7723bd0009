import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import FIXTURES, random_mlp, random_taxonomy
from superclass_attack import attacks
from superclass_attack.attacks import (
    ALL,
    AttackConfig,
    attack_rng,
    is_superclass_adversarial,
    iterative_attack,
    non_iterative_attack,
    pgd,
    project_linf,
    standard_attack,
    superclass_success,
    target_order,
)
from superclass_attack.diffmodel import Classifier, Linear, forward, input_gradient, load_weights
from superclass_attack.harness import load_dataset
from superclass_attack.losses import LossSpec
from superclass_attack.taxonomy import Taxonomy, read_taxonomy

PAIRS = Taxonomy.from_groups([[0, 1], [2, 3]])
IDENTITY4 = Classifier((Linear(np.eye(4), np.zeros(4)),))


def test_projection_examples():
    np.testing.assert_allclose(project_linf([0.5], [0.9], 0.1), [0.6])
    np.testing.assert_allclose(project_linf([0.05], [-0.2], 0.1), [0.0])
    np.testing.assert_array_equal(project_linf([0.5, 0.5], [0.52, 0.45], 0.1), [0.52, 0.45])
    with pytest.raises(ValueError):
        project_linf([0.5], [0.5, 0.5], 0.1)


unit = st.floats(0, 1)


@given(st.lists(st.tuples(unit, st.floats(-2, 3)), min_size=1, max_size=8), st.floats(1e-3, 0.5))
def test_projection_idempotent_and_bounded(pairs, eps):
    x0 = np.array([a for a, _ in pairs])
    x = np.array([b for _, b in pairs])
    p = project_linf(x0, x, eps)
    np.testing.assert_array_equal(project_linf(x0, p, eps), p)
    assert np.all(np.abs(p - x0) <= eps + 1e-12)
    assert np.all((p >= 0) & (p <= 1))


def test_superclass_predicate():
    x = np.array([0.9, 0.1, 0.1, 0.1])
    assert not is_superclass_adversarial(IDENTITY4, x, [0.1, 0.9, 0.1, 0.1], 0, PAIRS, 1.0)
    assert is_superclass_adversarial(IDENTITY4, x, [0.5, 0.1, 0.6, 0.1], 0, PAIRS, 0.5)
    # same move but the perturbation is twice the budget
    assert not is_superclass_adversarial(IDENTITY4, x, [0.5, 0.1, 0.6, 0.1], 0, PAIRS, 0.25)


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(0.0, 0.1, 10)
    with pytest.raises(ValueError):
        AttackConfig(0.1, 0.0, 10)
    with pytest.raises(ValueError):
        AttackConfig(0.1, 0.1, 0)
    with pytest.raises(ValueError):
        AttackConfig(0.1, 0.1, 10, k=0)
    with pytest.raises(ValueError):
        AttackConfig(0.1, 0.1, 10, norm="l2")


def test_pgd_single_step_example():
    m = Classifier((Linear([[1.0], [-1.0]], [0.0, 0.0]),))
    cfg = AttackConfig(epsilon=0.1, alpha=0.1, steps=1, random_init=False)
    out = pgd(m, [0.5], 0, LossSpec("standard", "ce"), cfg)
    np.testing.assert_allclose(out.adversarial, [0.4])
    assert out.steps_used == 1 and out.attempts_used == 1


def test_zero_gradient_model_stays_at_start():
    m = Classifier((Linear(np.zeros((4, 3)), np.array([1.0, 0, 0, 0])),))
    x = np.array([0.3, 0.4, 0.5])
    cfg = AttackConfig(0.1, 0.02, 20, seed=3)
    rng_copy = attack_rng(3, 0, 0)
    out = non_iterative_attack(m, x, 0, PAIRS, cfg, "sum", "weighted-cw")
    start = project_linf(x, x + rng_copy.uniform(-0.1, 0.1, 3), 0.1)
    np.testing.assert_array_equal(out.adversarial, start)
    assert not out.success and out.steps_used == 20


def test_fgsm_is_one_sign_step():
    rng = np.random.default_rng(2)
    m = random_mlp(rng, 5, 4)
    x = rng.uniform(0.2, 0.8, 5)
    spec = LossSpec("sum", "cw")
    out = pgd(m, x, 1, spec, AttackConfig(0.05, 0.05, 1, random_init=False), taxonomy=PAIRS)
    expected = project_linf(x, x + 0.05 * np.sign(input_gradient(m, x, spec, 1, PAIRS)), 0.05)
    np.testing.assert_array_equal(out.adversarial, expected)


def test_raw_gradient_flag():
    rng = np.random.default_rng(5)
    m = random_mlp(rng, 3, 4)
    x = np.array([0.5, 0.5, 0.5])
    spec = LossSpec("standard", "ce")
    out = pgd(m, x, 0, spec, AttackConfig(1.0, 1e-3, 1, random_init=False, raw_gradient=True))
    np.testing.assert_allclose(out.adversarial, x + 1e-3 * input_gradient(m, x, spec, 0))


def test_non_finite_gradient_aborts(monkeypatch):
    def broken(*args, **kw):
        return 0.0, np.full(4, np.nan)

    monkeypatch.setattr(attacks, "evaluate", broken)
    out = pgd(IDENTITY4, np.full(4, 0.5), 0, LossSpec("standard", "ce"), AttackConfig(0.1, 0.01, 5, random_init=False))
    assert out.aborted and not out.success


def test_determinism():
    rng = np.random.default_rng(8)
    m = random_mlp(rng, 4, 6, hidden=(10,))
    t = random_taxonomy(rng, 6)
    x = rng.uniform(size=4)
    cfg = AttackConfig(0.2, 0.05, 30, seed=99)
    a = iterative_attack(m, x, 0, t, cfg, "cw", "sorted", example_index=4)
    b = iterative_attack(m, x, 0, t, cfg, "cw", "sorted", example_index=4)
    np.testing.assert_array_equal(a.adversarial, b.adversarial)
    assert (a.success, a.steps_used, a.attempts_used, a.targets) == (b.success, b.steps_used, b.attempts_used, b.targets)


def test_rng_streams_are_keyed():
    a = attack_rng(1, 2, 3).uniform(size=4)
    np.testing.assert_array_equal(a, attack_rng(1, 2, 3).uniform(size=4))
    assert not np.array_equal(a, attack_rng(1, 2, 4).uniform(size=4))
    assert not np.array_equal(a, attack_rng(1, 3, 3).uniform(size=4))


def test_target_orders():
    t = Taxonomy.from_groups([[0, 1, 2], [3, 4, 5]])
    logits = np.array([9.0, 0.0, 0.0, 0.5, 2.0, 1.0])
    assert target_order(logits, t, 0, "sorted") == [4, 5, 3]
    assert target_order(logits, t, 0, "sequence") == [3, 4, 5]
    assert target_order(logits, t, 0, "sorted", k=2) == [4, 5]
    assert target_order(logits, t, 0, "sequence", k=2) == [3, 4]
    assert target_order(logits, t, 0, "sorted", k=10) == [4, 5, 3]


def test_singleton_sum_ce_matches_standard_pgd():
    rng = np.random.default_rng(12)
    for _ in range(20):
        m = random_mlp(rng, 4, 5, hidden=(8,))
        x = rng.uniform(size=4)
        cfg = AttackConfig(0.1, 0.02, 25, seed=int(rng.integers(1000)))
        a = non_iterative_attack(m, x, 2, Taxonomy.singletons(5), cfg, "sum", "ce", example_index=7)
        b = standard_attack(m, x, 2, cfg, "ce", example_index=7)
        np.testing.assert_array_equal(a.adversarial, b.adversarial)
        assert (a.success, a.steps_used) == (b.success, b.steps_used)


def test_early_stop_soundness_and_bounds():
    rng = np.random.default_rng(21)
    for i in range(60):
        m = random_mlp(rng, 3, 6, hidden=(8,), scale=3.0)
        t = random_taxonomy(rng, 6)
        x = rng.uniform(size=3)
        y = int(np.argmax(forward(m, x)))
        cfg = AttackConfig(float(rng.uniform(0.05, 0.4)), 0.05, 10, k=int(rng.integers(1, 4)), seed=i)
        out = iterative_attack(m, x, y, t, cfg, "ce", "sorted", i)
        assert np.max(np.abs(out.adversarial - x)) <= cfg.epsilon + 1e-9
        assert out.attempts_used <= min(cfg.k, 6 - len(t.groups[t.group_index(y)]))
        assert out.steps_used <= cfg.steps * out.attempts_used
        if out.success:
            assert is_superclass_adversarial(m, x, out.adversarial, y, t, cfg.epsilon)


@pytest.fixture(scope="module")
def toy8():
    d = FIXTURES / "toy8"
    return load_weights(d / "model.samw"), load_dataset(d / "test.sads"), read_taxonomy(d / "taxonomy.json")


def test_iterative_matches_exhaustive_oracle(toy8):
    model, ds, tax = toy8
    cfg = AttackConfig(0.1, 0.025, 100, k=ALL, seed=0)
    for i in range(0, len(ds), 8):
        x, y = ds.features[i], int(ds.labels[i])
        out = iterative_attack(model, x, y, tax, cfg, "ce", "sorted", i)
        success = superclass_success(x, y, tax, cfg.epsilon)
        per_target = [
            pgd(model, x, y, LossSpec("targeted", "ce", t), cfg, success, attack_rng(0, i, t + 1)).success
            for t in sorted(set(range(8)) - tax.groups[tax.group_index(y)])
        ]
        assert out.success == any(per_target)
        seq = iterative_attack(model, x, y, tax, cfg, "ce", "sequence", i)
        assert seq.success == out.success
