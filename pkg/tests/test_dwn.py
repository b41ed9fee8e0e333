"""Core estimator: thresholds, encoders, LUT forwards, head, loss."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glance import dwn
from glance.errors import ConfigError, DataError


def small_model(seed=0, f_side=2, pool=1, therm=2, luts=4, bits=3, temperature=0.5):
    cfg = dwn.DwnConfig(
        input_size=f_side * pool, pool_k=pool, therm_bits=therm,
        num_luts=luts, addr_bits=bits, temperature=temperature, seed=seed,
    )
    model = dwn.init_model(cfg)
    rng = np.random.default_rng(seed + 100)
    feats = rng.normal(0, 1, size=(50, cfg.num_features))
    model.thresholds = dwn.fit_thresholds(feats, therm)
    model.head.W = rng.normal(0, 0.5, size=(3, luts))
    model.head.c = rng.normal(0, 0.5, size=3)
    return model


# ---------------------------------------------------------------------------
# thresholds

def test_quantile_levels_k4():
    # 10k uniform samples: thresholds land at the k/(K+1) quantiles
    rng = np.random.default_rng(0)
    feats = rng.uniform(0, 1, size=(10000, 3))
    table = dwn.fit_thresholds(feats, 4)
    for k, level in enumerate([0.2, 0.4, 0.6, 0.8]):
        assert np.allclose(table.tau[:, k], level, atol=0.02)


def test_fit_thresholds_median_interpolation():
    feats = np.arange(1, 11, dtype=float).reshape(10, 1)
    table = dwn.fit_thresholds(feats, 1)
    assert table.tau[0, 0] == pytest.approx(5.5)


def test_fit_thresholds_matches_sort_oracle():
    # brute-force oracle: sort and linearly interpolate order statistics
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(37, 5))
    k = 3
    table = dwn.fit_thresholds(feats, k)
    for j in range(5):
        vals = np.sort(feats[:, j])
        for ki in range(k):
            q = (ki + 1) / (k + 1)
            pos = q * (len(vals) - 1)
            lo, hi = int(math.floor(pos)), int(math.ceil(pos))
            expect = vals[lo] + (pos - lo) * (vals[hi] - vals[lo])
            assert table.tau[j, ki] == pytest.approx(expect, abs=1e-12)


def test_fit_thresholds_degenerate_feature_flagged():
    feats = np.zeros((20, 2))
    feats[:, 1] = np.linspace(0, 1, 20)
    table = dwn.fit_thresholds(feats, 4)
    assert np.all(table.tau[0] == 0.0)
    assert table.degenerate.tolist() == [True, False]


def test_fit_thresholds_rows_sorted():
    rng = np.random.default_rng(2)
    table = dwn.fit_thresholds(rng.normal(size=(60, 8)), 4)
    assert np.all(np.diff(table.tau, axis=1) >= 0)


def test_fit_thresholds_needs_enough_samples():
    with pytest.raises(DataError):
        dwn.fit_thresholds(np.zeros((3, 2)), 4)


# ---------------------------------------------------------------------------
# preprocess

def test_preprocess_zero_image():
    assert np.all(dwn.preprocess(np.zeros((8, 8)), 8, 2) == 0.0)


def test_preprocess_feature_count_default_config():
    cfg = dwn.DwnConfig()
    assert cfg.num_features == 196
    feats = dwn.preprocess(np.zeros((56, 56)), 56, 4)
    assert feats.shape == (196,)


def test_preprocess_constant_tanh():
    feats = dwn.preprocess(np.ones((4, 4)), 4, 2)
    assert feats.shape == (4,)
    assert np.allclose(feats, math.tanh(1.0))


def test_preprocess_rejects_wrong_shape():
    with pytest.raises(DataError):
        dwn.preprocess(np.zeros((5, 4)), 4, 2)


def test_preprocess_matches_manual_pooling():
    rng = np.random.default_rng(3)
    img = rng.uniform(-1, 1, size=(6, 6))
    feats = dwn.preprocess(img, 6, 3)
    manual = [np.tanh(img[r : r + 3, c : c + 3]).mean() for r in (0, 3) for c in (0, 3)]
    assert np.allclose(feats, manual)


# ---------------------------------------------------------------------------
# encoders

def test_soft_bit_at_threshold_is_half():
    table = dwn.ThresholdTable(tau=np.array([[0.3]]))
    assert dwn.encode_soft(np.array([0.3]), table, 0.5)[0, 0] == pytest.approx(0.5)


def test_soft_bit_scalar_logistic():
    table = dwn.ThresholdTable(tau=np.array([[0.0]]))
    got = dwn.encode_soft(np.array([1.0]), table, 0.5)[0, 0]
    assert got == pytest.approx(1.0 / (1.0 + math.exp(-2.0)), abs=1e-12)


def test_soft_bit_saturates_at_low_temperature():
    table = dwn.ThresholdTable(tau=np.array([[0.0]]))
    assert dwn.encode_soft(np.array([0.5]), table, 1e-6)[0, 0] == pytest.approx(1.0)


def test_hard_bits_below_and_above():
    table = dwn.ThresholdTable(tau=np.array([[0.2, 0.5, 0.9]]))
    assert dwn.encode_hard(np.array([0.0]), table).tolist() == [0, 0, 0]
    assert dwn.encode_hard(np.array([1.0]), table).tolist() == [1, 1, 1]


def test_hard_bit_tie_is_one():
    table = dwn.ThresholdTable(tau=np.array([[0.5]]))
    assert dwn.encode_hard(np.array([0.5]), table)[0] == 1


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_thermometer_monotone_pattern(seed):
    # sorted thresholds never produce a 1 after a 0 in threshold order
    rng = np.random.default_rng(seed)
    table = dwn.fit_thresholds(rng.normal(size=(30, 4)), 3)
    f = rng.normal(size=4)
    bits = dwn.encode_hard(f, table).reshape(4, 3).astype(int)
    direct = (f[:, None] >= table.tau).astype(int)  # comparison oracle
    assert np.array_equal(bits, direct)
    for row in bits:
        assert np.all(np.diff(row) <= 0)


# ---------------------------------------------------------------------------
# LUT forwards

def test_hard_lookup_zero_bits_reads_address_zero():
    m = small_model()
    bits = np.zeros(m.config.num_bits, dtype=np.uint8)
    z = dwn.lut_forward_hard(bits, m.luts, m.cmap)
    assert np.array_equal(z, m.luts.entries[:, 0])


def test_hard_lookup_matches_address_assembly_oracle():
    # independent oracle: build each address from the documented MSB-first
    # bit order by string concatenation
    m = small_model(bits=3)
    rng = np.random.default_rng(5)
    for _ in range(20):
        bits = rng.integers(0, 2, size=m.config.num_bits).astype(np.uint8)
        z = dwn.lut_forward_hard(bits, m.luts, m.cmap)
        for i in range(m.config.num_luts):
            addr = int("".join(str(bits[b]) for b in m.cmap.pi[i]), 2)
            assert z[i] == m.luts.entries[i, addr]


def test_default_config_lookup_count():
    cfg = dwn.DwnConfig()
    model = dwn.init_model(cfg)
    rng = np.random.default_rng(0)
    model.thresholds = dwn.fit_thresholds(rng.normal(size=(40, 196)), 4)
    cost = dwn.InferenceCost()
    dwn.infer_hard(model, rng.uniform(-1, 1, (56, 56)), cost)
    assert cost.lookups == 131
    assert cost.macs == 393


def test_soft_lookup_two_term_expansion():
    cfg = dwn.DwnConfig(input_size=1, pool_k=1, therm_bits=1, num_luts=1, addr_bits=1, seed=0)
    luts = dwn.LutBank(entries=np.array([[2.0, 5.0]]))
    cmap = dwn.ConnectionMap(pi=np.array([[0]]), seed=0)
    soft = np.array([[0.25]])
    z = dwn.lut_forward_soft(soft, luts, cmap)
    assert z[0] == pytest.approx(0.75 * 2.0 + 0.25 * 5.0)
    assert cfg.num_bits == 1


def test_soft_lookup_degenerate_bits_equal_hard():
    m = small_model()
    rng = np.random.default_rng(6)
    bits = rng.integers(0, 2, size=m.config.num_bits).astype(np.uint8)
    soft = bits.reshape(m.config.num_features, m.config.therm_bits).astype(float)
    z_soft = dwn.lut_forward_soft(soft, m.luts, m.cmap)
    z_hard = dwn.lut_forward_hard(bits, m.luts, m.cmap)
    assert np.allclose(z_soft, z_hard, atol=1e-12)


def brute_force_expectation(soft_flat, entries, pi):
    """Explicit sum over all 2^n binary addresses."""
    l, n = pi.shape
    out = np.zeros(l)
    for i in range(l):
        p = soft_flat[pi[i]]
        for a in range(2**n):
            w = 1.0
            for m in range(n):
                bit = (a >> (n - 1 - m)) & 1
                w *= p[m] if bit else (1.0 - p[m])
            out[i] += entries[i, a] * w
    return out


@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
@settings(max_examples=30, deadline=None)
def test_soft_lookup_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    f, k, l = 4, 2, 3
    b = f * k
    pi = np.stack([rng.choice(b, size=n, replace=False) for _ in range(l)])
    entries = rng.normal(size=(l, 2**n))
    soft = rng.uniform(0.01, 0.99, size=(f, k))
    z = dwn.lut_forward_soft(soft, dwn.LutBank(entries), dwn.ConnectionMap(pi, seed=0))
    expect = brute_force_expectation(soft.reshape(-1), entries, pi)
    assert np.allclose(z, expect, atol=1e-10)


def test_saturated_bits_localize_entry_gradients():
    # near-saturated soft bits concentrate the address weights on the hard
    # address, so effectively only the accessed cell of each LUT trains
    m = small_model(bits=3)
    rng = np.random.default_rng(8)
    bits = rng.integers(0, 2, size=m.config.num_bits)
    soft = np.where(bits == 1, 0.9999, 0.0001).reshape(
        m.config.num_features, m.config.therm_bits
    )
    sel = soft.reshape(-1)[m.cmap.pi]
    weights = dwn._address_weights(sel)          # = dz_i/d entries[i]
    hard_addr = dwn.hard_addresses(bits.astype(np.uint8), m.cmap)
    for i in range(m.config.num_luts):
        assert weights[i, hard_addr[i]] > 0.999
        assert weights[i].sum() == pytest.approx(1.0)


def test_soft_lookup_entry_gradient_finite_difference():
    m = small_model(bits=3)
    rng = np.random.default_rng(7)
    soft = rng.uniform(0.05, 0.95, size=(m.config.num_features, m.config.therm_bits))
    h = 1e-4
    for i, a in [(0, 1), (2, 5), (3, 0)]:
        m.luts.entries[i, a] += h
        zp = dwn.lut_forward_soft(soft, m.luts, m.cmap)[i]
        m.luts.entries[i, a] -= 2 * h
        zm = dwn.lut_forward_soft(soft, m.luts, m.cmap)[i]
        m.luts.entries[i, a] += h
        fd = (zp - zm) / (2 * h)
        sel = soft.reshape(-1)[m.cmap.pi[i]]
        analytic = dwn._address_weights(sel[None, :])[0, a]
        assert abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-6) < 1e-4


# ---------------------------------------------------------------------------
# head, loss, metrics

def test_head_normalizes_345():
    head = dwn.LinearHead(W=np.eye(3), c=np.zeros(3))
    ghat, degenerate = dwn.head_forward(np.array([3.0, 0.0, 4.0]), head)
    assert not degenerate
    assert np.allclose(ghat, [0.6, 0.0, 0.8])


def test_head_zero_weight_bias_only():
    head = dwn.LinearHead(W=np.zeros((3, 5)), c=np.array([0.0, 0.0, 2.0]))
    ghat, degenerate = dwn.head_forward(np.zeros(5), head)
    assert not degenerate
    assert np.allclose(ghat, [0.0, 0.0, 1.0])


def test_head_degenerate_guard():
    head = dwn.LinearHead(W=np.zeros((3, 5)), c=np.zeros(3))
    ghat, degenerate = dwn.head_forward(np.ones(5), head)
    assert degenerate
    assert np.allclose(ghat, [0.0, 0.0, 1.0])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_head_output_always_unit(seed):
    rng = np.random.default_rng(seed)
    head = dwn.LinearHead(W=rng.normal(size=(3, 4)), c=rng.normal(size=3))
    ghat, degenerate = dwn.head_forward(rng.normal(size=4), head)
    assert abs(np.linalg.norm(ghat) - 1.0) < 1e-6


def test_normalize_target_cases():
    assert np.allclose(dwn.normalize_target([0, 0, 0]), [0, 0, 1])
    assert np.allclose(dwn.normalize_target([0, 2, 0]), [0, 1, 0], atol=1e-7)
    assert np.allclose(dwn.normalize_target([1, 1, 1]), np.full(3, 1 / math.sqrt(3)), atol=1e-7)


def test_loss_values():
    g = np.array([0.0, 0.0, 1.0])
    assert dwn.loss(g, g, 0.3) == pytest.approx(0.0)
    assert dwn.loss(-g, g, 0.3) == pytest.approx(0.3 * 4 + 0.7 * 2)
    ortho = np.array([1.0, 0.0, 0.0])
    assert dwn.loss(ortho, g, 0.3) == pytest.approx(0.3 * 2 + 0.7 * 1)


def test_angular_error_values():
    a = np.array([0.0, 0.0, 1.0])
    assert dwn.angular_error(a, a) == pytest.approx(0.0)
    assert dwn.angular_error(a, np.array([1.0, 0.0, 0.0])) == pytest.approx(90.0)
    b = np.array([math.sin(math.radians(8.32)), 0.0, math.cos(math.radians(8.32))])
    assert dwn.angular_error(a, b) == pytest.approx(8.32, abs=1e-9)


# ---------------------------------------------------------------------------
# complexity + init

def test_complexity_default_config():
    cx = dwn.count_complexity(dwn.DwnConfig())
    assert (cx.params, cx.macs, cx.lookups) == (9564, 393, 131)


def test_complexity_minimal_config():
    cfg = dwn.DwnConfig(input_size=2, pool_k=2, therm_bits=1, num_luts=1, addr_bits=1)
    cx = dwn.count_complexity(cfg)
    assert cx.params == 1 + 2 + 6 == 9
    assert (cx.macs, cx.lookups) == (3, 1)


def test_default_bit_count():
    assert dwn.DwnConfig().num_bits == 784


def test_init_deterministic_and_seed_sensitive():
    cfg = dwn.DwnConfig(seed=42)
    a, b = dwn.init_model(cfg), dwn.init_model(cfg)
    assert np.array_equal(a.cmap.pi, b.cmap.pi)
    assert np.array_equal(a.luts.entries, b.luts.entries)
    c = dwn.init_model(dwn.DwnConfig(seed=43))
    assert not np.array_equal(a.cmap.pi, c.cmap.pi)


def test_init_no_replacement_within_lut():
    m = dwn.init_model(dwn.DwnConfig(seed=3))
    for row in m.cmap.pi:
        assert len(set(row.tolist())) == len(row)
        assert row.min() >= 0 and row.max() < m.config.num_bits


def test_init_rejects_oversized_address():
    with pytest.raises(ConfigError):
        dwn.DwnConfig(input_size=2, pool_k=2, therm_bits=1, num_luts=1, addr_bits=2).validate()


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        dwn.DwnConfig(input_size=55).validate()
    with pytest.raises(ConfigError):
        dwn.DwnConfig(loss_lambda=1.0).validate()
    with pytest.raises(ConfigError):
        dwn.DwnConfig(addr_bits=0).validate()


# ---------------------------------------------------------------------------
# soft/hard consistency and instrumentation

def test_soft_hard_consistency_far_from_thresholds():
    # features at least 10*T from every threshold: agreement within 1e-3
    rng = np.random.default_rng(9)
    checked = 0
    for trial in range(1000):
        m = small_model(seed=trial % 7, bits=3, temperature=0.5)
        t = m.config.temperature
        margin = 10.0 * t
        feats = np.where(
            rng.random(m.config.num_features) < 0.5,
            m.thresholds.tau.min(axis=1) - margin,
            m.thresholds.tau.max(axis=1) + margin,
        )
        soft = dwn.encode_soft(feats, m.thresholds, t)
        hard = dwn.encode_hard(feats, m.thresholds)
        z_soft = dwn.lut_forward_soft(soft, m.luts, m.cmap)
        z_hard = dwn.lut_forward_hard(hard, m.luts, m.cmap)
        assert np.max(np.abs(z_soft - z_hard)) < 1e-3
        checked += 1
    assert checked == 1000


def test_instrumented_path_matches_vectorized():
    cfg = dwn.DwnConfig(seed=5)
    m = dwn.init_model(cfg)
    rng = np.random.default_rng(11)
    m.thresholds = dwn.fit_thresholds(rng.normal(size=(50, 196)), 4)
    m.head.W = rng.normal(0, 0.3, size=(3, 131))
    img = rng.uniform(-1, 1, (56, 56))
    cost = dwn.InferenceCost()
    a = dwn.infer_hard(m, img, cost)
    b = dwn.infer_hard(m, img)
    cx = dwn.count_complexity(cfg)
    assert np.allclose(a, b)
    assert cost.lookups == cx.lookups
    assert cost.macs == cx.macs
