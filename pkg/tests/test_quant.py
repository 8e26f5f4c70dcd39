import math

import numpy as np
import pytest

from mqsim.netgraph import ConfigError, LayerKind
from mqsim.quant import (
    APOT_CODE_BITS,
    APoTCodes,
    Granularity,
    QuantParams,
    SchemeChoice,
    apot_codebook,
    apot_scale,
    calibrate_affine,
    dequantize_uniform,
    pot_codebook,
    quantize_apot,
    quantize_pot,
    quantize_uniform,
    scheme_errors,
    select_scheme,
    select_schemes,
)
from mqsim.quant.plan import assign_m2q, parse_ratio, plan_from_json, plan_to_json, read_plan, uniform_plan, write_plan


# ---------------------------------------------------------------- oracles


def minmax_scan(tensors):
    lo, hi = math.inf, -math.inf
    for t in tensors:
        for v in np.asarray(t, dtype=np.float64).ravel().tolist():
            lo = v if v < lo else lo
            hi = v if v > hi else hi
    return lo, hi


def affine_oracle(lo, hi, bits):
    qmax = 2**bits - 1
    if hi == lo:
        return 1.0, min(max(round(-lo), 0), qmax)
    s = (hi - lo) / qmax
    return s, min(max(round(-lo / s), 0), qmax)


def quantize_scalar(x, s, z, bits):
    return min(max(round(x / s) + z, 0), 2**bits - 1)


def uniform_roundtrip_oracle(filt, bits=8):
    s, z = affine_oracle(min(filt), max(filt), bits)
    return [(quantize_scalar(v, s, z, bits) - z) * s for v in filt]


def apot_nearest_oracle(x, scale):
    """Exhaustive search over every (sign, p1, p2) plus zero; ties to the smaller magnitude."""
    best, best_err = 0.0, abs(x)
    for p1 in (0, -1, -2, -3):
        for p2 in (-4, -5, -6, -7):
            for s in (1, -1):
                v = s * scale * (2.0**p1 + 2.0**p2)
                err = abs(x - v)
                if err < best_err or (err == best_err and abs(v) < abs(best)):
                    best, best_err = v, err
    return best


def apot_roundtrip_oracle(filt):
    top = max(abs(v) for v in filt)
    scale = top / 1.0625 if top > 0 else 1.0
    return [apot_nearest_oracle(v, scale) for v in filt]


def mse(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b)) / len(a)


def random_filters(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        size = int(rng.integers(4, 65))
        if i % 2:
            out.append(rng.uniform(-1, 1, size) * rng.uniform(0.01, 3))
        else:
            out.append(rng.normal(0, rng.uniform(0.01, 3), size))
    return out


# ---------------------------------------------------------------- calibration


def test_symmetric_range_example():
    p = calibrate_affine(np.array([-1.0, 0.3, 1.0]), 8)
    assert float(p.scale) == 2 / 255
    assert int(p.zero_point) == 128


def test_zero_min_gives_zero_point_zero():
    for s in (1e-3, 0.5, 7.0):
        p = calibrate_affine(np.array([0.0, 3 * s, 255 * s]), 8)
        assert int(p.zero_point) == 0
        assert float(p.scale) == pytest.approx(s)


def test_pooled_calibration_matches_minmax_scan():
    rng = np.random.default_rng(7)
    tensors = [rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 4), size=rng.integers(1, 40)) for _ in range(1024)]
    p = calibrate_affine(tensors, 8)
    s, z = affine_oracle(*minmax_scan(tensors), 8)
    assert float(p.scale) == s
    assert int(p.zero_point) == z


@pytest.mark.parametrize("bits", [3, 4, 8])
def test_per_filter_calibration_matches_scan(bits):
    rng = np.random.default_rng(bits)
    w = rng.normal(size=(12, 3, 3))
    p = calibrate_affine(w, bits, Granularity.PER_FILTER)
    for f in range(12):
        s, z = affine_oracle(*minmax_scan([w[f]]), bits)
        assert p.scale[f] == s and p.zero_point[f] == z


def test_constant_tensor_does_not_crash():
    p = calibrate_affine(np.full(5, 0.25), 8)
    assert float(p.scale) == 1.0
    q = quantize_uniform(np.full(5, 0.25), p)
    assert np.all(dequantize_uniform(q, p) == 0.0)
    p2 = calibrate_affine(np.full(5, -3.0), 8)
    assert float(dequantize_uniform(quantize_uniform(np.array([-3.0]), p2), p2)[0]) == -3.0


@pytest.mark.parametrize("bits", [2, 9])
def test_bit_width_bounds(bits):
    with pytest.raises(ConfigError):
        calibrate_affine(np.array([0.0, 1.0]), bits)


def test_quantize_zero_hits_zero_point():
    p = QuantParams(np.float64(0.37), np.int64(128), 8)
    assert int(quantize_uniform(np.array(0.0), p)) == 128


def test_saturation():
    p = QuantParams(np.float64(0.1), np.int64(10), 8)
    assert int(quantize_uniform(np.array(1e9), p)) == 255
    assert int(quantize_uniform(np.array(-1e9), p)) == 0


def test_quantize_uniform_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 2, size=4000)
    x[:200] = np.round(x[:200] * 8) / 8  # exact half steps exercise the tie rule
    p = QuantParams(np.float64(0.25), np.int64(100), 8)
    got = quantize_uniform(x, p)
    want = [quantize_scalar(v, 0.25, 100, 8) for v in x.tolist()]
    assert got.tolist() == want


def test_half_to_even_ties():
    p = QuantParams(np.float64(1.0), np.int64(0), 8)
    assert quantize_uniform(np.array([0.5, 1.5, 2.5, 3.5]), p).tolist() == [0, 2, 2, 4]


# ---------------------------------------------------------------- PoT


def test_pot_worked_example():
    c = quantize_pot(np.array([-0.26]), 5, scale=2.0)
    assert int(c.sign[0]) == -1
    assert int(c.exponent[0]) == -3


def test_pot_max_element_gets_p0():
    w = np.array([-0.5, 0.1, 1.5])
    c = quantize_pot(w, 4, scale=1.5)
    assert int(c.exponent[2]) == 0


def test_pot_default_scale_is_range():
    w = np.array([-0.5, 0.1, 1.5])
    assert float(quantize_pot(w, 4).scale[0]) == 2.0


def test_pot_zero_weight():
    c = quantize_pot(np.array([0.0, 1.0]), 3, scale=1.0)
    assert int(c.sign[0]) == 1 and int(c.exponent[0]) == -7


@pytest.mark.parametrize("bits", [2, 3, 5])
def test_pot_against_codebook_search(bits):
    """Log-domain rounding equals nearest-codeword search except in the documented band.

    Between 2**k and 2**(k+1) the log rule switches at sqrt(2) * 2**k while the
    nearest codeword switches at 1.5 * 2**k, so the two disagree exactly when
    |w/S| / 2**k lies in (sqrt 2, 1.5).
    """
    rng = np.random.default_rng(bits)
    w = rng.uniform(-1, 1, 5000)
    s = 1.0
    c = quantize_pot(w, bits, scale=s)
    book = pot_codebook(bits, s)
    lo = -(2**bits) + 1
    disagree = 0
    for v, sg, p in zip(w.tolist(), c.sign.tolist(), c.exponent.tolist()):
        nearest = book[np.argmin(np.abs(book - v))]
        got = sg * s * 2.0**p
        assert got in book
        if got != nearest:
            disagree += 1
            m = abs(v) / s
            k = math.floor(math.log2(m))
            assert k >= lo and math.sqrt(2) < m / 2**k < 1.5
        # the documented rule itself
        assert p == min(max(round(math.log2(abs(v) / s)), lo), 0)
    assert disagree > 0


# ---------------------------------------------------------------- APoT


def test_apot_codebook_shape():
    book = apot_codebook(1.0)
    assert book.size == 33
    assert np.count_nonzero(book == 0) == 1
    assert len(set(book.tolist())) == 33
    assert book.max() == 1.0625


def test_apot_zero():
    c = quantize_apot(np.array([0.0, 1.0]))
    assert bool(c.zero[0])
    assert c.dequantize()[0] == 0.0


def test_apot_codebook_members_are_exact():
    s = 0.3
    book = apot_codebook(s)
    c = quantize_apot(book, scale=s)
    np.testing.assert_array_equal(c.dequantize(), book)


def test_apot_matches_exhaustive_search():
    rng = np.random.default_rng(11)
    for _ in range(40):
        w = rng.normal(0, rng.uniform(0.1, 2), 64)
        scale = float(np.abs(w).max() / 1.0625)
        got = quantize_apot(w, scale=scale).dequantize()
        want = [apot_nearest_oracle(v, scale) for v in w.tolist()]
        assert got.tolist() == want


def test_apot_pack_roundtrip_all_codes():
    book = apot_codebook(1.0)
    c = quantize_apot(book, scale=1.0)
    packed = c.pack()
    assert packed.max() < 2**APOT_CODE_BITS
    assert len(set(packed.tolist())) == 33
    back = APoTCodes.unpack(packed, 1.0)
    np.testing.assert_array_equal(back.dequantize(), book)


def test_apot_scale_maps_peak_to_top_code():
    w = np.array([[0.1, -2.125], [0.0, 0.0]])
    s = apot_scale(w, axis=1)
    assert s[0, 0] == 2.0 and s[1, 0] == 1.0


# ---------------------------------------------------------------- scheme selection


def test_select_scheme_matches_two_mse_oracle():
    filters = random_filters(300, 5)
    agree = 0
    for f in filters:
        vals = f.tolist()
        mu = mse(vals, uniform_roundtrip_oracle(vals))
        ma = mse(vals, apot_roundtrip_oracle(vals))
        want = SchemeChoice.APOT if ma < mu else SchemeChoice.UNIFORM8
        agree += select_scheme(f) is want
    assert agree == len(filters)


def test_scheme_errors_match_oracle_values():
    f = random_filters(20, 9)
    for v in f:
        mu, ma = scheme_errors(v[None, :])
        assert mu[0] == pytest.approx(mse(v.tolist(), uniform_roundtrip_oracle(v.tolist())), rel=1e-12, abs=1e-300)
        assert ma[0] == pytest.approx(mse(v.tolist(), apot_roundtrip_oracle(v.tolist())), rel=1e-12, abs=1e-300)


def test_filters_on_the_apot_grid_choose_apot():
    rng = np.random.default_rng(0)
    book = apot_codebook(0.7)
    for _ in range(50):
        f = rng.choice(book, size=40)
        f[0] = book[-1]
        assert select_scheme(f) is SchemeChoice.APOT


def test_dense_filters_choose_uniform():
    # 256 uniform levels beat 33 APoT levels on smooth data
    rng = np.random.default_rng(0)
    assert all(s is SchemeChoice.UNIFORM8 for s in select_schemes(rng.normal(size=(50, 64))))


# ---------------------------------------------------------------- plans


@pytest.mark.parametrize("text,value", [("1:1", 0.5), ("1:3", 0.25), ("0:1", 0.0), ("0.75", 0.75), (1, 1.0)])
def test_parse_ratio(text, value):
    assert parse_ratio(text) == value


@pytest.mark.parametrize("bad", ["1.5", "-0.1", "0:0", "x", None])
def test_parse_ratio_rejects(bad):
    with pytest.raises(ConfigError):
        parse_ratio(bad)


def test_plan_invariants(tiny_graph, tiny_plan):
    for layer in tiny_graph.quantizable():
        lp = tiny_plan.layers[layer.id]
        if layer.kind is LayerKind.DWCONV:
            assert lp.weight_bits == 4 and lp.n_apot == 0
            assert lp.uniform.granularity is Granularity.PER_FILTER
            assert lp.uniform.scale.shape == (layer.filters,)
        else:
            assert lp.weight_bits == 8
            assert lp.n_filters == layer.total_filters
            n = lp.n_filters
            assert lp.n_apot == int(np.floor(0.5 * n + 0.5))


def test_plan_picks_top_ranked_filters(tiny_graph, tiny_plan):
    """Within each group the APoT filters are those with the largest uniform-minus-APoT MSE gain."""
    for lp in tiny_plan.layers.values():
        if lp.kind is LayerKind.DWCONV:
            continue
        score = (lp.mse_uniform - lp.mse_apot).reshape(lp.groups, -1)
        mask = lp.apot_mask.reshape(lp.groups, -1)
        for s, m in zip(score, mask):
            if m.any() and (~m).any():
                assert s[m].min() >= s[~m].max()


def test_plan_achieves_one_to_one(b1_plan):
    apot, uni = b1_plan.ratio_counts()
    assert abs(apot / (apot + uni) - 0.5) < 0.01


def test_network_scope_total(tiny_graph, tiny_weights):
    plan = assign_m2q(tiny_graph, tiny_weights, 0.3, scope="network")
    apot, uni = plan.ratio_counts()
    assert apot == int(np.floor(0.3 * (apot + uni) + 0.5))


def test_ratio_zero_equals_uniform_baseline(tiny_graph, tiny_weights):
    a = plan_to_json(assign_m2q(tiny_graph, tiny_weights, 0.0, 8))
    b = plan_to_json(uniform_plan(tiny_graph, tiny_weights))
    assert a == b


def test_plan_json_roundtrip(tmp_path, tiny_graph, tiny_plan):
    p = write_plan(tiny_plan, tmp_path / "plan.json")
    back = read_plan(p)
    assert plan_to_json(back) == plan_to_json(tiny_plan)
    assert plan_to_json(plan_from_json(plan_to_json(tiny_plan))) == plan_to_json(tiny_plan)


def test_plan_is_deterministic(tmp_path, tiny_graph, tiny_weights):
    a = write_plan(assign_m2q(tiny_graph, tiny_weights, seed=5), tmp_path / "a.json").read_bytes()
    b = write_plan(assign_m2q(tiny_graph, tiny_weights, seed=5), tmp_path / "b.json").read_bytes()
    assert a == b


def test_plan_codes_decode_to_roundtrips(tiny_graph, tiny_weights, tiny_plan):
    """Stored codes dequantize to the same values as the per-filter scheme roundtrips."""
    from mqsim.execution import dequantized_weights

    deq = dequantized_weights(tiny_graph, tiny_plan, tiny_weights, kinds=(LayerKind.PWCONV,))
    for layer in tiny_graph.layers:
        lp = tiny_plan.layers.get(layer.id)
        if lp is None or layer.kind is not LayerKind.PWCONV:
            continue
        w = tiny_weights[layer.id]
        for f in range(w.shape[0]):
            vals = w[f].ravel().tolist()
            want = apot_roundtrip_oracle(vals) if lp.apot_mask[f] else uniform_roundtrip_oracle(vals)
            np.testing.assert_allclose(deq[layer.id][f].ravel(), want, rtol=1e-12, atol=1e-15)
