from fractions import Fraction

import numpy as np
import pytest

from mqsim import kernels, reference
from mqsim.execution import (
    ACC_BITS,
    AccumulatorOverflowError,
    IntTensor,
    accumulator_bound,
    check_accumulator,
    execute_layer,
    run_network,
    shift_multiply,
    weight_multipliers,
)
from mqsim.execution.engine import layer_accumulator_bound, requantize
from mqsim.netgraph import Activation, ConfigError, LayerKind, LayerSpec, NetworkGraph
from mqsim.netgraph.manifest import synthesize_weights
from mqsim.quant import APoTCodes, QuantParams, apot_codebook, calibrate_affine, quantize_apot, quantize_pot, quantize_uniform
from mqsim.quant.plan import assign_m2q, synthetic_inputs, uniform_plan


def all_apot_codes(scale=1.0):
    return quantize_apot(apot_codebook(scale), scale=scale)


def test_shift_multiply_exhaustive():
    """Every (8-bit activation code, APoT code) pair equals the exact rational product."""
    z = 128
    codes = all_apot_codes()
    acts = np.arange(256) - z
    a, k = np.meshgrid(acts, np.arange(33), indexing="ij")
    sel = APoTCodes(codes.sign[k], codes.p1[k], codes.p2[k], codes.zero[k], codes.scale[k])
    exact = shift_multiply(a, sel).exact()
    n = 0
    for ai, ki, got in zip(a.ravel().tolist(), k.ravel().tolist(), exact.ravel().tolist()):
        if codes.zero[ki]:
            want = Fraction(0)
        else:
            want = ai * int(codes.sign[ki]) * (Fraction(2) ** int(codes.p1[ki]) + Fraction(2) ** int(codes.p2[ki]))
        assert got == want
        n += 1
    assert n == 8448


def test_shift_multiply_pot():
    c = quantize_pot(np.array([-0.26, 0.5, 1.0]), 3, scale=1.0)
    got = shift_multiply(np.array([5, 5, -7]), c, p_min=-7).exact()
    want = [5 * -1 * Fraction(1, 4), 5 * Fraction(1, 2), -7 * Fraction(1)]
    assert list(got) == want


def test_shift_multiply_rejects_out_of_range_exponents():
    c = quantize_pot(np.array([1e-9, 1.0]), 5, scale=1.0)
    with pytest.raises(ValueError):
        shift_multiply(np.array([1, 1]), c, p_min=-7)


def test_int_tensor_range_checked():
    p = QuantParams(np.float64(1.0), np.int64(0), 4)
    with pytest.raises(ValueError):
        IntTensor(np.array([16]), p)
    t = IntTensor(np.array([0, 3, 15]), QuantParams(np.float64(0.5), np.int64(3), 4))
    assert t.signed().tolist() == [-3, 0, 12]
    assert t.dequantize().tolist() == [-1.5, 0.0, 6.0]


HAND_INPUT = np.array([[[1, 2, 3], [4, 5, 6], [7, 8, 9]]])
HAND_KERNEL = np.array([[[0, 1, 0], [1, -1, 1], [0, 1, 0]]])
# up + left + right + down - centre, zero padded, worked out by hand
HAND_OUT = [[[5, 7, 5], [9, 15, 11], [5, 13, 5]]]


@pytest.mark.parametrize("impl", [kernels.dwconv_numpy, kernels.dwconv_jit])
def test_dwconv_hand_example(impl):
    padded = np.pad(HAND_INPUT, ((0, 0), (1, 1), (1, 1)))
    assert impl(padded, HAND_KERNEL, 1).tolist() == HAND_OUT
    assert impl(padded, HAND_KERNEL, 2).tolist() == [[[5, 5], [5, 5]]]


def _single_layer_graph(layer):
    return NetworkGraph("one", layer.input_shape[1:], layer.input_shape, [layer])


def _int_input(shape, seed, params):
    x = np.random.default_rng(seed).normal(size=shape)
    return IntTensor(quantize_uniform(x, params), params)


def _exact_accumulator(entry, xs, w_codes):
    """Integer sums by explicit per-term arithmetic, one filter at a time."""
    f = w_codes.shape[0]
    flat = w_codes.reshape(f, -1).astype(np.int64)
    zp = np.broadcast_to(entry.uniform.zero_point, (f,))
    ap = entry.apot_codes(w_codes) if entry.n_apot else None
    acc = np.zeros((f, xs.shape[1]), dtype=object)
    j = 0
    for r in range(f):
        if entry.apot_mask[r]:
            terms = [0 if ap.zero[j, c] else int(ap.sign[j, c]) * ((1 << int(ap.p1[j, c] + 7)) + (1 << int(ap.p2[j, c] + 7)))
                     for c in range(flat.shape[1])]
            j += 1
        else:
            terms = [int(flat[r, c] - zp[r]) for c in range(flat.shape[1])]
        for p in range(xs.shape[1]):
            acc[r, p] = sum(t * int(xs[c, p]) for c, t in enumerate(terms))
    return acc


def test_pwconv_dual_path():
    """Integer PWConv equals an explicit per-term accumulation followed by the same requantization."""
    layer = LayerSpec(0, LayerKind.PWCONV, (24, 5, 5), (1, 1), 16, activation=Activation.RELU)
    g = _single_layer_graph(layer)
    w = synthesize_weights(g, 1)
    plan = assign_m2q(g, w, 0.5, seed=1)
    entry = plan.layers[0]
    assert 0 < entry.n_apot < entry.n_filters
    x = _int_input(layer.input_shape, 2, plan.input_params)
    out = execute_layer(layer, entry, x, plan.activations[0])

    xs = x.signed().reshape(24, 25)
    acc = _exact_accumulator(entry, xs, entry.codes).astype(np.int64)
    mult = weight_multipliers(entry, float(x.params.scale))
    y = np.maximum(acc.astype(np.float64) * mult[:, None], 0.0)
    want = quantize_uniform(y, plan.activations[0]).reshape(16, 5, 5)
    np.testing.assert_array_equal(out.codes, want)

    # and the dequantized result tracks the float layer
    ref = reference.layer_forward(layer, [x.dequantize()], w[0])
    step = float(plan.activations[0].scale)
    assert np.max(np.abs(out.dequantize() - ref)) < 0.1 * np.abs(ref).max() + step


def test_apot_rows_equal_scaled_dequantized_weights():
    """APoT shift path times its multiplier equals the float product with dequantized APoT weights."""
    layer = LayerSpec(0, LayerKind.PWCONV, (16, 4, 4), (1, 1), 8)
    g = _single_layer_graph(layer)
    w = synthesize_weights(g, 3)
    plan = assign_m2q(g, w, 1.0, seed=3)
    entry = plan.layers[0]
    x = _int_input(layer.input_shape, 4, plan.input_params)
    xs = x.signed().reshape(16, 16)
    acc = _exact_accumulator(entry, xs, entry.codes).astype(np.int64)
    mult = weight_multipliers(entry, float(x.params.scale))
    wd = entry.apot_codes(entry.codes).dequantize()
    np.testing.assert_allclose(acc * mult[:, None], wd @ (xs * float(x.params.scale)), rtol=1e-12)


def test_dwconv_layer_matches_hand_loop():
    layer = LayerSpec(0, LayerKind.DWCONV, (3, 6, 6), (3, 3), 3, stride=2)
    g = _single_layer_graph(layer)
    w = synthesize_weights(g, 5)
    plan = assign_m2q(g, w, 0.5, 4, seed=5)
    entry = plan.layers[0]
    x = _int_input(layer.input_shape, 6, plan.input_params)
    out = execute_layer(layer, entry, x, plan.activations[0])
    xs = np.pad(x.signed(), ((0, 0), (1, 1), (1, 1)))
    wq = entry.codes.astype(np.int64) - entry.uniform.zero_point[:, None, None]
    acc = np.zeros((3, 3, 3), dtype=np.int64)
    for c in range(3):
        for y in range(3):
            for xx in range(3):
                acc[c, y, xx] = sum(xs[c, 2 * y + i, 2 * xx + j] * wq[c, i, j] for i in range(3) for j in range(3))
    mult = weight_multipliers(entry, float(x.params.scale))
    np.testing.assert_array_equal(out.codes, quantize_uniform(acc * mult[:, None, None], plan.activations[0]))


def test_accumulator_bound_formula():
    assert accumulator_bound(1536, 128, 136) == 1536 * 128 * 136
    check_accumulator(2 ** (ACC_BITS - 1) - 1)
    with pytest.raises(AccumulatorOverflowError):
        check_accumulator(2 ** (ACC_BITS - 1))


def test_accumulator_overflow_detected():
    c = 2**31 // (128 * 255) + 1
    layer = LayerSpec(0, LayerKind.PWCONV, (c, 1, 1), (1, 1), 1)
    w = np.linspace(0.0, 1.0, c)[None, :]  # one-sided: zero point 0, max signed weight 255
    plan = assign_m2q(_single_layer_graph(layer), {0: w}, 0.0, seed=0)
    p = QuantParams(np.float64(1.0), np.int64(128), 8)
    assert layer_accumulator_bound(layer, plan.layers[0], p) >= 2**31
    with pytest.raises(AccumulatorOverflowError):
        execute_layer(layer, plan.layers[0], IntTensor(np.full((c, 1, 1), 128), p), plan.activations[0])


def test_b1_worst_case_fits_accumulator(b1, b1_plan):
    for layer in b1.layers:
        entry = b1_plan.layers.get(layer.id)
        if entry is None:
            continue
        in_params = QuantParams(np.float64(1.0), np.int64(0), 8)
        assert layer_accumulator_bound(layer, entry, in_params) < 2**31


def test_requantize_relu_clamps_negative():
    p = calibrate_affine(np.array([-4.0, 4.0]), 8)
    t = requantize(np.array([[-100, 100]]), np.array([0.01]), Activation.RELU, p)
    assert t.dequantize()[0, 0] == 0.0
    assert t.dequantize()[0, 1] == pytest.approx(1.0, abs=float(p.scale))


def test_execute_layer_rejects_wrong_entry(tiny_graph, tiny_plan):
    a, b = [l for l in tiny_graph.layers if l.kind is LayerKind.PWCONV][:2]
    x = IntTensor(np.zeros(a.input_shape, dtype=np.int64), tiny_plan.input_params)
    with pytest.raises(ConfigError):
        execute_layer(a, tiny_plan.layers[b.id], x, tiny_plan.activations[a.id])


def test_run_network_deterministic(tiny_graph, tiny_weights, tiny_plan):
    x = np.random.default_rng(0).normal(size=tiny_graph.input_shape)
    a, ea = run_network(tiny_graph, tiny_plan, x, tiny_weights)
    b, eb = run_network(tiny_graph, tiny_plan, x, tiny_weights)
    np.testing.assert_array_equal(a, b)
    assert ea == eb


def test_run_network_tracks_float_reference(tiny_graph, tiny_weights, tiny_plan):
    # on a calibration input activation ranges are covered, so the error is quantization alone
    x = synthetic_inputs(tiny_graph, 1, 0)[0]
    out, errors, outs, ref = run_network(tiny_graph, tiny_plan, x, tiny_weights, return_outputs=True)
    assert len(errors) == len(tiny_graph.quantizable())
    assert errors[-1].rel_mse < 0.15
    base = run_network(tiny_graph, uniform_plan(tiny_graph, tiny_weights), x, tiny_weights)[1]
    assert base[-1].rel_mse < 0.05
    # held-out input: ranges may clip, output still follows the reference
    x = np.random.default_rng(1).normal(size=tiny_graph.input_shape)
    out, _, _, ref = run_network(tiny_graph, tiny_plan, x, tiny_weights, return_outputs=True)
    assert np.corrcoef(out.ravel(), ref[tiny_graph.layers[-1].id].ravel())[0, 1] > 0.85


def test_run_network_rejects_foreign_plan(tiny_graph, tiny_plan, b1):
    with pytest.raises(ConfigError):
        run_network(b1, tiny_plan, np.zeros(b1.input_shape))
