"""Gate arithmetic, history zero-fill, and the binary weight container."""

import numpy as np
import pytest

from videostereo.errors import ConfigurationError, ParseError
from videostereo.fusion import (FusionWeights, fuse_state, gru_blend,
                                load_weights, save_weights)
from videostereo.geometry import HiddenState


def _zeros_weights(num=4):
    shape = (num, 2 * num)
    return FusionWeights(np.zeros(shape), np.zeros(shape), np.zeros(shape),
                         np.zeros(num), np.zeros(num), np.zeros(num))


def _rand_state(rng, h=3, w=5, num=4, full=True):
    mask = np.ones((h, w), dtype=bool) if full else rng.uniform(size=(h, w)) < 0.5
    return HiddenState(rng.normal(size=(h, w, num)), mask)


def _reference_blend(c, h, w):
    """Scalar per-pixel evaluation of the gate equations."""
    out = np.zeros_like(c)
    q_all = np.zeros_like(c)
    for y in range(c.shape[0]):
        for x in range(c.shape[1]):
            cat = np.concatenate([c[y, x], h[y, x]])
            z = 1.0 / (1.0 + np.exp(-(w.w_z @ cat + w.b_z)))
            r = 1.0 / (1.0 + np.exp(-(w.w_r @ cat + w.b_r)))
            gated = np.concatenate([r * c[y, x], h[y, x]])
            q = np.tanh(w.w_q @ gated + w.b_q)
            q_all[y, x] = q
            out[y, x] = z * c[y, x] + (1.0 - z) * q
    return out, q_all


def test_zero_weights_halve_current():
    rng = np.random.default_rng(1)
    c = _rand_state(rng)
    h = _rand_state(rng)
    out = fuse_state(c, h, _zeros_weights())
    assert np.array_equal(out.channels, 0.5 * c.channels)
    assert out.valid.all()


def test_saturated_update_gate_passes_current_through():
    rng = np.random.default_rng(2)
    c = _rand_state(rng)
    h = _rand_state(rng)
    w0 = _zeros_weights()
    w = FusionWeights(w0.w_z, w0.w_r, w0.w_q,
                      np.full(4, 50.0), w0.b_r, w0.b_q)
    out = fuse_state(c, h, w)
    assert np.max(np.abs(out.channels - c.channels)) < 1e-9


def test_matches_scalar_reference_and_convexity():
    rng = np.random.default_rng(3)
    c = rng.normal(size=(4, 6, 5))
    h = rng.normal(size=(4, 6, 5))
    w = FusionWeights.seeded(5, seed=9)
    out = gru_blend(c, h, w)
    ref, q = _reference_blend(c, h, w)
    assert np.allclose(out, ref, atol=1e-12)
    # z in (0,1) makes the output an elementwise convex combination of c, q
    assert np.all(out >= np.minimum(c, q) - 1e-12)
    assert np.all(out <= np.maximum(c, q) + 1e-12)


def test_invalid_history_reads_as_zero():
    rng = np.random.default_rng(4)
    c = _rand_state(rng, full=True)
    junk = rng.normal(size=(3, 5, 4)) * 100.0
    mask = rng.uniform(size=(3, 5)) < 0.5
    hist = HiddenState(np.where(mask[:, :, None], junk, 0.0), mask)
    hist_junk = HiddenState(np.where(mask[:, :, None], junk, 123.0), mask)
    w = FusionWeights.seeded(4, seed=5)
    a = fuse_state(c, hist, w)
    b = fuse_state(c, hist_junk, w)
    assert np.array_equal(a.channels, b.channels)
    explicit = fuse_state(
        c, HiddenState(np.where(mask[:, :, None], junk, 0.0),
                       np.ones((3, 5), dtype=bool)), w)
    assert np.array_equal(a.channels, explicit.channels)


def test_fuse_rejects_partial_current_and_mismatch():
    rng = np.random.default_rng(6)
    partial = _rand_state(rng, full=False)
    full = _rand_state(rng, full=True)
    w = FusionWeights.seeded(4)
    with pytest.raises(ConfigurationError):
        fuse_state(partial, full, w)
    with pytest.raises(ConfigurationError):
        fuse_state(full, _rand_state(rng, num=3, full=True), w)
    with pytest.raises(ConfigurationError):
        gru_blend(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), w)


def test_determinism_bitwise():
    rng = np.random.default_rng(7)
    c = rng.normal(size=(5, 7, 6))
    h = rng.normal(size=(5, 7, 6))
    w = FusionWeights.seeded(6, seed=1)
    assert np.array_equal(gru_blend(c, h, w), gru_blend(c, h, w))
    again = FusionWeights.seeded(6, seed=1)
    assert np.array_equal(w.w_q, again.w_q)
    other = FusionWeights.seeded(6, seed=2)
    assert not np.array_equal(w.w_q, other.w_q)


def test_weight_shapes_validated():
    with pytest.raises(ConfigurationError):
        FusionWeights(np.zeros((4, 7)), np.zeros((4, 8)), np.zeros((4, 8)),
                      np.zeros(4), np.zeros(4), np.zeros(4))
    with pytest.raises(ConfigurationError):
        FusionWeights(np.full((2, 4), np.inf), np.zeros((2, 4)),
                      np.zeros((2, 4)), np.zeros(2), np.zeros(2), np.zeros(2))


def test_weight_file_round_trip(tmp_path):
    # values exactly representable in float32 survive bit-for-bit
    rng = np.random.default_rng(8)
    quantized = lambda shape: rng.integers(-64, 64, size=shape) / 32.0
    w = FusionWeights(quantized((3, 6)), quantized((3, 6)), quantized((3, 6)),
                      quantized(3), quantized(3), quantized(3))
    path = tmp_path / "gates.tcsw"
    save_weights(path, w)
    back = load_weights(path)
    for name in ("w_z", "w_r", "w_q", "b_z", "b_r", "b_q"):
        assert np.array_equal(getattr(w, name), getattr(back, name))


def test_weight_file_errors(tmp_path):
    w = FusionWeights.seeded(3, seed=0)
    path = tmp_path / "gates.tcsw"
    save_weights(path, w)
    blob = path.read_bytes()

    bad_magic = tmp_path / "magic.tcsw"
    bad_magic.write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(ParseError):
        load_weights(bad_magic)

    bad_version = tmp_path / "version.tcsw"
    bad_version.write_bytes(blob[:4] + (99).to_bytes(4, "little") + blob[8:])
    with pytest.raises(ParseError):
        load_weights(bad_version)

    truncated = tmp_path / "short.tcsw"
    truncated.write_bytes(blob[:-8])
    with pytest.raises(ParseError):
        load_weights(truncated)

    padded = tmp_path / "long.tcsw"
    padded.write_bytes(blob + b"\x00\x00")
    with pytest.raises(ParseError) as ei:
        load_weights(padded)
    assert "bytes" in str(ei.value)
