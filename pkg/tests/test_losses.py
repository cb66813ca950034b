import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from affectkit import losses
from affectkit.losses import DegenerateCCCWarning, MultiTaskOutputs, MultiTaskTargets
from affectkit.numcore import Tape, grad_check


def value(fn, pred, *labels):
    t = Tape()
    return fn(t, t.const(pred), *labels).item()


def cce_oracle(logits, targets):
    total = 0.0
    for row, k in zip(logits, targets):
        m = max(row)
        total += m + math.log(sum(math.exp(v - m) for v in row)) - row[k]
    return total / len(targets)


def bce_oracle(p, t):
    total = 0.0
    for prow, trow in zip(p, t):
        for pi, ti in zip(prow, trow):
            total -= ti * math.log(pi) + (1 - ti) * math.log(1 - pi)
    return total / len(p)


def ccc_oracle(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    return 2 * cov / (vx + vy + (mx - my) ** 2)


# ---- categorical cross entropy

def test_cce_uniform_is_ln7():
    assert value(losses.cce_loss, np.zeros((3, 7)), np.array([0, 3, 6])) == pytest.approx(math.log(7), abs=1e-12)
    assert math.log(7) == pytest.approx(1.945910, abs=1e-6)


def test_cce_saturated_correct():
    logits = np.zeros((1, 7))
    logits[0, 4] = 50.0
    assert value(losses.cce_loss, logits, np.array([4])) < 1e-9


def test_cce_hand_example():
    logits = np.array([[1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0]])
    expected = math.log(math.e + math.e**2 + math.e**3 + 4) - 3.0
    assert value(losses.cce_loss, logits, np.array([2])) == pytest.approx(expected, abs=1e-12)


def test_cce_rejects_bad_index():
    with pytest.raises(IndexError):
        value(losses.cce_loss, np.zeros((1, 7)), np.array([7]))


def test_cce_matches_oracle(rng):
    for _ in range(20):
        logits = rng.normal(size=(5, 7)) * 3
        targets = rng.integers(0, 7, size=5)
        assert value(losses.cce_loss, logits, targets) == pytest.approx(cce_oracle(logits, targets), abs=1e-12)


# ---- binary cross entropy

def test_bce_perfect():
    t = np.array([[1.0, 0.0, 1.0]])
    assert value(losses.bce_loss, t.copy(), t) < 1e-9


def test_bce_half_is_8ln2():
    got = value(losses.bce_loss, np.full((2, 8), 0.5), np.tile([1.0, 0.0], (2, 4)))
    assert got == pytest.approx(8 * math.log(2), abs=1e-12)
    assert got == pytest.approx(5.545177, abs=1e-6)


def test_bce_matches_oracle(rng):
    for _ in range(20):
        p = rng.uniform(0.01, 0.99, size=(4, 8))
        t = rng.integers(0, 2, size=(4, 8)).astype(float)
        assert value(losses.bce_loss, p, t) == pytest.approx(bce_oracle(p, t), abs=1e-12)


def test_bce_rejects_soft_targets():
    with pytest.raises(ValueError):
        value(losses.bce_loss, np.full((1, 2), 0.5), np.array([[0.5, 1.0]]))


# ---- CCC

def test_ccc_hand_example():
    x, y = [0.1, 0.5, 0.9], [0.2, 0.4, 0.6]
    # means 0.5 and 0.4; var_x = 0.32/3, var_y = 0.08/3, cov = 0.16/3
    expected = 2 * (0.16 / 3) / (0.32 / 3 + 0.08 / 3 + 0.01)
    assert losses.ccc(x, y) == pytest.approx(expected, abs=1e-15)
    assert losses.ccc(x, y) == pytest.approx(ccc_oracle(x, y), abs=1e-15)


def test_ccc_identity_and_constant():
    x = np.array([0.3, -0.2, 0.9, 0.1])
    assert losses.ccc(x, x) == 1.0
    assert losses.ccc(np.full(4, 0.2), x) == 0.0


def test_ccc_degenerate_warns():
    with pytest.warns(DegenerateCCCWarning):
        assert losses.ccc([0.5, 0.5], [0.5, 0.5]) == 0.0


vectors = st.integers(2, 30).flatmap(
    lambda n: st.tuples(
        arrays(np.float64, n, elements=st.floats(-1, 1, allow_nan=False)),
        arrays(np.float64, n, elements=st.floats(-1, 1, allow_nan=False)),
    )
)


@given(vectors)
def test_ccc_symmetric_and_bounded(xy):
    x, y = xy
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateCCCWarning)
        a, b = losses.ccc(x, y), losses.ccc(y, x)
    assert a == pytest.approx(b, abs=1e-12)
    assert abs(a) <= 1.0 + 1e-12


@given(vectors)
def test_ccc_self_is_one(xy):
    x, _ = xy
    assume(np.ptp(x) > 1e-6)
    assert losses.ccc(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ccc_loss_perfect_and_half(rng):
    v, a = rng.uniform(-1, 1, 10), rng.uniform(-1, 1, 10)
    t = Tape()
    assert losses.ccc_loss(t, t.const(v[:, None]), t.const(a[:, None]), v, a).item() == pytest.approx(0.0, abs=1e-12)
    # perfect valence, constant arousal prediction (rho_a = 0)
    half = losses.ccc_loss(t, t.const(v[:, None]), t.const(np.full((10, 1), 0.3)), v, a)
    assert half.item() == pytest.approx(0.5, abs=1e-12)


def test_ccc_loss_grad_check(rng):
    lv, la = rng.uniform(-1, 1, 8), rng.uniform(-1, 1, 8)
    for _ in range(10):
        point = {"v": rng.uniform(-1, 1, (8, 1)), "a": rng.uniform(-1, 1, (8, 1))}
        assert grad_check(lambda t, p: losses.ccc_loss(t, p["v"], p["a"], lv, la), point) < 1e-5


# ---- MSE

def test_mse_examples(rng):
    lab = rng.uniform(-1, 1, (4, 2))
    assert value(losses.mse_loss, lab.copy(), lab) == 0.0
    assert value(losses.mse_loss, lab + 0.5, lab) == pytest.approx(0.25, abs=1e-15)
    pred = rng.uniform(-1, 1, (4, 2))
    assert value(losses.mse_loss, pred, lab) == pytest.approx(sum(((pred - lab) ** 2).ravel()) / 8, abs=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(ValueError):
        value(losses.mse_loss, np.zeros((2, 2)), np.zeros((3, 2)))


# ---- multi-task

def make_batch(rng, n=6, k=8):
    outs = {"va": rng.uniform(-1, 1, (n, 2)), "au": rng.normal(size=(n, k)), "expr": rng.normal(size=(n, 7))}
    targets = dict(va=rng.uniform(-1, 1, (n, 2)), aus=rng.integers(0, 2, (n, k)).astype(float), expr=rng.integers(0, 7, n))
    return outs, targets


def test_multitask_single_task_is_bit_identical(rng):
    outs, tg = make_batch(rng)
    t = Tape()
    o = MultiTaskOutputs(*(t.const(outs[k]) for k in ("va", "au", "expr")))
    single = losses.multitask_loss(t, o, MultiTaskTargets(expr=tg["expr"])).item()
    assert single == value(losses.cce_loss, outs["expr"], tg["expr"])


def test_multitask_sum_of_terms(rng):
    outs, tg = make_batch(rng)
    t = Tape()
    o = MultiTaskOutputs(*(t.const(outs[k]) for k in ("va", "au", "expr")))
    total = losses.multitask_loss(t, o, MultiTaskTargets(**tg)).item()
    t2 = Tape()
    cce = losses.cce_loss(t2, t2.const(outs["expr"]), tg["expr"]).item()
    bce = losses.bce_loss(t2, t2.sigmoid(t2.const(outs["au"])), tg["aus"]).item()
    ccc = losses.ccc_loss(t2, t2.const(outs["va"][:, :1]), t2.const(outs["va"][:, 1:]), tg["va"][:, 0], tg["va"][:, 1]).item()
    assert total == (cce + bce) + ccc


def test_multitask_mse_mode(rng):
    outs, tg = make_batch(rng)
    t = Tape()
    got = losses.multitask_loss(t, MultiTaskOutputs(va=t.const(outs["va"])), MultiTaskTargets(va=tg["va"]), va_mode="mse")
    assert got.item() == pytest.approx(np.mean((outs["va"] - tg["va"]) ** 2), abs=1e-15)


def test_multitask_mask_selects_rows(rng):
    outs, tg = make_batch(rng)
    mask = np.array([1, 0, 1, 1, 0, 1], dtype=bool)
    t = Tape()
    got = losses.multitask_loss(t, MultiTaskOutputs(expr=t.const(outs["expr"])), MultiTaskTargets(expr=tg["expr"], expr_mask=mask))
    assert got.item() == pytest.approx(cce_oracle(outs["expr"][mask], tg["expr"][mask]), abs=1e-12)


def test_multitask_requires_a_task():
    with pytest.raises(ValueError):
        MultiTaskTargets()


def test_multitask_weights(rng):
    outs, tg = make_batch(rng)
    t = Tape()
    o = MultiTaskOutputs(*(t.const(outs[k]) for k in ("va", "au", "expr")))
    plain = losses.multitask_terms(t, o, MultiTaskTargets(**tg))
    weighted = losses.multitask_loss(t, o, MultiTaskTargets(**tg), weights={"au": 2.0}).item()
    assert weighted == pytest.approx(plain["expr"].item() + 2 * plain["au"].item() + plain["va"].item(), abs=1e-12)


def test_multitask_grad_check(rng):
    _, tg = make_batch(rng)
    targets = MultiTaskTargets(**tg)
    for _ in range(10):
        outs, _ = make_batch(rng)
        fn = lambda t, p: losses.multitask_loss(t, MultiTaskOutputs(p["va"], p["au"], p["expr"]), targets)
        assert grad_check(fn, outs) < 1e-5


# ---- ArcFace

def arcface_oracle(emb, weight, scale, margin, targets):
    out = np.empty((emb.shape[0], weight.shape[1]))
    for i, x in enumerate(emb):
        for j in range(weight.shape[1]):
            w = weight[:, j]
            c = float(x @ w / (np.linalg.norm(x) * np.linalg.norm(w)))
            theta = math.acos(min(1.0, max(-1.0, c)))
            out[i, j] = scale * (math.cos(theta + margin) if j == targets[i] else c)
    return out


def test_arcface_margin_free_is_scaled_cosine(rng):
    emb, w = rng.normal(size=(5, 8)), rng.normal(size=(8, 7))
    t = Tape()
    got = losses.arcface_logits(t, t.const(emb), t.const(w), 64.0, 0.0, rng.integers(0, 7, 5)).value
    cos = (emb / np.linalg.norm(emb, axis=1, keepdims=True)) @ (w / np.linalg.norm(w, axis=0))
    np.testing.assert_allclose(got, 64.0 * cos, rtol=0, atol=1e-12)


def test_arcface_aligned_target():
    w = np.eye(8)[:, :7]
    emb = np.eye(8)[[3]] * 2.5
    t = Tape()
    got = losses.arcface_logits(t, t.const(emb), t.const(w), 64.0, 0.5, [3]).value
    assert got[0, 3] == pytest.approx(64 * math.cos(0.5), abs=1e-12)
    assert got[0, 3] == pytest.approx(56.1653, abs=1e-4)


def test_arcface_explicit_angle_oracle(rng):
    for _ in range(10):
        emb, w = rng.normal(size=(6, 8)), rng.normal(size=(8, 7))
        targets = rng.integers(0, 7, 6)
        t = Tape()
        got = losses.arcface_logits(t, t.const(emb), t.const(w), 32.0, 0.3, targets).value
        np.testing.assert_allclose(got, arcface_oracle(emb, w, 32.0, 0.3, targets), rtol=0, atol=1e-12)


def test_arcface_inference_has_no_margin(rng):
    emb, w = rng.normal(size=(4, 8)), rng.normal(size=(8, 7))
    t = Tape()
    a = losses.arcface_logits(t, t.const(emb), t.const(w), 64.0, 0.5).value
    b = losses.arcface_logits(t, t.const(emb), t.const(w), 64.0, 0.0, [0, 1, 2, 3]).value
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_arcface_orthogonal_symmetric_is_softmax_ce():
    w = np.eye(7)
    emb = np.eye(7)[[0, 3, 5]] + 0.1
    targets = np.array([0, 3, 5])
    t = Tape()
    got = losses.arcface_loss(t, t.const(emb), t.const(w), 1.0, 0.0, targets).item()
    cos = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    assert got == pytest.approx(cce_oracle(cos, targets), abs=1e-12)


def test_arcface_zero_row_rejected():
    t = Tape()
    with pytest.raises(ValueError, match="zero embedding"):
        losses.arcface_logits(t, t.const(np.zeros((1, 4))), t.const(np.ones((4, 7))), 64.0, 0.1)


def test_arcface_grad_check(rng):
    targets = rng.integers(0, 7, 5)
    done = 0
    while done < 10:
        emb, w = rng.normal(size=(5, 8)), rng.normal(size=(8, 7))
        cos = (emb / np.linalg.norm(emb, axis=1, keepdims=True)) @ (w / np.linalg.norm(w, axis=0))
        theta = np.arccos(cos[np.arange(5), targets])
        if theta.min() < 0.05 or theta.max() + 0.5 > np.pi - 0.05:
            continue
        fn = lambda t, p: losses.arcface_loss(t, p["e"], p["w"], 64.0, 0.5, targets)
        assert grad_check(fn, {"e": emb, "w": w}) < 1e-5
        done += 1


@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_arcface_loss_monotone_in_margin(seed, m1, m2):
    rng = np.random.default_rng(seed)
    emb, w = rng.normal(size=(4, 8)), rng.normal(size=(8, 7))
    targets = rng.integers(0, 7, 4)
    lo, hi = sorted((m1, m2))
    cos = (emb / np.linalg.norm(emb, axis=1, keepdims=True)) @ (w / np.linalg.norm(w, axis=0))
    assume(np.all(np.arccos(cos[np.arange(4), targets]) + hi <= np.pi))
    t = Tape()
    a = losses.arcface_loss(t, t.const(emb), t.const(w), 16.0, lo, targets).item()
    b = losses.arcface_loss(t, t.const(emb), t.const(w), 16.0, hi, targets).item()
    assert b >= a - 1e-12


@given(st.integers(0, 10_000), st.floats(0.5, 100.0))
def test_arcface_scale_equivariance(seed, s):
    rng = np.random.default_rng(seed)
    emb, w = rng.normal(size=(3, 5)), rng.normal(size=(5, 7))
    t = Tape()
    a = losses.arcface_logits(t, t.const(emb), t.const(w), s, 0.0).value
    b = losses.arcface_logits(t, t.const(emb), t.const(w), 2 * s, 0.0).value
    np.testing.assert_allclose(b, 2 * a, rtol=1e-15, atol=0)
    assert np.array_equal(np.argmax(a, axis=1), np.argmax(b, axis=1))
