import numpy as np
import pytest

from ontotemporal import autodiff as ad
from ontotemporal.autodiff import Tape, Tensor
from ontotemporal.fusion import GatedFusion, contrastive_batch, contrastive_loss, fuse, fuse_sum, gate
from ontotemporal.gradcheck import check_gradients

from conftest import T


def zero_fusion(d):
    return GatedFusion(Tensor(np.zeros((d, d))), Tensor(np.zeros((d, d))), Tensor(np.zeros(d)))


def test_zero_gate_is_average(rng):
    H, Z = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
    np.testing.assert_allclose(fuse(zero_fusion(4), H, Z).data, (H.data + Z.data) / 2)


def test_gate_saturates_to_local(rng):
    f = zero_fusion(4)
    f.b.data[:] = 40.0
    H, Z = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
    np.testing.assert_allclose(fuse(f, H, Z).data, H.data, atol=1e-12)


def test_gate_range_and_convexity(rng):
    f = GatedFusion.init(rng, 4)
    H, Z = Tensor(rng.normal(size=(6, 4)) * 3), Tensor(rng.normal(size=(6, 4)) * 3)
    th = gate(f, H, Z).data
    assert ((th > 0) & (th < 1)).all()
    out = fuse(f, H, Z).data
    lo, hi = np.minimum(H.data, Z.data), np.maximum(H.data, Z.data)
    assert ((out >= lo - 1e-12) & (out <= hi + 1e-12)).all()


def test_sum_fusion(rng):
    H, Z = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 3)))
    np.testing.assert_array_equal(fuse_sum(H, Z).data, H.data + Z.data)


def test_fuse_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        fuse(zero_fusion(2), T([[1, 2]]), T([[1, 2], [3, 4]]))


def test_fusion_gradients(rng):
    for _ in range(5):
        f = GatedFusion(*(Tensor(rng.normal(size=s), requires_grad=True) for s in ((4, 4), (4, 4), (4,))))
        H, Z = Tensor(rng.normal(size=(3, 4)), requires_grad=True), Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 4)))
        assert check_gradients(lambda: ad.total(ad.mul(fuse(f, H, Z), w)), [f.W3, f.W4, f.b, H, Z]) < 1e-4


def test_contrastive_hand_value():
    Z = H = T([[1, 0], [0, 1]])
    loss, ok = contrastive_loss(Z, H, [0, 1], 1.0)
    assert ok and loss.item() == pytest.approx(-1.0, abs=1e-12)


def test_contrastive_identical_vectors_zero():
    Z = H = T([[1, 2], [1, 2]])
    assert contrastive_loss(Z, H, [0, 1], 0.3)[0].item() == pytest.approx(0.0, abs=1e-12)


def test_contrastive_positive_term_strictly_decreases():
    # anchor 0's negative h_1 is orthogonal to z_0 before and after, so only the positive moves
    H = T([[1, 0, 0], [0, 0, 1]])
    before = contrastive_loss(T([[1, 1, 0], [0, 1, 1]]), H, [0, 1], 1.0)[0].item()
    after = contrastive_loss(T([[1, 0.5, 0], [0, 1, 1]]), H, [0, 1], 1.0)[0].item()
    assert after < before


def test_contrastive_scale_invariant(rng):
    Z, H = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    a = contrastive_loss(Tensor(Z), Tensor(H), [0, 1, 2, 3], 0.2)[0].item()
    Z[2] *= 17.5
    b = contrastive_loss(Tensor(Z), Tensor(H), [0, 1, 2, 3], 0.2)[0].item()
    assert abs(a - b) < 1e-12


def test_contrastive_can_be_negative():
    Z = H = T([[1, 0], [0, 1]])
    assert contrastive_loss(Z, H, [0, 1], 0.1)[0].item() < 0


def test_contrastive_batch_drops_zero_and_duplicates():
    H = T([[1, 0], [0, 0], [0, 1]])
    assert contrastive_batch(H, [2, 0, 1, 2, 0]).tolist() == [0, 2]


def test_contrastive_skips_small_batch():
    H = T([[1, 0], [0, 0]])
    loss, ok = contrastive_loss(T([[1, 1], [1, 1]]), H, [0, 1], 0.5)
    assert not ok and loss.item() == 0.0


def test_excluded_rows_get_no_gradient(rng):
    Z = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    Hd = rng.normal(size=(4, 3))
    Hd[1] = 0
    H = Tensor(Hd, requires_grad=True)
    with Tape() as tape:
        loss, _ = contrastive_loss(Z, H, [0, 1, 2], 0.5)
    tape.backward(loss)
    assert not tape.grad(Z)[[1, 3]].any() and not tape.grad(H)[[1, 3]].any()


def test_contrastive_gradients(rng):
    for _ in range(5):
        Z, H = Tensor(rng.normal(size=(5, 3)), requires_grad=True), Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        assert check_gradients(lambda: contrastive_loss(Z, H, [0, 2, 3, 4], 0.3)[0], [Z, H]) < 1e-4


def test_bad_temperature():
    with pytest.raises(ValueError):
        contrastive_loss(T([[1, 0]]), T([[1, 0]]), [0], 0.0)
