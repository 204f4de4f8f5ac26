import numpy as np
import pytest

from imaginernn.autodiff import Tensor
from imaginernn.cells import CellState, cell_step, init_cell, init_linear, linear_forward
from imaginernn.errors import ConfigError
from imaginernn.imagination import ImaginationConfig, imagine_step, rollout


def _parts(kind="lstm", seed=0, d=5, d_h=6, zero_phi=False):
    rng = np.random.default_rng(seed)
    cell = init_cell(kind, d, d_h, rng)
    phi = init_linear(d_h, d, rng)
    if zero_phi:
        phi.weight.data[...] = 0.0
        phi.bias.data[...] = 0.0
    f = Tensor(rng.normal(size=d))
    state = CellState(Tensor(rng.normal(size=d_h)), Tensor(rng.normal(size=d_h)) if kind == "lstm" else None)
    return cell, phi, f, state


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_zero_phi_step(kind):
    cell, phi, f, state = _parts(kind, zero_phi=True)
    f_res, _ = imagine_step(cell, phi, f, state, residual=True)
    f_abs, _ = imagine_step(cell, phi, f, state, residual=False)
    np.testing.assert_array_equal(f_res.data, f.data)
    np.testing.assert_array_equal(f_abs.data, np.zeros(5))


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_zero_phi_rollout_repeats_last_frame(kind):
    cell, phi, f, state = _parts(kind, zero_phi=True)
    traj = rollout(cell, phi, f, state, 5, residual=True)
    assert len(traj) == 5
    for f_hat in traj.features:
        np.testing.assert_array_equal(f_hat.data, f.data)


def test_single_step_rollout_equals_imagine_step():
    cell, phi, f, state = _parts()
    traj = rollout(cell, phi, f, state, 1, residual=True)
    f_hat, new_state = imagine_step(cell, phi, f, state, residual=True)
    np.testing.assert_array_equal(traj.features[0].data, f_hat.data)
    np.testing.assert_array_equal(traj.states[0].h.data, new_state.h.data)


@pytest.mark.parametrize("kind", ["lstm", "gru"])
@pytest.mark.parametrize("seed", range(4))
def test_telescoping_sum(kind, seed):
    """f_hat_k equals the last frame plus the sum of the first k increments."""
    cell, phi, f, state = _parts(kind, seed)
    traj = rollout(cell, phi, f, state, 6, residual=True)
    total = f.data.copy()
    prev, st = f, state
    for f_hat in traj.features:
        st = cell_step(cell, prev, st)
        total = total + linear_forward(phi, st.h).data
        np.testing.assert_allclose(f_hat.data, total, rtol=0, atol=1e-12)
        prev = f_hat


def test_explicit_three_step_sum():
    cell, phi, f, state = _parts("lstm", 9)
    s1 = cell_step(cell, f, state)
    d1 = linear_forward(phi, s1.h).data
    s2 = cell_step(cell, Tensor(f.data + d1), s1)
    d2 = linear_forward(phi, s2.h).data
    s3 = cell_step(cell, Tensor(f.data + d1 + d2), s2)
    d3 = linear_forward(phi, s3.h).data
    traj = rollout(cell, phi, f, state, 3, residual=True)
    np.testing.assert_allclose(traj.features[2].data, f.data + d1 + d2 + d3, rtol=0, atol=1e-12)


def test_teacher_forcing_feeds_ground_truth():
    cell, phi, f, state = _parts("gru", 2)
    rng = np.random.default_rng(5)
    teacher = [Tensor(rng.normal(size=5)) for _ in range(3)]
    traj = rollout(cell, phi, f, state, 3, residual=False, teacher=teacher)
    s1 = cell_step(cell, f, state)
    s2 = cell_step(cell, teacher[0], s1)
    np.testing.assert_allclose(traj.features[1].data, linear_forward(phi, s2.h).data, atol=1e-14)


def test_rejects_non_positive_steps():
    cell, phi, f, state = _parts()
    with pytest.raises(ConfigError):
        rollout(cell, phi, f, state, 0, residual=True)
    with pytest.raises(ConfigError):
        ImaginationConfig(steps=0)
