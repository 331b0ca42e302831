import numpy as np
import pytest

from belief import (
    AgentBelief,
    PTBelief,
    collapse_to_mmse,
    existence_probability,
    mmse_estimate,
    normalize,
    resample_systematic,
)
from errors import DegenerateBeliefError


def _pt(weights, nonexistence, particles=None):
    w = np.asarray(weights, dtype=float)
    if particles is None:
        particles = np.zeros((w.shape[0], 4))
    return PTBelief(particles, w, nonexistence, (1, 1, 1))


def _states(xs):
    return np.array([[x, 0.0, 0.0, 0.0] for x in xs])


def test_normalize_examples():
    agent = normalize(AgentBelief(_states([0, 1]), [2.0, 2.0]))
    np.testing.assert_allclose(agent.weights, [0.5, 0.5])
    pt = normalize(_pt([0.3], 0.3))
    np.testing.assert_allclose(pt.weights, [0.5])
    assert pt.nonexistence == pytest.approx(0.5)
    with pytest.raises(DegenerateBeliefError, match="degenerate belief"):
        normalize(_pt([0.0, 0.0], 0.0))


def test_normalize_is_idempotent():
    once = normalize(_pt([0.2, 0.5, 0.1], 0.7))
    twice = normalize(once)
    np.testing.assert_allclose(twice.weights, once.weights)
    assert twice.nonexistence == pytest.approx(once.nonexistence)
    assert once.weights.sum() + once.nonexistence == pytest.approx(1.0)


def test_mmse_examples():
    single = AgentBelief(_states([7.0]), [1.0])
    np.testing.assert_allclose(mmse_estimate(single), [7, 0, 0, 0])
    pair = AgentBelief(_states([0.0, 2.0]), [0.5, 0.5])
    assert mmse_estimate(pair)[0] == pytest.approx(1.0)
    skew = AgentBelief(_states([0.0, 4.0]), [0.25, 0.75])
    assert mmse_estimate(skew)[0] == pytest.approx(3.0)


def test_mmse_of_pt_is_conditioned_on_existence_and_scale_invariant():
    pt = _pt([0.1, 0.3], 0.6, particles=_states([0.0, 4.0]))
    assert mmse_estimate(pt)[0] == pytest.approx(3.0)
    scaled = normalize(_pt([1.0, 3.0], 6.0, particles=_states([0.0, 4.0])))
    assert mmse_estimate(scaled)[0] == pytest.approx(3.0)
    with pytest.raises(DegenerateBeliefError, match="no existence support"):
        mmse_estimate(_pt([0.0], 1.0))


def test_existence_probability_examples():
    assert existence_probability(_pt([0.5, 0.3], 0.2)) == pytest.approx(0.8)
    assert existence_probability(_pt([0.0], 1.0)) == 0.0
    raw = _pt([0.4, 0.4], 0.2 * 3)
    ratio = raw.weights.sum() / (raw.weights.sum() + raw.nonexistence)
    assert existence_probability(normalize(raw)) == pytest.approx(ratio)


def test_resample_dominant_particle():
    rng = np.random.default_rng(0)
    belief = AgentBelief(_states([1.0, 2.0, 3.0]), [0.0, 1.0, 0.0])
    out = resample_systematic(belief, rng)
    np.testing.assert_allclose(out.particles[:, 0], [2.0, 2.0, 2.0])
    np.testing.assert_allclose(out.weights, np.full(3, 1.0 / 3))


def test_resample_uniform_keeps_every_particle():
    rng = np.random.default_rng(1)
    belief = AgentBelief.from_samples(_states(np.arange(10.0)))
    out = resample_systematic(belief, rng)
    assert sorted(out.particles[:, 0]) == list(np.arange(10.0))


def test_resample_pt_preserves_existence_exactly():
    rng = np.random.default_rng(2)
    pt = _pt([0.1, 0.2, 0.3, 0.05], 0.35, particles=_states([0, 1, 2, 3]))
    out = resample_systematic(pt, rng)
    assert existence_probability(out) == pytest.approx(existence_probability(pt), rel=1e-12)
    assert out.nonexistence == pt.nonexistence
    np.testing.assert_allclose(out.weights, np.full(4, 0.65 / 4))
    dead = _pt([0.0, 0.0], 1.0)
    assert resample_systematic(dead, rng) is dead


def test_resample_multiplicity_matches_weight():
    rng = np.random.default_rng(3)
    n = 100
    weights = np.full(n, 0.5 / (n - 1))
    weights[0] = 0.5
    belief = AgentBelief(_states(np.arange(n, dtype=float)), weights)
    counts = [int(np.sum(resample_systematic(belief, rng).particles[:, 0] == 0.0)) for _ in range(2000)]
    # systematic resampling keeps the count within one of N*w
    assert set(counts) <= {49, 50, 51}
    assert np.mean(counts) == pytest.approx(n * 0.5, abs=1.0)


def test_resample_preserves_mmse_within_monte_carlo_error():
    rng = np.random.default_rng(4)
    particles = np.column_stack([rng.normal(0, 100, 1000), np.zeros((1000, 3))])
    weights = rng.random(1000)
    belief = normalize(AgentBelief(particles, weights))
    out = resample_systematic(belief, rng)
    spread = particles[:, 0].std()
    assert abs(mmse_estimate(out)[0] - mmse_estimate(belief)[0]) < 3 * spread / np.sqrt(1000)


def test_resample_degenerate_raises():
    with pytest.raises(DegenerateBeliefError):
        resample_systematic(AgentBelief(_states([0.0]), [0.0]), np.random.default_rng(0))


def test_collapse_to_mmse_gives_point_mass():
    belief = AgentBelief(_states([0.0, 4.0]), [0.25, 0.75])
    point = collapse_to_mmse(belief)
    assert point.size == 1
    np.testing.assert_allclose(point.particles[0], [3.0, 0, 0, 0])
    assert point.weights[0] == pytest.approx(1.0)


def test_belief_shape_validation():
    with pytest.raises(ValueError):
        AgentBelief(np.zeros((3, 2)), np.ones(3))
    with pytest.raises(ValueError):
        PTBelief(np.zeros((3, 4)), np.ones(2), 0.0, (0, 0, 0))
