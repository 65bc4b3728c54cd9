import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikeseq.core import (
    CoreConfig,
    EventStream,
    SequenceSpec,
    UnitBuffer,
    brute_force_match,
    input_connection_count,
    network_infer,
    spatial_density,
    unit_run,
    unit_run_fast,
    unit_step,
)


def stream(length, channels, events):
    return EventStream.from_events(length, channels, events)


def random_instance(rng, n_spines_max=5, dt_max=3, t_max=120, c_max=8):
    channels = int(rng.integers(2, c_max + 1))
    length = int(rng.integers(10, t_max + 1))
    n_spines = int(rng.integers(2, n_spines_max + 1))
    spec = SequenceSpec(
        origins=tuple(rng.integers(0, channels, size=n_spines)),
        intervals=tuple(rng.integers(1, 13, size=n_spines - 1)),
    )
    cfg = CoreConfig(accept_window=int(rng.integers(0, dt_max + 1)))
    density = rng.uniform(0.02, 0.35)
    dense = rng.random((length, channels)) < density
    return spec, EventStream.from_dense(dense), cfg


class TestSequenceSpec:
    def test_valid(self):
        spec = SequenceSpec(origins=(0, 1, 0), intervals=(5, 3))
        assert spec.n_spines == 3
        assert spec.max_interval == 5

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            SequenceSpec(origins=(0, 1), intervals=(5, 3))

    def test_zero_interval_rejected(self):
        with pytest.raises(ValueError):
            SequenceSpec(origins=(0, 1), intervals=(0,))

    def test_single_spine_rejected(self):
        with pytest.raises(ValueError):
            SequenceSpec(origins=(0,), intervals=())


class TestEventStream:
    def test_duplicate_events_rejected(self):
        with pytest.raises(ValueError):
            EventStream(5, 2, np.array([1, 1]), np.array([0, 0]))

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError):
            stream(5, 2, [(5, 0)])
        with pytest.raises(ValueError):
            stream(5, 2, [(0, 2)])

    def test_dense_roundtrip(self):
        rng = np.random.default_rng(0)
        dense = (rng.random((20, 4)) < 0.3).astype(np.uint8)
        s = EventStream.from_dense(dense)
        np.testing.assert_array_equal(s.to_dense(), dense)

    def test_frame(self):
        s = stream(10, 3, [(2, 0), (2, 2), (5, 1)])
        np.testing.assert_array_equal(s.frame(2), [1, 0, 1])
        np.testing.assert_array_equal(s.frame(3), [0, 0, 0])


class TestUnitStep:
    def test_exact_sequence_fires_at_last_spike(self):
        # x = [0, 1], gap 5, spikes at t=0 on ch0 and t=5 on ch1.
        spec = SequenceSpec(origins=(0, 1), intervals=(5,))
        s = stream(8, 2, [(0, 0), (5, 1)])
        assert unit_run(spec, s, CoreConfig()) == [5]

    def test_mistimed_spike_suppressed(self):
        spec = SequenceSpec(origins=(0, 1), intervals=(5,))
        s = stream(8, 2, [(0, 0), (4, 1)])
        assert unit_run(spec, s, CoreConfig()) == []

    def test_empty_stream_keeps_buffer_zero(self):
        spec = SequenceSpec(origins=(0, 1, 0), intervals=(2, 3))
        cfg = CoreConfig()
        buf = UnitBuffer.for_unit(spec, cfg)
        s = stream(12, 2, [])
        assert unit_run(spec, s, cfg) == []
        frame = np.zeros(2, dtype=np.uint8)
        for _ in range(12):
            assert unit_step(spec, buf, frame, cfg) == 0
        assert not buf.bits.any()

    def test_two_offset_copies_both_detected(self):
        spec = SequenceSpec(origins=(0, 1), intervals=(5,))
        s = stream(10, 2, [(0, 0), (1, 0), (5, 1), (6, 1)])
        cfg = CoreConfig()
        got = unit_run(spec, s, cfg)
        assert got == brute_force_match(spec, s, cfg) == [5, 6]

    def test_shape_mismatch_rejected(self):
        spec = SequenceSpec(origins=(0, 3), intervals=(2,))
        cfg = CoreConfig()
        buf = UnitBuffer.for_unit(spec, cfg)
        with pytest.raises(ValueError):
            unit_step(spec, buf, np.zeros(2, dtype=np.uint8), cfg)
        bad = UnitBuffer(1, 99)
        with pytest.raises(ValueError):
            unit_step(spec, bad, np.zeros(4, dtype=np.uint8), cfg)

    def test_buffer_reset(self):
        spec = SequenceSpec(origins=(0, 1), intervals=(3,))
        cfg = CoreConfig()
        buf = UnitBuffer.for_unit(spec, cfg)
        frame = np.array([1, 0], dtype=np.uint8)
        unit_step(spec, buf, frame, cfg)
        assert buf.bits.any()
        buf.reset()
        assert not buf.bits.any()
        assert not buf.refractory_fired


class TestUnitRun:
    def test_noise_on_uninvolved_channels_ignored(self):
        spec = SequenceSpec(origins=(0, 1), intervals=(5,))
        clean = stream(10, 4, [(0, 0), (5, 1)])
        noisy = stream(
            10, 4, [(0, 0), (1, 2), (2, 3), (3, 2), (4, 3), (5, 1), (7, 2)]
        )
        cfg = CoreConfig()
        assert unit_run(spec, clean, cfg) == unit_run(spec, noisy, cfg) == [5]

    def test_refractory_limits_to_first_emission(self):
        spec = SequenceSpec(origins=(0, 1), intervals=(5,))
        s = stream(20, 2, [(0, 0), (5, 1), (10, 0), (15, 1)])
        assert unit_run(spec, s, CoreConfig()) == [5, 15]
        assert unit_run(spec, s, CoreConfig(refractory=True)) == [5]

    def test_window_semantics_match_oracle(self):
        rng = np.random.default_rng(42)
        cfg = CoreConfig(accept_window=2)
        for _ in range(200):
            spec, s, _ = random_instance(rng)
            assert unit_run(spec, s, cfg) == brute_force_match(spec, s, cfg)

    def test_late_arrival_window(self):
        # gap 5 with window 2 accepts gaps 5..7 and nothing else
        spec = SequenceSpec(origins=(0, 1), intervals=(5,))
        cfg = CoreConfig(accept_window=2)
        for gap, expect in [(4, []), (5, [5]), (6, [6]), (7, [7]), (8, [])]:
            s = stream(12, 2, [(0, 0), (gap, 1)])
            assert unit_run(spec, s, cfg) == expect, f"gap {gap}"

    def test_window_match_clears_whole_window(self):
        # two in-flight starts both inside the window at the match time:
        # a single second spike consumes both.
        spec = SequenceSpec(origins=(0, 1), intervals=(5,))
        cfg = CoreConfig(accept_window=2)
        s = stream(12, 2, [(0, 0), (1, 0), (6, 1), (7, 1)])
        assert unit_run(spec, s, cfg) == brute_force_match(spec, s, cfg) == [6]


class TestNetworkInfer:
    def test_single_unit_column(self):
        spec = SequenceSpec(origins=(0, 1), intervals=(5,))
        s = stream(10, 2, [(0, 0), (5, 1)])
        cfg = CoreConfig()
        raster = network_infer([spec], s, cfg)
        assert raster.shape == (10, 1)
        assert list(np.nonzero(raster[:, 0])[0]) == unit_run(spec, s, cfg)

    def test_identical_specs_identical_columns(self):
        spec = SequenceSpec(origins=(1, 0, 1), intervals=(2, 4))
        rng = np.random.default_rng(3)
        s = EventStream.from_dense(rng.random((30, 2)) < 0.2)
        raster = network_infer([spec, spec, spec], s, CoreConfig())
        assert (raster[:, 0] == raster[:, 1]).all()
        assert (raster[:, 0] == raster[:, 2]).all()

    def test_columns_match_unit_run(self):
        rng = np.random.default_rng(7)
        channels = 6
        units = [
            SequenceSpec(
                origins=tuple(rng.integers(0, channels, size=k)),
                intervals=tuple(rng.integers(1, 8, size=k - 1)),
            )
            for k in rng.integers(2, 5, size=50)
        ]
        s = EventStream.from_dense(rng.random((60, channels)) < 0.15)
        cfg = CoreConfig(accept_window=1)
        raster = network_infer(units, s, cfg)
        for u, spec in enumerate(units):
            assert list(np.nonzero(raster[:, u])[0]) == unit_run(spec, s, cfg)


class TestOracle:
    def test_exact_single_sequence(self):
        spec = SequenceSpec(origins=(0, 1, 0), intervals=(3, 4))
        s = stream(10, 2, [(0, 0), (3, 1), (7, 0)])
        assert brute_force_match(spec, s, CoreConfig()) == [7]

    def test_no_first_origin_event(self):
        spec = SequenceSpec(origins=(1, 0), intervals=(2,))
        s = stream(10, 2, [(0, 0), (4, 0)])
        assert brute_force_match(spec, s, CoreConfig()) == []

    def test_randomized_equivalence(self):
        rng = np.random.default_rng(2024)
        for _ in range(400):
            spec, s, cfg = random_instance(rng)
            assert unit_run(spec, s, cfg) == brute_force_match(spec, s, cfg)


class TestFastPath:
    def test_matches_reference_loop(self):
        rng = np.random.default_rng(99)
        for _ in range(300):
            spec, s, cfg = random_instance(rng)
            assert unit_run_fast(spec, s, cfg) == unit_run(spec, s, cfg)

    def test_matches_reference_with_refractory(self):
        rng = np.random.default_rng(100)
        for _ in range(100):
            spec, s, cfg = random_instance(rng)
            cfg = CoreConfig(accept_window=cfg.accept_window, refractory=True)
            assert unit_run_fast(spec, s, cfg) == unit_run(spec, s, cfg)


class TestInvariants:
    def test_determinism(self):
        rng = np.random.default_rng(5)
        spec, s, cfg = random_instance(rng)
        assert unit_run(spec, s, cfg) == unit_run(spec, s, cfg)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_noise_immunity(self, seed):
        # events added on channels outside the origins never change output
        rng = np.random.default_rng(seed)
        channels = 6
        n_spines = int(rng.integers(2, 5))
        spec = SequenceSpec(
            origins=tuple(rng.integers(0, 3, size=n_spines)),
            intervals=tuple(rng.integers(1, 8, size=n_spines - 1)),
        )
        cfg = CoreConfig(accept_window=int(rng.integers(0, 3)))
        base = rng.random((50, channels)) < 0.15
        base[:, [c for c in range(channels) if c not in spec.origins]] = False
        noisy = base.copy()
        outside = [c for c in range(channels) if c not in spec.origins]
        if outside:
            noisy[:, outside] = rng.random((50, len(outside))) < 0.4
        clean_out = unit_run(spec, EventStream.from_dense(base), cfg)
        noisy_out = unit_run(spec, EventStream.from_dense(noisy), cfg)
        assert clean_out == noisy_out

    def test_exact_window_single_emission_per_completion(self):
        # accept_window 0: each completed sequence yields exactly one spike
        rng = np.random.default_rng(11)
        cfg = CoreConfig(accept_window=0)
        for _ in range(100):
            spec, s, _ = random_instance(rng, dt_max=0)
            got = unit_run(spec, s, cfg)
            assert len(got) == len(set(got))
            assert got == brute_force_match(spec, s, cfg)

    def test_refractory_bound(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            spec, s, cfg = random_instance(rng)
            cfg = CoreConfig(accept_window=cfg.accept_window, refractory=True)
            assert len(unit_run(spec, s, cfg)) <= 1

    def test_connection_count_and_density(self):
        units = [
            SequenceSpec(origins=(0, 1), intervals=(1,)),
            SequenceSpec(origins=(2, 0, 1), intervals=(2, 2)),
        ]
        assert input_connection_count(units) == 5
        assert spatial_density(units, 10) == pytest.approx(1 / 10)
