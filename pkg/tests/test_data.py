import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phydnn.data import (
    COLUMNS,
    REGIMES,
    DataError,
    FlowRegime,
    ParticleDataset,
    SplitSpec,
    apply_standardization,
    fit_standardization,
    group_by_regime,
    load_csv,
    split,
    split_indices,
    synth_generate,
    write_csv,
)


def _one_regime_table(n, regime=(10.0, 0.1), seed=0):
    rng = np.random.default_rng(seed)
    table = rng.normal(size=(n, len(COLUMNS)))
    table[:, 45], table[:, 46] = regime
    return table


def test_schema():
    assert len(COLUMNS) == 74
    assert list(COLUMNS[:3]) == ["x1", "x2", "x3"] and list(COLUMNS[44:48]) == ["z15", "Re", "phi", "Fx"]
    assert list(COLUMNS[-6:]) == ["FPx", "FPy", "FPz", "FSx", "FSy", "FSz"]
    assert len(REGIMES) == 16 and len(set(REGIMES)) == 16


def test_sample_flattens_to_47_features():
    s = synth_generate(3, 0)[1]
    assert s.features().shape == (47,)
    assert np.array_equal(s.row(), synth_generate(3, 0).table[1])
    assert s.regime in REGIMES


def test_csv_round_trip_is_exact(tmp_path):
    data = synth_generate(300, 4, noise_sigma=0.3)
    path = tmp_path / "d.csv"
    write_csv(data, path)
    back = load_csv(path)
    assert np.array_equal(back.table, data.table)
    assert np.array_equal(back.regime_index, data.regime_index)


def test_csv_full_size_dataset(tmp_path):
    path = tmp_path / "d.csv"
    write_csv(synth_generate(5824, 0), path)
    assert len(load_csv(path)) == 5824


def test_csv_header_only_is_empty(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(",".join(COLUMNS) + "\n")
    assert len(load_csv(path)) == 0


def _write_rows(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n")


def test_csv_rejections_carry_diagnostics(tmp_path):
    good = [repr(float(v)) for v in synth_generate(1, 0).table[0]]
    p = tmp_path / "d.csv"

    bad = list(good)
    bad[45] = "75.0"
    _write_rows(p, COLUMNS, [good, bad])
    with pytest.raises(DataError, match=":3:"):
        load_csv(p)

    bad = list(good)
    bad[50] = "abc"
    _write_rows(p, COLUMNS, [bad])
    with pytest.raises(DataError, match="'p3'"):
        load_csv(p)

    _write_rows(p, COLUMNS, [good[:-1]])
    with pytest.raises(DataError, match="columns"):
        load_csv(p)

    _write_rows(p, COLUMNS[:-1], [good[:-1]])
    with pytest.raises(DataError, match="FSz"):
        load_csv(p)


def _two_regime_table():
    table = _one_regime_table(2)
    table[1, 45], table[1, 46] = 50.0, 0.2
    return table


def test_standardization_hand_example():
    table = _two_regime_table()
    table[:, 0] = [1.0, 3.0]
    stats = fit_standardization(ParticleDataset.from_table(table))
    assert stats.mean[0] == 2.0 and stats.std[0] == 1.0


def test_standardization_single_value():
    table = _two_regime_table()
    table[:, 0] = [8.0, 12.0]
    stats = fit_standardization(ParticleDataset.from_table(table))
    data = ParticleDataset.from_table(table)
    z = apply_standardization(data, stats)
    assert z.table[1, 0] == 1.0 and z.table[0, 0] == -1.0


def test_standardization_rejects_constant_column():
    data = synth_generate(50, 0)
    table = data.table.copy()
    table[:, 45], table[:, 46] = 10.0, 0.1
    with pytest.raises(DataError, match="Re"):
        fit_standardization(ParticleDataset.from_table(table))


def test_standardized_train_has_unit_moments_and_round_trips():
    data = synth_generate(800, 2, noise_sigma=0.1)
    stats = fit_standardization(data)
    z = apply_standardization(data, stats)
    assert np.all(np.abs(z.table.mean(axis=0)) < 1e-10)
    assert np.all(np.abs(z.table.std(axis=0) - 1) < 1e-10)
    back = apply_standardization(z, stats, "inverse")
    assert np.all(np.abs(back.table - data.table) <= 1e-12 * np.maximum(np.abs(data.table), 1e-300))
    assert np.all(apply_standardization(ParticleDataset(np.tile(stats.mean, (1, 1)), [0]), stats).table == 0)
    with pytest.raises(ValueError):
        apply_standardization(data, stats, "sideways")


def test_unstratified_split_counts():
    data = synth_generate(5824, 0)
    train, test = split_indices(data, SplitSpec(0.55, 0, stratify_by_regime=False))
    assert (len(train), len(test)) == (3203, 2621)


@settings(max_examples=25, deadline=None)
@given(st.integers(20, 400), st.integers(0, 2**31), st.floats(0.05, 0.95), st.booleans())
def test_split_partitions(n, seed, frac, strat):
    data = synth_generate(n, seed % 1000)
    spec = SplitSpec(frac, seed, strat)
    try:
        train, test = split_indices(data, spec)
    except DataError:
        assert strat and min(len(v) for v in group_by_regime(data).values()) < 2
        return
    assert np.intersect1d(train, test).size == 0
    assert np.array_equal(np.union1d(train, test), np.arange(n))
    again = split_indices(data, spec)
    assert np.array_equal(train, again[0]) and np.array_equal(test, again[1])
    if strat:
        for idx in group_by_regime(data).values():
            k = np.isin(idx, train).sum()
            assert k == min(max(math.floor(frac * len(idx) + 0.5), 1), len(idx) - 1)


def test_stratified_two_sample_regime():
    data = ParticleDataset.from_table(_one_regime_table(2))
    train, test = split(data, SplitSpec(0.5, 3))
    assert len(train) == 1 and len(test) == 1


def test_stratified_singleton_regime_rejected():
    with pytest.raises(DataError):
        split(ParticleDataset.from_table(_one_regime_table(1)), SplitSpec(0.5))


def test_bad_fraction_rejected():
    for frac in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            SplitSpec(frac)


def test_group_by_regime_partitions():
    data = synth_generate(1000, 5)
    groups = group_by_regime(data)
    assert len(groups) <= 16
    allidx = np.sort(np.concatenate(list(groups.values())))
    assert np.array_equal(allidx, np.arange(1000))
    single = group_by_regime(ParticleDataset.from_table(_one_regime_table(7)))
    assert list(single) == [FlowRegime(10.0, 0.1)] and np.array_equal(single[FlowRegime(10.0, 0.1)], np.arange(7))


def test_synth_deterministic_and_noiseless_sum():
    a, b = synth_generate(200, 9), synth_generate(200, 9)
    assert np.array_equal(a.table, b.table)
    assert np.all(a.drag == a.pressure_component[:, 0] + a.shear_component[:, 0])


def _oracle_row(sample):
    re, phi = sample.reynolds, sample.solid_fraction
    r = np.column_stack([sample.neighbor_x, sample.neighbor_y, sample.neighbor_z])
    c = sum(math.exp(-math.sqrt(x * x + y * y + z * z)) for x, y, z in r)
    p, v = [], []
    for k in range(1, 11):
        s = (k - 0.5) / 10
        p.append((1 + phi) * math.sqrt(re) / 10 * (1 - 2 * s) * (1 + c))
        v.append((1 - phi) * math.sqrt(re) / 5 * math.sin(math.pi * s) / (1 + c))
    fpx = 10 * sum(pk * (1 - 2 * ((k + 0.5) / 10)) for k, pk in enumerate(p)) / 10
    fsx = 3 * sum(v) / 10
    wy = sum(y * math.exp(-math.sqrt(x * x + y * y + z * z)) for x, y, z in r)
    wz = sum(z * math.exp(-math.sqrt(x * x + y * y + z * z)) for x, y, z in r)
    return p, v, [fpx, 0.1 * wy, 0.1 * wz], [fsx, 0.05 * wy, 0.05 * wz]


def test_synth_matches_independent_oracle():
    data = synth_generate(40, 11)
    for i in range(len(data)):
        s = data[i]
        d = np.sqrt(s.neighbor_x ** 2 + s.neighbor_y ** 2 + s.neighbor_z ** 2)
        assert np.all(np.diff(d) >= 0)
        assert np.all(np.abs(np.concatenate([s.neighbor_x, s.neighbor_y, s.neighbor_z])) <= 2.9)
        p, v, fp, fs = _oracle_row(s)
        np.testing.assert_allclose(s.pressure_field, p, rtol=1e-12)
        np.testing.assert_allclose(s.velocity_field, v, rtol=1e-12)
        np.testing.assert_allclose(s.pressure_component, fp, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(s.shear_component, fs, rtol=1e-12, atol=1e-14)


def test_synth_far_neighbors_limit():
    from phydnn.data import FIELD_POSITIONS, oracle_labels

    coords = np.full((1, 15, 3), 1e4)
    p, v, _, _ = oracle_labels(coords, np.array([100.0]), np.array([0.2]))
    np.testing.assert_allclose(p[0], 1.2 * 10 / 10 * (1 - 2 * FIELD_POSITIONS), rtol=1e-15)


def test_synth_noise_only_touches_drag():
    clean, noisy = synth_generate(100, 3), synth_generate(100, 3, noise_sigma=0.5)
    assert np.array_equal(np.delete(clean.table, 47, axis=1), np.delete(noisy.table, 47, axis=1))
    assert 0.3 < np.std(noisy.drag - clean.drag) < 0.7


def test_synth_mean_drag_increases_with_re():
    data = synth_generate(16000, 0)
    for phi in (0.1, 0.2, 0.3, 0.35):
        means = [data.drag[[r == FlowRegime(re, phi) for r in data.regimes]].mean() for re in (10, 50, 100, 200)]
        assert np.all(np.diff(means) > 0)


def test_synth_rejects_bad_args():
    with pytest.raises(ValueError):
        synth_generate(0, 0)
    with pytest.raises(ValueError):
        synth_generate(5, 0, noise_sigma=-1)


def test_dataset_is_safe_to_read_concurrently():
    from concurrent.futures import ThreadPoolExecutor

    data = synth_generate(500, 1)
    with ThreadPoolExecutor(4) as pool:
        sums = list(pool.map(lambda _: float(data.subset(np.arange(0, 500, 3)).drag.sum()), range(8)))
    assert len(set(sums)) == 1
