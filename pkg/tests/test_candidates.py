import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formopt.candidates import (
    InfeasibleParameterError,
    ParameterSpec,
    expand_ranges,
    generate_combination,
    generate_linear,
)


def cont(name, lower=None, upper=None, precision=None):
    return ParameterSpec(name, "continuous", lower=lower, upper=upper, precision=precision)


class TestExpandRanges:
    def test_half_span_per_side(self):
        out = expand_ranges({"a": (10.0, 20.0)}, [cont("a")], 0.1)
        assert out["a"] == pytest.approx((9.5, 20.5))

    def test_clipped_to_constraint(self):
        out = expand_ranges({"a": (10.0, 20.0)}, [cont("a", lower=10.0)], 0.1)
        assert out["a"] == pytest.approx((10.0, 20.5))

    def test_factor_zero_identity(self):
        out = expand_ranges({"a": (10.0, 20.0)}, [cont("a")], 0.0)
        assert out["a"] == (10.0, 20.0)

    def test_discrete_add_and_discard(self):
        spec = ParameterSpec("Rp", "discrete", add_values=(280.0,), discard_values=(160.0,))
        out = expand_ranges({"Rp": [160.0, 220.0]}, [spec], 0.1)
        assert out["Rp"] == [220.0, 280.0]

    def test_infeasible_errors(self):
        spec = cont("a", lower=30.0, upper=40.0)
        with pytest.raises(InfeasibleParameterError, match="a"):
            expand_ranges({"a": (10.0, 20.0)}, [spec], 0.0)


class TestGenerateLinear:
    def test_strict_mode_linspace(self):
        cs = generate_linear({"a": (0.0, 1.0)}, [cont("a")], n_star=3, shuffle=False)
        assert cs.points[:, 0].tolist() == [0.0, 0.5, 1.0]

    def test_strict_mode_diagonal_sweep(self):
        eff = {"a": (0.0, 1.0), "b": (0.0, 10.0)}
        cs = generate_linear(eff, [cont("a"), cont("b")], n_star=3, shuffle=False)
        assert cs.points.tolist() == [[0.0, 0.0], [0.5, 5.0], [1.0, 10.0]]

    def test_shuffle_preserves_column_multisets(self):
        eff = {"a": (0.0, 1.0), "b": (0.0, 10.0)}
        strict = generate_linear(eff, [cont("a"), cont("b")], n_star=11, shuffle=False)
        shuffled = generate_linear(eff, [cont("a"), cont("b")], n_star=11, seed=3)
        for j in range(2):
            assert sorted(shuffled.points[:, j]) == sorted(strict.points[:, j])

    def test_determinism(self):
        eff = {"a": (0.0, 1.0)}
        a = generate_linear(eff, [cont("a")], n_star=50, seed=7)
        b = generate_linear(eff, [cont("a")], n_star=50, seed=7)
        assert (a.points == b.points).all()

    def test_discrete_cycling(self):
        spec = ParameterSpec("Rp", "discrete")
        cs = generate_linear({"Rp": [160.0, 220.0]}, [spec], n_star=5, shuffle=False)
        assert cs.points[:, 0].tolist() == [160.0, 220.0, 160.0, 220.0, 160.0]


class TestGenerateCombination:
    def test_cartesian_product(self):
        eff = {"a": (0.0, 1.0), "Rp": [160.0, 220.0]}
        specs = [cont("a"), ParameterSpec("Rp", "discrete")]
        cs = generate_combination(eff, specs, {"a": 2})
        assert cs.points.tolist() == [
            [0.0, 160.0],
            [0.0, 220.0],
            [1.0, 160.0],
            [1.0, 220.0],
        ]

    def test_cap_draws_distinct_rows(self):
        eff = {"a": (0.0, 1.0), "Rp": [160.0, 220.0]}
        specs = [cont("a"), ParameterSpec("Rp", "discrete")]
        cs = generate_combination(eff, specs, {"a": 2}, cap=2, seed=1)
        assert len(cs) == 2
        assert len({tuple(r) for r in cs.points.tolist()}) == 2

    def test_precision_rounding(self):
        cs = generate_combination({"a": (0.0, 1.0)}, [cont("a", precision=1)], {"a": 3})
        assert cs.points[:, 0].tolist() == [0.0, 0.5, 1.0]

    def test_row_count_is_product_of_steps(self):
        eff = {"a": (0.0, 1.0), "b": (0.0, 2.0)}
        cs = generate_combination(eff, [cont("a"), cont("b")], {"a": 4, "b": 7})
        assert len(cs) == 28

    def test_safety_bound_requires_cap(self):
        eff = {f"x{i}": (0.0, 1.0) for i in range(9)}
        specs = [cont(f"x{i}") for i in range(9)]
        with pytest.raises(ValueError, match="cap"):
            generate_combination(eff, specs, {s.name: 10 for s in specs})


@settings(max_examples=40, deadline=None)
@given(
    lo=st.floats(-100, 100),
    span=st.floats(0.1, 50),
    factor=st.floats(0, 1),
    n=st.integers(2, 40),
    seed=st.integers(0, 1000),
)
def test_generated_columns_stay_in_effective_range(lo, span, factor, n, seed):
    spec = cont("a")
    eff = expand_ranges({"a": (lo, lo + span)}, [spec], factor)
    cs = generate_linear(eff, [spec], n_star=n, seed=seed)
    assert cs.points[:, 0].min() >= eff["a"][0] - 1e-12
    assert cs.points[:, 0].max() <= eff["a"][1] + 1e-12
