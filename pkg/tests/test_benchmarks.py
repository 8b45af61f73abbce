"""Performance benchmarks for the hot paths of lsvx.

Run: PYTHONPATH=python pytest tests/test_benchmarks.py --benchmark-only
"""

import math

import pytest

pytest.importorskip("pytest_benchmark")

from lsvx.expansions import tail_expansion
from lsvx.generators import enumerate_multiindices, sv_coefficients
from lsvx.oracles import CharExponent, fourier_call
from lsvx.smile import BSQuote, bs_price, implied_vol

# ═══════════════════════════════════════════════════════════════════
# Expansions
# ═══════════════════════════════════════════════════════════════════


class TestExpansionBenchmark:
    def test_multiindices_order_4(self, benchmark):
        indices = benchmark(enumerate_multiindices, 4)
        assert len(indices) == math.comb(8, 4)

    def test_sv_table_order_4(self, benchmark, heston):
        table = benchmark(sv_coefficients, heston, 4)
        assert table.B(1, 1) == pytest.approx(0.02)

    def test_tail_order_2(self, benchmark, kou_tail_model, heston):
        table = sv_coefficients(heston, 1)
        exp = benchmark(tail_expansion, kou_tail_model, heston, table, 0.5, 2)
        assert exp.order == 2


# ═══════════════════════════════════════════════════════════════════
# Oracles and smile
# ═══════════════════════════════════════════════════════════════════


class TestOracleBenchmark:
    def test_fourier_call(self, benchmark, merton):
        char = CharExponent.from_density(merton, sigma0=0.2)
        result = benchmark(fourier_call, char, -0.1, 0.25)
        assert result.price > 0.0

    def test_implied_vol(self, benchmark):
        price = bs_price(BSQuote(100.0, 110.0, 0.01, 0.3, 0.5))
        sigma = benchmark(implied_vol, price, 100.0, 110.0, 0.01, 0.5)
        assert sigma == pytest.approx(0.3, rel=1e-8)
