import numpy as np
import pytest

from channel import csit_on_independent_set, independent_subcarrier_set, sample_csit_block, taps_to_freq
from exceptions import ContractError
from models import CsitErrorModel, NcChiSqParams, PhyParams, PowerDelayProfile
from phy import (
    f_quality,
    from_db,
    mutual_information,
    packet_error,
    quality_batch,
    quality_curve,
    outage_rate,
    required_power_curve,
    sample_quality,
    to_db,
    total_power,
    tx_power,
)
from specfun import ncx2_quantile


@pytest.fixture
def phy():
    return PhyParams(n_fft=64, target_per=0.01, sigma_e2=0.05, circuit_power=0.0, n_taps=4)


class TestQuality:
    def test_quantile_of_energy_on_independent_set(self, phy, rng):
        taps = rng.standard_normal(4) * 0.5 + 0.2j
        csit = taps_to_freq(taps, 64)
        index_set = independent_subcarrier_set(64, 4)
        s2 = np.mean(np.abs(csit[index_set]) ** 2)
        expected = ncx2_quantile(0.01, NcChiSqParams(4, s2, 0.05))
        assert f_quality(phy, csit) == pytest.approx(expected, rel=1e-12)

    def test_batch_matches_scalar(self, phy, rng):
        taps = sample_csit_block(PowerDelayProfile.uniform(4), CsitErrorModel.uniform(0.05, 4), 20, rng)
        batch = quality_batch(phy, csit_on_independent_set(taps))
        scalar = [f_quality(phy, taps_to_freq(row, 64)) for row in taps]
        np.testing.assert_allclose(batch, scalar, rtol=1e-5)

    def test_index_set_size_checked(self, phy):
        with pytest.raises(ContractError):
            f_quality(phy, np.ones(64), index_set=[0, 16])

    def test_quality_grows_with_csit_energy(self, phy):
        weak = f_quality(phy, np.full(64, 0.5 + 0j))
        strong = f_quality(phy, np.full(64, 1.5 + 0j))
        assert strong > weak > 0

    def test_mean_quality_decreases_with_csit_error(self, rng):
        means = []
        for sigma_e2 in (0.01, 0.05, 0.1, 0.3):
            phy = PhyParams(64, 0.01, sigma_e2, 0.0, 4)
            f = sample_quality(
                phy, PowerDelayProfile.uniform(4), CsitErrorModel.uniform(sigma_e2, 4), 20_000,
                np.random.default_rng(7),
            )
            means.append(f.mean())
        assert all(a > b for a, b in zip(means, means[1:]))


class TestPower:
    def test_tx_power_formula(self):
        assert tx_power(64 * np.log(2.0), 0.5, 64) == pytest.approx(128.0)

    def test_zero_rate_costs_nothing(self, phy):
        circuit = PhyParams(64, 0.01, 0.05, 2.0, 4)
        assert total_power(0.0, 0.3, circuit) == 0.0
        assert total_power(10.0, 0.3, circuit) == pytest.approx(tx_power(10.0, 0.3, 64) + 2.0)

    def test_negative_rate_rejected(self):
        with pytest.raises(ContractError):
            tx_power(-1.0, 0.5, 64)

    def test_flat_channel_rate_is_achievable(self):
        # with |H_n|^2 = f on every subcarrier the scheduled rate is exactly the capacity
        rate, f = 50.0, 0.4
        p_tx = tx_power(rate, f, 64)
        capacity = mutual_information(np.full(64, np.sqrt(f)), p_tx, 64)
        assert capacity == pytest.approx(rate, rel=1e-12)

    def test_outage_oracle(self):
        channel = np.full(64, np.sqrt(0.4))
        p_tx = tx_power(50.0, 0.4, 64)
        assert packet_error(49.0, channel, p_tx, 64) == 0
        assert packet_error(51.0, channel, p_tx, 64) == 1
        assert packet_error(0.0, channel, 0.0, 64) == 0

    def test_db_conversions(self):
        assert to_db(100.0) == pytest.approx(20.0)
        assert from_db(-10.0) == pytest.approx(0.1)
        np.testing.assert_allclose(from_db(to_db(np.array([0.5, 3.0]))), [0.5, 3.0])
        assert to_db(0.0) == -np.inf


class TestCurves:
    def test_required_power_grows_with_rate_and_error(self, phy, rng):
        table = required_power_curve([10.0, 50.0, 100.0], [0.01, 0.1], phy, 5000, rng)
        assert list(table.columns) == ["sigma_e2", "rate", "required_power_db"]
        for _, group in table.groupby("sigma_e2"):
            assert group["required_power_db"].is_monotonic_increasing
        at_rate = table[table["rate"] == 50.0].set_index("sigma_e2")["required_power_db"]
        assert at_rate[0.1] > at_rate[0.01]

    def test_quality_curve(self, phy, rng):
        table = quality_curve([0.01, 0.1, 0.3], [0.1, 0.01], phy, 5000, rng)
        assert len(table) == 6
        for _, group in table.groupby("target_per"):
            assert group.sort_values("sigma_e2")["mean_f"].is_monotonic_decreasing
        strict = table[table["sigma_e2"] == 0.1].set_index("target_per")["mean_f"]
        assert strict[0.01] < strict[0.1]


class TestOutage:
    @pytest.fixture
    def channel(self):
        return PowerDelayProfile.uniform(4), CsitErrorModel.uniform(0.05, 4)

    @pytest.mark.parametrize("eps", [0.01, 0.05])
    def test_low_rate_meets_target(self, eps, channel):
        # r / n_F = 0.01: the quantile of the received energy sets the PER
        phy = PhyParams(64, eps, 0.05, 0.0, 4)
        per = outage_rate(phy, *channel, 0.01 * 64, 200_000, np.random.default_rng(21))
        assert 0.7 * eps <= per <= 1.3 * eps

    def test_per_grows_with_rate(self, phy, channel):
        # log(1 + P|H|^2 / n_F) is concave: at higher SNR the energy quantile undershoots
        low = outage_rate(phy, *channel, 0.01 * 64, 100_000, np.random.default_rng(3))
        high = outage_rate(phy, *channel, np.log(1.3) * 64, 100_000, np.random.default_rng(3))
        assert high > 2.0 * phy.target_per
        assert high > low

    def test_rate_must_be_positive(self, phy, channel, rng):
        with pytest.raises(ContractError):
            outage_rate(phy, *channel, 0.0, 10, rng)
