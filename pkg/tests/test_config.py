import pytest

from ocfmine.config import load_config, params_to_mapping
from ocfmine.model import ConfigError, SystemParams

TABLE = """
n_mus: 20
collaboration_factor: 3
block_reward: 1000
block_tx_count: 10
noise_power: -100     # dBm
bandwidth: 20         # MHz
ecp_freq: 1           # GHz
cycles_per_nonce: 1000  # Mega cycles
pricing:
  eps: 0.002
  step0: 0.5
"""


def test_units_are_normalised(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(TABLE)
    cfg = load_config(path)
    assert cfg.params.noise_power == pytest.approx(1e-13, rel=1e-12)
    assert cfg.params.bandwidth == 20e6
    assert cfg.params.ecp_freq == 1e9
    assert cfg.params.cycles_per_nonce == 1e9
    assert (cfg.pricing.eps, cfg.pricing.step0) == (0.002, 0.5)


def test_round_trip(tmp_path):
    import yaml
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(params_to_mapping(SystemParams())))
    p = load_config(path).params
    ref = SystemParams()
    for key, value in ref.as_dict().items():
        assert getattr(p, key) == pytest.approx(value, rel=1e-12), key


def test_missing_file_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nowhere.yaml"):
        load_config(tmp_path / "nowhere.yaml")


@pytest.mark.parametrize("text,key", [
    ("bogus: 1\n", "bogus"),
    ("n_mus: 0\n", "n_mus"),
    ("fee_range: 3\n", "fee_range"),
    ("bandwidth: fast\n", "bandwidth"),
    ("pricing:\n  eps: 0\n", "pricing.eps"),
    ("pricing:\n  tau: 1\n", "pricing.tau"),
])
def test_bad_values_name_the_key(tmp_path, text, key):
    path = tmp_path / "c.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert err.value.key == key
