"""INI run configuration: parsing, validation, derived values and the
resolved dump."""
import pytest

from capa_inr.config import RunConfig
from capa_inr.errors import ConfigError

MINIMAL = """
[sampling]
sobol_seed = 1
[training]
root_seed = 2
"""


def config(extra=""):
    return RunConfig.from_text(MINIMAL + extra)


class TestParsing:
    def test_defaults(self):
        cfg = config()
        assert cfg["training"]["epochs"] == 50 and cfg["network"]["hidden_width"] == 256
        assert cfg["training"]["models"] == ("beainr", "coefinr")

    @pytest.mark.parametrize("text", [
        "[physics]\nfrequency = 1\n",
        "[plotting]\nstyle = x\n",
        "[network.coefinr]\ncarrier = focus\n",
        "[network]\nactivation = gelu\n",
        "[training]\nmodels = beainr, mlp\n",
        "[physics]\nfreq_hz = fast\n",
        "[physics]\npower_budget = -1\n",
        "[apertures]\nregion_z = -1, 5\n",
        "[eval]\nsweep_axis = noise\n",
    ])
    def test_rejects_invalid(self, text):
        with pytest.raises(ConfigError):
            _merge(text)

    @pytest.mark.parametrize("missing", ["sobol_seed", "root_seed"])
    def test_seeds_required(self, missing):
        text = MINIMAL.replace(f"{missing} = {1 if missing == 'sobol_seed' else 2}", "")
        with pytest.raises(ConfigError, match=missing):
            RunConfig.from_text(text)

    def test_replace_validates(self):
        with pytest.raises(ConfigError):
            config().replace("training", "nonsense", 1)
        with pytest.raises(ConfigError):
            config().replace("training", "batch_size", 0)
        assert config().replace("training", "root_seed", 9).root_seed == 9


def _merge(text):
    """Append ``text`` after the minimal config, merging repeated sections."""
    import configparser
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(MINIMAL)
    extra = configparser.ConfigParser(interpolation=None)
    extra.optionxform = str
    extra.read_string(text)
    for section in extra.sections():
        if not parser.has_section(section):
            parser.add_section(section)
        for key, value in extra[section].items():
            parser[section][key] = value
    out = []
    for section in parser.sections():
        out.append(f"[{section}]")
        out += [f"{k} = {v}" for k, v in parser[section].items()]
    return RunConfig.from_text("\n".join(out) + "\n")


class TestDerived:
    def test_desk_values(self):
        """[DERIVED] lambda = 1 m: 25 and 9 modes, BS orders scale with L_B / L_U = 4."""
        cfg = config()
        d = cfg.derived()
        assert d["wavelength"] == 1.0
        assert d["num_streams"] == 9
        assert (d["m_bg"], d["m_bs"], d["eval_m_bg"]) == (24, 2304, 40)
        assert d["fourier_truncation"] == 2 and d["spda_spacing"] == 0.5

    def test_explicit_overrides(self):
        cfg = _merge("[physics]\nnum_streams = 2\n[sampling]\nm_bg = 10\n")
        assert cfg.num_streams == 2 and cfg.m_bg == 10

    def test_stream_override_too_large(self):
        with pytest.raises(ConfigError):
            _merge("[physics]\nnum_streams = 50\n")

    def test_network_override_sections(self):
        cfg = _merge("[network]\nhidden_width = 32\n[network.beainr]\nhidden_width = 8\ncarrier = focus\n")
        assert cfg.network("beainr").hidden_width == 8 and cfg.network("beainr").carrier == "focus"
        assert cfg.network("coefinr").hidden_width == 32 and cfg.network("coefinr").carrier == "none"

    def test_typed_views(self):
        cfg = _merge("[physics]\nnum_streams = 2\n")
        setup, sampling, train_cfg = cfg.setup(), cfg.sampling(), cfg.train_config()
        assert setup.phys.num_streams == 2 and setup.bs.area == 4.0
        assert (sampling.m_ug, sampling.m_bg, sampling.sobol_seed) == (6, 24, 1)
        assert train_cfg.root_seed == 2 and train_cfg.eval_m_bg == 40


class TestDump:
    def test_idempotent(self):
        cfg = _merge("[physics]\nnum_streams = 2\n[network.beainr]\nhidden_layers = 3\n")
        text = cfg.dump()
        again = RunConfig.from_text(text)
        assert again.dump() == text
        assert again.derived() == cfg.derived()
        for kind in ("beainr", "coefinr"):
            assert again.network(kind) == cfg.network(kind)

    def test_echoes_derived(self):
        text = config().dump()
        assert "[derived]" in text and "m_bs = 2304" in text and "wavelength = 1.0" in text
