import json

import pytest

pytest.importorskip("torch")

from stitch.configs import STITCH_CONFIGS, load_run_config, run_config_from_dict
from stitch.utils import ConfigError


def _write(tmp_path, text):
    path = tmp_path / 'run.json'
    path.write_text(text)
    return path


def test_defaults_are_kept_for_missing_sections():
    cfg = run_config_from_dict({'sim': {'p': 40, 'n': 4, 'T': 200, 'seed': 3}})
    assert cfg.sim.p == 40 and cfg.sim.seed == 3
    assert cfg.sim.eig_modulus_range == STITCH_CONFIGS['sim'].eig_modulus_range
    assert cfg.s3id.n == STITCH_CONFIGS['s3id'].n
    assert cfg.s3id.adam.step_size == STITCH_CONFIGS['s3id'].adam.step_size


def test_overrides_do_not_leak_into_defaults():
    before = STITCH_CONFIGS['s3id'].adam.step_size
    cfg = run_config_from_dict({'s3id': {'seed': 1, 'adam': {'step_size': 0.5}}})
    assert cfg.s3id.adam.step_size == 0.5
    assert STITCH_CONFIGS['s3id'].adam.step_size == before


def test_unknown_key_is_reported_with_its_line(tmp_path):
    text = '{\n  "sim": {\n    "seed": 1,\n    "bogus": 2\n  }\n}\n'
    with pytest.raises(ConfigError) as info:
        load_run_config(_write(tmp_path, text))
    assert info.value.line == 4
    assert 'bogus' in str(info.value)


def test_unknown_section_is_rejected():
    with pytest.raises(ConfigError):
        run_config_from_dict({'solver': {'seed': 0}})


def test_seed_must_be_explicit(tmp_path):
    text = json.dumps({'sem': {'n': 3}}, indent=2)
    with pytest.raises(ConfigError) as info:
        load_run_config(_write(tmp_path, text))
    assert info.value.line == 2


@pytest.mark.parametrize("section, values", [
    ('sim', {'seed': 0, 'n': 2000}),
    ('sim', {'seed': 0, 'private_noise_fraction': 1.0}),
    ('sim', {'seed': 0, 'eig_modulus_range': [0.9, 1.0]}),
    ('s3id', {'seed': 0, 'mode': 'cubic'}),
    ('s3id', {'seed': 0, 'lag_weights': [1.0, -1.0]}),
    ('s3id', {'seed': 0, 'adam': {'step_size': 0.0}}),
    ('s3id', {'seed': 0, 'init': 'spectral'}),
    ('s3id', {'seed': 0, 'init_iters': 0}),
    ('s3id', {'seed': 0, 'adam': {'schedule': 'linear'}}),
    ('sem', {'seed': 0, 'restarts': 0}),
    ('sem', {'seed': 0, 'init_ridge': -1.0}),
    ('eval', {'seed': 0, 'lags': []}),
    ('scheme', {'kind': 'random'}),
])
def test_invalid_values_are_rejected(section, values):
    with pytest.raises(ConfigError):
        run_config_from_dict({section: values})


def test_invalid_json_reports_line(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_run_config(_write(tmp_path, '{\n  "sim": {\n    "seed": 1,\n  }\n}'))
    assert info.value.line == 4


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / 'absent.json')
