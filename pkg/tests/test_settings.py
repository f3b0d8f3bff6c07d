import dataclasses

import pytest

from app.errors import ConfigError
from app.settings import Settings, configure_logging, load_settings

ENV = {
    "log_level": ("CUBOID_LOG_LEVEL", "WARNING", "WARNING"),
    "jobs": ("CUBOID_JOBS", "3", 3),
    "max_iter": ("CUBOID_MAX_ITER", "50", 50),
    "huber_delta": ("CUBOID_HUBER_DELTA", "2.5", 2.5),
    "match_threshold": ("CUBOID_MATCH_THRESHOLD", "0.5", 0.5),
}


@pytest.fixture
def clean_env(monkeypatch):
    for name, _, _ in ENV.values():
        monkeypatch.delenv(name, raising=False)
    return monkeypatch


def test_defaults(clean_env):
    s = load_settings()
    assert (s.jobs, s.max_iter, s.huber_delta, s.match_threshold) == (1, 1000, 1.0, 0.3)


def test_env_overrides(clean_env):
    clean_env.setenv("CUBOID_JOBS", "4")
    clean_env.setenv("CUBOID_LOG_LEVEL", "debug")
    s = load_settings()
    assert s.jobs == 4
    assert s.log_level == "DEBUG"


def test_every_setting_follows_its_variable(clean_env):
    # no field may be read but ignored
    assert {f.name for f in dataclasses.fields(Settings)} == set(ENV)
    for attr, (name, raw, expected) in ENV.items():
        clean_env.setenv(name, raw)
        assert getattr(load_settings(), attr) == expected
        clean_env.delenv(name)


@pytest.mark.parametrize(
    "name, value",
    [("CUBOID_JOBS", "zero"), ("CUBOID_JOBS", "0"), ("CUBOID_HUBER_DELTA", "-1"),
     ("CUBOID_MATCH_THRESHOLD", "1.5"), ("CUBOID_LOG_LEVEL", "LOUD")],
)
def test_bad_values(monkeypatch, name, value):
    monkeypatch.setenv(name, value)
    with pytest.raises(ConfigError) as exc:
        load_settings()
    assert exc.value.exit_code == 2


def test_configure_logging_rejects_unknown_level():
    with pytest.raises(ConfigError):
        configure_logging("chatty")
