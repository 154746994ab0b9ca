import pytest

from iostack_sim.config import (
    ConfigError,
    SimConfig,
    dump_config,
    format_size,
    load_config,
    parse_size,
)


@pytest.mark.parametrize("text, n", [("4096", 4096), ("16KiB", 16384), ("8M", 8 << 20), ("4 GiB", 4 << 30)])
def test_parse_size(text, n):
    assert parse_size(text) == n


@pytest.mark.parametrize("text", ["", "4TB", "-1", "1.5MiB"])
def test_parse_size_rejects(text):
    with pytest.raises(ConfigError):
        parse_size(text)


def test_format_size_round_trip():
    for n in (512, 4096, 3 << 20, 5 << 30, 1000):
        assert parse_size(format_size(n)) == n


def test_defaults():
    cfg = load_config()
    assert cfg == SimConfig()
    assert cfg.run.object_count == 1000 and cfg.run.object_size == 8 << 20
    assert cfg.ag_extent.metadata_node_bytes == 16 << 10


def test_overlay_and_dump_round_trip(tmp_path):
    text = "[run]\nseed = 9\nobject_size = 4MiB\n[costs]\nfs_us = 12.5\n[device.ssd]\nchannel_parallelism = 4\n"
    cfg = load_config(text=text)
    assert cfg.run.seed == 9 and cfg.run.object_size == 4 << 20
    assert cfg.costs.fs_us == 12.5 and cfg.ssd.channel_parallelism == 4
    p = tmp_path / "c.ini"
    p.write_text(dump_config(cfg))
    assert load_config(str(p)) == cfg


def test_env_var(tmp_path, monkeypatch):
    p = tmp_path / "c.ini"
    p.write_text("[run]\nthread_count = 3\n")
    monkeypatch.setenv("IOSTACK_SIM_CONFIG", str(p))
    assert load_config().run.thread_count == 3


@pytest.mark.parametrize(
    "text, needle",
    [
        ("[bogus]\na = 1\n", "unknown section"),
        ("[run]\nnope = 1\n", "unknown key"),
        ("[run]\nseed = many\n", "seed"),
        ("[device.hdd]\nrpm = 0\n", "device.hdd"),
        ("[fs.ag-extent]\nname = other\n", "unknown key"),
    ],
)
def test_rejects(text, needle):
    with pytest.raises(ConfigError, match=needle):
        load_config(text=text)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/x.ini")


def test_selectors():
    cfg = SimConfig()
    assert cfg.fs("simple-extent").name == "simple-extent"
    assert cfg.device("hdd").kind == "hdd"
    with pytest.raises(ConfigError):
        cfg.fs("ext9")
    with pytest.raises(ConfigError):
        cfg.device("tape")
