"""INI configuration: every tunable constant, with defaults that reproduce the
shipped calibration. Section keys are the field names of the matching dataclass.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
import re
from dataclasses import dataclass, field

from .device import HddProfile, SsdProfile
from .objdrive import DriveProfile
from .osstack import FsProfile, StackCosts
from .workload import ClusterSpec

ENV_VAR = "IOSTACK_SIM_CONFIG"

_UNITS = {"": 1, "B": 1, "K": 1 << 10, "KIB": 1 << 10, "M": 1 << 20, "MIB": 1 << 20,
          "G": 1 << 30, "GIB": 1 << 30}
_SIZE_RE = re.compile(r"^\s*(\d+)\s*([A-Za-z]*)\s*$")


class ConfigError(ValueError):
    pass


def parse_size(text: str) -> int:
    m = _SIZE_RE.match(text)
    if not m or m.group(2).upper() not in _UNITS:
        raise ConfigError(f"bad size {text!r} (use e.g. 4096, 16KiB, 8MiB)")
    return int(m.group(1)) * _UNITS[m.group(2).upper()]


def format_size(n: int) -> str:
    for unit, mult in (("GiB", 1 << 30), ("MiB", 1 << 20), ("KiB", 1 << 10)):
        if n >= mult and n % mult == 0:
            return f"{n // mult}{unit}"
    return str(n)


@dataclass(frozen=True)
class RunSettings:
    capacity_bytes: int = 4 << 30
    object_size: int = 8 << 20
    object_count: int = 1000
    thread_count: int = 16
    seed: int = 42
    theta: float = 0.99
    think_time_us: float = 0.0
    osd_index: int = 0


@dataclass(frozen=True)
class CacheSettings:
    dcache_entries: int = 256
    pagecache_bytes: int = 160 << 20
    dirty_ratio: float = 0.2

    @property
    def pagecache_pages(self) -> int:
        return self.pagecache_bytes // 4096


@dataclass(frozen=True)
class DuicSettings:
    io_sizes: str = "4KiB,128KiB"
    threads: str = "1,4,16,64"
    ios_per_thread: int = 256
    commit_every: int = 8
    reference_threads: int = 64
    reference_io_bytes: int = 128 << 10

    @property
    def io_size_list(self) -> list[int]:
        return [parse_size(s) for s in self.io_sizes.split(",")]

    @property
    def thread_list(self) -> list[int]:
        return [int(s) for s in self.threads.split(",")]


@dataclass(frozen=True)
class SimConfig:
    run: RunSettings = field(default_factory=RunSettings)
    cluster: ClusterSpec = field(default_factory=ClusterSpec)
    costs: StackCosts = field(default_factory=StackCosts)
    cache: CacheSettings = field(default_factory=CacheSettings)
    ag_extent: FsProfile = field(default_factory=FsProfile.ag_extent)
    simple_extent: FsProfile = field(default_factory=FsProfile.simple_extent)
    drive: DriveProfile = field(default_factory=DriveProfile)
    hdd: HddProfile = field(default_factory=HddProfile)
    ssd: SsdProfile = field(default_factory=SsdProfile)
    duic: DuicSettings = field(default_factory=DuicSettings)

    @property
    def capacity_sectors(self) -> int:
        return self.run.capacity_bytes // 512

    def fs(self, name: str) -> FsProfile:
        if name == "ag-extent":
            return self.ag_extent
        if name == "simple-extent":
            return self.simple_extent
        raise ConfigError(f"unknown filesystem profile {name!r}")

    def device(self, kind: str) -> HddProfile | SsdProfile:
        if kind == "hdd":
            return self.hdd
        if kind == "ssd":
            return self.ssd
        raise ConfigError(f"unknown device {kind!r} (hdd or ssd)")

    def with_run(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, **kw))


SECTIONS = {
    "run": "run",
    "cluster": "cluster",
    "costs": "costs",
    "cache": "cache",
    "fs.ag-extent": "ag_extent",
    "fs.simple-extent": "simple_extent",
    "drive": "drive",
    "device.hdd": "hdd",
    "device.ssd": "ssd",
    "duic": "duic",
}
_FIXED = {"name"}  # fields that identify a profile rather than tune it


def _is_size(name: str) -> bool:
    return name.endswith("_bytes") or name in ("object_size", "delayed_alloc_window")


def _convert(name: str, default, text: str):
    try:
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return parse_size(text) if _is_size(name) else int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    return text.strip()


def _apply(obj, section: str, items: dict[str, str]):
    known = {f.name: f for f in dataclasses.fields(obj) if f.name not in _FIXED}
    changes = {}
    for key, text in items.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        changes[key] = _convert(key, getattr(obj, key), text)
    try:
        return dataclasses.replace(obj, **changes)
    except ValueError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def load_config(path: str | None = None, text: str | None = None) -> SimConfig:
    """Defaults, overlaid by ``path`` (or $IOSTACK_SIM_CONFIG), overlaid by ``text``."""
    cfg = SimConfig()
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if text:
        parser.read_string(text)
    changes = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        attr = SECTIONS[section]
        changes[attr] = _apply(getattr(cfg, attr), section, dict(parser.items(section)))
    return dataclasses.replace(cfg, **changes)


def dump_config(cfg: SimConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, attr in SECTIONS.items():
        obj = getattr(cfg, attr)
        parser.add_section(section)
        for f in dataclasses.fields(obj):
            if f.name in _FIXED:
                continue
            v = getattr(obj, f.name)
            parser.set(section, f.name, format_size(v) if _is_size(f.name) else f"{v}")
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
