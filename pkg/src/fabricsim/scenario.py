"""Scenario configuration: JSON schema, strict validation, bundled examples.

Configs are plain JSON. Validation is strict: any key the schema does not
know is rejected, and the error names the offending key path. Bundled
scenarios (table1, slicing, e2e_cups, queue_sweep) ship with the package and
can be referenced by name instead of path.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .netsim import LinkSpec
from .pilot import CfdCostModel, QueueDelayModel, SystemSpec, default_runtime_table
from .simcore import s_to_us
from .weather import ChannelModel, WeatherModel

BUNDLED = ("table1", "slicing", "e2e_cups", "queue_sweep")

_NUM = (int, float)


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check_mapping(raw, schema: dict, path: str) -> None:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'scenario'} must be a mapping")
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown key: {_join(path, key)}")
    for key, (required, kind) in schema.items():
        if key not in raw:
            if required:
                raise ConfigError(f"missing key: {_join(path, key)}")
            continue
        value = raw[key]
        where = _join(path, key)
        if isinstance(kind, dict):
            _check_mapping(value, kind, where)
        elif callable(kind) and not isinstance(kind, type):
            kind(value, where)
        else:
            if kind is float:
                kind = _NUM
            if not isinstance(value, kind) or isinstance(value, bool):
                raise ConfigError(f"bad value for {where}: expected "
                                  f"{getattr(kind, '__name__', kind)}")


def _list_of(item_schema, path_hint: str = "item"):
    def check(value, where):
        if not isinstance(value, list):
            raise ConfigError(f"bad value for {where}: expected a list")
        for i, item in enumerate(value):
            if isinstance(item_schema, dict):
                _check_mapping(item, item_schema, f"{where}[{i}]")
            else:
                item_schema(item, f"{where}[{i}]")
    return check


def _str_item(value, where):
    if not isinstance(value, str):
        raise ConfigError(f"bad value for {where}: expected string")


def _num_item(value, where):
    if not isinstance(value, _NUM) or isinstance(value, bool):
        raise ConfigError(f"bad value for {where}: expected number")


def _pair_item(value, where):
    if (not isinstance(value, list) or len(value) != 2
            or any(not isinstance(v, _NUM) or isinstance(v, bool) for v in value)):
        raise ConfigError(f"bad value for {where}: expected [number, number]")


def _routes_check(value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"bad value for {where}: expected a mapping")
    for key, links in value.items():
        if "->" not in key:
            raise ConfigError(f"bad route key {key!r} in {where}: use 'src->dst'")
        _list_of(_str_item)(links, f"{where}[{key!r}]")


_LINK = {
    "id": (True, str),
    "a": (True, str),
    "b": (True, str),
    "latency_mean_ms": (True, float),
    "latency_sd_ms": (True, float),
    "loss_prob": (False, float),
    "base_capacity_mbps": (False, float),
    "duplicate_prob": (False, float),
    "partitions_s": (False, _list_of(_pair_item)),
}

_TOPOLOGY = {
    "links": (True, _list_of(_LINK)),
    "routes": (False, _routes_check),
}

_QUEUE_DELAY = {
    "kind": (True, str),
    "value_s": (False, float),
    "mu": (False, float),
    "sigma": (False, float),
}

_SYSTEM = {
    "total_nodes": (False, int),
    "cores_per_node": (False, int),
    "max_runtime_s": (False, float),
    "queue_delay": (False, _QUEUE_DELAY),
}

_COST_MODEL = {
    "mean_runtime_s": (False, float),
    "runtime_sd_s": (False, float),
    "multi_node_penalty": (False, float),
}

_CHANNEL = {
    "mean": (True, float),
    "noise_sd": (True, float),
    "changes": (False, _list_of(_pair_item)),
}


def _weather_channels(value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"bad value for {where}: expected a mapping")
    for name, spec in value.items():
        _check_mapping(spec, _CHANNEL, f"{where}.{name}")


_WEATHER = {
    "station_id": (False, str),
    "channels": (True, _weather_channels),
}

_MEASUREMENT = {
    "label": (True, str),
    "client": (True, str),
    "server": (True, str),
    "log_name": (False, str),
    "element_size": (False, int),
    "payload_bytes": (True, int),
    "count": (True, int),
    "use_cache": (False, bool),
}

_LATENCY = {
    "measurements": (True, _list_of(_MEASUREMENT)),
}

_UE = {
    "name": (True, str),
    "efficiency": (True, float),
}

_SLICING = {
    "link": (True, str),
    "ue_low": (True, _UE),
    "ue_high": (True, _UE),
    "fractions": (True, _list_of(_num_item)),
    "samples": (True, int),
    "duration_s": (True, float),
    "noise_sd_mbps": (False, float),
}

_PILOT = {
    "strategy": (False, str),
    "threshold_bytes": (False, int),
    "task_cores": (False, int),
    "estimated_runtime_s": (False, float),
}

_CUPS = {
    "duration_s": (True, float),
    "cadence_s": (False, float),
    "duty_cycle_s": (False, float),
    "alpha": (False, float),
    "channels": (False, _list_of(_str_item)),
    "eval_offset_s": (False, float),
    "forward_offset_s": (False, float),
    "weather": (True, _WEATHER),
    "pilot": (False, _PILOT),
    "system": (False, _SYSTEM),
    "cost_model": (False, _COST_MODEL),
    "sustained_check_tasks": (False, int),
}

_QUEUE_SWEEP = {
    "alerts": (True, int),
    "alert_interval_s": (True, float),
    "cores": (False, int),
    "estimated_runtime_s": (False, float),
    "data_size_bytes": (False, int),
    "threshold_bytes": (False, int),
    "system": (False, _SYSTEM),
    "delays": (True, _list_of(_QUEUE_DELAY)),
    "strategies": (False, _list_of(_str_item)),
}

_TOP = {
    "name": (True, str),
    "kind": (True, str),
    "seed": (True, int),
    "topology": (False, _TOPOLOGY),
    "latency": (False, _LATENCY),
    "slicing": (False, _SLICING),
    "cups": (False, _CUPS),
    "queue_sweep": (False, _QUEUE_SWEEP),
}

_KIND_SECTION = {
    "latency_table": "latency",
    "slicing_sweep": "slicing",
    "cups": "cups",
    "queue_sweep": "queue_sweep",
}


def validate_scenario(raw: dict) -> None:
    _check_mapping(raw, _TOP, "")
    kind = raw["kind"]
    if kind not in _KIND_SECTION:
        raise ConfigError(f"unknown scenario kind {kind!r} "
                          f"(expected one of {sorted(_KIND_SECTION)})")
    section = _KIND_SECTION[kind]
    if section not in raw:
        raise ConfigError(f"missing key: {section} (required for kind {kind!r})")
    if kind in ("latency_table", "slicing_sweep", "cups") and "topology" not in raw:
        raise ConfigError(f"missing key: topology (required for kind {kind!r})")


def load_scenario(ref: str | Path) -> dict:
    """Load by path, or by bundled scenario name."""
    path = Path(ref)
    if path.exists():
        text = path.read_text()
    elif str(ref) in BUNDLED:
        text = resources.files("fabricsim").joinpath(
            f"scenarios/{ref}.json").read_text()
    else:
        raise ConfigError(f"scenario not found: {ref}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from exc
    validate_scenario(raw)
    return raw


# -- object builders ---------------------------------------------------------

def build_links(raw: dict) -> list[LinkSpec]:
    links = []
    for spec in raw["topology"]["links"]:
        partitions = tuple((s_to_us(a), s_to_us(b))
                           for a, b in spec.get("partitions_s", ()))
        links.append(LinkSpec(
            link_id=spec["id"], a=spec["a"], b=spec["b"],
            latency_mean_ms=spec["latency_mean_ms"],
            latency_sd_ms=spec["latency_sd_ms"],
            loss_prob=spec.get("loss_prob", 0.0),
            base_capacity_mbps=spec.get("base_capacity_mbps", 10_000.0),
            partitions_us=partitions,
            duplicate_prob=spec.get("duplicate_prob", 0.0)))
    return links


def build_routes(raw: dict) -> dict[tuple[str, str], list[str]]:
    routes = {}
    for key, link_ids in raw.get("topology", {}).get("routes", {}).items():
        src, dst = key.split("->", 1)
        routes[(src.strip(), dst.strip())] = list(link_ids)
    return routes


def build_weather(spec: dict) -> WeatherModel:
    channels = {}
    for name, ch in spec["channels"].items():
        channels[name] = ChannelModel(
            base_mean=ch["mean"], noise_sd=ch["noise_sd"],
            changes=tuple((t, m) for t, m in ch.get("changes", ())))
    return WeatherModel(station_id=spec.get("station_id", "cups-station-1"),
                        channels=channels)


def build_queue_delay(spec: dict | None) -> QueueDelayModel:
    if not spec:
        return QueueDelayModel()
    return QueueDelayModel(kind=spec["kind"], value_s=spec.get("value_s", 0.0),
                           mu=spec.get("mu", 7.0), sigma=spec.get("sigma", 1.5))


def build_system(spec: dict | None) -> SystemSpec:
    spec = spec or {}
    return SystemSpec(
        total_nodes=spec.get("total_nodes", 4),
        cores_per_node=spec.get("cores_per_node", 64),
        max_runtime_s=spec.get("max_runtime_s", 48 * 3600.0),
        queue_delay=build_queue_delay(spec.get("queue_delay")))


def build_cost_model(spec: dict | None) -> CfdCostModel:
    spec = spec or {}
    return CfdCostModel(
        mean_runtime_s=spec.get("mean_runtime_s", 420.39),
        runtime_sd_s=spec.get("runtime_sd_s", 36.29),
        runtime_table=default_runtime_table(),
        multi_node_penalty=spec.get("multi_node_penalty", 1.15))
