import json
import logging
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from dynaconf import Dynaconf
from prepdir import load_config

from .hydrarot_error import ErrorType, HydrarotException

logger = logging.getLogger("hydrarot")


def _to_lowercase_keys(obj: Any) -> Any:
    """Recursively convert all dictionary keys to lowercase."""
    if not isinstance(obj, dict):
        return obj
    return {k.lower() if isinstance(k, str) else k: _to_lowercase_keys(v) for k, v in obj.items()}


def bundled_defaults() -> Dict:
    """Read the config.yaml shipped inside the package."""
    text = resources.files("hydrarot").joinpath("config.yaml").read_text(encoding="utf-8")
    return _to_lowercase_keys(yaml.safe_load(text) or {})


def _read_config_file(config_path: Union[str, Path]) -> Dict:
    path = Path(config_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise HydrarotException.of(ErrorType.CONFIGURATION, f"Cannot read config file: {e}", path=str(path))
    try:
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise HydrarotException.of(ErrorType.CONFIGURATION, f"Cannot parse config file: {e}", path=str(path))
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise HydrarotException.of(ErrorType.CONFIGURATION, "Config file must hold a mapping", path=str(path))
    return _to_lowercase_keys(data)


def _replace_lists(merged: Dict, layer: Dict) -> None:
    # Dynaconf concatenates lists when merging; a later layer replaces them instead
    for key, value in layer.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            _replace_lists(merged[key], value)
        elif isinstance(value, list):
            merged[key] = value


def load_settings(config_path: Optional[Union[str, Path]] = None, config_override: Optional[Dict] = None) -> Dict:
    """Layer bundled defaults, the prepdir-located user config, a config file and overrides.

    Later layers win; nested sections are merged rather than replaced.
    """
    layers = [bundled_defaults()]
    try:
        located = load_config(namespace="hydrarot")
        if located:
            layers.append(_to_lowercase_keys(located.as_dict() if hasattr(located, "as_dict") else dict(located)))
    except Exception as e:
        logger.debug(f"No user config located via prepdir, using bundled defaults: {e}")
    if config_path is not None:
        layers.append(_read_config_file(config_path))
    if config_override:
        layers.append(_to_lowercase_keys(config_override))

    settings = Dynaconf(merge_enabled=True)
    for layer in layers:
        settings.update(layer, merge=True)
    merged = _to_lowercase_keys(settings.as_dict())
    for layer in layers[1:]:
        _replace_lists(merged, layer)
    logger.debug(f"Settings used: {json.dumps(merged, indent=4, default=str)}")
    return merged


def parse_overrides(assignments: List[str]) -> Dict:
    """Turn ["exp1d.repetitions=2", ...] into a nested override dict; values parsed as YAML scalars."""
    override: Dict = {}
    for assignment in assignments:
        if "=" not in assignment:
            raise HydrarotException.of(
                ErrorType.CONFIGURATION, "Override must look like section.key=value", override=assignment
            )
        dotted, raw = assignment.split("=", 1)
        keys = [k.strip().lower() for k in dotted.split(".") if k.strip()]
        if not keys:
            raise HydrarotException.of(ErrorType.CONFIGURATION, "Override key is empty", override=assignment)
        node = override
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = yaml.safe_load(raw)
    return override


def section(settings: Dict, *path: str) -> Dict:
    """Fetch a nested settings section, failing with a configuration error when absent."""
    node: Any = settings
    for key in path:
        if not isinstance(node, dict) or key not in node:
            raise HydrarotException.of(ErrorType.CONFIGURATION, "Missing configuration section", section=".".join(path))
        node = node[key]
    return node
