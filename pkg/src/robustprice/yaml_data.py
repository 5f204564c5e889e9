from types import GenericAlias
from typing import Any, Self
from dataclasses import fields, is_dataclass
import inspect
import json
import numpy as np
import yaml


def is_empty(x: Any):
    return x is None or (isinstance(x, list) and not x) or (isinstance(x, dict) and not x)


def remove_empty_values(x: Any):
    """Recursively remove dict entries with None or empty container values."""
    if isinstance(x, list):
        return [remove_empty_values(e) for e in x]
    elif isinstance(x, dict):
        return {k: remove_empty_values(v) for k, v in x.items() if not is_empty(v)}
    else:
        return x


def plain_data(x: Any):
    """Recursively convert dataclasses, numpy arrays, and numpy scalars to plain Python data."""
    if isinstance(x, YamlData):
        return x.to_dict()
    elif is_dataclass(x) and not isinstance(x, type):
        return {f.name: plain_data(getattr(x, f.name)) for f in fields(x)}
    elif isinstance(x, np.ndarray):
        return plain_data(x.tolist())
    elif isinstance(x, np.generic):
        return x.item()
    elif isinstance(x, (list, tuple)):
        return [plain_data(e) for e in x]
    elif isinstance(x, dict):
        return {plain_data(k): plain_data(v) for k, v in x.items()}
    else:
        return x


class YamlData():
    """Utility methods to convert @dataclass objects to and from YAML and JSON.

    These use class inspection and @dataclass utilities to figure out
    field names and types -- these do not write or use custom YAML tags.
    Subclasses with numpy fields or sparse encodings override
    :meth:`to_dict` and :meth:`from_dict`.
    """

    def to_yaml(self, skip_empty: bool = True, dump_args: dict[str, Any] = {}) -> str:
        """Dump self to a plain YAML string without custom YAML tags."""

        self_dict = self.to_dict()
        if skip_empty:
            self_dict = remove_empty_values(self_dict)
        return yaml.safe_dump(self_dict, **dump_args)

    @classmethod
    def from_yaml(cls, instance_yaml) -> Self:
        """Read a class instance from a plain YAML (or JSON) string."""

        instance_dict = yaml.safe_load(instance_yaml)
        return cls.from_dict(instance_dict)

    def to_json(self, indent: int = 2) -> str:
        """Dump self to a JSON string."""
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, instance_json: str) -> Self:
        return cls.from_dict(json.loads(instance_json))

    def to_dict(self) -> dict[str, Any]:
        """Dump self to a plain dictionary of lists, floats, and strings."""
        return {f.name: plain_data(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, instance_dict) -> Self:
        """Read an instance of this YamlData class from a dictionary that has the same shape."""

        constructor_params = inspect.signature(cls).parameters
        sanitized_dict = {k: v for k, v in instance_dict.items() if k in constructor_params}
        instance = cls(**sanitized_dict)

        # The instance itself is now a YamlData subclass, but nested YamlData fields may still be dicts.
        instance.bless_yaml_data_fields()
        return instance

    @classmethod
    def field_is_yaml_data(cls, field):
        """Was this field declared as a YamlData subclass?"""
        return (isinstance(field.type, type)
                and issubclass(field.type, YamlData))

    @classmethod
    def field_is_list_of_yaml_data(cls, field):
        """Was this field declared as a generic list with a YamlData subclass for elements?"""
        return (isinstance(field.type, GenericAlias)
                and issubclass(field.type.__origin__, list)
                and isinstance(field.type.__args__[0], type)
                and issubclass(field.type.__args__[0], YamlData))

    def bless_yaml_data_fields(self):
        """Look for fields of self declared as YamlData subclasses, and convert these from dictionaries."""

        for field in fields(self):
            field_value = getattr(self, field.name)
            if YamlData.field_is_yaml_data(field):
                if isinstance(field_value, dict):
                    object.__setattr__(self, field.name, field.type.from_dict(field_value))
            elif YamlData.field_is_list_of_yaml_data(field):
                if isinstance(field_value, list):
                    element_type = field.type.__args__[0]
                    blessed_list = [element_type.from_dict(e) if isinstance(e, dict) else e for e in field_value]
                    object.__setattr__(self, field.name, blessed_list)
