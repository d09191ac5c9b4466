#!/usr/bin/env python
# -*- coding: utf-8 -*-

# Created by pat on 4/4/18
"""
.. currentmodule:: depthkd.meta
.. moduleauthor:: Pat Daburu <pat@daburu.net>

This module contains the base class for the small, immutable-ish value objects
(domain configurations, network specifications, training configurations) that
describe an experiment.
"""
from abc import ABC
from enum import Enum
from typing import Any, Dict, Iterable


def _plain(value: Any) -> Any:
    """
    Convert a field value into something the `json` module can write.

    :param value: the value
    :return: a JSON-friendly equivalent
    """
    if isinstance(value, Enum):
        return value.value if not isinstance(value, int) else int(value)
    if isinstance(value, Description):
        return value.to_dict()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


class Description(ABC):
    """
    This is base class for objects that describe a part of an experiment.  The
    fields of a description are the names in its `__slots__`.
    """
    __slots__ = []

    @classmethod
    def fields(cls) -> Iterable[str]:
        """
        Get the names of the description's fields (in declaration order).

        :return: the field names
        """
        return list(cls.__slots__)

    def to_dict(self) -> Dict[str, Any]:
        """
        Get a JSON-friendly dictionary of the description's fields.

        :return: the dictionary
        """
        return {slot: _plain(getattr(self, slot)) for slot in self.fields()}

    @classmethod
    def from_dict(cls, values: Dict[str, Any]):
        """
        Create a description from a dictionary of field values.  Keys that
        don't name a field are ignored; missing keys take the constructor's
        defaults.

        :param values: the field values
        :return: the new description
        """
        return cls(**{
            k: v for k, v in dict(values).items() if k in cls.fields()
        })

    def validate(self):
        """
        Check the description's invariants.

        :raises depthkd.errors.ConfigError: if an invariant doesn't hold
        """

    def __eq__(self, other):
        # Descriptions of different types are never equal.
        if type(self) is not type(other):
            return False
        # Compare the values in all the slots.
        for slot in self.fields():
            # If one of the values isn't equal...
            if getattr(self, slot) != getattr(other, slot):
                # ...the objects aren't equal.
                return False
        # It looks like everything was the same.  Great.
        return True

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return hash(tuple(repr(getattr(self, s)) for s in self.fields()))

    def __repr__(self):
        # Produce a pseudo-constructor string from the slots.
        params = [
            f'{slot}={getattr(self, slot)!r}'
            for slot in self.fields()
        ]
        return f"{self.__class__.__name__}({', '.join(params)})"
