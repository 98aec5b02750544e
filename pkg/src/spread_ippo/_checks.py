"""Shared field validation for the config dataclasses."""


class FieldValueError(ValueError):
    def __init__(self, owner: str, field: str, value):
        super().__init__(f"invalid {owner}.{field}: {value!r}")
        self.field = field


def check_fields(obj, checks) -> None:
    for name, ok in checks:
        if not ok:
            raise FieldValueError(type(obj).__name__, name, getattr(obj, name))
