"""Plain-text key=value configuration files.

Lines hold `key = value` pairs; `#` starts a comment; later keys override
earlier ones.  Command-line flags override file values.
"""

from __future__ import annotations


def read_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"cannot parse boolean from {text!r}")


def parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


class Settings:
    """Resolve option values with precedence: CLI flag > config file > default."""

    def __init__(self, args, file_values: dict[str, str]):
        self._args = args
        self._file = file_values

    def get(self, name: str, cast, default):
        flag = getattr(self._args, name, None)
        if flag is not None:
            return flag if cast is str or not isinstance(flag, str) else cast(flag)
        if name in self._file:
            return cast(self._file[name])
        return default
