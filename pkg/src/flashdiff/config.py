"""key=value config files for the CLI.

One setting per line, ``#`` starts a comment. Keys are the long flag names
without dashes (``db-mib`` and ``db_mib`` both work). Boolean flags take
true/false.
"""

from __future__ import annotations

from pathlib import Path

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("_", "-")
        if not sep or not key:
            raise ConfigError(f"{source}:{n}: expected key=value, got {line!r}")
        out[key] = value.strip()
    return out


def load_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text(), str(path))


def config_argv(settings: dict[str, str], flags: set[str], switches: set[str]) -> list[str]:
    """Turn settings into argv tokens to put before the real command line.

    ``flags`` are options taking a value, ``switches`` are store_true options.
    Putting these first lets any flag given on the command line win.
    """
    argv: list[str] = []
    for key, value in settings.items():
        if key in switches:
            v = value.lower()
            if v in _TRUE:
                argv.append(f"--{key}")
            elif v not in _FALSE:
                raise ConfigError(f"{key} must be true or false, got {value!r}")
        elif key in flags:
            argv += [f"--{key}", value]
        else:
            raise ConfigError(f"unknown setting {key!r}")
    return argv
