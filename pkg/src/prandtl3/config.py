"""Line-oriented run configuration.

Format: nested named blocks and key = value pairs, one item per line.

    problem {
      preset = shear-tanh
    }
    grid {
      n_t = 128
      n_zeta = 128
      T = 0.5
    }
    solver {
      max_picard = 40
      tol_sup = 1e-9
    }
    output {
      directory = out
    }

'#' starts a comment; blank lines are ignored; values keep everything
after the first '=' (so lists are space-separated, e.g. "x = 0 1").
Blocks nest arbitrarily.  Duplicate keys or blocks at the same level,
stray braces and unterminated blocks are parse errors with line numbers.
"""

from .errors import ConfigParse


class Config:
    """Nested view over parsed key/value data with typed access."""

    def __init__(self, data, path="<config>", prefix=""):
        self._data = data
        self.path = path
        self.prefix = prefix

    def _where(self, key):
        dotted = f"{self.prefix}.{key}" if self.prefix else key
        return f"{self.path}: {dotted}"

    def has(self, key):
        return key in self._data

    def keys(self):
        return list(self._data)

    def block(self, name, required=False):
        val = self._data.get(name)
        if val is None:
            if required:
                raise ConfigParse(f"{self._where(name)}: missing block")
            val = {}
        if not isinstance(val, dict):
            raise ConfigParse(f"{self._where(name)}: expected a block")
        pref = f"{self.prefix}.{name}" if self.prefix else name
        return Config(val, self.path, pref)

    def get(self, key, default=None, cast=str, required=False):
        if key not in self._data:
            if required:
                raise ConfigParse(f"{self._where(key)}: missing key")
            return default
        val = self._data[key]
        if isinstance(val, dict):
            raise ConfigParse(f"{self._where(key)}: expected a value, found a block")
        try:
            if cast is bool:
                low = val.lower()
                if low in ("true", "yes", "on", "1"):
                    return True
                if low in ("false", "no", "off", "0"):
                    return False
                raise ValueError(val)
            return cast(val)
        except (TypeError, ValueError):
            raise ConfigParse(
                f"{self._where(key)}: cannot read {val!r} as {cast.__name__}")

    def get_floats(self, key, count=None, required=False, default=None):
        raw = self.get(key, required=required)
        if raw is None:
            return default
        try:
            vals = [float(p) for p in raw.split()]
        except ValueError:
            raise ConfigParse(f"{self._where(key)}: cannot read {raw!r} as numbers")
        if count is not None and len(vals) != count:
            raise ConfigParse(
                f"{self._where(key)}: expected {count} numbers, found {len(vals)}")
        return vals


def parse_config(text, path="<config>"):
    root = {}
    stack = [root]
    names = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "}":
            if len(stack) == 1:
                raise ConfigParse(f"{path}:{lineno}: unmatched '}}'")
            stack.pop()
            names.pop()
            continue
        if line.endswith("{"):
            name = line[:-1].strip()
            if not name or "=" in name or "{" in name or "}" in name:
                raise ConfigParse(f"{path}:{lineno}: malformed block header {raw!r}")
            if name in stack[-1]:
                raise ConfigParse(f"{path}:{lineno}: duplicate entry {name!r}")
            blk = {}
            stack[-1][name] = blk
            stack.append(blk)
            names.append(name)
            continue
        if "=" in line:
            key, val = line.split("=", 1)
            key, val = key.strip(), val.strip()
            if not key or "{" in val or "}" in val:
                raise ConfigParse(f"{path}:{lineno}: malformed assignment {raw!r}")
            if key in stack[-1]:
                raise ConfigParse(f"{path}:{lineno}: duplicate entry {key!r}")
            stack[-1][key] = val
            continue
        raise ConfigParse(f"{path}:{lineno}: cannot parse {raw!r}")
    if len(stack) != 1:
        raise ConfigParse(f"{path}: unterminated block {names[-1]!r}")
    return Config(root, path)


def load_config(path):
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigParse(f"{path}: {exc.strerror or exc}")
    return parse_config(text, str(path))
