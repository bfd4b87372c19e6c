"""Flat dotted-key run configuration.

Config files are plain text, one ``key = value`` pair per line, with ``#``
comments. Every key is checked against the registry below; unknown keys
are rejected so typos cannot silently fall back to defaults. A run always
writes its fully resolved configuration next to its outputs.
"""

from __future__ import annotations

from .errors import ConfigError


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _float_or_auto(text):
    if str(text).strip().lower() == "auto":
        return "auto"
    return float(text)


def _span(text):
    parts = str(text).replace(":", ",").split(",")
    if len(parts) != 2:
        return None
    return (float(parts[0]), float(parts[1]))


def _columns(text):
    """Parse "Hare=u,Lynx=v" (or plain "u,v") into ((csv_name, alias), ...)."""
    out = []
    for piece in str(text).split(","):
        piece = piece.strip()
        if not piece:
            continue
        if "=" in piece:
            src, _, alias = piece.partition("=")
            out.append((src.strip(), alias.strip()))
        else:
            out.append((piece, piece))
    if not out:
        raise ConfigError("data.columns must list at least one column")
    return tuple(out)


# key -> (parser, default); defaults of None mean "required when used".
KNOWN_KEYS = {
    "data.path": (str, None),
    "data.time_column": (str, "t"),
    "data.columns": (_columns, ()),
    "data.normalize": (_bool, False),
    "diff.method": (str, "smoothed"),
    "diff.window": (int, 5),
    "diff.max_order": (int, 1),
    "diff.smoothing": (float, 0.0),
    "tokens.max_factors": (int, 2),
    "tokens.max_power": (int, 2),
    "tokens.use_inverse": (_bool, True),
    "tokens.use_constant": (_bool, True),
    "regression.lambda": (_float_or_auto, "auto"),
    "regression.epsilon": (float, 1e-6),
    "regression.max_sweeps": (int, 10000),
    "regression.tol": (float, 1e-8),
    "evo.population": (int, 64),
    "evo.generations": (int, 100),
    "evo.min_terms": (int, 2),
    "evo.max_terms": (int, 6),
    "evo.crossover_rate": (float, 0.8),
    "evo.mutation_rate": (float, 0.3),
    "evo.seed": (int, 0),
    "evo.archive_size": (int, 4),
    "ensemble.runs": (int, 20),
    "ensemble.min_support": (int, 2),
    "ensemble.top_l": (int, 3),
    "bn.max_parents": (int, 3),
    "bn.samples": (int, 30),
    "solve.rtol": (float, 1e-7),
    "solve.atol": (float, 1e-9),
    "solve.report_points": (int, 200),
    "solve.t_span": (_span, None),
    "baseline.n_boot": (int, 1000),
    "baseline.refine_points": (int, 201),
    "baseline.keep_fraction": (float, 0.5),
    "baseline.threshold": (float, 0.2),
    "baseline.normalize": (_bool, True),
    "baseline.resample_rows": (_bool, True),
    "run.seed": (int, 0),
    "run.output_dir": (str, "out"),
    "run.case": (str, "a"),
}

# prefix keys take arbitrary suffixes (e.g. bn.anchor.u = d1_u)
PREFIX_KEYS = {"bn.anchor.": str}


def parse_value(key, text):
    parser = None
    if key in KNOWN_KEYS:
        parser = KNOWN_KEYS[key][0]
    else:
        for prefix, p in PREFIX_KEYS.items():
            if key.startswith(prefix):
                parser = p
                break
    if parser is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    try:
        value = parser(text)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from exc
    if value is None:
        raise ConfigError(f"bad value for {key!r}: {text!r}")
    return value


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(str(text).splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        # split at the first '='; alias values like "Hare=u,Lynx=v" keep
        # their inner '=' characters intact
        key, _, raw_value = line.partition("=")
        values[key.strip()] = parse_value(key.strip(), raw_value.strip())
    return values


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def resolve(values=None, overrides=None):
    """Fill defaults, apply the case (a)/(b) rule, and validate."""
    resolved = {k: default for k, (_, default) in KNOWN_KEYS.items()}
    for source in (values or {}), (overrides or {}):
        for key, value in source.items():
            if key not in KNOWN_KEYS and not any(
                key.startswith(p) for p in PREFIX_KEYS
            ):
                raise ConfigError(f"unknown configuration key {key!r}")
            resolved[key] = value
    case = resolved["run.case"]
    if case not in ("a", "b"):
        raise ConfigError(f"run.case must be 'a' or 'b', got {case!r}")
    explicit_order = (values or {}).get("diff.max_order") or (
        overrides or {}
    ).get("diff.max_order")
    resolved["diff.max_order"] = explicit_order or (1 if case == "a" else 2)
    return resolved


def format_config(resolved):
    """Resolved config as canonical key-sorted text."""
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if value is None:
            continue
        if key == "data.columns":
            value = ",".join(
                src if src == alias else f"{src}={alias}" for src, alias in value
            )
        elif key == "solve.t_span" and isinstance(value, tuple):
            value = f"{value[0]},{value[1]}"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
