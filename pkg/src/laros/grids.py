"""Named theta grids and the "a:b:n[,c:d:m...]" grid expression parser."""

import numpy as np

from laros import LarosError

GRID_PRESETS = {
    "default": {
        "expression": "0.01:0.1:10,0.1:1:10,1:10:10",
        "description": "Ten uniform values in each of [0.01, 0.1], [0.1, 1] and [1, 10]",
    },
    "coarse": {
        "expression": "0.05:0.5:4,0.5:5:4",
        "description": "Four uniform values in each of [0.05, 0.5] and [0.5, 5]",
    },
}


class GridSyntaxError(LarosError, ValueError):
    def __init__(self, expression: str, reason: str):
        self.expression = expression
        self.reason = reason
        super().__init__(f"Invalid theta grid '{expression}': {reason}")


def normalize_grid_name(name: str) -> str:
    """
    Normalize a preset name for lookup.

    Args:
        name: Preset name (case-insensitive)

    Returns:
        Lowercase name without surrounding whitespace
    """
    return name.lower().strip()


def get_all_grid_names() -> list[str]:
    """Return the sorted names of all grid presets."""
    return sorted(GRID_PRESETS.keys())


def parse_grid(expression: str) -> list[float]:
    """
    Parse a comma-separated list of "start:stop:count" ranges.

    Each range contributes `count` uniformly spaced values from start to stop,
    both ends included; a range with count 1 contributes start. Values shared by
    adjacent ranges appear once and the result is sorted ascending.

    Args:
        expression: Grid expression, e.g. "0.01:0.1:10,0.1:1:10"

    Returns:
        Ascending list of distinct positive theta values

    Raises:
        GridSyntaxError: If a range is malformed or contains a non-positive value
    """
    values: list[float] = []
    parts = [part.strip() for part in expression.split(",")]
    if not expression.strip() or any(not part for part in parts):
        raise GridSyntaxError(expression, "empty range")
    for part in parts:
        fields = part.split(":")
        if len(fields) != 3:
            raise GridSyntaxError(expression, f"'{part}' is not of the form start:stop:count")
        try:
            start, stop, count = float(fields[0]), float(fields[1]), int(fields[2])
        except ValueError:
            raise GridSyntaxError(expression, f"'{part}' has a non-numeric field") from None
        if count < 1:
            raise GridSyntaxError(expression, f"'{part}' has count {count}")
        if not (start > 0 and stop > 0) or stop < start:
            raise GridSyntaxError(expression, f"'{part}' must satisfy 0 < start <= stop")
        values.extend(np.linspace(start, stop, count).tolist())

    unique = np.unique(np.round(values, 12))
    return [float(v) for v in unique]


def get_grid(name_or_expression: str) -> list[float]:
    """
    Resolve a preset name or a grid expression to theta values.

    Args:
        name_or_expression: Preset name (case-insensitive) or grid expression

    Returns:
        Ascending list of theta values

    Raises:
        GridSyntaxError: If the argument is neither a preset nor a valid expression
    """
    normalized = normalize_grid_name(name_or_expression)
    if normalized in GRID_PRESETS:
        return parse_grid(GRID_PRESETS[normalized]["expression"])
    if ":" not in normalized:
        raise GridSyntaxError(
            name_or_expression,
            f"unknown preset; available presets: {', '.join(get_all_grid_names())}",
        )
    return parse_grid(normalized)


def default_grid() -> list[float]:
    return get_grid("default")
