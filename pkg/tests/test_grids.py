import pytest

from laros.grids import (
    GRID_PRESETS,
    GridSyntaxError,
    default_grid,
    get_all_grid_names,
    get_grid,
    normalize_grid_name,
    parse_grid,
)


def test_default_grid_merges_shared_endpoints():
    """
    Given-When-Then:
    - Given the default expression "0.01:0.1:10,0.1:1:10,1:10:10"
    - When it is parsed
    - Then 0.1 and 1 appear once, leaving 28 ascending values from 0.01 to 10
    """
    grid = default_grid()
    assert len(grid) == 28
    assert grid[0] == pytest.approx(0.01)
    assert grid[-1] == pytest.approx(10.0)
    assert grid == sorted(grid)
    assert sum(1 for theta in grid if theta == pytest.approx(0.1)) == 1
    assert sum(1 for theta in grid if theta == pytest.approx(1.0)) == 1


def test_parse_grid_single_values():
    assert parse_grid("0.5:0.5:1") == [0.5]
    assert parse_grid("0.5:2:1") == [0.5]
    assert parse_grid("1:2:2, 0.25:0.25:1") == [0.25, 1.0, 2.0]


@pytest.mark.parametrize(
    "expression",
    ["", "1:2", "1:2:3,", "a:b:c", "1:2:0", "0:1:3", "1:0.5:3", "-1:1:2", "1:2:x"],
)
def test_parse_grid_rejects(expression):
    with pytest.raises(GridSyntaxError) as info:
        parse_grid(expression)
    assert info.value.expression == expression


def test_presets():
    assert get_all_grid_names() == ["coarse", "default"]
    assert normalize_grid_name("  Coarse ") == "coarse"
    assert get_grid(" COARSE") == parse_grid(GRID_PRESETS["coarse"]["expression"])
    assert len(get_grid("coarse")) == 7
    assert get_grid("0.1:0.3:3") == pytest.approx([0.1, 0.2, 0.3])


def test_unknown_preset_lists_available_ones():
    with pytest.raises(GridSyntaxError, match="coarse, default"):
        get_grid("fine")
