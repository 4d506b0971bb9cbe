import numpy as np
import pytest

from smallgain.config import load_config, parse_config
from smallgain.errors import ConfigError
from smallgain.expr import compile_expr, compile_input, compile_vector


# expressions


def test_expression_arithmetic_and_shorthand():
    f = compile_expr("-x1 + 0.5 * v[0] + sat(u1)")
    assert f([2.0], [4.0], [3.0]) == -2.0 + 2.0 + 1.0


def test_expression_functions_and_time():
    f = compile_expr("max(exp(0) , tanh(0)) + sqrt(t) + abs(-2) + min(x[1], 7)")
    assert f([0.0, 3.0], [], [], t=4.0) == 1.0 + 2.0 + 2.0 + 3.0


def test_expression_sat_bounds():
    f = compile_expr("sat(x1, 0, 2)")
    assert f([5.0], [], []) == 2.0 and f([-5.0], [], []) == 0.0


@pytest.mark.parametrize("src", ["__import__('os')", "x.real", "open('f')", "lambda: 1",
                                 "[1, 2]", "'a'", "x1 if t else 0", "y[0]", "x[t]", "x0"])
def test_expression_rejects_unsafe_or_unknown(src):
    with pytest.raises(ConfigError):
        compile_expr(src, line=7)


def test_expression_error_keeps_line():
    with pytest.raises(ConfigError) as exc:
        compile_expr("2 +", line=12)
    assert exc.value.line == 12


def test_vector_and_input():
    f = compile_vector(["x1", "-x2"])
    assert f.size == 2 and f([1.0, 2.0], [], []) == [1.0, -2.0]
    u = compile_input(["exp(-t)", "2 * t"])
    assert u(0.0) == [1.0, 0.0]
    with pytest.raises(ConfigError):
        compile_input(["x1 + t"])


# config files


GAIN = """
command = "check-gain"

[gain]
gamma = {kind = "linear", params = {a = 0.5}}
r0 = 0.0
"""


def test_parse_gain_config():
    cfg = parse_config(GAIN)
    g = cfg.function("gain", "gamma")
    assert g(4.0) == 2.0
    assert cfg.number("gain", "r0") == 0.0


def test_json_equivalent():
    cfg = parse_config('{"gain": {"gamma": {"kind": "linear", "params": {"a": 0.5}}}}')
    assert cfg.function("gain", "gamma")(2.0) == 1.0


def test_unknown_table_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("[gain]\nr0 = 1\n\n[gian]\nr0 = 2\n")
    assert exc.value.line == 4


def test_toml_syntax_error_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("[gain]\nr0 = = 1\n")
    assert exc.value.line == 2


def test_json_syntax_error_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config('{\n "gain": {\n  "r0": 1,\n }\n}', fmt="json")
    assert exc.value.line == 4


def test_bad_function_class_reports_line():
    cfg = parse_config("[gain]\nr0 = 0\ngamma = {kind = \"plf\", knots = [[0, 1], [1, 2]]}\n")
    with pytest.raises(ConfigError) as exc:
        cfg.function("gain", "gamma")
    assert exc.value.line == 3


def test_wrong_number_type_reports_line():
    cfg = parse_config('[gain]\ngamma = {kind = "identity"}\nr0 = "zero"\n')
    with pytest.raises(ConfigError) as exc:
        cfg.number("gain", "r0")
    assert exc.value.line == 3


def test_small_gain_data_from_config():
    cfg = parse_config("""
[data]
beta = {form = "exp", k = 1, rate = 1}
gamma = {kind = "linear", params = {a = 0.5}}
C = 1.0
r0 = 2.0
""")
    data = cfg.small_gain_data()
    assert data.C == 1.0 and data.r0 == 2.0
    np.testing.assert_allclose(data.beta(2.0, 0.0), 2.0)


def test_custom_system_pair():
    cfg = parse_config("""
[system1]
rhs = ["-x1 + 0.5 * v1"]
output = ["x1"]
xi = [1.0]
input_dim = 0

[system1.certificate]
beta = {form = "exp", k = 2, rate = 1}
gamma_y = {kind = "linear", params = {a = 0.75}}
sigma3 = {kind = "identity"}

[system2]
rhs = ["-x1 + 0.5 * v1 + u1"]
output = ["x1"]
input = ["exp(-t)"]

[system2.certificate]
beta = {form = "exp", k = 4, rate = 1}
gamma_y = {kind = "linear", params = {a = 0.75}}
gamma_u = {kind = "linear", params = {a = 4}}
sigma3 = {kind = "identity"}

[simulation]
horizon = 3.0
dt = 0.01
""")
    sc = cfg.scenario()
    assert sc.name == "custom" and sc.horizon == 3.0 and sc.dt == 0.01
    assert sc.sys1.input_dim == 0 and sc.u2(0.0) == [1.0]
    assert sc.sys1.rhs([1.0], [2.0], []) == [0.0]
    assert sc.sys2.certificate.gamma_u(1.0) == 4.0


def test_input_size_must_match():
    cfg = parse_config('[system1]\nrhs = ["-x1"]\noutput = ["x1"]\ninput = ["1", "2"]\n')
    with pytest.raises(ConfigError) as exc:
        cfg.system("system1")
    assert exc.value.line == 4


def test_scenario_by_name_and_unknown_name():
    sc = parse_config('[scenario]\nname = "zero"\n').scenario(horizon=1.0)
    assert sc.horizon == 1.0
    with pytest.raises(ConfigError) as exc:
        parse_config('\n[scenario]\nname = "nope"\n').scenario()
    assert exc.value.line == 3


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
