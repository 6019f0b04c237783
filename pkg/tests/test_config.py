import numpy as np
import pytest

from roughflow.config import bundled_configs, load_bundled, load_config, parse_config, smooth_curve
from roughflow.errors import ConfigError

MINIMAL = """
dim = 1
driver.kind = brownian
driver.seed = 1
driver.steps = 16
field.F.kind = linear
field.F.matrix = 1
diffusion = F
"""


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.substeps == 32 and cfg.tol == 1e-6 and cfg.history_mode == "fresh"
    assert cfg.max_depth == 10 and cfg.p == 2.5 and cfg.alpha == 1.0
    sch = cfg.build_scheme()
    assert sch.ell == 1 and sch.dim == 1
    assert np.array_equal(cfg.x0(), [0.0])


def test_alpha_condition_is_named():
    with pytest.raises(ConfigError, match=r"alpha \+ 1/p > 1"):
        parse_config(MINIMAL + "alpha = 0.5\np = 2.5\n")


def test_ell_mismatch():
    with pytest.raises(ConfigError, match="diffusion lists 1 fields"):
        parse_config(MINIMAL + "driver.ell = 2\n")
    cfg = parse_config(MINIMAL.replace("driver.kind = brownian", "driver.kind = smooth\ndriver.curve = loop").replace("dim = 1", "dim = 1") )
    assert cfg.build_driver().alphabet_size == 1


def test_errors_carry_line_context(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text(MINIMAL + "solver.history_mode = sideways\n")
    with pytest.raises(ConfigError, match=r"bad.cfg:\d+: solver.history_mode"):
        load_config(str(path))


def test_missing_referenced_file(tmp_path):
    path = tmp_path / "lift.cfg"
    path.write_text(MINIMAL.replace("driver.kind = brownian", "driver.kind = lift\ndriver.file = nowhere.txt"))
    with pytest.raises(ConfigError, match="file not found"):
        load_config(str(path))


def test_lift_driver_from_relative_file(tmp_path):
    (tmp_path / "w.txt").write_text("dim=1 count=3\n0 0\n0.5 1\n1 0.5\n")
    path = tmp_path / "lift.cfg"
    path.write_text(MINIMAL.replace("driver.kind = brownian", "driver.kind = lift\ndriver.file = w.txt"))
    X = load_config(str(path)).build_driver()
    assert X.n_cells == 2 and X.query(0.0, 1.0).coefficient((1,)) == 0.5


def test_syntax_errors():
    with pytest.raises(ConfigError, match="duplicate key"):
        parse_config(MINIMAL + "dim = 2\n")
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_config(MINIMAL + "just words\n")
    with pytest.raises(ConfigError, match="missing required key 'diffusion'"):
        parse_config(MINIMAL.replace("diffusion = F", ""))


def test_field_errors():
    with pytest.raises(ConfigError, match="field 'G'"):
        parse_config(MINIMAL.replace("diffusion = F", "diffusion = G"))
    cfg = parse_config(MINIMAL.replace("field.F.kind = linear", "field.F.kind = wobbly"))
    with pytest.raises(ConfigError, match="expected one of"):
        cfg.build_scheme()
    cfg = parse_config(MINIMAL.replace("field.F.kind = linear", "field.F.kind = delay\nfield.F.delays = lambda"))
    with pytest.raises(ConfigError, match="outside a delay study"):
        cfg.build_scheme()
    assert cfg.build_scheme(lam=0.1).F[0].delays == [0.1]


def test_probes_are_deterministic_and_in_the_ball():
    cfg = load_bundled("p25_scheme")
    a, b = cfg.probes(), cfg.probes()
    assert np.array_equal(a, b) and a.shape == (24, 2)
    assert np.all(np.linalg.norm(a, axis=1) <= 2.0)


def test_bundled_configs_load():
    names = bundled_configs()
    assert {"abelian_linear", "p25_scheme", "p25_delay", "tanh_delay", "markovian_smooth"} <= set(names)
    for name in names:
        cfg = load_bundled(name)
        lam = 0.1 if cfg.has("delay.lambdas") else None
        assert cfg.build_scheme(lam=lam).ell == cfg.ell


def test_smooth_curves():
    t = np.linspace(0, 1, 5)
    assert smooth_curve("loop", t, 2).shape == (5, 2)
    assert smooth_curve("line", t, 3).shape == (5, 3)
    with pytest.raises(ConfigError):
        smooth_curve("spiral", t, 2)
