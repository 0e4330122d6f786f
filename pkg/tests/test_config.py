import pytest

from p2dident.config import (ConfigFileError, parse_rates, parse_step, pid_gains, read_parameters,
                             read_run_config, write_parameters)

from conftest import DATA


def test_grouped_file_roundtrip(tmp_path, grouped, ocps):
    p = tmp_path / "g.ini"
    write_parameters(p, grouped, ocps)
    pf = read_parameters(p)
    assert pf.grouped == grouped
    assert pf.ocp_neg.terms == ocps[0].terms and pf.ocp_pos.terms == ocps[1].terms


def test_physical_file_roundtrip(tmp_path, physical, grouped):
    p = tmp_path / "p.ini"
    write_parameters(p, physical=physical)
    pf = read_parameters(p)
    assert pf.physical == physical
    assert pf.grouped.flat() == pytest.approx(grouped.flat(), rel=1e-15)


def test_golden_file_parses():
    assert read_parameters(DATA / "nominal_grouped.ini").grouped.neg.tau_d_s == pytest.approx(1000.0)


def test_parameter_file_errors(tmp_path):
    p = tmp_path / "bad.ini"
    with pytest.raises(ConfigFileError, match="not found"):
        read_parameters(p)
    p.write_text((DATA / "nominal_grouped.ini").read_text().replace("tau_k =", "tau_kk =", 1))
    with pytest.raises(ConfigFileError, match="unknown parameter"):
        read_parameters(p)
    p.write_text("[meta]\nkind = grouped\n[neg]\ntau_d_s = abc\n")
    with pytest.raises(ConfigFileError, match="not a number"):
        read_parameters(p)
    p.write_text("[meta]\nkind = physicalish\n")
    with pytest.raises(ConfigFileError, match="kind"):
        read_parameters(p)


def test_ocp_table_reference(tmp_path):
    (tmp_path / "neg.csv").write_text("x,u\n0,1.0\n1,0.0\n")
    text = (DATA / "nominal_grouped.ini").read_text() + "[ocp]\nneg_table = neg.csv\n"
    (tmp_path / "p.ini").write_text(text)
    pf = read_parameters(tmp_path / "p.ini")
    assert pf.ocp_neg(0.25) == pytest.approx(0.75)
    (tmp_path / "p.ini").write_text(text.replace("neg.csv", "missing.csv"))
    with pytest.raises(ConfigFileError, match="missing.csv"):
        read_parameters(tmp_path / "p.ini")


def test_parse_step():
    s = parse_step("CC 3.0 v_cutoff=3.65 label=1C")
    assert (s.kind, s.value, s.v_cutoff, s.label) == ("CC", 3.0, 3.65, "1C")
    assert parse_step("rest duration=60").kind == "Rest"
    assert parse_step("CV 4.2 i_cutoff=0.06").i_cutoff == 0.06
    for bad in ("CX 1", "CC 1 foo=2", "CC 1 3", "CC abc v_cutoff=3", "CC 1.0"):
        with pytest.raises(ConfigFileError):
            parse_step(bad)


def test_parse_rates():
    assert parse_rates("C/20, 1C, 3C") == (("C/20", 0.05), ("1C", 1.0), ("3C", 3.0))
    assert parse_rates("slow:0.1") == (("slow", 0.1),)
    with pytest.raises(ConfigFileError):
        parse_rates("fast")


def test_run_config(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("""
[run]
parameters = params.ini
data = data/d.csv
seed = 7
current_sign = charge
[cell]
v_min = 3.0
[model]
kind = SPM
n_r = 10
[pid]
K_p = 1.5
[protocol]
steps =
    CC 3.0 v_cutoff=3.7
    Rest duration=60      # relax
[identify]
stages = eq, s
start = perturbed
""")
    cfg = read_run_config(p)
    assert cfg.parameters == tmp_path / "params.ini" and cfg.data == tmp_path / "data" / "d.csv"
    assert cfg.seed == 7 and cfg.current_sign == "charge" and cfg.v_min == 3.0
    assert cfg.model == "SPM" and cfg.grid.n_r == 10
    assert [s.kind for s in cfg.steps] == ["CC", "Rest"]
    assert cfg.stages == ("eq", "s") and cfg.start == "perturbed"
    g = pid_gains(cfg, 3.0, 3.0)
    assert g.K_p == 1.5 and g.K_i == 60.0


def test_run_config_errors(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[bogus]\na = 1\n")
    with pytest.raises(ConfigFileError, match="bogus"):
        read_run_config(p)
    p.write_text("[run]\ncurrent_sign = up\n")
    with pytest.raises(ConfigFileError, match="current_sign"):
        read_run_config(p)
    p.write_text("[cell]\nv_min = 4.5\n")
    with pytest.raises(ConfigFileError, match="v_min"):
        read_run_config(p)
    assert read_run_config(None).model == "P2DT"
