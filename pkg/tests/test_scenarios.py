import math

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from rydkin.errors import CapacityError, ConfigError, OutputError
from rydkin.scenarios import (KINDS, emit_config, parse_config, preset_path, run_scenario,
                              serialize_results)

BASE_PHYSICS = {"rabi": "0.25 MHz", "detuning": "19 MHz", "dephasing": "0.7 MHz",
                "decay": "0.0125 1/us", "c6": "869.7 GHz um^6"}


def doc(kind, **sections):
    d = {"scenario": {"kind": kind, "seed": 3, "trajectories": 4}, "physics": dict(BASE_PHYSICS)}
    d.update(sections)
    return d


def small_lattice(n=12, spacing="1 r_fac", **extra):
    g = {"mode": "lattice", "dimension": 1, "atom_count": n, "lattice_spacing": spacing}
    g.update(extra)
    return g


def test_unit_honesty():
    c = parse_config(doc("meanfield_scan", scan={"rabi": ["0.1 MHz"]}))
    assert c["physics"]["detuning"] == {"value": 2 * math.pi * 19, "unit": "rad/us"}
    assert c["physics"]["c6"]["value"] == pytest.approx(2 * math.pi * 869.7e3)
    d = doc("meanfield_scan", scan={"rabi": ["0.1 MHz"]})
    d["physics"]["times_two_pi"] = False
    assert parse_config(d)["physics"]["detuning"]["value"] == 19.0
    d["physics"]["detuning"] = {"value": 3.0, "unit": "rad/us"}
    assert parse_config(d)["physics"]["detuning"]["value"] == 3.0
    d["physics"]["decay"] = "20 1/ms"
    assert parse_config(d)["physics"]["decay"]["value"] == pytest.approx(0.02)


def test_relative_lengths_resolve():
    c = parse_config(doc("collapse_demo", geometry=small_lattice(spacing="0.5 r_fac"),
                         protocol=[{"duration": "1 us", "role": "drive"}],
                         scan={"rabi": ["0.1 MHz"]}, output={"record_times": ["1 us"]}))
    r_fac = (2 * math.pi * 869.7e3 / (2 * math.pi * 19)) ** (1 / 6)
    assert c["geometry"]["lattice_spacing"]["value"] == pytest.approx(0.5 * r_fac, rel=1e-12)


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d["physics"].update(rabi=0.25), "physics.rabi"),
    (lambda d: d["physics"].update(rabi="0.25 furlongs"), "physics.rabi.unit"),
    (lambda d: d["physics"].update(colour="red"), "physics.colour"),
    (lambda d: d["physics"].pop("dephasing"), "physics.dephasing"),
    (lambda d: d["physics"].update(dephasing="0 MHz"), "physics"),
    (lambda d: d["scenario"].update(kind="teleport"), "scenario.kind"),
    (lambda d: d["scenario"].update(trajectories=0), "scenario.trajectories"),
    (lambda d: d["protocol"][0].update(duration="5 MHz"), "protocol[0].duration.unit"),
    (lambda d: d["protocol"][0]["seeds"].update(mea=2), "protocol[0].seeds.mea"),
    (lambda d: d["geometry"].update(lattice_spacing="1 r_fac", atom_count="ten"), "geometry.atom_count"),
    (lambda d: d.update(extra={}), "extra"),
    (lambda d: d["output"].update(record_times=["2 us", "1 us"]), "output.record_times"),
])
def test_config_errors_carry_key_path(mutate, path):
    d = doc("facilitation", geometry=small_lattice(),
            protocol=[{"duration": "1 us", "seeds": {"mean": 1}}],
            output={"record_times": ["1 us"]})
    mutate(d)
    with pytest.raises(ConfigError) as err:
        parse_config(d)
    assert err.value.path == path


def test_relative_length_needs_detuning():
    d = doc("blockade_growth", geometry=small_lattice(), protocol=[{"duration": "1 us"}],
            output={"record_times": ["1 us"]})
    d["physics"]["detuning"] = "0 MHz"
    with pytest.raises(ConfigError) as err:
        parse_config(d)
    assert err.value.path == "geometry.lattice_spacing.unit"


def test_kind_requirements():
    with pytest.raises(ConfigError) as err:
        parse_config(doc("phase_diagram", geometry=small_lattice(), protocol=[{"duration": "1 us"}],
                         scan={"rabi": ["0.1 MHz"]}))
    assert err.value.path == "scan.detuning"


@pytest.mark.parametrize("kind", KINDS)
def test_presets_parse_and_round_trip(kind):
    c = parse_config(preset_path(kind))
    assert c["scenario"]["kind"] == kind
    again = parse_config(yaml.safe_load(emit_config(c)))
    assert again == c
    assert emit_config(again) == emit_config(c)


FREQ_UNITS = ["Hz", "kHz", "MHz", "GHz", "rad/us", "rad/s"]


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 10), st.sampled_from(FREQ_UNITS), st.floats(0.01, 100),
       st.sampled_from(FREQ_UNITS), st.booleans(), st.floats(0.1, 5), st.sampled_from(["us", "ns", "ms"]),
       st.lists(st.floats(0.0, 50.0), min_size=1, max_size=5), st.booleans())
def test_round_trip_idempotent(rabi, ru, deph, du, two_pi, dur, tu, seeds, inline):
    def q(v, u):
        return f"{v!r} {u}" if inline else {"value": v, "unit": u}

    d = {"scenario": {"kind": "seeded_facilitation", "seed": 5},
         "physics": {"rabi": q(rabi, ru), "dephasing": q(deph, du), "times_two_pi": two_pi,
                     "detuning": q(1.0, "MHz"), "c6": q(10.0, "MHz um^6")},
         "geometry": {"mode": "lattice", "atom_count": 8, "lattice_spacing": q(2.0, "um")},
         "protocol": [{"duration": q(dur, tu), "role": "seed", "seeds": {"mean": 1.0}}],
         "scan": {"mean_seeds": seeds}}
    c = parse_config(d)
    assert parse_config(yaml.safe_load(emit_config(c))) == c


def _kmc_doc(kind, **kw):
    base = doc(kind, geometry=small_lattice(), **kw)
    base["physics"]["rabi"] = "1 MHz"
    return base


SMALL = {
    "blockade_growth": lambda: _kmc_doc(
        "blockade_growth", protocol=[{"duration": "5 us", "role": "drive"}],
        output={"record_times": {"start": 0.1, "stop": 5, "num": 6, "unit": "us", "spacing": "log"}}),
    "facilitation": lambda: _kmc_doc(
        "facilitation", protocol=[{"duration": "5 us"}],
        output={"record_times": {"start": 0, "stop": 5, "num": 3, "unit": "us"}}),
    "seeded_facilitation": lambda: _kmc_doc(
        "seeded_facilitation",
        protocol=[{"duration": "0.01 us", "drive": "off", "role": "seed", "seeds": {"mean": 1}},
                  {"duration": "5 us", "role": "drive"}],
        scan={"mean_seeds": [0, 1, 3]}),
    "phase_diagram": lambda: _kmc_doc(
        "phase_diagram",
        protocol=[{"duration": "0.01 us", "drive": "off", "role": "seed", "seeds": {"mean": 2}},
                  {"duration": "5 us", "role": "drive"}],
        scan={"rabi": ["0.5 MHz", "1 MHz"], "detuning": ["15 MHz", "19 MHz", "23 MHz"]},
        output={"record_times": ["2.5 us", "5.01 us"]}),
    "criticality_1d": lambda: _kmc_doc(
        "criticality_1d",
        protocol=[{"duration": "50 us", "role": "drive", "seeds": {"mean": 3}}],
        scan={"rabi": {"start": 0.05, "stop": 0.5, "num": 8, "unit": "MHz"}},
        output={"record_times": {"start": 0, "stop": 50, "num": 6, "unit": "us"}}),
    "deexcitation_spectrum": lambda: _kmc_doc(
        "deexcitation_spectrum",
        protocol=[{"duration": "0.01 us", "drive": "off", "role": "seed", "seeds": {"mean": 2}},
                  {"duration": "2 us", "role": "build"},
                  {"duration": "0.5 us", "drive": "off", "role": "dark"},
                  {"duration": "1 us", "drive": "deexcitation", "rabi": "1 MHz", "role": "probe"}],
        scan={"detuning": {"start": -8, "stop": 40, "num": 7, "unit": "MHz"},
              "variants": [{"name": "a"}, {"name": "b", "dark_time": "1 us"}]}),
    "qjmc_histogram": lambda: doc(
        "qjmc_histogram", geometry={"atom_count": 4}, protocol=[{"duration": "2 us"}],
        scan={"rabi": {"values": [0.5, 3.0], "unit": "rad/us"}}, output={"samples": 5}),
    "meanfield_scan": lambda: doc(
        "meanfield_scan", scan={"rate_fac": {"values": [0.005, 0.02], "unit": "1/us"},
                                "rabi": {"values": [0.005, 0.02], "unit": "rad/us"}}),
    "collapse_demo": lambda: _kmc_doc(
        "collapse_demo", protocol=[{"duration": "2 us", "role": "drive"}],
        scan={"rabi": ["1 MHz", "0.5 MHz"]},
        output={"record_times": {"start": 0.5, "stop": 2, "num": 4, "unit": "us"}}),
}


def _files(paths):
    return {p.name: p.read_bytes() for p in paths if p.suffix == ".csv"}


@pytest.mark.parametrize("kind", KINDS)
def test_small_scenarios_deterministic_across_threads(kind, tmp_path):
    a = serialize_results(run_scenario(SMALL[kind](), threads=1), tmp_path / "a")
    b = serialize_results(run_scenario(SMALL[kind](), threads=3), tmp_path / "b")
    fa, fb = _files(a), _files(b)
    assert fa and fa == fb
    assert all(name.startswith(f"{kind}__") for name in fa)
    man = yaml.safe_load((tmp_path / "a" / "manifest.yaml").read_text())
    assert set(man["outputs"]) == set(fa)
    assert man["seed"] == 3 and man["resolved"]["scenario"]["kind"] == kind


def test_seed_changes_tables(tmp_path):
    a = _files(serialize_results(run_scenario(SMALL["facilitation"](), seed=1), tmp_path / "a"))
    b = _files(serialize_results(run_scenario(SMALL["facilitation"](), seed=2), tmp_path / "b"))
    assert a != b


def test_row_counts_follow_scan_shape():
    b = run_scenario(SMALL["phase_diagram"]())
    assert len(b.table("counts").rows) == 2 * 2 * 3
    b = run_scenario(SMALL["criticality_1d"]())
    assert len(b.table("timeseries").rows) == 6 * 8
    b = run_scenario(SMALL["collapse_demo"]())
    assert len(b.table("curves").rows) == 4 * 2
    b = run_scenario(SMALL["deexcitation_spectrum"]())
    assert len(b.table("spectrum").rows) == 2 * 7


def test_collapse_grid_aligned():
    b = run_scenario(SMALL["collapse_demo"]())
    t = b.table("curves")
    s = t.column("scaled_time")
    assert np.allclose(s[:4], s[4:], rtol=1e-12)


def test_empty_observables_gives_manifest_only(tmp_path):
    d = SMALL["meanfield_scan"]()
    d["output"] = {"observables": []}
    paths = serialize_results(run_scenario(d), tmp_path)
    assert [p.name for p in paths] == ["manifest.yaml"]


def test_unknown_observable_rejected():
    d = SMALL["meanfield_scan"]()
    d["output"] = {"observables": ["classical", "vibes"]}
    with pytest.raises(ConfigError) as err:
        run_scenario(d)
    assert err.value.path == "output.observables[1]"


def test_manifest_exposes_resolved_units(tmp_path):
    serialize_results(run_scenario(SMALL["meanfield_scan"]()), tmp_path)
    man = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    assert man["resolved"]["physics"]["detuning"]["value"] == pytest.approx(2 * math.pi * 19)
    assert man["resolved"]["physics"]["detuning"]["unit"] == "rad/us"
    for key in ("code_version", "wall_clock_seconds", "outputs", "seed"):
        assert key in man


def test_meanfield_tables_match_library():
    b = run_scenario(SMALL["meanfield_scan"]())
    cl = b.table("classical")
    # rate_fac below decay: only the absorbing state; above: n = (1 - k/g)/2
    rows = {(r[0], r[3]) for r in cl.rows}
    assert (0.005, 0.0) in rows
    assert any(abs(n - 0.5 * (1 - 0.0125 / 0.02)) < 1e-12 for g, n in rows if g == 0.02)


def test_output_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError) as err:
        serialize_results(run_scenario(SMALL["meanfield_scan"]()), blocker / "sub")
    assert str(blocker) in str(err.value)


def test_capacity_error_forwarded():
    d = SMALL["qjmc_histogram"]()
    d["geometry"]["atom_count"] = 15
    with pytest.raises(CapacityError):
        run_scenario(d)


def test_float_cells_round_trip(tmp_path):
    paths = serialize_results(run_scenario(SMALL["collapse_demo"]()), tmp_path)
    csv_path = [p for p in paths if p.name.endswith("__curves.csv")][0]
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "rabi,time,scaled_time,mean,stderr"
    assert float(lines[1].split(",")[0]) == pytest.approx(2 * math.pi)
