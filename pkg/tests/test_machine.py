"""Tests for machine descriptors, presets and descriptor file I/O."""

from __future__ import annotations

import dataclasses
import shutil
from pathlib import Path

import pytest

from ecmdot.descfile import DescriptorInvariantError, DescriptorParseError
from ecmdot.machine import (
    IsaClass,
    MachineDescriptor,
    PortThroughput,
    builtin_machine,
    builtin_machines,
    format_machine,
    load_machine,
    load_machine_file,
    t_l3mem_per_cl,
)

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "ecmdot" / "machines"


class TestIsaClass:
    @pytest.mark.parametrize(
        "isa, register_bytes",
        [(IsaClass.SCALAR, 8), (IsaClass.VEC128, 16), (IsaClass.VEC256, 32)],
    )
    def test_register_bytes(self, isa, register_bytes):
        assert isa.register_bytes == register_bytes

    @pytest.mark.parametrize(
        "isa, elem_bytes, lanes",
        [
            (IsaClass.SCALAR, 4, 1),
            (IsaClass.SCALAR, 8, 1),
            (IsaClass.VEC128, 4, 4),
            (IsaClass.VEC128, 8, 2),
            (IsaClass.VEC256, 4, 8),
            (IsaClass.VEC256, 8, 4),
        ],
    )
    def test_lane_width(self, isa, elem_bytes, lanes):
        assert isa.lane_width(elem_bytes) == lanes

    def test_value_round_trip(self):
        assert IsaClass("vec256") is IsaClass.VEC256


class TestPortThroughput:
    def test_coerces_to_float(self):
        pt = PortThroughput(2, 1, 1, 1, 0)
        assert pt.loads_per_cy == 2.0
        assert isinstance(pt.loads_per_cy, float)

    def test_rejects_negative(self):
        with pytest.raises(DescriptorInvariantError) as exc:
            PortThroughput(-1, 1, 1, 1, 0)
        assert "loads_per_cy" in str(exc.value)


class TestBuiltinPresets:
    def test_names(self, machines):
        assert sorted(machines) == ["BDW", "HSW", "IVB", "SNB"]

    def test_lookup_case_insensitive(self, ivb):
        assert builtin_machine("ivb") == ivb
        assert builtin_machine("IVB") == ivb

    def test_lookup_unknown(self):
        with pytest.raises(KeyError):
            builtin_machine("nope")

    def test_ivb_values(self, ivb):
        assert ivb.clock_ghz == 2.2
        assert ivb.cores == 10
        assert ivb.cacheline_bytes == 64
        assert ivb.l1_bytes == 32768
        assert ivb.l2_bytes == 262144
        assert ivb.llc_bytes == 25 * 1024 * 1024
        assert ivb.cy_per_cl_l1l2 == 2
        assert ivb.cy_per_cl_l2l3 == 2
        assert ivb.bw_loadonly_gbs == 46.1
        assert ivb.penalty_cy_per_cl == 1.45

    def test_port_tables(self, ivb, hsw):
        scalar = ivb.port(IsaClass.SCALAR)
        assert (scalar.loads_per_cy, scalar.adds_per_cy) == (2.0, 1.0)
        avx = ivb.port(IsaClass.VEC256)
        assert (avx.loads_per_cy, avx.stores_per_cy) == (1.0, 0.5)
        assert avx.fmas_per_cy == 0.0
        for isa in IsaClass:
            p = hsw.port(isa)
            assert (p.loads_per_cy, p.fmas_per_cy) == (2.0, 2.0)

    @pytest.mark.parametrize(
        "name, clock, cores, llc_mib, penalty",
        [
            ("SNB", 2.7, 8, 20, 2.55),
            ("IVB", 2.2, 10, 25, 1.45),
            ("HSW", 2.3, 14, 35, 5.55),
            ("BDW", 1.8, 8, 12, 0.5),
        ],
    )
    def test_headline_numbers(self, machines, name, clock, cores, llc_mib, penalty):
        md = machines[name]
        assert md.clock_ghz == clock
        assert md.cores == cores
        assert md.llc_bytes == llc_mib * 1024 * 1024
        assert md.penalty_cy_per_cl == penalty

    @pytest.mark.parametrize(
        "name, expected",
        [("SNB", 3.96), ("IVB", 3.05), ("HSW", 2.43), ("BDW", 3.49)],
    )
    def test_t_l3mem_per_cl(self, machines, name, expected):
        assert t_l3mem_per_cl(machines[name]) == pytest.approx(expected, abs=0.01)

    def test_t_l3mem_formula(self, ivb):
        assert t_l3mem_per_cl(ivb) == pytest.approx(
            ivb.cacheline_bytes * ivb.clock_ghz / ivb.bw_loadonly_gbs, rel=1e-12
        )


class TestLoadAndFormat:
    @pytest.mark.parametrize("name", ["SNB", "IVB", "HSW", "BDW"])
    def test_format_round_trip(self, machines, name):
        md = machines[name]
        assert load_machine(format_machine(md)) == md

    def test_load_machine_file(self, ivb, tmp_path):
        path = tmp_path / "copy.machine"
        path.write_text(format_machine(ivb))
        assert load_machine_file(path) == ivb

    def test_data_dir_override(self, ivb, tmp_path):
        shutil.copy(DATA_DIR / "ivb.machine", tmp_path / "ivb.machine")
        loaded = builtin_machines(data_dir=tmp_path)
        assert loaded == (ivb,)
        assert builtin_machine("ivb", data_dir=tmp_path) == ivb

    def test_unknown_key_rejected(self, ivb):
        text = format_machine(ivb) + "\nbogus = 1\n"
        with pytest.raises(DescriptorParseError, match="unknown key 'bogus'"):
            load_machine(text)

    def test_unknown_section_rejected(self, ivb):
        text = format_machine(ivb) + "\n[ports.vec512]\nloads_per_cy = 1\n"
        with pytest.raises(DescriptorParseError, match="unknown section"):
            load_machine(text)

    def test_missing_keys_named(self):
        with pytest.raises(DescriptorParseError, match="bw_loadonly_gbs"):
            load_machine("name = X\nclock_ghz = 2.0\n")

    def test_parse_error_carries_line(self):
        with pytest.raises(DescriptorParseError) as exc:
            load_machine("name = X\nnot a key value line\n")
        assert exc.value.line == 2

    def test_rational_port_values(self, ivb):
        # the AVX store throughput is written as a rational in the preset
        text = (DATA_DIR / "ivb.machine").read_text()
        assert "1/2" in text
        assert load_machine(text).port(IsaClass.VEC256).stores_per_cy == 0.5


class TestInvariants:
    def _text(self, md: MachineDescriptor, **overrides) -> MachineDescriptor:
        return dataclasses.replace(md, **overrides)

    @pytest.mark.parametrize(
        "overrides, field",
        [
            ({"l2_bytes": 1024}, "l2_bytes"),
            ({"llc_bytes": 100000}, "llc_bytes"),
            ({"bw_loadonly_gbs": 99.0}, "bw_loadonly_gbs"),
            ({"cacheline_bytes": 48}, "cacheline_bytes"),
            ({"clock_ghz": -1.0}, "clock_ghz"),
            ({"clock_ghz": 0.0}, "clock_ghz"),
            ({"cores": 0}, "cores"),
            ({"penalty_cy_per_cl": -0.5}, "penalty_cy_per_cl"),
        ],
    )
    def test_invalid_values(self, ivb, overrides, field):
        with pytest.raises(DescriptorInvariantError) as exc:
            self._text(ivb, **overrides)
        assert exc.value.field == field

    def test_missing_port_table(self, ivb):
        ports = {k: v for k, v in ivb.ports.items() if k is not IsaClass.VEC256}
        with pytest.raises(DescriptorInvariantError, match="vec256"):
            dataclasses.replace(ivb, ports=ports)

    def test_descriptor_is_immutable(self, ivb):
        with pytest.raises(dataclasses.FrozenInstanceError):
            ivb.clock_ghz = 3.0
        with pytest.raises(TypeError):
            ivb.ports[IsaClass.SCALAR] = None
