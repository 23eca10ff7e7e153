import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from viewsynth import formats
from viewsynth.errors import ParseError


class TestPFM:
    def test_small_round_trip(self, tmp_path):
        a = np.array([[1.5, -2.0], [3.25, 1e-3]], dtype=np.float32)
        formats.write_pfm(tmp_path / "a.pfm", a)
        np.testing.assert_array_equal(formats.read_pfm(tmp_path / "a.pfm"), a)

    @pytest.mark.parametrize("little", [True, False])
    def test_color_round_trip(self, tmp_path, rng, little):
        a = rng.random((3, 4, 3)).astype(np.float32)
        formats.write_pfm(tmp_path / "c.pfm", a, little_endian=little)
        np.testing.assert_array_equal(formats.read_pfm(tmp_path / "c.pfm"), a)

    @settings(max_examples=25, deadline=None)
    @given(hnp.arrays(np.float32, (3, 5), elements=st.floats(width=32, allow_nan=False, allow_infinity=False, allow_subnormal=True)))
    def test_bit_exact(self, tmp_path_factory, a):
        p = tmp_path_factory.mktemp("pfm") / "x.pfm"
        formats.write_pfm(p, a)
        assert formats.read_pfm(p).tobytes() == a.tobytes()

    def test_truncated(self, tmp_path):
        formats.write_pfm(tmp_path / "t.pfm", np.ones((4, 4)))
        data = (tmp_path / "t.pfm").read_bytes()
        (tmp_path / "t.pfm").write_bytes(data[:-5])
        with pytest.raises(ParseError) as e:
            formats.read_pfm(tmp_path / "t.pfm")
        assert e.value.offset is not None

    def test_bad_magic(self, tmp_path):
        (tmp_path / "b.pfm").write_bytes(b"PX\n1 1\n-1.0\n\0\0\0\0")
        with pytest.raises(ParseError) as e:
            formats.read_pfm(tmp_path / "b.pfm")
        assert e.value.offset == 0


class TestNetpbm:
    def test_ppm_quantization(self, tmp_path, rng):
        a = rng.random((5, 6, 3))
        formats.write_ppm(tmp_path / "a.ppm", a)
        assert np.abs(formats.read_ppm(tmp_path / "a.ppm") - a).max() <= 0.5 / 255 + 1e-12

    @pytest.mark.parametrize("bits,maxval", [(8, 255), (16, 65535)])
    def test_pgm_quantization(self, tmp_path, rng, bits, maxval):
        a = rng.random((5, 6))
        formats.write_pgm(tmp_path / "a.pgm", a, bits=bits)
        assert np.abs(formats.read_pgm(tmp_path / "a.pgm") - a).max() <= 0.5 / maxval + 1e-12

    def test_ppm_magic_enforced(self, tmp_path):
        formats.write_pgm(tmp_path / "g.pgm", np.zeros((2, 2)))
        with pytest.raises(ParseError):
            formats.read_ppm(tmp_path / "g.pgm")

    def test_truncated(self, tmp_path):
        formats.write_ppm(tmp_path / "a.ppm", np.zeros((4, 4, 3)))
        data = (tmp_path / "a.ppm").read_bytes()
        (tmp_path / "a.ppm").write_bytes(data[:-3])
        with pytest.raises(ParseError):
            formats.read_ppm(tmp_path / "a.ppm")

    def test_header_comments(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# note\n2 1\n255\n\x00\xff")
        np.testing.assert_allclose(formats.read_pgm(tmp_path / "c.pgm"), [[0.0, 1.0]])


def test_csv_grid_round_trip(tmp_path, rng):
    a = rng.standard_normal((3, 4))
    formats.write_grid_csv(tmp_path / "g.csv", a)
    np.testing.assert_array_equal(formats.read_grid_csv(tmp_path / "g.csv"), a)
