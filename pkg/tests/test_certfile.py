from fractions import Fraction

import pytest

from bellbounds.certfile import format_certificate, parse_certificate, read_certificate, write_certificate
from bellbounds.certify import (
    assemble_lower,
    assemble_upper,
    provenance_of,
    rationalize_weights,
    verify,
)
from bellbounds.errors import CertificateError
from bellbounds.fw import bpcg
from bellbounds.lmo import local_bound


@pytest.fixture
def lower_cert(chsh_setup, chsh_tensor):
    v0 = Fraction(7, 10)
    res = bpcg(chsh_tensor, v0)
    model = rationalize_weights(res.active, chsh_tensor, v0)
    return assemble_lower(chsh_tensor.scenario, None, v0, model, chsh_tensor, provenance=provenance_of(chsh_setup, seed=5))


@pytest.fixture
def upper_cert(chsh_setup, chsh_tensor, chsh_functional):
    bound = local_bound(chsh_functional)
    return assemble_upper(chsh_functional, bound.value, chsh_tensor, bound.strategy, provenance_of(chsh_setup))


class TestRoundTrip:
    def test_lower(self, tmp_path, lower_cert):
        path = tmp_path / "chsh.cert"
        write_certificate(path, lower_cert)
        back = read_certificate(path)
        assert back.kind == "lower"
        assert back.v_low == lower_cert.v_low
        assert back.weights == lower_cert.weights
        assert back.provenance.seed == 5
        assert verify(back).ok
        assert format_certificate(back) == path.read_text()

    def test_upper(self, tmp_path, upper_cert):
        path = tmp_path / "chsh-upper.cert"
        write_certificate(path, upper_cert)
        back = read_certificate(path)
        assert back.kind == "upper"
        assert back.ell == 2
        assert back.v_up == upper_cert.v_up
        assert verify(back).ok
        assert format_certificate(back) == path.read_text()

    def test_comments_and_blank_lines_are_ignored(self, upper_cert):
        text = "# written by hand\n\n" + format_certificate(upper_cert).replace("\nELL 2", "\n\nELL 2  # local bound", 1)
        back = parse_certificate(text.splitlines())
        assert back.ell == upper_cert.ell
        assert back.v_up == upper_cert.v_up

    def test_no_timestamps(self, lower_cert):
        assert format_certificate(lower_cert) == format_certificate(lower_cert)


class TestMalformed:
    @pytest.mark.parametrize("edit", [
        lambda text: text.replace("KIND lower", "KIND sideways"),
        lambda text: text.replace("V_LOW", "V_HIGH"),
        lambda text: text.replace("SCENARIO 2 2 0", "SCENARIO 2 2"),
        lambda text: text.replace("NU ", "NU x"),
        lambda text: "stray line\n" + text,
        lambda text: text + "KIND lower\n",
    ])
    def test_rejected(self, lower_cert, edit):
        with pytest.raises(CertificateError):
            parse_certificate(edit(format_certificate(lower_cert)).splitlines())

    def test_weight_count_must_match_atoms(self, lower_cert):
        text = format_certificate(lower_cert).replace("RESIDUAL_SQ", "1/2\nRESIDUAL_SQ")
        with pytest.raises(CertificateError):
            parse_certificate(text.splitlines())

    def test_strategy_must_fit_scenario(self, upper_cert):
        text = format_certificate(upper_cert)
        text = text.replace(f"STRATEGY {upper_cert.strategy}", "STRATEGY +++|+++")
        with pytest.raises(CertificateError):
            parse_certificate(text.splitlines())
