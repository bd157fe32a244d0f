import numpy as np
import pytest

from mvspde import snapshot
from mvspde.ensemble import ParticleEnsemble
from mvspde.errors import ConfigurationError
from mvspde.particles import SpdeModelSpec, initial_ensemble


@pytest.mark.parametrize("spec", [SpdeModelSpec(modes=4),
                                  SpdeModelSpec("cahn_hilliard", 5, 2),
                                  SpdeModelSpec("kuramoto_sivashinsky", 6, 1, domain_size=22.0, phi=(0, -1))])
def test_field_round_trip_is_bit_exact(spec, tmp_path):
    ens = initial_ensemble(spec, 3, 1, stream_ids=[5, 2, 9])
    path = tmp_path / "x.snap"
    snapshot.write(path, ens, 0.25, 0.01, spec.equation)
    back, meta = snapshot.read(path)
    assert np.array_equal(back.states, ens.states) and np.array_equal(back.stream_ids, ens.stream_ids)
    assert back.grid == ens.grid and back.kind == ens.kind
    assert meta == {"equation": spec.equation, "t": 0.25, "dt": 0.01}


def test_vector_round_trip():
    ens = ParticleEnsemble(np.random.default_rng(0).standard_normal((4, 3)))
    back, meta = snapshot.decode(snapshot.encode(ens))
    assert np.array_equal(back.states, ens.states) and meta["equation"] == "vector"


def test_header_layout():
    ens = initial_ensemble(SpdeModelSpec(modes=2), 2, 0)
    buf = snapshot.encode(ens, 1.5, 0.5)
    assert buf[:8] == b"MVSPDE\x00\x01"
    assert int.from_bytes(buf[8:12], "little") == 1
    assert int.from_bytes(buf[12:16], "little") == 1
    assert int.from_bytes(buf[24:32], "little") == 2
    assert len(buf) == 56 + 2 * 8 + 2 * 2 * 25 * 16


def test_bad_inputs():
    with pytest.raises(ConfigurationError):
        snapshot.decode(b"short")
    with pytest.raises(ConfigurationError):
        snapshot.decode(b"X" * 80)
    ens = initial_ensemble(SpdeModelSpec(modes=2), 2, 0)
    with pytest.raises(ConfigurationError):
        snapshot.decode(snapshot.encode(ens)[:-10])
    with pytest.raises(ConfigurationError):
        snapshot.encode(initial_ensemble(SpdeModelSpec("cahn_hilliard", 2, 1), 1, 0))
