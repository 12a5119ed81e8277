"""Smoke test for the starris_gl_py extension.

Build and run from the repository root:

    cargo build -p starris-gl-py --release
    cp target/release/libstarris_gl_py.so python/starris_gl_py.so
    python3 python/smoke_test.py

or install with `maturin develop -m crates/python/Cargo.toml`.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import starris_gl_py as sg  # noqa: E402

SMALL = [
    "system.bs_antennas=4",
    "system.ris_horizontal=2",
    "system.ris_vertical=2",
    "sounding.amp_levels=2",
    "gbdt.rounds=20",
    "rft.select=16",
]


def main():
    cfg = sg.Config(overrides=SMALL)
    assert cfg.bs_antennas == 4 and cfg.ris_elements == 4
    assert cfg.tensor_shape() == (4, 2, 4, 2), cfg.tensor_shape()
    assert cfg.with_overrides(["system.transmit_power_dbm=20"]).shape_hash() == cfg.shape_hash()

    try:
        sg.Config(overrides=["system.no_such_key=1"])
    except ValueError as e:
        assert "config" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    ds = sg.Dataset.generate(cfg, 40)
    assert len(ds) == 40
    assert len(ds.features(0)) == 2 * 4 * 2 * 4 * 2
    r_r, r_t, obj = ds.label_rates(0)
    assert math.isclose(obj, r_r + r_t)

    model = sg.Model.train(ds, cfg)
    assert model.shape_hash == cfg.shape_hash()
    d = model.infer(ds, 0, cfg)
    power = sum(re * re + im * im for re, im in d["w"])
    assert math.isclose(power, 10 ** ((cfg.transmit_power_dbm - 30) / 10), rel_tol=1e-9)
    for a_r, a_t in zip(d["alpha_r"], d["alpha_t"]):
        assert abs(a_r * a_r + a_t * a_t - 1) < 1e-9

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.bin")
        model.save(path)
        assert sg.Model.load(path).hash() == model.hash()

    est = sg.evaluate(cfg, model, n_eval=8)
    assert set(est) == {"bcd", "gl", "random"}, est
    assert est["bcd"][0] >= est["random"][0]

    f = sg.flops(cfg)
    assert f["ratio"] < 0.1, f["table"]

    csv = sg.sweep(cfg, "power", [10.0, 20.0], model, n_eval=4)
    assert len([l for l in csv.splitlines() if l and not l.startswith("#")]) == 1 + 2 * 3

    assert sg.derive_seed(1, [2, 3]) == sg.derive_seed(1, [2, 3])
    print("smoke test ok:", est)


if __name__ == "__main__":
    main()
