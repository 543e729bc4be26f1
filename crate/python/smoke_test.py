"""Smoke test for the derain_py extension module.

Run after `maturin develop -m crates/py/Cargo.toml`, or directly after
`cargo build -p derain-py`: the script then loads the library from target/.
"""

import importlib.machinery
import importlib.util
import math
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        import derain_py

        return derain_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libderain_py.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("derain_py", str(lib))
            spec = importlib.util.spec_from_file_location("derain_py", lib, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("derain_py not found; build it with `cargo build -p derain-py`")


def main():
    dr = load_module()
    h, w = 16, 12
    j = dr.Image(h, w, [((i * 7) % 11) / 11 for i in range(h * w * 3)])
    ts = dr.Field(h, w, [0.3 + 0.4 * ((i % 5) / 5) for i in range(h * w)])
    tv = dr.Field.filled(h, w, 0.1)
    a = [0.9, 0.85, 0.8]

    rainy = dr.compose(j, ts, tv, a)
    back = dr.recover(rainy, ts, tv, a)
    err = max(abs(x - y) for x, y in zip(back.to_list(), j.to_list()))
    assert err < 1e-9, err
    assert dr.psnr(j, j) == 100.0
    assert math.isclose(dr.ssim(j, j), 1.0)
    assert dr.psnr(rainy, j) < 40.0

    try:
        dr.compose(j, dr.Field.filled(h, w, 0.8), dr.Field.filled(h, w, 0.8), a)
    except ValueError:
        pass
    else:
        raise AssertionError("Ts + Tv > 1 must be rejected")

    with tempfile.TemporaryDirectory() as tmp:
        n = dr.make_synthetic_dataset("scenes", 2, 32, tmp, seed=3)
        assert n == 2
        img = dr.Image.read(pathlib.Path(tmp) / "rainy" / "00000.png")
        assert (img.height, img.width) == (32, 32)
        mean_psnr, mean_ssim, rows = dr.evaluate_dirs(pathlib.Path(tmp) / "clean", pathlib.Path(tmp) / "clean")
        assert len(rows) == 2 and mean_psnr == 100.0

    print("derain_py smoke test passed")


if __name__ == "__main__":
    main()
