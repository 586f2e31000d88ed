"""Smoke test for the pysasaki extension.

Builds the extension with cargo (unless PYSASAKI_LIB points at a built
library), loads it, and runs a short canonical and perturbed session.
"""

import importlib.util
import math
import os
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_extension():
    lib = os.environ.get("PYSASAKI_LIB")
    if lib is None:
        subprocess.run(
            ["cargo", "build", "--release", "--offline", "-p", "sasaki-lab-python", "--features", "extension-module"],
            cwd=ROOT,
            check=True,
        )
        suffix = {"darwin": "dylib", "win32": "dll"}.get(sys.platform, "so")
        lib = ROOT / "target" / "release" / f"libpysasaki.{suffix}"
    target = pathlib.Path(tempfile.mkdtemp()) / "pysasaki.so"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("pysasaki", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    ps = load_extension()

    canon = ps.Model(16)
    assert abs(canon.volume - 2 * math.pi**2) < 1e-10
    st = canon.state()
    assert st.residual(0.5) < 1e-12
    eig = st.spectrum(9)
    assert abs(eig[1] - 4.0) < 1e-8 and abs(eig[4] - 12.0) < 1e-8, eig
    assert canon.hamiltonian_field_count() == 3

    model = ps.Model(16, "even", [(2, 0, 0.05)])
    a = model.harmonic(2, 0, 0.02)
    b = model.harmonic(4, 0, 0.01)
    i = model.functional_i(a, b)
    j = model.functional_j(a, b)
    assert i >= 0 and abs(j - i / 2) < 1e-10, (i, j)

    fam = ps.solve(model, "s2", 0.1)
    assert fam.reached_target
    assert abs(fam.t_values[-1] - 1.0) < 1e-14
    final = model.state(fam.potentials()[-1])
    assert max(abs(s - 4.0) for s in final.scalar_curvature()) < 1e-5
    assert '"monotone_pass":true' in fam.estimates()

    try:
        ps.Model(16, "even", [(3, 0, 0.01)])
    except ValueError:
        pass
    else:
        raise AssertionError("odd perturbation accepted in even mode")

    print("pysasaki smoke test passed")


if __name__ == "__main__":
    main()
