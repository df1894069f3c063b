"""Builds the dewater_py extension with cargo.

Install with `pip install -e . --no-build-isolation`, then
`python python/smoke_test.py` to check the bindings.
"""

import pathlib
import shutil
import subprocess
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ROOT = pathlib.Path(__file__).resolve().parent
DYLIB = "libdewater_py" + (".dylib" if sys.platform == "darwin" else ".so")


class CargoBuildExt(build_ext):
    def build_extension(self, ext):
        subprocess.run(
            ["cargo", "build", "--release", "-p", "dewater-py"],
            cwd=ROOT,
            check=True,
        )
        out = pathlib.Path(self.get_ext_fullpath(ext.name))
        out.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(ROOT / "target" / "release" / DYLIB, out)


setup(
    ext_modules=[Extension("dewater_py", sources=[])],
    cmdclass={"build_ext": CargoBuildExt},
)
