"""setuptools -> CMake bridge: builds the _s2s extension with the project's
CMakeLists and drops it inside the s2sreid package."""

import os
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        # get_ext_fullpath already ends in .../s2sreid/_s2s*.so for this ext name
        out_dir = Path(self.get_ext_fullpath(ext.name)).parent.resolve()
        build_dir = Path(self.build_temp).resolve()
        build_dir.mkdir(parents=True, exist_ok=True)

        import pybind11

        cfg = "Release"
        source_dir = Path(__file__).parent.resolve()
        cmake_args = [
            f"-DCMAKE_BUILD_TYPE={cfg}",
            f"-DPYTHON_EXECUTABLE={sys.executable}",
            f"-Dpybind11_DIR={pybind11.get_cmake_dir()}",
            "-DS2S_INSTALL_PYTHON=ON",
            f"-DCMAKE_LIBRARY_OUTPUT_DIRECTORY={out_dir}",
        ]
        env = os.environ.copy()
        subprocess.run(["cmake", str(source_dir), *cmake_args], cwd=build_dir, env=env, check=True)
        subprocess.run(
            ["cmake", "--build", ".", "--target", "_s2s", "-j"], cwd=build_dir, check=True
        )


setup(
    packages=["s2sreid"],
    package_dir={"s2sreid": "python/s2sreid"},
    ext_modules=[CMakeExtension("s2sreid._s2s")],
    cmdclass={"build_ext": CMakeBuild},
    zip_safe=False,
)
