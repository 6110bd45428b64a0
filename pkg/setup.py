import os

from setuptools import Extension, setup


def ext_modules():
    if os.environ.get("EMOLAB_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "emolab._ckernels",
        ["src/emolab/_ckernels.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=ext_modules())
