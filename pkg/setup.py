# Builds the optional compiled kernels. If Cython or a C compiler is missing,
# the package still installs and bicephnet.kernels falls back to numpy.
from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    pass
else:
    ext_modules = cythonize(
        [
            Extension(
                "bicephnet._kernels",
                ["src/bicephnet/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                # no FMA contraction: keeps distance sums bit-equal to the fallback
                extra_compile_args=["-O3", "-ffp-contract=off"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
