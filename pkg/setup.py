from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    # pure-Python install; plasticnn.kernels falls back to numpy
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("plasticnn._kernels", ["src/plasticnn/_kernels.pyx"],
                   include_dirs=[np.get_include()],
                   extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
