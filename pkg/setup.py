import re
import setuptools


with open("README.md", "r") as fh:
    long_description = fh.read()

def get_version():
    """
    Read ``__version__`` from mbcnet/__init__.py without importing the
    package (which needs NumPy and SciPy).
    """
    with open("mbcnet/__init__.py") as f:
        m = re.search(r"^__version__ = '([^']+)'$", f.read(), re.MULTILINE)
    if m is None:
        raise RuntimeError("could not find __version__ in mbcnet/__init__.py")
    return m.group(1)

setuptools.setup(
    name="mbcnet",
    version=get_version(),
    description="A multi-branch cooperative network trainer for click-through rate prediction.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=['mbcnet', 'mbcnet.tests'],
    package_data={'mbcnet': ['configs/*.yaml']},
    license="MIT",
    install_requires=[
        'numpy',
        'scipy',
        'pyyaml',
        'joblib',
    ],
    tests_require=[
        'pytest',
        'hypothesis',
    ],
    entry_points={
        'console_scripts': ['mbcnet=mbcnet.cli:main'],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires='>=3.8',
)
