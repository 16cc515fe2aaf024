from pyRobustStudent import constants
from setuptools import setup

with open('README.rst') as f:
    readme = f.read()

setup(
    name="pyRobustStudent",
    version=constants.VERSION,
    description="Robust student network learning by knowledge distillation",
    long_description=readme,
    license="MIT",
    packages=["pyRobustStudent"],
    python_requires=">=3.8",
    install_requires=["numpy>=1.20"],
    entry_points={"console_scripts": ["robust-student=pyRobustStudent.cli:main"]},
    platforms="any",
)
