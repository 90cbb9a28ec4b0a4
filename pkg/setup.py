from setuptools import setup, find_packages

setup(
    name="podn-openset",
    version="0.1.0",
    packages=find_packages(where=".", exclude=["tests", "examples", "examples.*"]),
    package_dir={"": "."},
)
