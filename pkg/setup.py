import os
from setuptools import setup

PACKAGE_NAME = "ldlgrid"


def get_version(version_path):
    with open(version_path) as f:
        return f.read().strip()


setup(
    name=PACKAGE_NAME,
    version=get_version(os.path.join(PACKAGE_NAME, "VERSION")),
    packages=[PACKAGE_NAME],
    description="Transient simulation of large digital loads and grid-forming storage",
    package_data={
        PACKAGE_NAME: [
            "VERSION",
            os.path.join("configs", "*.json"),
            "data/*/*",
        ]
    },
    include_package_data=True,
    python_requires=">=3.7",
    install_requires=["numpy", "scipy>=1.6", "pandas", "pyyaml", "matplotlib"],
    entry_points={"console_scripts": ["ldlgrid = ldlgrid.cli:main"]},
)
