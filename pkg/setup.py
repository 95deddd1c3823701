from distutils.core import setup
from pathlib import Path

this_directory = Path(__file__).parent
install_requires = (this_directory / "requirements.txt").read_text().splitlines()
long_description = (this_directory / "README.md").read_text()

exec(open("fedadapt/version.py").read())
setup(
    name="fedadapt",
    version=__version__,
    packages=[
        "fedadapt",
        "fedadapt.core",
        "fedadapt.data",
        "fedadapt.experiments",
        "fedadapt.federated",
        "fedadapt.metrics",
        "fedadapt.models",
        "fedadapt.models.layers",
    ],
    package_data={"fedadapt": ["configs/*.yaml", "configs/*/*.yaml"]},
    license="MIT License",
    install_requires=install_requires,
    long_description=long_description,
    long_description_content_type="text/markdown",
    description="Federated adapter tuning of speech encoders, simulated at desk scale",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Developers",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3.8",
    ],
)
