import os

from setuptools import setup, find_packages

here = os.path.abspath(os.path.dirname(__file__))

# Avoids IDE errors, but actual version is read from version.py
__version__ = None
with open("divae/version.py") as f:
    exec(f.read())

# Get the long description from the README file
with open(os.path.join(here, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

tests_requires = [
    "pytest~=7.0",
    "pytest-pycodestyle~=2.3",
    "pytest-cov~=4.0",
]

install_requires = [
    "numpy~=1.22",
    "scipy~=1.8",
    "tensorflow>=2.11,<2.12",
    "tqdm~=4.0",
    "coloredlogs~=15.0",
    "jsonschema~=3.2",
    "packaging>=20.0",
    "terminaltables~=3.1",
]

extras_requires = {
    "test": tests_requires
}

setup(
    name="divae",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: Apache Software License",
        # supported python versions
        "Programming Language :: Python",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    packages=find_packages(exclude=["tests", "tools"]),
    entry_points={
        'console_scripts': ['divae=divae.__main__:main'],
    },
    version=__version__,
    install_requires=install_requires,
    tests_require=tests_requires,
    extras_require=extras_requires,
    include_package_data=True,
    description="Discrete image autoencoder with a denoising diffusion "
                "decoder and an autoregressive latent prior.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="Apache 2.0",
    keywords="diffusion vq-vae image-generation autoencoder tensorflow",
)
