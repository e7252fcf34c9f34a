import setuptools  # type: ignore

version = '%VERSION%'  # Replaced by the publish.yml workflow
if version.count('%') != 0:
    version = '0.0.dev0'  # Unpublished builds use the same dev placeholder as tpsfem/version.py

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name='tpsfem',
    version=version,
    description='Finite element thin plate spline smoothing with adaptive grid refinement',
    license='Apache License 2.0',
    packages=setuptools.find_packages(exclude=['tests', 'tests.*']),
    long_description=long_description,
    long_description_content_type="text/markdown",
    install_requires=[
        'numpy',
        'scipy',
        'semver',
    ],
    extras_require={
        'tests': [
            'pytest',
            'hypothesis',
        ],
    },
    entry_points={
        'console_scripts': [
            'tpsfem=tpsfem.cli:main',
        ],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "Development Status :: 4 - Beta",
        "Operating System :: OS Independent",
        "License :: OSI Approved :: Apache Software License",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires='>=3.8',
)
