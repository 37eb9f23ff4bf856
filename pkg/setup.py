""" Setup script for evdeblur, the event-based motion deblurring toolkit.

Usage:
    'cd' into this directory and execute:
        "python setup.py install" [for a simple install to python site-packages folder]
        "python setup.py develop" [for an active development environment]
"""

from setuptools import setup


def readme():
    with open('README.md') as f:
        return f.read()


setup(
    name='evdeblur',
    version='0.1',
    description='Event simulation, piece-wise linear motion, reblurring and variational deblurring from one blurry frame plus events.',
    long_description=readme(),
    long_description_content_type='text/markdown',
    author='evdeblur developers',
    packages=['evdeblur'],
    package_data={'evdeblur': ['config_default.ini']},
    python_requires='>=3.7',
    # Define dependencies
    install_requires=[
        'numpy',
        'scipy',
        'matplotlib',
        'scikit-image',
    ],
    extras_require={
        'test': ['pytest>=7'],
    },
    entry_points={
        'console_scripts': ['evdeblur=evdeblur.cli:main'],
    },
    zip_safe=False
)
