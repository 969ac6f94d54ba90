from setuptools import setup, find_packages

setup(
    name='mbce',
    version='0.3.0',
    description='Map-based MIMO channel estimation with RSS-map priors and a physics-informed refiner',
    author='Your Name',
    packages=find_packages(include=['core', 'autodiff', 'pinn', 'harness', 'utils',
                                    'core.*', 'autodiff.*', 'pinn.*', 'harness.*', 'utils.*']),
    py_modules=['main', 'version'],
    install_requires=[
        'numpy>=1.21.0',
        'scipy>=1.7.0',
        'pillow',
    ],
    entry_points={
        'console_scripts': [
            'mbce = main:main',
        ],
    },
    include_package_data=True,
    package_data={
        '': ['*.json'],
    },
    python_requires='>=3.9',
    classifiers=[
        'Programming Language :: Python :: 3',
        'Operating System :: OS Independent',
    ],
)
