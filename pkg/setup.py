from setuptools import setup, find_packages
from pathlib import Path

# Read README.md safely
readme_path = Path("README.md")
long_description = readme_path.read_text(encoding="utf-8") if readme_path.exists() else ""

setup(
    name="ishm-bench",
    version="0.1.0",
    description="Synthetic rail-vibration anomaly detection benchmark with an attention-based detector",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    install_requires=[
        "numpy>=1.24.0,<3.0.0",
        "pandas>=1.5.0,<3.0.0",
        "python-dotenv>=0.19.0,<2.0.0",
        "tabulate>=0.8.9,<1.0.0",
        "matplotlib>=3.4.3,<4.0.0",
        "seaborn>=0.11.2,<1.0.0",
    ],
    extras_require={
        "dev": [
            "pytest>=7.0.0,<9.0.0",
            "pytest-cov>=2.12.1,<6.0.0",
            "scipy>=1.10.0,<2.0.0",
            "scikit-learn>=1.0.2,<2.0.0",
            "black>=23.0.0",
            "flake8>=6.0.0",
            "mypy>=1.0.0",
            "isort>=5.9.3,<6.0.0",
            "pre-commit>=2.15.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "ishm-bench=ishm_bench.cli:main",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    python_requires=">=3.11",
    license="MIT",
    platforms=["any"],
    keywords=["anomaly-detection", "benchmark", "transformer", "vibration", "railway", "shm"],
    zip_safe=False
)
