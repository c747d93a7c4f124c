from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Union
from xml.etree import ElementTree

from setuptools import setup


@dataclass(frozen=True)
class PackageData:
    """Metadata parsed from package.xml"""

    package_name: str
    version: str
    description: Optional[str]
    author: Optional[str]
    author_email: Optional[str]
    license_name: Optional[str]

    @staticmethod
    def require_not_none(text: Optional[Union[str, ElementTree.Element]]):
        """Raises ValueError if input is None"""
        if text is None:
            raise ValueError("Expected not None")
        return text

    @classmethod
    def parse_package_data(cls, package_file: str) -> PackageData:
        """Parses package.xml

        :param package_file: Absolute path to package.xml file
        :raise FileNotFoundError: If package.xml file is not found
        """
        if not os.path.isfile(package_file):
            raise FileNotFoundError(f"Could not find package file at {package_file}.")
        root = ElementTree.parse(package_file).getroot()
        author = root.find("author")
        return PackageData(
            package_name=cls.require_not_none(root.findtext("name")),
            version=cls.require_not_none(root.findtext("version")),
            description=root.findtext("description"),
            author=root.findtext("author"),
            author_email=author.attrib.get("email") if author is not None else None,
            license_name=root.findtext("license"),
        )


pdata = PackageData.parse_package_data(
    os.path.join(os.path.dirname(os.path.abspath(__file__)), "package.xml")
)

setup(
    name=pdata.package_name,
    version=pdata.version,
    packages=[
        pdata.package_name,
        pdata.package_name + ".core",
        pdata.package_name + ".extensions",
        "test",
        "test.unit",
        "test.acceptance",
    ],
    package_data={pdata.package_name: ["data/*.tsv", "params/*.yaml"]},
    zip_safe=False,
    author=pdata.author,
    author_email=pdata.author_email,
    description=pdata.description,
    license=pdata.license_name,
    python_requires=">=3.8",
    install_requires=[
        "librosa>=0.10",
        "numpy>=1.24.2",
        "opencv-python-headless",
        "pyyaml",
        "scipy",
        "soundfile",
        "torch>=2.1.0",
        "tqdm",
    ],
    tests_require=["pytest"],
    extras_require={
        "dev": [
            "autodocsumm!=0.2.13",
            "coverage",
            "pre-commit",
            "pytest",
            "Sphinx",
            "sphinx-copybutton",
            "types-PyYAML",
        ],
    },
    entry_points={
        "console_scripts": [
            "tacovc = tacovc:main",
        ],
    },
)
