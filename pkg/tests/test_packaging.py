"""Tests for the package metadata in pyproject.toml."""

import re
import tomllib

from src.robust_fl import data


def requirement_names(requirements):
    return {re.split(r"[<>=!~\[ ]", req, maxsplit=1)[0].lower() for req in requirements}


def test_runtime_dependencies_exclude_test_tools():
    with open(data.REPO_ROOT / "pyproject.toml", "rb") as f:
        project = tomllib.load(f)["project"]
    assert requirement_names(project["dependencies"]) == {
        "joblib", "matplotlib", "numpy", "pandas", "scipy", "scikit-learn", "tqdm",
    }
    assert requirement_names(project["optional-dependencies"]["test"]) == {"pytest"}
