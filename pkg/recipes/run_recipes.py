#!/usr/bin/env python3
"""
Run the desk-scale experiment recipes end to end.

Each recipe drives asdtool.py as a subprocess: generate -> simulate -> ode
-> compare (plus any extra subcommands listed), each step writing into its
own directory under the recipe's output dir.

Usage:
    python3 recipes/run_recipes.py            # all recipes
    python3 recipes/run_recipes.py erg brca   # selected recipes
"""

import argparse
import os
import subprocess
import sys
from pathlib import Path

import yaml


RECIPE_LIST = [
    {
        "id": "erg",
        "config": "recipes/erg.yaml",
        "steps": ["generate", "simulate", "ode"],
        "compare": ("simulate/trajectory.csv", "ode/ode.csv"),
    },
    {
        "id": "brca",
        "config": "recipes/brca.yaml",
        "steps": ["simulate", "ode", "stationary"],
        "compare": ("simulate/summary.csv", "ode/ode.csv"),
    },
    {
        "id": "cbm",
        "config": "recipes/cbm.yaml",
        "steps": ["generate", "simulate", "ode"],
        "compare": ("simulate/summary.csv", "ode/ode.csv"),
    },
    {
        "id": "tltm",
        "config": "recipes/tltm.yaml",
        "steps": ["simulate", "ode", "stationary", "basins"],
        "compare": ("simulate/summary.csv", "ode/ode.csv"),
    },
    {
        "id": "couple",
        "config": "recipes/couple.yaml",
        "steps": ["couple", "bounds"],
        "compare": None,
    },
]

RECIPE_DICT = {recipe["id"]: recipe for recipe in RECIPE_LIST}

_my_env = os.environ.copy()
_my_env["PYTHONIOENCODING"] = "utf-8"


def get_project_root():
    """Get the project root directory (parent of the recipes directory)."""
    return Path(__file__).parent.absolute().parent


def read_yaml_value(yaml_file, key_path):
    """Read a dotted key from a YAML file; None when absent."""
    with open(yaml_file, 'r') as f:
        value = yaml.safe_load(f)
    for k in key_path.split('.'):
        if not isinstance(value, dict):
            return None
        value = value.get(k)
    return value


def asdtool(*args, stdout=True):
    """Run asdtool.py with the given arguments, streaming its output.

    Args:
        *args: Arguments to pass to asdtool.py
        stdout: If True, print process output to stdout (default: True)

    Returns:
        The process exit code.
    """
    project_root = get_project_root()
    cmd = [sys.executable, str(project_root / "asdtool.py")] + [str(a) for a in args]
    print(f"Running: {' '.join(cmd)}")

    process = subprocess.Popen(
        cmd,
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
        encoding='utf-8',
        errors='replace',
        bufsize=1,
        cwd=project_root,
        env=_my_env
    )
    for line in process.stdout:
        if stdout:
            print(line, end='')
    process.wait()
    return process.returncode


def run_recipe(recipe, extra_args):
    project_root = get_project_root()
    config = project_root / recipe["config"]
    out_dir = read_yaml_value(config, "output.dir") or f"out/{recipe['id']}"

    print(f"\n--- Recipe: {recipe['id']} ---")
    for step in recipe["steps"]:
        code = asdtool(step, "--config", config, "--out", f"{out_dir}/{step}", *extra_args)
        if code != 0:
            print(f"ERROR: {recipe['id']}: {step} failed with exit code {code}", file=sys.stderr)
            return code

    if recipe["compare"] is None:
        return 0
    first, second = recipe["compare"]
    args = ["compare", f"{out_dir}/{first}", f"{out_dir}/{second}", "--out", f"{out_dir}/compare"]
    tol = read_yaml_value(config, "compare.assert_tol")
    if tol is not None:
        args += ["--assert", tol]
    code = asdtool(*args)
    if code != 0:
        print(f"ERROR: {recipe['id']}: compare failed with exit code {code}", file=sys.stderr)
    return code


def main():
    parser = argparse.ArgumentParser(description='Run experiment recipes')
    parser.add_argument('recipes', nargs='*', help=f'Recipe ids (default: all of {list(RECIPE_DICT)})')
    parser.add_argument('--threads', type=int, help='Worker processes passed to asdtool')
    parser.add_argument('--progress', action='store_true', help='Show progress bars')
    args = parser.parse_args()

    ids = args.recipes or list(RECIPE_DICT)
    unknown = [i for i in ids if i not in RECIPE_DICT]
    if unknown:
        print(f"ERROR: unknown recipes {unknown}", file=sys.stderr)
        return 2

    extra_args = []
    if args.threads is not None:
        extra_args += ["--threads", args.threads]
    if args.progress:
        extra_args.append("--progress")

    failed = []
    for recipe_id in ids:
        if run_recipe(RECIPE_DICT[recipe_id], extra_args) != 0:
            failed.append(recipe_id)

    if failed:
        print(f"\nFailed recipes: {', '.join(failed)}")
        return 1
    print(f"\nAll {len(ids)} recipes passed")
    return 0


if __name__ == '__main__':
    sys.exit(main())
