"""Plain-text experiment recipes.

A recipe is a header plus an ordered list of named stages::

    seed = 0

    [stage corpus]
    run = corpus gen --utts 720 --out {out}/corpus/all.tsv --seed {seed}

    [stage pretrain]
    needs = corpus
    run = train pretrain --corpus {out}/corpus/train.tsv --out {out}/pretrain

Each ``run`` line is a CLI command executed in-process with stdout/stderr
captured to ``<out>/logs/<stage>.log``. Placeholders: ``{out}`` (the run's
output root), ``{seed}`` (header seed unless overridden), ``{recipe_dir}``
(directory containing the recipe file, for configs shipped next to it).

``needs`` lists stages that must appear earlier in the file; stages execute
strictly in file order, so the listed order must already be a topological
order of the dependency graph.

Completed stages are skipped when nothing changed: every stage writes
``<out>/_stages/<name>.json`` recording its command template, the hashes of
the input files its command referenced, and the hashes of every file it
created or modified under ``<out>``. A re-run with identical command, inputs,
and surviving outputs is a no-op. The manifest holds no absolute paths and no
timestamps, so identical (recipe, seed) runs produce identical trees.

Stages should be functional (inputs -> fresh outputs); a stage that rewrites
one of its own inputs defeats the skip guard and reruns every time.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import traceback
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import dataclass, field
from pathlib import Path

from .errors import RecipeError

_SKIP_DIRS = ("logs", "_stages")


@dataclass
class Stage:
    name: str
    run: str
    needs: tuple[str, ...] = ()


@dataclass
class Recipe:
    seed: int
    stages: list[Stage]
    path: Path

    @property
    def stage_names(self) -> list[str]:
        return [s.name for s in self.stages]


@dataclass
class StageResult:
    name: str
    status: str  # "ran" or "skipped"
    log_path: Path | None = None


def parse_recipe(path: str | Path) -> Recipe:
    path = Path(path)
    if not path.is_file():
        raise RecipeError(f"recipe file not found: {path}")
    seed = 0
    stages: list[Stage] = []
    current: dict | None = None

    def close_current():
        if current is None:
            return
        if "run" not in current:
            raise RecipeError(f"stage '{current['name']}' has no run line")
        stages.append(Stage(current["name"], current["run"],
                            tuple(current.get("needs", ()))))

    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                 start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            head = line[1:-1].split()
            if len(head) != 2 or head[0] != "stage" or not head[1].replace(
                    "-", "").replace("_", "").isalnum():
                raise RecipeError(f"{path} line {lineno}: expected [stage <name>]")
            close_current()
            if head[1] in (s.name for s in stages) or (
                    current and head[1] == current["name"]):
                raise RecipeError(f"{path} line {lineno}: duplicate stage '{head[1]}'")
            current = {"name": head[1]}
            continue
        if "=" not in line:
            raise RecipeError(f"{path} line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if current is None:
            if key == "seed":
                try:
                    seed = int(value)
                except ValueError:
                    raise RecipeError(f"{path} line {lineno}: seed must be an "
                                      f"integer, got {value!r}") from None
            else:
                raise RecipeError(f"{path} line {lineno}: unknown header key '{key}'")
        elif key == "run":
            if "run" in current:
                raise RecipeError(f"{path} line {lineno}: stage "
                                  f"'{current['name']}' has two run lines")
            current["run"] = value
        elif key == "needs":
            current["needs"] = tuple(n.strip() for n in value.split(",") if n.strip())
        else:
            raise RecipeError(f"{path} line {lineno}: unknown stage key '{key}'")
    close_current()
    if not stages:
        raise RecipeError(f"{path}: recipe defines no stages")
    seen: set[str] = set()
    for stage in stages:
        for need in stage.needs:
            if need not in seen:
                raise RecipeError(f"stage '{stage.name}' needs '{need}', which is "
                                  f"not an earlier stage")
        seen.add(stage.name)
    return Recipe(seed, stages, path)


# --------------------------------------------------------------------------
# Hash bookkeeping


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _snapshot(out_dir: Path) -> dict[str, str]:
    """Relative path -> content hash for every artifact under the run root."""
    out: dict[str, str] = {}
    if not out_dir.is_dir():
        return out
    for p in sorted(out_dir.rglob("*")):
        if not p.is_file():
            continue
        rel = p.relative_to(out_dir)
        if rel.parts and rel.parts[0] in _SKIP_DIRS:
            continue
        out[rel.as_posix()] = _sha256(p)
    return out


class _Placeholders(dict):
    def __missing__(self, key):
        raise RecipeError(f"unknown recipe placeholder '{{{key}}}'")


def _resolve(template: str, values: dict[str, str]) -> str:
    return template.format_map(_Placeholders(values))


def _input_hashes(template_tokens: list[str], resolved_tokens: list[str]) -> dict:
    inputs = {}
    for tpl, res in zip(template_tokens, resolved_tokens):
        p = Path(res)
        if p.is_file():
            inputs[tpl] = _sha256(p)
    return inputs


def _stage_is_current(manifest_path: Path, stage: Stage, seed: int,
                      values: dict[str, str], out_dir: Path) -> bool:
    if not manifest_path.is_file():
        return False
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    if doc.get("command") != stage.run or doc.get("seed") != seed:
        return False
    resolved = _resolve(stage.run, values)
    tpl_tokens, res_tokens = shlex.split(stage.run), shlex.split(resolved)
    if len(tpl_tokens) != len(res_tokens):
        return False
    current_inputs = _input_hashes(tpl_tokens, res_tokens)
    recorded_inputs = doc.get("inputs", {})
    for tpl, sha in recorded_inputs.items():
        if current_inputs.get(tpl) != sha:
            return False
    for rel, sha in doc.get("produced", {}).items():
        p = out_dir / rel
        if not p.is_file() or _sha256(p) != sha:
            return False
    return True


def run_recipe(recipe_path: str | Path, out_dir: str | Path,
               seed: int | None = None, echo=print) -> list[StageResult]:
    """Execute a recipe's stages in order, skipping up-to-date ones.

    A failing stage halts the run with its name and log path.
    """
    from .cli import main as cli_main  # late import; the CLI dispatches back here

    recipe = parse_recipe(recipe_path)
    if seed is None:
        seed = recipe.seed
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    values = {"out": str(out_dir), "seed": str(seed),
              "recipe_dir": str(Path(recipe_path).resolve().parent)}
    stage_dir = out_dir / "_stages"
    log_dir = out_dir / "logs"
    stage_dir.mkdir(exist_ok=True)
    log_dir.mkdir(exist_ok=True)

    results: list[StageResult] = []
    for stage in recipe.stages:
        manifest_path = stage_dir / f"{stage.name}.json"
        if _stage_is_current(manifest_path, stage, seed, values, out_dir):
            results.append(StageResult(stage.name, "skipped"))
            echo(f"stage {stage.name}: up to date, skipped")
            continue
        resolved = _resolve(stage.run, values)
        tpl_tokens, res_tokens = shlex.split(stage.run), shlex.split(resolved)
        if len(tpl_tokens) != len(res_tokens):
            raise RecipeError(f"stage '{stage.name}': placeholder expansion may "
                              f"not change the argument count")
        inputs = _input_hashes(tpl_tokens, res_tokens)
        log_path = log_dir / f"{stage.name}.log"
        before = _snapshot(out_dir)
        echo(f"stage {stage.name}: running")
        code = 0
        with open(log_path, "w", encoding="utf-8") as fh:
            with redirect_stdout(fh), redirect_stderr(fh):
                try:
                    code = cli_main(res_tokens)
                except SystemExit as exc:  # argparse rejection
                    code = exc.code if isinstance(exc.code, int) else 1
                except Exception:
                    traceback.print_exc()
                    code = 1
        if code != 0:
            raise RecipeError(f"stage '{stage.name}' failed (exit {code}); "
                              f"log: {log_path}")
        after = _snapshot(out_dir)
        produced = {rel: sha for rel, sha in after.items()
                    if before.get(rel) != sha}
        manifest = {"stage": stage.name, "command": stage.run, "seed": seed,
                    "needs": list(stage.needs), "inputs": inputs,
                    "produced": produced}
        manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                 encoding="utf-8")
        results.append(StageResult(stage.name, "ran", log_path))
    return results
