"""Recommender portfolio: specs, manifest loading, fitting and model cache.

Each portfolio member names the source file that implements it. That file is
both imported to train the model and analysed for code metrics, so paired
variants of one family live in physically separate files.

Manifest format (INI, one section per algorithm)::

    [bpr_a]
    family = bpr
    source = bpr_a.py        ; relative to the manifest file
    seed = 11
    param.factors = 32       ; any number of param.<name> keys

Parameter values are parsed as JSON where possible, else kept as strings.
"""

from __future__ import annotations

import configparser
import hashlib
import importlib
import importlib.util
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from recmeta.dataset import Dataset
from recmeta.portfolio.base import DegenerateDataError, RankedList, Recommender

PACKAGE_DIR = Path(__file__).resolve().parent
DEFAULT_MANIFEST = PACKAGE_DIR / "default.ini"
FAMILIES = ("popularity", "itemknn", "bpr", "implicitmf", "ease", "fpmc")
CACHE_VERSION = 1

__all__ = [
    "RecommenderSpec",
    "RankedList",
    "Recommender",
    "DegenerateDataError",
    "ManifestError",
    "load_manifest",
    "default_portfolio",
    "fit",
    "recommend",
    "save_model",
    "load_model",
]


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class RecommenderSpec:
    algo_id: str
    family: str
    source_path: Path
    params: dict = field(default_factory=dict)
    seed: int = 0

    def spec_hash(self) -> str:
        h = hashlib.sha256()
        h.update(
            json.dumps(
                {"algo_id": self.algo_id, "family": self.family, "params": self.params, "seed": self.seed},
                sort_keys=True,
            ).encode()
        )
        h.update(Path(self.source_path).read_bytes())
        return h.hexdigest()


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_manifest(path: str | Path) -> list[RecommenderSpec]:
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ManifestError(f"{path}: {exc}") from None
    if not cp.sections():
        raise ManifestError(f"{path}: no algorithms listed")

    specs = []
    for algo_id in cp.sections():
        sec = cp[algo_id]
        for key in ("family", "source"):
            if key not in sec:
                raise ManifestError(f"{path} [{algo_id}]: missing {key!r}")
        family = sec["family"].strip()
        if family not in FAMILIES:
            raise ManifestError(f"{path} [{algo_id}]: unknown family {family!r}")
        source = Path(sec["source"].strip())
        if not source.is_absolute():
            source = (path.parent / source).resolve()
        if not source.is_file():
            raise ManifestError(f"{path} [{algo_id}]: source {source} not readable")
        try:
            seed = int(sec.get("seed", "0"))
        except ValueError:
            raise ManifestError(f"{path} [{algo_id}]: seed must be an integer") from None
        params = {}
        for key, value in sec.items():
            if key.startswith("param."):
                params[key[len("param.") :]] = _parse_value(value)
            elif key not in ("family", "source", "seed"):
                raise ManifestError(f"{path} [{algo_id}]: unknown key {key!r}")
        specs.append(RecommenderSpec(algo_id, family, source, params, seed))
    return specs


def default_portfolio() -> list[RecommenderSpec]:
    return load_manifest(DEFAULT_MANIFEST)


def implementation(spec: RecommenderSpec) -> type[Recommender]:
    """Import the class implementing ``spec`` from its source file."""
    source = Path(spec.source_path).resolve()
    try:
        rel = source.relative_to(PACKAGE_DIR)
        module = importlib.import_module(f"{__name__}.{'.'.join(rel.with_suffix('').parts)}")
    except ValueError:
        name = "recmeta_ext_" + hashlib.sha1(str(source).encode()).hexdigest()[:12]
        mod_spec = importlib.util.spec_from_file_location(name, source)
        module = importlib.util.module_from_spec(mod_spec)
        mod_spec.loader.exec_module(module)
    found = [
        obj
        for obj in vars(module).values()
        if isinstance(obj, type)
        and issubclass(obj, Recommender)
        and obj.__module__ == module.__name__
        and obj.family == spec.family
    ]
    if len(found) != 1:
        raise ManifestError(
            f"{spec.algo_id}: expected one {spec.family!r} recommender in {source}, found {len(found)}"
        )
    return found[0]


def fit(spec: RecommenderSpec, train: Dataset) -> Recommender:
    cls = implementation(spec)
    return cls(seed=spec.seed, **spec.params).fit(train)


def recommend(model: Recommender, user: int, k: int = 10) -> RankedList:
    return model.recommend(user, k)


def save_model(model: Recommender, spec: RecommenderSpec, path: str | Path) -> None:
    meta = {"version": CACHE_VERSION, "spec_hash": spec.spec_hash(), "class": type(model).__name__}
    state = model.get_state()
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **state)


def load_model(spec: RecommenderSpec, path: str | Path) -> Recommender | None:
    """Load a cached model; None if the file is stale or from another version."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CACHE_VERSION or meta.get("spec_hash") != spec.spec_hash():
            return None
        state = {k: data[k] for k in data.files if k != "__meta__"}
    cls = implementation(spec)
    return cls(seed=spec.seed, **spec.params).set_state(state)


def fit_cached(spec: RecommenderSpec, train: Dataset, cache_dir: str | Path | None) -> Recommender:
    if cache_dir is None:
        return fit(spec, train)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = hashlib.sha256((train.content_hash() + spec.spec_hash()).encode()).hexdigest()[:24]
    path = cache_dir / f"{spec.algo_id}-{key}.npz"
    if path.exists():
        model = load_model(spec, path)
        if model is not None:
            return model
    model = fit(spec, train)
    tmp = path.with_suffix(".tmp")
    save_model(model, spec, tmp)
    tmp.replace(path)
    return model
