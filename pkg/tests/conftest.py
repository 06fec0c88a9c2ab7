"""Shared fixtures for the acceptance suite: deterministic dataset/model
caches (under .afn_cache/ at the repo root) and the end-of-run acceptance
summary."""

import json
from pathlib import Path

import numpy as np
import pytest

CACHE_VERSION = 1

_ACCEPTANCE_RESULTS = []


def record_acceptance(num: int, name: str, ok: bool, detail: str):
    _ACCEPTANCE_RESULTS.append((num, name, ok, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num, name, ok, detail in sorted(_ACCEPTANCE_RESULTS):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"C{num:02d} {name}: {status}  ({detail})")


@pytest.fixture(scope="session")
def acache():
    root = Path(__file__).resolve().parent.parent / ".afn_cache" / f"v{CACHE_VERSION}"
    root.mkdir(parents=True, exist_ok=True)
    return ArtifactCache(root)


class ArtifactCache:
    """Deterministic artifacts keyed by name: datasets as .npz, model
    states as .afnc, computed results as .json."""

    def __init__(self, root: Path):
        self.root = root

    def dataset(self, tag: str, builder):
        from actionflow.synthdata import Clip, ClipDataset, SceneSpec

        path = self.root / f"ds_{tag}.npz"
        if path.exists():
            blob = np.load(path, allow_pickle=False)
            meta = json.loads(str(blob["meta"]))
            splits = {}
            for split in ("train", "val", "test"):
                clips = []
                for i in range(meta["counts"][split]):
                    spec = SceneSpec.from_json_dict(meta["specs"][split][i])
                    clips.append(
                        Clip(
                            frames=blob[f"{split}_frames_{i}"],
                            flows=blob[f"{split}_flows_{i}"],
                            label=spec.label,
                            spec=spec,
                        )
                    )
                splits[split] = clips
            return ClipDataset(profile=meta["profile"], seed=meta["seed"], **splits)
        ds = builder()
        arrays = {}
        meta = {"profile": ds.profile, "seed": ds.seed, "counts": {}, "specs": {}}
        for split in ("train", "val", "test"):
            clips = ds.split(split)
            meta["counts"][split] = len(clips)
            meta["specs"][split] = [c.spec.to_json_dict() for c in clips]
            for i, c in enumerate(clips):
                arrays[f"{split}_frames_{i}"] = c.frames
                arrays[f"{split}_flows_{i}"] = c.flows
        np.savez(path, meta=json.dumps(meta), **arrays)
        return ds

    def model_state(self, tag: str, spec_json: str, builder):
        """Returns (spec_json, state dict); builder() must return a trained
        model whose state is then frozen into the cache."""
        from actionflow.checkpoint import load_checkpoint, save_checkpoint

        path = self.root / f"model_{tag}.afnc"
        if path.exists():
            return load_checkpoint(path)
        model = builder()
        save_checkpoint(path, model.spec.to_json(), model.state_dict())
        return load_checkpoint(path)

    def result(self, tag: str, builder):
        path = self.root / f"result_{tag}.json"
        if path.exists():
            return json.loads(path.read_text())
        value = builder()
        path.write_text(json.dumps(value))
        return value
