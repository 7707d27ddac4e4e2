"""Named parameter storage and the JSON checkpoint format."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterator

import numpy as np

FORMAT_VERSION = 1


class ParameterStore:
    """Ordered collection of trainable float64 arrays with matching gradient slots.

    Iteration order is insertion order, so two stores built by the same
    construction sequence line up entry for entry. Adam moments live in
    ``optimizer_state`` and travel with the store through checkpoints.
    """

    def __init__(self) -> None:
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self.optimizer_state: dict[str, Any] = {"t": 0, "m": {}, "v": {}}
        self._frozen = False

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._values:
            raise KeyError(f"duplicate parameter name {name!r}")
        if self._frozen:
            raise RuntimeError("cannot add parameters to a frozen store")
        arr = np.array(value, dtype=np.float64, copy=True)
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate(self, name: str, g: np.ndarray) -> None:
        slot = self._grads[name]
        if g.shape != slot.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {slot.shape}")
        slot += g

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def num_scalars(self) -> int:
        return int(sum(v.size for v in self._values.values()))

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "ParameterStore":
        # read-only arrays make concurrent inference safe
        for v in self._values.values():
            v.flags.writeable = False
        self._frozen = True
        return self

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name, v in self._values.items():
            out.add(name, v)
        out.optimizer_state = {
            "t": self.optimizer_state["t"],
            "m": {k: a.copy() for k, a in self.optimizer_state["m"].items()},
            "v": {k: a.copy() for k, a in self.optimizer_state["v"].items()},
        }
        return out

    def flat_values(self) -> np.ndarray:
        if not self._values:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._values.values()])

    def to_dict(self) -> dict[str, Any]:
        state = self.optimizer_state
        return {
            "entries": [
                {"name": n, "shape": list(v.shape), "values": v.ravel().tolist()}
                for n, v in self._values.items()
            ],
            "optimizer_state": {
                "t": int(state["t"]),
                "m": [{"name": n, "values": a.ravel().tolist()} for n, a in state["m"].items()],
                "v": [{"name": n, "values": a.ravel().tolist()} for n, a in state["v"].items()],
            },
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ParameterStore":
        store = cls()
        shapes = {}
        for entry in doc["entries"]:
            shape = tuple(entry["shape"])
            values = np.asarray(entry["values"], dtype=np.float64)
            if values.size != int(np.prod(shape, dtype=np.int64)):
                raise ValueError(f"entry {entry['name']!r}: {values.size} values for shape {shape}")
            store.add(entry["name"], values.reshape(shape))
            shapes[entry["name"]] = shape
        opt = doc.get("optimizer_state") or {}
        store.optimizer_state["t"] = int(opt.get("t", 0))
        for key in ("m", "v"):
            for item in opt.get(key, []):
                shape = shapes[item["name"]]
                store.optimizer_state[key][item["name"]] = np.asarray(
                    item["values"], dtype=np.float64
                ).reshape(shape)
        return store


def dump_checkpoint(store: ParameterStore, **metadata: Any) -> str:
    """Serialize to the versioned JSON checkpoint text.

    Floats are written with ``repr`` (shortest round-trip form), so loading
    reproduces every value exactly.
    """
    doc = {"format_version": FORMAT_VERSION, **metadata, **store.to_dict()}
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def save_checkpoint(path: str | Path, store: ParameterStore, **metadata: Any) -> None:
    Path(path).write_text(dump_checkpoint(store, **metadata), encoding="utf-8")


def parse_checkpoint(text: str) -> tuple[ParameterStore, dict[str, Any]]:
    doc = json.loads(text)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    store = ParameterStore.from_dict(doc)
    meta = {k: v for k, v in doc.items() if k not in ("entries", "optimizer_state")}
    return store, meta


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, dict[str, Any]]:
    return parse_checkpoint(Path(path).read_text(encoding="utf-8"))
