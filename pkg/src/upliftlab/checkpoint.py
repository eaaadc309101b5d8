"""Model checkpoints: one .npz container holding JSON metadata plus arrays.

The metadata records the model kind, its config, the full feature schema and
its hash; loading verifies the hash and, when the caller supplies the schema
it intends to use, rejects any mismatch so training and inference cannot
silently disagree on encoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .encoder import FeatureSchema


class SchemaHashError(ValueError):
    """Checkpoint schema does not match the expected schema."""


@dataclass
class CheckpointData:
    kind: str
    schema: FeatureSchema
    config: dict
    params: dict[str, np.ndarray]
    descriptors: np.ndarray | None
    extra: dict


def save_checkpoint(path, *, kind: str, schema: FeatureSchema, config: dict,
                    params: dict[str, np.ndarray], descriptors=None, extra=None) -> None:
    meta = {
        "kind": kind,
        "schema": schema.to_json(),
        "schema_hash": schema.schema_hash(),
        "config": config,
        "extra": extra or {},
        "param_names": sorted(params),
    }
    arrays = {f"param/{k}": v for k, v in params.items()}
    if descriptors is not None:
        arrays["descriptors"] = np.asarray(descriptors, dtype=np.float64)
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, __meta__=blob, **arrays)


def load_checkpoint(path, expect_schema: FeatureSchema | None = None) -> CheckpointData:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        schema = FeatureSchema.from_json(meta["schema"])
        if schema.schema_hash() != meta["schema_hash"]:
            raise SchemaHashError("checkpoint is corrupt: schema hash does not match contents")
        if expect_schema is not None and expect_schema.schema_hash() != meta["schema_hash"]:
            raise SchemaHashError(
                "checkpoint was trained against a different feature schema; refusing to load"
            )
        params = {k: np.array(data[f"param/{k}"]) for k in meta["param_names"]}
        descriptors = np.array(data["descriptors"]) if "descriptors" in data.files else None
    return CheckpointData(meta["kind"], schema, meta["config"], params, descriptors,
                          meta.get("extra", {}))
