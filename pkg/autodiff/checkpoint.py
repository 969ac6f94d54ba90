"""
Parameter checkpoint files

Layout: the magic line "MBCE-CKPT-1\\n", an 8-byte little-endian manifest length,
a UTF-8 JSON manifest (names, shapes, total float count, free-form metadata), then
all parameters as one little-endian float64 buffer in manifest order.
"""

import json
import logging
import struct
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from autodiff.tensor import Tensor
from core.errors import CheckpointFormatError

logger = logging.getLogger(__name__)

MAGIC = b"MBCE-CKPT-1\n"


def save_checkpoint(filename: str, params: Mapping[str, Tensor], metadata: Optional[dict] = None) -> None:
    names = list(params.keys())
    arrays = [np.asarray(params[name].data if isinstance(params[name], Tensor) else params[name],
                         dtype='<f8') for name in names]
    manifest = {
        'names': names,
        'shapes': [list(a.shape) for a in arrays],
        'count': int(sum(a.size for a in arrays)),
        'metadata': metadata or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode('utf-8')
    with open(filename, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<Q', len(blob)))
        f.write(blob)
        for a in arrays:
            f.write(np.ascontiguousarray(a).tobytes())
    logger.info(f"Checkpoint with {len(names)} tensors ({manifest['count']} values) saved to {filename}")


def load_checkpoint(filename: str) -> Tuple[Dict[str, np.ndarray], dict]:
    """Read a checkpoint back

    Returns:
        (name -> float64 array, metadata dict)
    """
    with open(filename, 'rb') as f:
        raw = f.read()
    if not raw.startswith(MAGIC):
        raise CheckpointFormatError(f"{filename} is not a checkpoint (bad magic header)")
    offset = len(MAGIC)
    if len(raw) < offset + 8:
        raise CheckpointFormatError(f"{filename} is truncated")
    (manifest_len,) = struct.unpack('<Q', raw[offset:offset + 8])
    offset += 8
    try:
        manifest = json.loads(raw[offset:offset + manifest_len].decode('utf-8'))
        names, shapes, count = manifest['names'], manifest['shapes'], int(manifest['count'])
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise CheckpointFormatError(f"{filename} has an unreadable manifest: {e}") from e
    offset += manifest_len

    payload = raw[offset:]
    if len(payload) != 8 * count:
        raise CheckpointFormatError(f"{filename}: expected {8 * count} payload bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype='<f8').astype(np.float64)

    params = {}
    cursor = 0
    for name, shape in zip(names, shapes):
        size = int(np.prod(shape)) if shape else 1
        params[name] = values[cursor:cursor + size].reshape(shape).copy()
        cursor += size
    if cursor != count:
        raise CheckpointFormatError(f"{filename}: shapes account for {cursor} values, manifest says {count}")
    logger.info(f"Checkpoint loaded from {filename} ({len(params)} tensors)")
    return params, manifest.get('metadata', {})
