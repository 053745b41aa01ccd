# polaron_qrt/utils.py
import hashlib
import logging
import re
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd
import ujson

# Configure logger for this module
logger = logging.getLogger(__name__)

# full double precision, scientific notation
CSV_FLOAT_FORMAT = '%.17e'


def sanitize_name(name: str) -> str:
    """Scenario name usable as a directory name"""
    sanitized = re.sub(r'[^\w\-.]', '_', name.strip())
    sanitized = re.sub(r'_{2,}', '_', sanitized).lstrip('.')
    return sanitized or 'scenario'


def ensure_output_dir(root: Union[str, Path], name: str) -> Path:
    path = Path(root) / sanitize_name(name)
    path.mkdir(parents=True, exist_ok=True)
    return path


def to_jsonable(value: Any) -> Any:
    """Recursively convert numpy scalars/arrays and complex numbers for JSON"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {'re': float(value.real), 'im': float(value.imag)}
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if hasattr(value, 'value') and hasattr(value, 'name'):  # enums
        return value.value
    return value


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Locale-independent CSV with every float written as %.17e"""
    path = Path(path)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
    logger.debug(f"Wrote {len(frame)} rows to {path.name}")
    return path


def write_json(data: Dict[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(ujson.dumps(to_jsonable(data), indent=2, sort_keys=True, escape_forward_slashes=False))
        f.write('\n')
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return ujson.loads(f.read())


def calculate_file_hash(file_path: Union[str, Path]) -> str:
    """Calculate SHA-256 hash of a file"""
    hash_sha256 = hashlib.sha256()
    try:
        with open(file_path, 'rb') as f:
            for chunk in iter(lambda: f.read(4096), b""):
                hash_sha256.update(chunk)
        return hash_sha256.hexdigest()
    except OSError as e:
        logger.error(f"Error calculating file hash: {str(e)}")
        return ""


def build_manifest(output_dir: Path, files: List[Path], config_dict: Dict[str, Any], config_hash: str,
                   version: str, horizons: Dict[str, Any], warnings: List[Dict[str, Any]]) -> Dict[str, Any]:
    """Manifest referencing every emitted file by relative path and hash"""
    return {
        'created': datetime.now(timezone.utc).isoformat(),
        'library_version': version,
        'config_hash': config_hash,
        'config': config_dict,
        'kernel_horizons': horizons,
        'warnings': warnings,
        'files': [
            {'path': str(Path(f).relative_to(output_dir)), 'sha256': calculate_file_hash(f)}
            for f in sorted(files)
        ],
    }
