"""Binary container for posterior particle clouds.

Byte layout (all integers little-endian)::

    offset  size  content
    0       8     magic b'RSMCPOST'
    8       4     uint32 format version
    12      8     uint64 header length H
    20      H     UTF-8 JSON header, space padded so 20 + H is a multiple of 8
    20 + H  ...   float64 little-endian arrays, C order, back to back

The header lists every array as ``{"name", "shape", "offset", "nbytes"}``
with offsets relative to the start of the array block, and carries the
SHA-256 digest of that block. Headers are written with sorted keys and hold
no timestamps, so identical clouds give identical files.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import ArchiveError
from .priors import Particle, PriorSpec
from .smc import ParticleCloud, SmcConfig

MAGIC = b'RSMCPOST'
FORMAT_VERSION = 1
_PREFIX = struct.Struct('<8sIQ')
_ALIGN = 8


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


def _portable_config(config):
    # thread count does not affect results and is left out so archives
    # written with different thread counts are byte-identical
    out = config.to_dict()
    out.pop('threads', None)
    return out


def write_archive(path, cloud, grid, spectra, config=None, names=None, extra=None):
    """
    Write a cloud together with the data it was fitted to.

    Parameters
    ----------
    path : str or path-like
    cloud : ParticleCloud
    grid : numpy.ndarray, shape (n,)
    spectra : numpy.ndarray, shape (N, n)
    config : SmcConfig, optional
    names : list of str, optional
        Observation column names.
    extra : dict, optional
        Further JSON-serialisable metadata stored in the header.

    Returns
    -------
    bytes
        The bytes written.

    """
    spectra = np.atleast_2d(np.asarray(spectra, dtype=float))
    arrays = {'grid': np.asarray(grid, dtype=float), 'spectra': spectra,
              'weights': cloud.weights, 'loglik': cloud.loglik, 'logprior': cloud.logprior}
    for field_name in Particle.FIELDS:
        arrays[f'particles.{field_name}'] = getattr(cloud.particles, field_name)
    if cloud.concentrations is not None:
        arrays['concentrations'] = np.asarray(cloud.concentrations, dtype=float)

    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype='<f8').tobytes()
        entries.append({'name': name, 'shape': list(np.shape(arr)), 'offset': offset,
                        'nbytes': len(data)})
        blobs.append(data)
        offset += len(data)
    payload = b''.join(blobs)
    header = {
        'format_version': FORMAT_VERSION,
        'arrays': entries,
        'payload_sha256': hashlib.sha256(payload).hexdigest(),
        'kappa': cloud.kappa,
        'n_seen': cloud.n_seen,
        'log_evidence': cloud.log_evidence,
        'batch': cloud.batch,
        'spec': cloud.spec.to_dict(),
        'trace': cloud.trace,
        'config': None if config is None else _portable_config(config),
        'names': None if names is None else list(names),
        'extra': extra or {},
    }
    text = json.dumps(_jsonable(header), sort_keys=True, separators=(',', ':'),
                      allow_nan=False).encode('utf-8')
    pad = (-(_PREFIX.size + len(text))) % _ALIGN
    text += b' ' * pad
    blob = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(text)) + text + payload
    with open(path, 'wb') as fp:
        fp.write(blob)
    return blob


class Archive:
    """Contents of a posterior archive: cloud, data, config and metadata."""

    def __init__(self, cloud, grid, spectra, config, names, extra, header):
        self.cloud = cloud
        self.grid = grid
        self.spectra = spectra
        self.config = config
        self.names = names
        self.extra = extra
        self.header = header


def read_archive(path):
    """
    Read an archive written by :func:`write_archive`.

    Raises
    ------
    ArchiveError
        On a wrong magic number, unsupported version, truncated or corrupted
        content.

    """
    try:
        with open(path, 'rb') as fp:
            blob = fp.read()
    except OSError as exc:
        raise ArchiveError(f'{path}: cannot read archive ({exc})') from exc
    if len(blob) < _PREFIX.size:
        raise ArchiveError(f'{path}: truncated archive')
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ArchiveError(f'{path}: not a posterior archive')
    if version != FORMAT_VERSION:
        raise ArchiveError(
            f'{path}: archive format version {version}, this software reads version {FORMAT_VERSION}'
        )
    start = _PREFIX.size + hlen
    if len(blob) < start:
        raise ArchiveError(f'{path}: truncated header')
    try:
        header = json.loads(blob[_PREFIX.size:start].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f'{path}: corrupt header ({exc})') from exc
    if header.get('format_version') != version:
        raise ArchiveError(f'{path}: header and prefix disagree on the format version')
    payload = blob[start:]
    if hashlib.sha256(payload).hexdigest() != header.get('payload_sha256'):
        raise ArchiveError(f'{path}: array block is truncated or corrupted')

    try:
        arrays = {}
        for entry in header['arrays']:
            lo, size = entry['offset'], entry['nbytes']
            raw = np.frombuffer(payload, dtype='<f8', count=size // 8, offset=lo)
            arrays[entry['name']] = raw.astype(float).reshape(entry['shape'])
        particles = Particle(*(arrays[f'particles.{f}'] for f in Particle.FIELDS))
        spec = PriorSpec.from_dict(header['spec'])
        cloud = ParticleCloud(
            particles=particles, weights=arrays['weights'], loglik=arrays['loglik'],
            logprior=arrays['logprior'], kappa=header['kappa'], n_seen=header['n_seen'],
            log_evidence=header['log_evidence'], batch=header['batch'], spec=spec,
            concentrations=arrays.get('concentrations'), trace=header['trace'],
        )
        config = None if header['config'] is None else SmcConfig(**header['config'])
    except (KeyError, TypeError, ValueError) as exc:
        raise ArchiveError(f'{path}: inconsistent archive contents ({exc})') from exc
    return Archive(cloud, arrays['grid'], arrays['spectra'], config, header['names'],
                   header['extra'], header)
