import csv
import hashlib
import io
import ipaddress
import json
import math
import os
import pathlib
import socket
import tempfile
from typing import Iterable, Sequence, Union

import numpy as np

PathLike = Union[str, os.PathLike]


def fsum(values: Iterable[float]) -> float:
    """Correctly rounded sum, independent of the order of values"""
    return math.fsum(np.asarray(values, dtype = np.float64).ravel().tolist())


def digest(data: bytes) -> bytes:
    """32-byte SHA-256 digest"""
    return hashlib.sha256(data).digest()


def hex_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj) -> str:
    """JSON with sorted keys so that equal objects always serialize to equal bytes"""
    return json.dumps(obj, sort_keys = True, ensure_ascii = False, separators = (',', ':'))


def atomic_write(path: PathLike, data: Union[bytes, str]):
    """Write a file through a temporary sibling and os.replace, readers never see a partial file"""
    path = pathlib.Path(path)
    path.parent.mkdir(parents = True, exist_ok = True)
    if isinstance(data, str):
        data = data.encode('utf-8')
    fd, tmp = tempfile.mkstemp(dir = path.parent, prefix = f'.{path.name}.')
    try:
        with os.fdopen(fd, 'wb') as fp:
            fp.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]):
    """Write a CSV table with '\\n' line endings"""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator = '\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(c) for c in row])
    atomic_write(path, buf.getvalue())


def format_cell(value) -> str:
    if value is None:
        return 'n/a'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_socket(conn: socket.socket) -> str:
    if getattr(conn, '_closed'):
        return '[CLOSED]'
    try:
        return f'{conn.getpeername()}[{conn.fileno()}]'
    except OSError:  # server socket
        return f'{conn.getsockname()}[{conn.fileno()}][SERVER]'


def recv_exact(conn: socket.socket, size: int, readed: bytes = b'') -> bytes:
    """Receive exactly `size` bytes (including the already readed part). Returns less only if the peer closed"""
    chunks = [readed]
    left = size - len(readed)
    while left > 0:
        current_recv = conn.recv(min(left, 65536))
        if not current_recv:
            break
        chunks.append(current_recv)
        left -= len(current_recv)
    return b''.join(chunks)


def get_socket_family(address):
    if address[0] == '':
        return socket.AF_INET6 if socket.has_ipv6 else socket.AF_INET
    try:
        addr = ipaddress.ip_address(address[0])
    except ValueError:  # address might be a domain name, return the better one
        return socket.AF_INET6 if socket.has_ipv6 else socket.AF_INET
    return socket.AF_INET if isinstance(addr, ipaddress.IPv4Address) else socket.AF_INET6


def parse_address(text: str, default_port: int = 7070) -> tuple[str, int]:
    """Parse 'host:port', '[v6]:port', 'host' or ':port'"""
    text = text.strip()
    if text.startswith('['):
        host, _, rest = text[1:].partition(']')
        port = rest.removeprefix(':')
        return host, int(port) if port else default_port
    if text.count(':') == 1:
        host, port = text.split(':')
        return host, int(port) if port else default_port
    return text, default_port


__all__ = ['PathLike', 'fsum', 'digest', 'hex_digest', 'canonical_json', 'atomic_write', 'write_csv', 'format_cell',
           'format_socket', 'recv_exact', 'get_socket_family', 'parse_address']
