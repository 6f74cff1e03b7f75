"""
Framed request/response protocol of the model registry.\n
frame := u32 big-endian body length | body
body  := u32 big-endian header length | UTF-8 JSON header | raw payload
The header always carries "type": PUBLISH, LOOKUP, FETCH requests, MANIFEST, DATA, ERROR replies.
"""
import json
import socket
import struct
from dataclasses import dataclass, field
from typing import Literal, Optional

from .errors import ProtocolError, FrameTooLarge, SightlineError
from .structs import ModelManifest
from .utility import recv_exact

PREFIX = struct.Struct('>I')
PREFIX_SIZE = PREFIX.size
MAX_FRAME_SIZE = 64 * 1024 * 1024

MessageType = Literal['PUBLISH', 'LOOKUP', 'FETCH', 'MANIFEST', 'DATA', 'ERROR']
REQUEST_TYPES = ('PUBLISH', 'LOOKUP', 'FETCH')
REPLY_TYPES = ('MANIFEST', 'DATA', 'ERROR')


@dataclass
class Message:
    type: MessageType
    header: dict = field(default_factory = dict)
    payload: bytes = b''

    def generate(self) -> bytes:
        """Encode the message as one frame"""
        head = json.dumps({**self.header, 'type': self.type}, sort_keys = True).encode('utf-8')
        body = PREFIX.pack(len(head)) + head + self.payload
        if len(body) > MAX_FRAME_SIZE:
            raise FrameTooLarge(f'frame of {len(body)} bytes exceeds {MAX_FRAME_SIZE}')
        return PREFIX.pack(len(body)) + body

    @staticmethod
    def parse(body: bytes) -> 'Message':
        """Decode a frame body (without its length prefix)"""
        if len(body) < PREFIX_SIZE:
            raise ProtocolError('frame body too short')
        (head_len,) = PREFIX.unpack_from(body)
        if PREFIX_SIZE + head_len > len(body):
            raise ProtocolError('header length exceeds frame')
        try:
            header = json.loads(body[PREFIX_SIZE:PREFIX_SIZE + head_len].decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ProtocolError(f'bad header: {e}') from None
        if not isinstance(header, dict) or header.get('type') not in REQUEST_TYPES + REPLY_TYPES:
            raise ProtocolError(f'unknown message type in {header!r}')
        kind = header.pop('type')
        return Message(kind, header, body[PREFIX_SIZE + head_len:])

    def __repr__(self) -> str:
        return f'Message[{self.type}, {len(self.payload)} bytes]'


def frame_length(prefix: bytes) -> int:
    if len(prefix) != PREFIX_SIZE:
        raise ProtocolError('connection closed inside a length prefix')
    (length,) = PREFIX.unpack(prefix)
    if length > MAX_FRAME_SIZE:
        raise FrameTooLarge(f'frame of {length} bytes exceeds {MAX_FRAME_SIZE}')
    return length


def read_message(conn: socket.socket, readed: bytes = b'') -> Optional[Message]:
    """Read one framed message. Returns None if the peer closed before sending anything"""
    prefix = recv_exact(conn, PREFIX_SIZE, readed)
    if not prefix:
        return None
    length = frame_length(prefix)
    body = recv_exact(conn, length)
    if len(body) != length:
        raise ProtocolError(f'connection closed after {len(body)} of {length} bytes')
    return Message.parse(body)


def publish_request(region_id: str, blob: bytes) -> Message:
    return Message('PUBLISH', {'region_id': region_id}, blob)


def lookup_request(lat: float, lon: float, current_region: str = None) -> Message:
    return Message('LOOKUP', {'lat': lat, 'lon': lon, 'current_region': current_region})


def fetch_request(region_id: str, version: int = None, if_hash: str = None) -> Message:
    return Message('FETCH', {'region_id': region_id, 'version': version, 'if_hash': if_hash})


def manifest_reply(manifest: ModelManifest) -> Message:
    return Message('MANIFEST', manifest.to_dict())


def data_reply(manifest: ModelManifest, blob: Optional[bytes]) -> Message:
    """DATA reply. A None blob marks the NotModified outcome and carries no payload"""
    return Message('DATA', {**manifest.to_dict(), 'not_modified': blob is None}, blob or b'')


def error_reply(error: Exception) -> Message:
    name = type(error).__name__ if isinstance(error, SightlineError) else 'SightlineError'
    return Message('ERROR', {'error': name, 'message': str(error)})


__all__ = ['PREFIX', 'PREFIX_SIZE', 'MAX_FRAME_SIZE', 'REQUEST_TYPES', 'REPLY_TYPES', 'Message', 'frame_length',
           'read_message', 'publish_request', 'lookup_request', 'fetch_request', 'manifest_reply', 'data_reply',
           'error_reply']
