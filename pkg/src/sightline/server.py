import logging
import socket
import threading
import time
from typing import Optional

from . import utility, backend
from .errors import ProtocolError, error_class
from .interfaces import Interface, RegistryInterface
from .protocol import Message, read_message, publish_request, lookup_request, fetch_request
from .registry import RegistryStore
from .structs import ModelManifest, Tiling


def create_server_conn(server_addr: tuple, max_listen, reuse_port, reuse_addr, dualstack, timeout):
    if dualstack is None:
        dualstack = utility.get_socket_family(server_addr) == socket.AF_INET6 and socket.has_dualstack_ipv6()
    if reuse_port is None:
        reuse_port = hasattr(socket, 'SO_REUSEPORT')
    conn = socket.create_server(
        server_addr, family = utility.get_socket_family(server_addr),
        backlog = max_listen, reuse_port = reuse_port, dualstack_ipv6 = dualstack)
    conn.settimeout(timeout)
    conn.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, reuse_addr)
    return conn


class RegistryServer:
    """The model registry server. It serves framed PUBLISH, LOOKUP and FETCH requests from a RegistryStore"""

    def __init__(self, store: RegistryStore, server_addr: tuple[str, int] = ('127.0.0.1', 7070), *,
                 max_listen: int = 0, timeout: int = None, max_worker: int = None, backend_flag: str = 'thread',
                 reuse_port: bool = None, reuse_addr: bool = True, dualstack: bool = None,
                 keep_alive_timeout: int = 75, sock: socket.socket = None, interface: Interface = None):
        """
        :param store: the registry the server answers from
        :param server_addr: the address of server (host, port). Port 0 picks a free port
        :param max_listen: max size of listener queue (0 for default value)
        :param timeout: timeout for server socket
        :param max_worker: max size of worker queue
        :param backend_flag: 'single' serves requests inline, 'thread' with a thread pool
        :param keep_alive_timeout: idle seconds before a client connection is closed
        :param reuse_port: whether server socket reuse port (set SO_REUSEPORT to 1)
        :param reuse_addr: whether server socket reuse address (set SO_REUSEADDR to 1)
        :param dualstack: whether server use IPv6 dualstack if possible
        :param sock: a given socket
        :param interface: handler replacing the default RegistryInterface
        """
        self.store = store
        self._sock = sock or create_server_conn(server_addr, max_listen, reuse_port, reuse_addr, dualstack, timeout)
        # not to use server_addr directly since server_addr could contain irregular address or port number
        self.addr = self._sock.getsockname()

        self.runner = None
        self.interface = interface or RegistryInterface(store, desc = 'registry')
        self.backend_cls = backend.get_backend_class(backend_flag)
        self.connection_pool = backend.ConnectionPool(server_sock = self._sock, timeout = keep_alive_timeout)
        self.backend = self.backend_cls(
            interface = self.interface, conn_pool = self.connection_pool, max_worker = max_worker)

    def run(self, block: bool = True, quiet: bool = False):
        """
        start the server\n
        :param block: if it is True, this method will be blocked until the server shutdown or critical errors occoured
        :param quiet: whether server prints greeting message
        """
        logging.info(f'Listening request on {self.addr}')
        self.runner = threading.Thread(target = self.backend.run, daemon = True)
        self.runner.start()
        if not quiet:
            print(f'Registry running on {self._sock.getsockname()}. Press Ctrl+C to quit.')

        if not block:
            return
        while self.runner.is_alive():
            try:
                time.sleep(1)
            except KeyboardInterrupt:
                self.terminate()
                return

    def interrupt(self, timeout: float = 30):
        """
        Stop the server temporarily. Call run() to start the server again.\n
        :param timeout: max time for waiting single active session
        """
        if not self.is_running:
            logging.warning('The server has already stopped, interrupting it will not take any effects.')
            return

        logging.info(f'Interrupting {self}')
        self.backend.interrupt()
        if self.runner.is_alive():
            logging.info('Waiting for backend...')
            self.runner.join(timeout)
        logging.info(f'{self} interrupted successfully.')

    def terminate(self):
        """
        Stop the server permanently. After running this method, the server cannot start again.
        """
        if not self.is_running:
            logging.warning('The server has already stopped.')
            return

        logging.info(f'Terminating {self}')
        self.backend.terminate()
        if self.runner.is_alive():
            logging.info('Terminating backend...')
            self.runner.join(1)  # leave 1 sec for backend to complete termination
        logging.info(f'{self} closed successfully.')

    @property
    def is_running(self):
        return self.backend.is_running

    def __enter__(self):
        self.run(block = False, quiet = True)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.is_running:
            self.terminate()

    def __del__(self):
        if hasattr(self, 'backend') and self.is_running:  # prevent crash when it is called as init doesn`t finish
            self.terminate()

    def __repr__(self) -> str:
        return f'RegistryServer[{"running" if self.is_running else "closed"} on {self.addr}]'


def serve_registry(tiling: Tiling, address: tuple[str, int], data_dir: str = None, retention: int = 3,
                   **kwargs) -> RegistryServer:
    """Build a store over `tiling` and a server in front of it. The server is not started"""
    return RegistryServer(RegistryStore(tiling, data_dir, retention), address, **kwargs)


class RegistryClient:
    """
    Blocking client of the registry server. One connection is reused for all calls.\n
    ERROR replies are raised again as the named sightline error.
    """

    def __init__(self, address: tuple[str, int], timeout: Optional[float] = 10.0):
        self.address = address
        self.timeout = timeout
        self._conn: Optional[socket.socket] = None
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        if self._conn is None:
            self._conn = socket.create_connection(self.address, timeout = self.timeout)
        return self._conn

    def request(self, message: Message) -> Message:
        """Send one request frame and return the reply. ERROR replies raise"""
        with self._lock:
            conn = self._connect()
            try:
                conn.sendall(message.generate())
                reply = read_message(conn)
            except (OSError, ProtocolError):
                self.close()
                raise
            if reply is None:
                self.close()
                raise ProtocolError('server closed the connection without a reply')
        if reply.type == 'ERROR':
            cls = error_class(reply.header.get('error', ''))
            err = cls.__new__(cls)  # errors with custom __init__ signatures are rebuilt from the message only
            Exception.__init__(err, reply.header.get('message', ''))
            raise err
        return reply

    def publish(self, region_id: str, blob: bytes) -> ModelManifest:
        return self._manifest(self.request(publish_request(region_id, blob)), 'MANIFEST')

    def lookup(self, lat: float, lon: float, current_region: str = None) -> ModelManifest:
        return self._manifest(self.request(lookup_request(lat, lon, current_region)), 'MANIFEST')

    def fetch(self, region_id: str, version: int = None,
              if_hash: str = None) -> tuple[ModelManifest, Optional[bytes]]:
        """Return the manifest and the blob. The blob is None when if_hash matched"""
        reply = self.request(fetch_request(region_id, version, if_hash))
        manifest = self._manifest(reply, 'DATA')
        return manifest, None if reply.header.get('not_modified') else reply.payload

    @staticmethod
    def _manifest(reply: Message, expected: str) -> ModelManifest:
        if reply.type != expected:
            raise ProtocolError(f'expected a {expected} reply, got {reply.type}')
        return ModelManifest.from_dict(reply.header)

    def close(self):
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def __repr__(self) -> str:
        return f'RegistryClient[{self.address}]'


__all__ = ['RegistryServer', 'RegistryClient', 'serve_registry', 'create_server_conn']
