import logging
from typing import Callable, Optional, Union

from .errors import SightlineError, ProtocolError
from .protocol import Message, REQUEST_TYPES, manifest_reply, data_reply, error_reply
from .registry import RegistryStore, NotModified

Handler = Callable[[Message], Message]


class Interface:
    """The message handler. It produces reply Messages for request Messages."""

    def __init__(self, handlers: dict[str, Handler] = None, generic: Handler = None, fallback: Handler = None,
                 desc: str = None):
        r"""
        :param handlers: a type-handler dict, e.g. {'FETCH': func}
        :param generic: the handler used if no handler matches the request type
        :param fallback: function to call when an unexpected Exception is raised during processing requests,
            its return value will be the final reply
        :param desc: description about the interface. It will show instead of default message when calling __repr__
        """
        for kind, handler in (handlers or {}).items():
            setattr(self, kind.lower(), handler)
        if generic is not None:
            self.generic = generic
        if fallback is not None:
            self.fallback = fallback
        self.desc = desc

    def _select_handler(self, request: Message) -> Handler:
        if request.type in REQUEST_TYPES and self.has_handler(request.type):
            return getattr(self, request.type.lower())
        return self.generic

    def has_handler(self, kind: str) -> bool:
        return callable(getattr(self, kind.lower(), None))

    def find_handlers(self) -> tuple[str, ...]:
        return tuple(k for k in REQUEST_TYPES if self.has_handler(k))

    def process(self, request: Message) -> Message:
        """
        Let the target handler process the request and return the reply\n
        Domain errors become ERROR replies, anything else goes through the fallback
        """
        handler = self._select_handler(request)
        try:
            return handler(request)
        except SightlineError as e:
            logging.info(f'{request} rejected by {self}: {type(e).__name__}: {e}')
            return error_reply(e)
        except Exception:
            logging.warning(f'Exception detected during processing {request} with {self}. '
                            f'Using fallback.', exc_info = True)
            return self.fallback(request)

    def generic(self, request: Message) -> Message:
        logging.warning(f'message type {request.type} is not handled by {self}, sending ERROR reply.')
        return error_reply(ProtocolError(f'unsupported message type {request.type}'))

    @staticmethod
    def fallback(request: Message) -> Message:
        logging.warning(f'Sending default fallback reply for {request}')
        return error_reply(SightlineError('internal server error'))

    def __call__(self, *args, **kwargs):
        return self.process(*args, **kwargs)

    def __repr__(self) -> str:
        template = self.__class__.__name__ + '[{}]'
        return template.format(self.desc or '|'.join(self.find_handlers()))


def _field(request: Message, name: str, kind: type, required: bool = True) -> Optional[Union[str, int, float]]:
    value = request.header.get(name)
    if value is None:
        if required:
            raise ProtocolError(f'{request.type} needs "{name}"')
        return None
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ProtocolError(f'"{name}" must be {kind.__name__}')
    return value


class RegistryInterface(Interface):
    """
    Serves PUBLISH, LOOKUP and FETCH against a RegistryStore.\n
    PUBLISH  -> MANIFEST | ERROR RegionUnknown, RegionMismatch, CorruptModel
    LOOKUP   -> MANIFEST | ERROR OutOfCoverage (also for lat/lon off the globe), NoModelPublished
    FETCH    -> DATA     | ERROR RegionUnknown, VersionUnknown, NoModelPublished
    Missing or mistyped header fields give ERROR ProtocolError.
    """

    def __init__(self, store: RegistryStore, **kwargs):
        self.store = store
        super().__init__(**kwargs)

    def publish(self, request: Message) -> Message:
        return manifest_reply(self.store.publish_model(_field(request, 'region_id', str), request.payload))

    def lookup(self, request: Message) -> Message:
        manifest = self.store.lookup_region(_field(request, 'lat', float), _field(request, 'lon', float),
                                            _field(request, 'current_region', str, required = False))
        return manifest_reply(manifest)

    def fetch(self, request: Message) -> Message:
        manifest, blob = self.store.fetch_model(_field(request, 'region_id', str),
                                                _field(request, 'version', int, required = False),
                                                _field(request, 'if_hash', str, required = False))
        return data_reply(manifest, None if blob is NotModified else blob)


__all__ = ['Interface', 'RegistryInterface', 'Handler']
