"""Connectionless transport endpoints.

An endpoint sends fire-and-forget datagrams to transport addresses and hands
every received datagram to a single registered callback. Two adapters exist:
a real UDP socket and the in-memory simulator adapter (created by the
simulator itself). The receive callback may run on any thread; its only job
is to enqueue into the owning node's serialized event queue.
"""

from __future__ import annotations

import socket
import threading
from typing import Callable, Optional, Protocol

from ..errors import BindFailure, ConfigError
from .envelope import AddressKind, TransportAddress

ReceiveCallback = Callable[[TransportAddress, bytes], None]

MAX_DATAGRAM = 65507  # UDP payload ceiling; one envelope per datagram


class Endpoint(Protocol):
    def send(self, addr: TransportAddress, data: bytes) -> None: ...

    def set_receive_callback(self, cb: ReceiveCallback) -> None: ...

    def local_address(self) -> TransportAddress: ...

    def close(self) -> None: ...


class UdpEndpoint:
    """One envelope per UDP datagram over a bound IPv4 socket."""

    def __init__(self, bind_host: str = "0.0.0.0", bind_port: int = 0):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._sock.bind((bind_host, bind_port))
        except OSError as exc:
            self._sock.close()
            raise BindFailure(f"{bind_host}:{bind_port}: {exc}") from exc
        self._cb: Optional[ReceiveCallback] = None
        self._closed = False
        self._thread = threading.Thread(target=self._recv_loop, daemon=True)
        self._thread.start()

    def send(self, addr: TransportAddress, data: bytes) -> None:
        if addr.kind != AddressKind.UDP:
            return  # unreachable medium: silently dropped, connectionless contract
        try:
            self._sock.sendto(data, addr.as_udp())
        except OSError:
            pass

    def set_receive_callback(self, cb: ReceiveCallback) -> None:
        self._cb = cb

    def local_address(self) -> TransportAddress:
        host, port = self._sock.getsockname()
        if host == "0.0.0.0":
            host = "127.0.0.1"
        return TransportAddress.udp(host, port)

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass

    def _recv_loop(self) -> None:
        while not self._closed:
            try:
                data, (host, port) = self._sock.recvfrom(MAX_DATAGRAM)
            except OSError:
                return
            cb = self._cb
            if cb is not None:
                cb(TransportAddress.udp(host, port), data)


class SimAttachment(Protocol):
    """What a simulator must provide to open_endpoint(kind="sim", ...)."""

    def create_endpoint(self, node_index: int) -> Endpoint: ...


def open_endpoint(kind: str, config: dict) -> Endpoint:
    """Open a transport endpoint.

    kind "udp": config keys bind_host (default 0.0.0.0) and bind_port
    (default 0 = ephemeral). kind "sim": config keys network (a simulator
    exposing create_endpoint) and index (the node slot).
    """
    if kind == "udp":
        return UdpEndpoint(config.get("bind_host", "0.0.0.0"),
                           config.get("bind_port", 0))
    if kind == "sim":
        try:
            network: SimAttachment = config["network"]
            index = config["index"]
        except KeyError as exc:
            raise ConfigError(f"sim endpoint config missing {exc}") from exc
        return network.create_endpoint(index)
    raise ConfigError(f"unknown endpoint kind {kind!r}")
