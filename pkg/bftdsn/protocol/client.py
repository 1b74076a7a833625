"""Client side of put and get.

A client reads chain state through a gateway miner it trusts, submits its
STORE transaction to every miner, hands the file to a weight-random encoding
miner and waits for signed acknowledgements from the hosts. Retrieval goes
through a weight-random retrieval miner; a timeout or a file that does not
hash to its ID makes the client report that miner and try another one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

from bftdsn.core.codec import pack, unpack
from bftdsn.core.exceptions import EmptyFileError, FileNotFoundOnChainError, ShapeError
from bftdsn.core.fingerprint import Fingerprint, FingerprintParams, hf_compute, hf_encode
from bftdsn.core.galois_rs import build_generator
from bftdsn.core.ledger import LedgerState, compute_file_id
from bftdsn.core.models import (
    FileManifest,
    RetrieveReportPayload,
    StorePayload,
    Transaction,
    TxKind,
)
from bftdsn.core.utils import make_rng, short_hex, weighted_choice
from bftdsn.core.wts import SigningKey, signature_valid, signing_key
from bftdsn.infra.settings import SettingsLoader
from bftdsn.protocol.messages import (
    ChunkNack,
    EncoderNack,
    FileUpload,
    RetrieveRequest,
    RetrieveResponse,
    StorageAck,
    TxSubmit,
    ack_message,
)
from bftdsn.protocol.miner import MinerNode
from bftdsn.protocol.params import choose_params, retrieval_timeout_ms, split_file
from bftdsn.sim.netsim import Event, Network

logger = logging.getLogger("bftdsn.sim.protocol")


@dataclass(frozen=True)
class ClientConfig:
    put_timeout_ms: float
    max_put_tries: int = 4
    max_get_tries: int = 20

    @classmethod
    def from_settings(cls, **overrides: Any) -> "ClientConfig":
        settings = SettingsLoader()
        delta = float(settings.get("DELTA_MS"))
        interval = float(settings.get("BLOCK_INTERVAL_MS"))
        values: dict[str, Any] = {
            "put_timeout_ms": 12 * (interval + 4 * delta),
            "max_put_tries": settings.get_int("MAX_PUT_TRIES"),
            "max_get_tries": settings.get_int("MAX_GET_TRIES"),
        }
        values.update(overrides)
        return cls(**values)


def prepare_store(
    data: bytes, state: LedgerState, key: SigningKey
) -> tuple[Transaction, list[bytes]]:
    """STORE transaction for ``data`` under the current sector count."""
    if not data:
        raise EmptyFileError()
    params = choose_params(state.n)
    chunks = split_file(data, params)
    fp_params = state.config.fingerprint_params
    fingerprints = tuple(hf_compute(chunk, fp_params).value for chunk in chunks)
    payload = StorePayload(
        file_id=compute_file_id(fingerprints),
        fingerprints=fingerprints,
        chunk_size=len(chunks[0]),
        file_length=len(data),
        n=params.n,
    )
    return Transaction(TxKind.STORE, key.signer, payload).signed(key), chunks


def file_matches(data: bytes, manifest: FileManifest, params: FingerprintParams) -> bool:
    """Whether ``data`` re-chunks to the fingerprints behind the file ID."""
    if len(data) != manifest.file_length:
        return False
    padded = data + bytes(manifest.padding)
    size = manifest.chunk_size
    fingerprints = [
        hf_compute(padded[i * size : (i + 1) * size], params).value for i in range(manifest.k)
    ]
    return compute_file_id(fingerprints) == manifest.file_id


@dataclass
class PutSession:
    session: int
    data: bytes
    started_ms: float
    file_id: bytes = b""
    store_tx: Transaction | None = None
    n: int = 0
    f: int = 0
    fingerprints: tuple[int, ...] = ()
    encoder: int | None = None
    tried_encoders: list[int] = field(default_factory=list)
    tries: int = 0
    acks: dict[int, int] = field(default_factory=dict)
    done: bool = False
    degraded: bool = False
    failed: bool = False
    finished_ms: float | None = None
    timer: Event | None = None

    @property
    def min_acks(self) -> int:
        """Acknowledgements that still settle the put as degraded."""
        return self.n - self.f

    @property
    def settled(self) -> bool:
        return self.done or self.failed

    @property
    def latency_ms(self) -> float | None:
        if self.finished_ms is None:
            return None
        return self.finished_ms - self.started_ms


@dataclass
class RetrievalSession:
    session: int
    file_id: bytes
    manifest: FileManifest
    started_ms: float
    retrieval_miner: int | None = None
    tried: list[int] = field(default_factory=list)
    tries: int = 0
    deadline_ms: float = 0.0
    data: bytes | None = None
    done: bool = False
    failed: bool = False
    reason: str = ""
    finished_ms: float | None = None
    timer: Event | None = None

    @property
    def settled(self) -> bool:
        return self.done or self.failed

    @property
    def latency_ms(self) -> float | None:
        if self.finished_ms is None:
            return None
        return self.finished_ms - self.started_ms


class Client:
    def __init__(
        self,
        client_id: int,
        network: Network,
        gateway: MinerNode,
        config: ClientConfig,
        seed: int,
    ) -> None:
        self.client_id = client_id
        self.network = network
        self.gateway = gateway
        self.config = config
        self.key = signing_key(gateway.pp, client_id)
        self.rng = make_rng(seed, "client", client_id)
        self.puts: dict[int, PutSession] = {}
        self.gets: dict[int, RetrievalSession] = {}
        self.reports_submitted = 0
        self._seq = 0
        self._handlers = {
            StorageAck: self._on_ack,
            ChunkNack: self._on_chunk_nack,
            EncoderNack: self._on_encoder_nack,
            RetrieveResponse: self._on_retrieve_response,
        }
        network.register(client_id, self.receive)

    @property
    def state(self) -> LedgerState:
        return self.gateway.state

    def receive(self, sender: int, payload: bytes) -> None:
        try:
            message = unpack(payload)
        except ShapeError as exc:
            logger.warning("client=%s undecodable frame from %s: %s", self.client_id, sender, exc)
            return
        handler = self._handlers.get(type(message))
        if handler is not None:
            handler(sender, message)

    def _send(self, receiver: int, message: Any) -> None:
        self.network.send(self.client_id, receiver, pack(message))

    def _submit(self, tx: Transaction) -> None:
        frame = pack(TxSubmit(tx))
        for miner in self.gateway.peers:
            self.network.send(self.client_id, miner, frame)

    def _pick(self, tried: list[int]) -> int | None:
        weights = self.state.live_weights()
        chosen = weighted_choice(self.rng, weights, exclude=tried)
        if chosen is None:
            tried.clear()
            chosen = weighted_choice(self.rng, weights)
        return chosen

    # ------------------------------------------------------------------ put

    def client_put(self, data: bytes) -> PutSession:
        if not data:
            raise EmptyFileError()
        self._seq += 1
        session = PutSession(session=self._seq, data=bytes(data), started_ms=self.network.now)
        self.puts[session.session] = session
        self._prepare(session)
        self._dispatch(session)
        return session

    def _prepare(self, session: PutSession) -> None:
        tx, _ = prepare_store(session.data, self.state, self.key)
        body: StorePayload = tx.payload
        session.store_tx = tx
        session.file_id = body.file_id
        session.fingerprints = body.fingerprints
        session.n = body.n
        session.f = body.n - len(body.fingerprints)
        session.acks.clear()
        self._submit(tx)
        logger.debug(
            "client=%s put file=%s bytes=%s n=%s",
            self.client_id,
            short_hex(body.file_id),
            len(session.data),
            body.n,
        )

    def _dispatch(self, session: PutSession) -> None:
        if session.settled:
            return
        if session.tries >= self.config.max_put_tries:
            self._settle_put(session)
            return
        if self.state.manifest(session.file_id) is None and session.n != self.state.n:
            self._prepare(session)
        encoder = self._pick(session.tried_encoders)
        if encoder is None:
            self._settle_put(session)
            return
        session.tries += 1
        session.encoder = encoder
        session.tried_encoders.append(encoder)
        self._send(encoder, FileUpload(session.file_id, session.data, self.client_id, session.session))

        if session.timer is not None:
            self.network.cancel_timer(session.timer)
        policy = self.network.policy
        transfer = retrieval_timeout_ms(
            policy.delta_ms, policy.bandwidth_bytes_per_ms, 3 * len(session.data)
        )
        attempt = session.tries
        session.timer = self.network.set_timer(
            self.client_id,
            self.config.put_timeout_ms + transfer,
            lambda: self._on_put_timeout(session, attempt),
        )

    def _on_put_timeout(self, session: PutSession, attempt: int) -> None:
        if session.settled or attempt != session.tries:
            return
        logger.info(
            "client=%s put file=%s timed out with %s/%s acks (try %s)",
            self.client_id,
            short_hex(session.file_id),
            len(session.acks),
            session.n,
            session.tries,
        )
        self._dispatch(session)

    def _settle_put(self, session: PutSession) -> None:
        if session.settled:
            return
        if session.n and len(session.acks) >= session.min_acks:
            session.done = True
            session.degraded = len(session.acks) < session.n
        else:
            session.failed = True
        session.finished_ms = self.network.now
        if session.timer is not None:
            self.network.cancel_timer(session.timer)
        logger.info(
            "client=%s put file=%s %s acks=%s/%s tries=%s",
            self.client_id,
            short_hex(session.file_id),
            "failed" if session.failed else ("degraded" if session.degraded else "done"),
            len(session.acks),
            session.n,
            session.tries,
        )

    def _session_for(self, session_id: int, file_id: bytes) -> PutSession | None:
        session = self.puts.get(session_id)
        if session is None or session.settled or session.file_id != file_id:
            return None
        return session

    def _on_ack(self, sender: int, ack: StorageAck) -> None:
        session = self._session_for(ack.session, ack.file_id)
        if session is None or ack.host != sender:
            return
        message = ack_message(ack.file_id, ack.index, ack.sector_id, ack.host)
        if not signature_valid(self.gateway.pp, ack.host, message, ack.signature):
            return
        manifest = self.state.manifest(ack.file_id)
        if manifest is not None and manifest.sector_of(ack.index) != ack.sector_id:
            return
        session.acks[ack.index] = ack.host
        if len(session.acks) >= session.n:
            session.done = True
            session.finished_ms = self.network.now
            if session.timer is not None:
                self.network.cancel_timer(session.timer)
            logger.debug(
                "client=%s put file=%s complete in %.3f ms",
                self.client_id,
                short_hex(session.file_id),
                session.latency_ms,
            )

    def nack_valid(self, session: PutSession, nack: ChunkNack) -> bool:
        """A NACK counts only if the encoder really signed a wrong chunk."""
        chunk = nack.evidence
        if chunk.file_id != session.file_id or chunk.index != nack.index:
            return False
        if not signature_valid(
            self.gateway.pp, chunk.encoder, chunk.signing_bytes(), chunk.signature
        ):
            return False
        params = self.state.config.fingerprint_params
        data = [Fingerprint(value, params.point) for value in session.fingerprints]
        expected = hf_encode(data, build_generator(len(data), session.f))
        if not 1 <= chunk.index <= len(expected):
            return False
        if len(chunk.payload) != session.store_tx.payload.chunk_size:
            return True
        return hf_compute(chunk.payload, params).value != expected[chunk.index - 1].value

    def _on_chunk_nack(self, sender: int, nack: ChunkNack) -> None:
        session = self._session_for(nack.session, nack.file_id)
        if session is None or nack.evidence.encoder != session.encoder:
            return
        if not self.nack_valid(session, nack):
            logger.warning("client=%s ignored unverifiable NACK from %s", self.client_id, sender)
            return
        logger.info(
            "client=%s encoder=%s sent a bad chunk, re-selecting",
            self.client_id,
            session.encoder,
        )
        self._dispatch(session)

    def _on_encoder_nack(self, sender: int, nack: EncoderNack) -> None:
        session = self._session_for(nack.session, nack.file_id)
        if session is None or nack.encoder != session.encoder or sender != nack.encoder:
            return
        logger.info("client=%s encoder=%s refused: %s", self.client_id, sender, nack.reason)
        self._dispatch(session)

    # ------------------------------------------------------------------ get

    def client_get(self, file_id: bytes) -> RetrievalSession:
        manifest = self.state.manifest(file_id)
        if manifest is None:
            raise FileNotFoundOnChainError(short_hex(file_id))
        self._seq += 1
        session = RetrievalSession(
            session=self._seq,
            file_id=file_id,
            manifest=manifest,
            started_ms=self.network.now,
        )
        self.gets[session.session] = session
        self._request(session)
        return session

    def _request(self, session: RetrievalSession) -> None:
        if session.settled:
            return
        if session.tries >= self.config.max_get_tries:
            self._finish_get(session, failed=True, reason="too-many-tries")
            return
        miner = self._pick(session.tried)
        if miner is None:
            self._finish_get(session, failed=True, reason="no-miners")
            return
        session.tries += 1
        session.retrieval_miner = miner
        session.tried.append(miner)
        self._send(miner, RetrieveRequest(session.file_id, self.client_id, session.session))

        manifest = session.manifest
        policy = self.network.policy
        timeout = retrieval_timeout_ms(
            policy.delta_ms,
            policy.bandwidth_bytes_per_ms,
            manifest.padded_length + manifest.stored_bytes,
        )
        session.deadline_ms = self.network.now + timeout
        if session.timer is not None:
            self.network.cancel_timer(session.timer)
        attempt = session.tries
        session.timer = self.network.set_timer(
            self.client_id, timeout, lambda: self._on_get_timeout(session, attempt)
        )

    def _on_get_timeout(self, session: RetrievalSession, attempt: int) -> None:
        if session.settled or attempt != session.tries:
            return
        self._reject_miner(session, "timeout")

    def _reject_miner(self, session: RetrievalSession, reason: str) -> None:
        logger.info(
            "client=%s retrieval miner=%s failed file=%s: %s",
            self.client_id,
            session.retrieval_miner,
            short_hex(session.file_id),
            reason,
        )
        self._report(session, reason)
        self._request(session)

    def _report(self, session: RetrievalSession, reason: str) -> None:
        payload = RetrieveReportPayload(
            file_id=session.file_id,
            retrieval_miner=session.retrieval_miner,
            session=(session.session << 16) | session.tries,
            reason=reason,
        )
        self.reports_submitted += 1
        self._submit(Transaction(TxKind.RETRIEVE_REPORT, self.client_id, payload).signed(self.key))

    def _on_retrieve_response(self, sender: int, response: RetrieveResponse) -> None:
        session = self.gets.get(response.session)
        if session is None or session.settled or response.file_id != session.file_id:
            return
        if sender != session.retrieval_miner:
            return
        if not response.ok:
            if response.reason == "not-found" and self.state.manifest(session.file_id) is None:
                self._finish_get(session, failed=True, reason="not-found")
                return
            self._reject_miner(session, response.reason or "refused")
            return
        if not file_matches(response.data, session.manifest, self.state.config.fingerprint_params):
            self._reject_miner(session, "wrong-file")
            return
        session.data = response.data
        self._finish_get(session, failed=False)

    def _finish_get(self, session: RetrievalSession, failed: bool, reason: str = "") -> None:
        session.done = not failed
        session.failed = failed
        session.reason = reason
        session.finished_ms = self.network.now
        if session.timer is not None:
            self.network.cancel_timer(session.timer)
        logger.debug(
            "client=%s get file=%s %s tries=%s",
            self.client_id,
            short_hex(session.file_id),
            "failed: " + reason if failed else "done",
            session.tries,
        )
