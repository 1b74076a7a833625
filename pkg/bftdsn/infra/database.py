from __future__ import annotations

import logging
from pathlib import Path
from tempfile import NamedTemporaryFile

from bftdsn.core.codec import FRAME_HEADER, pack, unpack
from bftdsn.core.exceptions import ShapeError, StorageError
from bftdsn.core.ledger import LedgerConfig, LedgerState, apply_block, restore_state
from bftdsn.core.models import Block
from bftdsn.infra.settings import SettingsLoader

logger = logging.getLogger("bftdsn.sim.chain")


class ChainStore:
    """Append-only block log plus periodic state snapshots for one node.

    ``blocks.log`` holds packed blocks back to back (each frame carries its
    own length); ``snapshot.bin`` holds the latest packed ``LedgerState``.
    """

    def __init__(
        self,
        node_id: int,
        directory: Path | None = None,
        snapshot_every: int = 10,
    ) -> None:
        base = directory or SettingsLoader().resolve_path("CHAIN_DIR")
        self.directory = base / f"node-{node_id}"
        self.snapshot_every = snapshot_every
        self._ensure_storage()

    @property
    def log_path(self) -> Path:
        return self.directory / "blocks.log"

    @property
    def snapshot_path(self) -> Path:
        return self.directory / "snapshot.bin"

    def _ensure_storage(self) -> None:
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            self.log_path.touch(exist_ok=True)
        except OSError as exc:
            raise StorageError(str(self.directory), str(exc)) from exc

    def append(self, block: Block, state: LedgerState) -> None:
        with self.log_path.open("ab") as file:
            file.write(pack(block))
        if self.snapshot_every > 0 and state.height % self.snapshot_every == 0:
            self._atomic_write(self.snapshot_path, pack(state))

    def _atomic_write(self, path: Path, payload: bytes) -> None:
        with NamedTemporaryFile(
            mode="wb",
            delete=False,
            dir=str(path.parent),
            prefix=f"{path.name}.tmp.",
        ) as temp_file:
            temp_file.write(payload)
            temp_path = Path(temp_file.name)
        temp_path.replace(path)

    def blocks(self) -> list[Block]:
        raw = self.log_path.read_bytes()
        blocks: list[Block] = []
        position = 0
        while position + FRAME_HEADER <= len(raw):
            size = int.from_bytes(raw[position + 2 : position + FRAME_HEADER], "big")
            end = position + FRAME_HEADER + size
            if end > len(raw):
                logger.warning("truncated block frame at byte %s in %s", position, self.log_path)
                break
            blocks.append(unpack(raw[position:end]))
            position = end
        return blocks

    def snapshot(self, config: LedgerConfig) -> LedgerState | None:
        try:
            raw = self.snapshot_path.read_bytes()
        except FileNotFoundError:
            return None
        try:
            return restore_state(raw[FRAME_HEADER:], config)
        except ShapeError as exc:
            logger.warning("unreadable snapshot %s: %s", self.snapshot_path, exc)
            return None

    def replay(self, genesis: LedgerState) -> tuple[LedgerState, list[Block]]:
        """Rebuild the state from the newest snapshot and the blocks after it."""
        blocks = self.blocks()
        state = self.snapshot(genesis.config) or genesis
        if state.height > len(blocks):
            state = genesis
        for block in blocks[state.height :]:
            state = apply_block(state, block)
        return state, blocks
