"""
Blockchain manager: UTXO state, block merge on forks, deposit accounting.

A conflicting block is never discarded. Its transactions are merged; inputs
that are no longer spendable are funded from the deposit and remembered, and
refunded as soon as they become spendable again.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from config import GENESIS_COINS, TX_VALUE_RANGE
from signing import KeyPair, Pki, make_scheme
from utils import canonical_json

logger = logging.getLogger(__name__)

Account = int
UtxoRef = tuple  # (tx hash hex, output index)


class LedgerError(ValueError):
    pass


@dataclass(frozen=True)
class TxInput:
    ref: UtxoRef
    value: int


@dataclass(frozen=True)
class TxOutput:
    account: Account
    value: int


@dataclass(frozen=True)
class Transaction:
    issuer: Account
    seq: int
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]
    signature: bytes = b""

    def body(self) -> dict:
        return {
            "issuer": self.issuer,
            "seq": self.seq,
            "inputs": [[i.ref[0], i.ref[1], i.value] for i in self.inputs],
            "outputs": [[o.account, o.value] for o in self.outputs],
        }

    @property
    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.body())).hexdigest()

    def to_json(self) -> dict:
        return {**self.body(), "sig": self.signature.hex()}

    @classmethod
    def from_json(cls, raw: dict) -> "Transaction":
        try:
            return cls(
                issuer=int(raw["issuer"]),
                seq=int(raw["seq"]),
                inputs=tuple(TxInput((str(h), int(i)), int(v)) for h, i, v in raw["inputs"]),
                outputs=tuple(TxOutput(int(a), int(v)) for a, v in raw["outputs"]),
                signature=bytes.fromhex(raw.get("sig", "")),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise LedgerError(f"malformed transaction: {e}") from None

    @property
    def total_in(self) -> int:
        return sum(i.value for i in self.inputs)

    @property
    def total_out(self) -> int:
        return sum(o.value for o in self.outputs)

    def signed(self, pki: Pki, key: KeyPair) -> "Transaction":
        return replace(self, signature=pki.scheme.sign_bytes(key, canonical_json(self.body())))

    def valid(self, pki: Optional[Pki] = None) -> bool:
        """Valid in isolation: balanced amounts and, given account keys, a good signature."""
        if self.total_in < self.total_out or any(o.value < 0 for o in self.outputs):
            return False
        if any(i.value < 0 for i in self.inputs):
            return False
        if pki is None:
            return True
        public = pki.keys.get(self.issuer)
        return public is not None and pki.scheme.verify_bytes(public, canonical_json(self.body()), self.signature)


def encode_batch(txs: Iterable[Transaction]) -> bytes:
    return canonical_json([tx.to_json() for tx in txs])


def decode_batch(payload: bytes) -> list[Transaction]:
    try:
        raw = json.loads(payload)
    except (ValueError, UnicodeDecodeError):
        raise LedgerError("batch is not JSON") from None
    if not isinstance(raw, list):
        raise LedgerError("batch must be a list of transactions")
    return [Transaction.from_json(r) for r in raw]


@dataclass(frozen=True)
class Block:
    index: int
    txs: tuple[Transaction, ...]
    cert_digest: str = ""

    def dump(self) -> dict:
        return {"index": self.index, "cert": self.cert_digest, "txs": [tx.hash for tx in self.txs]}


def gain_of_block(block: Block) -> int:
    return sum(tx.total_out for tx in block.txs)


@dataclass(frozen=True)
class DepositPolicy:
    gain_cap: float
    b: float
    w: int
    n: int

    @property
    def coalition_deposit(self) -> float:
        return self.b * self.gain_cap

    @property
    def per_process(self) -> float:
        """Every coalition of ceil(n/3) processes together holds b * gain cap."""
        return 3 * self.b * self.gain_cap / self.n

    def block_valid(self, payload: bytes) -> bool:
        """Proposal validity: a decodable batch whose outputs stay within the gain cap."""
        try:
            txs = decode_batch(payload)
        except LedgerError:
            return False
        return all(tx.valid() for tx in txs) and sum(tx.total_out for tx in txs) <= self.gain_cap


@dataclass
class LedgerState:
    deposit: float = 0.0
    inputs_deposit: Counter = field(default_factory=Counter)
    punished: set = field(default_factory=set)
    txs: dict = field(default_factory=dict)          # hash -> Transaction
    utxos: dict = field(default_factory=dict)        # ref -> TxOutput
    blocks: list = field(default_factory=list)
    last_seq: dict = field(default_factory=dict)
    funded: float = 0.0                              # value ever drawn from the deposit
    refunded: float = 0.0
    slashed: float = 0.0

    @classmethod
    def genesis(cls, accounts: Iterable[Account], coins: int = GENESIS_COINS,
                deposit: float = 0.0) -> "LedgerState":
        state = cls(deposit=deposit)
        for acct in sorted(accounts):
            tx = Transaction(issuer=-1, seq=acct, inputs=(), outputs=(TxOutput(acct, coins),))
            state._apply_outputs(tx)
            state.txs[tx.hash] = tx
        return state

    # -- views -------------------------------------------------------------------

    @property
    def negative(self) -> bool:
        return self.deposit < 0

    def utxo_value(self) -> int:
        return sum(o.value for o in self.utxos.values())

    def total_value(self) -> float:
        return self.utxo_value() + self.deposit

    def balance(self, account: Account) -> int:
        return sum(o.value for o in self.utxos.values() if o.account == account)

    def snapshot(self) -> tuple:
        return (
            tuple(sorted(self.utxos.items())),
            tuple(sorted(self.txs)),
            tuple(sorted(self.inputs_deposit.items())),
            round(self.deposit, 9),
        )

    # -- transitions ---------------------------------------------------------------

    def _apply_outputs(self, tx: Transaction):
        h = tx.hash
        for i, out in enumerate(tx.outputs):
            self.utxos[(h, i)] = out

    def consume(self, ref: UtxoRef) -> TxOutput:
        return self.utxos.pop(ref)

    def commit_tx(self, tx: Transaction, pki: Optional[Pki] = None):
        """Normal commit on the local branch: every input must be spendable."""
        if tx.hash in self.txs:
            return
        if not tx.valid(pki):
            raise LedgerError(f"invalid transaction {tx.hash[:12]}")
        if any(i.ref not in self.utxos for i in tx.inputs):
            raise LedgerError(f"transaction {tx.hash[:12]} spends an unknown output")
        if any(self.utxos[i.ref].value != i.value for i in tx.inputs):
            raise LedgerError(f"transaction {tx.hash[:12]} misstates an input value")
        if tx.seq <= self.last_seq.get(tx.issuer, -1):
            raise LedgerError(f"transaction {tx.hash[:12]} reuses sequence {tx.seq}")
        for i in tx.inputs:
            self.consume(i.ref)
        self._apply_outputs(tx)
        self.txs[tx.hash] = tx
        self.last_seq[tx.issuer] = tx.seq

    def commit_block(self, block: Block, pki: Optional[Pki] = None):
        for tx in block.txs:
            self.commit_tx(tx, pki)
        self.refund_inputs()
        self.blocks.append(block.dump())

    def commit_tx_merge(self, tx: Transaction):
        """Total: unspendable inputs are funded from the deposit."""
        for i in tx.inputs:
            if i.ref in self.utxos:
                self.consume(i.ref)
            else:
                self.inputs_deposit[i.ref] += 1
                self.deposit -= i.value
                self.funded += i.value
        self._apply_outputs(tx)
        self.txs[tx.hash] = tx
        self.last_seq[tx.issuer] = max(tx.seq, self.last_seq.get(tx.issuer, -1))

    def slash_locked(self, amount: float):
        """Move a forfeited membership deposit into the ledger deposit."""
        self.deposit += amount
        self.slashed += amount

    def punish_account(self, account: Account):
        """Slash every output held by account into the deposit."""
        self.punished.add(account)
        for ref in [r for r, o in self.utxos.items() if o.account == account]:
            value = self.consume(ref).value
            self.deposit += value
            self.slashed += value

    def refund_inputs(self):
        for ref in sorted(self.inputs_deposit):
            while self.inputs_deposit[ref] > 0 and ref in self.utxos:
                value = self.consume(ref).value
                self.inputs_deposit[ref] -= 1
                self.deposit += value
                self.refunded += value
            if self.inputs_deposit[ref] == 0:
                del self.inputs_deposit[ref]

    def merge_block(self, block: Block, cert_ok: bool = True):
        if not cert_ok:
            raise LedgerError(f"block {block.index}: invalid certificate")
        before = self.deposit
        for tx in block.txs:
            if tx.hash in self.txs:
                continue
            self.commit_tx_merge(tx)
            for out in tx.outputs:
                if out.account in self.punished:
                    self.punish_account(out.account)
        self.refund_inputs()
        self.blocks.append(block.dump())
        if self.deposit != before:
            logger.info("merged block %d: deposit %.1f -> %.1f", block.index, before, self.deposit)
        if self.negative:
            logger.warning("deposit fell to %.1f after merging block %d", self.deposit, block.index)

    def dump_chain(self) -> list[dict]:
        return list(self.blocks)


def replay_oracle(genesis: LedgerState, txs: Iterable[Transaction]) -> tuple:
    """
    Final (utxos, deposit-funded multiset, deposit) from spend counts alone:
    an output created once and spent k times leaves k-1 deposit-funded spends.
    """
    created: dict = dict(genesis.utxos)
    spends: Counter = Counter()
    values: dict = {}
    seen = set()
    for tx in txs:
        if tx.hash in seen or tx.hash in genesis.txs:
            continue
        seen.add(tx.hash)
        for i, out in enumerate(tx.outputs):
            created[(tx.hash, i)] = out
        for i in tx.inputs:
            spends[i.ref] += 1
            values[i.ref] = i.value
    utxos = {ref: out for ref, out in created.items() if spends[ref] == 0}
    funded = Counter()
    deposit = genesis.deposit
    for ref, k in spends.items():
        extra = k - (1 if ref in created else 0)
        if extra > 0:
            funded[ref] = extra
            deposit -= extra * values[ref]
    return (tuple(sorted(utxos.items())), tuple(sorted(funded.items())), round(deposit, 9))


class TxFactory:
    """Synthetic signed transactions: issuers round-robin, values drawn 1-100."""

    def __init__(self, state: LedgerState, pki: Pki, keys: dict, rng: np.random.Generator):
        self.pki = pki
        self.keys = keys
        self.rng = rng
        self.accounts = sorted(keys)
        self._next = 0
        self._seq: dict[Account, int] = {}
        self.wallet: dict[Account, list] = {}
        self.sync(state)

    def sync(self, state: LedgerState):
        """Rebuild every wallet from the outputs a ledger holds."""
        self.wallet = {a: [] for a in self.accounts}
        for ref, out in sorted(state.utxos.items()):
            if out.account in self.wallet:
                self.wallet[out.account].append((ref, out.value))

    def _issue(self, issuer: Account, coins: list, to: Account, amount: int) -> Transaction:
        total = sum(v for _, v in coins)
        outputs = [TxOutput(to, amount)]
        if total > amount:
            outputs.append(TxOutput(issuer, total - amount))
        seq = self._seq.get(issuer, -1) + 1
        self._seq[issuer] = seq
        tx = Transaction(issuer=issuer, seq=seq,
                         inputs=tuple(TxInput(ref, v) for ref, v in coins),
                         outputs=tuple(outputs)).signed(self.pki, self.keys[issuer])
        return tx

    def make(self, count: int) -> list[Transaction]:
        out = []
        for _ in range(count):
            for _attempt in range(len(self.accounts)):
                issuer = self.accounts[self._next % len(self.accounts)]
                self._next += 1
                if self.wallet[issuer]:
                    break
            else:
                break
            coins = list(self.wallet[issuer])
            total = sum(v for _, v in coins)
            lo, hi = TX_VALUE_RANGE
            amount = int(min(total, self.rng.integers(lo, hi + 1)))
            others = [a for a in self.accounts if a != issuer] or [issuer]
            to = others[int(self.rng.integers(0, len(others)))]
            tx = self._issue(issuer, coins, to, amount)
            self.wallet[issuer] = []
            out.append(tx)
        return out

    def double_spend(self, issuer: Account, recipients: list[Account]) -> list[Transaction]:
        """One transaction per recipient, all spending the issuer's current outputs."""
        coins = list(self.wallet.get(issuer, []))
        if not coins:
            return []
        total = sum(v for _, v in coins)
        txs = [self._issue(issuer, coins, to, total) for to in recipients]
        # all variants share inputs; keep the wallet empty, their outputs are not ours to spend
        self.wallet[issuer] = []
        return txs


def random_fork(rng: np.random.Generator, accounts: int = 8, max_txs: int = 20,
                scheme: str = "keyed-hash") -> tuple:
    """
    A genesis state and two conflicting blocks built from it: both spend
    genesis outputs, the second may repeat transactions of the first and
    spend outputs only the first creates.
    """
    ids = list(range(accounts))
    pki, keys = Pki.generate(make_scheme(scheme), ids, int(rng.integers(0, 2 ** 31)))
    genesis = LedgerState.genesis(ids)
    factory = TxFactory(genesis, pki, keys, rng)
    half = max_txs // 2
    a = factory.make(int(rng.integers(0, min(half, accounts) + 1)))
    factory.sync(genesis)
    b = factory.make(int(rng.integers(0, min(half, accounts) + 1)))
    shared = [tx for tx in a if rng.random() < 0.3]
    room = max_txs - len(a) - len(b) - len(shared)
    if room > 0 and a:
        after_a = copy.deepcopy(genesis)
        after_a.merge_block(Block(0, tuple(a)))
        factory.sync(after_a)
        b += factory.make(int(rng.integers(0, min(room, accounts) + 1)))
    return genesis, Block(1, tuple(a)), Block(1, tuple(shared + b))
