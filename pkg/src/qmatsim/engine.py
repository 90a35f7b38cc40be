"""Q-MAT transmitter, received-signal transcript and per-user decoder.

One :class:`QmatTrial` simulates every round of the scheme for a single
channel/seed realization.  Transmission runs first and produces a list of
:class:`SlotRecord`; decoding afterwards replays the induction user by user.

Two fidelity modes are supported:

``sinr-exponent``
    Symbols are unit-variance Gaussians.  Each user gets credited
    ``min(nominal bits, log2(1 + SINR))`` for its order-1 Q-MAT and ZF symbols,
    with SINRs computed from per-stream gains using expected symbol powers.
``bit-true``
    Payloads are real bit strings mapped onto square QAM constellations and
    decoded by slicing after cancellation, so every payload is either
    recovered exactly or recorded as a failure.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .channel import ChannelSlotState, CsitLedger, SimParams, crandn, draw_channel, slot_rng
from .precoding import random_isotropic_columns, zf_beamformer
from .quantizer import (
    QuantizedInterference,
    interference_quantizer,
    receiver_requantize,
    two_step_quantize,
)
from .scheduler import Schedule, SlotId, build_round_schedule, rate_exponents

__all__ = [
    "StructuralError",
    "SequencingError",
    "SymbolRecord",
    "ReceivedSample",
    "InterferenceRecord",
    "DecodeState",
    "Precoder",
    "SlotRecord",
    "Transmitter",
    "QmatTrial",
    "TrialResult",
    "assemble_phase_signal",
    "receive",
    "compute_interference",
    "generate_order_symbols",
    "generate_auxiliary",
    "decode_user",
    "measure_sinr",
    "qam_modulate",
    "qam_demodulate",
    "lmmse_sinr",
    "build_slot_record",
    "probe_slot",
]

QMAT, AUX, ZF = "qmat", "auxiliary", "zf"
DEFAULT_BACKOFF = 0.2
# floor on per-row noise so a perfectly known row cannot make the LMMSE singular
_MIN_NOISE = 1e-12


class StructuralError(ValueError):
    """Symbol counts or payload widths disagree with the schedule."""


class SequencingError(RuntimeError):
    """A round was started without the auxiliaries it needs."""


# --------------------------------------------------------------------------
# modulation


def _split(nbits: int) -> tuple[int, int]:
    return (nbits + 1) // 2, nbits // 2


def _qam_scale(nbits: int) -> float:
    bi, bq = _split(nbits)
    energy = ((1 << bi) ** 2 - 1) / 3.0 + (((1 << bq) ** 2 - 1) / 3.0)
    return 1.0 / math.sqrt(energy)


def _bits_to_int(bits: np.ndarray) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


def _int_to_bits(v: int, width: int) -> np.ndarray:
    return np.array([(v >> s) & 1 for s in range(width - 1, -1, -1)], dtype=np.uint8)


def qam_modulate(bits) -> complex:
    """Unit-average-power square QAM point for `bits`; I takes the leading ceil(b/2) bits."""
    bits = np.asarray(bits, dtype=np.uint8)
    n = bits.size
    if n == 0:
        return 0j
    bi, bq = _split(n)
    s = _qam_scale(n)
    i_idx = _bits_to_int(bits[:bi])
    q_idx = _bits_to_int(bits[bi:])
    return complex(s * (2 * i_idx - ((1 << bi) - 1)), s * (2 * q_idx - ((1 << bq) - 1)))


def qam_demodulate(z: complex, nbits: int) -> np.ndarray:
    """Nearest constellation point of a unit-power `nbits`-bit QAM, as bits."""
    if nbits == 0:
        return np.zeros(0, dtype=np.uint8)
    bi, bq = _split(nbits)
    s = _qam_scale(nbits)

    def axis(v, b):
        if b == 0:
            return 0
        m = (1 << b) - 1
        return int(min(max(round((v / s + m) / 2.0), 0), m))

    return np.concatenate((_int_to_bits(axis(z.real, bi), bi), _int_to_bits(axis(z.imag, bq), bq)))


# --------------------------------------------------------------------------
# records


@dataclass
class SymbolRecord:
    kind: str
    destined_set: tuple[int, ...]
    slot: SlotId
    position: int
    payload: np.ndarray
    rate_exponent: float
    power_exponent: float
    nominal_bits: int = 0
    value: complex = 0j
    # order >= 2 Q-MAT: ((user, slot key), (user, slot key)) of the XOR operands
    sources: tuple = ()
    batch: tuple | None = None
    batch_index: int = 0

    @property
    def uid(self) -> tuple:
        return (self.slot.round, self.slot.key, self.kind, self.position)

    @property
    def active(self) -> bool:
        return self.value != 0


@dataclass
class ReceivedSample:
    slot: SlotId
    user: int
    y: complex
    components: dict[str, complex]


@dataclass
class InterferenceRecord:
    slot: SlotId
    victim: int
    i: complex
    quantized: QuantizedInterference


@dataclass
class Precoder:
    """Beamformers of one slot; column ``l`` of `zf` is ``v_l^ZF``."""

    zf: np.ndarray
    qmat: np.ndarray

    @classmethod
    def draw(cls, H_hat: np.ndarray, user_set, rng: np.random.Generator) -> "Precoder":
        K, M = H_hat.shape
        zf = np.stack(
            [zf_beamformer(np.delete(H_hat, l, axis=0), rng, M) for l in range(K)], axis=1
        )
        comp = [l for l in range(K) if l not in user_set]
        if comp:
            v_s = zf_beamformer(H_hat[comp], rng, M)
            U = random_isotropic_columns(M, len(comp), rng)
            V = np.column_stack((v_s, U))
        else:
            V = random_isotropic_columns(M, 1, rng)
        return cls(zf=zf, qmat=V)


@dataclass
class SlotRecord:
    sid: SlotId
    t: int
    state: ChannelSlotState
    precoder: Precoder
    symbols: list[SymbolRecord]
    W: np.ndarray
    amps: np.ndarray
    gains: np.ndarray
    samples: list[ReceivedSample] = field(default_factory=list)
    interference: dict[int, InterferenceRecord] = field(default_factory=dict)

    @property
    def n_qmat(self) -> int:
        return self.precoder.qmat.shape[1]

    @property
    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.symbols], dtype=complex)

    def column(self, kind: str, position: int) -> int:
        for c, s in enumerate(self.symbols):
            if s.kind == kind and s.position == position:
                return c
        raise KeyError((kind, position))

    def aux_users(self) -> list[int]:
        return [s.position for s in self.symbols if s.kind == AUX]


@dataclass
class DecodeState:
    user: int
    decoded_aux: dict = field(default_factory=dict)
    decoded_order_sets: dict = field(default_factory=dict)
    recovered_payloads: dict = field(default_factory=dict)
    reconstructed_interference: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    predicates: list = field(default_factory=list)
    credited_bits: float = 0.0
    credit_by_kind: dict = field(default_factory=lambda: defaultdict(float))

    def credit(self, kind: str, bits: float) -> None:
        self.credited_bits += bits
        self.credit_by_kind[kind] += bits


# --------------------------------------------------------------------------
# signal assembly


def _label(sym: SymbolRecord) -> str:
    return f"{sym.kind}:{sym.position}"


def assemble_phase_signal(slot: SlotId, qmat_vec, aux_syms, zf_syms, precoders: Precoder,
                          P: float, alpha: float, K: int | None = None):
    """Transmit vector of one slot.

    Returns ``(x, W, amps, symbols)`` where ``x = W @ (amps * values)``; the
    columns of `W` follow the order Q-MAT, auxiliary, ZF.  All streams share a
    ``1/sqrt(c)`` factor with ``c`` the number of unit-exponent streams.
    """
    M, nq = precoders.qmat.shape
    K = precoders.zf.shape[1] if K is None else K
    j = slot.phase
    if len(qmat_vec) != (K - j + 1 if j < K else 1) or nq != len(qmat_vec):
        raise StructuralError(f"phase {j} needs {K - j + 1 if j < K else 1} Q-MAT symbols, got {len(qmat_vec)}")
    if len(aux_syms) != (K - j):
        raise StructuralError(f"phase {j} needs {K - j} auxiliary symbols, got {len(aux_syms)}")
    if len(zf_syms) != K:
        raise StructuralError(f"every slot carries {K} ZF symbols, got {len(zf_syms)}")
    symbols = list(qmat_vec) + list(aux_syms) + list(zf_syms)
    cols = [precoders.qmat[:, p] for p in range(nq)]
    cols += [precoders.zf[:, a.position] for a in aux_syms]
    cols += [precoders.zf[:, z.position] for z in zf_syms]
    W = np.stack(cols, axis=1)
    exps = np.array([s.power_exponent for s in symbols])
    c = int(np.sum(exps == 1.0))
    amps = np.sqrt(P**exps / max(c, 1))
    values = np.array([s.value for s in symbols], dtype=complex)
    x = W @ (amps * values)
    return x, W, amps, symbols


def receive(h_row, x, noise_sample: complex, slot: SlotId | None = None, user: int = -1) -> ReceivedSample:
    """``y = h^H x + n``; `x` is either one vector or a mapping label -> vector part."""
    h_row = np.asarray(h_row)
    parts = x if isinstance(x, dict) else {"signal": np.asarray(x)}
    comps = {name: complex(h_row @ np.asarray(v)) for name, v in parts.items()}
    comps["noise"] = complex(noise_sample)
    y = sum(comps.values(), 0j)
    return ReceivedSample(slot=slot, user=user, y=y, components=comps)


def _components(gains_row: np.ndarray, values: np.ndarray) -> np.ndarray:
    return gains_row * values


def _interference_from(comp: np.ndarray, symbols: list[SymbolRecord], victim: int) -> complex:
    # Q-MAT streams plus the auxiliaries of the other victims, in column order
    total = 0j
    for c, s in enumerate(symbols):
        if s.kind == QMAT or (s.kind == AUX and s.position != victim):
            total += comp[c]
    return complex(total)


def compute_interference(slot: SlotRecord, victim_k: int, ledger: CsitLedger) -> complex:
    """Interference at user `victim_k` rebuilt from the ledger's delayed CSIT."""
    H = ledger.true_channel(slot.t)
    gains = (H[victim_k] @ slot.W) * slot.amps
    return _interference_from(_components(gains, slot.values), slot.symbols, victim_k)


def _pad(bits: np.ndarray, width: int) -> np.ndarray:
    if bits.size > width:
        raise StructuralError(f"payload of {bits.size} bits exceeds width {width}")
    return np.concatenate((np.zeros(width - bits.size, dtype=np.uint8), bits))


def generate_order_symbols(set_P, quantized_interferences) -> list[np.ndarray]:
    """XOR chain ``m_l = b_l ^ b_{l+1}`` over members of `set_P` in ascending order.

    `quantized_interferences` maps each member to its bit string (or is a
    list already ordered like ``sorted(set_P)``).
    """
    members = sorted(set_P)
    if isinstance(quantized_interferences, dict):
        ops = [np.asarray(quantized_interferences[p], dtype=np.uint8) for p in members]
    else:
        ops = [np.asarray(b, dtype=np.uint8) for b in quantized_interferences]
    if len(ops) != len(members):
        raise StructuralError("one bit string per member of the set is required")
    width = max(b.size for b in ops)
    ops = [_pad(b, width) for b in ops]
    return [ops[l] ^ ops[l + 1] for l in range(len(ops) - 1)]


def unchain(own_index: int, own_bits: np.ndarray, payloads: list[np.ndarray]) -> list[np.ndarray]:
    """Invert :func:`generate_order_symbols` given one operand."""
    width = payloads[0].size if payloads else own_bits.size
    ops: list[np.ndarray | None] = [None] * (len(payloads) + 1)
    ops[own_index] = _pad(np.asarray(own_bits, dtype=np.uint8), width)
    for l in range(own_index - 1, -1, -1):
        ops[l] = payloads[l] ^ ops[l + 1]
    for l in range(own_index, len(payloads)):
        ops[l + 1] = payloads[l] ^ ops[l]
    return ops


def generate_auxiliary(record: InterferenceRecord | None, alpha: float) -> np.ndarray:
    """Bits carried by next round's auxiliary symbol; empty for round 1 (``record=None``)."""
    if record is None:
        return np.zeros(0, dtype=np.uint8)
    # the fine stage for alpha < 1/2, the single stage otherwise
    return record.quantized.fine_bits.copy()


def lmmse_sinr(A: np.ndarray, noise_var: np.ndarray) -> np.ndarray:
    """Per-stream output SINR of the LMMSE estimator for unit-power streams."""
    A = np.atleast_2d(A)
    Aw = A / np.sqrt(np.maximum(noise_var, _MIN_NOISE))[:, None]
    E = np.linalg.inv(np.eye(A.shape[1]) + Aw.conj().T @ Aw)
    return np.maximum(1.0 / np.real(np.diag(E)) - 1.0, 0.0)


def measure_sinr(sample: ReceivedSample, symbol: str, cancellation_set=()) -> float:
    """``|desired|^2 / (sum of non-cancelled other components + |noise|^2)``."""
    if symbol not in sample.components:
        raise KeyError(f"component {symbol!r} not present in slot {sample.slot}")
    desired = abs(sample.components[symbol]) ** 2
    rest = sum(
        abs(v) ** 2 for name, v in sample.components.items()
        if name != symbol and name not in cancellation_set
    )
    return desired / rest if rest > 0 else math.inf


def build_slot_record(sid: SlotId, t: int, state: ChannelSlotState, prec: Precoder, qmat, aux, zf,
                      params: SimParams) -> SlotRecord:
    """Assemble the transmit vector and every user's received sample for one slot."""
    x, W, amps, symbols = assemble_phase_signal(sid, qmat, aux, zf, prec, params.P, params.alpha, params.K)
    gains = (state.H @ W) * amps[None, :]
    rec = SlotRecord(sid, t, state, prec, symbols, W, amps, gains)
    vals = rec.values
    for k in range(params.K):
        comp = _components(gains[k], vals)
        comps = {_label(s): complex(c) for s, c in zip(symbols, comp)}
        comps["noise"] = complex(state.noise[k])
        y = complex(comp.sum() + state.noise[k])
        rec.samples.append(ReceivedSample(sid, k, y, comps))
    return rec


def probe_slot(params: SimParams, trial: int, phase: int = 1) -> SlotRecord:
    """One stand-alone slot with every symbol active (unit-variance Gaussian).

    Used to measure how each received component scales with P; interference
    records are filled in through the delayed-CSIT ledger as in a real round.
    """
    K, a = params.K, params.alpha
    rng = slot_rng(params.seed, trial, 0)
    state = draw_channel(params, rng)
    ledger = CsitLedger().advance(0, state)
    S = tuple(range(phase))
    sid = SlotId(2, phase, 1, S)
    prec = Precoder.draw(ledger.current_estimate, S, rng)
    ex = rate_exponents(a)
    nq = prec.qmat.shape[1]
    g = crandn(rng, nq + (K - phase) + K)
    empty = np.zeros(0, np.uint8)
    qmat = [SymbolRecord(QMAT, S, sid, p_, empty, ex["qmat"], 1.0 if p_ == 0 else 1.0 - a, 1, g[p_])
            for p_ in range(nq)]
    comp = sid.complement(K)
    aux = [SymbolRecord(AUX, (l,), sid, l, empty, ex["auxiliary"], 1.0, 1, g[nq + i])
           for i, l in enumerate(comp)]
    zf = [SymbolRecord(ZF, (k,), sid, k, empty, ex["zf"], a, 1, g[nq + len(comp) + k]) for k in range(K)]
    rec = build_slot_record(sid, 0, state, prec, qmat, aux, zf, params)
    ledger.release()
    for l in comp:
        i = compute_interference(rec, l, ledger)
        rec.interference[l] = InterferenceRecord(sid, l, i, two_step_quantize(i, a, params.P))
    return rec


# --------------------------------------------------------------------------
# transmitter


class Transmitter:
    """Runs the rounds of one trial and keeps the resulting slot records."""

    def __init__(self, params: SimParams, trial: int = 0, backoff: float = DEFAULT_BACKOFF):
        self.params = params
        self.trial = trial
        self.bit_true = params.mode == "bit-true"
        self.backoff = backoff if self.bit_true else 0.0
        self.schedule: Schedule = build_round_schedule(params.K, params.rounds)
        self.ledger = CsitLedger()
        self.slots: list[SlotRecord] = []
        self.by_key: dict[tuple, SlotRecord] = {}
        self._t = 0
        # interference records of the last completed round, keyed by slot key
        self.pending_aux: dict[tuple, dict[int, InterferenceRecord]] | None = None
        self._aux_round = 0
        L = params.log2P
        a = params.alpha
        ex = rate_exponents(a)
        eps = self.backoff
        self.fresh_qmat_bits = int(round((1 - eps) * ex["qmat"] * L))
        self.zf_bits = int(round((1 - eps) * ex["zf"] * L))
        self.nominal = {k: int(round(v * L)) for k, v in ex.items()}
        self.quant_backoff = eps / 2.0

    # symbols -------------------------------------------------------------

    def _value(self, bits: np.ndarray, nominal: int, rng) -> complex:
        if self.bit_true:
            return qam_modulate(bits)
        return complex(crandn(rng, 1)[0]) if nominal > 0 else 0j

    def _fresh_bits(self, n: int, rng) -> np.ndarray:
        return rng.integers(0, 2, size=n, dtype=np.uint8) if self.bit_true else np.zeros(0, np.uint8)

    def quantize(self, i: complex) -> QuantizedInterference:
        return two_step_quantize(i, self.params.alpha, self.params.P, self.quant_backoff)

    # rounds --------------------------------------------------------------

    def run(self) -> list[SlotRecord]:
        for n in range(1, self.params.rounds + 1):
            self.run_round(n)
        return self.slots

    def run_round(self, n: int):
        """Transmit every slot of round `n`; returns (slot records, next-round interference)."""
        p = self.params
        K = p.K
        if n > 1 and (self.pending_aux is None or self._aux_round != n):
            raise SequencingError(f"auxiliaries for round {n} are missing")
        final = n == p.rounds
        queues: dict[tuple, deque] = defaultdict(deque)
        produced: dict[tuple, dict[int, InterferenceRecord]] = {}
        start = len(self.slots)
        for j in range(1, K + 1):
            for r in range(1, self.schedule.repetitions[j - 1] + 1):
                phase_slots = []
                for S in combinations(range(K), j):
                    sid = SlotId(n, j, r, S)
                    rec = self._transmit_slot(sid, queues, final)
                    phase_slots.append(rec)
                if final or j == K:
                    continue
                for rec in phase_slots:
                    produced[rec.sid.key] = rec.interference
                self._emit_order_symbols(n, j, r, queues)
        for T, q in queues.items():
            if q:
                raise StructuralError(f"{len(q)} order-{len(T)} symbols for {T} were never sent")
        self.pending_aux = produced
        self._aux_round = n + 1
        return self.slots[start:], produced

    def _emit_order_symbols(self, n: int, j: int, r: int, queues) -> None:
        K = self.params.K
        for T in combinations(range(K), j + 1):
            ops = {}
            for p in T:
                W = tuple(u for u in T if u != p)
                ops[p] = self.by_key[(n, (j, r, W))].interference[p].quantized.bits
            payloads = generate_order_symbols(T, ops)
            members = sorted(T)
            for l, bits in enumerate(payloads):
                srcs = ((members[l], (j, r, tuple(u for u in T if u != members[l]))),
                        (members[l + 1], (j, r, tuple(u for u in T if u != members[l + 1]))))
                queues[T].append((bits, srcs, (j, r, T), l))

    def _transmit_slot(self, sid: SlotId, queues, final: bool) -> SlotRecord:
        p = self.params
        K, j, n = p.K, sid.phase, sid.round
        t = self._t
        self._t += 1
        rng = slot_rng(p.seed, self.trial, t)
        state = draw_channel(p, rng)
        self.ledger.advance(t, state)
        prec = Precoder.draw(self.ledger.current_estimate, sid.user_set, rng)
        ex = rate_exponents(p.alpha)
        nq = prec.qmat.shape[1]

        qmat = []
        if j > 1 and not final:
            popped = [queues[sid.user_set].popleft() for _ in range(nq)]
        for pos in range(nq):
            power = 1.0 if pos == 0 else 1.0 - p.alpha
            if final:
                bits, nominal, srcs, batch, bidx = np.zeros(0, np.uint8), 0, (), None, 0
            elif j == 1:
                bits, nominal, srcs, batch, bidx = (self._fresh_bits(self.fresh_qmat_bits, rng),
                                                    self.nominal["qmat"], (), None, 0)
            else:
                bits, srcs, batch, bidx = popped[pos]
                nominal = self.nominal["qmat"]
            active = bits.size > 0 if self.bit_true else nominal > 0
            val = self._value(bits, nominal, rng) if active else 0j
            qmat.append(SymbolRecord(QMAT, sid.user_set, sid, pos, bits, ex["qmat"], power,
                                     nominal, val, srcs, batch, bidx))

        aux = []
        for l in sid.complement(K):
            rec = None if n == 1 else self.pending_aux[sid.key][l]
            bits = generate_auxiliary(rec, p.alpha)
            nominal = 0 if rec is None else self.nominal["auxiliary"]
            active = bits.size > 0 if self.bit_true else nominal > 0
            val = self._value(bits, nominal, rng) if active else 0j
            aux.append(SymbolRecord(AUX, (l,), sid, l, bits, ex["auxiliary"], 1.0, nominal, val))

        zf = []
        for k in range(K):
            bits = self._fresh_bits(self.zf_bits, rng)
            nominal = self.nominal["zf"]
            active = bits.size > 0 if self.bit_true else nominal > 0
            val = self._value(bits, nominal, rng) if active else 0j
            zf.append(SymbolRecord(ZF, (k,), sid, k, bits, ex["zf"], p.alpha, nominal, val))

        rec = build_slot_record(sid, t, state, prec, qmat, aux, zf, p)
        self.ledger.release()
        if not final and j < K:
            for l in sid.complement(K):
                i = compute_interference(rec, l, self.ledger)
                rec.interference[l] = InterferenceRecord(sid, l, i, self.quantize(i))
        self.slots.append(rec)
        self.by_key[(n, sid.key)] = rec
        return rec

    def transcript_json(self) -> str:
        out = []
        for rec in self.slots:
            out.append({
                "t": rec.t,
                "round": rec.sid.round, "phase": rec.sid.phase,
                "repetition": rec.sid.repetition, "user_set": list(rec.sid.user_set),
                "users": [
                    {"user": s.user,
                     "component_power": {k: abs(v) ** 2 for k, v in s.components.items()}}
                    for s in rec.samples
                ],
            })
        return json.dumps(out)


# --------------------------------------------------------------------------
# decoding


def _row_noise_var(rec: SlotRecord, k: int, exclude: set[int] = frozenset()) -> float:
    """Expected power of the ZF streams at user k plus unit noise."""
    var = 1.0
    for c, s in enumerate(rec.symbols):
        if s.kind == ZF and c not in exclude and s.active:
            var += abs(rec.gains[k, c]) ** 2
    return var


class _Decoder:
    def __init__(self, tx: Transmitter, k: int):
        self.tx = tx
        self.p = tx.params
        self.k = k
        self.state = DecodeState(user=k)
        self.q = interference_quantizer(self.p.alpha, self.p.P, tx.quant_backoff)
        self.bit_true = tx.bit_true
        # slot (round, key) -> {aux user: value} known at this user
        self.aux_values: dict[tuple, dict[int, complex]] = defaultdict(dict)
        # (round, key) -> own î bits / value
        self.own_ihat: dict[tuple, tuple[np.ndarray, complex]] = {}
        # (round, key, user) -> î value for other users
        self.ihat: dict[tuple, complex] = {}
        self.qmat_values: dict[tuple, np.ndarray] = {}

    def rec(self, n: int, key) -> SlotRecord:
        return self.tx.by_key[(n, key)]

    def run(self) -> DecodeState:
        R = self.p.rounds
        K = self.p.K
        for n in range(1, R):
            self.decode_own_aux(n + 1)
            self.recover_own_ihat(n)
            for j in range(K, 0, -1):
                if j < K:
                    self.unchain_phase(n, j)
                for rec in self._phase_slots(n, j):
                    if self.k in rec.sid.user_set:
                        self.decode_qmat(rec)
                        self.reencode_aux(rec)
                    self.decode_zf(rec)
        return self.state

    def _phase_slots(self, n: int, j: int):
        return [r for r in self.tx.slots if r.sid.round == n and r.sid.phase == j]

    def _fail(self, sym: SymbolRecord, what: str):
        self.state.failures.append({"uid": sym.uid, "kind": sym.kind, "what": what})

    def _record(self, sym: SymbolRecord, bits: np.ndarray):
        self.state.recovered_payloads[sym.uid] = bits
        if not np.array_equal(bits, sym.payload):
            self._fail(sym, "payload mismatch")
            return False
        return True

    # step 1: own auxiliaries of the next round, treating all else as noise
    def decode_own_aux(self, n: int):
        k = self.k
        for rec in self.tx.slots:
            if rec.sid.round != n or k in rec.sid.user_set:
                continue
            c = rec.column(AUX, k)
            sym = rec.symbols[c]
            g = rec.gains[k, c]
            y = rec.samples[k].y
            if self.bit_true:
                bits = qam_demodulate(y / g, sym.payload.size) if sym.payload.size else sym.payload[:0]
                ok = self._record(sym, bits)
                self.state.decoded_aux[(n, rec.sid.key)] = bits
                self.aux_values[(n, rec.sid.key)][k] = qam_modulate(bits)
                self.state.predicates.append(("aux", sym.uid, ok))
            else:
                self.aux_values[(n, rec.sid.key)][k] = sym.value
                interf = sum(abs(rec.gains[k, cc]) ** 2 for cc, s in enumerate(rec.symbols)
                             if cc != c and s.active)
                sinr = abs(g) ** 2 / (interf + 1.0) if sym.active else 0.0
                self.state.predicates.append(("aux", sym.uid, math.log2(1 + sinr) >= sym.nominal_bits))

    # step 2: own quantized interference of round n
    def recover_own_ihat(self, n: int):
        k, a, P = self.k, self.p.alpha, self.p.P
        for rec in self.tx.slots:
            if rec.sid.round != n or k in rec.sid.user_set or rec.sid.phase == self.p.K:
                continue
            key = rec.sid.key
            truth = rec.interference[k]
            if not self.bit_true:
                self.own_ihat[(n, key)] = (truth.quantized.bits, truth.quantized.combined)
                self.state.reconstructed_interference[(n, key)] = truth.quantized.combined
                continue
            aux_bits = self.state.decoded_aux.get((n + 1, key), np.zeros(0, np.uint8))
            if self.q.coarse is not None:
                n_hat = self.q.fine_level(aux_bits)
                c = rec.column(AUX, k)
                own_aux = rec.gains[k, c] * self.aux_values[(n, key)].get(k, 0j)
                coarse = receiver_requantize(rec.samples[k].y - own_aux, a, P, correction=n_hat)
                bits = np.concatenate((coarse, aux_bits))
                ok = np.array_equal(coarse, truth.quantized.coarse_bits)
                self.state.predicates.append(("coarse", (n, key, k), ok))
            else:
                bits = aux_bits
            val = self.q.dequantize(bits)
            self.own_ihat[(n, key)] = (bits, val)
            self.state.reconstructed_interference[(n, key)] = val

    # step 3: recover the î of other members from the order-(j+1) symbols
    def unchain_phase(self, n: int, j: int):
        k, K = self.k, self.p.K
        batches: dict[tuple, dict[int, np.ndarray]] = defaultdict(dict)
        for rec in self._phase_slots(n, j + 1):
            if k not in rec.sid.user_set:
                continue
            vals = self.state.recovered_payloads
            for sym in rec.symbols:
                if sym.kind == QMAT and sym.batch is not None:
                    bits = vals.get(sym.uid) if self.bit_true else sym.payload
                    if bits is not None:
                        batches[sym.batch][sym.batch_index] = bits
        for (jj, r, T), parts in batches.items():
            members = sorted(T)
            payloads = [parts.get(l) for l in range(len(members) - 1)]
            own_key = (jj, r, tuple(u for u in T if u != k))
            own = self.own_ihat.get((n, own_key))
            if own is None or any(pl is None for pl in payloads):
                continue
            ops = unchain(members.index(k), own[0], payloads)
            for p_user, bits in zip(members, ops):
                if p_user == k:
                    continue
                W = tuple(u for u in T if u != p_user)
                self.state.decoded_order_sets[(n, (jj, r, W), p_user)] = bits
                self.ihat[(n, (jj, r, W), p_user)] = self.q.dequantize(bits)

    def _known_aux_vector(self, rec: SlotRecord) -> np.ndarray:
        known = self.aux_values.get((rec.sid.round, rec.sid.key), {})
        v = np.zeros(len(rec.symbols), dtype=complex)
        for c, s in enumerate(rec.symbols):
            if s.kind == AUX:
                v[c] = known.get(s.position, 0j) if self.bit_true else s.value
        return v

    # step 4: Q-MAT vector of a slot destined to this user
    def decode_qmat(self, rec: SlotRecord):
        k, K = self.k, self.p.K
        n, key = rec.sid.round, rec.sid.key
        nq = rec.n_qmat
        comp = rec.sid.complement(K)
        aux_vec = self._known_aux_vector(rec)
        qcols = list(range(nq))
        A = np.empty((1 + len(comp), nq), dtype=complex)
        obs = np.empty(1 + len(comp), dtype=complex)
        noise = np.empty(1 + len(comp))
        A[0] = rec.gains[k, :nq]
        obs[0] = rec.samples[k].y - rec.gains[k] @ aux_vec
        noise[0] = _row_noise_var(rec, k)
        for row, l in enumerate(comp, start=1):
            A[row] = rec.gains[l, :nq]
            others = aux_vec.copy()
            others[rec.column(AUX, l)] = 0
            if self.bit_true:
                ih = self.ihat.get((n, key, l))
                if ih is None:
                    for s in rec.symbols[:nq]:
                        self._fail(s, "missing interference estimate")
                    self.qmat_values[(n, key)] = None
                    return
                noise[row] = self.q.error_variance()
            else:
                truth = rec.interference[l]
                ih = truth.quantized.combined
                noise[row] = abs(truth.i - ih) ** 2
            obs[row] = ih - rec.gains[l] @ others
        syms = rec.symbols[:nq]
        if self.bit_true:
            est = _mmse_sic(A, obs, noise, [s.payload.size for s in syms])
            values = np.zeros(nq, dtype=complex)
            for p_, s in enumerate(syms):
                ok = self._record(s, est[p_])
                values[p_] = qam_modulate(est[p_])
                if s.slot.phase == 1 and ok:
                    self.state.credit(QMAT, s.payload.size)
            self.qmat_values[(n, key)] = values
        else:
            active = [p_ for p_, s in enumerate(syms) if s.active]
            self.qmat_values[(n, key)] = np.array([s.value for s in syms])
            if not active:
                return
            sinr = lmmse_sinr(A[:, active], noise)
            for idx, p_ in enumerate(active):
                s = syms[p_]
                rate = math.log2(1.0 + sinr[idx])
                self.state.predicates.append(("qmat", s.uid, rate >= s.nominal_bits))
                if s.slot.phase == 1:
                    self.state.credit(QMAT, min(float(s.nominal_bits), rate))

    # step 5: rebuild next round's auxiliaries destined to the other users
    def reencode_aux(self, rec: SlotRecord):
        n, key = rec.sid.round, rec.sid.key
        if n + 1 > self.p.rounds or rec.sid.phase == self.p.K or not self.bit_true:
            return
        values = self.qmat_values.get((n, key))
        if values is None:
            return
        v = self._known_aux_vector(rec)
        v[: rec.n_qmat] = values
        for l in rec.sid.complement(self.p.K):
            comp = _components(rec.gains[l], v)
            i = _interference_from(comp, rec.symbols, l)
            bits = self.tx.quantize(i).fine_bits
            self.aux_values[(n + 1, key)][l] = qam_modulate(bits)
            self.state.decoded_aux[(n + 1, key, l)] = bits

    # step 6: own ZF symbol of every slot
    def decode_zf(self, rec: SlotRecord):
        k = self.k
        n, key = rec.sid.round, rec.sid.key
        c = rec.column(ZF, k)
        sym = rec.symbols[c]
        g = rec.gains[k, c]
        y = rec.samples[k].y
        served = k in rec.sid.user_set
        if self.bit_true:
            if not sym.payload.size:
                return
            if served:
                values = self.qmat_values.get((n, key))
                if values is None:
                    self._fail(sym, "Q-MAT symbols unavailable")
                    return
                v = self._known_aux_vector(rec)
                v[: rec.n_qmat] = values
                r = y - rec.gains[k] @ v
            else:
                own = self.own_ihat.get((n, key))
                if own is None:
                    self._fail(sym, "interference estimate unavailable")
                    return
                ca = rec.column(AUX, k)
                r = y - rec.gains[k, ca] * self.aux_values[(n, key)].get(k, 0j) - own[1]
            ok = self._record(sym, qam_demodulate(r / g, sym.payload.size))
            if ok:
                self.state.credit(ZF, sym.payload.size)
        else:
            if not sym.active:
                return
            interf = _row_noise_var(rec, k, exclude={c})
            if not served:
                truth = rec.interference[k]
                interf += abs(truth.i - truth.quantized.combined) ** 2
            rate = math.log2(1.0 + abs(g) ** 2 / interf)
            self.state.predicates.append(("zf", sym.uid, rate >= sym.nominal_bits))
            self.state.credit(ZF, min(float(sym.nominal_bits), rate))


def _mmse_sic(A: np.ndarray, obs: np.ndarray, noise: np.ndarray, nbits: list[int]) -> list[np.ndarray]:
    """Ordered MMSE successive interference cancellation with QAM slicing."""
    w = 1.0 / np.sqrt(np.maximum(noise, _MIN_NOISE))
    A = A * w[:, None]
    r = obs * w
    out: list[np.ndarray] = [np.zeros(0, np.uint8) for _ in nbits]
    remaining = [p for p, b in enumerate(nbits) if b > 0]
    while remaining:
        Ar = A[:, remaining]
        G = np.linalg.inv(Ar.conj().T @ Ar + np.eye(len(remaining)))
        best = int(np.argmin(np.real(np.diag(G))))
        f = G @ Ar.conj().T
        bias = np.real(f[best] @ Ar[:, best])
        z = (f[best] @ r) / bias
        p = remaining[best]
        bits = qam_demodulate(z, nbits[p])
        out[p] = bits
        r = r - A[:, p] * qam_modulate(bits)
        remaining.pop(best)
    return out


def decode_user(k: int, transcripts: Transmitter, mode: str | None = None, P=None, alpha=None) -> DecodeState:
    """Run the decoding induction for user `k` over all completed rounds.

    `mode`, `P` and `alpha` default to the transmitter's own parameters.
    """
    tx = transcripts
    if mode is not None and mode != tx.params.mode:
        raise ValueError(f"transcript was produced in {tx.params.mode!r} mode, not {mode!r}")
    if len(tx.slots) != len(tx.schedule.slots):
        raise SequencingError("decoding starts only after every round has been transmitted")
    return _Decoder(tx, k).run()


@dataclass
class TrialResult:
    sum_rate: float
    credited_bits: float
    counted_slots: int
    failures: list
    states: list[DecodeState]


class QmatTrial:
    """Transmit all rounds for one seeded trial and decode every user."""

    def __init__(self, params: SimParams, trial: int = 0, backoff: float = DEFAULT_BACKOFF,
                 include_final: bool = False):
        self.params = params
        self.trial = trial
        self.backoff = backoff
        self.include_final = include_final
        self.tx = Transmitter(params, trial, backoff)

    def run(self) -> TrialResult:
        p = self.params
        self.tx.run()
        states = [decode_user(k, self.tx) for k in range(p.K)]
        credited = sum(s.credited_bits for s in states)
        per_round = len(self.tx.slots) // p.rounds
        counted = per_round * (p.rounds if self.include_final or p.rounds == 1 else p.rounds - 1)
        failures = [f | {"user": s.user} for s in states for f in s.failures]
        return TrialResult(credited / counted, credited, counted, failures, states)
