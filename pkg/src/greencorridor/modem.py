"""SIM900A-style text-mode AT command machine and a simulated SMS network.

The modem speaks the minimal scripting dialect microcontrollers use:
``AT``, ``AT+CMGF=1``, ``AT+CMGS="<dest>"`` then a body terminated by
Ctrl+Z. Responses are byte-exact, CRLF framed (the ``> `` prompt has no
terminator). Accepted messages enter an SmsNetwork that applies seeded
latency and loss so whole runs replay identically.
"""

from __future__ import annotations

import enum
import random
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

CRLF = "\r\n"
PROMPT = "> "
CTRL_Z = 0x1A
MAX_BODY_CHARS = 160

_CMGS_RE = re.compile(r'^AT\+CMGS="(\+?[0-9]{3,15})"$')


class ModemMode(enum.Enum):
    IDLE = "IDLE"
    TEXT_MODE = "TEXT_MODE"
    AWAITING_BODY = "AWAITING_BODY"
    SENDING = "SENDING"


class EnvelopeStatus(enum.Enum):
    IN_FLIGHT = "IN_FLIGHT"
    DELIVERED = "DELIVERED"
    LOST = "LOST"


@dataclass
class SmsEnvelope:
    from_addr: str
    to_addr: str
    body: str
    submit_time: float
    deliver_time: Optional[float] = None
    status: EnvelopeStatus = EnvelopeStatus.IN_FLIGHT
    submit_seq: int = 0


@dataclass
class ModemState:
    mode: ModemMode = ModemMode.IDLE
    pending_dest: Optional[str] = None
    message_counter: int = 0
    busy_until: float = 0.0
    sending_since: Optional[float] = None
    body_buffer: bytearray = field(default_factory=bytearray)


class Sim900Modem:
    """Text-mode AT command state machine bound to one SMS network.

    ``send_latency_s`` > 0 makes the modem busy after each accepted body,
    which is how dropped-on-busy device behavior gets exercised.
    """

    def __init__(
        self,
        network: "SmsNetwork",
        source_addr: str,
        clock: Callable[[], float] = lambda: 0.0,
        send_latency_s: float = 0.0,
    ):
        self.network = network
        self.source_addr = source_addr
        self.clock = clock
        self.send_latency_s = send_latency_s
        self.state = ModemState()

    def is_busy(self) -> bool:
        if self.state.mode is not ModemMode.SENDING:
            return False
        now = self.clock()
        if now >= self.state.busy_until:
            self.state.mode = ModemMode.TEXT_MODE
            return False
        # back-to-back sends at the same instant are one transmission
        # burst (the controller blocks through them); busy starts after.
        return now != self.state.sending_since

    def handle_line(self, line: Union[str, bytes]) -> str:
        """Process one command line or body chunk, return the response text.

        Body chunks that do not yet contain Ctrl+Z return "".
        """
        self.is_busy()  # lazily leave SENDING once the latency elapsed
        if self.state.mode is ModemMode.AWAITING_BODY:
            data = line.encode("latin-1") if isinstance(line, str) else bytes(line)
            return self._handle_body(data)

        text = line.decode("latin-1") if isinstance(line, bytes) else line
        text = text.rstrip("\r\n")
        if text == "AT":
            return "OK" + CRLF
        if text == "AT+CMGF=1":
            if self.state.mode is ModemMode.IDLE:
                self.state.mode = ModemMode.TEXT_MODE
            return "OK" + CRLF
        match = _CMGS_RE.match(text)
        if match:
            if self.is_busy() or self.state.mode not in (
                ModemMode.TEXT_MODE, ModemMode.SENDING
            ):
                return "ERROR" + CRLF
            self.state.pending_dest = match.group(1)
            self.state.mode = ModemMode.AWAITING_BODY
            self.state.body_buffer = bytearray()
            return PROMPT
        return "ERROR" + CRLF

    def _handle_body(self, data: bytes) -> str:
        terminator = data.find(CTRL_Z)
        if terminator < 0:
            self.state.body_buffer.extend(data)
            return ""
        self.state.body_buffer.extend(data[:terminator])
        body = self.state.body_buffer.decode("latin-1")
        dest = self.state.pending_dest
        self.state.pending_dest = None
        self.state.body_buffer = bytearray()
        if len(body) > MAX_BODY_CHARS:
            self.state.mode = ModemMode.TEXT_MODE
            return "+CMS ERROR: 500" + CRLF
        self.state.message_counter += 1
        now = self.clock()
        self.network.submit(
            SmsEnvelope(from_addr=self.source_addr, to_addr=dest, body=body,
                        submit_time=now),
            now,
        )
        if self.send_latency_s > 0:
            self.state.mode = ModemMode.SENDING
            self.state.sending_since = now
            self.state.busy_until = now + self.send_latency_s
        else:
            self.state.mode = ModemMode.TEXT_MODE
        return f"+CMGS: {self.state.message_counter}" + CRLF + "OK" + CRLF


class SmsNetwork:
    """Seeded store-and-forward SMS transport.

    Loss is decided at submission; delivery times are drawn uniformly from
    [latency_min, latency_max]. One RNG consumed in submission order keeps
    every run with the same seed and traffic byte-identical.
    """

    def __init__(
        self,
        latency_min: float = 0.0,
        latency_max: float = 0.0,
        loss_probability: float = 0.0,
        rng_seed: int = 0,
    ):
        if latency_max < latency_min:
            raise ValueError("latency_max < latency_min")
        if not 0.0 <= loss_probability <= 1.0:
            raise ValueError("loss_probability outside [0, 1]")
        self.latency_min = latency_min
        self.latency_max = latency_max
        self.loss_probability = loss_probability
        self._rng = random.Random(rng_seed)
        self.in_flight: list[SmsEnvelope] = []
        self.submitted = 0
        self.delivered = 0
        self.lost = 0

    def submit(self, env: SmsEnvelope, now: float) -> SmsEnvelope:
        if env.status is not EnvelopeStatus.IN_FLIGHT:
            raise ValueError("envelope already resolved")
        env.submit_seq = self.submitted
        self.submitted += 1
        if self._rng.random() < self.loss_probability:
            env.status = EnvelopeStatus.LOST
            self.lost += 1
            return env
        env.deliver_time = now + self._rng.uniform(self.latency_min, self.latency_max)
        self.in_flight.append(env)
        return env

    def deliver_due(self, now: float) -> list[SmsEnvelope]:
        """Pop every envelope due by ``now``, deliver-time order, ties by submission."""
        due = [e for e in self.in_flight if e.deliver_time <= now]
        if not due:
            return []
        due.sort(key=lambda e: (e.deliver_time, e.submit_seq))
        for env in due:
            env.status = EnvelopeStatus.DELIVERED
            self.in_flight.remove(env)
        self.delivered += len(due)
        return due

    def drain(self) -> list[SmsEnvelope]:
        """Deliver everything still in flight (end-of-run conservation)."""
        return self.deliver_due(float("inf"))
