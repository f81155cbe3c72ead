"""Ambulance telemetry unit: parse window, newData flag, link, SMS send.

The unit runs a one-second loop: read whatever the GPS serial line
produced during the window, keep the latest valid fix, and if there is
fresh data (and the send interval allows) push one text message to the
control room and one to the hospital through the attached modem.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterable, Optional

from . import nmea
from .modem import Sim900Modem

MAPS_LINK_PREFIX = "https://maps.google.com/maps?q="

_ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,16}$")
_LINK_RE = re.compile(
    r"^https://maps\.google\.com/maps\?q=(-?\d+\.\d{6}),(-?\d+\.\d{6})$"
)


class DeviceError(Exception):
    pass


class NoFix(DeviceError):
    """Asked to format a position from a quality-0 fix."""


@dataclass(frozen=True)
class DeviceConfig:
    ambulance_id: str
    control_room_number: str
    hospital_number: str
    parse_window_s: float = 1.0
    send_interval_s: float = 1.0
    serial_link_gps: str = "gps0"
    serial_link_modem: str = "modem0"
    single_shot: bool = False

    def __post_init__(self):
        if not _ID_RE.match(self.ambulance_id):
            raise ValueError(f"bad ambulance id {self.ambulance_id!r}")
        if self.parse_window_s <= 0:
            raise ValueError("parse window must be positive")
        if self.send_interval_s < self.parse_window_s:
            raise ValueError("send interval must be >= parse window")
        if self.serial_link_gps == self.serial_link_modem:
            raise ValueError("GPS and modem must sit on different links")


@dataclass
class DeviceState:
    new_data: bool = False
    last_fix: Optional[nmea.GeoPosition] = None
    last_fix_time: Optional[float] = None
    last_send_time: Optional[float] = None
    messages_sent: int = 0
    messages_dropped_busy: int = 0


@dataclass(frozen=True)
class LocationMessage:
    ambulance_id: str
    timestamp: datetime
    maps_link: str
    destination: str

    @property
    def body(self) -> str:
        stamp = self.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ")
        return f"{self.ambulance_id} {stamp} {self.maps_link}"


def format_coord(value: float) -> str:
    text = f"{value:.6f}"
    return "0.000000" if text == "-0.000000" else text


def make_maps_link(fix: nmea.GeoPosition) -> str:
    """The exact link format sent by SMS: fixed-point, 6 decimals, no spaces."""
    if fix.fix_quality < 1 or fix.latitude is None or fix.longitude is None:
        raise NoFix("cannot build a maps link without a position fix")
    return f"{MAPS_LINK_PREFIX}{format_coord(fix.latitude)},{format_coord(fix.longitude)}"


def parse_maps_link(link: str) -> tuple[float, float]:
    """Inverse of make_maps_link; raises ValueError on any other shape."""
    m = _LINK_RE.match(link)
    if not m:
        raise ValueError(f"not a maps link: {link!r}")
    return float(m.group(1)), float(m.group(2))


def compose_message(
    fix: nmea.GeoPosition, dest: str, cfg: DeviceConfig, now: datetime
) -> LocationMessage:
    return LocationMessage(
        ambulance_id=cfg.ambulance_id,
        timestamp=now,
        maps_link=make_maps_link(fix),
        destination=dest,
    )


class TelemetryDevice:
    """The Arduino-plus-GPS-plus-GSM unit as one clocked object.

    Drive it with run_parse_window() for each window's serial bytes, then
    tick() at the window boundary to fire the send logic.
    """

    def __init__(
        self,
        cfg: DeviceConfig,
        modem: Sim900Modem,
        epoch: datetime | None = None,
    ):
        self.cfg = cfg
        self.modem = modem
        self.epoch = epoch or datetime(2020, 1, 1, tzinfo=timezone.utc)
        self.state = DeviceState()
        self.frame_buffer = nmea.FrameBuffer()
        self._text_mode_ready = False

    def wall_time(self, sim_time_s: float) -> datetime:
        return self.epoch + timedelta(seconds=int(sim_time_s))

    def run_parse_window(
        self,
        gps_bytes: Iterable[tuple[float, bytes]],
        window_start: float,
    ) -> None:
        """Consume timestamped serial chunks for one window.

        Every valid fix updates last_fix, latest one wins; parser errors
        are skipped fixes, not failures.
        """
        self.state.new_data = False
        window_end = window_start + self.cfg.parse_window_s
        for stamp, chunk in gps_bytes:
            if not window_start <= stamp < window_end:
                raise ValueError(f"chunk at {stamp} outside window [{window_start}, {window_end})")
            for raw in self.frame_buffer.feed(chunk):
                try:
                    decoded = nmea.parse_sentence(raw)
                except nmea.NmeaError:
                    continue
                if isinstance(decoded, nmea.GeoPosition) and decoded.has_fix():
                    self.state.last_fix = decoded
                    self.state.last_fix_time = stamp
                    self.state.new_data = True

    def tick(self, now: float) -> list[LocationMessage]:
        """Algorithm step at the window boundary: send if newData allows.

        Returns the messages handed to the modem this tick (possibly none).
        """
        state = self.state
        if not state.new_data:
            return []
        due = (
            state.last_send_time is None
            or now - state.last_send_time >= self.cfg.send_interval_s
        )
        if self.cfg.single_shot and state.last_send_time is not None:
            due = False
        if not due:
            state.new_data = False
            return []
        destinations = (self.cfg.control_room_number, self.cfg.hospital_number)
        if self.modem.is_busy():
            state.messages_dropped_busy += len(destinations)
            state.new_data = False
            return []
        sent: list[LocationMessage] = []
        for dest in destinations:
            msg = compose_message(state.last_fix, dest, self.cfg, self.wall_time(now))
            self._send_via_modem(msg)
            state.messages_sent += 1
            sent.append(msg)
        state.last_send_time = now
        state.new_data = False
        return sent

    def _send_via_modem(self, msg: LocationMessage) -> None:
        if not self._text_mode_ready:
            for cmd in ("AT", "AT+CMGF=1"):
                reply = self.modem.handle_line(cmd)
                if reply != "OK\r\n":
                    raise DeviceError(f"modem refused {cmd}: {reply!r}")
            self._text_mode_ready = True
        prompt = self.modem.handle_line(f'AT+CMGS="{msg.destination}"')
        if prompt != "> ":
            raise DeviceError(f"modem refused CMGS: {prompt!r}")
        reply = self.modem.handle_line(msg.body.encode("ascii") + b"\x1a")
        if "+CMGS:" not in reply:
            raise DeviceError(f"modem refused body: {reply!r}")
