"""NMEA 0183 framing, checksum validation and GGA/RMC decoding.

Sentences arrive on a byte stream as ``$...*hh<CR><LF>`` lines. The frame
buffer realigns on ``$``, tolerates any chunking, and never raises on
garbage input; the decoder understands the two sentence types that carry
position, time and validity (GGA and RMC) and reports everything else as
unsupported rather than failing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

MAX_SENTENCE_LEN = 82  # classic NMEA line-length cap, '$' through checksum

_PRINTABLE = frozenset(range(0x20, 0x7F))


class NmeaError(Exception):
    """Base for declared NMEA decoding failures."""


class ChecksumMismatch(NmeaError):
    """Sentence carried a checksum that does not match its payload."""


class MalformedField(NmeaError):
    """Sentence structure or a field value could not be decoded."""


class MalformedCoordinate(MalformedField):
    """A ddmm.mmmm coordinate field is not decodable."""


@dataclass(frozen=True)
class RawSentence:
    """One framed line, '$' included, line terminator stripped."""

    text: str
    checksum_present: bool


@dataclass(frozen=True)
class Unsupported:
    """A well-formed sentence of a type we do not decode (GSV, VTG, ...)."""

    sentence_type: str


@dataclass(frozen=True)
class GeoPosition:
    """A decoded fix in decimal degrees.

    ``fix_quality`` 0 means no usable position: latitude/longitude are None.
    ``utc_time`` is seconds of day.
    """

    latitude: float | None
    longitude: float | None
    utc_time: float
    fix_quality: int
    satellites: int
    hdop: float
    altitude_m: float | None
    source_sentence: str  # "GGA" or "RMC"

    def has_fix(self) -> bool:
        return self.fix_quality >= 1


def checksum(payload: Union[bytes, str]) -> int:
    """XOR-fold of every byte between '$' and '*'. Total function."""
    if isinstance(payload, str):
        payload = payload.encode("ascii", errors="replace")
    value = 0
    for b in payload:
        value ^= b
    return value


def to_decimal_degrees(field: str, hemisphere: str) -> float:
    """Convert NMEA ``ddmm.mmmm``/``dddmm.mmmm`` plus hemisphere to signed degrees."""
    if hemisphere not in ("N", "S", "E", "W"):
        raise MalformedCoordinate(f"bad hemisphere {hemisphere!r}")
    head, dot, frac = field.partition(".")
    if not head.isdigit() or (dot and not (frac.isdigit() or frac == "")):
        raise MalformedCoordinate(f"non-numeric coordinate {field!r}")
    # at least one degree digit plus the two minute digits; lon caps at ddd
    if not 3 <= len(head) <= 5:
        raise MalformedCoordinate(f"wrong width {field!r}")
    degrees = int(head[:-2])
    minutes = float(head[-2:] + (dot + frac if dot else ""))
    if minutes >= 60.0:
        raise MalformedCoordinate(f"minutes out of range in {field!r}")
    value = degrees + minutes / 60.0
    if hemisphere in ("S", "W"):
        value = -value
    return value


def _parse_utc(field: str) -> float:
    """hhmmss[.sss] to seconds of day; empty field means unknown (0.0)."""
    if field == "":
        return 0.0
    head, _, frac = field.partition(".")
    if len(head) != 6 or not head.isdigit() or (frac and not frac.isdigit()):
        raise MalformedField(f"bad time field {field!r}")
    hh, mm, ss = int(head[0:2]), int(head[2:4]), int(head[4:6])
    if hh > 23 or mm > 59 or ss > 60:
        raise MalformedField(f"time out of range {field!r}")
    return hh * 3600 + mm * 60 + ss + (float("0." + frac) if frac else 0.0)


def _float_field(field: str, default: float = 0.0) -> float:
    if field == "":
        return default
    try:
        value = float(field)
    except ValueError:
        raise MalformedField(f"bad numeric field {field!r}") from None
    return value


def _int_field(field: str, default: int = 0) -> int:
    if field == "":
        return default
    if not field.isdigit():
        raise MalformedField(f"bad integer field {field!r}")
    return int(field)


def _check_range(lat: float, lon: float) -> None:
    if not -90.0 <= lat <= 90.0:
        raise MalformedField(f"latitude {lat} out of range")
    if not -180.0 <= lon <= 180.0:
        raise MalformedField(f"longitude {lon} out of range")


def _decode_gga(tokens: list[str]) -> GeoPosition:
    # $xxGGA,time,lat,NS,lon,EW,quality,numSV,HDOP,alt,M,sep,M,age,station
    if len(tokens) < 10:
        raise MalformedField(f"GGA wants >= 10 fields, got {len(tokens)}")
    utc = _parse_utc(tokens[1])
    quality = _int_field(tokens[6], default=0)
    satellites = _int_field(tokens[7], default=0)
    hdop = _float_field(tokens[8], default=0.0)
    if hdop < 0:
        raise MalformedField(f"negative hdop {hdop}")
    altitude = _float_field(tokens[9], default=float("nan"))
    lat = lon = None
    if quality >= 1:
        lat = to_decimal_degrees(tokens[2], tokens[3])
        lon = to_decimal_degrees(tokens[4], tokens[5])
        _check_range(lat, lon)
    return GeoPosition(
        latitude=lat,
        longitude=lon,
        utc_time=utc,
        fix_quality=quality,
        satellites=satellites,
        hdop=hdop,
        altitude_m=None if altitude != altitude else altitude,
        source_sentence="GGA",
    )


def _decode_rmc(tokens: list[str]) -> GeoPosition:
    # $xxRMC,time,status,lat,NS,lon,EW,sog,cog,date,magvar,magvarEW[,mode]
    if len(tokens) < 7:
        raise MalformedField(f"RMC wants >= 7 fields, got {len(tokens)}")
    utc = _parse_utc(tokens[1])
    status = tokens[2]
    if status not in ("A", "V", ""):
        raise MalformedField(f"bad RMC status {status!r}")
    # status 'V' keeps the no-fix information instead of erroring out
    lat = lon = None
    quality = 0
    if status == "A":
        lat = to_decimal_degrees(tokens[3], tokens[4])
        lon = to_decimal_degrees(tokens[5], tokens[6])
        _check_range(lat, lon)
        quality = 1
    return GeoPosition(
        latitude=lat,
        longitude=lon,
        utc_time=utc,
        fix_quality=quality,
        satellites=0,
        hdop=0.0,
        altitude_m=None,
        source_sentence="RMC",
    )


def parse_sentence(raw: Union[RawSentence, str]) -> GeoPosition | Unsupported:
    """Decode one framed sentence.

    GGA and RMC yield a GeoPosition; any other type yields Unsupported.
    Raises ChecksumMismatch or MalformedField, never anything undeclared.
    """
    if isinstance(raw, str):
        raw = RawSentence(text=raw, checksum_present="*" in raw)
    text = raw.text
    if not text.startswith("$"):
        raise MalformedField("sentence does not start with '$'")
    body = text[1:]
    if "*" in body:
        payload, _, tail = body.partition("*")
        if len(tail) != 2 or any(c not in "0123456789abcdefABCDEF" for c in tail):
            raise MalformedField(f"bad checksum field {tail!r}")
        if checksum(payload) != int(tail, 16):
            raise ChecksumMismatch(
                f"expected {checksum(payload):02X}, sentence says {tail.upper()}"
            )
    else:
        payload = body
    tokens = payload.split(",")
    name = tokens[0]
    if len(name) < 3:
        raise MalformedField(f"bad sentence name {name!r}")
    sentence_type = name[-3:]  # talker id (GP/GN/GL...) is ignored
    if sentence_type == "GGA":
        return _decode_gga(tokens)
    if sentence_type == "RMC":
        return _decode_rmc(tokens)
    return Unsupported(sentence_type=sentence_type)


class FrameBuffer:
    """Incremental '$'-to-line-terminator framer.

    Bytes before the first '$' are discarded; oversized or unprintable
    frames are dropped and counted, never silently lost.
    """

    def __init__(self, max_len: int = MAX_SENTENCE_LEN):
        self.max_len = max_len
        self.pending = bytearray()
        self.overflow_count = 0
        self.discarded_frames = 0
        self._in_frame = False

    def feed(self, chunk: bytes) -> list[RawSentence]:
        """Append a chunk, return every newly completed frame in order."""
        out: list[RawSentence] = []
        for byte in chunk:
            if byte == 0x24:  # '$' starts a frame, a repeat realigns
                if self._in_frame and self.pending:
                    self.discarded_frames += 1
                self.pending = bytearray(b"$")
                self._in_frame = True
                continue
            if not self._in_frame:
                continue  # noise before the first '$'
            if byte in (0x0D, 0x0A):
                if len(self.pending) > 1:
                    sentence = self._finish()
                    if sentence is not None:
                        out.append(sentence)
                self.pending = bytearray()
                self._in_frame = False
                continue
            self.pending.append(byte)
            if len(self.pending) > self.max_len:
                self.overflow_count += 1
                self.pending = bytearray()
                self._in_frame = False
        return out

    def _finish(self) -> RawSentence | None:
        if any(b not in _PRINTABLE for b in self.pending):
            self.discarded_frames += 1
            return None
        text = self.pending.decode("ascii")
        if text.count("*") > 1:
            self.discarded_frames += 1
            return None
        return RawSentence(text=text, checksum_present="*" in text)


def feed_bytes(buf: FrameBuffer, chunk: bytes) -> list[RawSentence]:
    """Functional alias for FrameBuffer.feed."""
    return buf.feed(chunk)


def make_gga(
    latitude: float,
    longitude: float,
    utc_seconds: float,
    fix_quality: int = 1,
    satellites: int = 8,
    hdop: float = 0.9,
    altitude_m: float = 0.0,
) -> str:
    """Synthesize a checksummed GGA sentence (test corpora and the GPS feed)."""
    hh = int(utc_seconds // 3600) % 24
    mm = int(utc_seconds // 60) % 60
    ss = utc_seconds % 60
    time_field = f"{hh:02d}{mm:02d}{ss:06.3f}"

    def coord(value: float, width: int, pos: str, neg: str) -> tuple[str, str]:
        hemi = pos if value >= 0 else neg
        value = abs(value)
        degrees = int(value)
        minutes = (value - degrees) * 60.0
        if minutes >= 59.99995:  # keep rounding from spilling into degrees
            degrees += 1
            minutes = 0.0
        return f"{degrees:0{width}d}{minutes:07.4f}", hemi

    lat_f, lat_h = coord(latitude, 2, "N", "S")
    lon_f, lon_h = coord(longitude, 3, "E", "W")
    payload = (
        f"GPGGA,{time_field},{lat_f},{lat_h},{lon_f},{lon_h},"
        f"{fix_quality},{satellites:02d},{hdop:.1f},{altitude_m:.1f},M,0.0,M,,"
    )
    return f"${payload}*{checksum(payload):02X}"
