//! Fixed-size binary messages exchanged between peers.
//!
//! Every message starts with the magic byte `0x54` and a kind byte, and ends
//! with a big-endian CRC-16/CCITT-FALSE over all preceding bytes.
//!
//! ```text
//! HELLO  54 01 | version | left_count | right_count          | crc crc   (7 bytes)
//! CALIB  54 02 | action  | intensity                         | crc crc   (6 bytes)
//! TOUCH  54 03 | seq(2) | timestamp_us(4) | mask(7) | intensity | crc crc (18 bytes)
//! BYE    54 04                                               | crc crc   (4 bytes)
//! ```
//!
//! The TOUCH mask is 56 bits: bit `j` of byte `8 + k` is electrode `8k + j`.
//! Bits at or above the layout's electrode count must be zero.

use std::fmt::{self, Write as _};

use crc::{Crc, CRC_16_IBM_3740};
use thiserror::Error;

use crate::layout::ElectrodeLayout;
use crate::mask::TouchMask;
use crate::seq::Seq16;

pub const MAGIC: u8 = 0x54;
pub const PROTOCOL_VERSION: u8 = 1;

pub const KIND_HELLO: u8 = 0x01;
pub const KIND_CALIB: u8 = 0x02;
pub const KIND_TOUCH: u8 = 0x03;
pub const KIND_BYE: u8 = 0x04;

pub const HELLO_LEN: usize = 7;
pub const CALIB_LEN: usize = 6;
pub const TOUCH_LEN: usize = 18;
pub const BYE_LEN: usize = 4;

/// Width of the TOUCH mask field in bits.
pub const MASK_BITS: usize = 56;
const MASK_BYTES: usize = MASK_BITS / 8;

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
const CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn crc16(bytes: &[u8]) -> u16 {
    CRC16.checksum(bytes)
}

/// One sensing report, sent to the peer every frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TouchFrame {
    pub seq: Seq16,
    /// Sender clock in microseconds; wraps after about 71 minutes.
    pub timestamp_us: u32,
    pub mask: TouchMask,
    pub intensity: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    pub version: u8,
    pub left_count: u8,
    pub right_count: u8,
}

impl Hello {
    /// HELLO announcing `layout` at the current protocol version.
    ///
    /// Layouts whose strips do not fit a byte cannot be announced.
    pub fn for_layout(layout: &ElectrodeLayout) -> Result<Hello, EncodeError> {
        let narrow = |n: usize| u8::try_from(n).map_err(|_| EncodeError::LayoutTooLarge(n));
        Ok(Hello {
            version: PROTOCOL_VERSION,
            left_count: narrow(layout.left_count())?,
            right_count: narrow(layout.right_count())?,
        })
    }

    pub fn matches(&self, layout: &ElectrodeLayout) -> bool {
        self.left_count as usize == layout.left_count()
            && self.right_count as usize == layout.right_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibAction {
    /// Carries the sender's current or proposed intensity.
    Propose = 0x00,
    Raise = 0x01,
    Lower = 0x02,
    Confirm = 0x03,
}

impl CalibAction {
    fn from_byte(b: u8) -> Option<CalibAction> {
        Some(match b {
            0x00 => CalibAction::Propose,
            0x01 => CalibAction::Raise,
            0x02 => CalibAction::Lower,
            0x03 => CalibAction::Confirm,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Calib {
    pub action: CalibAction,
    pub intensity: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Message {
    Hello(Hello),
    Calib(Calib),
    Touch(TouchFrame),
    Bye,
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::Hello(_) => KIND_HELLO,
            Message::Calib(_) => KIND_CALIB,
            Message::Touch(_) => KIND_TOUCH,
            Message::Bye => KIND_BYE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("mask of {0} electrodes does not fit the {MASK_BITS}-bit wire field")]
    Unencodable(usize),
    #[error("strip of {0} electrodes does not fit a HELLO count byte")]
    LayoutTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("not-our-protocol: first byte {0:#04x}")]
    NotOurProtocol(u8),
    #[error("unknown-kind: {0:#04x}")]
    UnknownKind(u8),
    #[error("truncated-frame: expected {expected} bytes, got {found}")]
    Truncated { expected: usize, found: usize },
    #[error("corrupt-frame: crc {computed:#06x} does not match trailer {trailer:#06x}")]
    Corrupt { computed: u16, trailer: u16 },
    #[error("malformed-mask: bits at or above electrode {0} are set")]
    MalformedMask(usize),
    #[error("malformed-field: {0}")]
    MalformedField(&'static str),
}

impl DecodeError {
    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::NotOurProtocol(_) => "not-our-protocol",
            DecodeError::UnknownKind(_) => "unknown-kind",
            DecodeError::Truncated { .. } => "truncated-frame",
            DecodeError::Corrupt { .. } => "corrupt-frame",
            DecodeError::MalformedMask(_) => "malformed-mask",
            DecodeError::MalformedField(_) => "malformed-field",
        }
    }
}

fn expected_len(kind: u8) -> Option<usize> {
    Some(match kind {
        KIND_HELLO => HELLO_LEN,
        KIND_CALIB => CALIB_LEN,
        KIND_TOUCH => TOUCH_LEN,
        KIND_BYE => BYE_LEN,
        _ => return None,
    })
}

pub fn encode(message: &Message) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(TOUCH_LEN);
    out.push(MAGIC);
    out.push(message.kind());
    match message {
        Message::Hello(h) => out.extend_from_slice(&[h.version, h.left_count, h.right_count]),
        Message::Calib(c) => out.extend_from_slice(&[c.action as u8, c.intensity]),
        Message::Touch(frame) => {
            if frame.mask.len() > MASK_BITS {
                return Err(EncodeError::Unencodable(frame.mask.len()));
            }
            out.extend_from_slice(&frame.seq.value().to_be_bytes());
            out.extend_from_slice(&frame.timestamp_us.to_be_bytes());
            // little-endian byte order puts electrode 8k + j at bit j of byte k
            out.extend_from_slice(&frame.mask.low_bits().to_le_bytes()[..MASK_BYTES]);
            out.push(frame.intensity);
        }
        Message::Bye => {}
    }
    let crc = crc16(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

/// Decodes a message whose TOUCH masks use the reference 53-electrode layout.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    decode_with_layout(bytes, &ElectrodeLayout::default())
}

/// Decodes one message. Never panics and never reads outside `bytes`.
pub fn decode_with_layout(bytes: &[u8], layout: &ElectrodeLayout) -> Result<Message, DecodeError> {
    let Some(&magic) = bytes.first() else {
        return Err(DecodeError::Truncated {
            expected: 2,
            found: 0,
        });
    };
    if magic != MAGIC {
        return Err(DecodeError::NotOurProtocol(magic));
    }
    let Some(&kind) = bytes.get(1) else {
        return Err(DecodeError::Truncated {
            expected: 2,
            found: 1,
        });
    };
    let expected = expected_len(kind).ok_or(DecodeError::UnknownKind(kind))?;
    if bytes.len() != expected {
        return Err(DecodeError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let (body, trailer) = bytes.split_at(expected - 2);
    let trailer = u16::from_be_bytes([trailer[0], trailer[1]]);
    let computed = crc16(body);
    if computed != trailer {
        return Err(DecodeError::Corrupt { computed, trailer });
    }
    match kind {
        KIND_HELLO => Ok(Message::Hello(Hello {
            version: body[2],
            left_count: body[3],
            right_count: body[4],
        })),
        KIND_CALIB => {
            let action = CalibAction::from_byte(body[2])
                .ok_or(DecodeError::MalformedField("calib action"))?;
            Ok(Message::Calib(Calib {
                action,
                intensity: body[3],
            }))
        }
        KIND_TOUCH => {
            let seq = Seq16(u16::from_be_bytes([body[2], body[3]]));
            let timestamp_us = u32::from_be_bytes([body[4], body[5], body[6], body[7]]);
            let mut raw = [0u8; 8];
            raw[..MASK_BYTES].copy_from_slice(&body[8..8 + MASK_BYTES]);
            let bits = u64::from_le_bytes(raw);
            let width = layout.total().min(MASK_BITS);
            if bits >> width != 0 {
                return Err(DecodeError::MalformedMask(width));
            }
            let mask = TouchMask::from_bits(layout.total(), bits)
                .map_err(|_| DecodeError::MalformedMask(width))?;
            Ok(Message::Touch(TouchFrame {
                seq,
                timestamp_us,
                mask,
                intensity: body[15],
            }))
        }
        _ => Ok(Message::Bye),
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Hello(h) => write!(
                f,
                "HELLO version={} layout={},{}",
                h.version, h.left_count, h.right_count
            ),
            Message::Calib(c) => write!(f, "CALIB action={:?} intensity={}", c.action, c.intensity),
            Message::Touch(t) => write!(
                f,
                "TOUCH seq={} timestamp_us={} mask={} intensity={}",
                t.seq, t.timestamp_us, t.mask, t.intensity
            ),
            Message::Bye => f.write_str("BYE"),
        }
    }
}

/// Hex dump of `bytes` followed by the parsed message or the decode error.
pub fn dump(bytes: &[u8], layout: &ElectrodeLayout) -> String {
    let mut out = String::new();
    for (i, b) in bytes.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{b:02x}");
    }
    out.push('\n');
    match decode_with_layout(bytes, layout) {
        Ok(msg) => {
            let _ = write!(out, "{msg}");
        }
        Err(e) => {
            let _ = write!(out, "error {e}");
        }
    }
    out
}

/// Parses whitespace-separated or contiguous hex digits.
pub fn parse_hex(text: &str) -> Option<Vec<u8>> {
    let digits: Vec<u8> = text
        .bytes()
        .filter(|b| !b.is_ascii_whitespace() && *b != b':')
        .collect();
    if !digits.len().is_multiple_of(2) {
        return None;
    }
    digits
        .chunks(2)
        .map(|pair| {
            let s = std::str::from_utf8(pair).ok()?;
            u8::from_str_radix(s, 16).ok()
        })
        .collect()
}
