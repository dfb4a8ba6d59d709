//! Wire codec for the edge/base link. Every message is a self-delimiting
//! frame: magic, version, a type byte, a little-endian payload, and a CRC32
//! over everything before it. Scans travel as f32 and decode bit-exactly.

use crate::nn::GuidanceTokens;
use crate::util::{crc32, ByteReader, ByteWriter};
use crate::world::{Directive, GoalSpec};
use crate::Pose2;
use thiserror::Error;

pub const WIRE_MAGIC: [u8; 4] = *b"AVLA";
pub const WIRE_VERSION: u8 = 1;
const TYPE_OBS: u8 = 0;
const TYPE_GUIDANCE: u8 = 1;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("corrupt frame: {0}")]
    CorruptFrame(&'static str),
}

/// An observation as sent up the link.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsMessage {
    /// Sender's stamp, microseconds since episode start.
    pub stamp: u64,
    pub odom: Pose2,
    pub scan: Vec<f32>,
    pub goal: GoalSpec,
}

/// Guidance as sent down the link: the stamp of the observation it answers,
/// plus the token block.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMessage {
    pub echo_stamp: u64,
    pub tokens: GuidanceTokens,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Obs(ObsMessage),
    Guidance(GuidanceMessage),
}

fn directive_to_u8(d: Directive) -> u8 {
    d.index() as u8
}

fn directive_from_u8(b: u8) -> Result<Directive, CodecError> {
    Ok(match b {
        0 => Directive::None,
        1 => Directive::PassLeft,
        2 => Directive::PassRight,
        3 => Directive::HugWall,
        4 => Directive::StopShort,
        _ => return Err(CodecError::CorruptFrame("unknown directive")),
    })
}

pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(&WIRE_MAGIC);
    w.u8(WIRE_VERSION);
    match msg {
        WireMessage::Obs(o) => {
            w.u8(TYPE_OBS);
            w.u64(o.stamp);
            w.f64(o.odom.x);
            w.f64(o.odom.y);
            w.f64(o.odom.theta);
            w.f64(o.goal.pose.x);
            w.f64(o.goal.pose.y);
            w.f64(o.goal.pose.theta);
            w.u8(directive_to_u8(o.goal.directive));
            w.u16(o.scan.len() as u16);
            for &r in &o.scan {
                w.f32(r);
            }
        }
        WireMessage::Guidance(g) => {
            w.u8(TYPE_GUIDANCE);
            w.u64(g.echo_stamp);
            let rows = g.tokens.tokens.len();
            let cols = g.tokens.tokens.first().map_or(0, Vec::len);
            w.u8(rows as u8);
            w.u8(cols as u8);
            for row in &g.tokens.tokens {
                debug_assert_eq!(row.len(), cols);
                for &v in row {
                    w.f32(v);
                }
            }
        }
    }
    w.finish_crc()
}

pub fn decode(bytes: &[u8]) -> Result<WireMessage, CodecError> {
    if bytes.len() < 10 {
        return Err(CodecError::CorruptFrame("frame too short"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
    if crc32(body) != stored {
        return Err(CodecError::CorruptFrame("checksum mismatch"));
    }
    let mut r = ByteReader::new(body);
    let short = |_| CodecError::CorruptFrame("payload truncated");
    let mut magic = [0u8; 4];
    for b in &mut magic {
        *b = r.u8().map_err(short)?;
    }
    if magic != WIRE_MAGIC {
        return Err(CodecError::CorruptFrame("bad magic"));
    }
    if r.u8().map_err(short)? != WIRE_VERSION {
        return Err(CodecError::CorruptFrame("unsupported version"));
    }
    match r.u8().map_err(short)? {
        TYPE_OBS => {
            let stamp = r.u64().map_err(short)?;
            let odom = Pose2::new(
                r.f64().map_err(short)?,
                r.f64().map_err(short)?,
                r.f64().map_err(short)?,
            );
            let gp = Pose2::new(
                r.f64().map_err(short)?,
                r.f64().map_err(short)?,
                r.f64().map_err(short)?,
            );
            let directive = directive_from_u8(r.u8().map_err(short)?)?;
            let n = r.u16().map_err(short)? as usize;
            let mut scan = Vec::with_capacity(n);
            for _ in 0..n {
                scan.push(r.f32().map_err(short)?);
            }
            if !r.is_empty() {
                return Err(CodecError::CorruptFrame("trailing bytes"));
            }
            Ok(WireMessage::Obs(ObsMessage {
                stamp,
                odom,
                scan,
                goal: GoalSpec { pose: gp, directive },
            }))
        }
        TYPE_GUIDANCE => {
            let echo_stamp = r.u64().map_err(short)?;
            let rows = r.u8().map_err(short)? as usize;
            let cols = r.u8().map_err(short)? as usize;
            let mut tokens = Vec::with_capacity(rows);
            for _ in 0..rows {
                let mut row = Vec::with_capacity(cols);
                for _ in 0..cols {
                    row.push(r.f32().map_err(short)?);
                }
                tokens.push(row);
            }
            if !r.is_empty() {
                return Err(CodecError::CorruptFrame("trailing bytes"));
            }
            Ok(WireMessage::Guidance(GuidanceMessage {
                echo_stamp,
                tokens: GuidanceTokens { tokens },
            }))
        }
        _ => Err(CodecError::CorruptFrame("unknown message type")),
    }
}
