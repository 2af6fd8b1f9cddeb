//! Wire messages and their length-prefixed binary framing.
//!
//! ```text
//! +-----------+---------+-----------+--------------+-----+-----------+
//! | len u32LE | ver u8  | sender u16| request_id u64 | tag | payload   |
//! +-----------+---------+-----------+--------------+-----+-----------+
//!             |<------------------ len bytes ------------------------>|
//! ```
//!
//! Payloads:
//!
//! | tag | variant           | payload                                          |
//! |-----|-------------------|--------------------------------------------------|
//! | 1   | `PingRequest`     | empty                                            |
//! | 2   | `PingResponse`    | own_version u64                                  |
//! | 3   | `WeightsRequest`  | empty                                            |
//! | 4   | `WeightsResponse` | sample_count u32, param count u32, params f64 x n |
//! | 5   | `Error`           | code u16, text length u32, UTF-8 text           |
//!
//! Every integer and real is little-endian.

use std::io::Read;

use thiserror::Error;

pub const PROTOCOL_VERSION: u8 = 1;
pub const LENGTH_PREFIX: usize = 4;
pub const HEADER_LEN: usize = 12;
pub const DEFAULT_MAX_FRAME: usize = 64 * 1024 * 1024;

pub const ERR_VERSION_MISMATCH: u16 = 1;
pub const ERR_BAD_REQUEST: u16 = 2;

const TAG_PING_REQUEST: u8 = 1;
const TAG_PING_RESPONSE: u8 = 2;
const TAG_WEIGHTS_REQUEST: u8 = 3;
const TAG_WEIGHTS_RESPONSE: u8 = 4;
const TAG_ERROR: u8 = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("incomplete frame: need {needed} bytes, have {available}")]
    Incomplete { needed: usize, available: usize },
    #[error("frame of {len} bytes exceeds limit of {max}")]
    Oversize { len: usize, max: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub protocol_version: u8,
    pub sender: u16,
    pub request_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    PingRequest,
    PingResponse { own_version: u64 },
    WeightsRequest,
    WeightsResponse { sample_count: u32, params: Vec<f64> },
    Error { code: u16, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    PingRequest,
    PingResponse,
    WeightsRequest,
    WeightsResponse,
    Error,
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::PingRequest => MessageKind::PingRequest,
            Body::PingResponse { .. } => MessageKind::PingResponse,
            Body::WeightsRequest => MessageKind::WeightsRequest,
            Body::WeightsResponse { .. } => MessageKind::WeightsResponse,
            Body::Error { .. } => MessageKind::Error,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Body::PingRequest => TAG_PING_REQUEST,
            Body::PingResponse { .. } => TAG_PING_RESPONSE,
            Body::WeightsRequest => TAG_WEIGHTS_REQUEST,
            Body::WeightsResponse { .. } => TAG_WEIGHTS_RESPONSE,
            Body::Error { .. } => TAG_ERROR,
        }
    }

    fn payload_len(&self) -> usize {
        match self {
            Body::PingRequest | Body::WeightsRequest => 0,
            Body::PingResponse { .. } => 8,
            Body::WeightsResponse { params, .. } => 8 + 8 * params.len(),
            Body::Error { text, .. } => 6 + text.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub header: Header,
    pub body: Body,
}

impl Message {
    pub fn new(sender: u16, request_id: u64, body: Body) -> Self {
        Self {
            header: Header {
                protocol_version: PROTOCOL_VERSION,
                sender,
                request_id,
            },
            body,
        }
    }

    /// Total encoded size including the length prefix.
    pub fn frame_len(&self) -> usize {
        LENGTH_PREFIX + HEADER_LEN + self.body.payload_len()
    }
}

/// Frame size of a `WeightsResponse` carrying `params` reals.
pub fn weights_frame_len(params: usize) -> usize {
    LENGTH_PREFIX + HEADER_LEN + 8 + 8 * params
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let body_len = HEADER_LEN + msg.body.payload_len();
    let mut out = Vec::with_capacity(LENGTH_PREFIX + body_len);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.push(msg.header.protocol_version);
    out.extend_from_slice(&msg.header.sender.to_le_bytes());
    out.extend_from_slice(&msg.header.request_id.to_le_bytes());
    out.push(msg.body.tag());
    match &msg.body {
        Body::PingRequest | Body::WeightsRequest => {}
        Body::PingResponse { own_version } => out.extend_from_slice(&own_version.to_le_bytes()),
        Body::WeightsResponse { sample_count, params } => {
            out.extend_from_slice(&sample_count.to_le_bytes());
            out.extend_from_slice(&(params.len() as u32).to_le_bytes());
            for p in params {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        Body::Error { code, text } => {
            out.extend_from_slice(&code.to_le_bytes());
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Message, CodecError> {
    decode_with_limit(bytes, DEFAULT_MAX_FRAME)
}

/// Decodes exactly one frame; trailing bytes are a protocol error.
pub fn decode_with_limit(bytes: &[u8], max_frame: usize) -> Result<Message, CodecError> {
    if bytes.len() < LENGTH_PREFIX {
        return Err(CodecError::Incomplete {
            needed: LENGTH_PREFIX,
            available: bytes.len(),
        });
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    if len > max_frame {
        return Err(CodecError::Oversize { len, max: max_frame });
    }
    let available = bytes.len() - LENGTH_PREFIX;
    if available < len {
        return Err(CodecError::Incomplete { needed: len, available });
    }
    if available > len {
        return Err(CodecError::Protocol(format!("{} trailing bytes after frame", available - len)));
    }
    decode_body(&bytes[LENGTH_PREFIX..])
}

/// Decodes the part of a frame after the length prefix.
pub fn decode_body(frame: &[u8]) -> Result<Message, CodecError> {
    let mut cur = Cursor { buf: frame, pos: 0 };
    let header = Header {
        protocol_version: cur.u8()?,
        sender: cur.u16()?,
        request_id: cur.u64()?,
    };
    let tag = cur.u8()?;
    let body = match tag {
        TAG_PING_REQUEST => Body::PingRequest,
        TAG_PING_RESPONSE => Body::PingResponse { own_version: cur.u64()? },
        TAG_WEIGHTS_REQUEST => Body::WeightsRequest,
        TAG_WEIGHTS_RESPONSE => {
            let sample_count = cur.u32()?;
            let n = cur.u32()? as usize;
            if cur.remaining() != n.saturating_mul(8) {
                return Err(CodecError::Protocol(format!(
                    "weights payload declares {n} params but carries {} bytes",
                    cur.remaining()
                )));
            }
            let mut params = Vec::with_capacity(n);
            for _ in 0..n {
                let p = cur.f64()?;
                if !p.is_finite() {
                    return Err(CodecError::Protocol("non-finite parameter".into()));
                }
                params.push(p);
            }
            Body::WeightsResponse { sample_count, params }
        }
        TAG_ERROR => {
            let code = cur.u16()?;
            let n = cur.u32()? as usize;
            if cur.remaining() != n {
                return Err(CodecError::Protocol("error text length mismatch".into()));
            }
            let text = std::str::from_utf8(cur.take(n)?)
                .map_err(|_| CodecError::Protocol("error text is not UTF-8".into()))?
                .to_owned();
            Body::Error { code, text }
        }
        other => return Err(CodecError::Protocol(format!("unknown message tag {other:#04x}"))),
    };
    if cur.remaining() != 0 {
        return Err(CodecError::Protocol(format!("{} unexpected payload bytes", cur.remaining())));
    }
    Ok(Message { header, body })
}

/// Reads one whole frame (prefix included) from a stream.
pub fn read_frame<R: Read>(reader: &mut R, max_frame: usize) -> std::io::Result<Vec<u8>> {
    let mut prefix = [0u8; LENGTH_PREFIX];
    reader.read_exact(&mut prefix)?;
    let len = u32::from_le_bytes(prefix) as usize;
    if len > max_frame {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            CodecError::Oversize { len, max: max_frame },
        ));
    }
    let mut frame = vec![0u8; LENGTH_PREFIX + len];
    frame[..LENGTH_PREFIX].copy_from_slice(&prefix);
    reader.read_exact(&mut frame[LENGTH_PREFIX..])?;
    Ok(frame)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Protocol(format!(
                "frame truncated: need {n} more bytes, have {}",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ping_request_is_sixteen_bytes() {
        let bytes = encode(&Message::new(3, 42, Body::PingRequest));
        assert_eq!(bytes.len(), 4 + 12);
        assert_eq!(&bytes[..4], &12u32.to_le_bytes());
        assert_eq!(bytes[4], PROTOCOL_VERSION);
        assert_eq!(&bytes[5..7], &3u16.to_le_bytes());
        assert_eq!(&bytes[7..15], &42u64.to_le_bytes());
        assert_eq!(bytes[15], 1);
    }

    #[test]
    fn weights_response_layout() {
        for p in [0usize, 1, 7, 164] {
            let msg = Message::new(
                0,
                1,
                Body::WeightsResponse {
                    sample_count: 2,
                    params: (0..p).map(|i| i as f64 * 0.5).collect(),
                },
            );
            let bytes = encode(&msg);
            assert_eq!(bytes.len(), 4 + 12 + 8 + 8 * p);
            assert_eq!(bytes.len(), weights_frame_len(p));
            assert_eq!(bytes.len(), msg.frame_len());
            assert_eq!(decode(&bytes).unwrap(), msg);
        }
    }

    #[test]
    fn empty_input_is_incomplete() {
        assert!(matches!(decode(&[]), Err(CodecError::Incomplete { .. })));
    }

    #[test]
    fn truncated_frame_is_incomplete() {
        let bytes = encode(&Message::new(1, 2, Body::PingResponse { own_version: 9 }));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(CodecError::Incomplete { .. })));
    }

    #[test]
    fn unknown_tag_is_protocol_error() {
        let mut bytes = encode(&Message::new(1, 2, Body::PingRequest));
        bytes[15] = 0xFF;
        assert!(matches!(decode(&bytes), Err(CodecError::Protocol(_))));
    }

    #[test]
    fn oversize_prefix_rejected() {
        let mut bytes = vec![0u8; 16];
        bytes[..4].copy_from_slice(&(DEFAULT_MAX_FRAME as u32 + 1).to_le_bytes());
        assert!(matches!(decode(&bytes), Err(CodecError::Oversize { .. })));
        assert!(matches!(
            decode_with_limit(&encode(&Message::new(0, 0, Body::PingRequest)), 8),
            Err(CodecError::Oversize { len: 12, max: 8 })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&Message::new(1, 2, Body::PingRequest));
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(CodecError::Protocol(_))));
    }

    #[test]
    fn non_finite_weights_rejected() {
        let mut bytes = encode(&Message::new(
            0,
            0,
            Body::WeightsResponse {
                sample_count: 1,
                params: vec![1.0],
            },
        ));
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(CodecError::Protocol(_))));
    }

    #[test]
    fn read_frame_from_stream() {
        let a = encode(&Message::new(1, 1, Body::PingRequest));
        let b = encode(&Message::new(2, 2, Body::WeightsRequest));
        let joined = [a.clone(), b.clone()].concat();
        let mut reader = joined.as_slice();
        assert_eq!(read_frame(&mut reader, DEFAULT_MAX_FRAME).unwrap(), a);
        assert_eq!(read_frame(&mut reader, DEFAULT_MAX_FRAME).unwrap(), b);
    }

    pub(crate) fn arb_message() -> impl Strategy<Value = Message> {
        let body = prop_oneof![
            Just(Body::PingRequest),
            any::<u64>().prop_map(|v| Body::PingResponse { own_version: v }),
            Just(Body::WeightsRequest),
            (any::<u32>(), prop::collection::vec(-1e6f64..1e6, 0..32))
                .prop_map(|(sample_count, params)| Body::WeightsResponse { sample_count, params }),
            (any::<u16>(), ".{0,24}").prop_map(|(code, text)| Body::Error { code, text }),
        ];
        (any::<u8>(), any::<u16>(), any::<u64>(), body).prop_map(|(v, sender, id, body)| Message {
            header: Header {
                protocol_version: v,
                sender,
                request_id: id,
            },
            body,
        })
    }

    proptest! {
        #[test]
        fn round_trip(msg in arb_message()) {
            let bytes = encode(&msg);
            prop_assert_eq!(bytes.len(), msg.frame_len());
            prop_assert_eq!(decode(&bytes).unwrap(), msg);
        }

        #[test]
        fn decode_is_total(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode(&bytes);
        }
    }
}
