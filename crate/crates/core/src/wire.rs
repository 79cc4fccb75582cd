//! Framed binary messages: `"PPSM" | version u16 | type u8 | body_len u64 | body`.
//! All integers are big-endian; ciphertext arrays carry a u32 element count.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::PublicKey;
use crate::protocol::{EncryptedFilter, MatchQuery, MatchResponse, ProtocolParams, SessionId};

pub const WIRE_MAGIC: &[u8; 4] = b"PPSM";
pub const WIRE_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 8;
/// Upper bound on a frame body accepted from a peer.
pub const MAX_BODY_LEN: u64 = 1 << 31;

pub const MSG_HELLO: u8 = 1;
pub const MSG_QUERY: u8 = 2;
pub const MSG_RESPONSE: u8 = 3;
pub const MSG_ERROR: u8 = 4;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed frame: {0}")]
    Decode(#[from] DecodeError),
    #[error("frame body of {0} bytes exceeds the limit")]
    BodyTooLarge(u64),
    #[error("unexpected message type {0}")]
    UnexpectedType(u8),
    #[error("peer reported error {code:?}: {message}")]
    Remote { code: ErrorCode, message: String },
}

/// Codes carried by ERROR frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    UnexpectedMessage,
    ParamsMismatch,
    Malformed,
    EvaluationFailed,
}

impl ErrorCode {
    pub fn code(self) -> u8 {
        match self {
            ErrorCode::UnexpectedMessage => 1,
            ErrorCode::ParamsMismatch => 2,
            ErrorCode::Malformed => 3,
            ErrorCode::EvaluationFailed => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            1 => ErrorCode::UnexpectedMessage,
            2 => ErrorCode::ParamsMismatch,
            3 => ErrorCode::Malformed,
            4 => ErrorCode::EvaluationFailed,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: u8, body: Vec<u8>) -> Self {
        Frame { msg_type, body }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.body.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(WIRE_MAGIC)
            .u16(WIRE_VERSION)
            .u8(self.msg_type)
            .u64(self.body.len() as u64)
            .bytes(&self.body);
        w.into_bytes()
    }

    /// Parses one frame from the front of `buf`, returning it with the bytes consumed.
    pub fn parse(buf: &[u8]) -> Result<(Frame, usize), WireError> {
        let mut r = Reader::new(buf);
        let (msg_type, len) = parse_header(&mut r)?;
        let body = r.take(len as usize)?.to_vec();
        Ok((Frame { msg_type, body }, r.position()))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<usize> {
        let bytes = self.to_bytes();
        out.write_all(&bytes)?;
        Ok(bytes.len())
    }

    /// Reads one frame. The body is read incrementally, so a lying length prefix only costs
    /// what the peer actually sends.
    pub fn read_from<R: Read>(input: &mut R) -> Result<Frame, WireError> {
        let mut header = [0u8; HEADER_LEN];
        input.read_exact(&mut header)?;
        let (msg_type, len) = parse_header(&mut Reader::new(&header))?;
        let mut body = Vec::new();
        let got = input.take(len).read_to_end(&mut body)?;
        if (got as u64) < len {
            return Err(DecodeError::Truncated {
                offset: HEADER_LEN + got,
                needed: (len - got as u64) as usize,
            }
            .into());
        }
        Ok(Frame { msg_type, body })
    }
}

fn parse_header(r: &mut Reader<'_>) -> Result<(u8, u64), WireError> {
    r.magic(WIRE_MAGIC)?;
    r.version(WIRE_VERSION)?;
    let msg_type = r.u8()?;
    let len = r.u64()?;
    if len > MAX_BODY_LEN {
        return Err(WireError::BodyTooLarge(len));
    }
    Ok((msg_type, len))
}

/// A decoded message. RESPONSE bodies need the client's key to know the ciphertext width.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Message {
    Hello { params_digest: [u8; 32] },
    Query(MatchQuery),
    Response(MatchResponse),
    Error { code: ErrorCode, message: String },
}

impl Message {
    /// `pk` is only consulted for RESPONSE messages.
    pub fn to_frame(&self, pk: Option<&PublicKey>) -> Result<Frame, WireError> {
        Ok(match self {
            Message::Hello { params_digest } => Frame::new(MSG_HELLO, params_digest.to_vec()),
            Message::Query(q) => Frame::new(MSG_QUERY, encode_query(q)),
            Message::Response(resp) => {
                let pk = pk.ok_or(WireError::UnexpectedType(MSG_RESPONSE))?;
                Frame::new(MSG_RESPONSE, encode_response(resp, pk))
            }
            Message::Error { code, message } => Frame::new(MSG_ERROR, encode_error(*code, message)),
        })
    }

    pub fn from_frame(frame: &Frame, pk: Option<&PublicKey>) -> Result<Self, WireError> {
        match frame.msg_type {
            MSG_HELLO => Ok(Message::Hello {
                params_digest: decode_hello(&frame.body)?,
            }),
            MSG_QUERY => Ok(Message::Query(decode_query(&frame.body)?)),
            MSG_RESPONSE => {
                let pk = pk.ok_or(WireError::UnexpectedType(MSG_RESPONSE))?;
                Ok(Message::Response(decode_response(&frame.body, pk)?))
            }
            MSG_ERROR => {
                let (code, message) = decode_error(&frame.body)?;
                Ok(Message::Error { code, message })
            }
            other => Err(WireError::UnexpectedType(other)),
        }
    }
}

pub fn decode_hello(body: &[u8]) -> Result<[u8; 32], DecodeError> {
    let mut r = Reader::new(body);
    let digest = r.array::<32>()?;
    r.finish()?;
    Ok(digest)
}

fn count_u32(n: usize, field: &'static str) -> u32 {
    u32::try_from(n).unwrap_or_else(|_| panic!("{field} count exceeds u32"))
}

pub fn encode_query(q: &MatchQuery) -> Vec<u8> {
    let mut w = Writer::new();
    w.blob(&q.params.to_bytes())
        .blob(&q.pk.to_bytes())
        .bytes(&q.session_id)
        .u32(count_u32(q.filter.cells.len(), "cell"));
    for c in &q.filter.cells {
        q.pk.encode_ciphertext(&mut w, c);
    }
    q.pk.encode_ciphertext(&mut w, &q.filter.enc_cardinality);
    w.into_bytes()
}

pub fn decode_query(body: &[u8]) -> Result<MatchQuery, DecodeError> {
    let mut r = Reader::new(body);
    let params = ProtocolParams::from_bytes(r.blob()?)?;
    let pk = PublicKey::from_bytes(r.blob()?)
        .map_err(|e| DecodeError::invalid("public_key", e.to_string()))?;
    if pk.scheme() != params.scheme() {
        return Err(DecodeError::invalid("public_key", "scheme differs from parameters"));
    }
    let session_id: SessionId = r.array()?;
    let count = r.u32()? as u64;
    if count != params.bloom().length_bits() {
        return Err(DecodeError::invalid(
            "cells",
            format!("{count} cells for a {}-bit filter", params.bloom().length_bits()),
        ));
    }
    let width = pk.ciphertext_width() as u64;
    if (r.remaining() as u64) != (count + 1) * width {
        return Err(DecodeError::invalid("cells", "body length disagrees with cell count"));
    }
    let cells = (0..count)
        .map(|_| pk.decode_ciphertext(&mut r))
        .collect::<Result<Vec<_>, _>>()?;
    let enc_cardinality = pk.decode_ciphertext(&mut r)?;
    r.finish()?;
    Ok(MatchQuery {
        params,
        pk,
        session_id,
        filter: EncryptedFilter {
            cells,
            enc_cardinality,
        },
    })
}

pub fn encode_response(resp: &MatchResponse, pk: &PublicKey) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&resp.session_id)
        .u32(count_u32(resp.masked.len(), "response"));
    for c in &resp.masked {
        pk.encode_ciphertext(&mut w, c);
    }
    w.into_bytes()
}

pub fn decode_response(body: &[u8], pk: &PublicKey) -> Result<MatchResponse, DecodeError> {
    let mut r = Reader::new(body);
    let session_id: SessionId = r.array()?;
    let count = r.u32()? as u64;
    let width = pk.ciphertext_width() as u64;
    if (r.remaining() as u64) != count * width {
        return Err(DecodeError::invalid("masked", "body length disagrees with count"));
    }
    let masked = (0..count)
        .map(|_| pk.decode_ciphertext(&mut r))
        .collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(MatchResponse { session_id, masked })
}

pub fn encode_error(code: ErrorCode, message: &str) -> Vec<u8> {
    let mut msg = message.as_bytes();
    if msg.len() > u16::MAX as usize {
        let mut cut = u16::MAX as usize;
        while !message.is_char_boundary(cut) {
            cut -= 1;
        }
        msg = &msg[..cut];
    }
    let mut w = Writer::new();
    w.u8(code.code()).u16(msg.len() as u16).bytes(msg);
    w.into_bytes()
}

pub fn decode_error(body: &[u8]) -> Result<(ErrorCode, String), DecodeError> {
    let mut r = Reader::new(body);
    let raw = r.u8()?;
    let code = ErrorCode::from_code(raw)
        .ok_or_else(|| DecodeError::invalid("error_code", format!("unknown code {raw}")))?;
    let len = r.u16()? as usize;
    let message = std::str::from_utf8(r.take(len)?)
        .map_err(|_| DecodeError::invalid("error_message", "not UTF-8"))?
        .to_owned();
    r.finish()?;
    Ok((code, message))
}
