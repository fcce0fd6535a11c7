//! Binary framing for remote reads. All integers little-endian.
//!
//! ```text
//! request : magic u32 | type u8 (1=read, 2=read+prefetch) | file_id u64 | requester u64 | remaining_budget u64
//! response: magic u32 | type u8 (3) | P u16 | map ceil(P/8) bytes | per set bit: file_id u64, length u64, payload
//! error   : magic u32 | type u8 (4) | code u32 | message length u16 | message
//! ```
//!
//! Map bit `j` lives in byte `j / 8` at bit position `j % 8`.

use crate::error::{Error, WireError};
use crate::protocol::remote::RemoteResponse;
use crate::storage::Payload;

pub const MAGIC: u32 = 0x5244_5851;
pub const REQUEST_LEN: usize = 4 + 1 + 8 + 8 + 8;

const TYPE_READ: u8 = 1;
const TYPE_READ_PREFETCH: u8 = 2;
const TYPE_RESPONSE: u8 = 3;
const TYPE_ERROR: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Read,
    ReadAndPrefetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub kind: RequestKind,
    pub file_id: u64,
    pub requester: u64,
    pub remaining_budget: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorResponse {
    pub code: u32,
    pub message: String,
}

impl ErrorResponse {
    pub const STORAGE: u32 = 1;
    pub const PROTOCOL: u32 = 2;
    pub const OTHER: u32 = 3;

    pub fn from_error(err: &Error) -> Self {
        let code = match err {
            Error::Storage(_) => Self::STORAGE,
            Error::Protocol(_) => Self::PROTOCOL,
            _ => Self::OTHER,
        };
        let mut message = err.to_string();
        if message.len() > u16::MAX as usize {
            let mut cut = u16::MAX as usize;
            while !message.is_char_boundary(cut) {
                cut -= 1;
            }
            message.truncate(cut);
        }
        Self { code, message }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Request(Request),
    Response(RemoteResponse),
    Error(ErrorResponse),
}

impl Request {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(REQUEST_LEN);
        out.extend_from_slice(&MAGIC.to_le_bytes());
        out.push(match self.kind {
            RequestKind::Read => TYPE_READ,
            RequestKind::ReadAndPrefetch => TYPE_READ_PREFETCH,
        });
        out.extend_from_slice(&self.file_id.to_le_bytes());
        out.extend_from_slice(&self.requester.to_le_bytes());
        out.extend_from_slice(&self.remaining_budget.to_le_bytes());
        out
    }
}

fn map_bytes(p: usize) -> usize {
    p.div_ceil(8)
}

/// Encoded size of `resp` without materializing payload bytes.
pub fn response_len(resp: &RemoteResponse) -> usize {
    4 + 1 + 2 + map_bytes(resp.map.len()) + resp.payloads.iter().map(|p| 16 + p.len() as usize).sum::<usize>()
}

pub fn encode_response(resp: &RemoteResponse) -> Vec<u8> {
    let mut out = Vec::with_capacity(response_len(resp));
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.push(TYPE_RESPONSE);
    out.extend_from_slice(&(resp.map.len() as u16).to_le_bytes());
    let mut map = vec![0u8; map_bytes(resp.map.len())];
    for (j, &bit) in resp.map.iter().enumerate() {
        if bit {
            map[j / 8] |= 1 << (j % 8);
        }
    }
    out.extend_from_slice(&map);
    for p in &resp.payloads {
        out.extend_from_slice(&(p.file_id() as u64).to_le_bytes());
        out.extend_from_slice(&p.len().to_le_bytes());
        out.extend_from_slice(&p.bytes());
    }
    out
}

pub fn encode_error(err: &ErrorResponse) -> Vec<u8> {
    let mut out = Vec::with_capacity(11 + err.message.len());
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.push(TYPE_ERROR);
    out.extend_from_slice(&err.code.to_le_bytes());
    out.extend_from_slice(&(err.message.len() as u16).to_le_bytes());
    out.extend_from_slice(err.message.as_bytes());
    out
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Message::Request(r) => r.encode(),
            Message::Response(r) => encode_response(r),
            Message::Error(e) => encode_error(e),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let have = self.buf.len() - self.at;
        if n > have {
            return Err(WireError::Truncated {
                at: self.at,
                need: n,
                have,
            });
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader { buf, at: 0 };
    let magic = r.u32()?;
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let msg = match r.u8()? {
        t @ (TYPE_READ | TYPE_READ_PREFETCH) => Message::Request(Request {
            kind: if t == TYPE_READ {
                RequestKind::Read
            } else {
                RequestKind::ReadAndPrefetch
            },
            file_id: r.u64()?,
            requester: r.u64()?,
            remaining_budget: r.u64()?,
        }),
        TYPE_RESPONSE => {
            let p = r.u16()? as usize;
            let raw = r.take(map_bytes(p))?;
            let map: Vec<bool> = (0..p).map(|j| raw[j / 8] & (1 << (j % 8)) != 0).collect();
            let mut payloads = Vec::new();
            for _ in map.iter().filter(|&&b| b) {
                let id = r.u64()?;
                let len = r.u64()?;
                let len = usize::try_from(len).map_err(|_| WireError::Truncated {
                    at: r.at,
                    need: usize::MAX,
                    have: buf.len() - r.at,
                })?;
                payloads.push(Payload::from_bytes(id as usize, r.take(len)?.to_vec()));
            }
            Message::Response(RemoteResponse { map, payloads })
        }
        TYPE_ERROR => {
            let code = r.u32()?;
            let len = r.u16()? as usize;
            let message = std::str::from_utf8(r.take(len)?)
                .map_err(|_| WireError::Utf8)?
                .to_owned();
            Message::Error(ErrorResponse { code, message })
        }
        other => return Err(WireError::UnknownType(other)),
    };
    if r.at != buf.len() {
        return Err(WireError::Trailing(buf.len() - r.at));
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn request_layout_is_bit_exact() {
        let req = Request {
            kind: RequestKind::ReadAndPrefetch,
            file_id: 0x0102,
            requester: 3,
            remaining_budget: 7,
        };
        let bytes = req.encode();
        assert_eq!(bytes.len(), REQUEST_LEN);
        assert_eq!(&bytes[..5], &[0x51, 0x58, 0x44, 0x52, 2]);
        assert_eq!(&bytes[5..13], &[0x02, 0x01, 0, 0, 0, 0, 0, 0]);
        assert_eq!(decode(&bytes).unwrap(), Message::Request(req));
    }

    #[test]
    fn response_layout_is_bit_exact() {
        let resp = RemoteResponse {
            map: vec![true, false, false, false, false, false, false, false, false, true],
            payloads: vec![
                Payload::from_bytes(5, vec![0xAA]),
                Payload::from_bytes(6, vec![0xBB, 0xCC]),
            ],
        };
        let bytes = encode_response(&resp);
        assert_eq!(bytes.len(), response_len(&resp));
        assert_eq!(bytes[4], 3);
        assert_eq!(u16::from_le_bytes([bytes[5], bytes[6]]), 10);
        assert_eq!(&bytes[7..9], &[0b0000_0001, 0b0000_0010]);
        assert_eq!(u64::from_le_bytes(bytes[9..17].try_into().unwrap()), 5);
        assert_eq!(u64::from_le_bytes(bytes[17..25].try_into().unwrap()), 1);
        assert_eq!(bytes[25], 0xAA);
        assert_eq!(decode(&bytes).unwrap(), Message::Response(resp));
    }

    #[test]
    fn synthetic_payloads_encode_their_bytes() {
        let p = Payload::synthetic(9, 40, 77);
        let resp = RemoteResponse {
            map: vec![true],
            payloads: vec![p.clone()],
        };
        let Message::Response(back) = decode(&encode_response(&resp)).unwrap() else {
            panic!()
        };
        assert_eq!(back.payloads[0], p);
    }

    #[test]
    fn error_round_trip() {
        let e = ErrorResponse {
            code: ErrorResponse::STORAGE,
            message: "disk on fire".into(),
        };
        let bytes = encode_error(&e);
        assert_eq!(bytes[4], 4);
        assert_eq!(decode(&bytes).unwrap(), Message::Error(e));
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(matches!(decode(&[1, 2, 3, 4, 1]), Err(WireError::BadMagic(_))));
        let mut bytes = MAGIC.to_le_bytes().to_vec();
        bytes.push(9);
        assert_eq!(decode(&bytes), Err(WireError::UnknownType(9)));
        let req = Request {
            kind: RequestKind::Read,
            file_id: 1,
            requester: 0,
            remaining_budget: 0,
        }
        .encode();
        assert!(matches!(decode(&req[..20]), Err(WireError::Truncated { .. })));
        let mut long = req.clone();
        long.push(0);
        assert_eq!(decode(&long), Err(WireError::Trailing(1)));
    }

    proptest! {
        #[test]
        fn response_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
            let mut map = bits;
            map[0] = true;
            let payloads = map
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(j, _)| Payload::synthetic(j * 3, (seed % 17) + j as u64, seed))
                .collect();
            let resp = RemoteResponse { map, payloads };
            let bytes = encode_response(&resp);
            prop_assert_eq!(bytes.len(), response_len(&resp));
            prop_assert_eq!(decode(&bytes).unwrap(), Message::Response(resp));
        }
    }
}
