//! Canonical byte encoding shared by every signed or encrypted structure, and
//! the envelope format carried over the simulated network.
//!
//! Fields are written in declared order. Byte strings and text are written as a
//! 4-byte big-endian length followed by the raw bytes; integers are 8-byte
//! big-endian. Lists are encoded as a single length-prefixed field whose
//! contents are the length-prefixed items.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("unexpected end of input")]
    Truncated,
    #[error("{0} trailing bytes after last field")]
    TrailingBytes(usize),
    #[error("field is not valid utf-8")]
    InvalidUtf8,
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("invalid field value: {0}")]
    InvalidValue(String),
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, data: &[u8]) -> Self {
        self.buf.extend_from_slice(&(data.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(data);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn list<I, T>(self, items: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        let mut inner = Encoder::new();
        for item in items {
            inner = inner.bytes(item.as_ref());
        }
        self.bytes(&inner.finish())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    input: &'a [u8],
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Decoder { input }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.input.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.input.split_at(n);
        self.input = tail;
        Ok(head)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let len = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize;
        self.take(len)
    }

    pub fn str(&mut self) -> Result<&'a str, WireError> {
        std::str::from_utf8(self.bytes()?).map_err(|_| WireError::InvalidUtf8)
    }

    pub fn string(&mut self) -> Result<String, WireError> {
        self.str().map(str::to_owned)
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn list(&mut self) -> Result<Vec<&'a [u8]>, WireError> {
        let mut inner = Decoder::new(self.bytes()?);
        let mut items = Vec::new();
        while !inner.input.is_empty() {
            items.push(inner.bytes()?);
        }
        Ok(items)
    }

    /// Fails unless every byte has been consumed.
    pub fn finish(self) -> Result<(), WireError> {
        if self.input.is_empty() {
            Ok(())
        } else {
            Err(WireError::TrailingBytes(self.input.len()))
        }
    }
}

/// One-byte message discriminator used in [`Envelope`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    AsRequest,
    MA,
    MB,
    MC,
    MD,
    ME,
    MF,
    MG,
    MH,
    Reject,
    ClientHello,
    ServerSelect,
    KeyExchange,
    Record,
}

impl Tag {
    pub const ALL: [Tag; 14] = [
        Tag::AsRequest,
        Tag::MA,
        Tag::MB,
        Tag::MC,
        Tag::MD,
        Tag::ME,
        Tag::MF,
        Tag::MG,
        Tag::MH,
        Tag::Reject,
        Tag::ClientHello,
        Tag::ServerSelect,
        Tag::KeyExchange,
        Tag::Record,
    ];

    pub fn to_byte(self) -> u8 {
        match self {
            Tag::AsRequest => 0x00,
            Tag::MA => 0x01,
            Tag::MB => 0x02,
            Tag::MC => 0x03,
            Tag::MD => 0x04,
            Tag::ME => 0x05,
            Tag::MF => 0x06,
            Tag::MG => 0x07,
            Tag::MH => 0x08,
            Tag::Reject => 0x0f,
            Tag::ClientHello => 0x20,
            Tag::ServerSelect => 0x21,
            Tag::KeyExchange => 0x22,
            Tag::Record => 0x30,
        }
    }

    pub fn from_byte(b: u8) -> Result<Tag, WireError> {
        Tag::ALL
            .into_iter()
            .find(|t| t.to_byte() == b)
            .ok_or(WireError::UnknownTag(b))
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::AsRequest => "AS_REQ",
            Tag::MA => "M_A",
            Tag::MB => "M_B",
            Tag::MC => "M_C",
            Tag::MD => "M_D",
            Tag::ME => "M_E",
            Tag::MF => "M_F",
            Tag::MG => "M_G",
            Tag::MH => "M_H",
            Tag::Reject => "REJECT",
            Tag::ClientHello => "CLIENT_HELLO",
            Tag::ServerSelect => "SERVER_SELECT",
            Tag::KeyExchange => "KEY_EXCHANGE",
            Tag::Record => "RECORD",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Wire frame: tag byte, 8-byte session id, 4-byte body length, body.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Envelope {
    pub tag: Tag,
    pub session_id: u64,
    pub body: Vec<u8>,
}

impl Envelope {
    pub const HEADER_LEN: usize = 1 + 8 + 4;

    pub fn new(tag: Tag, session_id: u64, body: Vec<u8>) -> Self {
        Envelope {
            tag,
            session_id,
            body,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::HEADER_LEN + self.body.len());
        out.push(self.tag.to_byte());
        out.extend_from_slice(&self.session_id.to_be_bytes());
        out.extend_from_slice(&(self.body.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Envelope, WireError> {
        if bytes.len() < Self::HEADER_LEN {
            return Err(WireError::Truncated);
        }
        let tag = Tag::from_byte(bytes[0])?;
        let session_id = u64::from_be_bytes(bytes[1..9].try_into().unwrap());
        let len = u32::from_be_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let body = &bytes[Self::HEADER_LEN..];
        if body.len() < len {
            return Err(WireError::Truncated);
        }
        if body.len() > len {
            return Err(WireError::TrailingBytes(body.len() - len));
        }
        Ok(Envelope::new(tag, session_id, body.to_vec()))
    }
}
