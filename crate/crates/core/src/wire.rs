//! Frame format shared by the stream server, the broker verbs and the
//! master/worker link.
//!
//! A frame is one header line followed by a payload block:
//!
//! ```text
//! VERB \t field1 \t ... \t fieldN \t CORR \n
//! u32 big-endian payload length (0 = no payload)
//! payload bytes
//! ```
//!
//! Fields are UTF-8 with `\\`, tab and newline escaped as `\\\\`, `\\t` and
//! `\\n`. Responses echo the correlation id of their request; server pushes
//! use correlation id 0.

use std::fmt;
use std::io::{self, BufRead, Read, Write};
use std::str::FromStr;

use thiserror::Error;

pub const MAX_HEADER_BYTES: usize = 64 * 1024;
pub const MAX_PAYLOAD_BYTES: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verb {
    // stream metadata
    Register,
    Lookup,
    AddProd,
    AddCons,
    Close,
    Status,
    PollReq,
    PubReq,
    Invalidate,
    Bye,
    // broker
    Append,
    Fetch,
    Commit,
    NewTopic,
    DelTopic,
    // master/worker link
    Hello,
    Exec,
    Done,
    Fail,
    // responses
    Ok,
    Err,
}

const VERBS: &[(Verb, &str)] = &[
    (Verb::Register, "REGISTER"),
    (Verb::Lookup, "LOOKUP"),
    (Verb::AddProd, "ADDPROD"),
    (Verb::AddCons, "ADDCONS"),
    (Verb::Close, "CLOSE"),
    (Verb::Status, "STATUS"),
    (Verb::PollReq, "POLLREQ"),
    (Verb::PubReq, "PUBREQ"),
    (Verb::Invalidate, "INVALIDATE"),
    (Verb::Bye, "BYE"),
    (Verb::Append, "APPEND"),
    (Verb::Fetch, "FETCH"),
    (Verb::Commit, "COMMIT"),
    (Verb::NewTopic, "NEWTOPIC"),
    (Verb::DelTopic, "DELTOPIC"),
    (Verb::Hello, "HELLO"),
    (Verb::Exec, "EXEC"),
    (Verb::Done, "DONE"),
    (Verb::Fail, "FAIL"),
    (Verb::Ok, "OK"),
    (Verb::Err, "ERR"),
];

impl Verb {
    pub fn as_str(self) -> &'static str {
        VERBS.iter().find(|(v, _)| *v == self).map(|(_, s)| *s).unwrap()
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        VERBS
            .iter()
            .find(|(_, name)| *name == s)
            .map(|(v, _)| *v)
            .ok_or_else(|| format!("unknown verb `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub verb: Verb,
    pub fields: Vec<String>,
    pub corr: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(verb: Verb) -> Self {
        Frame {
            verb,
            fields: Vec::new(),
            corr: 0,
            payload: Vec::new(),
        }
    }

    pub fn field(mut self, value: impl ToString) -> Self {
        self.fields.push(value.to_string());
        self
    }

    pub fn with_payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = payload;
        self
    }

    pub fn with_corr(mut self, corr: u64) -> Self {
        self.corr = corr;
        self
    }

    pub fn ok(corr: u64) -> Self {
        Frame::new(Verb::Ok).with_corr(corr)
    }

    pub fn err(corr: u64, code: &str, message: impl ToString) -> Self {
        Frame::new(Verb::Err)
            .field(code)
            .field(message)
            .with_corr(corr)
    }

    /// Field `i`, or an empty string when absent.
    pub fn get(&self, i: usize) -> &str {
        self.fields.get(i).map(String::as_str).unwrap_or("")
    }

    pub fn opt(&self, i: usize) -> Option<&str> {
        self.fields
            .get(i)
            .map(String::as_str)
            .filter(|s| !s.is_empty())
    }

    pub fn parse<T: FromStr>(&self, i: usize) -> Result<T, WireError> {
        self.get(i).parse().map_err(|_| WireError::Malformed {
            corr: Some(self.corr),
            reason: format!("{} field {i} `{}` is not valid", self.verb, self.get(i)),
        })
    }

    pub fn require_fields(&self, n: usize) -> Result<(), WireError> {
        if self.fields.len() < n {
            return Err(WireError::Malformed {
                corr: Some(self.corr),
                reason: format!("{} expects {n} fields, got {}", self.verb, self.fields.len()),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    /// The frame was consumed in full but its header is not understood.
    /// The stream stays in sync and the connection may keep going.
    #[error("malformed frame: {reason}")]
    Malformed { corr: Option<u64>, reason: String },
    /// The stream can no longer be trusted to be frame-aligned.
    #[error("framing lost: {0}")]
    Desync(String),
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + frame.payload.len());
    out.extend_from_slice(frame.verb.as_str().as_bytes());
    for f in &frame.fields {
        out.push(b'\t');
        out.extend_from_slice(escape(f).as_bytes());
    }
    out.push(b'\t');
    out.extend_from_slice(frame.corr.to_string().as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    out
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&encode_frame(frame))?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any byte of
/// a new frame.
pub fn read_frame<R: BufRead>(r: &mut R) -> Result<Option<Frame>, WireError> {
    let mut line = Vec::new();
    let n = r
        .by_ref()
        .take(MAX_HEADER_BYTES as u64 + 1)
        .read_until(b'\n', &mut line)?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        if line.len() > MAX_HEADER_BYTES {
            return Err(WireError::Desync("header line too long".into()));
        }
        return Err(WireError::Io(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "connection closed mid-header",
        )));
    }
    line.pop();
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_PAYLOAD_BYTES {
        return Err(WireError::Desync(format!("payload of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    parse_header(&line, payload).map(Some)
}

fn parse_header(line: &[u8], payload: Vec<u8>) -> Result<Frame, WireError> {
    let text = std::str::from_utf8(line).map_err(|_| WireError::Malformed {
        corr: None,
        reason: "header is not UTF-8".into(),
    })?;
    let text = text.strip_suffix('\r').unwrap_or(text);
    let mut parts: Vec<&str> = text.split('\t').collect();
    if parts.len() < 2 {
        return Err(WireError::Malformed {
            corr: None,
            reason: format!("header `{text}` lacks a correlation id"),
        });
    }
    let corr = parts.pop().unwrap().parse::<u64>().ok();
    let verb = parts[0].parse::<Verb>();
    match (verb, corr) {
        (Ok(verb), Some(corr)) => Ok(Frame {
            verb,
            fields: parts[1..].iter().map(|s| unescape(s)).collect(),
            corr,
            payload,
        }),
        (Err(reason), corr) => Err(WireError::Malformed { corr, reason }),
        (Ok(_), None) => Err(WireError::Malformed {
            corr: None,
            reason: "correlation id is not an integer".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    #[test]
    fn frame_layout_is_header_then_length_then_payload() {
        let f = Frame::new(Verb::PubReq)
            .field("s-1")
            .field("p")
            .with_corr(7)
            .with_payload(vec![1, 2, 3]);
        let bytes = encode_frame(&f);
        assert_eq!(&bytes[..12], b"PUBREQ\ts-1\tp");
        assert_eq!(&bytes[12..15], b"\t7\n");
        assert_eq!(&bytes[15..19], &[0, 0, 0, 3]);
        assert_eq!(&bytes[19..], &[1, 2, 3]);
    }

    proptest! {
        #[test]
        fn frames_round_trip(fields in proptest::collection::vec("[ -~\t\n\\\\]{0,12}", 0..6),
                             corr in any::<u64>(),
                             payload in proptest::collection::vec(any::<u8>(), 0..64)) {
            let mut f = Frame::new(Verb::Register).with_corr(corr).with_payload(payload);
            f.fields = fields;
            let mut cur = Cursor::new(encode_frame(&f));
            let back = read_frame(&mut cur).unwrap().unwrap();
            prop_assert_eq!(back, f);
        }
    }

    #[test]
    fn unknown_verb_keeps_stream_aligned() {
        let mut bytes = b"GARBAGE\tx\t5\n\0\0\0\x02hi".to_vec();
        bytes.extend(encode_frame(&Frame::new(Verb::Bye).with_corr(6)));
        let mut cur = Cursor::new(bytes);
        match read_frame(&mut cur) {
            Err(WireError::Malformed { corr, .. }) => assert_eq!(corr, Some(5)),
            other => panic!("expected malformed, got {other:?}"),
        }
        let next = read_frame(&mut cur).unwrap().unwrap();
        assert_eq!(next.verb, Verb::Bye);
        assert_eq!(next.corr, 6);
        assert!(read_frame(&mut cur).unwrap().is_none());
    }

    #[test]
    fn missing_corr_is_malformed() {
        let mut cur = Cursor::new(b"BYE\n\0\0\0\0".to_vec());
        assert!(matches!(
            read_frame(&mut cur),
            Err(WireError::Malformed { corr: None, .. })
        ));
    }

    #[test]
    fn oversize_payload_desyncs() {
        let mut cur = Cursor::new(b"BYE\t1\n\xff\xff\xff\xff".to_vec());
        assert!(matches!(read_frame(&mut cur), Err(WireError::Desync(_))));
    }
}
