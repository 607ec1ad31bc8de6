//! OSC 1.0 binary encoding.
//!
//! Strings are NUL-terminated and zero-padded to a multiple of four bytes,
//! scalars are big-endian, blobs carry an int32 size and are padded. A
//! bundle is `"#bundle\0"`, an 8-byte NTP timetag and a sequence of
//! `[size: int32][element]`.

use super::OscError;

pub const BUNDLE_TAG: &[u8; 8] = b"#bundle\0";
/// The reserved timetag meaning "process immediately".
pub const IMMEDIATELY: u64 = 1;
const MAX_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    /// `d`, a widely supported 64-bit extension type.
    Double(f64),
    Str(String),
    Blob(Vec<u8>),
}

impl OscArg {
    pub fn type_tag(&self) -> char {
        match self {
            OscArg::Int(_) => 'i',
            OscArg::Float(_) => 'f',
            OscArg::Double(_) => 'd',
            OscArg::Str(_) => 's',
            OscArg::Blob(_) => 'b',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscMessage {
    pub address: String,
    pub args: Vec<OscArg>,
}

impl OscMessage {
    pub fn new(address: impl Into<String>, args: Vec<OscArg>) -> Self {
        Self { address: address.into(), args }
    }

    pub fn type_tags(&self) -> String {
        std::iter::once(',').chain(self.args.iter().map(OscArg::type_tag)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscBundle {
    pub timetag: u64,
    pub elements: Vec<OscPacket>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OscPacket {
    Message(OscMessage),
    Bundle(OscBundle),
}

fn padded_len(n: usize) -> usize {
    (n + 3) & !3
}

/// Encoded size of a string including its terminator and padding.
pub fn string_size(s: &str) -> usize {
    padded_len(s.len() + 1)
}

fn validate_address(addr: &str) -> Result<(), OscError> {
    let ok = addr.starts_with('/') && addr.bytes().all(|b| b.is_ascii_graphic() && b != b'#' && b != b',');
    if ok {
        Ok(())
    } else {
        Err(OscError::InvalidAddress(addr.to_owned()))
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) -> Result<(), OscError> {
    if s.as_bytes().contains(&0) {
        return Err(OscError::InvalidString(s.to_owned()));
    }
    out.extend_from_slice(s.as_bytes());
    let pad = string_size(s) - s.len();
    out.extend(std::iter::repeat_n(0, pad));
    Ok(())
}

fn encode_message(msg: &OscMessage, out: &mut Vec<u8>) -> Result<(), OscError> {
    validate_address(&msg.address)?;
    write_str(out, &msg.address)?;
    write_str(out, &msg.type_tags())?;
    for arg in &msg.args {
        match arg {
            OscArg::Int(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Double(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Str(s) => write_str(out, s)?,
            OscArg::Blob(b) => {
                let len = i32::try_from(b.len()).map_err(|_| OscError::Malformed("blob too large".into()))?;
                out.extend_from_slice(&len.to_be_bytes());
                out.extend_from_slice(b);
                out.extend(std::iter::repeat_n(0, padded_len(b.len()) - b.len()));
            }
        }
    }
    Ok(())
}

fn encode_into(packet: &OscPacket, out: &mut Vec<u8>) -> Result<(), OscError> {
    match packet {
        OscPacket::Message(m) => encode_message(m, out),
        OscPacket::Bundle(b) => {
            out.extend_from_slice(BUNDLE_TAG);
            out.extend_from_slice(&b.timetag.to_be_bytes());
            for element in &b.elements {
                let size_at = out.len();
                out.extend_from_slice(&[0; 4]);
                encode_into(element, out)?;
                let size = i32::try_from(out.len() - size_at - 4)
                    .map_err(|_| OscError::Malformed("bundle element too large".into()))?;
                out[size_at..size_at + 4].copy_from_slice(&size.to_be_bytes());
            }
            Ok(())
        }
    }
}

pub fn encode_osc(packet: &OscPacket) -> Result<Vec<u8>, OscError> {
    let mut out = Vec::with_capacity(64);
    encode_into(packet, &mut out)?;
    debug_assert_eq!(out.len() % 4, 0);
    Ok(out)
}

/// Size of `element` inside a bundle, including its size prefix.
pub fn element_size(element: &OscPacket) -> Result<usize, OscError> {
    Ok(4 + encode_osc(element)?.len())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], OscError> {
        if self.buf.len() - self.pos < n {
            return Err(OscError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn read_str(&mut self) -> Result<String, OscError> {
        let rest = &self.buf[self.pos..];
        let nul = rest.iter().position(|&b| b == 0).ok_or(OscError::Truncated)?;
        let s = std::str::from_utf8(&rest[..nul]).map_err(|_| OscError::Malformed("string is not UTF-8".into()))?;
        let s = s.to_owned();
        self.take(padded_len(nul + 1))?;
        Ok(s)
    }

    fn read_4(&mut self) -> Result<[u8; 4], OscError> {
        let b = self.take(4)?;
        Ok([b[0], b[1], b[2], b[3]])
    }

    fn read_8(&mut self) -> Result<[u8; 8], OscError> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(a)
    }
}

fn decode_message(buf: &[u8]) -> Result<OscMessage, OscError> {
    let mut r = Reader { buf, pos: 0 };
    let address = r.read_str()?;
    validate_address(&address)?;
    if r.done() {
        return Ok(OscMessage { address, args: Vec::new() });
    }
    let tags = r.read_str()?;
    let Some(tags) = tags.strip_prefix(',') else {
        return Err(OscError::Malformed(format!("type tag string '{tags}' lacks ','")));
    };
    let mut args = Vec::with_capacity(tags.len());
    for tag in tags.chars() {
        args.push(match tag {
            'i' => OscArg::Int(i32::from_be_bytes(r.read_4()?)),
            'f' => OscArg::Float(f32::from_be_bytes(r.read_4()?)),
            'd' => OscArg::Double(f64::from_be_bytes(r.read_8()?)),
            's' => OscArg::Str(r.read_str()?),
            'b' => {
                let len = i32::from_be_bytes(r.read_4()?);
                let len = usize::try_from(len).map_err(|_| OscError::Malformed("negative blob size".into()))?;
                let data = r.take(len)?.to_vec();
                r.take(padded_len(len) - len)?;
                OscArg::Blob(data)
            }
            other => return Err(OscError::UnsupportedArgumentType(other)),
        });
    }
    if !r.done() {
        return Err(OscError::Malformed(format!("{} bytes after last argument", buf.len() - r.pos)));
    }
    Ok(OscMessage { address, args })
}

fn decode_at_depth(buf: &[u8], depth: usize) -> Result<OscPacket, OscError> {
    if depth > MAX_DEPTH {
        return Err(OscError::Malformed("bundles nested too deeply".into()));
    }
    if !buf.len().is_multiple_of(4) {
        return Err(OscError::Malformed(format!("packet size {} is not a multiple of 4", buf.len())));
    }
    match buf.first() {
        Some(b'/') => decode_message(buf).map(OscPacket::Message),
        Some(b'#') => {
            let mut r = Reader { buf, pos: 0 };
            if r.take(8)? != BUNDLE_TAG {
                return Err(OscError::Malformed("bad bundle tag".into()));
            }
            let timetag = u64::from_be_bytes(r.read_8()?);
            let mut elements = Vec::new();
            while !r.done() {
                let size = i32::from_be_bytes(r.read_4()?);
                let size = usize::try_from(size).map_err(|_| OscError::Malformed("negative element size".into()))?;
                elements.push(decode_at_depth(r.take(size)?, depth + 1)?);
            }
            Ok(OscPacket::Bundle(OscBundle { timetag, elements }))
        }
        Some(_) => Err(OscError::Malformed("packet is neither a message nor a bundle".into())),
        None => Err(OscError::Truncated),
    }
}

pub fn decode_osc(buf: &[u8]) -> Result<OscPacket, OscError> {
    decode_at_depth(buf, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(addr: &str, args: Vec<OscArg>) -> OscPacket {
        OscPacket::Message(OscMessage::new(addr, args))
    }

    #[test]
    fn bare_message_layout() {
        assert_eq!(encode_osc(&msg("/a", vec![])).unwrap(), [0x2f, 0x61, 0, 0, 0x2c, 0, 0, 0]);
    }

    #[test]
    fn int_argument_layout() {
        let bytes = encode_osc(&msg("/a", vec![OscArg::Int(1)])).unwrap();
        assert_eq!(bytes, [0x2f, 0x61, 0, 0, 0x2c, 0x69, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn string_padding() {
        // "abc" fits exactly with its terminator, "abcd" needs a second word
        let b = encode_osc(&msg("/x", vec![OscArg::Str("abc".into()), OscArg::Str("abcd".into())])).unwrap();
        assert_eq!(&b[8..12], b"abc\0");
        assert_eq!(&b[12..20], b"abcd\0\0\0\0");
    }

    #[test]
    fn bundle_layout() {
        let p = OscPacket::Bundle(OscBundle { timetag: IMMEDIATELY, elements: vec![msg("/a", vec![])] });
        let b = encode_osc(&p).unwrap();
        assert_eq!(&b[..8], BUNDLE_TAG);
        assert_eq!(&b[8..16], &[0, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(&b[16..20], &[0, 0, 0, 8]);
        assert_eq!(b.len(), 28);
        assert_eq!(decode_osc(&b).unwrap(), p);
    }

    #[test]
    fn invalid_addresses() {
        for bad in ["", "a", "/with space", "/hash#", "/nul\0"] {
            assert!(matches!(encode_osc(&msg(bad, vec![])), Err(OscError::InvalidAddress(_))), "{bad:?}");
        }
        assert!(matches!(
            encode_osc(&msg("/a", vec![OscArg::Str("x\0y".into())])),
            Err(OscError::InvalidString(_))
        ));
    }

    #[test]
    fn decoder_rejects_unknown_tags() {
        let mut b = encode_osc(&msg("/a", vec![OscArg::Int(5)])).unwrap();
        b[5] = b'q';
        assert_eq!(decode_osc(&b), Err(OscError::UnsupportedArgumentType('q')));
    }

    #[test]
    fn decoder_rejects_garbage() {
        assert!(decode_osc(&[]).is_err());
        assert!(decode_osc(b"/a\0").is_err());
        assert!(decode_osc(b"xyz\0").is_err());
        assert!(decode_osc(b"#bundle\0\0\0\0\0\0\0\0\x01\xff\xff\xff\xff").is_err());
    }
}
