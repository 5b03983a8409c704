//! Bit-exact framing.
//!
//! ```text
//! frame   = "KTP1" | type:u8 | payload_len:u32be | payload
//! string  = len:u16be | utf8 bytes
//! integer = fixed-width big endian
//! sealed  = len:u32be | nonce(24) | ciphertext | tag(16)
//! key     = 32 raw bytes (only inside sealed plaintexts)
//! ```

use thiserror::Error;

use super::message::MessageKind;
use super::{Lifetime, NetworkAddress, Nonce, PrincipalId, ProtocolMessage, Timestamp};
use crate::crypto::{KeyOrigin, SealedBox, SymmetricKey, KEY_LEN};

pub const MAGIC: [u8; 4] = *b"KTP1";
pub const HEADER_LEN: usize = 9;
/// Upper bound on a single frame payload accepted by the streaming decoder.
pub const MAX_PAYLOAD: u32 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic")]
    BadMagic,
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("truncated frame")]
    Truncated,
    #[error("trailing bytes after payload")]
    TrailingGarbage,
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
    #[error("frame payload of {0} bytes exceeds limit")]
    FrameTooLarge(u32),
}

pub fn encode(msg: &ProtocolMessage) -> Vec<u8> {
    let mut w = Writer::default();
    msg.write_payload(&mut w);
    let payload = w.into_inner();
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(msg.kind().type_byte());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<ProtocolMessage, CodecError> {
    let (kind, payload_len) = parse_header(bytes)?.ok_or(CodecError::Truncated)?;
    let total = HEADER_LEN + payload_len as usize;
    if bytes.len() < total {
        return Err(CodecError::Truncated);
    }
    if bytes.len() > total {
        return Err(CodecError::TrailingGarbage);
    }
    let mut r = Reader::new(&bytes[HEADER_LEN..]);
    let msg = ProtocolMessage::read_payload(kind, &mut r)?;
    r.finish()?;
    Ok(msg)
}

/// Parses the 9-byte header. `Ok(None)` when more bytes are needed; a
/// mismatching magic prefix is reported as soon as it is visible.
fn parse_header(bytes: &[u8]) -> Result<Option<(MessageKind, u32)>, CodecError> {
    let seen = bytes.len().min(MAGIC.len());
    if bytes[..seen] != MAGIC[..seen] {
        return Err(CodecError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Ok(None);
    }
    let kind = MessageKind::from_type_byte(bytes[4]).ok_or(CodecError::UnknownType(bytes[4]))?;
    let len = u32::from_be_bytes(bytes[5..9].try_into().expect("4 bytes"));
    Ok(Some((kind, len)))
}

/// Incremental decoder for a byte stream carrying back-to-back frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete raw frame, if one is buffered.
    pub fn next_frame_bytes(&mut self) -> Result<Option<Vec<u8>>, CodecError> {
        let Some((_, len)) = parse_header(&self.buf)? else {
            return Ok(None);
        };
        if len > MAX_PAYLOAD {
            return Err(CodecError::FrameTooLarge(len));
        }
        let total = HEADER_LEN + len as usize;
        if self.buf.len() < total {
            return Ok(None);
        }
        let rest = self.buf.split_off(total);
        Ok(Some(std::mem::replace(&mut self.buf, rest)))
    }

    pub fn next_frame(&mut self) -> Result<Option<ProtocolMessage>, CodecError> {
        match self.next_frame_bytes()? {
            Some(frame) => decode(&frame).map(Some),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn str(&mut self, s: &str) {
        // names are capped at 255 bytes at construction
        self.buf.extend_from_slice(&(s.len() as u16).to_be_bytes());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn principal(&mut self, p: &PrincipalId) {
        self.str(p.as_str());
    }

    pub fn addr(&mut self, a: &NetworkAddress) {
        self.str(a.as_str());
    }

    pub fn nonce(&mut self, n: Nonce) {
        self.u64(n.0);
    }

    pub fn timestamp(&mut self, t: Timestamp) {
        self.i64(t.0);
    }

    pub fn lifetime(&mut self, l: &Lifetime) {
        self.timestamp(l.start());
        self.timestamp(l.expiry());
    }

    pub fn key(&mut self, k: &SymmetricKey) {
        self.buf.extend_from_slice(k.as_bytes());
    }

    pub fn sealed(&mut self, b: &SealedBox) {
        self.buf.extend_from_slice(&(b.encoded_len() as u32).to_be_bytes());
        self.buf.extend_from_slice(&b.nonce);
        self.buf.extend_from_slice(&b.ciphertext);
        self.buf.extend_from_slice(&b.tag);
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() < n {
            return Err(CodecError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(CodecError::TrailingGarbage)
        }
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn str(&mut self) -> Result<&'a str, CodecError> {
        let len = u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes"));
        std::str::from_utf8(self.take(len as usize)?).map_err(|_| CodecError::InvalidField("utf-8"))
    }

    pub fn principal(&mut self) -> Result<PrincipalId, CodecError> {
        PrincipalId::new(self.str()?).map_err(|_| CodecError::InvalidField("principal id"))
    }

    pub fn addr(&mut self) -> Result<NetworkAddress, CodecError> {
        NetworkAddress::new(self.str()?).map_err(|_| CodecError::InvalidField("network address"))
    }

    pub fn nonce(&mut self) -> Result<Nonce, CodecError> {
        Ok(Nonce(self.u64()?))
    }

    pub fn timestamp(&mut self) -> Result<Timestamp, CodecError> {
        Ok(Timestamp(self.i64()?))
    }

    pub fn lifetime(&mut self) -> Result<Lifetime, CodecError> {
        let start = self.timestamp()?;
        let expiry = self.timestamp()?;
        Lifetime::new(start, expiry).map_err(|_| CodecError::InvalidField("lifetime"))
    }

    pub fn key(&mut self, origin: KeyOrigin) -> Result<SymmetricKey, CodecError> {
        Ok(SymmetricKey::from_slice(self.take(KEY_LEN)?, origin).expect("32 bytes"))
    }

    pub fn sealed(&mut self) -> Result<SealedBox, CodecError> {
        let len = u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes"));
        let bytes = self.take(len as usize)?;
        SealedBox::from_bytes(bytes).map_err(|_| CodecError::InvalidField("sealed box"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::*;
    use proptest::prelude::*;

    #[derive(Debug, Clone)]
    struct Fields {
        names: [String; 3],
        addr: String,
        nums: [u64; 2],
        times: (i64, u32),
        boxes: [SealedBox; 2],
        incident: bool,
    }

    fn build(kind: MessageKind, f: Fields) -> ProtocolMessage {
        use ProtocolMessage as P;
        let p = |i: usize| PrincipalId::new(f.names[i].clone()).unwrap();
        let lifetime = Lifetime::starting_at(Timestamp(f.times.0), f.times.1 as i64);
        let [b0, b1] = f.boxes.clone();
        let req = || TicketRequest {
            client: p(0),
            target_tgs: p(1),
            n1: Nonce(f.nums[0]),
            requested_lifetime: lifetime,
        };
        let tgt = || TgtReply {
            client: p(0),
            ticket: TicketTgs(b0.clone()),
            enc: b1.clone(),
        };
        let st_req = || ServiceTicketRequest {
            ticket: TicketTgs(b0.clone()),
            target_v: p(2),
            n2: Nonce(f.nums[1]),
            authenticator: Authenticator(b1.clone()),
        };
        let st_rep = || ServiceTicketReply {
            client: p(0),
            ticket: TicketV(b0.clone()),
            enc: b1.clone(),
        };
        let sreq = || ServiceRequest {
            ticket: TicketV(b0.clone()),
            authenticator: Authenticator(b1.clone()),
        };
        let env = || Envelope { enc: b0.clone() };
        let report = || AttackReport {
            reporter: p(2),
            suspect_addr: NetworkAddress::new(f.addr.clone()).unwrap(),
            client: p(0),
            incident: if f.incident {
                Incident::Timeout
            } else {
                Incident::BadPassword
            },
        };
        use MessageKind as K;
        match kind {
            K::M1 => P::M1(req()),
            K::B1 => P::B1(req()),
            K::M2_1 => P::M2_1(tgt()),
            K::B2 => P::B2(tgt()),
            K::M2_2 => P::M2_2(env()),
            K::M3 => P::M3(st_req()),
            K::B3 => P::B3(st_req()),
            K::M4_1 => P::M4_1(st_rep()),
            K::B4 => P::B4(st_rep()),
            K::M4_2 => P::M4_2(env()),
            K::M5 => P::M5(sreq()),
            K::B5 => P::B5(sreq()),
            K::M6 => P::M6(env()),
            K::M7 => P::M7(env()),
            K::M8 => P::M8(env()),
            K::B6 => P::B6(env()),
            K::M9 => P::M9(report()),
            K::M10 => P::M10(report()),
        }
    }

    fn arb_box() -> impl Strategy<Value = SealedBox> {
        (
            any::<[u8; 24]>(),
            proptest::collection::vec(any::<u8>(), 0..80),
            any::<[u8; 16]>(),
        )
            .prop_map(|(nonce, ciphertext, tag)| SealedBox { nonce, ciphertext, tag })
    }

    fn arb_message() -> impl Strategy<Value = ProtocolMessage> {
        let name = "[a-zA-Z0-9._@-]{1,40}";
        (
            0..MessageKind::ALL.len(),
            [name, name, name],
            "[0-9.]{1,15}",
            any::<[u64; 2]>(),
            (any::<i32>(), any::<u32>()),
            [arb_box(), arb_box()],
            any::<bool>(),
        )
            .prop_map(|(k, names, addr, nums, (t, d), boxes, incident)| {
                let fields = Fields {
                    names,
                    addr,
                    nums,
                    times: (t as i64, d),
                    boxes,
                    incident,
                };
                build(MessageKind::ALL[k], fields)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn codec_roundtrip(msg in arb_message()) {
            let bytes = encode(&msg);
            prop_assert_eq!(&bytes[..4], &MAGIC[..]);
            prop_assert_eq!(bytes[4], msg.kind().type_byte());
            prop_assert_eq!(decode(&bytes).unwrap(), msg);
        }

        #[test]
        fn streaming_decoder_splits_concatenated_frames(
            a in arb_message(),
            b in arb_message(),
            cut in any::<prop::sample::Index>(),
        ) {
            let mut stream = encode(&a);
            stream.extend(encode(&b));
            let cut = cut.index(stream.len() + 1);
            let mut dec = FrameDecoder::new();
            let mut out = Vec::new();
            for chunk in [&stream[..cut], &stream[cut..]] {
                dec.push(chunk);
                while let Some(m) = dec.next_frame().unwrap() {
                    out.push(m);
                }
            }
            prop_assert_eq!(out, vec![a, b]);
            prop_assert_eq!(dec.buffered(), 0);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode(&bytes);
        }
    }

    fn sample() -> ProtocolMessage {
        ProtocolMessage::M1(TicketRequest {
            client: PrincipalId::new("alice").unwrap(),
            target_tgs: PrincipalId::new("tgs").unwrap(),
            n1: Nonce(5),
            requested_lifetime: Lifetime::starting_at(Timestamp(0), 100),
        })
    }

    #[test]
    fn m1_layout_is_bit_exact() {
        let bytes = encode(&sample());
        let expected = [
            &b"KTP1"[..],
            &[0x01],
            &[0, 0, 0, 36],
            &[0, 5],
            b"alice",
            &[0, 3],
            b"tgs",
            &5u64.to_be_bytes(),
            &0i64.to_be_bytes(),
            &100i64.to_be_bytes(),
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn decode_errors() {
        let bytes = encode(&sample());
        assert_eq!(decode(b"XXXXXXXXXXXX"), Err(CodecError::BadMagic));
        assert_eq!(decode(&bytes[..bytes.len() - 1]), Err(CodecError::Truncated));
        assert_eq!(decode(&bytes[..6]), Err(CodecError::Truncated));
        assert_eq!(decode(b"KT"), Err(CodecError::Truncated));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert_eq!(decode(&trailing), Err(CodecError::TrailingGarbage));

        let mut unknown = bytes.clone();
        unknown[4] = 0x0D;
        assert_eq!(decode(&unknown), Err(CodecError::UnknownType(0x0D)));

        // declared length larger than the fields it holds
        let mut padded = bytes.clone();
        padded[8] += 1;
        padded.push(0);
        assert_eq!(decode(&padded), Err(CodecError::TrailingGarbage));

        // declared length shorter than the fields need
        let mut short = bytes.clone();
        short[8] -= 1;
        short.pop();
        assert_eq!(decode(&short), Err(CodecError::Truncated));
    }

    #[test]
    fn decoder_rejects_garbage_and_oversized_frames() {
        let mut dec = FrameDecoder::new();
        dec.push(b"GET / HTTP/1.1\r\n");
        assert_eq!(dec.next_frame(), Err(CodecError::BadMagic));

        let mut dec = FrameDecoder::new();
        dec.push(b"KTP1\x01\xff\xff\xff\xff");
        assert_eq!(dec.next_frame(), Err(CodecError::FrameTooLarge(u32::MAX)));

        let mut dec = FrameDecoder::new();
        dec.push(b"KTP");
        assert_eq!(dec.next_frame(), Ok(None));
    }

    #[test]
    fn invalid_inner_fields_are_rejected() {
        let mut bytes = encode(&sample());
        // empty principal name
        bytes[10] = 0;
        assert!(decode(&bytes).is_err());

        let report = ProtocolMessage::M9(AttackReport {
            reporter: PrincipalId::new("v").unwrap(),
            suspect_addr: NetworkAddress::new("1.2.3.4").unwrap(),
            client: PrincipalId::new("alice").unwrap(),
            incident: Incident::Timeout,
        });
        let mut bytes = encode(&report);
        *bytes.last_mut().unwrap() = 9;
        assert_eq!(decode(&bytes), Err(CodecError::InvalidField("incident")));
    }
}
