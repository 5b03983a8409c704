use std::fmt;

use super::codec::{CodecError, Reader, Writer};
use super::ticket::{Authenticator, TicketTgs, TicketV};
use super::{Lifetime, NetworkAddress, Nonce, PrincipalId, SealedBox};

/// Fieldless discriminant of [`ProtocolMessage`], carrying the wire type byte.
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    M1,
    M2_1,
    M2_2,
    M3,
    M4_1,
    M4_2,
    M5,
    M6,
    M7,
    M8,
    M9,
    M10,
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
}

impl MessageKind {
    pub const ALL: [MessageKind; 18] = [
        MessageKind::M1,
        MessageKind::M2_1,
        MessageKind::M2_2,
        MessageKind::M3,
        MessageKind::M4_1,
        MessageKind::M4_2,
        MessageKind::M5,
        MessageKind::M6,
        MessageKind::M7,
        MessageKind::M8,
        MessageKind::M9,
        MessageKind::M10,
        MessageKind::B1,
        MessageKind::B2,
        MessageKind::B3,
        MessageKind::B4,
        MessageKind::B5,
        MessageKind::B6,
    ];

    pub fn type_byte(self) -> u8 {
        use MessageKind::*;
        match self {
            M1 => 0x01,
            M2_1 => 0x02,
            M2_2 => 0x03,
            M3 => 0x04,
            M4_1 => 0x05,
            M4_2 => 0x06,
            M5 => 0x07,
            M6 => 0x08,
            M7 => 0x09,
            M8 => 0x0A,
            M9 => 0x0B,
            M10 => 0x0C,
            B1 => 0x11,
            B2 => 0x12,
            B3 => 0x13,
            B4 => 0x14,
            B5 => 0x15,
            B6 => 0x16,
        }
    }

    pub fn from_type_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.type_byte() == b)
    }

    pub fn name(self) -> &'static str {
        use MessageKind::*;
        match self {
            M1 => "M1",
            M2_1 => "M2_1",
            M2_2 => "M2_2",
            M3 => "M3",
            M4_1 => "M4_1",
            M4_2 => "M4_2",
            M5 => "M5",
            M6 => "M6",
            M7 => "M7",
            M8 => "M8",
            M9 => "M9",
            M10 => "M10",
            B1 => "B1",
            B2 => "B2",
            B3 => "B3",
            B4 => "B4",
            B5 => "B5",
            B6 => "B6",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }

    pub fn is_baseline(self) -> bool {
        self.type_byte() >= 0x11
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// M1 / B1: client asks the AS for a ticket-granting ticket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketRequest {
    pub client: PrincipalId,
    pub target_tgs: PrincipalId,
    pub n1: Nonce,
    pub requested_lifetime: Lifetime,
}

/// M2_1 / B2: TGT plus the session-key part sealed under the client's first key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TgtReply {
    pub client: PrincipalId,
    pub ticket: TicketTgs,
    pub enc: SealedBox,
}

/// M3 / B3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceTicketRequest {
    pub ticket: TicketTgs,
    pub target_v: PrincipalId,
    pub n2: Nonce,
    pub authenticator: Authenticator,
}

/// M4_1 / B4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceTicketReply {
    pub client: PrincipalId,
    pub ticket: TicketV,
    pub enc: SealedBox,
}

/// M5 / B5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceRequest {
    pub ticket: TicketV,
    pub authenticator: Authenticator,
}

/// A message that is nothing but one sealed body: M2_2, M4_2, M6, M7, M8, B6.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub enc: SealedBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Incident {
    Timeout,
    BadPassword,
}

impl Incident {
    pub fn code(self) -> u8 {
        match self {
            Incident::Timeout => 1,
            Incident::BadPassword => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Incident::Timeout),
            2 => Some(Incident::BadPassword),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Incident::Timeout => "timeout",
            Incident::BadPassword => "bad_password",
        }
    }
}

impl fmt::Display for Incident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// M9 (V to TGS) and M10 (TGS to AS): an attack report, forwarded unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackReport {
    pub reporter: PrincipalId,
    pub suspect_addr: NetworkAddress,
    pub client: PrincipalId,
    pub incident: Incident,
}

#[allow(non_camel_case_types)]
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolMessage {
    M1(TicketRequest),
    M2_1(TgtReply),
    M2_2(Envelope),
    M3(ServiceTicketRequest),
    M4_1(ServiceTicketReply),
    M4_2(Envelope),
    M5(ServiceRequest),
    M6(Envelope),
    M7(Envelope),
    M8(Envelope),
    M9(AttackReport),
    M10(AttackReport),
    B1(TicketRequest),
    B2(TgtReply),
    B3(ServiceTicketRequest),
    B4(ServiceTicketReply),
    B5(ServiceRequest),
    B6(Envelope),
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        use ProtocolMessage as P;
        match self {
            P::M1(_) => MessageKind::M1,
            P::M2_1(_) => MessageKind::M2_1,
            P::M2_2(_) => MessageKind::M2_2,
            P::M3(_) => MessageKind::M3,
            P::M4_1(_) => MessageKind::M4_1,
            P::M4_2(_) => MessageKind::M4_2,
            P::M5(_) => MessageKind::M5,
            P::M6(_) => MessageKind::M6,
            P::M7(_) => MessageKind::M7,
            P::M8(_) => MessageKind::M8,
            P::M9(_) => MessageKind::M9,
            P::M10(_) => MessageKind::M10,
            P::B1(_) => MessageKind::B1,
            P::B2(_) => MessageKind::B2,
            P::B3(_) => MessageKind::B3,
            P::B4(_) => MessageKind::B4,
            P::B5(_) => MessageKind::B5,
            P::B6(_) => MessageKind::B6,
        }
    }

    /// Every sealed field of the message, in wire order.
    pub fn sealed_fields(&self) -> Vec<&SealedBox> {
        use ProtocolMessage as P;
        match self {
            P::M1(_) | P::B1(_) | P::M9(_) | P::M10(_) => vec![],
            P::M2_1(m) | P::B2(m) => vec![&m.ticket.0, &m.enc],
            P::M3(m) | P::B3(m) => vec![&m.ticket.0, &m.authenticator.0],
            P::M4_1(m) | P::B4(m) => vec![&m.ticket.0, &m.enc],
            P::M5(m) | P::B5(m) => vec![&m.ticket.0, &m.authenticator.0],
            P::M2_2(e) | P::M4_2(e) | P::M6(e) | P::M7(e) | P::M8(e) | P::B6(e) => vec![&e.enc],
        }
    }

    /// Only the identities visible in the clear: no nonces, times, addresses
    /// or ciphertext. Two runs of the same flow produce the same summaries
    /// regardless of clock source or randomness.
    pub fn plaintext_summary(&self) -> String {
        use ProtocolMessage as P;
        let kind = self.kind();
        match self {
            P::M1(m) | P::B1(m) => format!("{kind} client={} tgs={}", m.client, m.target_tgs),
            P::M2_1(m) | P::B2(m) => format!("{kind} client={}", m.client),
            P::M3(m) | P::B3(m) => format!("{kind} server={}", m.target_v),
            P::M4_1(m) | P::B4(m) => format!("{kind} client={}", m.client),
            P::M9(r) | P::M10(r) => format!(
                "{kind} reporter={} client={} incident={}",
                r.reporter, r.client, r.incident
            ),
            _ => kind.to_string(),
        }
    }

    /// Every cleartext field, with sealed fields reduced to their length.
    pub fn describe(&self) -> String {
        use ProtocolMessage as P;
        let kind = self.kind();
        let boxes = |v: &[&SealedBox]| {
            v.iter()
                .map(|b| b.encoded_len().to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            P::M1(m) | P::B1(m) => format!(
                "{kind} client={} tgs={} n1={} lifetime={}..{}",
                m.client,
                m.target_tgs,
                m.n1.0,
                m.requested_lifetime.start(),
                m.requested_lifetime.expiry()
            ),
            P::M3(m) | P::B3(m) => format!(
                "{kind} server={} n2={} sealed=[{}]",
                m.target_v,
                m.n2.0,
                boxes(&self.sealed_fields())
            ),
            P::M9(r) | P::M10(r) => format!(
                "{kind} reporter={} suspect_addr={} client={} incident={}",
                r.reporter, r.suspect_addr, r.client, r.incident
            ),
            _ => format!("{} sealed=[{}]", self.plaintext_summary(), boxes(&self.sealed_fields())),
        }
    }

    pub(crate) fn write_payload(&self, w: &mut Writer) {
        use ProtocolMessage as P;
        match self {
            P::M1(m) | P::B1(m) => {
                w.principal(&m.client);
                w.principal(&m.target_tgs);
                w.nonce(m.n1);
                w.lifetime(&m.requested_lifetime);
            }
            P::M2_1(m) | P::B2(m) => {
                w.principal(&m.client);
                w.sealed(&m.ticket.0);
                w.sealed(&m.enc);
            }
            P::M3(m) | P::B3(m) => {
                w.sealed(&m.ticket.0);
                w.principal(&m.target_v);
                w.nonce(m.n2);
                w.sealed(&m.authenticator.0);
            }
            P::M4_1(m) | P::B4(m) => {
                w.principal(&m.client);
                w.sealed(&m.ticket.0);
                w.sealed(&m.enc);
            }
            P::M5(m) | P::B5(m) => {
                w.sealed(&m.ticket.0);
                w.sealed(&m.authenticator.0);
            }
            P::M2_2(e) | P::M4_2(e) | P::M6(e) | P::M7(e) | P::M8(e) | P::B6(e) => {
                w.sealed(&e.enc);
            }
            P::M9(r) | P::M10(r) => {
                w.principal(&r.reporter);
                w.addr(&r.suspect_addr);
                w.principal(&r.client);
                w.u8(r.incident.code());
            }
        }
    }

    pub(crate) fn read_payload(kind: MessageKind, r: &mut Reader<'_>) -> Result<Self, CodecError> {
        use MessageKind as K;
        use ProtocolMessage as P;
        let ticket_request = |r: &mut Reader<'_>| -> Result<TicketRequest, CodecError> {
            Ok(TicketRequest {
                client: r.principal()?,
                target_tgs: r.principal()?,
                n1: r.nonce()?,
                requested_lifetime: r.lifetime()?,
            })
        };
        let tgt_reply = |r: &mut Reader<'_>| -> Result<TgtReply, CodecError> {
            Ok(TgtReply {
                client: r.principal()?,
                ticket: TicketTgs(r.sealed()?),
                enc: r.sealed()?,
            })
        };
        let st_request = |r: &mut Reader<'_>| -> Result<ServiceTicketRequest, CodecError> {
            Ok(ServiceTicketRequest {
                ticket: TicketTgs(r.sealed()?),
                target_v: r.principal()?,
                n2: r.nonce()?,
                authenticator: Authenticator(r.sealed()?),
            })
        };
        let st_reply = |r: &mut Reader<'_>| -> Result<ServiceTicketReply, CodecError> {
            Ok(ServiceTicketReply {
                client: r.principal()?,
                ticket: TicketV(r.sealed()?),
                enc: r.sealed()?,
            })
        };
        let service_request = |r: &mut Reader<'_>| -> Result<ServiceRequest, CodecError> {
            Ok(ServiceRequest {
                ticket: TicketV(r.sealed()?),
                authenticator: Authenticator(r.sealed()?),
            })
        };
        let envelope = |r: &mut Reader<'_>| -> Result<Envelope, CodecError> { Ok(Envelope { enc: r.sealed()? }) };
        let report = |r: &mut Reader<'_>| -> Result<AttackReport, CodecError> {
            Ok(AttackReport {
                reporter: r.principal()?,
                suspect_addr: r.addr()?,
                client: r.principal()?,
                incident: Incident::from_code(r.u8()?).ok_or(CodecError::InvalidField("incident"))?,
            })
        };
        Ok(match kind {
            K::M1 => P::M1(ticket_request(r)?),
            K::B1 => P::B1(ticket_request(r)?),
            K::M2_1 => P::M2_1(tgt_reply(r)?),
            K::B2 => P::B2(tgt_reply(r)?),
            K::M2_2 => P::M2_2(envelope(r)?),
            K::M3 => P::M3(st_request(r)?),
            K::B3 => P::B3(st_request(r)?),
            K::M4_1 => P::M4_1(st_reply(r)?),
            K::B4 => P::B4(st_reply(r)?),
            K::M4_2 => P::M4_2(envelope(r)?),
            K::M5 => P::M5(service_request(r)?),
            K::B5 => P::B5(service_request(r)?),
            K::M6 => P::M6(envelope(r)?),
            K::M7 => P::M7(envelope(r)?),
            K::M8 => P::M8(envelope(r)?),
            K::B6 => P::B6(envelope(r)?),
            K::M9 => P::M9(report(r)?),
            K::M10 => P::M10(report(r)?),
        })
    }
}
