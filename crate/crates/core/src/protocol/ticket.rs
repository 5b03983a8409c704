//! Tickets and authenticators: sealed envelopes with typed constructors.

use super::body::{AuthenticatorBody, OpenError, Sealable, ServiceTicketBody, TgsTicketBody};
use super::{Lifetime, NetworkAddress, PrincipalId, SealedBox, Timestamp};
use crate::crypto::{NonceSource, SymmetricKey};

/// Ticket-granting ticket, sealed under K_tgs. Opaque to the client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketTgs(pub SealedBox);

/// Service-granting ticket, sealed under K_v.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketV(pub SealedBox);

/// `{client, client_addr, created_at}` sealed under a session key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Authenticator(pub SealedBox);

pub fn make_ticket_tgs(
    kdc_key: &SymmetricKey,
    client: &PrincipalId,
    addr: &NetworkAddress,
    validity: Lifetime,
    session_key: &SymmetricKey,
    nonces: &mut impl NonceSource,
) -> TicketTgs {
    let body = TgsTicketBody {
        client: client.clone(),
        client_addr: addr.clone(),
        validity,
        session_key: session_key.clone(),
    };
    TicketTgs(body.seal(kdc_key, nonces))
}

pub fn open_ticket_tgs(kdc_key: &SymmetricKey, ticket: &TicketTgs) -> Result<TgsTicketBody, OpenError> {
    TgsTicketBody::open(kdc_key, &ticket.0)
}

pub fn make_ticket_v(
    server_key: &SymmetricKey,
    session_key: &SymmetricKey,
    client: &PrincipalId,
    addr: &NetworkAddress,
    validity: Lifetime,
    nonces: &mut impl NonceSource,
) -> TicketV {
    let body = ServiceTicketBody {
        session_key: session_key.clone(),
        client: client.clone(),
        client_addr: addr.clone(),
        validity,
    };
    TicketV(body.seal(server_key, nonces))
}

pub fn open_ticket_v(server_key: &SymmetricKey, ticket: &TicketV) -> Result<ServiceTicketBody, OpenError> {
    ServiceTicketBody::open(server_key, &ticket.0)
}

pub fn make_authenticator(
    session_key: &SymmetricKey,
    client: &PrincipalId,
    addr: &NetworkAddress,
    created_at: Timestamp,
    nonces: &mut impl NonceSource,
) -> Authenticator {
    let body = AuthenticatorBody {
        client: client.clone(),
        client_addr: addr.clone(),
        created_at,
    };
    Authenticator(body.seal(session_key, nonces))
}

pub fn open_authenticator(session_key: &SymmetricKey, auth: &Authenticator) -> Result<AuthenticatorBody, OpenError> {
    AuthenticatorBody::open(session_key, &auth.0)
}
