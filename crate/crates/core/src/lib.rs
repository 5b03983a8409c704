//! Baseline and triple-password Kerberos-style ticket exchange.
//!
//! * [`crypto`]: password key derivation, sealing, session keys, keytabs.
//! * [`protocol`]: messages, tickets and the `KTP1` wire codec.
//! * [`principals`]: client, AS, TGS and service state machines.
//! * [`netsim`]: deterministic adversarial network simulator.
//! * [`transport`]: the same principals as TCP daemons.
//! * [`cli`]: the `kerbtrip` command.

pub mod cli;
pub mod crypto;
pub mod netsim;
pub mod principals;
pub mod protocol;
pub mod transport;
