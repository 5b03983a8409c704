//! Keytab files: one `principal:index:hex(key)` record per line.
//!
//! Index 0 holds a long-term service key (K_tgs, K_v); indices 1..=3 hold a
//! client's password-derived keys. Blank lines and `#` comments are skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{KeyOrigin, SymmetricKey, KEY_LEN};

#[derive(Debug, Error)]
pub enum KeytabError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate entry {principal}:{index} on line {line}")]
    Duplicate { principal: String, index: u8, line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeytabEntry {
    pub principal: String,
    pub index: u8,
    pub key: SymmetricKey,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Keytab {
    entries: BTreeMap<(String, u8), SymmetricKey>,
}

impl Keytab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, principal: impl Into<String>, index: u8, key: SymmetricKey) {
        self.entries.insert((principal.into(), index), key);
    }

    pub fn get(&self, principal: &str, index: u8) -> Option<&SymmetricKey> {
        self.entries.get(&(principal.to_string(), index))
    }

    pub fn long_term(&self, principal: &str) -> Option<&SymmetricKey> {
        self.get(principal, 0)
    }

    /// The three password keys of a client, if all are present.
    pub fn client_keys(&self, principal: &str) -> Option<[SymmetricKey; 3]> {
        Some([
            self.get(principal, 1)?.clone(),
            self.get(principal, 2)?.clone(),
            self.get(principal, 3)?.clone(),
        ])
    }

    /// Principals with a complete set of client keys.
    pub fn clients(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .entries
            .keys()
            .filter(|(_, idx)| *idx == 1)
            .map(|(p, _)| p.clone())
            .filter(|p| self.client_keys(p).is_some())
            .collect();
        names.dedup();
        names
    }

    pub fn entries(&self) -> impl Iterator<Item = KeytabEntry> + '_ {
        self.entries.iter().map(|((p, i), k)| KeytabEntry {
            principal: p.clone(),
            index: *i,
            key: k.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, KeytabError> {
        let mut tab = Keytab::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |reason: &str| KeytabError::Parse {
                line,
                reason: reason.to_string(),
            };
            // principal names may themselves contain ':'
            let mut parts = trimmed.rsplitn(3, ':');
            let key_hex = parts.next().ok_or_else(|| err("missing key"))?;
            let index = parts.next().ok_or_else(|| err("missing index"))?;
            let principal = parts.next().ok_or_else(|| err("missing principal"))?;
            if principal.is_empty() {
                return Err(err("empty principal"));
            }
            let index: u8 = index.parse().map_err(|_| err("index is not a number"))?;
            if index > 3 {
                return Err(err("index must be 0..=3"));
            }
            let bytes = hex::decode(key_hex).map_err(|_| err("key is not hex"))?;
            if bytes.len() != KEY_LEN {
                return Err(err("key must be 32 bytes"));
            }
            let origin = if index == 0 {
                KeyOrigin::LongTerm
            } else {
                KeyOrigin::PasswordDerived
            };
            let key = SymmetricKey::from_slice(&bytes, origin).expect("length checked");
            if tab.entries.contains_key(&(principal.to_string(), index)) {
                return Err(KeytabError::Duplicate {
                    principal: principal.to_string(),
                    index,
                    line,
                });
            }
            tab.insert(principal, index, key);
        }
        Ok(tab)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((p, i), k) in &self.entries {
            let _ = writeln!(out, "{p}:{i}:{}", k.to_hex());
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KeytabError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KeytabError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
