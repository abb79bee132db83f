//! Per-epoch key schedule.
//!
//! ```text
//!   prev init_secret ──► Extract(salt = init, ikm = commit_secret) = joiner_secret
//!                                  │
//!            ExpandWithLabel(., "epoch", group_context_hash)
//!                                  │
//!                            epoch_secret
//!             ┌──────────────┬─────┴─────────┐
//!          "init"       "exporter"       "confirm"
//! ```
//!
//! Every derivation is HKDF-SHA256 through [`crypto::expand_with_label`].

use crate::crypto::{self, Secret, MAX_EXPAND_LEN, SECRET_LEN};

use super::CkaError;

/// Smallest output [`export`] will produce.
pub const MIN_EXPORT_LEN: usize = 16;
pub const MAX_EXPORT_LEN: usize = MAX_EXPAND_LEN;

#[derive(Clone, PartialEq, Eq)]
pub struct EpochKeys {
    pub init_secret: Secret,
    pub epoch_secret: Secret,
    pub exporter_secret: Secret,
    pub confirmation_key: Secret,
}

impl std::fmt::Debug for EpochKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("EpochKeys(..)")
    }
}

impl EpochKeys {
    pub fn as_array(&self) -> [&Secret; 4] {
        [
            &self.init_secret,
            &self.epoch_secret,
            &self.exporter_secret,
            &self.confirmation_key,
        ]
    }
}

/// Secrets of the current epoch of a group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochSecrets {
    pub epoch: u64,
    pub keys: EpochKeys,
}

fn as_secret(input: &[u8]) -> Result<&Secret, CkaError> {
    input.try_into().map_err(|_| CkaError::BadSecretLength(input.len()))
}

pub fn joiner_secret(prev_init_secret: &[u8], commit_secret: &[u8]) -> Result<Secret, CkaError> {
    let init = as_secret(prev_init_secret)?;
    let commit = as_secret(commit_secret)?;
    Ok(crypto::extract(init, commit))
}

pub fn epoch_from_joiner(joiner_secret: &Secret, group_context_hash: &[u8]) -> Result<EpochKeys, CkaError> {
    let gc = as_secret(group_context_hash)?;
    let epoch_secret: Secret = crypto::expand_to_array(joiner_secret, "epoch", gc);
    Ok(EpochKeys {
        init_secret: crypto::derive_secret(&epoch_secret, "init"),
        exporter_secret: crypto::derive_secret(&epoch_secret, "exporter"),
        confirmation_key: crypto::derive_secret(&epoch_secret, "confirm"),
        epoch_secret,
    })
}

/// Derives the next epoch's secrets. Deterministic in its inputs; every
/// input must be exactly 32 bytes.
pub fn derive_epoch(
    prev_init_secret: &[u8],
    commit_secret: &[u8],
    group_context_hash: &[u8],
) -> Result<EpochKeys, CkaError> {
    let joiner = joiner_secret(prev_init_secret, commit_secret)?;
    epoch_from_joiner(&joiner, group_context_hash)
}

/// Exporter output bound to `label` and `context`.
pub fn export(exporter_secret: &Secret, label: &str, context: &[u8], length: usize) -> Result<Vec<u8>, CkaError> {
    if !(MIN_EXPORT_LEN..=MAX_EXPORT_LEN).contains(&length) {
        return Err(CkaError::BadLength(length));
    }
    let label = format!("exported {label}");
    if label.len() + 8 > u8::MAX as usize {
        return Err(CkaError::LabelTooLong);
    }
    Ok(crypto::expand_with_label(exporter_secret, &label, context, length))
}

pub const ZERO_SECRET: Secret = [0u8; SECRET_LEN];

#[cfg(test)]
mod tests {
    use super::*;
    use hmac::{Hmac, Mac};
    use sha2::Sha256;

    fn hmac(key: &[u8], data: &[u8]) -> Vec<u8> {
        let mut m = Hmac::<Sha256>::new_from_slice(key).unwrap();
        m.update(data);
        m.finalize().into_bytes().to_vec()
    }

    /// Textbook HKDF-Expand built directly on HMAC, independent of the
    /// `hkdf` crate.
    fn expand_oracle(prk: &[u8], info: &[u8], len: usize) -> Vec<u8> {
        let mut out = Vec::new();
        let mut t = Vec::new();
        let mut counter = 1u8;
        while out.len() < len {
            let mut block = t.clone();
            block.extend_from_slice(info);
            block.push(counter);
            t = hmac(prk, &block);
            out.extend_from_slice(&t);
            counter += 1;
        }
        out.truncate(len);
        out
    }

    fn hkdf_oracle(salt: &[u8], ikm: &[u8], info: &[u8], len: usize) -> Vec<u8> {
        expand_oracle(&hmac(salt, ikm), info, len)
    }

    fn info(label: &str, ctx: &[u8], len: u16) -> Vec<u8> {
        let full = format!("dtn-cka {label}");
        let mut v = len.to_be_bytes().to_vec();
        v.push(full.len() as u8);
        v.extend_from_slice(full.as_bytes());
        v.extend_from_slice(&(ctx.len() as u32).to_be_bytes());
        v.extend_from_slice(ctx);
        v
    }

    #[test]
    fn oracle_reproduces_rfc5869_case_1() {
        let ikm = [0x0b; 22];
        let salt: Vec<u8> = (0x00..=0x0c).collect();
        let info: Vec<u8> = (0xf0..=0xf9).collect();
        assert_eq!(
            hex::encode(hkdf_oracle(&salt, &ikm, &info, 42)),
            "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865"
        );
    }

    #[test]
    fn derive_epoch_matches_oracle() {
        let a = [0x11; 32];
        let b = [0x22; 32];
        let c = [0x33; 32];
        let keys = derive_epoch(&a, &b, &c).unwrap();
        let joiner = hmac(&a, &b);
        let epoch = expand_oracle(&joiner, &info("epoch", &c, 32), 32);
        assert_eq!(keys.epoch_secret.to_vec(), epoch);
        assert_eq!(
            keys.init_secret.to_vec(),
            expand_oracle(&epoch, &info("init", &[], 32), 32)
        );
        assert_eq!(
            keys.exporter_secret.to_vec(),
            expand_oracle(&epoch, &info("exporter", &[], 32), 32)
        );
        assert_eq!(
            keys.confirmation_key.to_vec(),
            expand_oracle(&epoch, &info("confirm", &[], 32), 32)
        );
    }

    #[test]
    fn deterministic() {
        let (a, b, c) = ([1u8; 32], [2u8; 32], [3u8; 32]);
        assert_eq!(derive_epoch(&a, &b, &c).unwrap(), derive_epoch(&a, &b, &c).unwrap());
    }

    #[test]
    fn context_changes_epoch_secret() {
        let (a, b) = ([1u8; 32], [2u8; 32]);
        let x = derive_epoch(&a, &b, &[3u8; 32]).unwrap();
        let y = derive_epoch(&a, &b, &[4u8; 32]).unwrap();
        assert_ne!(x.epoch_secret, y.epoch_secret);
        assert_ne!(x.exporter_secret, y.exporter_secret);
    }

    #[test]
    fn wrong_length_inputs() {
        let ok = [0u8; 32];
        assert_eq!(derive_epoch(&ok[..31], &ok, &ok), Err(CkaError::BadSecretLength(31)));
        assert_eq!(derive_epoch(&ok, &[0u8; 33], &ok), Err(CkaError::BadSecretLength(33)));
        assert_eq!(derive_epoch(&ok, &ok, &[]), Err(CkaError::BadSecretLength(0)));
    }

    #[test]
    fn export_length_bounds() {
        let s = [9u8; 32];
        assert_eq!(export(&s, "x", b"", 15), Err(CkaError::BadLength(15)));
        assert_eq!(export(&s, "x", b"", 16).unwrap().len(), 16);
        assert_eq!(export(&s, "x", b"", 255 * 32).unwrap().len(), 8160);
        assert_eq!(export(&s, "x", b"", 255 * 32 + 1), Err(CkaError::BadLength(8161)));
    }

    #[test]
    fn export_separates_labels_and_contexts() {
        let s = [9u8; 32];
        assert_ne!(export(&s, "a", b"", 32).unwrap(), export(&s, "b", b"", 32).unwrap());
        assert_ne!(export(&s, "a", b"0", 32).unwrap(), export(&s, "a", b"1", 32).unwrap());
        assert_eq!(
            export(&s, "bpsec-bcb", &[0], 32).unwrap(),
            export(&s, "bpsec-bcb", &[0], 32).unwrap()
        );
    }
}
