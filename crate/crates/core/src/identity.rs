//! Minimal per-organization certificate authority.
//!
//! Each organization runs one CA holding an Ed25519 root key. Node
//! certificates bind `(subject, org, public key)` under the root's signature;
//! there is no expiry or revocation list.

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::Signer as _;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::digest::sha256_concat;

pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("malformed signature: expected {SIGNATURE_LEN} bytes, got {0}")]
    MalformedSignature(usize),
    #[error("certificate subject must be non-empty")]
    EmptySubject,
    #[error("CA for {ca_org} cannot issue certificates for org {requested}")]
    ForeignOrg { ca_org: String, requested: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("no trusted root for org {0}")]
    UnknownOrg(String),
    #[error("certificate for {0} does not verify under its issuer root")]
    BadIssuerSignature(String),
    #[error("signature by {0} does not verify")]
    BadSignature(String),
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn from_bytes(bytes: [u8; PUBLIC_KEY_LEN]) -> Self {
        Self(bytes)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0[..6]))
    }
}

impl Canonical for PublicKey {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_fixed(&self.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.take_array()?))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature([u8; SIGNATURE_LEN]);

impl Signature {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, IdentityError> {
        let arr: [u8; SIGNATURE_LEN] = bytes
            .try_into()
            .map_err(|_| IdentityError::MalformedSignature(bytes.len()))?;
        Ok(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }

    /// Placeholder used while building a value that is signed afterwards.
    pub const fn empty() -> Self {
        Self([0u8; SIGNATURE_LEN])
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..6]))
    }
}

impl Canonical for Signature {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_fixed(&self.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.take_array()?))
    }
}

/// Private half of a node keypair. Owned by exactly one node.
#[derive(Clone)]
pub struct SigningKey(ed25519_dalek::SigningKey);

impl SigningKey {
    fn from_seed(seed: [u8; 32]) -> Self {
        Self(ed25519_dalek::SigningKey::from_bytes(&seed))
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.verifying_key().to_bytes())
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningKey(public={:?})", self.public_key())
    }
}

pub fn sign(key: &SigningKey, message: &[u8]) -> Signature {
    Signature(key.0.sign(message).to_bytes())
}

/// Verifies `signature` over `message` against the certificate's key.
pub fn verify(cert: &Certificate, message: &[u8], signature: &Signature) -> bool {
    verify_with_key(&cert.public_key, message, signature)
}

/// Like [`verify`] but for signatures arriving as untrusted byte strings.
pub fn verify_bytes(
    cert: &Certificate,
    message: &[u8],
    signature: &[u8],
) -> Result<bool, IdentityError> {
    let sig = Signature::from_slice(signature)?;
    Ok(verify(cert, message, &sig))
}

fn verify_with_key(key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&key.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    vk.verify_strict(message, &sig).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: String,
    pub org_id: String,
    pub public_key: PublicKey,
    pub issuer: String,
    pub issuer_signature: Signature,
}

impl Certificate {
    /// Bytes covered by the issuer signature: `subject ‖ org ‖ public_key`.
    pub fn signed_bytes(&self) -> Vec<u8> {
        tbs_bytes(&self.subject, &self.org_id, &self.public_key)
    }

    pub fn verify_issuer(&self, root: &PublicKey) -> bool {
        verify_with_key(root, &self.signed_bytes(), &self.issuer_signature)
    }
}

fn tbs_bytes(subject: &str, org_id: &str, public_key: &PublicKey) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.put_str(subject).put_str(org_id).put(public_key);
    enc.into_bytes()
}

impl Canonical for Certificate {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_str(&self.subject)
            .put_str(&self.org_id)
            .put(&self.public_key)
            .put_str(&self.issuer)
            .put(&self.issuer_signature);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            subject: dec.string()?,
            org_id: dec.string()?,
            public_key: dec.get()?,
            issuer: dec.string()?,
            issuer_signature: dec.get()?,
        })
    }
}

pub struct CertificateAuthority {
    id: String,
    org_id: String,
    root: SigningKey,
    issue_rng: ChaCha20Rng,
}

impl fmt::Debug for CertificateAuthority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CertificateAuthority")
            .field("id", &self.id)
            .field("root", &self.root.public_key())
            .finish()
    }
}

/// Creates the CA for `org_id`. With a seed, the root key and every key it
/// later issues are a pure function of `(seed, org_id)` and issuance order.
pub fn create_ca(org_id: &str, seed: Option<&[u8]>) -> CertificateAuthority {
    let (root_seed, rng_seed) = match seed {
        Some(seed) => (
            sha256_concat([&b"ca-root"[..], seed, org_id.as_bytes()]),
            sha256_concat([&b"ca-issue"[..], seed, org_id.as_bytes()]),
        ),
        None => {
            let mut a = [0u8; 32];
            let mut b = [0u8; 32];
            rand::thread_rng().fill_bytes(&mut a);
            rand::thread_rng().fill_bytes(&mut b);
            (
                crate::digest::Digest::from_bytes(a),
                crate::digest::Digest::from_bytes(b),
            )
        }
    };
    CertificateAuthority {
        id: format!("ca.{org_id}"),
        org_id: org_id.to_owned(),
        root: SigningKey::from_seed(*root_seed.as_bytes()),
        issue_rng: ChaCha20Rng::from_seed(*rng_seed.as_bytes()),
    }
}

impl CertificateAuthority {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn org_id(&self) -> &str {
        &self.org_id
    }

    pub fn root_public_key(&self) -> PublicKey {
        self.root.public_key()
    }

    /// Generates a fresh keypair for `subject` and certifies it.
    pub fn issue_certificate(
        &mut self,
        subject: &str,
        org: &str,
    ) -> Result<(Certificate, SigningKey), IdentityError> {
        if subject.is_empty() {
            return Err(IdentityError::EmptySubject);
        }
        if org != self.org_id {
            return Err(IdentityError::ForeignOrg {
                ca_org: self.org_id.clone(),
                requested: org.to_owned(),
            });
        }
        let mut seed = [0u8; 32];
        self.issue_rng.fill_bytes(&mut seed);
        let key = SigningKey::from_seed(seed);
        let public_key = key.public_key();
        let issuer_signature = sign(&self.root, &tbs_bytes(subject, org, &public_key));
        let cert = Certificate {
            subject: subject.to_owned(),
            org_id: org.to_owned(),
            public_key,
            issuer: self.id.clone(),
            issuer_signature,
        };
        Ok((cert, key))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustedRoot {
    pub ca_id: String,
    pub key: PublicKey,
}

/// The set of CA roots a node trusts, keyed by organization.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustRoots {
    roots: BTreeMap<String, TrustedRoot>,
}

impl TrustRoots {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trust(&mut self, ca: &CertificateAuthority) {
        self.insert(ca.org_id(), ca.id(), ca.root_public_key());
    }

    pub fn insert(&mut self, org_id: &str, ca_id: &str, key: PublicKey) {
        self.roots.insert(
            org_id.to_owned(),
            TrustedRoot {
                ca_id: ca_id.to_owned(),
                key,
            },
        );
    }

    pub fn get(&self, org_id: &str) -> Option<&TrustedRoot> {
        self.roots.get(org_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TrustedRoot)> {
        self.roots.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Accepts a certificate only if it names its org's CA as issuer and the
    /// root signature verifies.
    pub fn authenticate(&self, cert: &Certificate) -> Result<(), AuthError> {
        let root = self
            .roots
            .get(&cert.org_id)
            .ok_or_else(|| AuthError::UnknownOrg(cert.org_id.clone()))?;
        if cert.issuer != root.ca_id || !cert.verify_issuer(&root.key) {
            return Err(AuthError::BadIssuerSignature(cert.subject.clone()));
        }
        Ok(())
    }

    /// Checks the certificate chain, then the signature itself.
    pub fn verify_signed(
        &self,
        cert: &Certificate,
        message: &[u8],
        signature: &Signature,
    ) -> Result<(), AuthError> {
        self.authenticate(cert)?;
        if !verify(cert, message, signature) {
            return Err(AuthError::BadSignature(cert.subject.clone()));
        }
        Ok(())
    }
}

impl Canonical for TrustRoots {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_len(self.roots.len());
        for (org, root) in &self.roots {
            enc.put_str(org).put_str(&root.ca_id).put(&root.key);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let n = dec.length_prefix()?;
        let mut roots = BTreeMap::new();
        for _ in 0..n {
            let org = dec.string()?;
            let root = TrustedRoot {
                ca_id: dec.string()?,
                key: dec.get()?,
            };
            if roots.insert(org, root).is_some() {
                return Err(DecodeError::Invalid("duplicate trust root".into()));
            }
        }
        Ok(Self { roots })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn org1() -> CertificateAuthority {
        create_ca("org1", Some(b"test-seed"))
    }

    #[test]
    fn seeded_ca_is_deterministic() {
        assert_eq!(org1().root_public_key(), org1().root_public_key());
    }

    #[test]
    fn unseeded_cas_differ() {
        assert_ne!(
            create_ca("org1", None).root_public_key(),
            create_ca("org1", None).root_public_key()
        );
    }

    #[test]
    fn certificates_do_not_cross_verify_between_orgs() {
        let mut ca1 = org1();
        let ca2 = create_ca("org2", Some(b"test-seed"));
        let (cert, _) = ca1.issue_certificate("peer0.iiitkottayam.com", "org1").unwrap();
        assert!(cert.verify_issuer(&ca1.root_public_key()));
        assert!(!cert.verify_issuer(&ca2.root_public_key()));
    }

    #[test]
    fn issued_certificate_verifies() {
        let mut ca = org1();
        let (cert, key) = ca.issue_certificate("peer0.iiitkottayam.com", "org1").unwrap();
        assert!(cert.verify_issuer(&ca.root_public_key()));
        assert_eq!(cert.public_key, key.public_key());
        assert_eq!(cert.issuer, "ca.org1");
    }

    #[test]
    fn reissuance_yields_two_valid_certificates() {
        let mut ca = org1();
        let (a, _) = ca.issue_certificate("peer1.iiitkottayam.com", "org1").unwrap();
        let (b, _) = ca.issue_certificate("peer1.iiitkottayam.com", "org1").unwrap();
        assert_ne!(a.public_key, b.public_key);
        assert!(a.verify_issuer(&ca.root_public_key()));
        assert!(b.verify_issuer(&ca.root_public_key()));
    }

    #[test]
    fn empty_subject_and_foreign_org_are_rejected() {
        let mut ca = org1();
        assert_eq!(
            ca.issue_certificate("", "org1").unwrap_err(),
            IdentityError::EmptySubject
        );
        assert!(matches!(
            ca.issue_certificate("x", "org2"),
            Err(IdentityError::ForeignOrg { .. })
        ));
    }

    #[test]
    fn every_single_byte_flip_in_a_certificate_is_rejected() {
        let mut ca = org1();
        let mut roots = TrustRoots::new();
        roots.trust(&ca);
        let (cert, _) = ca.issue_certificate("peer0.iiitkottayam.com", "org1").unwrap();
        assert!(roots.authenticate(&cert).is_ok());
        let bytes = cert.to_canonical_bytes();
        for i in 0..bytes.len() {
            for mask in [0x01u8, 0x80] {
                let mut b = bytes.clone();
                b[i] ^= mask;
                if let Ok(bad) = Certificate::from_canonical_bytes(&b) {
                    assert!(roots.authenticate(&bad).is_err(), "flip at byte {i} accepted");
                }
            }
        }
    }

    #[test]
    fn sign_verify_round_trip_and_wrong_certificate() {
        let mut ca = org1();
        let (a, ka) = ca.issue_certificate("gateway-1", "org1").unwrap();
        let (b, _) = ca.issue_certificate("gateway-2", "org1").unwrap();
        let sig = sign(&ka, b"proposal bytes");
        assert!(verify(&a, b"proposal bytes", &sig));
        assert!(!verify(&b, b"proposal bytes", &sig));
    }

    #[test]
    fn wrong_length_signature_is_malformed() {
        let mut ca = org1();
        let (a, _) = ca.issue_certificate("gateway-1", "org1").unwrap();
        assert_eq!(
            verify_bytes(&a, b"m", &[0u8; 63]),
            Err(IdentityError::MalformedSignature(63))
        );
    }

    #[test]
    fn trust_roots_round_trip() {
        let mut roots = TrustRoots::new();
        roots.trust(&org1());
        roots.trust(&create_ca("org2", Some(b"s")));
        let back = TrustRoots::from_canonical_bytes(&roots.to_canonical_bytes()).unwrap();
        assert_eq!(back, roots);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn any_bit_flip_in_the_message_breaks_verification(
            msg in proptest::collection::vec(any::<u8>(), 1..128),
            pos in any::<proptest::sample::Index>(),
            bit in 0u8..8,
        ) {
            let mut ca = create_ca("org1", Some(b"fuzz"));
            let (cert, key) = ca.issue_certificate("gateway-1", "org1").unwrap();
            let sig = sign(&key, &msg);
            prop_assert!(verify(&cert, &msg, &sig));
            let mut flipped = msg.clone();
            flipped[pos.index(msg.len())] ^= 1 << bit;
            prop_assert!(!verify(&cert, &flipped, &sig));
            let mut bad_sig = *sig.as_bytes();
            bad_sig[pos.index(SIGNATURE_LEN)] ^= 1 << bit;
            prop_assert!(!verify(&cert, &msg, &Signature(bad_sig)));
        }
    }
}
