//! Self-signed server identity and the client-side pin check.
//!
//! The agent does not consult any CA. It accepts exactly the certificates it
//! was configured with (by DER, or by SHA-256 of the DER), and the handshake
//! is aborted before any request byte is written when the server presents
//! anything else.

use std::path::Path;
use std::sync::Arc;

use rustls::client::danger::{HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier};
use rustls::crypto::{verify_tls12_signature, verify_tls13_signature, CryptoProvider};
use rustls::pki_types::pem::PemObject;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, ServerName, UnixTime};
use rustls::{ClientConfig, DigitallySignedStruct, ServerConfig, SignatureScheme};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum TlsError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Pem { path: String, message: String },
    #[error("invalid pin {0:?}: expected a PEM file or sha256:<64 hex digits>")]
    BadPin(String),
    #[error("no pins configured")]
    EmptyPin,
    #[error("certificate generation failed: {0}")]
    Generate(String),
    #[error(transparent)]
    Rustls(#[from] rustls::Error),
}

fn provider() -> Arc<CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

/// A freshly generated self-signed server certificate.
pub struct SelfSigned {
    pub cert_pem: String,
    pub key_pem: String,
}

impl SelfSigned {
    pub fn generate(hosts: &[&str]) -> Result<Self, TlsError> {
        let names: Vec<String> = hosts.iter().map(|h| h.to_string()).collect();
        let certified = rcgen::generate_simple_self_signed(names).map_err(|e| TlsError::Generate(e.to_string()))?;
        Ok(Self {
            cert_pem: certified.cert.pem(),
            key_pem: certified.signing_key.serialize_pem(),
        })
    }

    pub fn cert_der(&self) -> CertificateDer<'static> {
        CertificateDer::from_pem_slice(self.cert_pem.as_bytes()).expect("generated PEM parses")
    }

    pub fn server_config(&self) -> Result<Arc<ServerConfig>, TlsError> {
        let key = PrivateKeyDer::from_pem_slice(self.key_pem.as_bytes()).map_err(|e| TlsError::Pem {
            path: "<generated>".into(),
            message: e.to_string(),
        })?;
        server_config(vec![self.cert_der()], key)
    }

    pub fn write(&self, cert: &Path, key: &Path) -> Result<(), TlsError> {
        std::fs::write(cert, &self.cert_pem).map_err(|source| io_err(cert, source))?;
        write_private(key, self.key_pem.as_bytes()).map_err(|source| io_err(key, source))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> TlsError {
    TlsError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[cfg(unix)]
fn write_private(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = std::fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)?;
    f.write_all(bytes)
}

#[cfg(not(unix))]
fn write_private(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    std::fs::write(path, bytes)
}

pub fn load_certs(path: &Path) -> Result<Vec<CertificateDer<'static>>, TlsError> {
    let pem_err = |message: String| TlsError::Pem {
        path: path.display().to_string(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|source| io_err(path, source))?;
    let certs = CertificateDer::pem_slice_iter(&bytes)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| pem_err(e.to_string()))?;
    if certs.is_empty() {
        return Err(pem_err("no certificate found".into()));
    }
    Ok(certs)
}

pub fn load_key(path: &Path) -> Result<PrivateKeyDer<'static>, TlsError> {
    let bytes = std::fs::read(path).map_err(|source| io_err(path, source))?;
    PrivateKeyDer::from_pem_slice(&bytes).map_err(|e| TlsError::Pem {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn server_config(
    certs: Vec<CertificateDer<'static>>,
    key: PrivateKeyDer<'static>,
) -> Result<Arc<ServerConfig>, TlsError> {
    let mut config = ServerConfig::builder_with_provider(provider())
        .with_safe_default_protocol_versions()?
        .with_no_client_auth()
        .with_single_cert(certs, key)?;
    config.alpn_protocols = vec![b"http/1.1".to_vec()];
    Ok(Arc::new(config))
}

/// The set of server certificates the client accepts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pin {
    certs: Vec<Vec<u8>>,
    digests: Vec<[u8; 32]>,
}

impl Pin {
    pub fn cert(der: &CertificateDer<'_>) -> Self {
        Self {
            certs: vec![der.to_vec()],
            digests: Vec::new(),
        }
    }

    pub fn sha256(digest: [u8; 32]) -> Self {
        Self {
            certs: Vec::new(),
            digests: vec![digest],
        }
    }

    /// `sha256:<hex>` or the path of a PEM file; every certificate in the
    /// file is accepted. A missing file is an error, never "no pinning".
    pub fn parse(spec: &str) -> Result<Self, TlsError> {
        if let Some(hex_digest) = spec.strip_prefix("sha256:") {
            let bytes = hex::decode(hex_digest).map_err(|_| TlsError::BadPin(spec.into()))?;
            let digest: [u8; 32] = bytes.try_into().map_err(|_| TlsError::BadPin(spec.into()))?;
            return Ok(Self::sha256(digest));
        }
        let certs = load_certs(Path::new(spec))?;
        Ok(Self {
            certs: certs.iter().map(|c| c.to_vec()).collect(),
            digests: Vec::new(),
        })
    }

    pub fn merge(mut self, other: Pin) -> Self {
        self.certs.extend(other.certs);
        self.digests.extend(other.digests);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.certs.is_empty() && self.digests.is_empty()
    }

    pub fn matches(&self, der: &[u8]) -> bool {
        if self.certs.iter().any(|c| c == der) {
            return true;
        }
        let digest: [u8; 32] = Sha256::digest(der).into();
        self.digests.contains(&digest)
    }
}

pub fn fingerprint(der: &CertificateDer<'_>) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(der.as_ref())))
}

#[derive(Debug)]
struct PinnedVerifier {
    pin: Pin,
    provider: Arc<CryptoProvider>,
}

impl ServerCertVerifier for PinnedVerifier {
    fn verify_server_cert(
        &self,
        end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp_response: &[u8],
        _now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        // The pin replaces name and chain checks entirely.
        if self.pin.matches(end_entity.as_ref()) {
            Ok(ServerCertVerified::assertion())
        } else {
            Err(rustls::Error::InvalidCertificate(
                rustls::CertificateError::ApplicationVerificationFailure,
            ))
        }
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls12_signature(message, cert, dss, &self.provider.signature_verification_algorithms)
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls13_signature(message, cert, dss, &self.provider.signature_verification_algorithms)
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.provider.signature_verification_algorithms.supported_schemes()
    }
}

pub fn pinned_client_config(pin: Pin) -> Result<Arc<ClientConfig>, TlsError> {
    if pin.is_empty() {
        return Err(TlsError::EmptyPin);
    }
    let provider = provider();
    let verifier = Arc::new(PinnedVerifier {
        pin,
        provider: provider.clone(),
    });
    let mut config = ClientConfig::builder_with_provider(provider)
        .with_safe_default_protocol_versions()?
        .dangerous()
        .with_custom_certificate_verifier(verifier)
        .with_no_client_auth();
    config.alpn_protocols = vec![b"http/1.1".to_vec()];
    Ok(Arc::new(config))
}

/// True if `err` means the server's certificate failed the pin check.
pub fn is_pin_failure(err: &(dyn std::error::Error + 'static)) -> bool {
    let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(err);
    while let Some(e) = cur {
        if let Some(rustls::Error::InvalidCertificate(_)) = e.downcast_ref::<rustls::Error>() {
            return true;
        }
        cur = e.source();
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pin_by_digest_matches_only_that_cert() {
        let a = SelfSigned::generate(&["localhost"]).unwrap().cert_der();
        let b = SelfSigned::generate(&["localhost"]).unwrap().cert_der();
        let pin = Pin::parse(&fingerprint(&a)).unwrap();
        assert!(pin.matches(&a));
        assert!(!pin.matches(&b));
        assert!(Pin::cert(&b).matches(&b));
    }

    #[test]
    fn missing_pin_file_is_an_error() {
        assert!(matches!(
            Pin::parse("/nonexistent/server.pem"),
            Err(TlsError::Io { .. })
        ));
        assert!(matches!(Pin::parse("sha256:abcd"), Err(TlsError::BadPin(_))));
        assert!(matches!(pinned_client_config(Pin::default()), Err(TlsError::EmptyPin)));
    }

    #[test]
    fn pem_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let generated = SelfSigned::generate(&["localhost", "127.0.0.1"]).unwrap();
        let (cert, key) = (dir.path().join("c.pem"), dir.path().join("k.pem"));
        generated.write(&cert, &key).unwrap();
        let certs = load_certs(&cert).unwrap();
        assert_eq!(certs, vec![generated.cert_der()]);
        server_config(certs, load_key(&key).unwrap()).unwrap();
        assert!(Pin::parse(cert.to_str().unwrap())
            .unwrap()
            .matches(&generated.cert_der()));
    }
}
