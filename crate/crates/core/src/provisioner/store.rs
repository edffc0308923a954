//! Local/remote data split: bulky raw measurements stay on the local
//! controller, only extracted parameters and reports are copied remote.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobKind {
    /// Sampled measurements: DLM z-series, per-record spectra.
    RawSeries,
    Parameters,
    Report,
}

/// Field names that only occur in raw measurement payloads.
pub const RAW_FIELDS: [&str; 5] = ["z_km", "gamma_p_db", "rx_spectrum", "rx_osnr", "records"];
/// Longest numeric array a parameter or report document may hold.
pub const MAX_PARAMETER_ARRAY: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub key: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub key: String,
    /// JSON pointer to the offending value.
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Default)]
struct Inner {
    local: BTreeMap<String, (BlobKind, Vec<u8>)>,
    remote: BTreeMap<String, (BlobKind, Vec<u8>)>,
    transfers: Vec<Transfer>,
}

/// Thread-safe keyed stores; every access takes one lock.
#[derive(Debug, Default)]
pub struct HybridStore {
    inner: Mutex<Inner>,
}

fn encode(value: &impl Serialize) -> Result<Vec<u8>> {
    serde_json::to_vec(value).map_err(|e| Error::Store(e.to_string()))
}

fn decode<T: DeserializeOwned>(key: &str, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Store(format!("{key}: {e}")))
}

impl HybridStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn put_local(&self, key: &str, kind: BlobKind, value: &impl Serialize) -> Result<()> {
        let bytes = encode(value)?;
        self.lock().local.insert(key.into(), (kind, bytes));
        Ok(())
    }

    /// Copies a parameter or report document to the remote store. Raw
    /// series are refused, as is any document the audit would flag.
    pub fn put_remote(&self, key: &str, kind: BlobKind, value: &impl Serialize) -> Result<()> {
        if kind == BlobKind::RawSeries {
            return Err(Error::Store(format!("{key}: raw series stay local")));
        }
        let bytes = encode(value)?;
        let doc: Value = serde_json::from_slice(&bytes).map_err(|e| Error::Store(e.to_string()))?;
        if let Some(f) = scan(key, &doc).into_iter().next() {
            return Err(Error::Store(format!("{}: {} at {}", f.key, f.reason, f.path)));
        }
        let mut inner = self.lock();
        inner.transfers.push(Transfer { key: key.into(), bytes: bytes.len() });
        inner.remote.insert(key.into(), (kind, bytes));
        Ok(())
    }

    pub fn get_local<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let inner = self.lock();
        let (_, b) = inner.local.get(key).ok_or_else(|| Error::Store(format!("no local entry {key}")))?;
        decode(key, b)
    }

    pub fn get_remote<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let inner = self.lock();
        let (_, b) = inner.remote.get(key).ok_or_else(|| Error::Store(format!("no remote entry {key}")))?;
        decode(key, b)
    }

    pub fn local_keys(&self) -> Vec<String> {
        self.lock().local.keys().cloned().collect()
    }

    pub fn remote_keys(&self) -> Vec<String> {
        self.lock().remote.keys().cloned().collect()
    }

    pub fn remote_kind(&self, key: &str) -> Option<BlobKind> {
        self.lock().remote.get(key).map(|(k, _)| *k)
    }

    pub fn transfers(&self) -> Vec<Transfer> {
        self.lock().transfers.clone()
    }

    /// Inspects every remote document for raw measurement content.
    pub fn audit(&self) -> Vec<AuditFinding> {
        let inner = self.lock();
        let mut out = Vec::new();
        for (key, (kind, bytes)) in &inner.remote {
            if *kind == BlobKind::RawSeries {
                out.push(AuditFinding { key: key.clone(), path: String::new(), reason: "raw series kind".into() });
            }
            match serde_json::from_slice::<Value>(bytes) {
                Ok(doc) => out.extend(scan(key, &doc)),
                Err(e) => {
                    out.push(AuditFinding { key: key.clone(), path: String::new(), reason: format!("not JSON: {e}") })
                }
            }
        }
        out
    }
}

fn scan(key: &str, doc: &Value) -> Vec<AuditFinding> {
    fn walk(v: &Value, path: &mut String, key: &str, out: &mut Vec<AuditFinding>) {
        match v {
            Value::Array(items) => {
                if items.len() > MAX_PARAMETER_ARRAY && items.iter().all(Value::is_number) {
                    out.push(AuditFinding {
                        key: key.into(),
                        path: path.clone(),
                        reason: format!("numeric array of {} samples", items.len()),
                    });
                }
                for (i, it) in items.iter().enumerate() {
                    let n = path.len();
                    path.push_str(&format!("/{i}"));
                    walk(it, path, key, out);
                    path.truncate(n);
                }
            }
            Value::Object(m) => {
                for (k, it) in m {
                    let n = path.len();
                    path.push('/');
                    path.push_str(k);
                    if RAW_FIELDS.contains(&k.as_str()) {
                        out.push(AuditFinding {
                            key: key.into(),
                            path: path.clone(),
                            reason: format!("raw field {k}"),
                        });
                    }
                    walk(it, path, key, out);
                    path.truncate(n);
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(doc, &mut String::new(), key, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn raw_series_stay_local() {
        let s = HybridStore::new();
        let z: Vec<f64> = (0..1000).map(f64::from).collect();
        s.put_local("dlm/raw", BlobKind::RawSeries, &json!({ "z_km": z })).unwrap();
        assert!(s.put_remote("dlm/raw", BlobKind::RawSeries, &json!({})).is_err());
        assert!(s.put_remote("x", BlobKind::Parameters, &json!({ "z_km": [1.0] })).is_err());
        assert!(s.put_remote("y", BlobKind::Report, &json!({ "v": z })).is_err());
        assert!(s.remote_keys().is_empty());
        assert!(s.transfers().is_empty());
        s.put_remote("p", BlobKind::Parameters, &json!({ "ripple": vec![0.0; 40] })).unwrap();
        assert_eq!(s.transfers().len(), 1);
        assert!(s.audit().is_empty());
        let back: Value = s.get_local("dlm/raw").unwrap();
        assert_eq!(back["z_km"].as_array().unwrap().len(), 1000);
    }

    #[test]
    fn audit_flags_smuggled_content() {
        let s = HybridStore::new();
        s.lock().remote.insert("bad".into(), (BlobKind::Report, br#"{"a":{"rx_spectrum":[1]}}"#.to_vec()));
        let f = s.audit();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].path, "/a/rx_spectrum");
    }

    #[test]
    fn missing_keys_are_errors() {
        let s = HybridStore::new();
        assert!(s.get_remote::<Value>("nope").is_err());
        assert!(s.get_local::<Value>("nope").is_err());
    }
}
