//! Model checkpoints.
//!
//! ```text
//! "EXNN" u32 version u32 reserved u64 json_len json
//! u64 n_params f32 params[n_params]
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EXNN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    network: NetworkConfig,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    extra: serde_json::Value,
}

/// A network together with free-form metadata (training config, history).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn new(network: Network<f32>) -> Self {
        Checkpoint {
            network,
            extra: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&Header {
            network: self.network.config.clone(),
            extra: self.extra.clone(),
        })?;
        let p = &self.network.params;
        let mut b = Vec::with_capacity(28 + json.len() + 4 * p.len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&0u32.to_le_bytes());
        b.extend_from_slice(&(json.len() as u64).to_le_bytes());
        b.extend_from_slice(&json);
        b.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for v in p {
            b.extend_from_slice(&v.to_le_bytes());
        }
        Ok(b)
    }

    pub fn from_bytes(b: &[u8]) -> Result<Checkpoint> {
        let need = |at: usize, n: usize| -> Result<()> {
            if at.checked_add(n).map_or(true, |e| e > b.len()) {
                Err(Error::format(at as u64, format!("truncated: need {n} bytes")))
            } else {
                Ok(())
            }
        };
        need(0, 4)?;
        if &b[..4] != MAGIC {
            return Err(Error::format(0, "bad magic, not an EXNN checkpoint"));
        }
        need(4, 16)?;
        let version = u32::from_le_bytes(b[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let jl = u64::from_le_bytes(b[12..20].try_into().unwrap());
        let jl = usize::try_from(jl).map_err(|_| Error::format(12, "header length overflows"))?;
        need(20, jl)?;
        let header: Header =
            serde_json::from_slice(&b[20..20 + jl]).map_err(|e| Error::format(20, format!("header JSON: {e}")))?;
        let at = 20 + jl;
        need(at, 8)?;
        let np = u64::from_le_bytes(b[at..at + 8].try_into().unwrap());
        let np = usize::try_from(np).map_err(|_| Error::format(at as u64, "parameter count overflows"))?;
        let expected = header
            .network
            .param_count()
            .map_err(|e| Error::format(20, format!("invalid network config: {e}")))?;
        if np != expected {
            return Err(Error::format(
                at as u64,
                format!("file holds {np} parameters, config needs {expected}"),
            ));
        }
        let body = at + 8;
        need(body, np.saturating_mul(4))?;
        if body + 4 * np != b.len() {
            return Err(Error::format((body + 4 * np) as u64, "trailing bytes after parameters"));
        }
        let params: Vec<f32> = b[body..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::format((body + 4 * i) as u64, "non-finite parameter"));
        }
        Ok(Checkpoint {
            network: Network::with_params(header.network, params)?,
            extra: header.extra,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let net = Network::<f32>::new(NetworkConfig::reference_1d(64, 6), 9).unwrap();
        Checkpoint {
            network: net,
            extra: serde_json::json!({"epochs": 3}),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = ckpt();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.exnn");
        c.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.network.params, c.network.params);
        assert_eq!(back.network.config, c.network.config);
        assert_eq!(back.extra, c.extra);
        assert_eq!(back.to_bytes().unwrap(), fs::read(&p).unwrap());
    }

    #[test]
    fn corrupted_checkpoints_are_format_errors() {
        let good = ckpt().to_bytes().unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        for cut in [0, 2, 10, 25, 200, good.len() - 3] {
            assert!(matches!(Checkpoint::from_bytes(&good[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut bad = good.clone();
        bad[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
        let mut bad = good.clone();
        bad[22] = b'}';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
        let mut bad = good.clone();
        let n = bad.len();
        bad[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
    }
}
