//! The run manifest: what was run, on which data, with which seed, and what
//! came out of every equation. Written atomically so a run directory never
//! holds a half-written manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{validation, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Tool name and version that produced the run.
    pub tool: String,
    pub seed: u64,
    /// sha256 over the data and variable CSV bytes the run consumed.
    pub data_fingerprint: String,
    /// Effective flat config, after environment and flag overrides.
    pub config: BTreeMap<String, String>,
    pub panel: PanelInfo,
    /// Per-equation dimensions and estimation diagnostics; empty until an
    /// estimation has run in this directory.
    pub equations: Vec<EquationInfo>,
    pub n_save: usize,
    /// Wall-clock milliseconds per completed phase.
    pub timings_ms: BTreeMap<String, u64>,
    /// Layout of the files under draws/.
    pub draws_layout: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelInfo {
    pub n_units: usize,
    pub m: Vec<usize>,
    pub p: usize,
    pub t_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquationInfo {
    pub country: usize,
    pub eq: usize,
    /// Own-block columns.
    pub k: usize,
    /// Stacked-block columns.
    pub k_stacked: usize,
    pub t_eff: usize,
    pub vamp_converged: bool,
    pub vamp_iterations: usize,
    pub clamp_events: usize,
    pub var_scalar: f64,
    pub sigma2_hat: f64,
    /// Effective sample size per own-block coordinate.
    pub ess: Vec<f64>,
}

/// Writes `manifest.json` via a temp file and rename.
pub fn write_manifest(dir: &Path, m: &RunManifest) -> CliResult<()> {
    let body = serde_json::to_vec_pretty(m)
        .map_err(|e| validation(format!("manifest serialization: {e}")))?;
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    let fin = dir.join(MANIFEST_FILE);
    let mut f = std::fs::File::create(&tmp)
        .map_err(|e| validation(format!("cannot write {}: {e}", tmp.display())))?;
    f.write_all(&body)
        .and_then(|_| f.sync_all())
        .map_err(|e| validation(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, &fin)
        .map_err(|e| validation(format!("cannot finalize {}: {e}", fin.display())))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> CliResult<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| validation(format!("cannot parse {}: {e}", path.display())))
}

pub fn manifest_exists(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file()
}

/// sha256 hex over the concatenated bytes of the given files.
pub fn fingerprint_files(paths: &[&Path]) -> CliResult<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(p)
            .map_err(|e| validation(format!("cannot read {}: {e}", p.display())))?;
        h.update(&bytes);
    }
    Ok(hex_string(&h.finalize()))
}

pub fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrips_and_replaces_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest {
            tool: "pvar test".into(),
            seed: 9,
            data_fingerprint: "abc".into(),
            config: BTreeMap::from([("seed".to_string(), "9".to_string())]),
            panel: PanelInfo {
                n_units: 2,
                m: vec![1, 1],
                p: 1,
                t_len: 40,
            },
            equations: vec![],
            n_save: 100,
            timings_ms: BTreeMap::new(),
            draws_layout: String::new(),
        };
        write_manifest(dir.path(), &m).unwrap();
        m.seed = 10;
        write_manifest(dir.path(), &m).unwrap();
        let back = read_manifest(dir.path()).unwrap();
        assert_eq!(back.seed, 10);
        assert!(!dir.path().join("manifest.json.tmp").exists());
    }

    #[test]
    fn fingerprint_is_order_sensitive_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        std::fs::write(&a, "one").unwrap();
        std::fs::write(&b, "two").unwrap();
        let f1 = fingerprint_files(&[&a, &b]).unwrap();
        let f2 = fingerprint_files(&[&a, &b]).unwrap();
        let f3 = fingerprint_files(&[&b, &a]).unwrap();
        assert_eq!(f1, f2);
        assert_ne!(f1, f3);
        assert_eq!(f1.len(), 64);
    }
}
