//! Self-contained run archives: JSON records, CSV tables and a MANIFEST of
//! SHA-256 content hashes.
//!
//! ```text
//! config.json  model.json  MANIFEST
//! records/{admission,initial,induction,deviation,lyapunov,continuity,schedule,summary}.jsonl
//! tables/{lyapunov,deviation,continuity}.csv
//! ```
//!
//! The only nondeterministic byte range is the `created_unix:` line of the
//! MANIFEST, which replay comparisons skip.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::deviation::write_deviation_csv;
use crate::error::{Error, Result};
use crate::lyapunov::write_jsonl;
use crate::pipeline::TheoremRun;

pub const MANIFEST_HEADER: &str = "skewshift archive v1";
pub const LYAPUNOV_CSV_HEADER: &str = "E,n,kind,value,std_error,samples,running_infimum,lower_bound";
pub const CONTINUITY_CSV_HEADER: &str =
    "E,N,delta,diff,diff_a,max_pointwise,lipschitz_bound,violations,noise,proxy_diff";

/// Tables every complete archive carries.
pub const TABLES: [&str; 3] = ["tables/lyapunov.csv", "tables/deviation.csv", "tables/continuity.csv"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub created_unix: u64,
    /// `(relative path, hex sha256)`, sorted by path.
    pub entries: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_json_pretty<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn jsonl<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_jsonl(&mut out, records)?;
    Ok(out)
}

fn lyapunov_csv(run: &TheoremRun) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "{LYAPUNOV_CSV_HEADER}")?;
    for e in &run.energies {
        for r in &e.lyapunov {
            let est = &r.estimate;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                est.energy,
                est.n,
                est.kind.as_str(),
                est.value,
                est.std_error,
                est.samples,
                r.running_infimum,
                r.lower_bound
            )?;
        }
    }
    Ok(out)
}

fn continuity_csv(run: &TheoremRun) -> Result<Vec<u8>> {
    let c = &run.continuity;
    let mut out = Vec::new();
    writeln!(out, "{CONTINUITY_CSV_HEADER}")?;
    for r in &c.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.energy,
            c.big_n,
            r.delta,
            r.diff,
            r.diff_a,
            r.max_pointwise,
            r.lipschitz_bound,
            r.violations,
            r.noise,
            r.proxy_diff
        )?;
    }
    Ok(out)
}

/// Render every archive file except the MANIFEST, keyed by relative path.
pub fn render_archive<C: Serialize>(config: &C, run: &TheoremRun) -> Result<BTreeMap<String, Vec<u8>>> {
    #[derive(Serialize)]
    struct ModelFile<'a> {
        hash: &'a str,
        #[serde(flatten)]
        spec: &'a crate::model::ModelSpec,
    }
    let mut files = BTreeMap::new();
    files.insert("config.json".to_string(), to_json_pretty(config)?);
    files.insert(
        "model.json".to_string(),
        to_json_pretty(&ModelFile {
            hash: &run.model_hash,
            spec: &run.model,
        })?,
    );
    let initial: Vec<_> = run.energies.iter().map(|e| &e.initial).collect();
    let induction: Vec<_> = run.energies.iter().flat_map(|e| &e.induction).collect();
    let deviation: Vec<_> = run.energies.iter().flat_map(|e| &e.deviation_trend).collect();
    let lyapunov: Vec<_> = run.energies.iter().flat_map(|e| &e.lyapunov).collect();
    files.insert("records/admission.jsonl".into(), jsonl(std::slice::from_ref(&run.admission))?);
    files.insert("records/initial.jsonl".into(), jsonl(&initial)?);
    files.insert("records/induction.jsonl".into(), jsonl(&induction)?);
    files.insert("records/deviation.jsonl".into(), jsonl(&deviation)?);
    files.insert("records/lyapunov.jsonl".into(), jsonl(&lyapunov)?);
    files.insert("records/continuity.jsonl".into(), jsonl(std::slice::from_ref(&run.continuity))?);
    files.insert("records/schedule.jsonl".into(), jsonl(std::slice::from_ref(&run.schedule))?);
    files.insert("records/summary.jsonl".into(), jsonl(std::slice::from_ref(&run.summary))?);

    files.insert("tables/lyapunov.csv".into(), lyapunov_csv(run)?);
    let mut dev = Vec::new();
    let reports: Vec<_> = run.energies.iter().flat_map(|e| e.deviation_trend.iter().cloned()).collect();
    write_deviation_csv(&mut dev, &reports)?;
    files.insert("tables/deviation.csv".into(), dev);
    files.insert("tables/continuity.csv".into(), continuity_csv(run)?);
    Ok(files)
}

fn manifest_text(created_unix: u64, entries: &BTreeMap<String, String>) -> String {
    let mut text = format!("{MANIFEST_HEADER}\ncreated_unix: {created_unix}\n");
    for (path, hash) in entries {
        text.push_str(&format!("{hash}  {path}\n"));
    }
    text
}

/// Write the archive into `dir`, which must be absent or empty. All files
/// are assembled in memory first, so a failed run leaves nothing behind.
pub fn write_archive<C: Serialize>(dir: &Path, config: &C, run: &TheoremRun) -> Result<Manifest> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        return Err(Error::InvalidInput(format!("archive directory {} is not empty", dir.display())));
    }
    let files = render_archive(config, run)?;
    let mut entries = BTreeMap::new();
    for (path, bytes) in &files {
        let full = dir.join(path);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&full, bytes)?;
        entries.insert(path.clone(), sha256_hex(bytes));
    }
    let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    fs::write(dir.join("MANIFEST"), manifest_text(created_unix, &entries))?;
    Ok(Manifest { created_unix, entries })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join("MANIFEST"))?;
    let bad = |what: &str| Error::InvalidInput(format!("malformed MANIFEST in {}: {what}", dir.display()));
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(bad("missing header"));
    }
    let created_unix = lines
        .next()
        .and_then(|l| l.strip_prefix("created_unix: "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing created_unix"))?;
    let mut entries = BTreeMap::new();
    for line in lines {
        let (hash, path) = line.split_once("  ").ok_or_else(|| bad(line))?;
        entries.insert(path.to_string(), hash.to_string());
    }
    Ok(Manifest { created_unix, entries })
}

/// Files whose contents no longer match the MANIFEST.
pub fn verify_archive(dir: &Path) -> Result<Vec<String>> {
    let manifest = read_manifest(dir)?;
    let mut bad = Vec::new();
    for (path, hash) in &manifest.entries {
        match fs::read(dir.join(path)) {
            Ok(bytes) if sha256_hex(&bytes) == *hash => {}
            _ => bad.push(path.clone()),
        }
    }
    Ok(bad)
}

/// Differences between two archives, ignoring the creation timestamp. Empty
/// means the archives are byte-identical file by file.
pub fn compare_archives(a: &Path, b: &Path) -> Result<Vec<String>> {
    let (ma, mb) = (read_manifest(a)?, read_manifest(b)?);
    let mut diffs = Vec::new();
    for path in ma.entries.keys().chain(mb.entries.keys().filter(|p| !ma.entries.contains_key(*p))) {
        match (ma.entries.get(path), mb.entries.get(path)) {
            (Some(x), Some(y)) if x == y => {
                if fs::read(a.join(path))? != fs::read(b.join(path))? {
                    diffs.push(format!("{path}: contents differ"));
                }
            }
            (Some(_), Some(_)) => diffs.push(format!("{path}: hashes differ")),
            _ => diffs.push(format!("{path}: present in only one archive")),
        }
    }
    Ok(diffs)
}

/// Tables listed in [`TABLES`] that are absent from `dir`.
pub fn missing_tables(dir: &Path) -> Vec<PathBuf> {
    TABLES
        .iter()
        .map(|t| dir.join(t))
        .filter(|p| !p.is_file())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::pipeline::{theorem_mode_run, RunSettings};

    fn tiny_run() -> (RunSettings, TheoremRun) {
        let settings = RunSettings {
            n0: 4,
            samples: 400,
            seed: 9,
            continuity_grid: 8,
            continuity_deltas: vec![1e-2, 1e-4],
            ..Default::default()
        };
        let run = theorem_mode_run(&ModelSpec::default_theorem(1.0), &settings).unwrap();
        (settings, run)
    }

    #[test]
    fn write_verify_compare() {
        let (settings, run) = tiny_run();
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        let m = write_archive(&a, &settings, &run).unwrap();
        assert_eq!(m.entries.len(), 13);
        assert!(missing_tables(&a).is_empty());
        assert!(verify_archive(&a).unwrap().is_empty());
        assert_eq!(read_manifest(&a).unwrap(), m);
        write_archive(&b, &settings, &run).unwrap();
        assert!(compare_archives(&a, &b).unwrap().is_empty());

        fs::write(b.join("tables/deviation.csv"), "tampered\n").unwrap();
        assert_eq!(verify_archive(&b).unwrap(), vec!["tables/deviation.csv".to_string()]);
        assert!(compare_archives(&a, &b).unwrap()[0].starts_with("tables/deviation.csv"));

        assert!(write_archive(&a, &settings, &run).is_err());
    }

    #[test]
    fn csv_headers_are_stable() {
        let (settings, run) = tiny_run();
        let files = render_archive(&settings, &run).unwrap();
        let first = |p: &str| String::from_utf8(files[p].clone()).unwrap().lines().next().unwrap().to_string();
        assert_eq!(first("tables/lyapunov.csv"), "E,n,kind,value,std_error,samples,running_infimum,lower_bound");
        assert_eq!(first("tables/deviation.csv"), "n,E,threshold,measure,ci_lo,ci_hi,samples,seed");
        assert_eq!(
            first("tables/continuity.csv"),
            "E,N,delta,diff,diff_a,max_pointwise,lipschitz_bound,violations,noise,proxy_diff"
        );
        let model: serde_json::Value = serde_json::from_slice(&files["model.json"]).unwrap();
        assert_eq!(model["lambda"], 256.0);
        assert_eq!(model["hash"], run.model_hash.as_str());
    }

    #[test]
    fn malformed_manifest_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("MANIFEST"), "something else\n").unwrap();
        assert!(read_manifest(tmp.path()).is_err());
        assert_eq!(missing_tables(tmp.path()).len(), 3);
    }
}
