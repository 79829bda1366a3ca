//! Artifact plumbing: content hashing, per-stage manifests, staleness
//! checks, and the comma-separated table format shared by every stage
//! (header row preceded by a comment line carrying the run hash).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bpod::linops::{Matrix, Vector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A failure with its process exit code: 2 for configuration/usage
/// problems, 3 for numerical ones.
#[derive(Debug)]
pub struct Failure {
    pub msg: String,
    pub code: u8,
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure { msg: msg.into(), code: 2 }
    }
}

impl From<bpod::Error> for Failure {
    fn from(e: bpod::Error) -> Self {
        use bpod::Error::*;
        let code = match e {
            Dimension(_) | InvalidArgument(_) | Parse(_) | Io(_) => 2,
            _ => 3,
        };
        Failure { msg: e.to_string(), code }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { msg: format!("io: {e}"), code: 2 }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn file_hash(path: &Path) -> Result<String, Failure> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Record of one stage run. `wall_seconds` is informational and excluded
/// from the run hash so reruns stay byte-identical in every table.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    /// Identity of this run: hash over stage, version, seed, config hash,
    /// and input hashes. Carried as a comment in every output table.
    pub run_hash: String,
    pub wall_seconds: f64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Full configuration snapshot for the record.
    pub config: String,
}

pub fn manifest_path(out_dir: &Path, stage: &str) -> PathBuf {
    out_dir.join(format!("{stage}.manifest.toml"))
}

fn compute_run_hash(
    stage: &str,
    version: &str,
    seed: u64,
    config_hash: &str,
    inputs: &BTreeMap<String, String>,
) -> String {
    let mut acc = format!("{stage}\n{version}\n{seed}\n{config_hash}\n");
    for (name, hash) in inputs {
        let _ = writeln!(acc, "{name}={hash}");
    }
    sha256_hex(acc.as_bytes())
}

/// One stage run in progress: verifies inputs up front, stamps tables with
/// the run hash, and records output hashes into the manifest at the end.
pub struct StageRun {
    out_dir: PathBuf,
    manifest: Manifest,
    started: std::time::Instant,
    force: bool,
}

impl StageRun {
    pub fn begin(
        out_dir: &Path,
        stage: &str,
        seed: u64,
        config_snapshot: &str,
        force: bool,
    ) -> Result<Self, Failure> {
        std::fs::create_dir_all(out_dir)?;
        let config_hash = sha256_hex(config_snapshot.as_bytes());
        let manifest = Manifest {
            stage: stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash,
            run_hash: String::new(),
            wall_seconds: 0.0,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            config: config_snapshot.to_string(),
        };
        Ok(StageRun { out_dir: out_dir.to_path_buf(), manifest, started: std::time::Instant::now(), force })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Registers an upstream artifact, refusing stale or unexplained files
    /// unless --force was given. `producer` is the subcommand that makes
    /// the artifact.
    pub fn require_input(&mut self, name: &str, producer: &str) -> Result<PathBuf, Failure> {
        let path = self.out_dir.join(name);
        if !path.exists() {
            return Err(Failure::config(format!(
                "missing artifact {name}: run `bpod {producer}` first"
            )));
        }
        let hash = file_hash(&path)?;
        if !self.force {
            let mpath = manifest_path(&self.out_dir, producer);
            let text = std::fs::read_to_string(&mpath).map_err(|_| {
                Failure::config(format!(
                    "artifact {name} has no manifest: re-run `bpod {producer}` or pass --force"
                ))
            })?;
            let recorded: Manifest = toml::from_str(&text).map_err(|e| {
                Failure::config(format!("manifest {} is unreadable: {e}", mpath.display()))
            })?;
            match recorded.outputs.get(name) {
                Some(h) if *h == hash => {}
                Some(_) => {
                    return Err(Failure::config(format!(
                        "artifact {name} does not match its manifest (edited or overwritten): \
                         re-run `bpod {producer}` or pass --force"
                    )));
                }
                None => {
                    return Err(Failure::config(format!(
                        "artifact {name} is not recorded by the {producer} manifest: \
                         re-run `bpod {producer}` or pass --force"
                    )));
                }
            }
            if recorded.config_hash != self.manifest.config_hash {
                return Err(Failure::config(format!(
                    "artifact {name} is stale: configuration or seed changed since \
                     `bpod {producer}` ran; re-run `bpod {producer}` or pass --force"
                )));
            }
        }
        self.manifest.inputs.insert(name.to_string(), hash);
        Ok(path)
    }

    /// Hash identifying this run; fixed once the inputs are registered.
    pub fn run_hash(&mut self) -> String {
        if self.manifest.run_hash.is_empty() {
            self.manifest.run_hash = compute_run_hash(
                &self.manifest.stage,
                &self.manifest.version,
                self.manifest.seed,
                &self.manifest.config_hash,
                &self.manifest.inputs,
            );
        }
        self.manifest.run_hash.clone()
    }

    /// Writes a stamped table: `# manifest <run hash>`, header, rows.
    pub fn write_table(
        &mut self,
        name: &str,
        header: &str,
        rows: &[String],
    ) -> Result<(), Failure> {
        let mut text = format!("# manifest {}\n{header}\n", self.run_hash());
        for row in rows {
            text.push_str(row);
            text.push('\n');
        }
        let path = self.out_dir.join(name);
        std::fs::write(&path, &text)?;
        self.manifest.outputs.insert(name.to_string(), sha256_hex(text.as_bytes()));
        Ok(())
    }

    /// Registers an output produced outside `write_table` (directories; one
    /// entry per file, keyed by relative path).
    pub fn note_output_dir(&mut self, name: &str) -> Result<(), Failure> {
        let dir = self.out_dir.join(name);
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            let rel = format!("{name}/{}", f.file_name().unwrap().to_string_lossy());
            let hash = file_hash(&f)?;
            self.manifest.outputs.insert(rel, hash);
        }
        Ok(())
    }

    /// Writes the manifest and finishes the run.
    pub fn finish(mut self) -> Result<(), Failure> {
        self.run_hash();
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        let text = toml::to_string(&self.manifest)
            .map_err(|e| Failure::config(format!("manifest serialization: {e}")))?;
        std::fs::write(manifest_path(&self.out_dir, &self.manifest.stage), text)?;
        Ok(())
    }
}

/// Full-precision scientific formatting; round-trips f64 exactly, so
/// artifacts consumed by later stages reproduce bit-identical numbers.
pub fn full(v: f64) -> String {
    format!("{v:.17e}")
}

/// Matrix as table rows (no header), full precision.
pub fn matrix_rows(m: &Matrix) -> Vec<String> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| full(m[(i, j)]))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect()
}

pub fn column_header(prefix: &str, k: usize) -> String {
    (1..=k).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

/// Reads a stamped table back: skips `#` comments, drops the header, and
/// parses every remaining row as one matrix row.
pub fn read_table_matrix(path: &Path) -> Result<Matrix, Failure> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                if width == 0 {
                    width = vals.len();
                } else if vals.len() != width {
                    return Err(Failure::config(format!(
                        "{}:{}: row has {} fields, expected {width}",
                        path.display(),
                        lineno + 1,
                        vals.len()
                    )));
                }
                rows.push(vals);
            }
            // The first unparsable line is the header.
            Err(_) if rows.is_empty() && width == 0 => continue,
            Err(e) => {
                return Err(Failure::config(format!(
                    "{}:{}: {e}",
                    path.display(),
                    lineno + 1
                )));
            }
        }
    }
    if rows.is_empty() {
        return Err(Failure::config(format!("{}: no data rows", path.display())));
    }
    Ok(Matrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

pub fn read_table_vector(path: &Path) -> Result<Vector, Failure> {
    let m = read_table_matrix(path)?;
    if m.ncols() != 1 {
        return Err(Failure::config(format!(
            "{}: expected a single column, found {}",
            path.display(),
            m.ncols()
        )));
    }
    Ok(Vector::from_column_slice(m.column(0).as_slice()))
}
