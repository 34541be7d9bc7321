//! Atomic file output and run manifests.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use misclass_core::FitResult;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Version of the manifest JSON layout.
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_json_atomic(path: &Path, value: &serde_json::Value) -> io::Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: Vec<String>,
    /// SHA-256 of the resolved configuration JSON.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(config: &serde_json::Value, seed: u64, started: SystemTime, elapsed: Duration, outputs: Vec<PathBuf>) -> Self {
        let digest = Sha256::digest(config.to_string().as_bytes());
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: std::env::args().collect(),
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: started.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
            wall_clock_seconds: elapsed.as_secs_f64(),
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        write_json_atomic(path, &serde_json::to_value(self).expect("manifest serializes"))
    }
}

/// `out.csv` -> `out.csv.manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Aligned human-readable summary of a fit.
pub fn fit_table(fit: &FitResult) -> String {
    let mut out = String::new();
    let medians = fit.medians.as_ref();
    out.push_str(&format!("method: {}   n = {}\n\n", fit.method, fit.n));
    out.push_str(&format!("{:<14} {:>12} {:>12}", "coefficient", "estimate", "se"));
    if medians.is_some() {
        out.push_str(&format!(" {:>12}", "median"));
    }
    out.push('\n');
    for (idx, (name, est)) in fit.estimates().into_iter().enumerate() {
        let se = fit.standard_errors.get(idx).copied().unwrap_or(f64::NAN);
        out.push_str(&format!("{name:<14} {est:>12.4} {se:>12.4}"));
        if let Some(m) = medians {
            out.push_str(&format!(" {:>12.4}", m[idx]));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "\nP(Y=1) {:.4}   average sensitivity {:.4}   average specificity {:.4}\n",
        fit.prevalence, fit.rates.sens, fit.rates.spec
    ));
    if let Some(c) = &fit.correction {
        out.push_str(&format!(
            "label correction: flipped {}  ambiguous {}  (sens/spec before {:.3}/{:.3}, after {:.3}/{:.3})\n",
            c.flipped, c.ambiguous, c.pre_sens, c.pre_spec, c.post_sens, c.post_spec
        ));
    }
    if let Some(m) = &fit.mcmc {
        let flipped = m.chain_corrections.iter().flatten().filter(|c| c.flipped).count();
        out.push_str(&format!(
            "chains: {} x {} draws, {} flipped, max split R-hat {:.3}, min ESS {:.0}\n",
            m.chains,
            m.draws_per_chain,
            flipped,
            m.rhat.iter().copied().fold(f64::NAN, f64::max),
            m.ess.iter().copied().fold(f64::NAN, f64::min)
        ));
    }
    out.push_str(&format!(
        "converged {}  iterations {}  log-likelihood {:.4}\n",
        fit.converged, fit.iterations, fit.loglik
    ));
    out
}
