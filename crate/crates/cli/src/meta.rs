use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ivgf_core::io::config::render_config;
use ivgf_core::{Config, Error, Result};

pub const SEED_ENV: &str = "IVGF_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedSource {
    Flag,
    Env,
    Config,
}

impl SeedSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SeedSource::Flag => "flag",
            SeedSource::Env => "env",
            SeedSource::Config => "config",
        }
    }
}

/// `--seed` wins, then `IVGF_SEED`, then the config value.
pub fn resolve_seed(flag: Option<u64>, config_seed: u64) -> Result<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    match std::env::var(SEED_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(|s| (s, SeedSource::Env))
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        _ => Ok((config_seed, SeedSource::Config)),
    }
}

/// Run metadata, written before any result file and completed on exit.
pub struct RunMeta {
    path: PathBuf,
    started: Instant,
}

impl RunMeta {
    pub fn begin(
        path: impl Into<PathBuf>,
        command: &str,
        seed: Option<(u64, SeedSource)>,
        cfg: &Config,
        outputs: &[&Path],
    ) -> Result<Self> {
        let path = path.into();
        let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut s = String::from("# ivgf run metadata\n");
        writeln!(s, "command = {command}").unwrap();
        writeln!(s, "version = {}", env!("CARGO_PKG_VERSION")).unwrap();
        if let Some((seed, src)) = seed {
            writeln!(s, "seed = {seed}").unwrap();
            writeln!(s, "seed_source = {}", src.as_str()).unwrap();
        }
        writeln!(s, "started_unix = {unix}").unwrap();
        let names: Vec<String> = outputs.iter().map(|p| p.display().to_string()).collect();
        writeln!(s, "outputs = {}", names.join(", ")).unwrap();
        s.push_str("[config]\n");
        s.push_str(&render_config(cfg));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
        }
        std::fs::write(&path, s).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        Ok(Self { path, started: Instant::now() })
    }

    /// Runs `body` and records its outcome, successful or not.
    pub fn run<T>(self, body: impl FnOnce() -> Result<T>) -> Result<T> {
        let out = body();
        let status = match &out {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("error: {e}"),
        };
        self.finish(&status)?;
        out
    }

    pub fn finish(self, status: &str) -> Result<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::Io { path: self.path.clone(), source: e })?;
        write!(f, "[result]\nstatus = {status}\nwall_clock_s = {:.3}\n", self.started.elapsed().as_secs_f64())
            .map_err(|e| Error::Io { path: self.path.clone(), source: e })
    }
}
