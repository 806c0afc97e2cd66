use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Command};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Default stated in the method's original publication.
    #[serde(rename = "paper")]
    Published,
    /// Default chosen by this tool.
    ArtifactDefault,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub provenance: BTreeMap<String, Provenance>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Reads inputs and writes outputs while recording their digests.
pub struct RunContext {
    out: PathBuf,
    inputs: BTreeMap<PathBuf, String>,
    outputs: BTreeMap<PathBuf, String>,
}

impl RunContext {
    pub fn new(out: &Path) -> Self {
        Self {
            out: out.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(path.to_path_buf(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.read(path)?).with_context(|| format!("{} is not UTF-8", path.display()))
    }

    pub fn write(&mut self, relative: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let relative = relative.as_ref();
        write_atomic(&self.out.join(relative), bytes)?;
        self.outputs.insert(relative.to_path_buf(), sha256_hex(bytes));
        Ok(())
    }

    fn digests(map: BTreeMap<PathBuf, String>) -> Vec<FileDigest> {
        map.into_iter()
            .map(|(path, sha256)| FileDigest { path, sha256 })
            .collect()
    }
}

/// A subcommand whose fully resolved arguments are its manifest config.
pub trait Recorded: Serialize + DeserializeOwned {
    const NAME: &'static str;
    /// Argument ids whose defaults come from the original method.
    const PUBLISHED_DEFAULTS: &'static [&'static str] = &[];

    fn out_dir(&self) -> &Path;
    fn set_out_dir(&mut self, out: PathBuf);
    /// Makes every input path absolute so the manifest replays from anywhere.
    fn absolutize(&mut self) -> Result<()>;
    fn seed(&self) -> Option<u64> {
        None
    }
    fn run(&self, ctx: &mut RunContext) -> Result<()>;
}

pub fn absolute(path: &mut PathBuf) -> Result<()> {
    *path = fs::canonicalize(&*path).with_context(|| format!("cannot resolve {}", path.display()))?;
    Ok(())
}

pub fn provenance_of(command: &Command, matches: &ArgMatches, published: &[&str]) -> BTreeMap<String, Provenance> {
    command
        .get_arguments()
        .filter_map(|arg| {
            let id = arg.get_id().as_str();
            let p = match matches.value_source(id)? {
                ValueSource::DefaultValue if published.contains(&id) => Provenance::Published,
                ValueSource::DefaultValue => Provenance::ArtifactDefault,
                _ => Provenance::User,
            };
            Some((id.to_string(), p))
        })
        .collect()
}

/// Runs the command, then writes `manifest.json` into its output directory.
pub fn execute<C: Recorded>(mut args: C, provenance: BTreeMap<String, Provenance>) -> Result<RunManifest> {
    args.absolutize()?;
    let out = args.out_dir().to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    args.set_out_dir(fs::canonicalize(&out)?);
    let mut ctx = RunContext::new(args.out_dir());
    let outcome = args.run(&mut ctx);
    let manifest = RunManifest {
        command: C::NAME.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: args.seed(),
        config: serde_json::to_value(&args)?,
        provenance,
        inputs: RunContext::digests(ctx.inputs),
        outputs: RunContext::digests(ctx.outputs),
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    write_atomic(&args.out_dir().join(MANIFEST_FILE), text.as_bytes())?;
    outcome.map(|()| manifest)
}

/// Re-runs a recorded command, optionally into another directory, and
/// checks that every output matches its recorded digest.
pub fn replay<C: Recorded>(recorded: &RunManifest, out: Option<PathBuf>) -> Result<RunManifest> {
    let mut args: C =
        serde_json::from_value(recorded.config.clone()).context("manifest config does not match the command")?;
    if let Some(out) = out {
        args.set_out_dir(out);
    }
    for input in &recorded.inputs {
        let bytes = fs::read(&input.path).with_context(|| format!("reading {}", input.path.display()))?;
        if sha256_hex(&bytes) != input.sha256 {
            log::warn!("input {} changed since the recorded run", input.path.display());
        }
    }
    let fresh = execute(args, recorded.provenance.clone())?;
    let mismatched: Vec<String> = recorded
        .outputs
        .iter()
        .filter(|o| !fresh.outputs.contains(o))
        .map(|o| o.path.display().to_string())
        .collect();
    if !mismatched.is_empty() || fresh.outputs.len() != recorded.outputs.len() {
        bail!("replay diverged from the recorded run: {mismatched:?}");
    }
    Ok(fresh)
}
