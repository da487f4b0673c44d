//! Config resolution, the config echo, atomic artifact writes and failures.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "PPLUS_SEED";

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  usage error (unknown flag, missing value)
  3  invalid layer name, layer range or registry mismatch
  4  missing checkpoint, concept or input file
  5  invalid argument or config value
  6  numeric failure (non-finite loss or sample)
  7  malformed input file
  8  I/O error
  9  selftest check failed

Failures also print one JSON line on stderr: {\"error\": <category>, \"exit_code\": <n>, \"message\": ...}.";

#[derive(Debug)]
pub enum Failure {
    Core(pplus_core::Error),
    MissingInput(PathBuf),
    Config(String),
    Selftest(usize),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        use pplus_core::ErrorCategory as C;
        match self {
            Failure::Core(e) => match e.category() {
                C::Layer => 3,
                C::Argument => 5,
                C::Numeric => 6,
                C::Format => 7,
                C::Io => 8,
            },
            Failure::MissingInput(_) => 4,
            Failure::Config(_) => 5,
            Failure::Selftest(_) => 9,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Failure::Core(e) => e.category().as_str(),
            Failure::MissingInput(_) => "missing-input",
            Failure::Config(_) => "config",
            Failure::Selftest(_) => "selftest",
        }
    }

    pub fn json_line(&self) -> String {
        serde_json::json!({
            "error": self.category(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::MissingInput(p) => write!(f, "input file {} does not exist", p.display()),
            Failure::Config(m) => write!(f, "config: {m}"),
            Failure::Selftest(n) => write!(f, "{n} selftest check(s) failed"),
        }
    }
}

impl From<pplus_core::Error> for Failure {
    fn from(e: pplus_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Core(pplus_core::Error::Format(e.to_string()))
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Contents of a config file and of every run's `config.json` echo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: Value,
}

pub fn read_config(path: &Path) -> CliResult<RunConfig> {
    if !path.exists() {
        return Err(Failure::MissingInput(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| pplus_core::Error::Format(format!("{}: {e}", path.display())))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(Failure::Config(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    Ok(cfg)
}

fn overlay(base: &mut Value, top: &Value) {
    if let (Value::Object(b), Value::Object(t)) = (base, top) {
        for (k, v) in t {
            if !v.is_null() {
                b.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Defaults, then the file's params, then flags that were given.
pub fn resolve<P, F>(file: Option<&RunConfig>, flags: &F) -> CliResult<P>
where
    P: Default + Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut v = serde_json::to_value(P::default())?;
    if let Some(f) = file {
        if !f.params.is_null() && !f.params.is_object() {
            return Err(Failure::Config("params must be an object".into()));
        }
        overlay(&mut v, &f.params);
    }
    overlay(&mut v, &serde_json::to_value(flags)?);
    serde_json::from_value(v).map_err(|e| Failure::Config(e.to_string()))
}

/// Flag, then config file, then `PPLUS_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<&RunConfig>) -> CliResult<u64> {
    if let Some(s) = flag.or_else(|| file.and_then(|f| f.seed)) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// Output directory of one command invocation.
pub struct Run {
    pub dir: PathBuf,
    pub seed: u64,
}

impl Run {
    /// Creates the run directory and writes the config echo.
    pub fn start<P: Serialize>(dir: PathBuf, command: &str, seed: u64, params: &P) -> CliResult<Self> {
        std::fs::create_dir_all(&dir)?;
        let run = Run { dir, seed };
        let echo = RunConfig {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            seed: Some(seed),
            params: serde_json::to_value(params)?,
        };
        run.write_json("config.json", &echo)?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, bytes)?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, v: &T) -> CliResult<PathBuf> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// CSV with a header row.
    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::Config(e.to_string()))?;
        self.write(name, &bytes)
    }

    pub fn write_png(&self, name: &str, img: &pplus_core::tensor::Tensor) -> CliResult<PathBuf> {
        self.write(name, &pplus_core::diffusion::image_io::png_bytes(img)?)
    }
}

/// Writes to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Failure::Core(e.error.into()))?;
    Ok(())
}

/// Fails with exit code 4 when `path` is missing.
pub fn require_file(path: &str) -> CliResult<PathBuf> {
    let p = PathBuf::from(path);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Failure::MissingInput(p))
    }
}
