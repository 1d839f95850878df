//! Configuration, pipeline stages, manifests and atomic output writes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::diophantine::{check_dc_conditions, estimate_excluded_measure, uniform_grid, DiophParams};
use crate::error::{Error, Result};
use crate::evolve::{verify, Method, VerifyOptions};
use crate::lattice::{enumerate_elementary_regions, index_region};
use crate::linop::{assemble_h, lde_family, matrix_bytes, sigma_sweep, LdeParams};
use crate::potential::{base_frequencies, ModelParams};
use crate::rng::stream;
use crate::solver::{run_solver, Schedule, Solution};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionsSettings {
    pub r: usize,
    #[serde(rename = "N")]
    pub n: i64,
}

impl Default for RegionsSettings {
    fn default() -> Self {
        RegionsSettings { r: 2, n: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureSettings {
    pub condition: String,
    pub n_samples: usize,
}

impl Default for MeasureSettings {
    fn default() -> Self {
        MeasureSettings {
            condition: "sublevel".into(),
            n_samples: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdtSettings {
    /// Elementary-region size of the family `(0,n) + ER_0(N)`.
    #[serde(rename = "N")]
    pub n: i64,
    /// Regions sampled from the family; `0` keeps all of them.
    pub max_regions: usize,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub sigma_points: usize,
    /// Also dump `H` of the first sampled region at the first `sigma`.
    pub dump_matrix: bool,
}

impl Default for LdtSettings {
    fn default() -> Self {
        LdtSettings {
            n: 1,
            max_regions: 8,
            sigma_lo: -1.0,
            sigma_hi: 1.0,
            sigma_points: 200,
            dump_matrix: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolveSettings {
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    pub method: Method,
    pub tail_radius: i64,
    pub samples: usize,
}

impl Default for EvolveSettings {
    fn default() -> Self {
        EvolveSettings {
            t_end: 10.0,
            dt: 1e-3,
            method: Method::Rk4,
            tail_radius: 8,
            samples: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "ModelParams::reference")]
    pub params: ModelParams,
    #[serde(default)]
    pub dioph: DiophParams,
    #[serde(default)]
    pub lde: LdeParams,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub evolve: EvolveSettings,
    #[serde(default)]
    pub regions: RegionsSettings,
    #[serde(default)]
    pub measure: MeasureSettings,
    #[serde(default)]
    pub ldt: LdtSettings,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: ModelParams::reference(),
            dioph: DiophParams::default(),
            lde: LdeParams::default(),
            schedule: Schedule::default(),
            evolve: EvolveSettings::default(),
            regions: RegionsSettings::default(),
            measure: MeasureSettings::default(),
            ldt: LdtSettings::default(),
            seed: Some(0),
            out: default_out(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self, command: Command) -> Result<()> {
        self.params.validate()?;
        self.dioph.validate(self.params.b())?;
        self.lde.validate()?;
        self.schedule.validate()?;
        if !(self.evolve.dt > 0.0 && self.evolve.t_end >= 0.0) {
            return Err(Error::Validation("evolve needs dt > 0 and T >= 0".into()));
        }
        if matches!(command, Command::Dioph | Command::Ldt | Command::All) && self.seed.is_none() {
            return Err(Error::Validation("a seed is required for stochastic stages".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.remove("out");
        }
        Ok(hex(&Sha256::digest(serde_json::to_string(&v)?.as_bytes())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse a TOML (`.toml`) or JSON config and apply `key.path=value`
/// overrides. Values parse as JSON when possible, else as strings.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut v = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            if p.extension().is_some_and(|e| e == "toml") {
                let t: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
                serde_json::to_value(t)?
            } else {
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
            }
        }
        None => serde_json::to_value(RunConfig::default())?,
    };
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

pub fn apply_override(v: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = v;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(m) => {
                if last {
                    m.insert(part.to_string(), value);
                    return Ok(());
                }
                m.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("`{part}` is not an array index in `{key}`")))?;
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("index {idx} out of range in `{key}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("`{key}` does not name a field"))),
        };
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Regions,
    Dioph,
    Ldt,
    Solve,
    Evolve,
    All,
}

impl Command {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "regions" => Command::Regions,
            "dioph" => Command::Dioph,
            "ldt" => Command::Ldt,
            "solve" => Command::Solve,
            "evolve" => Command::Evolve,
            "all" => Command::All,
            other => return Err(Error::InvalidArgument(format!("unknown command `{other}`"))),
        })
    }

    fn stages(self) -> Vec<Command> {
        match self {
            Command::All => vec![Command::Regions, Command::Dioph, Command::Ldt, Command::Solve, Command::Evolve],
            c => vec![c],
        }
    }

    fn name(self) -> &'static str {
        match self {
            Command::Regions => "regions",
            Command::Dioph => "dioph",
            Command::Ldt => "ldt",
            Command::Solve => "solve",
            Command::Evolve => "evolve",
            Command::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        ErrorRecord {
            kind: e.kind().into(),
            message: e.to_string(),
            exit_code: e.exit_code(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub passed: bool,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputRecord>,
    pub checks: BTreeMap<String, bool>,
    pub summary: Value,
    pub error: Option<ErrorRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: Command,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub stages: Vec<StageRecord>,
    pub passed: bool,
}

impl Manifest {
    /// 0 pass, 2 validation, 3 numeric failure, 4 failed check.
    pub fn exit_code(&self) -> i32 {
        if let Some(e) = self.stages.iter().find_map(|s| s.error.as_ref()) {
            return e.exit_code;
        }
        if self.passed {
            0
        } else {
            4
        }
    }
}

/// Write `bytes` to a temporary file next to `path`, then rename it over.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

struct StageOut<'a> {
    dir: &'a Path,
    outputs: Vec<OutputRecord>,
    checks: BTreeMap<String, bool>,
    summary: Value,
}

impl StageOut<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.outputs.push(OutputRecord {
            path: name.to_string(),
            sha256: hex(&Sha256::digest(bytes)),
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }
}

/// Execute the stage(s) of `command`, writing outputs and `manifest.json`
/// into `config.out`. Stage failures are recorded, not propagated; only
/// validation and manifest I/O errors return `Err`.
pub fn run(config: &RunConfig, command: Command) -> Result<Manifest> {
    config.validate(command)?;
    let dir = config.out.as_path();
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest {
        tool_version: TOOL_VERSION.into(),
        command,
        config_hash: config.hash()?,
        seed: config.seed,
        stages: Vec::new(),
        passed: true,
    };
    let mut solution: Option<Solution> = None;
    for stage in command.stages() {
        let start = Instant::now();
        let mut out = StageOut {
            dir,
            outputs: Vec::new(),
            checks: BTreeMap::new(),
            summary: Value::Null,
        };
        let result = run_stage(config, stage, &mut out, &mut solution);
        let error = result.err().as_ref().map(ErrorRecord::from);
        let passed = error.is_none() && out.checks.values().all(|c| *c);
        manifest.passed &= passed;
        manifest.stages.push(StageRecord {
            stage: stage.name().into(),
            passed,
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs: out.outputs,
            checks: out.checks,
            summary: out.summary,
            error,
        });
    }
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

fn run_stage(config: &RunConfig, stage: Command, out: &mut StageOut, solution: &mut Option<Solution>) -> Result<()> {
    let seed = config.seed.unwrap_or(0);
    match stage {
        Command::Regions => {
            let regions = enumerate_elementary_regions(config.regions.r, config.regions.n)?;
            out.json("regions.json", &regions)?;
            out.summary = json!({ "r": config.regions.r, "N": config.regions.n, "count": regions.len() });
        }
        Command::Dioph => {
            let dc = check_dc_conditions(&config.params, &config.dioph)?;
            out.json("dc_report.json", &dc)?;
            let est = estimate_excluded_measure(
                &config.measure.condition,
                &config.params,
                &config.dioph,
                config.measure.n_samples,
                seed,
            )?;
            out.json("measure.json", &est)?;
            out.summary = json!({ "dc_passed": dc.passed, "fraction": est.fraction, "interval": est.interval });
        }
        Command::Ldt => {
            let p = &config.params;
            let omega = base_frequencies(p)?;
            let mut family = lde_family(p.b(), p.d(), config.ldt.n)?;
            if config.ldt.max_regions > 0 && config.ldt.max_regions < family.len() {
                let mut rng = stream(seed, 0);
                let mut idx = sample(&mut rng, family.len(), config.ldt.max_regions).into_vec();
                idx.sort_unstable();
                family = idx.into_iter().map(|i| family[i].clone()).collect();
            }
            let sigmas = uniform_grid(config.ldt.sigma_lo, config.ldt.sigma_hi, config.ldt.sigma_points);
            let stats = sigma_sweep(p, &omega, &family, &sigmas, None, &config.lde)?;
            out.write("sweep.csv", stats.to_csv().as_bytes())?;
            out.json("regions_sampled.json", &family)?;
            if config.ldt.dump_matrix {
                if let (Some(r), Some(&s)) = (family.first(), sigmas.first()) {
                    let op = assemble_h(p, &omega, &index_region(r, p.b(), None)?, s, None)?;
                    let (bytes, desc) = matrix_bytes(&op.dense());
                    out.write("matrix.bin", &bytes)?;
                    out.json("matrix.json", &desc)?;
                }
            }
            out.summary = json!({
                "regions": family.len(),
                "bad_fraction": stats.bad_fraction,
                "bad_fraction_floor": stats.bad_fraction_floor,
                "bad_fraction_green": stats.bad_fraction_green,
                "bad_intervals": stats.bad_intervals,
            });
        }
        Command::Solve => {
            let sol = run_solver(&config.params, &config.schedule)?;
            out.json("solution.json", &sol)?;
            let mut csv = String::from("r,N,residual,correction,decay_fit\n");
            for r in &sol.trace.records {
                let fit = r.decay_fit.map_or(String::new(), |f| f.to_string());
                csv.push_str(&format!("{},{},{},{},{}\n", r.r, r.n_size, r.residual, r.correction, fit));
            }
            out.write("trace.csv", csv.as_bytes())?;
            out.checks.insert("converged".into(), sol.certificates.residual < config.schedule.tol);
            out.summary = json!({
                "newton_iterations": sol.trace.records.len(),
                "certificates": sol.certificates,
                "omega": sol.omega,
            });
            *solution = Some(sol);
        }
        Command::Evolve => {
            let sol = match solution.take() {
                Some(s) => s,
                None => run_solver(&config.params, &config.schedule)?,
            };
            let opts = VerifyOptions {
                method: config.evolve.method,
                tail_radius: config.evolve.tail_radius,
                samples: config.evolve.samples,
            };
            let report = verify(&sol, config.evolve.t_end, config.evolve.dt, &opts)?;
            out.json("verify.json", &report)?;
            out.checks.insert("within_budget".into(), report.within_budget);
            out.summary = serde_json::to_value(&report)?;
            *solution = Some(sol);
        }
        Command::All => unreachable!("expanded into stages"),
    }
    Ok(())
}

/// Machine-readable error record for stderr.
pub fn error_json(e: &Error) -> String {
    serde_json::to_string(&ErrorRecord::from(e)).unwrap_or_else(|_| format!("{{\"kind\":\"{}\"}}", e.kind()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let c = load_config(None, &["params.epsilon=0.002".into(), "schedule.M=3".into(), "params.a.0=1.25".into()]).unwrap();
        assert_eq!(c.params.epsilon, 0.002);
        assert_eq!(c.schedule.m, 3);
        assert_eq!(c.params.a, vec![1.25]);
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.params.theta = vec![0.2];
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn bad_override_is_config_error() {
        assert!(matches!(load_config(None, &["seed".into()]), Err(Error::Config(_))));
    }
}
