//! Run configuration: a flat sectioned TOML document.
//!
//! ```toml
//! [problem]
//! name = "linear_rd"          # or "adr_darcy"
//! diffusion = 1.0             # 0.01 for adr_darcy
//! reaction = -0.5             # linear coefficient c of linear_rd, must be <= 0
//! fold_reaction = false       # treat c X implicitly and inside the convolution
//! k_base = 0.01               # adr_darcy permeability outside the streaks
//! contrast = 100.0            # streak permeability / k_base
//! streak_centers = [0.25, 0.5, 0.75]
//! streak_height = 0.1
//!
//! [space]
//! discretization = "fem"      # or "fvm"; adr_darcy requires "fvm"
//! nx = 50
//! ny = 50
//! l1 = 1.0
//! l2 = 1.0
//!
//! [noise]
//! r = 2                       # 1 or 2
//! delta = 0.05
//! modes = 50                  # per axis; defaults to nx
//! zero_mode = "unit"          # q_00 = 1, or "zero"
//! lambda0 = "limit"           # or "perturb"
//! epsilon = 0.001             # rate shift when lambda0 = "perturb"
//! amplitude = 1.0
//!
//! [time]
//! t_final = 1.0
//! dt_ladder = ["1/32", "1/64", "1/128", "1/256", "1/512"]
//! dt_reference = "1/512"      # defaults to the finest ladder step (linear_rd) or 1/8 of it
//!
//! [monte_carlo]
//! realizations = 30
//! seed = 2024
//! coupling = "coupled"        # or "independent"
//! schemes = ["modified", "standard"]
//! threads = 0                 # 0 uses every core
//!
//! [output]
//! experiment = "linear_rd"
//! dir = "out"
//! verbosity = "info"
//! dump_mesh = false
//! dump_noise = false
//! dump_velocity = false
//! snapshot_every = 0          # steps between field snapshots, 0 disables
//! ```
//!
//! Step sizes are numbers or `"a/b"` strings and must divide `t_final` exactly. Every key may
//! be overridden by the environment variable `SPDEKIT_<SECTION>_<KEY>` (for example
//! `SPDEKIT_NOISE_R=1`), whose value is read as a TOML value or else as a string.

use std::collections::BTreeMap;
use std::path::PathBuf;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::harness::{validate_ladder, Coupling, ExperimentPlan, ProblemKind};
use crate::noise::ZeroModeWeight;
use crate::schemes::{SchemeKind, SpaceKind};

pub const ENV_PREFIX: &str = "SPDEKIT_";

const KEYS: &[(&str, &[&str])] = &[
    (
        "problem",
        &["name", "diffusion", "reaction", "fold_reaction", "k_base", "contrast", "streak_centers", "streak_height"],
    ),
    ("space", &["discretization", "nx", "ny", "l1", "l2"]),
    ("noise", &["r", "delta", "modes", "zero_mode", "lambda0", "epsilon", "amplitude"]),
    ("time", &["t_final", "dt_ladder", "dt_reference"]),
    ("monte_carlo", &["realizations", "seed", "coupling", "schemes", "threads"]),
    ("output", &["experiment", "dir", "verbosity", "dump_mesh", "dump_noise", "dump_velocity", "snapshot_every"]),
];

/// Where a resolved value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Default,
    File,
    Env,
    Cli,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub verbosity: String,
    /// Worker threads; 0 means all cores.
    pub threads: usize,
    pub dump_mesh: bool,
    pub dump_noise: bool,
    pub dump_velocity: bool,
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            verbosity: "info".into(),
            threads: 0,
            dump_mesh: false,
            dump_noise: false,
            dump_velocity: false,
            snapshot_every: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub experiment: String,
    pub plan: ExperimentPlan,
    /// Rate shift used when `lambda0 = "perturb"`.
    pub epsilon: f64,
    pub output: OutputConfig,
    /// Keyed by `section.key`.
    pub provenance: BTreeMap<String, Provenance>,
}

/// Equality of the resolved values; provenance is ignored.
impl PartialEq for RunConfig {
    fn eq(&self, other: &Self) -> bool {
        self.experiment == other.experiment && self.plan == other.plan && self.output == other.output
    }
}

struct Entry {
    value: Value,
    source: Provenance,
    line: Option<usize>,
}

struct Raw<'a> {
    entries: BTreeMap<String, Entry>,
    provenance: &'a mut BTreeMap<String, Provenance>,
}

fn config_error(key: &str, line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), line, message: message.into() }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]`, or of the section header when `key` is empty.
fn find_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            current = h.trim().to_string();
            if key.is_empty() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if current != section || key.is_empty() {
            continue;
        }
        if let Some((k, _)) = t.split_once('=') {
            if k.trim().trim_matches('"') == key {
                return Some(i + 1);
            }
        }
    }
    None
}

fn section_keys(section: &str) -> Option<&'static [&'static str]> {
    KEYS.iter().find(|(s, _)| *s == section).map(|(_, k)| *k)
}

fn read_document(text: &str) -> Result<BTreeMap<String, Entry>> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e.span().map(|s| line_of_offset(text, s.start));
        config_error("<document>", line, e.message().trim().to_string())
    })?;
    let mut entries = BTreeMap::new();
    for (section, body) in doc {
        let keys = section_keys(&section).ok_or_else(|| {
            let line = find_line(text, &section, "").or_else(|| find_line(text, "", &section));
            config_error(&section, line, "unknown section")
        })?;
        let table = match body {
            Value::Table(t) => t,
            _ => return Err(config_error(&section, find_line(text, "", &section), "expected a [section] table")),
        };
        for (key, value) in table {
            let path = format!("{section}.{key}");
            let line = find_line(text, &section, &key);
            if !keys.contains(&key.as_str()) {
                return Err(config_error(&path, line, format!("unknown key; allowed keys are {}", keys.join(", "))));
            }
            entries.insert(path, Entry { value, source: Provenance::File, line });
        }
    }
    Ok(entries)
}

/// Environment variable name overriding `section.key`.
pub fn env_var_name(section: &str, key: &str) -> String {
    format!("{ENV_PREFIX}{}_{}", section.to_uppercase(), key.to_uppercase())
}

fn parse_env_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn apply_env(entries: &mut BTreeMap<String, Entry>, env: &[(String, String)]) -> Result<()> {
    for (name, raw) in env {
        if !name.starts_with(ENV_PREFIX) {
            continue;
        }
        let path = KEYS
            .iter()
            .flat_map(|(s, keys)| keys.iter().map(move |k| (*s, *k)))
            .find(|(s, k)| env_var_name(s, k) == *name)
            .map(|(s, k)| format!("{s}.{k}"))
            .ok_or_else(|| config_error(name, None, "environment override does not name a config key"))?;
        entries.insert(path, Entry { value: parse_env_value(raw), source: Provenance::Env, line: None });
    }
    Ok(())
}

impl Raw<'_> {
    fn take(&mut self, path: &str) -> Option<(Value, Option<usize>)> {
        let e = self.entries.remove(path)?;
        self.provenance.insert(path.to_string(), e.source);
        Some((e.value, e.line))
    }

    fn mark_default(&mut self, path: &str) {
        self.provenance.entry(path.to_string()).or_insert(Provenance::Default);
    }

    fn get<T>(&mut self, path: &str, default: T, conv: impl Fn(&Value) -> std::result::Result<T, String>) -> Result<T> {
        match self.take(path) {
            Some((v, line)) => conv(&v).map_err(|m| config_error(path, line, m)),
            None => {
                self.mark_default(path);
                Ok(default)
            }
        }
    }

    fn opt<T>(&mut self, path: &str, conv: impl Fn(&Value) -> std::result::Result<T, String>) -> Result<Option<T>> {
        match self.take(path) {
            Some((v, line)) => conv(&v).map(Some).map_err(|m| config_error(path, line, m)),
            None => {
                self.mark_default(path);
                Ok(None)
            }
        }
    }

    fn line(&self, path: &str) -> Option<usize> {
        self.entries.get(path).and_then(|e| e.line)
    }
}

fn as_f64(v: &Value) -> std::result::Result<f64, String> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(format!("expected a number, found {}", other.type_str())),
    }
}

fn as_usize(v: &Value) -> std::result::Result<usize, String> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::Integer(i) => Err(format!("expected a non-negative integer, found {i}")),
        other => Err(format!("expected an integer, found {}", other.type_str())),
    }
}

fn as_u64(v: &Value) -> std::result::Result<u64, String> {
    match v {
        Value::String(s) => s.parse().map_err(|_| format!("expected an unsigned integer, found {s:?}")),
        other => as_usize(other).map(|u| u as u64),
    }
}

fn as_bool(v: &Value) -> std::result::Result<bool, String> {
    v.as_bool().ok_or_else(|| format!("expected a boolean, found {}", v.type_str()))
}

fn as_string(v: &Value) -> std::result::Result<String, String> {
    v.as_str().map(str::to_string).ok_or_else(|| format!("expected a string, found {}", v.type_str()))
}

fn as_f64_list(v: &Value) -> std::result::Result<Vec<f64>, String> {
    v.as_array().ok_or_else(|| format!("expected an array, found {}", v.type_str()))?.iter().map(as_f64).collect()
}

fn choice<T: Copy>(options: &'static [(&'static str, T)]) -> impl Fn(&Value) -> std::result::Result<T, String> {
    move |v| {
        let s = as_string(v)?;
        options.iter().find(|(n, _)| *n == s).map(|(_, t)| *t).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            format!("{s:?} is not one of {}", names.join(", "))
        })
    }
}

const PROBLEMS: &[(&str, ProblemKind)] = &[("linear_rd", ProblemKind::LinearRd), ("adr_darcy", ProblemKind::AdrDarcy)];
const SPACES: &[(&str, SpaceKind)] = &[("fem", SpaceKind::Fem), ("fvm", SpaceKind::Fvm)];
const ZERO_MODES: &[(&str, ZeroModeWeight)] = &[("unit", ZeroModeWeight::Unit), ("zero", ZeroModeWeight::Zero)];
const LAMBDA0: &[(&str, bool)] = &[("limit", false), ("perturb", true)];
const COUPLINGS: &[(&str, Coupling)] = &[("coupled", Coupling::Coupled), ("independent", Coupling::Independent)];
const SCHEMES: &[(&str, SchemeKind)] = &[("modified", SchemeKind::Modified), ("standard", SchemeKind::Standard)];

/// A step size: a positive number or an `"a/b"` string.
fn as_dt(v: &Value) -> std::result::Result<f64, String> {
    let dt = match v {
        Value::String(s) => match s.split_once('/') {
            Some((a, b)) => {
                let a: f64 = a.trim().parse().map_err(|_| format!("bad step size {s:?}"))?;
                let b: f64 = b.trim().parse().map_err(|_| format!("bad step size {s:?}"))?;
                a / b
            }
            None => s.trim().parse().map_err(|_| format!("bad step size {s:?}"))?,
        },
        other => as_f64(other)?,
    };
    if dt > 0.0 && dt.is_finite() {
        Ok(dt)
    } else {
        Err(format!("step size must be positive, got {dt}"))
    }
}

fn steps_for(t_final: f64, dt: f64) -> std::result::Result<usize, String> {
    let n = t_final / dt;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-9 * rounded {
        return Err(format!("step {dt} does not divide t_final = {t_final} into a whole number of steps"));
    }
    Ok(rounded as usize)
}

fn resolve(raw: &mut Raw) -> Result<RunConfig> {
    let problem = raw.get("problem.name", ProblemKind::LinearRd, choice(PROBLEMS))?;
    let base = match problem {
        ProblemKind::LinearRd => ExperimentPlan::linear_rd(),
        ProblemKind::AdrDarcy => ExperimentPlan::adr_darcy(),
    };
    let mut plan = base.clone();
    plan.diffusion = raw.get("problem.diffusion", base.diffusion, as_f64)?;
    plan.reaction = raw.get("problem.reaction", base.reaction, as_f64)?;
    plan.fold_reaction = raw.get("problem.fold_reaction", base.fold_reaction, as_bool)?;
    plan.k_base = raw.get("problem.k_base", base.k_base, as_f64)?;
    plan.contrast = raw.get("problem.contrast", base.contrast, as_f64)?;
    plan.streak_centers = raw.get("problem.streak_centers", base.streak_centers.clone(), as_f64_list)?;
    plan.streak_height = raw.get("problem.streak_height", base.streak_height, as_f64)?;

    let space_line = raw.line("space.discretization");
    plan.space = raw.get("space.discretization", base.space, choice(SPACES))?;
    if problem == ProblemKind::AdrDarcy && plan.space != SpaceKind::Fvm {
        return Err(config_error("space.discretization", space_line, "adr_darcy requires \"fvm\""));
    }
    let positive_usize = |v: &Value| as_usize(v).and_then(|n| if n > 0 { Ok(n) } else { Err("must be positive".into()) });
    plan.nx = raw.get("space.nx", base.nx, positive_usize)?;
    plan.ny = raw.get("space.ny", base.ny, positive_usize)?;
    plan.l1 = raw.get("space.l1", base.l1, as_f64)?;
    plan.l2 = raw.get("space.l2", base.l2, as_f64)?;

    plan.r = raw.get("noise.r", base.r, |v| {
        let r = as_f64(v)?;
        if r == 1.0 || r == 2.0 {
            Ok(r)
        } else {
            Err(format!("r = {r} is not in the allowed set {{1, 2}}"))
        }
    })?;
    plan.delta = raw.get("noise.delta", base.delta, as_f64)?;
    plan.modes = raw.get("noise.modes", plan.nx, positive_usize)?;
    plan.zero_mode = raw.get("noise.zero_mode", base.zero_mode, choice(ZERO_MODES))?;
    let perturb = raw.get("noise.lambda0", false, choice(LAMBDA0))?;
    let epsilon = raw.get("noise.epsilon", 1e-3, as_f64)?;
    plan.perturb_epsilon = perturb.then_some(epsilon);
    plan.amplitude = raw.get("noise.amplitude", base.amplitude, as_f64)?;

    plan.t_final = raw.get("time.t_final", base.t_final, |v| {
        let t = as_f64(v)?;
        if t > 0.0 && t.is_finite() {
            Ok(t)
        } else {
            Err(format!("t_final must be positive, got {t}"))
        }
    })?;
    let t = plan.t_final;
    let ladder_line = raw.line("time.dt_ladder");
    let ladder_explicit = raw.entries.contains_key("time.dt_ladder");
    plan.ladder_steps = raw.get("time.dt_ladder", base.ladder_steps.clone(), |v| {
        let list = v.as_array().ok_or_else(|| format!("expected an array, found {}", v.type_str()))?;
        list.iter().map(|d| steps_for(t, as_dt(d)?)).collect()
    })?;
    let finest = plan.ladder_steps.last().copied().unwrap_or(1);
    let default_reference = match (problem, ladder_explicit) {
        (_, false) => base.reference_steps,
        (ProblemKind::LinearRd, true) => finest,
        (ProblemKind::AdrDarcy, true) => 8 * finest,
    };
    let reference_line = raw.line("time.dt_reference");
    plan.reference_steps = raw.get("time.dt_reference", default_reference, |v| steps_for(t, as_dt(v)?))?;
    if let Err(e) = validate_ladder(&plan.ladder_steps, plan.reference_steps) {
        let (key, line) = if e.to_string().contains("reference") {
            ("time.dt_reference", reference_line)
        } else {
            ("time.dt_ladder", ladder_line)
        };
        return Err(config_error(key, line, e.to_string()));
    }

    plan.realizations = raw.get("monte_carlo.realizations", base.realizations, as_usize)?;
    plan.seed = raw.get("monte_carlo.seed", base.seed, as_u64)?;
    plan.coupling = raw.get("monte_carlo.coupling", base.coupling, choice(COUPLINGS))?;
    plan.schemes = raw.get("monte_carlo.schemes", base.schemes.clone(), |v| {
        let list = v.as_array().ok_or_else(|| format!("expected an array, found {}", v.type_str()))?;
        list.iter().map(choice(SCHEMES)).collect()
    })?;

    let defaults = OutputConfig::default();
    let output = OutputConfig {
        threads: raw.get("monte_carlo.threads", defaults.threads, as_usize)?,
        dir: raw.get("output.dir", defaults.dir.clone(), |v| as_string(v).map(PathBuf::from))?,
        verbosity: raw.get("output.verbosity", defaults.verbosity.clone(), |v| {
            let s = as_string(v)?;
            match s.as_str() {
                "error" | "warn" | "info" | "debug" | "trace" | "off" => Ok(s),
                _ => Err(format!("{s:?} is not one of off, error, warn, info, debug, trace")),
            }
        })?,
        dump_mesh: raw.get("output.dump_mesh", defaults.dump_mesh, as_bool)?,
        dump_noise: raw.get("output.dump_noise", defaults.dump_noise, as_bool)?,
        dump_velocity: raw.get("output.dump_velocity", defaults.dump_velocity, as_bool)?,
        snapshot_every: raw.get("output.snapshot_every", defaults.snapshot_every, as_usize)?,
    };
    let default_name = match problem {
        ProblemKind::LinearRd => "linear_rd",
        ProblemKind::AdrDarcy => "adr_darcy",
    };
    let experiment = raw.opt("output.experiment", as_string)?.unwrap_or_else(|| default_name.to_string());

    plan.validate().map_err(|e| config_error("<plan>", None, e.to_string()))?;
    Ok(RunConfig { experiment, plan, epsilon, output, provenance: BTreeMap::new() })
}

/// Parses and validates a configuration document without environment overrides.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_env(text, &[])
}

/// Parses a document, then applies `SPDEKIT_*` overrides from `env`.
pub fn parse_config_with_env(text: &str, env: &[(String, String)]) -> Result<RunConfig> {
    let mut entries = read_document(text)?;
    apply_env(&mut entries, env)?;
    let mut provenance = BTreeMap::new();
    let mut raw = Raw { entries, provenance: &mut provenance };
    let mut config = resolve(&mut raw)?;
    config.provenance = provenance;
    Ok(config)
}

fn name_of<T: PartialEq>(options: &[(&str, T)], v: T) -> String {
    options.iter().find(|(_, t)| *t == v).map(|(n, _)| *n).unwrap_or("").to_string()
}

fn dt_string(t_final: f64, steps: usize) -> Value {
    Value::String(format!("{t_final}/{steps}"))
}

impl RunConfig {
    pub fn provenance_of(&self, path: &str) -> Option<Provenance> {
        self.provenance.get(path).copied()
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.plan.seed = seed;
        self.provenance.insert("monte_carlo.seed".into(), Provenance::Cli);
    }

    pub fn set_threads(&mut self, threads: usize) {
        self.output.threads = threads;
        self.provenance.insert("monte_carlo.threads".into(), Provenance::Cli);
    }

    pub fn set_output_dir(&mut self, dir: PathBuf) {
        self.output.dir = dir;
        self.provenance.insert("output.dir".into(), Provenance::Cli);
    }

    /// The resolved configuration with every key explicit.
    pub fn to_toml(&self) -> String {
        let p = &self.plan;
        let floats = |v: &[f64]| Value::Array(v.iter().map(|f| Value::Float(*f)).collect());
        let mut doc = Table::new();
        let mut section = |s: &str, items: Vec<(&str, Value)>| {
            doc.insert(s.into(), Value::Table(items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()));
        };
        section(
            "problem",
            vec![
                ("name", Value::String(name_of(PROBLEMS, p.problem))),
                ("diffusion", Value::Float(p.diffusion)),
                ("reaction", Value::Float(p.reaction)),
                ("fold_reaction", Value::Boolean(p.fold_reaction)),
                ("k_base", Value::Float(p.k_base)),
                ("contrast", Value::Float(p.contrast)),
                ("streak_centers", floats(&p.streak_centers)),
                ("streak_height", Value::Float(p.streak_height)),
            ],
        );
        section(
            "space",
            vec![
                ("discretization", Value::String(name_of(SPACES, p.space))),
                ("nx", Value::Integer(p.nx as i64)),
                ("ny", Value::Integer(p.ny as i64)),
                ("l1", Value::Float(p.l1)),
                ("l2", Value::Float(p.l2)),
            ],
        );
        section(
            "noise",
            vec![
                ("r", Value::Integer(p.r as i64)),
                ("delta", Value::Float(p.delta)),
                ("modes", Value::Integer(p.modes as i64)),
                ("zero_mode", Value::String(name_of(ZERO_MODES, p.zero_mode))),
                ("lambda0", Value::String(if p.perturb_epsilon.is_some() { "perturb" } else { "limit" }.into())),
                ("epsilon", Value::Float(p.perturb_epsilon.unwrap_or(self.epsilon))),
                ("amplitude", Value::Float(p.amplitude)),
            ],
        );
        section(
            "time",
            vec![
                ("t_final", Value::Float(p.t_final)),
                ("dt_ladder", Value::Array(p.ladder_steps.iter().map(|&s| dt_string(p.t_final, s)).collect())),
                ("dt_reference", dt_string(p.t_final, p.reference_steps)),
            ],
        );
        let seed = i64::try_from(p.seed).map(Value::Integer).unwrap_or_else(|_| Value::String(p.seed.to_string()));
        section(
            "monte_carlo",
            vec![
                ("realizations", Value::Integer(p.realizations as i64)),
                ("seed", seed),
                ("coupling", Value::String(name_of(COUPLINGS, p.coupling))),
                ("schemes", Value::Array(p.schemes.iter().map(|&s| Value::String(s.name().into())).collect())),
                ("threads", Value::Integer(self.output.threads as i64)),
            ],
        );
        let o = &self.output;
        section(
            "output",
            vec![
                ("experiment", Value::String(self.experiment.clone())),
                ("dir", Value::String(o.dir.to_string_lossy().into_owned())),
                ("verbosity", Value::String(o.verbosity.clone())),
                ("dump_mesh", Value::Boolean(o.dump_mesh)),
                ("dump_noise", Value::Boolean(o.dump_noise)),
                ("dump_velocity", Value::Boolean(o.dump_velocity)),
                ("snapshot_every", Value::Integer(o.snapshot_every as i64)),
            ],
        );
        toml::to_string(&doc).expect("config table serializes")
    }
}
