use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use singlab::exact::{enumerate_singularity_with, EnumOptions, ExactRecord, DEFAULT_BUDGET};
use singlab::experiments::{
    anticoncentration_sweep, compressible_trial, mc_singularity, structure_dichotomy, tail_curve, ExperimentConfig,
    NetKind, SweepMode,
};
use singlab::levy::{levy, sum_dist, threshold, Coeffs};
use singlab::rational::{format_rational, to_f64};
use singlab::smoothing::{inversion_experiment, Mode};
use singlab::{DiscreteDist, Error};

use crate::args::{Cli, Common, ModeArg, NetArg, SweepArg};

const LEVY_BUDGET: usize = 1 << 24;

#[derive(Debug)]
pub enum CliError {
    Lab(Error),
    Io(String),
    Config(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lab(e) => write!(f, "{e}"),
            CliError::Io(m) | CliError::Config(m) => f.write_str(m),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Lab(e) if e.is_resource() => 3,
            CliError::Lab(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lab(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// defaults < config file < flags
pub fn merged_config(c: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = &c.$field {
                cfg.$field = v.clone();
            }
        )*};
    }
    set!(dist, n, samples, seed, workers, t_grid, delta, rho, delta_prime, epsilon, l, theta, trials, r0, tau0);
    set!(levy_samples, net_size, t, r, big_n, k1, k2, k3, l_grid);
    if let Some(net) = c.net {
        cfg.net = match net {
            NetArg::E1 => NetKind::E1Only,
            NetArg::Elementary => NetKind::Elementary,
            NetArg::Full => NetKind::Full,
        };
    }
    if let Some(m) = c.sweep_mode {
        cfg.sweep_mode = match m {
            SweepArg::NonElementary => SweepMode::NonElementary,
            SweepArg::MaxAtom => SweepMode::MaxAtom,
        };
    }
    if let Some(m) = c.mode {
        cfg.mode = match m {
            ModeArg::P => Mode::P,
            ModeArg::Q => Mode::Q,
        };
    }
    if c.union_check {
        cfg.union_check = true;
    }
    // A path to a JSON distribution file is accepted in place of the shorthand.
    if Path::new(&cfg.dist).is_file() {
        let path = PathBuf::from(&cfg.dist);
        cfg.dist = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?.trim().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    version: &'static str,
    seed: u64,
    workers: usize,
    started: f64,
    finished: f64,
    outputs: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.written.push(path.display().to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<String> {
        let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
        self.write(name, &text)?;
        Ok(text)
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let (name, common) = cli.command.parts();
    let cfg = merged_config(common)?;
    let d = cfg.distribution()?;
    fs::create_dir_all(&common.out_dir).map_err(|e| io_err(&common.out_dir, e))?;
    let mut out = Outputs { dir: common.out_dir.clone(), written: Vec::new() };
    let started = now();
    match name {
        "exact" => {
            let budget = common.budget.map_or(DEFAULT_BUDGET, |b| b as u128);
            let r = enumerate_singularity_with(&d, cfg.n, EnumOptions { budget, workers: cfg.workers })?;
            println!("{}", r.fraction_string());
            out.json("exact.json", &ExactRecord::new(&cfg.dist, cfg.n, &r))?;
        }
        "mc" => {
            let r = mc_singularity(&cfg)?;
            print!("{}", out.json("mc.json", &r)?);
        }
        "levy" => {
            let x = read_coeffs(common)?;
            let budget = common.budget.map_or(LEVY_BUDGET, |b| b as usize);
            let s = match sum_dist(&d, &x, budget) {
                Err(Error::Overflow(_)) => sum_dist(&d, &Coeffs::Float(x.to_f64()), budget)?,
                other => other?,
            };
            let l = levy(&s, cfg.r);
            println!("{}", format_rational(&l));
            out.json("levy.json", &ValueRecord { value: format_rational(&l), value_f64: to_f64(&l), n: x.len() })?;
        }
        "threshold" => {
            let x = read_coeffs(common)?;
            let budget = common.budget.map_or(LEVY_BUDGET, |b| b as usize);
            let t = match threshold(&d, &x, cfg.l, budget) {
                Err(Error::Overflow(_)) => threshold(&d, &Coeffs::Float(x.to_f64()), cfg.l, budget)?,
                other => other?,
            };
            println!("{}", format_rational(&t));
            out.json("threshold.json", &ValueRecord { value: format_rational(&t), value_f64: to_f64(&t), n: x.len() })?;
        }
        "tail" => {
            let tc = tail_curve(&cfg)?;
            out.write("tail.csv", &tc.to_csv())?;
            print!("{}", tc.to_csv());
            out.json("tail.json", &tc)?;
        }
        "structure" => {
            let r = structure_dichotomy(&cfg)?;
            out.write("dichotomy.csv", &r.to_csv())?;
            println!(
                "frac_cons={} frac_small_threshold={} frac_neither={}",
                r.frac_cons, r.frac_small_threshold, r.frac_neither
            );
            out.json("dichotomy.json", &r)?;
        }
        "compressible" => {
            let r = compressible_trial(&cfg)?;
            print!("{}", out.json("compressible.json", &r)?);
        }
        "sweep" => {
            let r = anticoncentration_sweep(&cfg)?;
            out.write("sweep.csv", &r.to_csv())?;
            println!("min_margin={} accepted={} rejected={}", r.min_margin, r.accepted, r.rejected);
            out.json("sweep.json", &r)?;
        }
        "smoothing" => {
            let r = inversion_experiment(&cfg.inversion()?)?;
            let mut csv = String::from("L,exceedance,stderr\n");
            for row in &r.curve {
                csv.push_str(&format!("{},{},{}\n", row.l, row.exceedance, row.stderr));
            }
            out.write("smoothing.csv", &csv)?;
            print!("{csv}");
            out.json("smoothing.json", &r)?;
        }
        "report" => {
            let text = report(&d, &cfg, &common.out_dir)?;
            print!("{text}");
            out.write("report.md", &text)?;
        }
        _ => unreachable!("clap restricts the command"),
    }
    let manifest = RunManifest {
        command: name,
        config: &cfg,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        workers: cfg.workers,
        started,
        finished: now(),
        outputs: out.written.clone(),
    };
    let path = common.out_dir.join(format!("manifest-{name}.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(())
}

#[derive(Serialize)]
struct ValueRecord {
    value: String,
    value_f64: f64,
    n: usize,
}

fn read_coeffs(c: &Common) -> CliResult<Coeffs> {
    let path = c.x.as_ref().ok_or_else(|| CliError::Config("--x <file> is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    // CSV rows are accepted as well as one value per line.
    let text = if text.trim_start().starts_with('[') { text } else { text.replace(',', "\n") };
    Ok(Coeffs::parse_text(&text)?)
}

fn report(d: &DiscreteDist, cfg: &ExperimentConfig, dir: &Path) -> CliResult<String> {
    let st = d.stats();
    let p = d.predicted(cfg.n as u32);
    let mut s = format!("# Report\n\ndistribution: {d}\n\n");
    s += &format!("entropy (bits): {:.6}\n", st.entropy);
    s += &format!("max atom probability: {}\n", format_rational(&st.p_inf));
    s += &format!("collision probability: {}\n\n", format_rational(&st.p2_sq));
    s += &format!("n = {}\n", cfg.n);
    s += &format!("P[zero column]: {:e}\n", to_f64(&p.p_e1));
    s += &format!("P[two equal columns]: {:e}\n", to_f64(&p.p_e1_minus));
    s += &format!("P[two opposite columns]: {:e}\n", to_f64(&p.p_e1_plus));
    s += &format!("conjectured singularity probability: {:e}\n", to_f64(&p.conjecture));
    let mut manifests: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.starts_with("manifest-") && name.ends_with(".json") && name != "manifest-report.json"
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    manifests.sort();
    if !manifests.is_empty() {
        s += "\n| command | seconds | outputs |\n|---|---|---|\n";
        for m in manifests {
            let text = fs::read_to_string(&m).map_err(|e| io_err(&m, e))?;
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", m.display())))?;
            let secs = v["finished"].as_f64().unwrap_or(0.0) - v["started"].as_f64().unwrap_or(0.0);
            let outputs: Vec<&str> = v["outputs"].as_array().map(|a| a.iter().filter_map(|o| o.as_str()).collect()).unwrap_or_default();
            s += &format!("| {} | {:.2} | {} |\n", v["command"].as_str().unwrap_or("?"), secs, outputs.join(", "));
        }
    }
    Ok(s)
}
