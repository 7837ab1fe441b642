use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use smart_pce::estimands::{estimate_classes, itt_summary, parse_classes, pce_grid, waic, write_class_table, write_pce_grid};
use smart_pce::persist::{load_run, save_run};
use smart_pce::replicate::{bias_table, derive_seeds, fit_replicate, write_bias_table, write_replicate_table};
use smart_pce::{gen_trial, run_chain, Dataset, ResponseVariant, Scenario, SmartDesign};

use crate::config::Config;

pub const WORKERS_ENV: &str = "SMART_PCE_WORKERS";

/// A built-in design name or a path to a file.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignArg {
    Engage,
    General,
    File(PathBuf),
}

impl std::str::FromStr for DesignArg {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "engage" => DesignArg::Engage,
            "general" => DesignArg::General,
            path => DesignArg::File(path.into()),
        })
    }
}

#[derive(Serialize)]
struct Invocation<'a> {
    command: &'a str,
    args: Vec<String>,
    config: &'a Config,
}

fn write_invocation(out: &Path, command: &str, config: &Config) -> anyhow::Result<()> {
    let inv = Invocation { command, args: std::env::args().skip(1).collect(), config };
    fs::write(out.join("invocation.toml"), toml::to_string(&inv)?)?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

pub fn resolve_design(arg: &DesignArg, interaction: bool) -> anyhow::Result<SmartDesign> {
    Ok(match arg {
        DesignArg::Engage => SmartDesign::engage(interaction),
        DesignArg::General if interaction => bail!("--interaction applies to the engage design only"),
        DesignArg::General => SmartDesign::general(),
        DesignArg::File(p) => SmartDesign::load(p).with_context(|| format!("reading design {}", p.display()))?,
    })
}

/// Built-in scenarios take their size and noise from the config; a file
/// gives the complete truth.
pub fn resolve_scenario(arg: &DesignArg, interaction: bool, seed: Option<u64>, config: &Config) -> anyhow::Result<Scenario> {
    let sim = &config.simulate;
    let seed_or = |s: u64| seed.unwrap_or(s);
    let mut scenario = match arg {
        DesignArg::Engage => Scenario::engage(sim.rho, sim.n, interaction, seed_or(1)),
        DesignArg::General if interaction => bail!("--interaction applies to the engage design only"),
        DesignArg::General => Scenario::general(sim.rho, sim.n, seed_or(1)),
        DesignArg::File(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading scenario {}", p.display()))?;
            let s = Scenario::from_toml_str(&text)?;
            Scenario { seed: seed_or(s.seed), ..s }
        }
    };
    if !matches!(arg, DesignArg::File(_)) {
        scenario.noise_sd = sim.noise_sd;
    }
    scenario.validate()?;
    Ok(scenario)
}

pub fn simulate(scenario: &Scenario, config: &Config, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    let design = scenario.validate()?;
    let trial = gen_trial(scenario)?;
    trial.dataset.save(&design, &out.join("data.csv"))?;
    fs::write(out.join("truth.toml"), scenario.to_toml_string()?)?;
    fs::write(out.join("design.toml"), design.to_toml_string()?)?;

    let m = design.m();
    let mut w = csv::Writer::from_writer(create(&out.join("latent.csv"))?);
    let mut header = vec!["id".to_string()];
    header.extend(design.coordinates.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for (i, s) in trial.dataset.subjects.iter().enumerate() {
        let mut rec = vec![s.id.clone()];
        rec.extend(trial.full_compliance[i * m..(i + 1) * m].iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_invocation(out, "simulate", config)
}

pub fn fit(data: &Path, design: &SmartDesign, config: &Config, out: &Path) -> anyhow::Result<()> {
    config.sampler.validate()?;
    let dataset = Dataset::load(design, data, config.data.transform())?;
    dataset.check_estimable(design)?;
    let post = run_chain(&dataset, design, &config.sampler)?;
    save_run(out, &post, &dataset, &config.sampler)?;
    if let Ok(diag) = post.diagnostics() {
        let mut w = csv::Writer::from_writer(create(&out.join("diagnostics.csv"))?);
        w.write_record(["parameter", "mean", "sd"])?;
        for t in &diag.traces {
            w.write_record([t.name.clone(), t.mean.to_string(), t.sd.to_string()])?;
        }
        w.flush()?;
        fs::write(out.join("diagnostics.toml"), toml::to_string(&diag)?)?;
        if diag.separation {
            eprintln!("warning: stage-1 response shows quasi-separation; response coefficients are prior-driven");
        }
    }
    write_invocation(out, "fit", config)
}

pub fn estimate(run: &Path, config: &Config, out: &Path) -> anyhow::Result<()> {
    let est = &config.estimate;
    let (post, data, _) = load_run(run).with_context(|| format!("reading run {}", run.display()))?;
    if post.draws.is_empty() {
        bail!("run {} holds no posterior draws", run.display());
    }
    fs::create_dir_all(out)?;
    let design = &post.design;
    let classes = parse_classes(&est.classes, design.m())?;
    let estimates = estimate_classes(&post, &classes, est.alpha, est.direction, est.level)?;
    write_class_table(&estimates, create(&out.join("pce_classes.csv"))?)?;

    let mut w = csv::Writer::from_writer(create(&out.join("mcb.csv"))?);
    w.write_record(["class", "best", "members"])?;
    for e in &estimates {
        let members: Vec<String> = e.best.members.iter().map(usize::to_string).collect();
        w.write_record([e.class.label.clone(), e.best.best.to_string(), members.join(" ")])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&out.join("waic.csv"))?);
    w.write_record(["sequence", "waic", "lppd", "p_waic", "n"])?;
    let stored = post.draws.iter().all(|d| !d.compliance.is_empty());
    if !stored {
        eprintln!("warning: run stores no imputed compliances; waic.csv left empty");
    }
    for k in (1..=design.k()).filter(|_| stored) {
        let r = waic(&post, &data, k)?;
        w.write_record([
            design.sequences[k - 1].id.to_string(),
            r.waic.to_string(),
            r.lppd.to_string(),
            r.p_waic.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;

    let mut rng = ChaCha8Rng::seed_from_u64(est.seed);
    let itt = itt_summary(&data, design, est.itt_resamples, est.level, &mut rng)?;
    let mut w = csv::Writer::from_writer(create(&out.join("itt.csv"))?);
    w.write_record(["edtr", "mean", "lower", "upper", "consistent"])?;
    for r in &itt {
        w.write_record([r.edtr.to_string(), r.mean.to_string(), r.lower.to_string(), r.upper.to_string(), r.consistent.to_string()])?;
    }
    w.flush()?;

    let grid = pce_grid(&post, est.grid_steps)?;
    write_pce_grid(&post, &grid, create(&out.join("pce_grid.csv"))?)?;
    write_invocation(out, "estimate", config)
}

pub fn workers() -> anyhow::Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("{WORKERS_ENV} must be a positive integer, got '{v}'"),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn replicate(scenario: &Scenario, base_seed: u64, config: &Config, out: &Path) -> anyhow::Result<()> {
    config.sampler.validate()?;
    let r = config.replicate.replicates;
    if r == 0 {
        bail!("replicates must be at least 1");
    }
    let design = scenario.validate()?;
    let seeds = derive_seeds(base_seed, r)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers()?).build()?;
    let fits = pool.install(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(i, s)| fit_replicate(scenario, &design, &config.sampler, i, *s))
            .collect::<smart_pce::Result<Vec<_>>>()
    })?;
    fs::create_dir_all(out)?;
    let rows = bias_table(&design, &scenario.beta, &fits)?;
    write_bias_table(&rows, create(&out.join("bias.csv"))?)?;
    write_replicate_table(&design, &fits, create(&out.join("replicates.csv"))?)?;
    fs::write(out.join("truth.toml"), scenario.to_toml_string()?)?;
    write_invocation(out, "replicate", config)
}

pub fn apply_variant(config: &mut Config, variant: Option<ResponseVariant>) {
    if let Some(v) = variant {
        config.sampler.response_variant = v;
    }
}
