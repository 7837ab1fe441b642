//! Run directories: posterior draws as flat CSV tables plus a manifest with
//! the sampler configuration, the design and a copy of the analysed data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, OutcomeTransform};
use crate::design::SmartDesign;
use crate::error::{Error, Result};
use crate::gibbs::{AcceptanceCounts, ChainDiagnostics, ComponentDraw, Draw, PosteriorDraws, SamplerConfig};
use crate::outcome::{ResponseVariant, RESPONSE_DIM};

pub const DRAWS_FILE: &str = "draws.csv";
pub const COMPLIANCE_FILE: &str = "compliances.csv";
pub const OCCUPANCY_FILE: &str = "occupancy.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const DESIGN_FILE: &str = "design.toml";
pub const DATA_FILE: &str = "data.csv";

const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub component_mean: AcceptanceCounts,
    pub component_cov: AcceptanceCounts,
    pub concentration: AcceptanceCounts,
    pub response: AcceptanceCounts,
    pub separation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub design: String,
    pub n_subjects: usize,
    pub n_draws: usize,
    pub components: usize,
    pub response_variant: ResponseVariant,
    pub compliance_stored: bool,
    pub sampler: SamplerConfig,
    pub acceptance: Acceptance,
}

fn draw_header(post: &PosteriorDraws, h: usize) -> Vec<String> {
    let m = post.design.m();
    let mut cols = vec!["iteration".to_string()];
    cols.extend(post.scalar_names());
    for c in 1..=h {
        cols.push(format!("w.{c}"));
    }
    for c in 1..=h {
        cols.push(format!("logc.{c}"));
    }
    for c in 1..=h {
        for j in 0..m {
            cols.push(format!("eta.{c}.{}", post.design.coordinates[j].name));
        }
    }
    for c in 1..=h {
        for a in 0..m {
            for b in a..m {
                cols.push(format!("sigma.{c}.{}.{}", a + 1, b + 1));
            }
        }
    }
    cols
}

/// Writes draws, occupancy, manifest, design and data into `dir`.
pub fn save_run(dir: &Path, post: &PosteriorDraws, data: &Dataset, config: &SamplerConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let m = post.design.m();
    let h = config.components;

    let mut w = csv::Writer::from_path(dir.join(DRAWS_FILE))?;
    w.write_record(draw_header(post, h))?;
    for dr in &post.draws {
        let mut rec = vec![dr.iteration.to_string()];
        rec.extend(PosteriorDraws::scalar_values(dr).iter().map(f64::to_string));
        rec.extend(dr.weights.iter().map(f64::to_string));
        rec.extend(dr.components.iter().map(|c| c.log_c.to_string()));
        for c in &dr.components {
            rec.extend(c.eta.iter().map(f64::to_string));
        }
        for c in &dr.components {
            for a in 0..m {
                for b in a..m {
                    rec.push(c.sigma[a * m + b].to_string());
                }
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let stored = post.draws.first().is_some_and(|d| !d.compliance.is_empty());
    if stored {
        let mut w = csv::Writer::from_path(dir.join(COMPLIANCE_FILE))?;
        let mut header = vec!["iteration".to_string(), "subject".to_string()];
        header.extend(post.design.coordinates.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for dr in &post.draws {
            for i in 0..post.n_subjects {
                let mut rec = vec![dr.iteration.to_string(), (i + 1).to_string()];
                rec.extend(dr.compliance[i * m..(i + 1) * m].iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
    }

    let mut w = csv::Writer::from_path(dir.join(OCCUPANCY_FILE))?;
    w.write_record(["iteration", "occupied"])?;
    for (t, o) in post.diagnostics.occupied.iter().enumerate() {
        w.write_record([(t + 1).to_string(), o.to_string()])?;
    }
    w.flush()?;

    let d = &post.diagnostics;
    let manifest = RunManifest {
        format: FORMAT,
        design: post.design.name.clone(),
        n_subjects: post.n_subjects,
        n_draws: post.draws.len(),
        components: h,
        response_variant: post.response_variant,
        compliance_stored: stored,
        sampler: config.clone(),
        acceptance: Acceptance {
            component_mean: d.component_mean.clone(),
            component_cov: d.component_cov.clone(),
            concentration: d.concentration.clone(),
            response: d.response.clone(),
            separation: d.separation,
        },
    };
    fs::write(dir.join(MANIFEST_FILE), toml::to_string(&manifest)?)?;
    fs::write(dir.join(DESIGN_FILE), post.design.to_toml_string()?)?;
    data.save(&post.design, &dir.join(DATA_FILE))?;
    Ok(())
}

fn parse(field: &str, what: &str) -> Result<f64> {
    field.parse().map_err(|_| Error::Schema(format!("{what}: '{field}' is not a number")))
}

/// Reads a directory written by [`save_run`].
pub fn load_run(dir: &Path) -> Result<(PosteriorDraws, Dataset, RunManifest)> {
    let manifest: RunManifest = toml::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Schema(format!("unsupported run format {}", manifest.format)));
    }
    let design = SmartDesign::load(&dir.join(DESIGN_FILE))?;
    let data = Dataset::load(&design, &dir.join(DATA_FILE), OutcomeTransform::Identity)?;
    let m = design.m();
    let h = manifest.components;
    let n = manifest.n_subjects;
    if data.n() != n {
        return Err(Error::Schema(format!("manifest lists {n} subjects, data has {}", data.n())));
    }

    let mut post = PosteriorDraws {
        design,
        response_variant: manifest.response_variant,
        n_subjects: n,
        draws: Vec::new(),
        diagnostics: ChainDiagnostics::default(),
    };
    let header = draw_header(&post, h);
    let mut r = csv::Reader::from_path(dir.join(DRAWS_FILE))?;
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(Error::Schema(format!("{DRAWS_FILE}: unexpected columns")));
    }
    let seq_terms: Vec<usize> = post.design.sequences.iter().map(|s| s.terms.len()).collect();
    let k = seq_terms.len();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec.iter().skip(1).map(|f| parse(f, DRAWS_FILE)).collect::<Result<_>>()?;
        let iteration: usize = rec[0].parse().map_err(|_| Error::Schema("bad iteration".into()))?;
        let mut pos = 0;
        let mut take = |len: usize| {
            let s = vals[pos..pos + len].to_vec();
            pos += len;
            s
        };
        let beta: Vec<Vec<f64>> = seq_terms.iter().map(|&t| take(t)).collect();
        let sigma2 = take(k);
        let gamma = take(RESPONSE_DIM);
        let alpha = take(1)[0];
        let occupied = take(1)[0] as usize;
        let weights = take(h);
        let log_c = take(h);
        let etas: Vec<Vec<f64>> = (0..h).map(|_| take(m)).collect();
        let components = (0..h)
            .map(|c| {
                let upper = take(m * (m + 1) / 2);
                let mut sigma = vec![0.0; m * m];
                let mut it = upper.into_iter();
                for a in 0..m {
                    for b in a..m {
                        let v = it.next().expect("sized above");
                        sigma[a * m + b] = v;
                        sigma[b * m + a] = v;
                    }
                }
                ComponentDraw { eta: etas[c].clone(), sigma, log_c: log_c[c] }
            })
            .collect();
        post.draws.push(Draw { iteration, beta, sigma2, gamma, alpha, weights, components, occupied, compliance: Vec::new() });
    }
    if post.draws.len() != manifest.n_draws {
        return Err(Error::Schema(format!("manifest lists {} draws, found {}", manifest.n_draws, post.draws.len())));
    }

    if manifest.compliance_stored {
        let mut r = csv::Reader::from_path(dir.join(COMPLIANCE_FILE))?;
        let mut rows = r.records();
        for dr in post.draws.iter_mut() {
            dr.compliance.reserve(n * m);
            for _ in 0..n {
                let rec = rows.next().ok_or_else(|| Error::Schema(format!("{COMPLIANCE_FILE} is truncated")))??;
                if rec[0] != *dr.iteration.to_string() {
                    return Err(Error::Schema(format!("{COMPLIANCE_FILE}: iteration mismatch")));
                }
                for f in rec.iter().skip(2) {
                    dr.compliance.push(parse(f, COMPLIANCE_FILE)?);
                }
            }
        }
    }

    let mut r = csv::Reader::from_path(dir.join(OCCUPANCY_FILE))?;
    for rec in r.records() {
        let rec = rec?;
        post.diagnostics.occupied.push(rec[1].parse().map_err(|_| Error::Schema("bad occupancy".into()))?);
    }
    let a = &manifest.acceptance;
    post.diagnostics.component_mean = a.component_mean.clone();
    post.diagnostics.component_cov = a.component_cov.clone();
    post.diagnostics.concentration = a.concentration.clone();
    post.diagnostics.response = a.response.clone();
    post.diagnostics.separation = a.separation;
    Ok((post, data, manifest))
}

/// Byte contents of the draw files, for determinism checks.
pub fn draw_bytes(dir: &Path) -> Result<Vec<u8>> {
    let mut out = fs::read(dir.join(DRAWS_FILE))?;
    if dir.join(COMPLIANCE_FILE).exists() {
        out.extend(fs::read(dir.join(COMPLIANCE_FILE))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::run_chain;
    use crate::outcome::LogisticConfig;
    use crate::simgen::{gen_trial, Scenario};

    #[test]
    fn run_round_trip() {
        let t = gen_trial(&Scenario::engage(0.2, 80, false, 5)).unwrap();
        let design = SmartDesign::engage(false);
        let cfg = SamplerConfig {
            components: 4,
            iterations: 30,
            burn_in: 10,
            thin: 5,
            mc_budget: 32,
            logistic: LogisticConfig { initial_draws: 200, ..Default::default() },
            ..Default::default()
        };
        let post = run_chain(&t.dataset, &design, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_run(dir.path(), &post, &t.dataset, &cfg).unwrap();
        let (back, data, manifest) = load_run(dir.path()).unwrap();
        assert_eq!(data, t.dataset);
        assert_eq!(manifest.sampler, cfg);
        assert_eq!(back, post);
    }
}
