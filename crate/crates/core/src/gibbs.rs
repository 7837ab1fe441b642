//! The full sampler: imputation, mixture updates, stick weights and
//! concentration, then the outcome and response regressions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{impute_missing, initialize_missing, ImputeContext, InitMethod};
use crate::dataset::Dataset;
use crate::design::SmartDesign;
use crate::error::{Error, Result};
use crate::mixture::{
    draw_from_base, stick_break, update_assignments, update_component_cov, update_component_mean, update_concentration,
    update_sticks, Component, ConcentrationTarget, MixtureState,
};
use crate::outcome::{
    coefficient_mean, draw_outcome_params, initial_response_draw, residual_sums, response_features, LogisticConfig,
    OutcomeLayout, RegressionData, ResponseVariant, RESPONSE_DIM,
};
use crate::truncmvn::{CubePoints, CubeRule, TruncatedGaussian};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Truncation level H of the stick-breaking mixture.
    pub components: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Points per cube-mass evaluation.
    pub mc_budget: usize,
    pub cube_rule: CubeRule,
    /// Gibbs scans over a subject's latent coordinates per iteration.
    pub augment_sweeps: usize,
    /// Degrees of freedom of the Wishart covariance proposal.
    pub cov_proposal_df: f64,
    pub concentration: ConcentrationTarget,
    pub alpha_init: f64,
    pub init: InitMethod,
    /// Components seeded by k-means at the start; the rest start from the base.
    pub init_clusters: usize,
    pub response_variant: ResponseVariant,
    pub logistic: LogisticConfig,
    /// Keep the imputed compliance matrix with every stored draw.
    pub store_compliance: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            components: 20,
            iterations: 6000,
            burn_in: 2000,
            thin: 5,
            seed: 1,
            mc_budget: 256,
            cube_rule: CubeRule::Lattice,
            augment_sweeps: 1,
            cov_proposal_df: 1000.0,
            concentration: ConcentrationTarget::CountAugmented,
            alpha_init: 1.0,
            init: InitMethod::Uniform,
            init_clusters: 5,
            response_variant: ResponseVariant::A4,
            logistic: LogisticConfig::default(),
            store_compliance: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::Config(s.to_string()));
        if self.components == 0 {
            return bad("components must be at least 1");
        }
        if self.iterations < self.burn_in {
            return bad("iterations must not be smaller than burn_in");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        if self.mc_budget == 0 {
            return bad("mc_budget must be at least 1");
        }
        if self.init_clusters == 0 {
            return bad("init_clusters must be at least 1");
        }
        if self.augment_sweeps == 0 {
            return bad("augment_sweeps must be at least 1");
        }
        if !(self.alpha_init > 0.0) {
            return bad("alpha_init must be positive");
        }
        if !(self.logistic.target_acceptance > 0.0 && self.logistic.target_acceptance < 1.0) {
            return bad("logistic.target_acceptance must lie in (0, 1)");
        }
        if self.logistic.initial_thin == 0 {
            return bad("logistic.initial_thin must be at least 1");
        }
        Ok(())
    }

    /// Number of stored draws.
    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDraw {
    pub eta: Vec<f64>,
    /// Row-major covariance.
    pub sigma: Vec<f64>,
    pub log_c: f64,
}

impl ComponentDraw {
    pub fn kernel(&self) -> Result<TruncatedGaussian> {
        TruncatedGaussian::from_slices(&self.eta, &self.sigma)
    }
}

/// Everything recorded at one kept iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    /// 1-based iteration index.
    pub iteration: usize,
    pub beta: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub components: Vec<ComponentDraw>,
    pub occupied: usize,
    /// Row-major `n × m` imputed compliances; empty when not stored.
    pub compliance: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCounts {
    pub accepted: u64,
    pub proposed: u64,
}

impl AcceptanceCounts {
    fn record(&mut self, acc: bool) {
        self.proposed += 1;
        self.accepted += acc as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub component_mean: AcceptanceCounts,
    pub component_cov: AcceptanceCounts,
    pub concentration: AcceptanceCounts,
    pub response: AcceptanceCounts,
    /// Occupied component count after every iteration.
    pub occupied: Vec<usize>,
    /// The response model's maximum-likelihood fit diverged.
    pub separation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub design: SmartDesign,
    pub response_variant: ResponseVariant,
    pub n_subjects: usize,
    pub draws: Vec<Draw>,
    pub diagnostics: ChainDiagnostics,
}

/// Mean and standard deviation of one traced quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsSummary {
    pub draws: usize,
    pub traces: Vec<TraceSummary>,
    pub acceptance_component_mean: f64,
    pub acceptance_component_cov: f64,
    pub acceptance_concentration: f64,
    pub acceptance_response: f64,
    pub max_occupied: usize,
    pub final_occupied: usize,
    pub separation: bool,
}

pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl PosteriorDraws {
    /// Column names of the scalar parameters, matching [`Self::scalar_values`].
    pub fn scalar_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for seq in &self.design.sequences {
            for t in &seq.terms {
                names.push(format!("beta.{}.{}", seq.id, t.label(&self.design.coordinates)));
            }
        }
        for seq in &self.design.sequences {
            names.push(format!("sigma2.{}", seq.id));
        }
        for j in 0..RESPONSE_DIM {
            names.push(format!("gamma.{j}"));
        }
        names.push("alpha".into());
        names.push("occupied".into());
        names
    }

    pub fn scalar_values(draw: &Draw) -> Vec<f64> {
        let mut v: Vec<f64> = draw.beta.iter().flatten().copied().collect();
        v.extend(&draw.sigma2);
        v.extend(&draw.gamma);
        v.push(draw.alpha);
        v.push(draw.occupied as f64);
        v
    }

    pub fn diagnostics(&self) -> Result<DiagnosticsSummary> {
        if self.draws.len() < 2 {
            return Err(Error::InvalidArgument("diagnostics need at least 2 draws".into()));
        }
        let values: Vec<Vec<f64>> = self.draws.iter().map(Self::scalar_values).collect();
        let traces = self
            .scalar_names()
            .into_iter()
            .enumerate()
            .map(|(j, name)| {
                let col: Vec<f64> = values.iter().map(|r| r[j]).collect();
                let (mean, sd) = mean_sd(&col);
                TraceSummary { name, mean, sd }
            })
            .collect();
        let d = &self.diagnostics;
        Ok(DiagnosticsSummary {
            draws: self.draws.len(),
            traces,
            acceptance_component_mean: d.component_mean.rate(),
            acceptance_component_cov: d.component_cov.rate(),
            acceptance_concentration: d.concentration.rate(),
            acceptance_response: d.response.rate(),
            max_occupied: d.occupied.iter().copied().max().unwrap_or(0),
            final_occupied: d.occupied.last().copied().unwrap_or(0),
            separation: d.separation,
        })
    }

    /// Posterior-mean mixture density at `d`, averaging the stored mixtures.
    pub fn mean_density(&self, d: &[f64]) -> Result<f64> {
        Ok(self.mean_density_grid(&[d.to_vec()])?[0])
    }

    pub fn mean_density_grid(&self, grid: &[Vec<f64>]) -> Result<Vec<f64>> {
        mean_density_grid(self.draws.iter().map(|d| (&d.weights[..], &d.components[..])), grid)
    }
}

/// Average over stored mixtures of their densities at each grid point.
pub fn mean_density_grid<'a>(
    mixtures: impl Iterator<Item = (&'a [f64], &'a [ComponentDraw])>,
    grid: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let mut total = vec![0.0; grid.len()];
    let mut count = 0usize;
    for (weights, components) in mixtures {
        count += 1;
        for (w, c) in weights.iter().zip(components) {
            if *w <= 0.0 {
                continue;
            }
            let kernel = c.kernel()?;
            for (t, d) in total.iter_mut().zip(grid) {
                *t += w * kernel.log_density(c.log_c, d).exp();
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no stored mixtures".into()));
    }
    Ok(total.into_iter().map(|t| t / count as f64).collect())
}

fn snapshot(components: &[Component]) -> Vec<ComponentDraw> {
    components
        .iter()
        .map(|c| ComponentDraw {
            eta: c.kernel.mean().iter().copied().collect(),
            sigma: c.kernel.cov().transpose().iter().copied().collect(),
            log_c: c.log_c,
        })
        .collect()
}

/// The Dirichlet-process mixture block of the sampler, acting on a complete
/// row-major compliance matrix.
pub struct MixtureChain {
    pub state: MixtureState,
    m: usize,
    mc_budget: usize,
    rule: CubeRule,
    cov_df: f64,
    target: ConcentrationTarget,
    members: Vec<Vec<usize>>,
}

impl MixtureChain {
    /// Starts with every row in one component fitted to the data; the rest
    /// are base-measure draws.
    pub fn new<R: Rng + ?Sized>(d: &[f64], m: usize, config: &SamplerConfig, rng: &mut R) -> Result<MixtureChain> {
        if config.cov_proposal_df <= m as f64 - 1.0 {
            return Err(Error::Config(format!("cov_proposal_df must exceed {}", m - 1)));
        }
        let h = config.components;
        let n = d.len() / m;
        let points = CubePoints::new(m, config.mc_budget, config.cube_rule, rng);
        let k = config.init_clusters.min(h).min(n);
        let mut assignments = kmeans(d, m, k, rng);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); h];
        for (i, &z) in assignments.iter().enumerate() {
            members[z].push(i);
        }
        // Clusters too small for a covariance join the largest one.
        let largest = (0..k).max_by_key(|&c| members[c].len()).unwrap_or(0);
        for c in 0..k {
            if c != largest && members[c].len() < m + 1 {
                let moved = std::mem::take(&mut members[c]);
                for &i in &moved {
                    assignments[i] = largest;
                }
                members[largest].extend(moved);
            }
        }
        let mut components = Vec::with_capacity(h);
        for mem in &members {
            components.push(if mem.is_empty() {
                draw_from_base(m, &points, rng)?
            } else {
                empirical_component(d, mem, m, &points)?
            });
        }
        let alpha = config.alpha_init;
        let sticks = update_sticks(&assignments, h, alpha, rng)?;
        let weights = stick_break(&sticks);
        Ok(MixtureChain {
            state: MixtureState { sticks, weights, alpha, assignments, components },
            m,
            mc_budget: config.mc_budget,
            rule: config.cube_rule,
            cov_df: config.cov_proposal_df,
            target: config.concentration,
            members: vec![Vec::new(); h],
        })
    }

    /// Metropolis updates of occupied kernels on a fresh point set; empty
    /// components are redrawn from the base.
    pub fn update_kernels<R: Rng + ?Sized>(&mut self, d: &[f64], diag: &mut ChainDiagnostics, rng: &mut R) -> Result<()> {
        let m = self.m;
        for mem in self.members.iter_mut() {
            mem.clear();
        }
        for (i, &z) in self.state.assignments.iter().enumerate() {
            self.members[z].push(i);
        }
        let points = CubePoints::new(m, self.mc_budget, self.rule, rng);
        for (hh, mem) in self.members.iter().enumerate() {
            if mem.is_empty() {
                self.state.components[hh] = draw_from_base(m, &points, rng)?;
                continue;
            }
            let c = &mut self.state.components[hh];
            c.log_c = c.kernel.log_normalizing_constant(&points);
            let rows: Vec<&[f64]> = mem.iter().map(|&i| &d[i * m..(i + 1) * m]).collect();
            let (c, acc) = update_component_mean(c, &rows, &points, rng)?;
            diag.component_mean.record(acc);
            let (c, acc) = update_component_cov(&c, &rows, &points, self.cov_df, rng)?;
            diag.component_cov.record(acc);
            self.state.components[hh] = c;
        }
        Ok(())
    }

    /// Assignments, stick fractions and concentration.
    pub fn update_allocation<R: Rng + ?Sized>(&mut self, d: &[f64], diag: &mut ChainDiagnostics, rng: &mut R) -> Result<()> {
        let m = self.m;
        let h = self.state.h();
        let rows: Vec<&[f64]> = d.chunks_exact(m).collect();
        self.state.assignments = update_assignments(&rows, &self.state, rng)?;
        self.state.sticks = update_sticks(&self.state.assignments, h, self.state.alpha, rng)?;
        self.state.weights = stick_break(&self.state.sticks);
        let (a, acc) = update_concentration(&self.state.sticks, &self.state.assignments, self.state.alpha, self.target, rng);
        self.state.alpha = a;
        diag.concentration.record(acc);
        Ok(())
    }
}

/// Kept draws of a mixture fitted to fully observed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDraw {
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub components: Vec<ComponentDraw>,
    pub occupied: usize,
}

/// Density estimation alone: the mixture block run on a complete `n × m`
/// matrix, with the sampler's iteration, burn-in, thinning and seed.
pub fn run_mixture_chain(d: &[f64], m: usize, config: &SamplerConfig) -> Result<(Vec<MixtureDraw>, ChainDiagnostics)> {
    config.validate()?;
    if m == 0 || d.is_empty() || d.len() % m != 0 {
        return Err(Error::InvalidArgument("compliance matrix must be a non-empty n × m array".into()));
    }
    if d.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("compliances must lie in [0,1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut chain = MixtureChain::new(d, m, config, &mut rng)?;
    let mut diag = ChainDiagnostics::default();
    let mut draws = Vec::with_capacity(config.kept());
    for t in 0..config.iterations {
        let wrap = |e: Error| e.at_iteration(t + 1);
        chain.update_kernels(d, &mut diag, &mut rng).map_err(wrap)?;
        chain.update_allocation(d, &mut diag, &mut rng).map_err(wrap)?;
        let occupied = chain.state.occupied();
        diag.occupied.push(occupied);
        if t >= config.burn_in && (t - config.burn_in + 1) % config.thin == 0 {
            draws.push(MixtureDraw {
                alpha: chain.state.alpha,
                weights: chain.state.weights.clone(),
                components: snapshot(&chain.state.components),
                occupied,
            });
        }
    }
    Ok((draws, diag))
}

fn empirical_component(d: &[f64], rows: &[usize], m: usize, points: &CubePoints) -> Result<Component> {
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(m);
    for &i in rows {
        for j in 0..m {
            mean[j] += d[i * m + j] / n;
        }
    }
    let mut cov = DMatrix::identity(m, m) * 0.01;
    for &i in rows {
        let r = DVector::from_iterator(m, (0..m).map(|j| d[i * m + j])) - &mean;
        cov += &r * r.transpose() / n;
    }
    Ok(Component::new(TruncatedGaussian::new(mean, cov)?, points))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations.
fn kmeans<R: Rng + ?Sized>(d: &[f64], m: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let n = d.len() / m;
    let row = |i: usize| &d[i * m..(i + 1) * m];
    let mut centres: Vec<Vec<f64>> = vec![row(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = nearest.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let pick = nearest.iter().position(|&w| {
            u -= w;
            u <= 0.0
        });
        let c = row(pick.unwrap_or(n - 1)).to_vec();
        for (i, v) in nearest.iter_mut().enumerate() {
            *v = v.min(sq_dist(row(i), &c));
        }
        centres.push(c);
    }
    let mut z = vec![0usize; n];
    for _ in 0..20 {
        let mut changed = false;
        for (i, zi) in z.iter_mut().enumerate() {
            let best = (0..centres.len())
                .min_by(|&a, &b| sq_dist(row(i), &centres[a]).total_cmp(&sq_dist(row(i), &centres[b])))
                .unwrap_or(0);
            changed |= best != *zi;
            *zi = best;
        }
        let mut sums = vec![vec![0.0; m]; centres.len()];
        let mut counts = vec![0usize; centres.len()];
        for (i, &zi) in z.iter().enumerate() {
            counts[zi] += 1;
            for j in 0..m {
                sums[zi][j] += d[i * m + j];
            }
        }
        for (c, (s, &cnt)) in centres.iter_mut().zip(sums.iter().zip(&counts)) {
            if cnt > 0 {
                *c = s.iter().map(|v| v / cnt as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    z
}

fn features(design: &SmartDesign, data: &Dataset, variant: ResponseVariant, d: &[f64], m: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(data.n() * RESPONSE_DIM);
    for (i, s) in data.subjects.iter().enumerate() {
        x.extend(response_features(variant, design, s.a1, &d[i * m..(i + 1) * m]));
    }
    x
}

/// Runs one chain. Deterministic given `config.seed`.
pub fn run_chain(data: &Dataset, design: &SmartDesign, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    design.require_identified()?;
    data.check_estimable(design)?;
    let m = design.m();
    let n = data.n();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layout = OutcomeLayout::new(design);
    let y = data.outcomes();
    let missing: Vec<Vec<usize>> = data.sequence.iter().map(|&k| design.sequence(k).missing()).collect();
    let s: Vec<bool> = data.subjects.iter().map(|s| s.responder).collect();

    let mut d = initialize_missing(data, m, config.init, &mut rng);

    // Regression start: generalized least squares with unit variances, then
    // residual variances.
    let reg = RegressionData { sequence: &data.sequence, compliance: &d, y: &y, m };
    let theta = coefficient_mean(design, &layout, &reg, &vec![1.0; design.k()])?;
    let mut beta = layout.expand(&theta);
    let (rss, counts) = residual_sums(design, &beta, &reg);
    let mut sigma2: Vec<f64> = rss.iter().zip(&counts).map(|(r, &c)| (r / c as f64).max(1e-6)).collect();

    let variant = config.response_variant;
    let x = features(design, data, variant, &d, m);
    let (mut logistic, mut gamma) = initial_response_draw(&x, &s, RESPONSE_DIM, &config.logistic, &mut rng);
    let mut diagnostics = ChainDiagnostics { separation: logistic.separation, ..Default::default() };
    let init_accepted = logistic.accepted;
    let init_proposed = logistic.proposed;

    let mut mixture = MixtureChain::new(&d, m, config, &mut rng)?;

    let mut draws = Vec::with_capacity(config.kept());

    for t in 0..config.iterations {
        let iteration = t + 1;
        let wrap = |e: Error| e.at_iteration(iteration);

        // Latent compliances.
        for i in 0..n {
            if missing[i].is_empty() {
                continue;
            }
            let k = data.sequence[i];
            let ctx = ImputeContext {
                sequence: design.sequence(k),
                beta: &beta[k - 1],
                sigma2: sigma2[k - 1],
                y: y[i],
                kernel: &mixture.state.components[mixture.state.assignments[i]].kernel,
            };
            impute_missing(&mut d[i * m..(i + 1) * m], &missing[i], &ctx, config.augment_sweeps, &mut rng);
        }

        mixture.update_kernels(&d, &mut diagnostics, &mut rng).map_err(wrap)?;
        mixture.update_allocation(&d, &mut diagnostics, &mut rng).map_err(wrap)?;
        let state = &mixture.state;

        // Outcome and response regressions.
        let reg = RegressionData { sequence: &data.sequence, compliance: &d, y: &y, m };
        let (_, params) = draw_outcome_params(design, &layout, &reg, &sigma2, &mut rng).map_err(wrap)?;
        beta = params.beta;
        sigma2 = params.sigma2;
        let x = features(design, data, variant, &d, m);
        logistic.run(&x, &s, &mut gamma, config.logistic.refresh_steps, t < config.burn_in, &mut rng);

        let occupied = state.occupied();
        diagnostics.occupied.push(occupied);

        if t >= config.burn_in && (t - config.burn_in + 1) % config.thin == 0 {
            draws.push(Draw {
                iteration,
                beta: beta.clone(),
                sigma2: sigma2.clone(),
                gamma: gamma.clone(),
                alpha: state.alpha,
                weights: state.weights.clone(),
                components: snapshot(&state.components),
                occupied,
                compliance: if config.store_compliance { d.clone() } else { Vec::new() },
            });
        }
    }
    diagnostics.response = AcceptanceCounts {
        accepted: logistic.accepted - init_accepted,
        proposed: logistic.proposed - init_proposed,
    };
    Ok(PosteriorDraws { design: design.clone(), response_variant: variant, n_subjects: n, draws, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{gen_trial, Scenario};

    fn short(seed: u64) -> SamplerConfig {
        SamplerConfig {
            components: 5,
            iterations: 60,
            burn_in: 20,
            thin: 4,
            seed,
            mc_budget: 64,
            logistic: LogisticConfig { initial_draws: 500, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn no_draws_when_all_burn_in() {
        let t = gen_trial(&Scenario::engage(0.2, 120, false, 1)).unwrap();
        let design = SmartDesign::engage(false);
        let cfg = SamplerConfig { iterations: 10, burn_in: 10, ..short(1) };
        let out = run_chain(&t.dataset, &design, &cfg).unwrap();
        assert!(out.draws.is_empty());
        assert_eq!(out.diagnostics.occupied.len(), 10);
    }

    #[test]
    fn draw_count_and_state_validity() {
        let t = gen_trial(&Scenario::engage(0.2, 150, false, 2)).unwrap();
        let design = SmartDesign::engage(false);
        let cfg = short(2);
        let out = run_chain(&t.dataset, &design, &cfg).unwrap();
        assert_eq!(out.draws.len(), cfg.kept());
        assert_eq!(out.draws.len(), 10);
        for dr in &out.draws {
            assert!((dr.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(dr.compliance.iter().all(|v| (0.0..=1.0).contains(v)));
            // Tied slots carry identical values.
            for (a, b) in &design.constraints.equalities {
                let ta = design.sequence(a.sequence).term_index(a.term).unwrap();
                let tb = design.sequence(b.sequence).term_index(b.term).unwrap();
                assert_eq!(dr.beta[a.sequence - 1][ta].to_bits(), dr.beta[b.sequence - 1][tb].to_bits());
            }
            // Observed compliances are never modified.
            for (i, s) in t.dataset.subjects.iter().enumerate() {
                for (j, v) in s.compliance.iter().enumerate() {
                    if let Some(x) = v {
                        assert_eq!(dr.compliance[i * 3 + j], *x);
                    }
                }
            }
            assert!(dr.occupied <= cfg.components);
        }
        let summary = out.diagnostics().unwrap();
        assert!(summary.acceptance_component_mean > 0.0 && summary.acceptance_component_mean < 1.0);
        assert!(summary.acceptance_response > 0.0 && summary.acceptance_response < 1.0);
    }

    #[test]
    fn identical_seeds_identical_draws() {
        let t = gen_trial(&Scenario::engage(0.2, 100, false, 3)).unwrap();
        let design = SmartDesign::engage(false);
        let a = run_chain(&t.dataset, &design, &short(7)).unwrap();
        let b = run_chain(&t.dataset, &design, &short(7)).unwrap();
        assert_eq!(a, b);
        let c = run_chain(&t.dataset, &design, &short(8)).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(SamplerConfig { thin: 0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { iterations: 5, burn_in: 6, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig::default().validate().is_ok());
    }
}
