//! Synthetic SMART trials: Gaussian-copula compliances with Beta margins,
//! logistic stage-1 response, balanced randomization and linear outcomes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::dataset::{Dataset, Subject};
use crate::design::{Arm, SmartDesign};
use crate::error::{Error, Result};
use crate::normal::{expit, std_cdf};
use crate::outcome::predict_mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    Engage,
    EngageInteraction,
    General,
}

impl DesignKind {
    pub fn design(self) -> SmartDesign {
        match self {
            DesignKind::Engage => SmartDesign::engage(false),
            DesignKind::EngageInteraction => SmartDesign::engage(true),
            DesignKind::General => SmartDesign::general(),
        }
    }
}

/// Full generative truth of a simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub design: DesignKind,
    pub n: usize,
    pub seed: u64,
    /// Exchangeable copula correlation, used unless `correlation` is given.
    pub rho: f64,
    /// Optional full row-major correlation matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<f64>>,
    /// Beta `(a, b)` margin per coordinate.
    pub margins: Vec<[f64; 2]>,
    /// `P(S = 1 | a1 = +1) = expit(c0 + c1 D_{1,+})`.
    pub response_plus: [f64; 2],
    /// `P(S = 1 | a1 = -1) = expit(c0 + c1 D_{1,-})`.
    pub response_minus: [f64; 2],
    pub noise_sd: f64,
    /// Outcome coefficients per sequence, aligned with the design's terms.
    pub beta: Vec<Vec<f64>>,
}

impl Scenario {
    /// The ENGAGE simulation: main effects, or with `interaction` the
    /// D11*D22 and D12*D22 terms on non-responder sequences.
    pub fn engage(rho: f64, n: usize, interaction: bool, seed: u64) -> Scenario {
        let mut beta = vec![
            vec![0.7, 0.6],
            vec![0.2, 0.7, 0.9],
            vec![0.2, 0.6, 0.9],
            vec![0.7, 0.6, 0.6],
            vec![0.3, 0.6, 0.7],
            vec![0.3, 0.6, 0.7],
        ];
        if interaction {
            beta[1].push(2.0);
            beta[2].push(2.0);
            beta[4].push(1.5);
            beta[5].push(1.5);
        }
        Scenario {
            design: if interaction { DesignKind::EngageInteraction } else { DesignKind::Engage },
            n,
            seed,
            rho,
            correlation: None,
            margins: vec![[3.0, 2.0], [2.0, 1.0], [2.0, 3.0]],
            response_plus: [-1.0, 1.0],
            response_minus: [-1.5, 1.0],
            noise_sd: 0.1,
            beta,
        }
    }

    /// The general SMART simulation with both response groups re-randomized.
    pub fn general(rho: f64, n: usize, seed: u64) -> Scenario {
        Scenario {
            design: DesignKind::General,
            n,
            seed,
            rho,
            correlation: None,
            margins: vec![[3.0, 2.0], [3.0, 2.0], [2.0, 3.0], [2.0, 1.0], [3.0, 2.0]],
            response_plus: [-1.0, 1.0],
            response_minus: [-1.5, 1.0],
            noise_sd: 0.1,
            beta: vec![
                vec![1.0, 0.6],
                vec![0.4, 0.5, 0.8],
                vec![0.2, 0.8, 0.9],
                vec![0.2, 0.8, 0.9, 0.7],
                vec![0.7, 0.6],
                vec![0.6, 0.2, 0.4],
                vec![0.4, 0.5, 0.9],
                vec![0.4, 0.5, 0.9, 0.7],
            ],
        }
    }

    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let m = self.margins.len();
        match &self.correlation {
            Some(r) => DMatrix::from_row_slice(m, m, r),
            None => DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { self.rho }),
        }
    }

    pub fn validate(&self) -> Result<SmartDesign> {
        let design = self.design.design();
        let m = design.m();
        let bad = |s: String| Err(Error::InvalidArgument(s));
        if self.margins.len() != m {
            return bad(format!("{} margins for {m} coordinates", self.margins.len()));
        }
        if self.margins.iter().flatten().any(|v| !(*v > 0.0)) {
            return bad("Beta margin parameters must be positive".into());
        }
        if let Some(r) = &self.correlation {
            if r.len() != m * m {
                return bad(format!("correlation needs {} entries", m * m));
            }
        }
        let r = self.correlation_matrix();
        if (0..m).any(|i| (r[(i, i)] - 1.0).abs() > 1e-12) || (&r - r.transpose()).abs().max() > 1e-12 {
            return bad("correlation must be symmetric with unit diagonal".into());
        }
        if r.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("copula correlation".into()));
        }
        if self.beta.len() != design.k() {
            return bad(format!("{} coefficient rows for {} sequences", self.beta.len(), design.k()));
        }
        for (k, (b, s)) in self.beta.iter().zip(&design.sequences).enumerate() {
            if b.len() != s.terms.len() {
                return bad(format!("sequence {} needs {} coefficients", k + 1, s.terms.len()));
            }
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be non-negative".into());
        }
        Ok(design)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        Ok(toml::from_str(text)?)
    }
}

/// Row-major `n × m` matrix of copula compliances.
pub fn gen_copula_compliances<R: Rng + ?Sized>(scenario: &Scenario, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let m = scenario.margins.len();
    let l = scenario
        .correlation_matrix()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("copula correlation".into()))?
        .l();
    let margins: Vec<Beta> = scenario
        .margins
        .iter()
        .map(|[a, b]| Beta::new(*a, *b).map_err(|e| Error::InvalidArgument(e.to_string())))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        let z = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = &l * z;
        for j in 0..m {
            let u = std_cdf(x[j]).clamp(0.0, 1.0);
            out.push(margins[j].inverse_cdf(u).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// A generated dataset together with the complete compliance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrial {
    pub dataset: Dataset,
    pub full_compliance: Vec<f64>,
}

/// Simulates a trial from a scenario, seeded by `scenario.seed`.
pub fn gen_trial(scenario: &Scenario) -> Result<SimulatedTrial> {
    let design = scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let m = design.m();
    let n = scenario.n;
    let full = gen_copula_compliances(scenario, n, &mut rng)?;
    let noise = Normal::new(0.0, scenario.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let coin = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { Arm::Plus } else { Arm::Minus };
    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let d = &full[i * m..(i + 1) * m];
        let a1 = coin(&mut rng);
        let (c, coord) = match a1 {
            Arm::Plus => (scenario.response_plus, design.stage1_coordinate(Arm::Plus)),
            Arm::Minus => (scenario.response_minus, design.stage1_coordinate(Arm::Minus)),
        };
        let x = coord.map_or(0.0, |j| d[j]);
        let responder = rng.random::<f64>() < expit(c[0] + c[1] * x);
        let a2 = if !responder || design.rerandomizes_responders() { Some(coin(&mut rng)) } else { None };
        let k = design
            .sequence_for(a1, responder, a2)
            .ok_or_else(|| Error::InvalidDesign(format!("no sequence for a1={a1}, s={responder}")))?;
        let y = predict_mean(&design, &scenario.beta, k, d) + rng.sample(noise);
        let seq = design.sequence(k);
        let compliance = d.iter().zip(&seq.observed).map(|(&v, &o)| o.then_some(v)).collect();
        subjects.push(Subject { id: (i + 1).to_string(), a1, responder, a2, compliance, y });
    }
    let dataset = Dataset::new(&design, subjects)?;
    Ok(SimulatedTrial { dataset, full_compliance: full })
}

fn require_kind(scenario: &Scenario, ok: &[DesignKind]) -> Result<()> {
    if ok.contains(&scenario.design) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("scenario design {:?} does not match", scenario.design)))
    }
}

pub fn gen_engage_trial(scenario: &Scenario) -> Result<SimulatedTrial> {
    require_kind(scenario, &[DesignKind::Engage, DesignKind::EngageInteraction])?;
    gen_trial(scenario)
}

pub fn gen_general_trial(scenario: &Scenario) -> Result<SimulatedTrial> {
    require_kind(scenario, &[DesignKind::General])?;
    gen_trial(scenario)
}
