//! Trial datasets: one row per subject with treatment path, partially observed
//! compliances and outcome, validated against a [`SmartDesign`].

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::design::{Arm, SmartDesign};
use crate::error::{Error, Result};

pub const NA: &str = "NA";

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub a1: Arm,
    pub responder: bool,
    pub a2: Option<Arm>,
    /// One entry per design coordinate; `None` where latent.
    pub compliance: Vec<Option<f64>>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
    /// 1-based sequence id of each subject.
    pub sequence: Vec<usize>,
}

/// Optional outcome transform applied at ingestion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutcomeTransform {
    Identity,
    /// `ln(y + c)`.
    LogShift(f64),
}

impl OutcomeTransform {
    pub fn apply(self, y: f64) -> Result<f64> {
        match self {
            OutcomeTransform::Identity => Ok(y),
            OutcomeTransform::LogShift(c) => {
                if y + c > 0.0 {
                    Ok((y + c).ln())
                } else {
                    Err(Error::InvalidArgument(format!("ln(y + {c}) undefined for y = {y}")))
                }
            }
        }
    }
}

/// Checks a single subject against the design and returns its sequence id.
pub fn classify(design: &SmartDesign, s: &Subject) -> std::result::Result<usize, String> {
    if s.compliance.len() != design.m() {
        return Err(format!("expected {} compliance values, found {}", design.m(), s.compliance.len()));
    }
    let k = design.sequence_for(s.a1, s.responder, s.a2).ok_or_else(|| {
        let a2 = s.a2.map_or(NA.to_string(), |a| a.to_string());
        if s.responder && s.a2.is_some() && !design.rerandomizes_responders() {
            "responders are not re-randomized in this design, a2 must be NA".to_string()
        } else {
            format!("no sequence matches a1={}, s={}, a2={a2}", s.a1, s.responder as u8)
        }
    })?;
    let seq = design.sequence(k);
    for (j, (v, &obs)) in s.compliance.iter().zip(&seq.observed).enumerate() {
        let name = &design.coordinates[j].name;
        match (v, obs) {
            (Some(x), true) => {
                if !(0.0..=1.0).contains(x) {
                    return Err(format!("{name} = {x} outside [0, 1]"));
                }
            }
            (None, false) => {}
            (Some(_), false) => return Err(format!("{name} must be NA on sequence {k}")),
            (None, true) => return Err(format!("{name} is observed on sequence {k} but NA")),
        }
    }
    if !s.y.is_finite() {
        return Err(format!("outcome {} is not finite", s.y));
    }
    Ok(k)
}

impl Dataset {
    pub fn new(design: &SmartDesign, subjects: Vec<Subject>) -> Result<Dataset> {
        let mut sequence = Vec::with_capacity(subjects.len());
        for (i, s) in subjects.iter().enumerate() {
            let k = classify(design, s).map_err(|m| Error::InvalidArgument(format!("subject {} ({}): {m}", i + 1, s.id)))?;
            sequence.push(k);
        }
        Ok(Dataset { subjects, sequence })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Subject indices per sequence (index k-1 holds sequence k).
    pub fn by_sequence(&self, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); k];
        for (i, &s) in self.sequence.iter().enumerate() {
            out[s - 1].push(i);
        }
        out
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.y).collect()
    }

    pub fn header(design: &SmartDesign) -> Vec<String> {
        let mut h = vec!["id".to_string(), "a1".into(), "s".into(), "a2".into()];
        h.extend(design.coordinates.iter().map(|c| c.name.clone()));
        h.push("y".into());
        h
    }

    pub fn write_csv<W: Write>(&self, design: &SmartDesign, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Dataset::header(design))?;
        for s in &self.subjects {
            let mut rec = vec![s.id.clone(), s.a1.code().to_string(), (s.responder as u8).to_string()];
            rec.push(s.a2.map_or(NA.to_string(), |a| a.code().to_string()));
            rec.extend(s.compliance.iter().map(|v| v.map_or(NA.to_string(), |x| x.to_string())));
            rec.push(s.y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, design: &SmartDesign, path: &Path) -> Result<()> {
        self.write_csv(design, File::create(path)?)
    }

    pub fn read_csv<R: Read>(design: &SmartDesign, input: R, transform: OutcomeTransform, source: &str) -> Result<Dataset> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let expect = Dataset::header(design);
        if header != expect {
            return Err(Error::Schema(format!(
                "{source}: header [{}] does not match expected [{}]",
                header.join(","),
                expect.join(",")
            )));
        }
        let m = design.m();
        let mut subjects = Vec::new();
        let mut sequence = Vec::new();
        for (idx, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map_or(idx as u64 + 2, |p| p.line());
            let fail = |message: String| Error::Dataset { path: source.into(), line: line as usize, message };
            let arm = |field: &str, name: &str| -> Result<Arm> {
                field
                    .parse::<i64>()
                    .ok()
                    .and_then(Arm::from_code)
                    .ok_or_else(|| fail(format!("{name} must be 1 or -1, found '{field}'")))
            };
            let a1 = arm(&rec[1], "a1")?;
            let responder = match &rec[2] {
                "1" => true,
                "0" => false,
                other => return Err(fail(format!("s must be 0 or 1, found '{other}'"))),
            };
            let a2 = if &rec[3] == NA { None } else { Some(arm(&rec[3], "a2")?) };
            let mut compliance = Vec::with_capacity(m);
            for j in 0..m {
                let f = &rec[4 + j];
                compliance.push(if f == NA {
                    None
                } else {
                    Some(f.parse::<f64>().map_err(|_| fail(format!("{} is not a number: '{f}'", design.coordinates[j].name)))?)
                });
            }
            let raw: f64 = rec[4 + m].parse().map_err(|_| fail(format!("y is not a number: '{}'", &rec[4 + m])))?;
            let y = transform.apply(raw).map_err(|e| fail(e.to_string()))?;
            let s = Subject { id: rec[0].to_string(), a1, responder, a2, compliance, y };
            let k = classify(design, &s).map_err(fail)?;
            subjects.push(s);
            sequence.push(k);
        }
        Ok(Dataset { subjects, sequence })
    }

    pub fn load(design: &SmartDesign, path: &Path, transform: OutcomeTransform) -> Result<Dataset> {
        Dataset::read_csv(design, File::open(path)?, transform, &path.display().to_string())
    }

    /// Checks that every sequence has more rows than free regression
    /// coefficients and that both response statuses occur.
    pub fn check_estimable(&self, design: &SmartDesign) -> Result<()> {
        for (k, rows) in self.by_sequence(design.k()).iter().enumerate() {
            let j = design.sequences[k].terms.len();
            if rows.len() <= j {
                return Err(Error::InsufficientRows { sequence: k + 1, rows: rows.len(), coefficients: j });
            }
        }
        let responders = self.subjects.iter().filter(|s| s.responder).count();
        if responders == 0 || responders == self.n() {
            return Err(Error::SingleResponseStatus);
        }
        Ok(())
    }
}
