//! SMART structure: treatment sequences, embedded regimes, which potential
//! compliances each sequence observes, and the equality constraints that tie
//! coefficients of latent compliances to ones that are identified.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A randomized arm, coded +1 / -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Plus,
    Minus,
}

impl Arm {
    pub fn value(self) -> f64 {
        match self {
            Arm::Plus => 1.0,
            Arm::Minus => -1.0,
        }
    }

    pub fn from_code(code: i64) -> Option<Arm> {
        match code {
            1 => Some(Arm::Plus),
            -1 => Some(Arm::Minus),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        match self {
            Arm::Plus => 1,
            Arm::Minus => -1,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.code())
    }
}

/// Which part of the trial a potential compliance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateRole {
    /// Stage-1 compliance under the given first-stage arm.
    Stage1(Arm),
    /// Stage-2 compliance only reachable by stage-1 responders.
    Responder,
    /// Stage-2 compliance only reachable by stage-1 non-responders.
    NonResponder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub name: String,
    pub role: CoordinateRole,
}

/// One column of a sequence's outcome regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Intercept,
    Main(usize),
    /// Product of two distinct coordinates, stored with the smaller index first.
    Interaction(usize, usize),
}

impl Term {
    pub fn interaction(a: usize, b: usize) -> Term {
        Term::Interaction(a.min(b), a.max(b))
    }

    pub fn coordinates(&self) -> Vec<usize> {
        match *self {
            Term::Intercept => Vec::new(),
            Term::Main(j) => vec![j],
            Term::Interaction(a, b) => vec![a, b],
        }
    }

    pub fn involves(&self, j: usize) -> bool {
        match *self {
            Term::Intercept => false,
            Term::Main(a) => a == j,
            Term::Interaction(a, b) => a == j || b == j,
        }
    }

    /// Column value at compliance vector `d`.
    pub fn value(&self, d: &[f64]) -> f64 {
        match *self {
            Term::Intercept => 1.0,
            Term::Main(j) => d[j],
            Term::Interaction(a, b) => d[a] * d[b],
        }
    }

    pub fn label(&self, coords: &[Coordinate]) -> String {
        match *self {
            Term::Intercept => "intercept".to_string(),
            Term::Main(j) => coords[j].name.clone(),
            Term::Interaction(a, b) => format!("{}*{}", coords[a].name, coords[b].name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentSequence {
    /// 1-based sequence index.
    pub id: usize,
    pub a1: Arm,
    pub responder: bool,
    pub a2: Option<Arm>,
    /// Per-coordinate flag: is this compliance observed for subjects on the sequence.
    pub observed: Vec<bool>,
    /// Outcome regression columns; the intercept is always first.
    pub terms: Vec<Term>,
}

impl TreatmentSequence {
    pub fn missing(&self) -> Vec<usize> {
        (0..self.observed.len()).filter(|&j| !self.observed[j]).collect()
    }

    pub fn term_index(&self, term: Term) -> Option<usize> {
        self.terms.iter().position(|&t| t == term)
    }

    pub fn row(&self, d: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| t.value(d)).collect()
    }
}

/// An embedded regime and the two sequences consistent with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Edtr {
    pub id: usize,
    pub a1: Arm,
    pub responder_sequence: usize,
    pub nonresponder_sequence: usize,
}

/// A coefficient slot: one regression term of one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId {
    pub sequence: usize,
    pub term: Term,
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seq {} {:?}", self.sequence, self.term)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub equalities: Vec<(SlotId, SlotId)>,
}

impl ConstraintSet {
    pub fn tie(&mut self, term: Term, a: usize, b: usize) {
        self.equalities.push((
            SlotId { sequence: a, term },
            SlotId { sequence: b, term },
        ));
    }
}

/// Equivalence classes of coefficient slots under the equality constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotPartition {
    /// `class[k][t]`: class index of term `t` of sequence `k` (0-based k).
    pub class: Vec<Vec<usize>>,
    pub n_classes: usize,
}

impl SlotPartition {
    pub fn members(&self, class: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, row) in self.class.iter().enumerate() {
            for (t, &c) in row.iter().enumerate() {
                if c == class {
                    out.push((k, t));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmartDesign {
    pub name: String,
    pub coordinates: Vec<Coordinate>,
    pub sequences: Vec<TreatmentSequence>,
    pub edtrs: Vec<Edtr>,
    pub constraints: ConstraintSet,
}

impl SmartDesign {
    /// Builds a design after checking its structural invariants. Identifiability
    /// is a separate check, see [`SmartDesign::validate_constraints`].
    pub fn new(
        name: impl Into<String>,
        coordinates: Vec<Coordinate>,
        sequences: Vec<TreatmentSequence>,
        edtrs: Vec<Edtr>,
        constraints: ConstraintSet,
    ) -> Result<Self> {
        let design = SmartDesign {
            name: name.into(),
            coordinates,
            sequences,
            edtrs,
            constraints,
        };
        design.check_structure()?;
        Ok(design)
    }

    pub fn m(&self) -> usize {
        self.coordinates.len()
    }

    pub fn k(&self) -> usize {
        self.sequences.len()
    }

    pub fn l(&self) -> usize {
        self.edtrs.len()
    }

    /// Sequence by 1-based id.
    pub fn sequence(&self, id: usize) -> &TreatmentSequence {
        &self.sequences[id - 1]
    }

    pub fn coordinate_index(&self, name: &str) -> Option<usize> {
        self.coordinates.iter().position(|c| c.name == name)
    }

    pub fn stage1_coordinate(&self, arm: Arm) -> Option<usize> {
        self.coordinates
            .iter()
            .position(|c| c.role == CoordinateRole::Stage1(arm))
    }

    /// True when responders are re-randomized at stage 2.
    pub fn rerandomizes_responders(&self) -> bool {
        self.sequences.iter().any(|s| s.responder && s.a2.is_some())
    }

    /// Sequence id matching an observed treatment path.
    pub fn sequence_for(&self, a1: Arm, responder: bool, a2: Option<Arm>) -> Option<usize> {
        self.sequences
            .iter()
            .find(|s| s.a1 == a1 && s.responder == responder && s.a2 == a2)
            .map(|s| s.id)
    }

    /// (responder sequence, non-responder sequence) of the 1-based EDTR `l`.
    pub fn sequences_for_edtr(&self, l: usize) -> Result<(&TreatmentSequence, &TreatmentSequence)> {
        if l == 0 || l > self.l() {
            return Err(Error::InvalidArgument(format!(
                "EDTR {l} out of range 1..={}",
                self.l()
            )));
        }
        let e = &self.edtrs[l - 1];
        Ok((
            self.sequence(e.responder_sequence),
            self.sequence(e.nonresponder_sequence),
        ))
    }

    pub fn slot_label(&self, slot: &SlotId) -> String {
        format!("{}:{}", slot.sequence, slot.term.label(&self.coordinates))
    }

    pub fn partition(&self) -> SlotPartition {
        let offsets: Vec<usize> = self
            .sequences
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s.terms.len();
                Some(o)
            })
            .collect();
        let total: usize = self.sequences.iter().map(|s| s.terms.len()).sum();
        let mut parent: Vec<usize> = (0..total).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (a, b) in &self.constraints.equalities {
            let ia = offsets[a.sequence - 1] + self.sequence(a.sequence).term_index(a.term).unwrap();
            let ib = offsets[b.sequence - 1] + self.sequence(b.sequence).term_index(b.term).unwrap();
            let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut ids = BTreeMap::new();
        let mut class = Vec::with_capacity(self.k());
        for (k, s) in self.sequences.iter().enumerate() {
            let mut row = Vec::with_capacity(s.terms.len());
            for t in 0..s.terms.len() {
                let root = find(&mut parent, offsets[k] + t);
                let next = ids.len();
                row.push(*ids.entry(root).or_insert(next));
            }
            class.push(row);
        }
        SlotPartition {
            class,
            n_classes: ids.len(),
        }
    }

    /// Every slot whose term touches a compliance latent in its own sequence
    /// must share a class with the same term in a sequence observing all the
    /// term's compliances. Returns the offending slots otherwise.
    pub fn validate_constraints(&self) -> std::result::Result<(), Vec<SlotId>> {
        let part = self.partition();
        let mut violations = Vec::new();
        for (k, seq) in self.sequences.iter().enumerate() {
            for (t, &term) in seq.terms.iter().enumerate() {
                let coords = term.coordinates();
                if coords.iter().all(|&j| seq.observed[j]) {
                    continue;
                }
                let anchored = part.members(part.class[k][t]).into_iter().any(|(k2, t2)| {
                    let other = &self.sequences[k2];
                    other.terms[t2] == term && coords.iter().all(|&j| other.observed[j])
                });
                if !anchored {
                    violations.push(SlotId {
                        sequence: seq.id,
                        term,
                    });
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// [`validate_constraints`](Self::validate_constraints) as an [`Error`].
    pub fn require_identified(&self) -> Result<()> {
        self.validate_constraints().map_err(|slots| {
            Error::Unidentified(slots.iter().map(|s| self.slot_label(s)).collect())
        })
    }

    fn check_structure(&self) -> Result<()> {
        let m = self.m();
        let bad = |msg: String| Err(Error::InvalidDesign(msg));
        if m == 0 {
            return bad("no compliance coordinates".into());
        }
        for arm in [Arm::Plus, Arm::Minus] {
            if self.stage1_coordinate(arm).is_none() {
                return bad(format!("no stage-1 compliance for arm {arm}"));
            }
        }
        for (i, seq) in self.sequences.iter().enumerate() {
            if seq.id != i + 1 {
                return bad(format!("sequence ids must be 1..K in order, found {}", seq.id));
            }
            if seq.observed.len() != m {
                return bad(format!("sequence {}: mask length {} != {m}", seq.id, seq.observed.len()));
            }
            if seq.terms.first() != Some(&Term::Intercept)
                || seq.terms.iter().skip(1).any(|t| *t == Term::Intercept)
            {
                return bad(format!("sequence {}: intercept must be the first and only intercept term", seq.id));
            }
            for term in &seq.terms {
                if let Term::Interaction(a, b) = *term {
                    if a >= b {
                        return bad(format!("sequence {}: malformed interaction", seq.id));
                    }
                }
                if term.coordinates().iter().any(|&j| j >= m) {
                    return bad(format!("sequence {}: term outside 0..{m}", seq.id));
                }
            }
            let mut seen = seq.terms.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != seq.terms.len() {
                return bad(format!("sequence {}: duplicate terms", seq.id));
            }
            for (j, c) in self.coordinates.iter().enumerate() {
                if !seq.observed[j] {
                    continue;
                }
                let reachable = match c.role {
                    CoordinateRole::Stage1(arm) => arm == seq.a1,
                    CoordinateRole::Responder => seq.responder,
                    CoordinateRole::NonResponder => !seq.responder,
                };
                if !reachable {
                    return bad(format!(
                        "sequence {} observes {}, which it has no access to",
                        seq.id, c.name
                    ));
                }
            }
            if !seq.responder && seq.a2.is_none() {
                return bad(format!("non-responder sequence {} has no stage-2 arm", seq.id));
            }
            if self
                .sequences
                .iter()
                .filter(|o| o.a1 == seq.a1 && o.responder == seq.responder && o.a2 == seq.a2)
                .count()
                != 1
            {
                return bad(format!("sequence {} has a duplicated treatment path", seq.id));
            }
        }
        for (i, e) in self.edtrs.iter().enumerate() {
            if e.id != i + 1 {
                return bad(format!("EDTR ids must be 1..L in order, found {}", e.id));
            }
            let k = self.k();
            if e.responder_sequence == 0 || e.responder_sequence > k || e.nonresponder_sequence == 0 || e.nonresponder_sequence > k {
                return bad(format!("EDTR {} references a missing sequence", e.id));
            }
            let r = self.sequence(e.responder_sequence);
            let nr = self.sequence(e.nonresponder_sequence);
            if !r.responder || nr.responder {
                return bad(format!("EDTR {} must pair a responder and a non-responder sequence", e.id));
            }
            if r.a1 != e.a1 || nr.a1 != e.a1 {
                return bad(format!("EDTR {}: stage-1 arms disagree", e.id));
            }
        }
        for seq in &self.sequences {
            if !self
                .edtrs
                .iter()
                .any(|e| e.responder_sequence == seq.id || e.nonresponder_sequence == seq.id)
            {
                return bad(format!("sequence {} belongs to no EDTR", seq.id));
            }
        }
        for (a, b) in &self.constraints.equalities {
            for s in [a, b] {
                if s.sequence == 0 || s.sequence > self.k() || self.sequence(s.sequence).term_index(s.term).is_none() {
                    return bad(format!("constraint refers to unknown slot {s}"));
                }
            }
            if a.term != b.term {
                return bad(format!("constraint ties different terms: {a} = {b}"));
            }
        }
        Ok(())
    }

    /// The ENGAGE layout: coordinates (D11, D12, D22), six sequences, four EDTRs.
    /// With `interaction`, non-responder sequences gain D11*D22 (k = 2,3) and
    /// D12*D22 (k = 5,6) with slopes tied within each pair.
    pub fn engage(interaction: bool) -> SmartDesign {
        let coordinates = vec![
            Coordinate { name: "D11".into(), role: CoordinateRole::Stage1(Arm::Plus) },
            Coordinate { name: "D12".into(), role: CoordinateRole::Stage1(Arm::Minus) },
            Coordinate { name: "D22".into(), role: CoordinateRole::NonResponder },
        ];
        let (d11, d12, d22) = (0, 1, 2);
        use Term::*;
        let seq = |id, a1, responder, a2, observed: [bool; 3], mut terms: Vec<Term>| {
            terms.insert(0, Intercept);
            TreatmentSequence { id, a1, responder, a2, observed: observed.to_vec(), terms }
        };
        let nr_plus = |extra: bool| {
            let mut t = vec![Main(d11), Main(d22)];
            if extra {
                t.push(Term::interaction(d11, d22));
            }
            t
        };
        let nr_minus = |extra: bool| {
            let mut t = vec![Main(d12), Main(d22)];
            if extra {
                t.push(Term::interaction(d12, d22));
            }
            t
        };
        let sequences = vec![
            seq(1, Arm::Plus, true, None, [true, false, false], vec![Main(d11)]),
            seq(2, Arm::Plus, false, Some(Arm::Plus), [true, false, true], nr_plus(interaction)),
            seq(3, Arm::Plus, false, Some(Arm::Minus), [true, false, false], nr_plus(interaction)),
            seq(4, Arm::Minus, true, None, [false, true, false], vec![Main(d11), Main(d12)]),
            seq(5, Arm::Minus, false, Some(Arm::Plus), [false, true, true], nr_minus(interaction)),
            seq(6, Arm::Minus, false, Some(Arm::Minus), [false, true, false], nr_minus(interaction)),
        ];
        let edtrs = vec![
            Edtr { id: 1, a1: Arm::Plus, responder_sequence: 1, nonresponder_sequence: 2 },
            Edtr { id: 2, a1: Arm::Plus, responder_sequence: 1, nonresponder_sequence: 3 },
            Edtr { id: 3, a1: Arm::Minus, responder_sequence: 4, nonresponder_sequence: 5 },
            Edtr { id: 4, a1: Arm::Minus, responder_sequence: 4, nonresponder_sequence: 6 },
        ];
        let mut constraints = ConstraintSet::default();
        constraints.tie(Intercept, 4, 1);
        constraints.tie(Intercept, 3, 2);
        constraints.tie(Intercept, 6, 5);
        constraints.tie(Main(d11), 4, 1);
        constraints.tie(Main(d22), 3, 2);
        constraints.tie(Main(d22), 6, 5);
        if interaction {
            constraints.tie(Term::interaction(d11, d22), 3, 2);
            constraints.tie(Term::interaction(d12, d22), 6, 5);
        }
        let name = if interaction { "engage-interaction" } else { "engage" };
        SmartDesign::new(name, coordinates, sequences, edtrs, constraints)
            .expect("ENGAGE design is well formed")
    }

    /// The general two-stage SMART with both response groups re-randomized:
    /// coordinates (D11, D12, D22R, D21NR, D22NR), eight sequences and EDTRs.
    pub fn general() -> SmartDesign {
        let coordinates = vec![
            Coordinate { name: "D11".into(), role: CoordinateRole::Stage1(Arm::Plus) },
            Coordinate { name: "D12".into(), role: CoordinateRole::Stage1(Arm::Minus) },
            Coordinate { name: "D22R".into(), role: CoordinateRole::Responder },
            Coordinate { name: "D21NR".into(), role: CoordinateRole::NonResponder },
            Coordinate { name: "D22NR".into(), role: CoordinateRole::NonResponder },
        ];
        let (d11, d12, d22r, d21nr, d22nr) = (0, 1, 2, 3, 4);
        use Term::*;
        let mask = |obs: &[usize]| (0..5).map(|j| obs.contains(&j)).collect::<Vec<_>>();
        let seq = |id, a1, responder, a2, obs: &[usize], terms: &[usize]| {
            let mut t = vec![Intercept];
            t.extend(terms.iter().map(|&j| Main(j)));
            TreatmentSequence { id, a1, responder, a2: Some(a2), observed: mask(obs), terms: t }
        };
        let (p, n) = (Arm::Plus, Arm::Minus);
        let sequences = vec![
            seq(1, p, true, p, &[d11], &[d11]),
            seq(2, p, true, n, &[d11, d22r], &[d11, d22r]),
            seq(3, p, false, p, &[d11, d21nr], &[d11, d21nr]),
            seq(4, p, false, n, &[d11, d22nr], &[d11, d21nr, d22nr]),
            seq(5, n, true, p, &[d12], &[d12]),
            seq(6, n, true, n, &[d12, d22r], &[d12, d22r]),
            seq(7, n, false, p, &[d12, d21nr], &[d12, d21nr]),
            seq(8, n, false, n, &[d12, d22nr], &[d12, d21nr, d22nr]),
        ];
        let edtr = |id, a1, r, nr| Edtr { id, a1, responder_sequence: r, nonresponder_sequence: nr };
        let edtrs = vec![
            edtr(1, p, 1, 3),
            edtr(2, p, 1, 4),
            edtr(3, p, 2, 3),
            edtr(4, p, 2, 4),
            edtr(5, n, 5, 7),
            edtr(6, n, 5, 8),
            edtr(7, n, 6, 7),
            edtr(8, n, 6, 8),
        ];
        let mut constraints = ConstraintSet::default();
        constraints.tie(Intercept, 4, 3);
        constraints.tie(Intercept, 8, 7);
        constraints.tie(Main(d11), 4, 3);
        constraints.tie(Main(d12), 8, 7);
        constraints.tie(Main(d21nr), 4, 3);
        constraints.tie(Main(d21nr), 8, 7);
        SmartDesign::new("general", coordinates, sequences, edtrs, constraints)
            .expect("general design is well formed")
    }

    pub fn from_toml_str(text: &str) -> Result<SmartDesign> {
        let file: DesignFile = toml::from_str(text)?;
        file.into_design()
    }

    pub fn load(path: &Path) -> Result<SmartDesign> {
        SmartDesign::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(&DesignFile::from_design(self))?)
    }
}

/// On-disk form of a design, keyed by coordinate names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignFile {
    pub name: String,
    pub coordinates: Vec<CoordinateEntry>,
    pub sequences: Vec<SequenceEntry>,
    pub edtrs: Vec<EdtrEntry>,
    #[serde(default)]
    pub constraints: Vec<ConstraintEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordinateEntry {
    pub name: String,
    /// `stage1`, `responder` or `nonresponder`.
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: usize,
    pub a1: i64,
    pub responder: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a2: Option<i64>,
    pub observed: Vec<String>,
    /// Regression terms beside the intercept, e.g. `"D11"` or `"D11*D22"`.
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdtrEntry {
    pub id: usize,
    pub responder_sequence: usize,
    pub nonresponder_sequence: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintEntry {
    /// Two slots written `"<sequence>:<term>"`, e.g. `"4:intercept"`.
    pub slots: [String; 2],
}

impl DesignFile {
    pub fn from_design(design: &SmartDesign) -> DesignFile {
        let coords = &design.coordinates;
        DesignFile {
            name: design.name.clone(),
            coordinates: coords
                .iter()
                .map(|c| {
                    let (role, arm) = match c.role {
                        CoordinateRole::Stage1(a) => ("stage1", Some(a.code())),
                        CoordinateRole::Responder => ("responder", None),
                        CoordinateRole::NonResponder => ("nonresponder", None),
                    };
                    CoordinateEntry { name: c.name.clone(), role: role.into(), arm }
                })
                .collect(),
            sequences: design
                .sequences
                .iter()
                .map(|s| SequenceEntry {
                    id: s.id,
                    a1: s.a1.code(),
                    responder: s.responder,
                    a2: s.a2.map(Arm::code),
                    observed: (0..coords.len())
                        .filter(|&j| s.observed[j])
                        .map(|j| coords[j].name.clone())
                        .collect(),
                    terms: s.terms[1..].iter().map(|t| t.label(coords)).collect(),
                })
                .collect(),
            edtrs: design
                .edtrs
                .iter()
                .map(|e| EdtrEntry {
                    id: e.id,
                    responder_sequence: e.responder_sequence,
                    nonresponder_sequence: e.nonresponder_sequence,
                })
                .collect(),
            constraints: design
                .constraints
                .equalities
                .iter()
                .map(|(a, b)| ConstraintEntry {
                    slots: [design.slot_label(a), design.slot_label(b)],
                })
                .collect(),
        }
    }

    pub fn into_design(self) -> Result<SmartDesign> {
        let bad = |msg: String| Error::InvalidDesign(msg);
        let arm = |code: i64| Arm::from_code(code).ok_or_else(|| bad(format!("arm must be +1 or -1, got {code}")));
        let mut coordinates = Vec::new();
        for c in &self.coordinates {
            let role = match c.role.as_str() {
                "stage1" => CoordinateRole::Stage1(arm(c.arm.ok_or_else(|| bad(format!("{} needs an arm", c.name)))?)?),
                "responder" => CoordinateRole::Responder,
                "nonresponder" => CoordinateRole::NonResponder,
                other => return Err(bad(format!("unknown coordinate role {other}"))),
            };
            coordinates.push(Coordinate { name: c.name.clone(), role });
        }
        let index = |name: &str| {
            coordinates
                .iter()
                .position(|c| c.name == name)
                .ok_or_else(|| bad(format!("unknown coordinate {name}")))
        };
        let parse_term = |label: &str| -> Result<Term> {
            if label == "intercept" {
                return Ok(Term::Intercept);
            }
            match label.split_once('*') {
                Some((a, b)) => {
                    let (a, b) = (index(a.trim())?, index(b.trim())?);
                    if a == b {
                        return Err(bad(format!("squared term {label} not supported")));
                    }
                    Ok(Term::interaction(a, b))
                }
                None => Ok(Term::Main(index(label.trim())?)),
            }
        };
        let mut sequences = Vec::new();
        for s in &self.sequences {
            let mut observed = vec![false; coordinates.len()];
            for name in &s.observed {
                observed[index(name)?] = true;
            }
            let mut terms = vec![Term::Intercept];
            for label in &s.terms {
                terms.push(parse_term(label)?);
            }
            sequences.push(TreatmentSequence {
                id: s.id,
                a1: arm(s.a1)?,
                responder: s.responder,
                a2: s.a2.map(arm).transpose()?,
                observed,
                terms,
            });
        }
        let mut edtrs = Vec::new();
        for e in &self.edtrs {
            let a1 = sequences
                .get(e.responder_sequence.wrapping_sub(1))
                .map(|s| s.a1)
                .ok_or_else(|| bad(format!("EDTR {} references a missing sequence", e.id)))?;
            edtrs.push(Edtr {
                id: e.id,
                a1,
                responder_sequence: e.responder_sequence,
                nonresponder_sequence: e.nonresponder_sequence,
            });
        }
        let parse_slot = |text: &str| -> Result<SlotId> {
            let (seq, term) = text
                .split_once(':')
                .ok_or_else(|| bad(format!("slot {text} must look like <sequence>:<term>")))?;
            let sequence = seq
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad sequence id in slot {text}")))?;
            Ok(SlotId { sequence, term: parse_term(term.trim())? })
        };
        let mut constraints = ConstraintSet::default();
        for c in &self.constraints {
            constraints
                .equalities
                .push((parse_slot(&c.slots[0])?, parse_slot(&c.slots[1])?));
        }
        SmartDesign::new(self.name, coordinates, sequences, edtrs, constraints)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engage_shape() {
        let d = SmartDesign::engage(false);
        assert_eq!((d.m(), d.k(), d.l()), (3, 6, 4));
        assert_eq!(d.sequence(1).observed, vec![true, false, false]);
        assert_eq!(d.sequence(4).missing(), vec![0, 2]);
        assert!(d.validate_constraints().is_ok());
        assert!(SmartDesign::engage(true).validate_constraints().is_ok());
    }

    #[test]
    fn engage_edtr_pairs() {
        let d = SmartDesign::engage(false);
        let (r, nr) = d.sequences_for_edtr(1).unwrap();
        assert_eq!((r.id, nr.id), (1, 2));
        let (r, nr) = d.sequences_for_edtr(4).unwrap();
        assert_eq!((r.id, nr.id), (4, 6));
        assert!(d.sequences_for_edtr(0).is_err());
        assert!(d.sequences_for_edtr(5).is_err());
    }

    #[test]
    fn general_shape() {
        let d = SmartDesign::general();
        assert_eq!((d.m(), d.k(), d.l()), (5, 8, 8));
        let d21nr = d.coordinate_index("D21NR").unwrap();
        let latent: Vec<usize> = d
            .sequence(4)
            .terms
            .iter()
            .flat_map(|t| t.coordinates())
            .filter(|&j| !d.sequence(4).observed[j])
            .collect();
        assert_eq!(latent, vec![d21nr]);
        let obs2: Vec<&str> = (0..5)
            .filter(|&j| d.sequence(2).observed[j])
            .map(|j| d.coordinates[j].name.as_str())
            .collect();
        assert_eq!(obs2, vec!["D11", "D22R"]);
        let (r, nr) = d.sequences_for_edtr(8).unwrap();
        assert_eq!((r.id, nr.id), (6, 8));
        assert_eq!(r.a2, Some(Arm::Minus));
        assert!(d.validate_constraints().is_ok());
    }

    #[test]
    fn dropping_a_tie_is_reported() {
        let mut d = SmartDesign::engage(false);
        d.constraints.equalities.retain(|(a, b)| {
            !(a.sequence == 4 && b.sequence == 1 && a.term == Term::Main(0))
        });
        let err = d.validate_constraints().unwrap_err();
        assert_eq!(err, vec![SlotId { sequence: 4, term: Term::Main(0) }]);
    }

    #[test]
    fn toml_round_trip() {
        for d in [SmartDesign::engage(true), SmartDesign::general()] {
            let text = d.to_toml_string().unwrap();
            let back = SmartDesign::from_toml_str(&text).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn observing_other_branch_is_rejected() {
        let d = SmartDesign::engage(false);
        let mut seqs = d.sequences.clone();
        seqs[0].observed[2] = true; // responder observing a non-responder compliance
        let err = SmartDesign::new("bad", d.coordinates.clone(), seqs, d.edtrs.clone(), d.constraints.clone());
        assert!(matches!(err, Err(Error::InvalidDesign(_))));
    }

    #[test]
    fn every_sequence_in_some_edtr() {
        for d in [SmartDesign::engage(false), SmartDesign::general()] {
            for s in &d.sequences {
                assert!(d.edtrs.iter().any(|e| e.responder_sequence == s.id || e.nonresponder_sequence == s.id));
            }
            for l in 1..=d.l() {
                let (r, nr) = d.sequences_for_edtr(l).unwrap();
                assert_eq!(r.a1, nr.a1);
                assert!(r.responder && !nr.responder);
            }
        }
    }

    #[test]
    fn partition_counts_free_coefficients() {
        // 17 slots in ENGAGE main effects, 6 ties.
        let p = SmartDesign::engage(false).partition();
        assert_eq!(p.n_classes, 17 - 6);
    }
}
