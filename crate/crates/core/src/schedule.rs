//! Noise ladders, time grids and the history index sets of an AR denoising schedule.
//!
//! Ladder levels are exact rationals so that the combinatorial constraints are checked
//! without rounding; floats appear only when a sampler asks for them.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Diffusion time stored as an exact rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Level(Rational64);

impl Level {
    pub const ZERO: Level = Level(Rational64::new_raw(0, 1));

    pub fn new(numer: i64, denom: i64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::Parse("zero denominator in rational level".into()));
        }
        Ok(Level(Rational64::new(numer, denom)))
    }

    pub fn integer(v: i64) -> Self {
        Level(Rational64::from_integer(v))
    }

    pub fn ratio(&self) -> Rational64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn scale(self, numer: i64, denom: i64) -> Self {
        Level(self.0 * Rational64::new(numer, denom))
    }
}

impl std::ops::Add for Level {
    type Output = Level;
    fn add(self, rhs: Level) -> Level {
        Level(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Level {
    type Output = Level;
    fn sub(self, rhs: Level) -> Level {
        Level(self.0 - rhs.0)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl FromStr for Level {
    type Err = Error;

    /// Accepts `m/n`, integers, and terminating decimals such as `2.25`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parse(format!("invalid rational level {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            return Level::new(n, d).map_err(|_| bad());
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.is_empty() || frac.len() > 15 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let negative = int.starts_with('-');
            let int_part: i64 = if int.is_empty() || int == "-" {
                0
            } else {
                int.parse().map_err(|_| bad())?
            };
            let denom = 10i64.pow(frac.len() as u32);
            let frac_part: i64 = frac.parse().map_err(|_| bad())?;
            let magnitude = int_part.abs().checked_mul(denom).and_then(|v| v.checked_add(frac_part)).ok_or_else(bad)?;
            let numer = if negative { -magnitude } else { magnitude };
            return Level::new(numer, denom);
        }
        s.parse::<i64>().map(Level::integer).map_err(|_| bad())
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Level::integer(v)),
            // shortest round-trip decimal, read back exactly
            Raw::Float(v) => v.to_string().parse().map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Per-frame input and output noise levels of one AR denoising step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LadderFile", into = "LadderFile")]
pub struct NoiseLadder {
    w: usize,
    delta: usize,
    horizon: Level,
    input: Vec<Level>,
    output: Vec<Level>,
}

/// On-disk form of a ladder. Levels accept `"m/n"`, integers and decimals.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LadderFile {
    w: usize,
    delta: usize,
    horizon: Level,
    input_levels: Vec<Level>,
    output_levels: Vec<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pace: Option<Vec<Level>>,
}

impl TryFrom<LadderFile> for NoiseLadder {
    type Error = Error;
    fn try_from(f: LadderFile) -> Result<Self> {
        let pace = f.pace.unwrap_or_default();
        NoiseLadder::with_pace(f.w, f.delta, f.horizon, f.input_levels, f.output_levels, &pace)
    }
}

impl From<NoiseLadder> for LadderFile {
    fn from(l: NoiseLadder) -> Self {
        LadderFile {
            w: l.w,
            delta: l.delta,
            horizon: l.horizon,
            input_levels: l.input,
            output_levels: l.output,
            pace: None,
        }
    }
}

impl NoiseLadder {
    /// Checks shape and that every level lies in `[0, T]`; Requirement 1 is left to [`validate`].
    pub fn new(w: usize, delta: usize, horizon: Level, input: Vec<Level>, output: Vec<Level>) -> Result<Self> {
        if w == 0 {
            return Err(Error::Schedule("window size w must be at least 1".into()));
        }
        if delta == 0 || delta > w {
            return Err(Error::Schedule(format!("stride delta={delta} outside 1..={w}")));
        }
        if horizon <= Level::ZERO {
            return Err(Error::Schedule(format!("horizon T={horizon} must be positive")));
        }
        for (name, levels) in [("input_levels", &input), ("output_levels", &output)] {
            if levels.len() != w {
                return Err(Error::Schedule(format!("{name} has {} entries, expected w={w}", levels.len())));
            }
            if let Some((i, l)) = levels.iter().enumerate().find(|(_, l)| l.is_negative() || **l > horizon) {
                return Err(Error::Schedule(format!(
                    "RANGE {} {name}[{}]={l} outside [0, {horizon}]",
                    i + 1,
                    i + 1
                )));
            }
        }
        Ok(NoiseLadder {
            w,
            delta,
            horizon,
            input,
            output,
        })
    }

    /// Variable-pace schedules are not supported; any pace other than 1 is rejected.
    pub fn with_pace(
        w: usize,
        delta: usize,
        horizon: Level,
        input: Vec<Level>,
        output: Vec<Level>,
        pace: &[Level],
    ) -> Result<Self> {
        if let Some((i, a)) = pace.iter().enumerate().find(|(_, a)| **a != Level::integer(1)) {
            return Err(Error::Schedule(format!(
                "variable pace unsupported: pace[{}]={a}, only 1 is allowed",
                i + 1
            )));
        }
        NoiseLadder::new(w, delta, horizon, input, output)
    }

    pub fn outpaint(w: usize, horizon: Level) -> Result<Self> {
        NoiseLadder::new(w, w, horizon, vec![horizon; w], vec![Level::ZERO; w])
    }

    /// Uniformly spaced FIFO ladder, `t_i^I = iT/w`, `t_i^O = (i-1)T/w`.
    pub fn fifo(w: usize, horizon: Level) -> Result<Self> {
        if w < 2 {
            return Err(Error::Schedule("FIFO ladder needs w >= 2".into()));
        }
        NoiseLadder::block(w, 1, horizon)
    }

    /// Ladder advancing in blocks of `delta` frames: block `b` of `w/delta` sits at input level
    /// `bT/(w/delta)`. Outpainting and FIFO are the two extreme cases.
    pub fn block(w: usize, delta: usize, horizon: Level) -> Result<Self> {
        if delta == 0 || !w.is_multiple_of(delta) {
            return Err(Error::Schedule(format!("block ladder needs delta={delta} dividing w={w}")));
        }
        let blocks = (w / delta) as i64;
        let level = |i: usize| horizon.scale(i.div_ceil(delta) as i64, blocks);
        let input: Vec<Level> = (1..=w).map(level).collect();
        let output: Vec<Level> = (1..=w).map(|i| level(i) - horizon.scale(1, blocks)).collect();
        NoiseLadder::new(w, delta, horizon, input, output)
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn horizon(&self) -> Level {
        self.horizon
    }

    pub fn input_levels(&self) -> &[Level] {
        &self.input
    }

    pub fn output_levels(&self) -> &[Level] {
        &self.output
    }

    /// `t_j^I` with 1-based `j`.
    pub fn t_in(&self, j: usize) -> Level {
        self.input[j - 1]
    }

    /// `t_j^O` with 1-based `j`.
    pub fn t_out(&self, j: usize) -> Level {
        self.output[j - 1]
    }

    /// Number of frames carried from one AR step to the next.
    pub fn carried(&self) -> usize {
        self.w - self.delta
    }

    /// First-occurrence indices (1-based) of each distinct input level.
    pub fn first_occurrences(&self) -> Vec<usize> {
        let mut seen = BTreeSet::new();
        (1..=self.w).filter(|&j| seen.insert(self.t_in(j))).collect()
    }

    /// Copy with one level replaced (1-based `j`); the range check still applies.
    pub fn with_level(&self, input_side: bool, j: usize, level: Level) -> Result<Self> {
        let mut input = self.input.clone();
        let mut output = self.output.clone();
        if input_side {
            input[j - 1] = level;
        } else {
            output[j - 1] = level;
        }
        NoiseLadder::new(self.w, self.delta, self.horizon, input, output)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Clause {
    Monotonicity,
    Boundary,
    Circularity,
    ConstantPace,
}

impl Clause {
    pub fn name(self) -> &'static str {
        match self {
            Clause::Monotonicity => "MONOTONICITY",
            Clause::Boundary => "BOUNDARY",
            Clause::Circularity => "CIRCULARITY",
            Clause::ConstantPace => "CONSTANT_PACE",
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub clause: Clause,
    /// 1-based frame position inside the window.
    pub index: usize,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.clause, self.index, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    /// Causality depends on the reference policy and is checked where references are emitted.
    pub const CAUSALITY: &'static str = "CAUSALITY not checked here (enforced by the reference policy)";

    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn clauses(&self) -> BTreeSet<Clause> {
        self.violations.iter().map(|v| v.clause).collect()
    }
}

pub fn validate(ladder: &NoiseLadder) -> ValidationReport {
    let w = ladder.w;
    let delta = ladder.delta;
    let t = ladder.horizon;
    let mut violations = Vec::new();
    let mut push = |clause, index, detail: String| violations.push(Violation { clause, index, detail });

    for i in 2..=w {
        if ladder.t_in(i - 1) > ladder.t_in(i) {
            push(
                Clause::Monotonicity,
                i,
                format!("input t_{}={} > t_{}={}", i - 1, ladder.t_in(i - 1), i, ladder.t_in(i)),
            );
        }
        if ladder.t_out(i - 1) > ladder.t_out(i) {
            push(
                Clause::Monotonicity,
                i,
                format!("output t_{}={} > t_{}={}", i - 1, ladder.t_out(i - 1), i, ladder.t_out(i)),
            );
        }
    }
    for i in 1..=w {
        if ladder.t_out(i) >= ladder.t_in(i) {
            push(
                Clause::Monotonicity,
                i,
                format!("output {} not below input {}", ladder.t_out(i), ladder.t_in(i)),
            );
        }
    }
    for i in (w - delta + 1)..=w {
        if ladder.t_in(i) != t {
            push(Clause::Boundary, i, format!("input {} should equal T={t}", ladder.t_in(i)));
        }
    }
    for i in 1..=delta {
        if !ladder.t_out(i).is_zero() {
            push(Clause::Boundary, i, format!("output {} should be 0", ladder.t_out(i)));
        }
    }
    for i in 1..=(w - delta) {
        if ladder.t_in(i) != ladder.t_out(delta + i) {
            push(
                Clause::Circularity,
                i,
                format!("input {} differs from output t_{}={}", ladder.t_in(i), delta + i, ladder.t_out(delta + i)),
            );
        }
    }
    let pace = ladder.t_out(1) - ladder.t_in(1);
    for i in 2..=w {
        let p = ladder.t_out(i) - ladder.t_in(i);
        if p != pace {
            push(Clause::ConstantPace, i, format!("gap {p} differs from gap {pace} at i=1"));
        }
    }
    ValidationReport { violations }
}

/// `t̄(t)_i = t + t_i^I - t_1^I`.
pub fn extended_time(ladder: &NoiseLadder, t: f64) -> Vec<f64> {
    let base = ladder.t_in(1);
    (1..=ladder.w).map(|i| t + (ladder.t_in(i) - base).to_f64()).collect()
}

pub fn extended_time_exact(ladder: &NoiseLadder, t: Level) -> Vec<Level> {
    let base = ladder.t_in(1);
    (1..=ladder.w).map(|i| t + (ladder.t_in(i) - base)).collect()
}

/// Strictly increasing discretization `t_0 < … < t_M` of an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(points: Vec<f64>) -> Result<Self> {
        TimeGrid::new(points)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Vec<f64> {
        g.points
    }
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Schedule("time grid needs at least two points".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Schedule("time grid has a non-finite point".into()));
        }
        if let Some(i) = points.windows(2).position(|p| p[0] >= p[1]) {
            return Err(Error::Schedule(format!("time grid not strictly increasing at point {}", i + 1)));
        }
        Ok(TimeGrid { points })
    }

    pub fn uniform(a: f64, b: f64, steps: usize) -> Result<Self> {
        if a.is_nan() || b.is_nan() || a >= b || steps == 0 {
            return Err(Error::Schedule(format!("uniform grid needs a < b and M >= 1 (a={a}, b={b}, M={steps})")));
        }
        let mut points: Vec<f64> = (0..=steps).map(|n| a + (b - a) * n as f64 / steps as f64).collect();
        points[0] = a;
        points[steps] = b;
        TimeGrid::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn sum_sq_increments(&self) -> f64 {
        self.points.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum()
    }
}

/// (frame, level) pair; frames are 1-based.
pub type Coord = (usize, Level);

/// `H(i)`: every variable already generated before the window starting after frame `i`.
pub fn history_set(ladder: &NoiseLadder, i: usize) -> BTreeSet<Coord> {
    let mut h = BTreeSet::new();
    if i < ladder.delta {
        return h;
    }
    for m in 1..=i {
        h.insert((m, Level::ZERO));
    }
    for j in ladder.first_occurrences() {
        let level = ladder.t_in(j);
        for m in 1..=(i + j - 1) {
            h.insert((m, level));
        }
    }
    h
}

/// `G(i) = H(i) ∪ {(i+j, t_j^I)} ∪ {(i+j, t_j^O)}`.
pub fn generated_set(ladder: &NoiseLadder, i: usize) -> BTreeSet<Coord> {
    let mut g = history_set(ladder, i);
    for j in 1..=ladder.w {
        g.insert((i + j, ladder.t_in(j)));
        g.insert((i + j, ladder.t_out(j)));
    }
    g
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepIndexSets {
    pub output: Vec<Coord>,
    pub input: Vec<Coord>,
    pub past: Vec<Coord>,
}

/// Output, input and past coordinates of the window covering frames `kΔ+1 ..= kΔ+w`.
/// `refs` are clean reference frames; they move from the past into the input.
pub fn step_index_sets(ladder: &NoiseLadder, k: usize, refs: &[usize]) -> Result<StepIndexSets> {
    let i = k * ladder.delta;
    if let Some(&frame) = refs.iter().find(|&&r| r == 0 || r > i) {
        return Err(Error::Causality { frame, limit: i });
    }
    let refs: BTreeSet<usize> = refs.iter().copied().collect();
    let output = (1..=ladder.w).map(|j| (i + j, ladder.t_out(j))).collect();
    let mut input: Vec<Coord> = refs.iter().map(|&r| (r, Level::ZERO)).collect();
    input.extend((1..=ladder.w).map(|j| (i + j, ladder.t_in(j))));
    let past = history_set(ladder, i)
        .into_iter()
        .filter(|(m, l)| !(l.is_zero() && refs.contains(m)))
        .collect();
    Ok(StepIndexSets { output, input, past })
}

/// Checks `G((k-1)Δ) = H(kΔ) ∪ {(kΔ+j, t_j^I)}_{j ≤ w-Δ}` by exact set comparison.
pub fn verify_hg_identity(ladder: &NoiseLadder, k: usize) -> bool {
    if k == 0 {
        return false;
    }
    let i = k * ladder.delta;
    let lhs = generated_set(ladder, i - ladder.delta);
    let mut rhs = history_set(ladder, i);
    for j in 1..=ladder.carried() {
        rhs.insert((i + j, ladder.t_in(j)));
    }
    lhs == rhs
}
