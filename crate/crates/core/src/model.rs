//! Domain types for the Bradley-Terry-Luce model: parameter vectors, comparison
//! data, observation designs, ground-truth families and synthetic sampling.
//!
//! Item indices are zero-based throughout. Square matrices are stored
//! row-major in flat vectors, `m[i * d + j]`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `|sum(theta)|` for a vector to count as centered.
pub const CENTERING_TOL: f64 = 1e-9;

/// Exponent clamp used by [`btl_probability`]; keeps `exp` finite and the
/// result strictly inside `(0, 1)`.
const LOGISTIC_CLAMP: f64 = 36.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("parameter vector has a non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("parameter vector is not centered (sum = {0:e})")]
    NotCentered(f64),
    #[error("parameter vector has sup-norm {norm} > bound {bound}")]
    OutOfBox { norm: f64, bound: f64 },
    #[error("bound must be positive and finite, got {0}")]
    InvalidBound(f64),
    #[error("bipolar family requires an even number of items, got {0}")]
    OddBipolar(usize),
    #[error("custom parameter vector has {got} entries, expected {expected}")]
    CustomLength { expected: usize, got: usize },
    #[error("invalid observation design: {0}")]
    InvalidDesign(String),
    #[error("invalid comparison data: {0}")]
    InvalidData(String),
    #[error("invalid win-fraction matrix: {0}")]
    InvalidFractions(String),
    #[error("unknown parameter family `{0}`")]
    UnknownFamily(String),
}

/// Probability that an item with score `theta_i` beats one with `theta_j`.
pub fn btl_probability(theta_i: f64, theta_j: f64) -> f64 {
    logistic(theta_i - theta_j)
}

/// `1 / (1 + exp(-x))` with the exponent clamped to `[-36, 36]`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    let x = x.clamp(-LOGISTIC_CLAMP, LOGISTIC_CLAMP);
    1.0 / (1.0 + (-x).exp())
}

/// Centered, finite quality scores for `d >= 2` items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() < 2 {
            return Err(ModelError::TooFewItems(values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
        let sum: f64 = values.iter().sum();
        if sum.abs() > CENTERING_TOL {
            return Err(ModelError::NotCentered(sum));
        }
        Ok(Self(values))
    }

    /// Subtracts the mean, then validates.
    pub fn centered(mut values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::TooFewItems(0));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.iter_mut().for_each(|v| *v -= mean);
        Self::new(values)
    }

    pub fn zeros(d: usize) -> Result<Self, ModelError> {
        Self::new(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.0)
    }

    pub fn is_within(&self, domain: &BoundedDomain, tol: f64) -> bool {
        self.len() == domain.d() && self.sup_norm() <= domain.bound() + tol
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = ModelError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for ParameterVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// The set `{theta : ||theta||_inf <= bound, sum(theta) = 0}` in `d` dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedDomain {
    bound: f64,
    d: usize,
}

impl BoundedDomain {
    pub fn new(bound: f64, d: usize) -> Result<Self, ModelError> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(ModelError::InvalidBound(bound));
        }
        if d < 2 {
            return Err(ModelError::TooFewItems(d));
        }
        Ok(Self { bound, d })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn d(&self) -> usize {
        self.d
    }
}

/// Observed pairwise outcomes: `wins[i][j]` is how often `i` beat `j`, and
/// `counts[i][j]` how often the two met.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ComparisonDataWire", into = "ComparisonDataWire")]
pub struct ComparisonData {
    d: usize,
    wins: Vec<u32>,
    counts: Vec<u32>,
}

impl ComparisonData {
    /// Builds from flat row-major `d x d` matrices and checks consistency.
    pub fn new(d: usize, wins: Vec<u32>, counts: Vec<u32>) -> Result<Self, ModelError> {
        if d < 1 {
            return Err(ModelError::InvalidData("d must be at least 1".into()));
        }
        if wins.len() != d * d || counts.len() != d * d {
            return Err(ModelError::InvalidData(format!(
                "expected {} matrix entries, got wins={} counts={}",
                d * d,
                wins.len(),
                counts.len()
            )));
        }
        for i in 0..d {
            if counts[i * d + i] != 0 || wins[i * d + i] != 0 {
                return Err(ModelError::InvalidData(format!("nonzero diagonal at item {i}")));
            }
            for j in (i + 1)..d {
                let (c, cji) = (counts[i * d + j], counts[j * d + i]);
                if c != cji {
                    return Err(ModelError::InvalidData(format!(
                        "counts not symmetric at ({i}, {j})"
                    )));
                }
                let (wij, wji) = (wins[i * d + j], wins[j * d + i]);
                if u64::from(wij) + u64::from(wji) != u64::from(c) {
                    return Err(ModelError::InvalidData(format!(
                        "wins at ({i}, {j}) do not add up to count {c}"
                    )));
                }
            }
        }
        Ok(Self { d, wins, counts })
    }

    /// Builds from `(i, j, count, wins_i)` records; pairs not listed are unobserved.
    pub fn from_pairs(
        d: usize,
        pairs: impl IntoIterator<Item = (usize, usize, u32, u32)>,
    ) -> Result<Self, ModelError> {
        let mut wins = vec![0; d * d];
        let mut counts = vec![0; d * d];
        for (i, j, count, wins_i) in pairs {
            if i >= d || j >= d || i == j {
                return Err(ModelError::InvalidData(format!("bad pair ({i}, {j}) for d={d}")));
            }
            if wins_i > count {
                return Err(ModelError::InvalidData(format!(
                    "pair ({i}, {j}) has wins {wins_i} > count {count}"
                )));
            }
            if counts[i * d + j] != 0 {
                return Err(ModelError::InvalidData(format!("pair ({i}, {j}) listed twice")));
            }
            counts[i * d + j] = count;
            counts[j * d + i] = count;
            wins[i * d + j] = wins_i;
            wins[j * d + i] = count - wins_i;
        }
        Self::new(d, wins, counts)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn wins(&self, i: usize, j: usize) -> u32 {
        self.wins[i * self.d + j]
    }

    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.d + j]
    }

    /// Observed pairs `(i, j)` with `i < j`, in lexicographic order.
    pub fn observed_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let d = self.d;
        (0..d)
            .flat_map(move |i| ((i + 1)..d).map(move |j| (i, j)))
            .filter(move |&(i, j)| self.counts[i * d + j] > 0)
    }

    /// `Some(k)` when every pair was compared exactly `k > 0` times.
    pub fn league_count(&self) -> Option<u32> {
        let d = self.d;
        let k = if d >= 2 { self.counts[1] } else { return None };
        if k == 0 {
            return None;
        }
        let all = (0..d).all(|i| ((i + 1)..d).all(|j| self.counts[i * d + j] == k));
        all.then_some(k)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComparisonDataWire {
    d: usize,
    pairs: Vec<PairRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    i: usize,
    j: usize,
    count: u32,
    wins_i: u32,
}

impl TryFrom<ComparisonDataWire> for ComparisonData {
    type Error = ModelError;

    fn try_from(w: ComparisonDataWire) -> Result<Self, Self::Error> {
        if let Some(p) = w.pairs.iter().find(|p| p.i >= p.j) {
            return Err(ModelError::InvalidData(format!(
                "pair records need i < j, got ({}, {})",
                p.i, p.j
            )));
        }
        ComparisonData::from_pairs(
            w.d,
            w.pairs.into_iter().map(|p| (p.i, p.j, p.count, p.wins_i)),
        )
    }
}

impl From<ComparisonData> for ComparisonDataWire {
    fn from(data: ComparisonData) -> Self {
        let pairs = data
            .observed_pairs()
            .map(|(i, j)| PairRecord {
                i,
                j,
                count: data.count(i, j),
                wins_i: data.wins(i, j),
            })
            .collect();
        Self { d: data.d, pairs }
    }
}

/// Empirical win fractions `mu[i][j]` together with the per-pair comparison
/// weight `k_ij` (zero for unobserved pairs).
#[derive(Debug, Clone, PartialEq)]
pub struct WinFractionMatrix {
    d: usize,
    mu: Vec<f64>,
    weight: Vec<f64>,
}

impl WinFractionMatrix {
    pub fn new(d: usize, mu: Vec<f64>, weight: Vec<f64>) -> Result<Self, ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidFractions(msg));
        if mu.len() != d * d || weight.len() != d * d {
            return bad(format!("expected {} entries", d * d));
        }
        for i in 0..d {
            if weight[i * d + i] != 0.0 {
                return bad(format!("nonzero diagonal weight at {i}"));
            }
            for j in (i + 1)..d {
                let (w, wt) = (weight[i * d + j], weight[j * d + i]);
                if !(w.is_finite() && w >= 0.0) || w != wt {
                    return bad(format!("weights at ({i}, {j}) must be symmetric and >= 0"));
                }
                if w == 0.0 {
                    continue;
                }
                let (a, b) = (mu[i * d + j], mu[j * d + i]);
                if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                    return bad(format!("fraction at ({i}, {j}) outside [0, 1]"));
                }
                if (a + b - 1.0).abs() > 1e-12 {
                    return bad(format!("mu[{i}][{j}] + mu[{j}][{i}] != 1"));
                }
            }
        }
        Ok(Self { d, mu, weight })
    }

    /// Every pair observed `k` times with `mu[i][j] = upper(i, j)` for `i < j`.
    pub fn league(d: usize, k: f64, mut upper: impl FnMut(usize, usize) -> f64) -> Result<Self, ModelError> {
        let mut mu = vec![0.0; d * d];
        let mut weight = vec![0.0; d * d];
        for i in 0..d {
            for j in (i + 1)..d {
                let m = upper(i, j);
                mu[i * d + j] = m;
                mu[j * d + i] = 1.0 - m;
                weight[i * d + j] = k;
                weight[j * d + i] = k;
            }
        }
        Self::new(d, mu, weight)
    }

    /// Two items where item 0 beat item 1 a fraction `mu` of `k` comparisons.
    pub fn two_items(mu: f64, k: f64) -> Result<Self, ModelError> {
        Self::league(2, k, |_, _| mu)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mu(&self, i: usize, j: usize) -> f64 {
        self.mu[i * self.d + j]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weight[i * self.d + j]
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.weight(i, j) > 0.0
    }

    /// Largest per-pair weight; the natural scale of the gradient.
    pub fn max_weight(&self) -> f64 {
        self.weight.iter().copied().fold(0.0, f64::max)
    }

    /// Observed `(i, j, mu_ij, k_ij)` with `i < j`.
    pub fn observed(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        let d = self.d;
        (0..d)
            .flat_map(move |i| ((i + 1)..d).map(move |j| (i, j)))
            .filter(move |&(i, j)| self.weight[i * d + j] > 0.0)
            .map(move |(i, j)| (i, j, self.mu[i * d + j], self.weight[i * d + j]))
    }
}

/// Fractions of wins on observed pairs; unobserved pairs carry zero weight.
pub fn win_fractions(data: &ComparisonData) -> WinFractionMatrix {
    let d = data.d;
    let mut mu = vec![0.0; d * d];
    let mut weight = vec![0.0; d * d];
    for (i, j) in data.observed_pairs() {
        let c = f64::from(data.count(i, j));
        let w = f64::from(data.wins(i, j));
        mu[i * d + j] = w / c;
        mu[j * d + i] = f64::from(data.wins(j, i)) / c;
        weight[i * d + j] = c;
        weight[j * d + i] = c;
    }
    WinFractionMatrix { d, mu, weight }
}

/// How comparisons are scheduled between pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationDesign {
    /// Every pair compared `k` times.
    League { k: u32 },
    /// Each pair independently observed with probability `p_obs`, then compared `k` times.
    Random { k: u32, p_obs: f64 },
}

impl ObservationDesign {
    pub fn league(k: u32) -> Result<Self, ModelError> {
        let design = Self::League { k };
        design.validate()?;
        Ok(design)
    }

    pub fn random(k: u32, p_obs: f64) -> Result<Self, ModelError> {
        let design = Self::Random { k, p_obs };
        design.validate()?;
        Ok(design)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k() < 1 {
            return Err(ModelError::InvalidDesign("k must be at least 1".into()));
        }
        if let Self::Random { p_obs, .. } = *self {
            if !(p_obs > 0.0 && p_obs < 1.0) {
                return Err(ModelError::InvalidDesign(format!("p_obs must lie in (0, 1), got {p_obs}")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> u32 {
        match *self {
            Self::League { k } | Self::Random { k, .. } => k,
        }
    }

    pub fn p_obs(&self) -> Option<f64> {
        match *self {
            Self::League { .. } => None,
            Self::Random { p_obs, .. } => Some(p_obs),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Self::Random { .. })
    }
}

/// Ground-truth parameter shapes used in the simulation studies.
#[derive(Debug, Clone, PartialEq)]
pub enum ParameterFamily {
    /// `[B, -B/(d-1), ..., -B/(d-1)]`.
    WorstCase,
    /// Worst case scaled to `B/2`.
    WorstCaseHalf,
    /// First half `+B`, second half `-B`.
    Bipolar,
    /// Equally spaced on `[-B, B]`, endpoints included.
    Linear,
    AllZeros,
    Custom(Vec<f64>),
}

impl ParameterFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::WorstCase => "worst_case",
            Self::WorstCaseHalf => "worst_case_half",
            Self::Bipolar => "bipolar",
            Self::Linear => "linear",
            Self::AllZeros => "all_zeros",
            Self::Custom(_) => "custom",
        }
    }

    pub const NAMED: [ParameterFamily; 5] = [
        Self::WorstCase,
        Self::WorstCaseHalf,
        Self::Bipolar,
        Self::Linear,
        Self::AllZeros,
    ];
}

impl fmt::Display for ParameterFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParameterFamily {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::NAMED
            .iter()
            .find(|f| f.name() == s)
            .cloned()
            .ok_or_else(|| ModelError::UnknownFamily(s.to_string()))
    }
}

/// A parameter family together with the box half-width `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParameterFamily {
    pub family: ParameterFamily,
    pub bound: f64,
}

impl TrueParameterFamily {
    pub fn new(family: ParameterFamily, bound: f64) -> Self {
        Self { family, bound }
    }
}

/// Generates the ground-truth vector of `spec.family` for `d` items; the
/// result always lies in the box of half-width `spec.bound`.
pub fn make_true_params(spec: &TrueParameterFamily, d: usize) -> Result<ParameterVector, ModelError> {
    let domain = BoundedDomain::new(spec.bound, d)?;
    let b = domain.bound();
    let worst = |top: f64| {
        let rest = -top / (d - 1) as f64;
        std::iter::once(top).chain(std::iter::repeat_n(rest, d - 1)).collect::<Vec<_>>()
    };
    let values = match &spec.family {
        ParameterFamily::WorstCase => worst(b),
        ParameterFamily::WorstCaseHalf => worst(0.5 * b),
        ParameterFamily::Bipolar => {
            if !d.is_multiple_of(2) {
                return Err(ModelError::OddBipolar(d));
            }
            (0..d).map(|i| if i < d / 2 { b } else { -b }).collect()
        }
        ParameterFamily::Linear => {
            // Integer offsets 2i - (d-1) are antisymmetric, so pairs cancel exactly.
            let span = (d - 1) as f64;
            (0..d)
                .map(|i| b * ((2.0 * i as f64 - span) / span))
                .collect()
        }
        ParameterFamily::AllZeros => vec![0.0; d],
        ParameterFamily::Custom(v) => {
            if v.len() != d {
                return Err(ModelError::CustomLength { expected: d, got: v.len() });
            }
            v.clone()
        }
    };
    let theta = ParameterVector::new(values)?;
    if !theta.is_within(&domain, 0.0) {
        return Err(ModelError::OutOfBox { norm: theta.sup_norm(), bound: b });
    }
    Ok(theta)
}

/// SplitMix64 finalizer; used to derive independent substream seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of substream `index` under `master`. Depends only on the two inputs,
/// so work can be partitioned freely across threads.
pub fn substream_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Draws one synthetic data set. Pairs are visited in lexicographic order
/// from a single ChaCha8 stream seeded by `seed`.
pub fn sample_comparisons(
    theta_star: &ParameterVector,
    design: &ObservationDesign,
    seed: u64,
) -> Result<ComparisonData, ModelError> {
    design.validate()?;
    let d = theta_star.len();
    let k = design.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = vec![0; d * d];
    let mut counts = vec![0; d * d];
    for i in 0..d {
        for j in (i + 1)..d {
            if let ObservationDesign::Random { p_obs, .. } = *design {
                if !rng.random_bool(p_obs) {
                    continue;
                }
            }
            let p = btl_probability(theta_star[i], theta_star[j]);
            let w = Binomial::new(u64::from(k), p)
                .expect("logistic output is a valid probability")
                .sample(&mut rng) as u32;
            counts[i * d + j] = k;
            counts[j * d + i] = k;
            wins[i * d + j] = w;
            wins[j * d + i] = k - w;
        }
    }
    Ok(ComparisonData { d, wins, counts })
}
