//! Scenarios, velocity distributions and Poisson arrivals.
//!
//! Units are SI throughout: meters, seconds, bits. Velocities are signed;
//! positive speeds travel from the segment entrance at `x = 0` towards
//! `x = d`, negative speeds enter at `x = d` and travel back.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOLERANCE: f64 = 1e-12;
const DENSITY_NORM_TOLERANCE: f64 = 1e-6;
const QUADRATURE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityClass {
    pub v: f64,
    pub p: f64,
}

/// Finite set of signed speeds with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteVelocityDist {
    classes: Vec<VelocityClass>,
    cdf: Vec<f64>,
}

impl DiscreteVelocityDist {
    pub fn new(classes: Vec<VelocityClass>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("velocity distribution needs at least one class"));
        }
        for (m, c) in classes.iter().enumerate() {
            if !c.v.is_finite() || c.v == 0.0 {
                return Err(Error::invalid(format!("class {m}: speed must be finite and nonzero")));
            }
            if !(0.0..=1.0).contains(&c.p) {
                return Err(Error::invalid(format!("class {m}: probability {} outside [0,1]", c.p)));
            }
            if classes[..m].iter().any(|o| o.v == c.v) {
                return Err(Error::invalid(format!("class {m}: duplicate speed {}", c.v)));
            }
        }
        let total: f64 = classes.iter().map(|c| c.p).sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::invalid(format!("class probabilities sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let cdf = classes
            .iter()
            .map(|c| {
                acc += c.p;
                acc
            })
            .collect();
        Ok(Self { classes, cdf })
    }

    /// Equal probability on every speed.
    pub fn equiprobable(speeds: &[f64]) -> Result<Self> {
        let p = 1.0 / speeds.len().max(1) as f64;
        Self::new(speeds.iter().map(|&v| VelocityClass { v, p }).collect())
    }

    pub fn classes(&self) -> &[VelocityClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_of(&self, v: f64) -> Option<usize> {
        self.classes.iter().position(|c| c.v == v)
    }

    pub fn sample_class<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.classes.len() - 1)
    }

    fn map_speeds(&self, f: impl Fn(f64) -> f64) -> Self {
        let classes: Vec<_> = self
            .classes
            .iter()
            .map(|c| VelocityClass { v: f(c.v), p: c.p })
            .collect();
        Self {
            classes,
            cdf: self.cdf.clone(),
        }
    }
}

type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum DensityShape {
    Uniform,
    /// `bound` dominates the density on the support; used for rejection sampling.
    Custom {
        f: DensityFn,
        bound: f64,
    },
}

/// Speed density `f` on a support `[a, b]` that excludes zero, so every
/// vehicle drawn from it travels in the same direction.
#[derive(Clone)]
pub struct ContinuousVelocityDist {
    a: f64,
    b: f64,
    shape: DensityShape,
}

impl fmt::Debug for ContinuousVelocityDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.shape {
            DensityShape::Uniform => "uniform",
            DensityShape::Custom { .. } => "custom",
        };
        f.debug_struct("ContinuousVelocityDist")
            .field("kind", &kind)
            .field("a", &self.a)
            .field("b", &self.b)
            .finish()
    }
}

fn check_support(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::invalid(format!("support [{a}, {b}] must be finite with a < b")));
    }
    if a <= 0.0 && b >= 0.0 {
        return Err(Error::invalid(format!("support [{a}, {b}] must exclude zero")));
    }
    Ok(())
}

impl ContinuousVelocityDist {
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        check_support(a, b)?;
        Ok(Self {
            a,
            b,
            shape: DensityShape::Uniform,
        })
    }

    /// Arbitrary density on `[a, b]`. `bound` must satisfy `f(v) <= bound` on
    /// the support. Rejects densities that go negative on a 1001-point grid or
    /// whose integral is off from 1 by more than 1e-6.
    pub fn from_density<F>(a: f64, b: f64, bound: f64, f: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_support(a, b)?;
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::invalid("density bound must be positive and finite"));
        }
        for i in 0..=1000 {
            let v = a + (b - a) * i as f64 / 1000.0;
            let fv = f(v);
            if !(fv >= 0.0) || fv > bound * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "density value {fv} at v = {v} outside [0, {bound}]"
                )));
            }
        }
        let dist = Self {
            a,
            b,
            shape: DensityShape::Custom { f: Arc::new(f), bound },
        };
        let mass = integrate(|v| dist.pdf(v), a, b)?;
        if (mass - 1.0).abs() > DENSITY_NORM_TOLERANCE {
            return Err(Error::invalid(format!("density integrates to {mass}, not 1")));
        }
        Ok(dist)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn is_forward(&self) -> bool {
        self.a > 0.0
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.shape, DensityShape::Uniform)
    }

    pub fn pdf(&self, v: f64) -> f64 {
        if v < self.a || v > self.b {
            return 0.0;
        }
        match &self.shape {
            DensityShape::Uniform => 1.0 / (self.b - self.a),
            DensityShape::Custom { f, .. } => f(v),
        }
    }

    /// Smallest speed magnitude on the support.
    pub fn min_abs_speed(&self) -> f64 {
        self.a.abs().min(self.b.abs())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.shape {
            DensityShape::Uniform => rng.random_range(self.a..self.b),
            DensityShape::Custom { f, bound } => loop {
                let v = rng.random_range(self.a..self.b);
                if rng.random::<f64>() * bound <= f(v) {
                    break v;
                }
            },
        }
    }

    /// The same density reflected through zero.
    pub fn mirrored(&self) -> Self {
        let shape = match &self.shape {
            DensityShape::Uniform => DensityShape::Uniform,
            DensityShape::Custom { f, bound } => {
                let f = Arc::clone(f);
                DensityShape::Custom {
                    f: Arc::new(move |v| f(-v)),
                    bound: *bound,
                }
            }
        };
        Self {
            a: -self.b,
            b: -self.a,
            shape,
        }
    }

    /// The density of `factor * V` for `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        let shape = match &self.shape {
            DensityShape::Uniform => DensityShape::Uniform,
            DensityShape::Custom { f, bound } => {
                let f = Arc::clone(f);
                DensityShape::Custom {
                    f: Arc::new(move |v| f(v / factor) / factor),
                    bound: *bound / factor,
                }
            }
        };
        Self {
            a: self.a * factor,
            b: self.b * factor,
            shape,
        }
    }
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    let out = quadrature::integrate(f, a, b, QUADRATURE_TOLERANCE);
    if !out.integral.is_finite() || out.error_estimate > QUADRATURE_TOLERANCE {
        return Err(Error::Numerical(format!(
            "quadrature on [{a}, {b}] did not converge: integral {}, error estimate {:e} after {} evaluations",
            out.integral, out.error_estimate, out.num_function_evaluations
        )));
    }
    Ok(out.integral)
}

/// `E[1/|V|]` for a single-direction density. The uniform family uses its
/// closed form; everything else goes through adaptive quadrature at 1e-9.
pub fn mean_inverse_speed(dist: &ContinuousVelocityDist) -> Result<f64> {
    let (lo, hi) = (dist.min_abs_speed(), dist.a.abs().max(dist.b.abs()));
    match dist.shape {
        DensityShape::Uniform => Ok(((hi - lo) / lo).ln_1p() / (hi - lo)),
        DensityShape::Custom { .. } => {
            let mass = integrate(|v| dist.pdf(v), dist.a, dist.b)?;
            if (mass - 1.0).abs() > DENSITY_NORM_TOLERANCE {
                return Err(Error::invalid(format!("density integrates to {mass}, not 1")));
            }
            integrate(|v| dist.pdf(v) / v.abs(), dist.a, dist.b)
        }
    }
}

/// Weighted mixture of single-direction densities, e.g. forward and reverse
/// traffic with a direction split.
#[derive(Debug, Clone)]
pub struct ContinuousMixture {
    parts: Vec<(f64, ContinuousVelocityDist)>,
}

impl ContinuousMixture {
    pub fn new(parts: Vec<(f64, ContinuousVelocityDist)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if parts.iter().any(|(w, _)| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("mixture weights must lie in [0,1]"));
        }
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { parts })
    }

    pub fn single(dist: ContinuousVelocityDist) -> Self {
        Self {
            parts: vec![(1.0, dist)],
        }
    }

    /// Forward traffic uniform on `[a, b]` with weight `forward`, reverse
    /// traffic uniform on `[-b, -a]` with the rest.
    pub fn uniform_bidirectional(a: f64, b: f64, forward: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&forward) {
            return Err(Error::invalid(format!("direction split {forward} outside [0,1]")));
        }
        if a <= 0.0 {
            return Err(Error::invalid("uniform family takes a positive speed range a < b"));
        }
        let fwd = ContinuousVelocityDist::uniform(a, b)?;
        let rev = fwd.mirrored();
        let parts = [(forward, fwd), (1.0 - forward, rev)]
            .into_iter()
            .filter(|(w, _)| *w > 0.0)
            .collect();
        Self::new(parts)
    }

    pub fn parts(&self) -> &[(f64, ContinuousVelocityDist)] {
        &self.parts
    }

    pub fn mean_inverse_speed(&self) -> Result<f64> {
        self.parts.iter().map(|(w, d)| Ok(w * mean_inverse_speed(d)?)).sum()
    }

    pub fn min_abs_speed(&self) -> f64 {
        self.parts
            .iter()
            .map(|(_, d)| d.min_abs_speed())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut u: f64 = rng.random();
        for (w, d) in &self.parts {
            if u < *w {
                return d.sample(rng);
            }
            u -= w;
        }
        self.parts[self.parts.len() - 1].1.sample(rng)
    }
}

#[derive(Debug, Clone)]
pub enum VelocityDist {
    Discrete(DiscreteVelocityDist),
    Continuous(ContinuousMixture),
}

impl VelocityDist {
    pub fn min_abs_speed(&self) -> f64 {
        match self {
            Self::Discrete(d) => d.classes().iter().map(|c| c.v.abs()).fold(f64::INFINITY, f64::min),
            Self::Continuous(m) => m.min_abs_speed(),
        }
    }

    /// Draws a speed and, for discrete distributions, its class index.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, Option<usize>) {
        match self {
            Self::Discrete(d) => {
                let m = d.sample_class(rng);
                (d.classes()[m].v, Some(m))
            }
            Self::Continuous(m) => (m.sample(rng), None),
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        match self {
            Self::Discrete(d) => Self::Discrete(d.map_speeds(|v| v * factor)),
            Self::Continuous(m) => Self::Continuous(ContinuousMixture {
                parts: m.parts.iter().map(|(w, d)| (*w, d.scaled(factor))).collect(),
            }),
        }
    }

    fn mirrored(&self) -> Self {
        match self {
            Self::Discrete(d) => Self::Discrete(d.map_speeds(|v| -v)),
            Self::Continuous(m) => Self::Continuous(ContinuousMixture {
                parts: m.parts.iter().map(|(w, d)| (*w, d.mirrored())).collect(),
            }),
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone)]
pub struct Scenario {
    lambda: f64,
    d: f64,
    r: f64,
    bit_rate: f64,
    packet_bits: f64,
    velocity: VelocityDist,
    seed: u64,
}

impl Scenario {
    pub fn new(
        lambda: f64,
        d: f64,
        r: f64,
        bit_rate: f64,
        packet_bits: f64,
        velocity: VelocityDist,
        seed: u64,
    ) -> Result<Self> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite, got {x}")))
            }
        };
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0 and finite, got {lambda}")));
        }
        positive("d", d)?;
        positive("r", r)?;
        positive("bit_rate", bit_rate)?;
        positive("packet_bits", packet_bits)?;
        if r > d / 10.0 {
            log::warn!("transmit range r = {r} m is not small against segment length d = {d} m");
        }
        Ok(Self {
            lambda,
            d,
            r,
            bit_rate,
            packet_bits,
            velocity,
            seed,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn segment_length(&self) -> f64 {
        self.d
    }

    pub fn range(&self) -> f64 {
        self.r
    }

    pub fn bit_rate(&self) -> f64 {
        self.bit_rate
    }

    pub fn packet_bits(&self) -> f64 {
        self.packet_bits
    }

    /// Packets per second, `R_b / P`.
    pub fn packet_rate(&self) -> f64 {
        self.bit_rate / self.packet_bits
    }

    pub fn velocity(&self) -> &VelocityDist {
        &self.velocity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn discrete(&self) -> Option<&DiscreteVelocityDist> {
        match &self.velocity {
            VelocityDist::Discrete(d) => Some(d),
            VelocityDist::Continuous(_) => None,
        }
    }

    pub fn continuous(&self) -> Option<&ContinuousMixture> {
        match &self.velocity {
            VelocityDist::Continuous(m) => Some(m),
            VelocityDist::Discrete(_) => None,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let mut s = self.clone();
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0 and finite, got {lambda}")));
        }
        s.lambda = lambda;
        Ok(s)
    }

    pub fn with_packet_rate_scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::invalid("rate factor must be positive"));
        }
        let mut s = self.clone();
        s.bit_rate *= factor;
        Ok(s)
    }

    /// Every speed multiplied by `factor > 0`.
    pub fn with_speeds_scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::invalid("speed factor must be positive"));
        }
        let mut s = self.clone();
        s.velocity = self.velocity.scaled(factor);
        Ok(s)
    }

    /// The same traffic seen from the other end of the segment: every
    /// velocity negated. A reverse observer in `self` is a forward observer
    /// in the mirror.
    pub fn mirrored(&self) -> Self {
        let mut s = self.clone();
        s.velocity = self.velocity.mirrored();
        s
    }

    /// Longest time any vehicle spends on the segment.
    pub fn max_travel_time(&self) -> f64 {
        self.d / self.velocity.min_abs_speed()
    }
}

/// Per-class travel time and density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedClassQuantities {
    /// Signed travel time `d / v` in seconds.
    pub t: f64,
    /// Vehicles per meter, `lambda p / |v|`.
    pub rho: f64,
}

pub fn class_quantities(scenario: &Scenario, m: usize) -> Result<DerivedClassQuantities> {
    let dist = scenario
        .discrete()
        .ok_or_else(|| Error::invalid("class quantities need a discrete velocity distribution"))?;
    let c = dist
        .classes()
        .get(m)
        .ok_or_else(|| Error::invalid(format!("class index {m} out of range (M = {})", dist.len())))?;
    Ok(DerivedClassQuantities {
        t: scenario.d / c.v,
        rho: scenario.lambda * c.p / c.v.abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalRecord {
    /// When the vehicle enters the segment (at `x = 0` for forward traffic,
    /// `x = d` for reverse traffic).
    pub entry_time: f64,
    pub v: f64,
    pub class_index: Option<usize>,
}

/// Homogeneous Poisson arrivals of rate lambda on `[t_start, t_end)`, each
/// with an independent velocity draw. Sorted by entry time.
pub fn generate_arrivals<R: Rng + ?Sized>(scenario: &Scenario, window: (f64, f64), rng: &mut R) -> Vec<ArrivalRecord> {
    let (start, end) = window;
    let mut out = Vec::new();
    if !(start < end) || scenario.lambda == 0.0 {
        return out;
    }
    let gap = Exp::new(scenario.lambda).expect("lambda validated positive");
    let mut t = start;
    loop {
        t += gap.sample(rng);
        if t >= end {
            break;
        }
        let (v, class_index) = scenario.velocity.sample(rng);
        out.push(ArrivalRecord {
            entry_time: t,
            v,
            class_index,
        });
    }
    out
}
