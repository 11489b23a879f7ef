//! Closed-form expectations of encounter counts, packet counts and throughput.

use crate::codec::{packets_needed, CodingScheme, FileSpec};
use crate::error::{Error, Result};
use crate::traffic::{class_quantities, DiscreteVelocityDist, Scenario};

const DUAL_FORM_TOLERANCE: f64 = 1e-12;
/// Agreement required between the two continuous forms; both rest on the
/// same quadrature, so this only guards the algebra.
const CONTINUOUS_FORM_TOLERANCE: f64 = 1e-9;

fn discrete(scenario: &Scenario) -> Result<&DiscreteVelocityDist> {
    scenario
        .discrete()
        .ok_or_else(|| Error::invalid("operation needs a discrete velocity distribution"))
}

fn check_index(dist: &DiscreteVelocityDist, i: usize) -> Result<()> {
    if i < dist.len() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "class index {i} out of range (M = {})",
            dist.len()
        )))
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Mean number of class-`m` vehicles a class-`i` observer meets:
/// `lambda p_m |t_m - t_i|`.
pub fn expected_encounters(scenario: &Scenario, i: usize, m: usize) -> Result<f64> {
    let dist = discrete(scenario)?;
    check_index(dist, i)?;
    check_index(dist, m)?;
    if i == m {
        return Ok(0.0);
    }
    let t_i = class_quantities(scenario, i)?.t;
    let t_m = class_quantities(scenario, m)?.t;
    Ok(scenario.lambda() * dist.classes()[m].p * (t_m - t_i).abs())
}

/// Mean packets received over one segment by a class-`i` observer.
pub fn expected_packets(scenario: &Scenario, i: usize) -> Result<f64> {
    let dist = discrete(scenario)?;
    check_index(dist, i)?;
    let t_i = class_quantities(scenario, i)?.t.abs();
    let mut sum = 0.0;
    for (m, c) in dist.classes().iter().enumerate() {
        if m != i {
            sum += c.p * class_quantities(scenario, m)?.t.abs();
        }
    }
    let base = scenario.packet_rate() * scenario.range() * t_i / scenario.segment_length();
    Ok(base * (1.0 + scenario.lambda() / 2.0 * sum))
}

/// Per-node throughput of class `i` in terms of the other classes' densities.
pub fn expected_throughput_class(scenario: &Scenario, i: usize) -> Result<f64> {
    let dist = discrete(scenario)?;
    check_index(dist, i)?;
    let mut others = 0.0;
    for m in (0..dist.len()).filter(|&m| m != i) {
        others += class_quantities(scenario, m)?.rho;
    }
    Ok(scenario.packet_rate() * scenario.range() * (1.0 / scenario.segment_length() + others / 2.0))
}

/// Throughput of an observer at speed `v`, which need not be one of the
/// classes: every class moving at a different velocity contributes its density.
pub fn expected_throughput_observer(scenario: &Scenario, v: f64) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("observer velocity must be positive, got {v}")));
    }
    let Some(dist) = scenario.discrete() else {
        return Ok(expected_throughput_continuous(scenario)?.throughput);
    };
    let others: f64 = dist
        .classes()
        .iter()
        .filter(|c| c.v != v)
        .map(|c| scenario.lambda() * c.p / c.v.abs())
        .sum();
    Ok(scenario.packet_rate() * scenario.range() * (1.0 / scenario.segment_length() + others / 2.0))
}

/// Population-average throughput.
///
/// Evaluated twice, once through the mean density and once through the
/// pairwise sum over ordered class pairs; an [`Error::Inconsistency`] means
/// the two disagree beyond 1e-12 relative.
pub fn expected_throughput_avg(scenario: &Scenario) -> Result<f64> {
    let dist = discrete(scenario)?;
    let classes = dist.classes();
    let rp_r = scenario.packet_rate() * scenario.range();
    let inv_d = 1.0 / scenario.segment_length();

    let mut rho_sum = 0.0;
    let mut rho_bar = 0.0;
    for (m, c) in classes.iter().enumerate() {
        let rho = class_quantities(scenario, m)?.rho;
        rho_sum += rho;
        rho_bar += c.p * rho;
    }
    let by_density = rp_r * (inv_d - rho_bar / 2.0 + rho_sum / 2.0);

    let mut pairwise = 0.0;
    for (i, a) in classes.iter().enumerate() {
        for (j, b) in classes.iter().enumerate() {
            if i != j {
                pairwise += a.p * b.p * (1.0 / a.v.abs() + 1.0 / b.v.abs());
            }
        }
    }
    // Each ordered pair counts both endpoints' densities, hence lambda / 4
    // against the lambda / 2 of the unordered form.
    let by_pairs = rp_r * (inv_d + scenario.lambda() / 4.0 * pairwise);

    if !rel_close(by_density, by_pairs, DUAL_FORM_TOLERANCE) {
        return Err(Error::Inconsistency(format!(
            "average throughput forms disagree: density form {by_density}, pairwise form {by_pairs}"
        )));
    }
    Ok(by_density)
}

/// Throughput and mean car count for a continuous velocity distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousThroughput {
    pub throughput: f64,
    /// `E[N] = lambda d E[1/|V|]`, the mean number of cars on the segment.
    pub mean_cars: f64,
    pub mean_inverse_speed: f64,
}

/// Throughput under a continuous distribution; the same for every observer speed.
pub fn expected_throughput_continuous(scenario: &Scenario) -> Result<ContinuousThroughput> {
    let mix = scenario
        .continuous()
        .ok_or_else(|| Error::invalid("operation needs a continuous velocity distribution"))?;
    let inv = mix.mean_inverse_speed()?;
    let d = scenario.segment_length();
    let rp_r = scenario.packet_rate() * scenario.range();
    let throughput = rp_r * (1.0 / d + scenario.lambda() / 2.0 * inv);
    let mean_cars = scenario.lambda() * d * inv;
    let via_cars = rp_r * (1.0 / d + 0.5 * mean_cars / d);
    if !rel_close(throughput, via_cars, CONTINUOUS_FORM_TOLERANCE) {
        return Err(Error::Numerical(format!(
            "car-count form {via_cars} disagrees with inverse-speed form {throughput}"
        )));
    }
    Ok(ContinuousThroughput {
        throughput,
        mean_cars,
        mean_inverse_speed: inv,
    })
}

/// Population-average throughput for either kind of distribution.
pub fn expected_throughput(scenario: &Scenario) -> Result<f64> {
    match scenario.discrete() {
        Some(_) => expected_throughput_avg(scenario),
        None => Ok(expected_throughput_continuous(scenario)?.throughput),
    }
}

/// Projected seconds to collect enough packets to decode: packets needed
/// divided by the population-average throughput.
pub fn expected_download_time(scenario: &Scenario, file: FileSpec, epsilon: f64, scheme: CodingScheme) -> Result<f64> {
    let n = packets_needed(file.blocks(), epsilon, scheme)?;
    Ok(n as f64 / expected_throughput(scenario)?)
}

/// Per-class row of an [`AnalyticReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassExpectation {
    pub class_index: usize,
    pub v: f64,
    pub p: f64,
    pub t: f64,
    pub rho: f64,
    pub encounters: f64,
    pub packets: f64,
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticReport {
    /// Empty for continuous distributions.
    pub per_class: Vec<ClassExpectation>,
    pub average_throughput: f64,
    pub rho_bar: f64,
    pub mean_cars_in_segment: f64,
}

pub fn analyze(scenario: &Scenario) -> Result<AnalyticReport> {
    let Some(dist) = scenario.discrete() else {
        let c = expected_throughput_continuous(scenario)?;
        return Ok(AnalyticReport {
            per_class: Vec::new(),
            average_throughput: c.throughput,
            rho_bar: c.mean_cars / scenario.segment_length(),
            mean_cars_in_segment: c.mean_cars,
        });
    };
    let mut per_class = Vec::with_capacity(dist.len());
    let mut rho_bar = 0.0;
    let mut cars = 0.0;
    for (i, c) in dist.classes().iter().enumerate() {
        let q = class_quantities(scenario, i)?;
        rho_bar += c.p * q.rho;
        cars += q.rho * scenario.segment_length();
        let encounters = (0..dist.len())
            .map(|m| expected_encounters(scenario, i, m))
            .sum::<Result<f64>>()?;
        per_class.push(ClassExpectation {
            class_index: i,
            v: c.v,
            p: c.p,
            t: q.t,
            rho: q.rho,
            encounters,
            packets: expected_packets(scenario, i)?,
            throughput: expected_throughput_class(scenario, i)?,
        });
    }
    Ok(AnalyticReport {
        per_class,
        average_throughput: expected_throughput_avg(scenario)?,
        rho_bar,
        mean_cars_in_segment: cars,
    })
}
