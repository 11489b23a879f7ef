//! Monte Carlo traversal of one highway segment by an observer vehicle.
//!
//! The observer enters at `x = 0` at time zero with speed `v_i > 0` and leaves
//! at `t_i = d / v_i`. Background vehicles are Poisson arrivals; an encounter
//! is a crossing of the two position trajectories while both are on the
//! segment. Range only sets how long a crossing lasts, never whether it
//! happens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{encode, CodingScheme, DecoderState, FileSpec, VectorSampler};
use crate::error::{Error, Result};
use crate::traffic::{generate_arrivals, ArrivalRecord, Scenario, VelocityDist};

/// Margin, in units of `r / min|v|`, added before the earliest arrival that
/// could still meet the observer.
const WINDOW_MARGIN: f64 = 10.0;

/// Default cap on segments for [`simulate_download_time`].
pub const DEFAULT_SEGMENT_CAP: usize = 10_000;

/// Independent random stream for trial `index` under `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncounterEvent {
    pub partner_v: f64,
    /// Observer clock, seconds after it entered the segment.
    pub meeting_time: f64,
    pub connection_time: f64,
    pub packets_received: f64,
}

/// Packets delivered in each direction while two nodes are in range.
pub fn packets_per_encounter(v: f64, v_prime: f64, packet_rate: f64, r: f64) -> Result<f64> {
    if v == v_prime {
        return Err(Error::invalid(
            "equal velocities never separate: connection time is unbounded",
        ));
    }
    Ok(packet_rate * r / (2.0 * (v - v_prime).abs()))
}

/// Packets picked up while passing an infostation.
pub fn infostation_download(v: f64, packet_rate: f64, r: f64) -> Result<f64> {
    if v == 0.0 {
        return Err(Error::invalid("a stationary vehicle has no infostation pass"));
    }
    Ok(packet_rate * r / v.abs())
}

/// Time, on the observer's clock, at which it crosses `other` on the segment.
fn crossing_time(observer_v: f64, other: &ArrivalRecord, d: f64) -> Option<f64> {
    if other.v == observer_v {
        return None;
    }
    let origin = if other.v > 0.0 { 0.0 } else { d };
    let tau = (origin - other.v * other.entry_time) / (observer_v - other.v);
    (tau > 0.0 && tau < d / observer_v).then_some(tau)
}

pub fn encounter_of(observer_v: f64, other: &ArrivalRecord, scenario: &Scenario) -> Option<EncounterEvent> {
    let tau = crossing_time(observer_v, other, scenario.segment_length())?;
    let rel = (observer_v - other.v).abs();
    let r = scenario.range();
    Some(EncounterEvent {
        partner_v: other.v,
        meeting_time: tau,
        connection_time: r / rel,
        packets_received: scenario.packet_rate() * r / (2.0 * rel),
    })
}

/// One observer traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct TripResult {
    pub observer_v: f64,
    pub travel_time: f64,
    /// Per velocity class for discrete scenarios; `[forward, reverse]` for
    /// continuous ones.
    pub encounters_per_class: Vec<u32>,
    /// Packets received from encounters, bucketed like `encounters_per_class`.
    pub packets_per_class: Vec<f64>,
    pub total_encounters: u32,
    pub infostation_packets: f64,
    pub total_packets: f64,
    pub throughput: f64,
}

fn bucket_count(scenario: &Scenario) -> usize {
    match scenario.velocity() {
        VelocityDist::Discrete(d) => d.len(),
        VelocityDist::Continuous(_) => 2,
    }
}

fn bucket_of(arrival: &ArrivalRecord) -> usize {
    arrival.class_index.unwrap_or(if arrival.v > 0.0 { 0 } else { 1 })
}

fn check_observer(v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "observer velocity must be positive and finite, got {v}"
        )))
    }
}

/// Encounters of one traversal, sorted by meeting time, with their buckets.
fn trip_events<R: Rng + ?Sized>(scenario: &Scenario, observer_v: f64, rng: &mut R) -> Vec<(usize, EncounterEvent)> {
    let t_i = scenario.segment_length() / observer_v;
    let min_speed = scenario.velocity().min_abs_speed();
    let earliest = -scenario.max_travel_time() - WINDOW_MARGIN * scenario.range() / min_speed;
    let mut events: Vec<_> = generate_arrivals(scenario, (earliest, t_i), rng)
        .iter()
        .filter_map(|a| encounter_of(observer_v, a, scenario).map(|e| (bucket_of(a), e)))
        .collect();
    events.sort_by(|a, b| a.1.meeting_time.total_cmp(&b.1.meeting_time));
    events
}

pub fn simulate_trip<R: Rng + ?Sized>(scenario: &Scenario, observer_v: f64, rng: &mut R) -> Result<TripResult> {
    check_observer(observer_v)?;
    let buckets = bucket_count(scenario);
    let mut encounters = vec![0u32; buckets];
    let mut packets = vec![0.0; buckets];
    for (b, e) in trip_events(scenario, observer_v, rng) {
        encounters[b] += 1;
        packets[b] += e.packets_received;
    }
    let travel_time = scenario.segment_length() / observer_v;
    let infostation_packets = infostation_download(observer_v, scenario.packet_rate(), scenario.range())?;
    let total_packets = infostation_packets + packets.iter().sum::<f64>();
    Ok(TripResult {
        observer_v,
        travel_time,
        total_encounters: encounters.iter().sum(),
        encounters_per_class: encounters,
        packets_per_class: packets,
        infostation_packets,
        total_packets,
        throughput: total_packets / travel_time,
    })
}

/// Runs `trials` independent trips, trial `j` on stream [`trial_rng`]`(seed, j)`.
/// Results come back in trial order whatever the thread schedule.
pub fn run_trips(scenario: &Scenario, observer_v: f64, trials: usize, seed: u64) -> Result<Vec<TripResult>> {
    check_observer(observer_v)?;
    (0..trials as u64)
        .into_par_iter()
        .map(|j| simulate_trip(scenario, observer_v, &mut trial_rng(seed, j)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

impl MonteCarloEstimate {
    /// Mean and standard error of the mean. Sums run in slice order.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 trials, got {n}")));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            trials: n,
        })
    }

    /// Sample variance, recovered from the standard error.
    pub fn variance(&self) -> f64 {
        self.std_error.powi(2) * self.trials as f64
    }

    /// `(self - expected) / std_error`; zero when both the error and the
    /// deviation vanish.
    pub fn z_score(&self, expected: f64) -> f64 {
        let dev = self.mean - expected;
        if self.std_error == 0.0 {
            if dev == 0.0 {
                0.0
            } else {
                dev.signum() * f64::INFINITY
            }
        } else {
            dev / self.std_error
        }
    }
}

/// Mean per-node throughput `C_i` over independent trips.
pub fn monte_carlo_throughput(
    scenario: &Scenario,
    observer_v: f64,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if trials < 2 {
        return Err(Error::invalid(format!("need at least 2 trials, got {trials}")));
    }
    let c: Vec<f64> = run_trips(scenario, observer_v, trials, seed)?
        .iter()
        .map(|t| t.throughput)
        .collect();
    MonteCarloEstimate::from_samples(&c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownloadOutcome {
    /// Travel time consumed, with packets of a segment spread evenly over its
    /// traversal: completed segments plus the used fraction of the last.
    pub time: f64,
    /// Observer clock at the delivery event (infostation pass or encounter)
    /// that completed the rank.
    pub event_time: f64,
    pub packets_received: usize,
    pub segments_traversed: usize,
}

/// Drives a decoder with packets from consecutive segments until it reaches
/// full rank.
///
/// Each segment opens with `floor(R_p r / v)` infostation packets, followed by
/// `floor(R_p r / (2|v - v'|))` packets per encounter in meeting order. Every
/// packet carries a fresh vector from `scheme`. Traffic and coding draw from
/// separate child streams of `rng`, so changing the packet rate leaves both
/// the traffic and the vector sequence unchanged.
pub fn simulate_download_time<R: Rng + ?Sized>(
    scenario: &Scenario,
    observer_v: f64,
    file: FileSpec,
    scheme: CodingScheme,
    rng: &mut R,
    max_segments: usize,
) -> Result<DownloadOutcome> {
    check_observer(observer_v)?;
    let sampler = VectorSampler::new(file.blocks(), scheme)?;
    let mut traffic_rng = ChaCha8Rng::from_seed(rng.random());
    let mut coding_rng = ChaCha8Rng::from_seed(rng.random());
    let blocks = file.random_file(&mut coding_rng);
    let mut decoder = DecoderState::new(file.blocks())?;

    let t_i = scenario.segment_length() / observer_v;
    let rate = scenario.packet_rate();
    let r = scenario.range();
    let station = infostation_download(observer_v, rate, r)?.floor() as usize;
    let mut received = 0usize;

    for segment in 0..max_segments {
        let mut schedule = vec![(0.0, station)];
        schedule.extend(
            trip_events(scenario, observer_v, &mut traffic_rng)
                .into_iter()
                .map(|(_, e)| (e.meeting_time, e.packets_received.floor() as usize)),
        );
        let segment_total: usize = schedule.iter().map(|(_, n)| n).sum();
        let mut used = 0usize;
        for (at, count) in schedule {
            for _ in 0..count {
                let packet = encode(&blocks, &sampler.sample(&mut coding_rng))?;
                decoder.receive(&packet)?;
                used += 1;
                received += 1;
                if decoder.is_complete() {
                    debug_assert!(matches!(
                        decoder.try_decode(),
                        crate::codec::DecodeStatus::Decoded(ref b) if *b == blocks
                    ));
                    let start = segment as f64 * t_i;
                    return Ok(DownloadOutcome {
                        time: start + t_i * used as f64 / segment_total as f64,
                        event_time: start + at,
                        packets_received: received,
                        segments_traversed: segment + 1,
                    });
                }
            }
        }
    }
    Err(Error::NoProgress { segments: max_segments })
}

/// How the observer is chosen for each download trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObserverChoice {
    Fixed(f64),
    /// Drawn from the scenario's own velocity distribution. Reverse-direction
    /// draws are simulated as forward observers in the mirrored scenario.
    Population,
}

#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_download(
    scenario: &Scenario,
    observer: ObserverChoice,
    file: FileSpec,
    scheme: CodingScheme,
    trials: usize,
    seed: u64,
    max_segments: usize,
) -> Result<Vec<DownloadOutcome>> {
    let mirrored = scenario.mirrored();
    (0..trials as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = trial_rng(seed, j);
            let (scn, v) = match observer {
                ObserverChoice::Fixed(v) => (scenario, v),
                ObserverChoice::Population => {
                    let (v, _) = scenario.velocity().sample(&mut rng);
                    if v > 0.0 {
                        (scenario, v)
                    } else {
                        (&mirrored, -v)
                    }
                }
            };
            simulate_download_time(scn, v, file, scheme, &mut rng, max_segments)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::span_probability;
    use crate::traffic::{DiscreteVelocityDist, VelocityClass};

    fn scenario(lambda: f64, classes: &[(f64, f64)]) -> Scenario {
        let dist = DiscreteVelocityDist::new(classes.iter().map(|&(v, p)| VelocityClass { v, p }).collect()).unwrap();
        Scenario::new(lambda, 1e4, 100.0, 5e4, 1e3, VelocityDist::Discrete(dist), 1).unwrap()
    }

    fn arrival(t: f64, v: f64) -> ArrivalRecord {
        ArrivalRecord {
            entry_time: t,
            v,
            class_index: None,
        }
    }

    #[test]
    fn forward_partner_interval() {
        let s = scenario(0.1, &[(20.0, 0.5), (25.0, 0.5)]);
        let e = encounter_of(25.0, &arrival(-50.0, 20.0), &s).unwrap();
        assert!((e.meeting_time - 200.0).abs() < 1e-9);
        assert!((e.connection_time - 20.0).abs() < 1e-12);
        assert!((e.packets_received - 500.0).abs() < 1e-9);
        assert!(encounter_of(25.0, &arrival(-150.0, 20.0), &s).is_none());
        // faster partner: meets iff it enters after the observer and leaves before it
        assert!(encounter_of(20.0, &arrival(50.0, 25.0), &s).is_some());
        assert!(encounter_of(20.0, &arrival(150.0, 25.0), &s).is_none());
        assert!(encounter_of(20.0, &arrival(-1.0, 25.0), &s).is_none());
    }

    #[test]
    fn same_velocity_never_meets() {
        let s = scenario(0.1, &[(20.0, 1.0)]);
        for t in [-1000.0, -10.0, 0.5, 100.0] {
            assert!(encounter_of(20.0, &arrival(t, 20.0), &s).is_none());
        }
    }

    #[test]
    fn reverse_partner_boundary() {
        let s = scenario(0.1, &[(25.0, 0.5), (-20.0, 0.5)]);
        assert!(encounter_of(25.0, &arrival(-500.0 + 1e-6, -20.0), &s).is_some());
        assert!(encounter_of(25.0, &arrival(-500.0 - 1e-6, -20.0), &s).is_none());
        assert!(encounter_of(25.0, &arrival(400.0 - 1e-6, -20.0), &s).is_some());
        assert!(encounter_of(25.0, &arrival(400.0 + 1e-6, -20.0), &s).is_none());
    }

    /// Interval conditions on entry time, written directly from the
    /// trajectory geometry rather than the crossing equation.
    fn meets_by_interval(v_i: f64, v_m: f64, t: f64, d: f64) -> bool {
        let (t_i, t_m) = (d / v_i, d / v_m);
        if v_m < 0.0 {
            -t_m.abs() < t && t < t_i
        } else if t_m > t_i {
            -(t_m - t_i) < t && t < 0.0
        } else if t_m < t_i {
            0.0 < t && t < t_i - t_m
        } else {
            false
        }
    }

    #[test]
    fn crossing_agrees_with_interval_conditions() {
        let s = scenario(0.1, &[(20.0, 1.0)]);
        let mut rng = trial_rng(3, 0);
        for _ in 0..20_000 {
            let v_i: f64 = rng.random_range(5.0..50.0);
            let v_m: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(5.0..50.0);
            let t: f64 = rng.random_range(-3000.0..3000.0);
            let got = encounter_of(v_i, &arrival(t, v_m), &s).is_some();
            assert_eq!(got, meets_by_interval(v_i, v_m, t, 1e4), "v_i={v_i} v_m={v_m} t={t}");
        }
    }

    #[test]
    fn packets_per_encounter_examples() {
        assert!((packets_per_encounter(20.0, 25.0, 50.0, 100.0).unwrap() - 500.0).abs() < 1e-12);
        assert!((packets_per_encounter(20.0, -20.0, 50.0, 100.0).unwrap() - 62.5).abs() < 1e-12);
        let a = packets_per_encounter(20.0, 31.0, 50.0, 100.0).unwrap();
        let b = packets_per_encounter(20.0, 31.0, 50.0, 200.0).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
        assert!(packets_per_encounter(20.0, 20.0, 50.0, 100.0).is_err());
    }

    #[test]
    fn infostation_download_examples() {
        assert_eq!(infostation_download(20.0, 50.0, 100.0).unwrap(), 250.0);
        assert_eq!(infostation_download(-20.0, 50.0, 100.0).unwrap(), 250.0);
        assert_eq!(infostation_download(40.0, 50.0, 100.0).unwrap(), 125.0);
        assert!(infostation_download(0.0, 50.0, 100.0).is_err());
    }

    #[test]
    fn empty_highway_trip() {
        let s = scenario(0.0, &[(20.0, 0.5), (25.0, 0.5)]);
        let t = simulate_trip(&s, 25.0, &mut trial_rng(1, 0)).unwrap();
        assert_eq!(t.total_encounters, 0);
        assert_eq!(t.total_packets, 200.0);
        assert!((t.throughput - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_never_meets_itself() {
        let s = scenario(0.5, &[(20.0, 1.0)]);
        for j in 0..50 {
            let t = simulate_trip(&s, 20.0, &mut trial_rng(2, j)).unwrap();
            assert_eq!(t.total_encounters, 0);
        }
    }

    #[test]
    fn trip_invariants() {
        let s = scenario(0.1, &[(20.0, 0.4), (25.0, 0.3), (-30.0, 0.3)]);
        for j in 0..200 {
            let t = simulate_trip(&s, 25.0, &mut trial_rng(5, j)).unwrap();
            assert_eq!(t.total_encounters, t.encounters_per_class.iter().sum::<u32>());
            assert_eq!(t.encounters_per_class[1], 0);
            assert!(t.total_packets >= t.infostation_packets);
            assert!((t.throughput - t.total_packets / t.travel_time).abs() < 1e-12);
        }
    }

    #[test]
    fn trip_rejects_bad_observer() {
        let s = scenario(0.1, &[(20.0, 1.0)]);
        assert!(simulate_trip(&s, 0.0, &mut trial_rng(1, 0)).is_err());
        assert!(simulate_trip(&s, -20.0, &mut trial_rng(1, 0)).is_err());
    }

    #[test]
    fn trips_are_deterministic() {
        let s = scenario(0.1, &[(20.0, 0.5), (25.0, 0.5)]);
        let a = run_trips(&s, 20.0, 64, 9).unwrap();
        let b = run_trips(&s, 20.0, 64, 9).unwrap();
        assert_eq!(a, b);
        let seq: Vec<_> = (0..64)
            .map(|j| simulate_trip(&s, 20.0, &mut trial_rng(9, j)).unwrap())
            .collect();
        assert_eq!(a, seq);
    }

    #[test]
    fn forward_pair_mean_encounters() {
        let s = scenario(0.1, &[(20.0, 0.5), (25.0, 0.5)]);
        let trips = run_trips(&s, 25.0, 100_000, 17).unwrap();
        let n: Vec<f64> = trips.iter().map(|t| t.encounters_per_class[0] as f64).collect();
        let est = MonteCarloEstimate::from_samples(&n).unwrap();
        assert!(est.z_score(5.0).abs() <= 3.0, "{est:?}");
    }

    #[test]
    fn estimator_basics() {
        assert!(MonteCarloEstimate::from_samples(&[1.0]).is_err());
        let e = MonteCarloEstimate::from_samples(&[1.0, 3.0]).unwrap();
        assert_eq!(e.mean, 2.0);
        assert!((e.std_error - 1.0).abs() < 1e-15);
        assert!((e.variance() - 2.0).abs() < 1e-12);
        let flat = MonteCarloEstimate::from_samples(&[0.5; 10]).unwrap();
        assert_eq!(flat.std_error, 0.0);
        assert_eq!(flat.z_score(0.5), 0.0);
        assert!(flat.z_score(0.4).is_infinite());
    }

    #[test]
    fn zero_traffic_throughput_estimate() {
        let s = scenario(0.0, &[(20.0, 0.5), (25.0, 0.5)]);
        let e = monte_carlo_throughput(&s, 20.0, 100, 1).unwrap();
        assert!((e.mean - 0.5).abs() < 1e-12);
        assert_eq!(e.std_error, 0.0);
        assert!(monte_carlo_throughput(&s, 20.0, 1, 1).is_err());
    }

    #[test]
    fn download_on_empty_highway_decodes_in_first_segment() {
        // 250 uniform packets for K = 4
        assert!(span_probability(4, 250) > 1.0 - 1e-12);
        let s = scenario(0.0, &[(20.0, 1.0)]);
        let file = FileSpec::new(4, 16).unwrap();
        for j in 0..200 {
            let out = simulate_download_time(&s, 20.0, file, CodingScheme::Uniform, &mut trial_rng(4, j), 10).unwrap();
            assert_eq!(out.segments_traversed, 1);
            assert!(out.packets_received >= 4);
            assert!((out.time - 500.0 * out.packets_received as f64 / 250.0).abs() < 1e-9);
            assert_eq!(out.event_time, 0.0);
        }
    }

    #[test]
    fn single_block_decodes_at_first_nonzero_packet() {
        let s = scenario(0.0, &[(20.0, 1.0)]);
        let file = FileSpec::new(1, 8).unwrap();
        for j in 0..100 {
            let out = simulate_download_time(&s, 20.0, file, CodingScheme::Uniform, &mut trial_rng(8, j), 10).unwrap();
            assert!(out.packets_received >= 1 && out.packets_received <= 30);
        }
    }

    #[test]
    fn download_without_supply_hits_cap() {
        // floor(R_p r / v) = floor(0.5) = 0 and no traffic
        let dist = DiscreteVelocityDist::equiprobable(&[20.0]).unwrap();
        let s = Scenario::new(0.0, 1e4, 100.0, 100.0, 1e3, VelocityDist::Discrete(dist), 0).unwrap();
        let file = FileSpec::new(2, 8).unwrap();
        let err = simulate_download_time(&s, 20.0, file, CodingScheme::Uniform, &mut trial_rng(1, 0), 25).unwrap_err();
        assert_eq!(err, Error::NoProgress { segments: 25 });
    }

    #[test]
    fn faster_link_never_slows_download() {
        let s = scenario(0.02, &[(20.0, 0.5), (25.0, 0.5)]);
        // shrink the link so downloads span several segments
        let slow = s.with_packet_rate_scaled(0.01).unwrap();
        let fast = slow.with_packet_rate_scaled(2.0).unwrap();
        let file = FileSpec::new(64, 8).unwrap();
        let mut spanned = 0;
        for j in 0..1000 {
            let a =
                simulate_download_time(&slow, 20.0, file, CodingScheme::Uniform, &mut trial_rng(6, j), 1000).unwrap();
            let b =
                simulate_download_time(&fast, 20.0, file, CodingScheme::Uniform, &mut trial_rng(6, j), 1000).unwrap();
            assert!(b.time <= a.time + 1e-9, "trial {j}: {} > {}", b.time, a.time);
            assert_eq!(a.packets_received, b.packets_received);
            if a.segments_traversed > 1 {
                spanned += 1;
            }
        }
        assert!(spanned > 0);
    }

    #[test]
    fn population_observer_handles_reverse_classes() {
        let s = scenario(0.05, &[(20.0, 0.5), (-25.0, 0.5)]);
        let file = FileSpec::new(8, 8).unwrap();
        let out =
            monte_carlo_download(&s, ObserverChoice::Population, file, CodingScheme::Uniform, 50, 3, 100).unwrap();
        assert_eq!(out.len(), 50);
        assert!(out.iter().all(|o| o.time > 0.0));
    }
}
