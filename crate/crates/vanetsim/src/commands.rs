use std::borrow::Cow;
use std::path::Path;

use sha2::{Digest, Sha256};
use vanet_core::analytic::{self, expected_throughput_observer};
use vanet_core::codec::{packets_needed, CodingScheme, FileSpec, SolitonParams};
use vanet_core::config::ScenarioConfig;
use vanet_core::encounter::{monte_carlo_download, run_trips, MonteCarloEstimate, ObserverChoice};
use vanet_core::pmf::{is_monotone_in_speed, optimize_pmf as solve_pmf};
use vanet_core::traffic::Scenario;

use crate::report::{Record, ReportBuilder};
use crate::{CliError, DownloadArgs, SchemeArg, SimArgs};

/// `|z|` above this fails `compare`.
pub const Z_LIMIT: f64 = 4.0;

/// Where continuous probes sit inside the forward support.
const PROBE_FRACTIONS: [f64; 3] = [0.1, 0.5, 0.9];

pub struct LoadedScenario {
    pub scenario: Scenario,
    pub digest: String,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        CliError::Input(format!("{}: at `{at}`: {}", path.display(), e.inner()))
    })?;
    let scenario = config
        .build()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(LoadedScenario {
        scenario,
        digest: digest(&bytes),
    })
}

fn check_trials(trials: usize) -> Result<(), CliError> {
    if trials < 2 {
        Err(CliError::Input(format!("--trials must be at least 2, got {trials}")))
    } else {
        Ok(())
    }
}

/// One observer the simulator is run for.
struct Probe<'a> {
    label: String,
    class: Option<usize>,
    /// Scenario as seen by a forward-moving observer.
    scenario: Cow<'a, Scenario>,
    speed: f64,
    analytic: f64,
}

fn probes(scenario: &Scenario, observer_v: Option<f64>) -> Result<Vec<Probe<'_>>, CliError> {
    if let Some(v) = observer_v {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Input(format!("--observer-v must be positive, got {v}")));
        }
        let class = scenario.discrete().and_then(|d| d.class_of(v));
        return Ok(vec![Probe {
            label: format!("v={v}"),
            class,
            scenario: Cow::Borrowed(scenario),
            speed: v,
            analytic: expected_throughput_observer(scenario, v)?,
        }]);
    }
    if let Some(dist) = scenario.discrete() {
        return dist
            .classes()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let scn = if c.v > 0.0 {
                    Cow::Borrowed(scenario)
                } else {
                    Cow::Owned(scenario.mirrored())
                };
                Ok(Probe {
                    label: format!("class{i}"),
                    class: Some(i),
                    scenario: scn,
                    speed: c.v.abs(),
                    analytic: analytic::expected_throughput_class(scenario, i)?,
                })
            })
            .collect();
    }
    let mix = scenario.continuous().expect("not discrete");
    let forward = mix
        .parts()
        .iter()
        .find(|(_, d)| d.is_forward())
        .map(|(_, d)| d.support());
    let (scn, (a, b)) = match forward {
        Some(support) => (Cow::Borrowed(scenario), support),
        None => {
            let (a, b) = mix.parts()[0].1.support();
            (Cow::Owned(scenario.mirrored()), (-b, -a))
        }
    };
    let analytic = analytic::expected_throughput_continuous(scenario)?.throughput;
    Ok(PROBE_FRACTIONS
        .iter()
        .map(|f| {
            let v = a + (b - a) * f;
            Probe {
                label: format!("v={v}"),
                class: None,
                scenario: scn.clone(),
                speed: v,
                analytic,
            }
        })
        .collect())
}

struct ProbeResult {
    throughput: MonteCarloEstimate,
    encounters: MonteCarloEstimate,
    packets: MonteCarloEstimate,
}

fn run_probe(probe: &Probe<'_>, trials: usize, seed: u64) -> Result<ProbeResult, CliError> {
    let trips = run_trips(&probe.scenario, probe.speed, trials, seed)?;
    let col = |f: &dyn Fn(&vanet_core::encounter::TripResult) -> f64| -> Result<MonteCarloEstimate, CliError> {
        let xs: Vec<f64> = trips.iter().map(f).collect();
        Ok(MonteCarloEstimate::from_samples(&xs)?)
    };
    Ok(ProbeResult {
        throughput: col(&|t| t.throughput)?,
        encounters: col(&|t| f64::from(t.total_encounters))?,
        packets: col(&|t| t.total_packets)?,
    })
}

fn probe_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

pub fn analyze(path: &Path) -> Result<ReportBuilder, CliError> {
    let loaded = load_scenario(path)?;
    let scenario = &loaded.scenario;
    let report = analytic::analyze(scenario)?;
    let mut b = ReportBuilder::new("analyze", loaded.digest, Some(scenario.seed()));
    b.summary(|s| {
        s.text(
            "velocity",
            if scenario.discrete().is_some() {
                "discrete"
            } else {
                "continuous"
            },
        )
        .num("average_throughput", report.average_throughput)
        .num("rho_bar", report.rho_bar)
        .num("mean_cars_in_segment", report.mean_cars_in_segment)
        .num(
            "system_throughput_ec_times_en",
            report.average_throughput * report.mean_cars_in_segment,
        )
        .num(
            "infostation_term",
            scenario.packet_rate() * scenario.range() / scenario.segment_length(),
        )
    });
    if let Some(mix) = scenario.continuous() {
        let inv = mix.mean_inverse_speed()?;
        b.summary(|s| s.num("mean_inverse_speed", inv));
    }
    for c in &report.per_class {
        b.row(
            Record::new()
                .text("label", format!("class{}", c.class_index))
                .int("class", c.class_index as u64)
                .num("v", c.v)
                .num("p", c.p)
                .num("t", c.t)
                .num("rho", c.rho)
                .num("expected_encounters", c.encounters)
                .num("expected_packets", c.packets)
                .num("expected_throughput", c.throughput),
        );
    }
    Ok(b)
}

pub fn simulate(path: &Path, sim: &SimArgs, observer_v: Option<f64>) -> Result<ReportBuilder, CliError> {
    check_trials(sim.trials)?;
    let loaded = load_scenario(path)?;
    let scenario = &loaded.scenario;
    let seed = sim.seed.unwrap_or(scenario.seed());
    let mut b = ReportBuilder::new("simulate", loaded.digest, Some(seed));
    let mut weighted = (0.0, 0.0);
    for (k, probe) in probes(scenario, observer_v)?.iter().enumerate() {
        let r = run_probe(probe, sim.trials, probe_seed(seed, k))?;
        let mut row = Record::new()
            .text("label", probe.label.clone())
            .num("observer_v", probe.speed);
        if let Some(i) = probe.class {
            row = row.int("class", i as u64);
            if observer_v.is_none() {
                let p = scenario.discrete().expect("classes imply discrete").classes()[i].p;
                weighted.0 += p * r.throughput.mean;
                weighted.1 += (p * r.throughput.std_error).powi(2);
            }
        }
        b.row(
            row.int("trials", sim.trials as u64)
                .num("mean_throughput", r.throughput.mean)
                .num("se_throughput", r.throughput.std_error)
                .num("mean_encounters", r.encounters.mean)
                .num("se_encounters", r.encounters.std_error)
                .num("mean_packets", r.packets.mean)
                .num("se_packets", r.packets.std_error),
        );
    }
    if observer_v.is_none() && scenario.discrete().is_some() {
        b.summary(|s| {
            s.num("population_mean_throughput", weighted.0)
                .num("population_se", weighted.1.sqrt())
        });
    }
    b.summary(|s| s.int("trials", sim.trials as u64));
    Ok(b)
}

fn z_of(simulated: f64, se: f64, analytic: f64) -> f64 {
    let dev = simulated - analytic;
    if dev.abs() <= 1e-12 * analytic.abs().max(1.0) {
        0.0
    } else if se == 0.0 {
        dev.signum() * f64::MAX
    } else {
        dev / se
    }
}

pub fn compare(path: &Path, sim: &SimArgs, perturb: f64) -> Result<(ReportBuilder, bool), CliError> {
    check_trials(sim.trials)?;
    let loaded = load_scenario(path)?;
    let scenario = &loaded.scenario;
    let seed = sim.seed.unwrap_or(scenario.seed());
    let mut b = ReportBuilder::new("compare", loaded.digest, Some(seed));
    let mut worst: f64 = 0.0;
    let mut estimates = Vec::new();
    let probes = probes(scenario, None)?;
    let (mut avg_sim, mut avg_var, mut avg_analytic) = (0.0, 0.0, 0.0);

    for (k, probe) in probes.iter().enumerate() {
        let est = run_probe(probe, sim.trials, probe_seed(seed, k))?.throughput;
        let analytic = probe.analytic * perturb;
        let z = z_of(est.mean, est.std_error, analytic);
        worst = worst.max(z.abs());
        b.row(
            Record::new()
                .text("label", probe.label.clone())
                .text("kind", "throughput")
                .num("observer_v", probe.speed)
                .num("analytic", analytic)
                .num("simulated", est.mean)
                .num("std_error", est.std_error)
                .num("z", z),
        );
        if let (Some(i), Some(dist)) = (probe.class, scenario.discrete()) {
            let p = dist.classes()[i].p;
            avg_sim += p * est.mean;
            avg_var += (p * est.std_error).powi(2);
            avg_analytic += p * analytic;
        }
        estimates.push((probe.label.clone(), est));
    }

    if scenario.discrete().is_some() {
        let avg_se = avg_var.sqrt();
        let theory = analytic::expected_throughput_avg(scenario)? * perturb;
        debug_assert!((theory - avg_analytic).abs() <= 1e-9 * theory.max(1.0));
        let z = z_of(avg_sim, avg_se, theory);
        worst = worst.max(z.abs());
        b.row(
            Record::new()
                .text("label", "average")
                .text("kind", "throughput")
                .num("analytic", theory)
                .num("simulated", avg_sim)
                .num("std_error", avg_se)
                .num("z", z),
        );
    } else {
        // Observer speed should not matter: compare every pair of probes.
        for i in 0..estimates.len() {
            for j in i + 1..estimates.len() {
                let (a, b_est) = (&estimates[i].1, &estimates[j].1);
                let pooled = (a.std_error.powi(2) + b_est.std_error.powi(2)).sqrt();
                let z = z_of(a.mean - b_est.mean, pooled, 0.0);
                worst = worst.max(z.abs());
                b.row(
                    Record::new()
                        .text("label", format!("{}~{}", estimates[i].0, estimates[j].0))
                        .text("kind", "fairness")
                        .num("analytic", 0.0)
                        .num("simulated", a.mean - b_est.mean)
                        .num("std_error", pooled)
                        .num("z", z),
                );
            }
        }
    }
    let mismatch = worst > Z_LIMIT;
    b.summary(|s| {
        s.int("trials", sim.trials as u64)
            .num("max_abs_z", worst)
            .num("z_limit", Z_LIMIT)
            .flag("consistent", !mismatch)
    });
    Ok((b, mismatch))
}

pub fn optimize_pmf(speeds: &[f64]) -> Result<ReportBuilder, CliError> {
    let sol = solve_pmf(speeds)?;
    let canonical = speeds.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    let mut b = ReportBuilder::new("optimize-pmf", digest(canonical.as_bytes()), None);
    let monotone = is_monotone_in_speed(&sol.p, speeds);
    b.summary(|s| {
        s.int("classes", speeds.len() as u64)
            .num("objective", sol.objective)
            .int("active_set_size", sol.active_set_size as u64)
            .num("kkt_nu", sol.kkt_nu)
            .num("kkt_residual", sol.kkt_residual)
            .flag("monotone_in_speed", monotone)
    });
    let mut rank = vec![0; speeds.len()];
    for (r, &i) in sol.order.iter().enumerate() {
        rank[i] = r;
    }
    for (i, &v) in speeds.iter().enumerate() {
        b.row(
            Record::new()
                .text("label", format!("class{i}"))
                .int("input_index", i as u64)
                .num("v", v)
                .int("sorted_rank", rank[i] as u64)
                .num("p", sol.p[i]),
        );
    }
    Ok(b)
}

pub fn download_time(path: &Path, dl: &DownloadArgs) -> Result<ReportBuilder, CliError> {
    if dl.trials < 1 {
        return Err(CliError::Input("--trials must be at least 1".into()));
    }
    let loaded = load_scenario(path)?;
    let scenario = &loaded.scenario;
    let seed = dl.seed.unwrap_or(scenario.seed());
    let file = FileSpec::new(dl.k, dl.block_bits)?;
    let scheme = match dl.scheme {
        SchemeArg::Uniform => CodingScheme::Uniform,
        SchemeArg::Lt => CodingScheme::LtSoliton(SolitonParams::new(dl.lt_c, dl.lt_delta)?),
    };
    let needed = packets_needed(dl.k, dl.epsilon, scheme)?;
    let (observer, throughput) = match dl.observer_v {
        Some(v) => (ObserverChoice::Fixed(v), expected_throughput_observer(scenario, v)?),
        None => (ObserverChoice::Population, analytic::expected_throughput(scenario)?),
    };
    let projection = needed as f64 / throughput;
    let outcomes = monte_carlo_download(scenario, observer, file, scheme, dl.trials, seed, dl.max_segments)?;

    let times: Vec<f64> = outcomes.iter().map(|o| o.time).collect();
    let events: Vec<f64> = outcomes.iter().map(|o| o.event_time).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mean_time = mean(&times);
    let packets: Vec<f64> = outcomes.iter().map(|o| o.packets_received as f64).collect();
    let segments: Vec<f64> = outcomes.iter().map(|o| o.segments_traversed as f64).collect();

    let mut b = ReportBuilder::new("download-time", loaded.digest, Some(seed));
    b.summary(|s| {
        let s = s
            .text(
                "scheme",
                match dl.scheme {
                    SchemeArg::Uniform => "uniform",
                    SchemeArg::Lt => "lt",
                },
            )
            .int("k", dl.k as u64)
            .num("epsilon", dl.epsilon)
            .int("packets_needed", needed as u64)
            .num("expected_throughput", throughput)
            .num("projection", projection)
            .int("trials", dl.trials as u64)
            .num("simulated_mean_time", mean_time)
            .num("simulated_mean_event_time", mean(&events))
            .num("mean_packets_received", mean(&packets))
            .num("mean_segments", mean(&segments))
            .num("relative_gap", mean_time / projection - 1.0);
        match MonteCarloEstimate::from_samples(&times) {
            Ok(est) => s.num("simulated_std_error", est.std_error),
            Err(_) => s,
        }
    });
    Ok(b)
}
