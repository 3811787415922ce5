//! Seeded Monte-Carlo experiments.
//!
//! Replicate `r` of a run uses seed `base_seed XOR r`; within a replicate,
//! independent draws come from separate ChaCha streams of that seed, so any
//! replicate can be re-run alone and results do not depend on the worker
//! count. Each run produces one CSV row per `(replicate, estimator,
//! quantity)` and a JSON [`Summary`].
//!
//! Output files:
//!
//! * `results.csv`: `scenario,replicate,seed,sample_size,estimator,quantity,estimate,truth,sq_error,status,note`
//! * `summary.json`: resolved config, metadata, group statistics and paired ratios.
//!
//! Replicate 0 is also regenerated and written out for inspection:
//!
//! * `volterra-spectral`: `signals/<signal>_<n>_{source,received,<method>}` as
//!   `.csv` (`index,value`) and `.f64` (raw little-endian 64-bit floats, no header).
//! * `cusum-far`: `traces/<stream>_eps<epsilon>.csv` (`n,T_n,fired`) for the
//!   in-control stream and, with `change_at` set, the shifted one (cut at
//!   the alarm).

pub mod config;
pub mod scenarios;
pub mod summary;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

pub use config::{ExperimentConfig, Scenario, SCENARIOS};
pub use scenarios::{replicate_seed, ResultRecord};
pub use summary::{summarize, GroupStats, RatioStats, Summary};

use crate::error::{Error, Result};
use crate::moments::analytic_cumulants;
use crate::pmm::{variance_reduction_g2, DispatchConfig};
use scenarios::Rows;

/// Rows and summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<ResultRecord>,
    pub summary: Summary,
}

/// Runs every replicate of `config` on up to `workers` threads (`None`: all cores).
pub fn run_experiment(config: &ExperimentConfig, workers: Option<usize>) -> Result<ExperimentOutput> {
    config.validate()?;
    let cfg = config.resolved();
    cfg.validate()?;
    let name = cfg.scenario.name();
    let detectors = match &cfg.scenario {
        Scenario::CusumFar(p) => Some(scenarios::cusum_detectors(p)),
        _ => None,
    };
    let replicate = |r: usize| -> Vec<ResultRecord> {
        let seed = replicate_seed(cfg.base_seed, r);
        let mut rows = Rows::new(name, r, seed);
        let sizes = &cfg.sample_sizes;
        match &cfg.scenario {
            Scenario::G2Validation(p) => scenarios::g2_validation(p, sizes, &mut rows),
            Scenario::PmmVsSls(p) => scenarios::regression(p, sizes, true, &mut rows),
            Scenario::RegressionGain(p) => scenarios::regression(p, sizes, false, &mut rows),
            Scenario::VolterraSpectral(p) => scenarios::volterra_spectral(p, sizes, &mut rows),
            Scenario::CusumFar(p) => {
                scenarios::cusum_far(p, &mut rows, detectors.as_ref().expect("detectors built"))
            }
            Scenario::DispatchAccuracy(p) => scenarios::dispatch_accuracy(p, sizes, &mut rows),
        }
        rows.out
    };
    let per_replicate: Vec<Vec<ResultRecord>> = match workers {
        Some(1) => (0..cfg.replicates).map(replicate).collect(),
        _ => {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(w) = workers {
                builder = builder.num_threads(w);
            }
            let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| (0..cfg.replicates).into_par_iter().map(replicate).collect())
        }
    };
    let records: Vec<ResultRecord> = per_replicate.into_iter().flatten().collect();

    let pairs: &[(&str, &str)] = match &cfg.scenario {
        Scenario::G2Validation(_) => &[("pmm2", "mean")],
        Scenario::PmmVsSls(_) => &[("pmm2", "sls"), ("pmm2", "ols"), ("sls", "ols")],
        Scenario::RegressionGain(_) => &[("pmm2", "ols")],
        _ => &[],
    };
    let summary = Summary {
        scenario: name.to_string(),
        metadata: metadata(&cfg, &detectors),
        groups: summary::group_stats(&records),
        ratios: summary::paired_ratios(&records, pairs),
        config: cfg,
    };
    Ok(ExperimentOutput { records, summary })
}

fn metadata(
    cfg: &ExperimentConfig,
    detectors: &Option<Result<Vec<crate::changepoint::CusumDetector>>>,
) -> BTreeMap<String, serde_json::Value> {
    let mut m = BTreeMap::new();
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("seed_rule".into(), json!("replicate seed = base_seed XOR replicate index"));
    m.insert("half_width".into(), json!("95% normal approximation over replicates"));
    let predicted_g2 = |dist: &crate::moments::Distribution| {
        analytic_cumulants(dist)
            .and_then(|c| variance_reduction_g2(c.gamma3(), c.gamma4()))
            .ok()
    };
    match &cfg.scenario {
        Scenario::G2Validation(p) => {
            m.insert("predicted_g2".into(), json!(predicted_g2(&p.noise)));
        }
        Scenario::PmmVsSls(p) | Scenario::RegressionGain(p) => {
            m.insert("predicted_g2".into(), json!(predicted_g2(&p.noise)));
            m.insert("nonlinear_start".into(), json!("true parameter"));
            m.insert(
                "sls_omega".into(),
                json!(match p.sls_weighting {
                    config::SlsWeighting::Optimal =>
                        "per-observation inverse covariance of the residual pair at the least-squares fit".to_string(),
                    config::SlsWeighting::DefaultOmega =>
                        "scalar omega minimising the sandwich variance on a log grid over [1e-4, 1e2]".into(),
                    config::SlsWeighting::Omega(w) => format!("scalar omega = {w}"),
                }),
            );
        }
        Scenario::VolterraSpectral(p) => {
            m.insert(
                "effective_width".into(),
                json!("99% occupied bandwidth (0.5%..99.5% cumulative power) of a Welch PSD, Hann, segment 256, 50% overlap"),
            );
            m.insert(
                "channel".into(),
                json!(format!(
                    "r[n] = sum_k {:?}[k] s[n-k] + {} s[n] s[n-{}]",
                    p.channel.linear, p.channel.quadratic, p.channel.quadratic_lag
                )),
            );
            m.insert(
                "width_ratio".into(),
                json!("width(equaliser output) / width(channel output); the equaliser fits received -> source"),
            );
        }
        Scenario::CusumFar(_) => {
            m.insert("far_control".into(), json!("per-horizon union bound over all windows"));
            if let Some(Ok(ds)) = detectors {
                let thresholds: BTreeMap<String, f64> =
                    ds.iter().map(|d| (d.epsilon.to_string(), d.threshold)).collect();
                m.insert("thresholds".into(), json!(thresholds));
                if let Some(d) = ds.first() {
                    m.insert("score".into(), json!(d.score));
                }
            }
        }
        Scenario::DispatchAccuracy(_) => {
            m.insert("dispatch".into(), json!(DispatchConfig::default()));
        }
    }
    m
}

/// Writes `results.csv` and `summary.json` into `dir`.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("results.csv");
    let json_path = dir.join("summary.json");
    summary::write_records(std::io::BufWriter::new(std::fs::File::create(&csv_path)?), &output.records)?;
    let text = serde_json::to_string_pretty(&output.summary).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(&json_path, text + "\n")?;
    write_artifacts(&output.summary.config, dir)?;
    Ok((csv_path, json_path))
}

/// Writes the replicate-0 signals or detector traces of `config` under `dir`;
/// returns the files written (none for the other scenarios).
pub fn write_artifacts(config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    use crate::changepoint::{run_detector, write_trace_csv};
    use crate::signals::{generate, write_csv, write_f64le};
    use crate::volterra::AdaptationMethod;
    use std::io::BufWriter;

    let create = |path: &Path| -> Result<BufWriter<std::fs::File>> { Ok(BufWriter::new(std::fs::File::create(path)?)) };
    let seed = replicate_seed(config.base_seed, 0);
    let mut written = Vec::new();
    match &config.scenario {
        Scenario::VolterraSpectral(p) => {
            let sub = dir.join("signals");
            std::fs::create_dir_all(&sub)?;
            let mut save = |stem: String, signal: &[f64]| -> Result<()> {
                let csv = sub.join(format!("{stem}.csv"));
                let raw = sub.join(format!("{stem}.f64"));
                write_csv(create(&csv)?, signal)?;
                write_f64le(create(&raw)?, signal)?;
                written.extend([csv, raw]);
                Ok(())
            };
            for (k, &n) in config.sample_sizes.iter().enumerate() {
                for j in 0..p.signals.len() {
                    let spec = scenarios::spectral_source(p, seed, k, n, j);
                    let stem = format!("{}_{n}", spec.kind.name());
                    let source = generate(&spec)?;
                    save(format!("{stem}_source"), &source)?;
                    save(format!("{stem}_received"), &p.channel.apply(&source))?;
                    for method in &p.methods {
                        let label = match method {
                            AdaptationMethod::Mmse => "mmse",
                            AdaptationMethod::Moment => "moment",
                        };
                        // a failed fit is already a row in results.csv
                        if let Ok((_, processed, _)) = scenarios::equalise(p, *method, &source) {
                            save(format!("{stem}_{label}"), &processed)?;
                        }
                    }
                }
            }
        }
        Scenario::CusumFar(p) => {
            let sub = dir.join("traces");
            std::fs::create_dir_all(&sub)?;
            let mut streams = vec![("quiet", scenarios::quiet_stream(p, seed)?)];
            if let Some(change) = p.change_at {
                streams.push(("shifted", scenarios::shifted_stream(p, seed, change)?));
            }
            for d in scenarios::cusum_detectors(p)? {
                for (name, stream) in &streams {
                    let path = sub.join(format!("{name}_eps{}.csv", d.epsilon));
                    let mut record = run_detector(&d, stream);
                    if *name == "shifted" {
                        if let Some(tau) = record.tau {
                            record.trace.truncate(tau);
                        }
                    }
                    write_trace_csv(create(&path)?, &record)?;
                    written.push(path);
                }
            }
        }
        _ => {}
    }
    Ok(written)
}

/// `(name, description)` of every scenario.
pub fn list_scenarios() -> Vec<(&'static str, &'static str)> {
    SCENARIOS
        .iter()
        .map(|n| {
            let s = Scenario::by_name(n).expect("known scenario");
            (*n, s.description())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_for_every_scenario() {
        for name in SCENARIOS {
            let mut cfg = ExperimentConfig::for_scenario(name).unwrap();
            cfg.replicates = 2;
            match &mut cfg.scenario {
                Scenario::VolterraSpectral(_) => cfg.sample_sizes = vec![4096],
                Scenario::CusumFar(p) => {
                    p.delay_cap = 1000;
                    p.horizon = 100;
                }
                Scenario::DispatchAccuracy(_) => cfg.sample_sizes = vec![500],
                _ => {}
            }
            let out = run_experiment(&cfg, Some(1)).unwrap();
            assert!(!out.records.is_empty(), "{name}");
            assert!(out.records.iter().all(|r| r.scenario == name));
        }
    }

    #[test]
    fn artifacts_match_the_run() {
        use crate::signals::{read_csv, read_f64le};
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::for_scenario("volterra-spectral").unwrap();
        cfg.replicates = 1;
        cfg.sample_sizes = vec![2048];
        let files = write_artifacts(&cfg, dir.path()).unwrap();
        let Scenario::VolterraSpectral(p) = &cfg.scenario else { unreachable!() };
        let source = crate::signals::generate(&scenarios::spectral_source(p, 0, 0, 2048, 0)).unwrap();
        let stem = dir.path().join("signals").join(format!("{}_2048_source", p.signals[0].name()));
        let from_csv = read_csv(std::fs::File::open(stem.with_extension("csv")).unwrap()).unwrap();
        let from_raw = read_f64le(std::fs::File::open(stem.with_extension("f64")).unwrap()).unwrap();
        assert_eq!(from_csv, source);
        assert_eq!(from_raw, source);
        assert!(files.len() >= 2 * (2 + p.methods.len()));

        let mut cfg = ExperimentConfig::for_scenario("cusum-far").unwrap();
        if let Scenario::CusumFar(p) = &mut cfg.scenario {
            p.horizon = 200;
            p.change_at = Some(50);
            p.delay_cap = 100;
        }
        let files = write_artifacts(&cfg, dir.path()).unwrap();
        assert!(files.iter().any(|f| f.to_string_lossy().contains("quiet_eps")));
        let quiet = std::fs::read_to_string(files.iter().find(|f| f.to_string_lossy().contains("quiet")).unwrap()).unwrap();
        assert_eq!(quiet.lines().next(), Some("n,T_n,fired"));
        assert_eq!(quiet.lines().count(), 201);
    }

    #[test]
    fn seeds_follow_xor_rule() {
        let mut cfg = ExperimentConfig::for_scenario("g2-validation").unwrap();
        cfg.replicates = 3;
        cfg.base_seed = 0b1010;
        cfg.sample_sizes = vec![50];
        let out = run_experiment(&cfg, Some(2)).unwrap();
        let seeds: Vec<u64> = out.records.iter().filter(|r| r.estimator == "mean").map(|r| r.seed).collect();
        assert_eq!(seeds, vec![10, 11, 8]);
    }
}
