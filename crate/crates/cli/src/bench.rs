use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ris_core::baseline::ao_optimize;
use ris_core::policy::{infer, MLPParams};
use ris_core::transmit::ChannelSet;

use crate::{CliError, Result, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub name: String,
    /// Mean weighted sum rate, bits/s/Hz.
    pub mean_wsr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub name: String,
    /// Mean wall clock per sample, seconds.
    pub seconds_per_sample: f64,
}

/// Deterministic part of a report: identical for identical inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResults {
    pub samples: usize,
    pub config_hash: String,
    pub methods: Vec<MethodResult>,
    /// Mean DNN rate over mean rate of the longer AO run.
    pub dnn_over_ao_long: f64,
    /// Every AO trace on every sample is non-decreasing.
    pub ao_traces_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub methods: Vec<MethodTiming>,
    /// DNN timing is the median of this many warm passes.
    pub dnn_repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub results: BenchmarkResults,
    pub timing: Timing,
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len() as f64;
    v.sum::<f64>() / n
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

struct AoSample {
    short: f64,
    long: f64,
    monotone: bool,
    short_secs: f64,
    long_secs: f64,
}

fn run_ao(config: &RunConfig, ch: &ChannelSet) -> Result<AoSample> {
    let start = Instant::now();
    let short = ao_optimize(ch, &config.ao_config(config.ao_short))?;
    let short_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let long = ao_optimize(ch, &config.ao_config(config.ao_long))?;
    let long_secs = start.elapsed().as_secs_f64();
    let monotone = [&short.trace, &long.trace].iter().all(|t| t.windows(2).all(|w| w[1] >= w[0]));
    Ok(AoSample { short: short.objective, long: long.objective, monotone, short_secs, long_secs })
}

/// Evaluates the policy and both AO runs on every test sample.
pub fn benchmark(config: &RunConfig, params: &MLPParams, test: &[ChannelSet]) -> Result<BenchmarkReport> {
    config.validate()?;
    if test.is_empty() {
        return Err(CliError::Invalid("empty test set".into()));
    }
    if let Some(ch) = test.iter().find(|ch| ch.dims() != params.dims()) {
        return Err(CliError::Invalid(format!("network for {:?}, test sample {:?}", params.dims(), ch.dims())));
    }
    let run_dnn = || -> Result<Vec<f64>> { test.iter().map(|ch| Ok(infer(params, ch)?.weighted_sum_rate(&ch.user_weight))).collect() };
    // the first pass warms caches and provides the values
    let dnn = run_dnn()?;
    let mut passes = Vec::with_capacity(config.dnn_repeats);
    for _ in 0..config.dnn_repeats {
        let start = Instant::now();
        std::hint::black_box(run_dnn()?);
        passes.push(start.elapsed().as_secs_f64() / test.len() as f64);
    }
    let ao = test.par_iter().map(|ch| run_ao(config, ch)).collect::<Result<Vec<_>>>()?;

    let dnn_mean = mean(dnn.iter().copied());
    let short_mean = mean(ao.iter().map(|a| a.short));
    let long_mean = mean(ao.iter().map(|a| a.long));
    let names = ["DNN".to_string(), format!("AO-{}", config.ao_short), format!("AO-{}", config.ao_long)];
    let results = BenchmarkResults {
        samples: test.len(),
        config_hash: config.hash(),
        methods: names.iter().zip([dnn_mean, short_mean, long_mean]).map(|(n, m)| MethodResult { name: n.clone(), mean_wsr: m }).collect(),
        dnn_over_ao_long: dnn_mean / long_mean,
        ao_traces_monotone: ao.iter().all(|a| a.monotone),
    };
    let secs = [median(passes), mean(ao.iter().map(|a| a.short_secs)), mean(ao.iter().map(|a| a.long_secs))];
    let timing = Timing {
        methods: names.iter().zip(secs).map(|(n, s)| MethodTiming { name: n.clone(), seconds_per_sample: s }).collect(),
        dnn_repeats: config.dnn_repeats,
    };
    Ok(BenchmarkReport { results, timing })
}

/// Aligned text table of a report.
pub fn render_table(report: &BenchmarkReport) -> String {
    let mut out = format!("{:<8} {:>22} {:>20}\n", "method", "mean WSR (bits/s/Hz)", "time/sample (ms)");
    for (m, t) in report.results.methods.iter().zip(&report.timing.methods) {
        out.push_str(&format!("{:<8} {:>22.4} {:>20.4}\n", m.name, m.mean_wsr, t.seconds_per_sample * 1e3));
    }
    out.push_str(&format!(
        "samples {}  DNN/{} {:.4}  config {}\n",
        report.results.samples,
        report.results.methods[2].name,
        report.results.dnn_over_ao_long,
        &report.results.config_hash[..12]
    ));
    out
}
