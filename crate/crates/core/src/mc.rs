//! Replicated Monte Carlo experiments: seeding, parallel execution,
//! summaries with standard errors, KS distances, log-log slopes and verdicts.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Error, Result};
use crate::rng::derive_seed;
use crate::special::normal_cdf;

/// Runs `stat(index, seed)` for `index in 0..reps` on `workers` threads.
///
/// Seeds depend only on `(master_seed, index)` and results come back in index
/// order, so the output does not depend on the worker count. On failure the
/// error of the lowest failing index is returned.
pub fn replicate<T, F>(reps: usize, master_seed: u64, workers: usize, stat: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, u64) -> Result<T> + Sync,
{
    let run = |i: usize| {
        let index = i as u64;
        let seed = derive_seed(master_seed, index);
        stat(index, seed).map_err(|e| Error::Replication {
            index,
            seed,
            source: Box::new(e),
        })
    };
    let results: Vec<Result<T>> = if workers <= 1 {
        (0..reps).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?;
        pool.install(|| (0..reps).into_par_iter().map(run).collect())
    };
    results.into_iter().collect()
}

/// Kolmogorov distance between the empirical CDF of `samples` and `N(0, variance)`.
pub fn ks_statistic(samples: &[f64], variance: f64) -> Result<f64> {
    ks_distance(samples, 0.0, variance)
}

/// Kolmogorov distance between the empirical CDF of `samples` and `N(mean, variance)`.
pub fn ks_distance(samples: &[f64], mean: f64, variance: f64) -> Result<f64> {
    if !mean.is_finite() {
        return Err(invalid("mean", format!("{mean} is not finite")));
    }
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("{} samples", samples.len())));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(invalid("variance", format!("{variance} must be positive")));
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let sd = variance.sqrt();
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = normal_cdf((x - mean) / sd);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    /// 95% confidence half-width of the slope
    pub half_width: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn slope_fit(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() {
        return Err(invalid("y", format!("{} x values but {} y values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!("{} points; need at least 3", x.len())));
    }
    if let Some(i) = x.iter().zip(y).position(|(a, b)| !(*a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite())) {
        return Err(invalid("y", format!("point {i} is not positive: ({}, {})", x[i], y[i])));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("x", "all x values are equal"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let dof = n - 2.0;
    let se = (rss / dof / sxx).sqrt();
    let t = if dof > 0.0 {
        StudentsT::new(0.0, 1.0, dof)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    Ok(SlopeFit {
        slope,
        half_width: t * se,
        intercept,
        points: x.len(),
    })
}

/// Sample variance (denominator `n - 1`) and its leave-one-out jackknife standard error.
pub fn jackknife_variance(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} samples")));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let var = ss / (nf - 1.0);
    // removing x_i changes the centered sum of squares by n/(n-1) (x_i - mean)^2
    let loo: Vec<f64> = x
        .iter()
        .map(|v| (ss - nf / (nf - 1.0) * (v - mean).powi(2)) / (nf - 2.0))
        .collect();
    let lm = loo.iter().sum::<f64>() / nf;
    let jk = ((nf - 1.0) / nf * loo.iter().map(|v| (v - lm).powi(2)).sum::<f64>()).sqrt();
    Ok((var, jk))
}

/// Sample covariance and a plug-in standard error from the products of deviations.
pub fn covariance_with_se(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InsufficientData(format!("{} and {} samples", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let cov = prods.iter().sum::<f64>() / (n - 1.0);
    let pm = prods.iter().sum::<f64>() / n;
    let pv = prods.iter().map(|p| (p - pm).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((cov, (pv / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    /// `E[X^4]` about zero, with standard error
    pub fourth_moment: f64,
    pub fourth_moment_se: f64,
    /// KS distance to `N(0, ks_reference)`
    pub ks: f64,
    pub ks_reference: f64,
}

pub fn summarize(values: &[f64], ks_reference: f64) -> Result<Summary> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let n = values.len();
    let (variance, variance_se) = jackknife_variance(values)?;
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let central = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / nf;
    let m2 = central(2);
    let (skewness, kurtosis) = if m2 > 0.0 {
        (central(3) / m2.powf(1.5), central(4) / (m2 * m2))
    } else {
        (0.0, 0.0)
    };
    let f4: Vec<f64> = values.iter().map(|v| v.powi(4)).collect();
    let fourth_moment = f4.iter().sum::<f64>() / nf;
    let f4_var = f4.iter().map(|v| (v - fourth_moment).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(Summary {
        n,
        mean,
        mean_se: (variance / nf).sqrt(),
        variance,
        variance_se,
        skewness,
        kurtosis,
        fourth_moment,
        fourth_moment_se: (f4_var / nf).sqrt(),
        ks: ks_statistic(values, ks_reference)?,
        ks_reference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Quantity {
    Mean { series: String },
    Variance { series: String },
    FourthMoment { series: String },
    Ks { series: String },
    Covariance { a: String, b: String },
    /// computed outside the Monte Carlo loop
    Exact { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum Rule {
    /// `|est - target| <= tol` and `|est - target| <= 3 se`
    Band(f64),
    /// `|est - target| <= tol * |target|` and `|est - target| <= 3 se`
    Relative(f64),
    /// `|est - target| <= k se`
    StdErrors(f64),
    /// `est < target`
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub label: String,
    pub quantity: Quantity,
    pub value: f64,
    pub rule: Rule,
}

impl Target {
    pub fn new(label: impl Into<String>, quantity: Quantity, value: f64, rule: Rule) -> Self {
        Self {
            label: label.into(),
            quantity,
            value,
            rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub target: f64,
    pub rule: Rule,
    pub within_tolerance: bool,
    pub within_3se: bool,
    pub pass: bool,
}

impl Verdict {
    pub fn judge(label: impl Into<String>, estimate: f64, se: f64, target: f64, rule: Rule) -> Self {
        let gap = (estimate - target).abs();
        let within_3se = gap <= 3.0 * se;
        let within_tolerance = match rule {
            Rule::Band(tol) => gap <= tol,
            Rule::Relative(tol) => gap <= tol * target.abs(),
            Rule::StdErrors(k) => gap <= k * se,
            Rule::Below => estimate < target,
        };
        let pass = estimate.is_finite()
            && match rule {
                Rule::Band(_) | Rule::Relative(_) => within_tolerance && (within_3se || se == 0.0),
                Rule::StdErrors(_) | Rule::Below => within_tolerance,
            };
        Self {
            label: label.into(),
            estimate,
            se,
            target,
            rule,
            within_tolerance,
            within_3se,
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub name: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub reps: usize,
    pub master_seed: u64,
    pub series: Vec<SeriesSummary>,
    pub verdicts: Vec<Verdict>,
    #[serde(skip)]
    pub values: Vec<Vec<f64>>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn series(&self, name: &str) -> Option<&Summary> {
        self.series.iter().find(|s| s.name == name).map(|s| &s.summary)
    }

    pub fn values_of(&self, name: &str) -> Option<&[f64]> {
        let i = self.series.iter().position(|s| s.name == name)?;
        self.values.get(i).map(Vec::as_slice)
    }

    /// Adds a verdict for a quantity known without simulation.
    pub fn push_exact(&mut self, label: impl Into<String>, estimate: f64, target: f64, rule: Rule) {
        self.verdicts.push(Verdict::judge(label, estimate, 0.0, target, rule));
    }

    /// `replication_index,<series...>` rows.
    pub fn write_values_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["replication_index".to_string()];
        header.extend(self.series.iter().map(|s| s.name.clone()));
        w.write_record(&header)?;
        for i in 0..self.reps {
            let mut row = vec![i.to_string()];
            row.extend(self.values.iter().map(|v| format!("{:e}", v[i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Specification of a vector-valued experiment.
pub struct Experiment<'a> {
    pub name: &'a str,
    pub series: &'a [&'a str],
    /// reference variance per series for the KS distance
    pub ks_reference: &'a [f64],
    pub reps: usize,
    pub master_seed: u64,
    pub workers: usize,
}

pub fn run_experiment<F>(exp: &Experiment<'_>, targets: &[Target], stat: F) -> Result<ExperimentReport>
where
    F: Fn(u64, u64) -> Result<Vec<f64>> + Sync,
{
    if exp.reps < 100 {
        return Err(invalid("reps", format!("{} replications; need at least 100", exp.reps)));
    }
    if exp.ks_reference.len() != exp.series.len() {
        return Err(invalid("ks_reference", "one reference variance per series"));
    }
    let start = Instant::now();
    let k = exp.series.len();
    let rows = replicate(exp.reps, exp.master_seed, exp.workers, |i, seed| {
        let v = stat(i, seed)?;
        if v.len() != k {
            return Err(invalid("statistic", format!("returned {} values, expected {k}", v.len())));
        }
        Ok(v)
    })?;
    let values: Vec<Vec<f64>> = (0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut series = Vec::with_capacity(k);
    for (j, name) in exp.series.iter().enumerate() {
        series.push(SeriesSummary {
            name: name.to_string(),
            summary: summarize(&values[j], exp.ks_reference[j])?,
        });
    }
    let mut report = ExperimentReport {
        name: exp.name.to_string(),
        reps: exp.reps,
        master_seed: exp.master_seed,
        series,
        verdicts: Vec::new(),
        values,
        wall_time: Duration::ZERO,
    };
    for t in targets {
        let (est, se) = estimate(&report, &t.quantity)?;
        report.verdicts.push(Verdict::judge(t.label.clone(), est, se, t.value, t.rule));
    }
    report.wall_time = start.elapsed();
    Ok(report)
}

fn estimate(report: &ExperimentReport, q: &Quantity) -> Result<(f64, f64)> {
    let get = |name: &str| {
        report
            .series(name)
            .ok_or_else(|| invalid("target", format!("unknown series `{name}`")))
    };
    Ok(match q {
        Quantity::Mean { series } => {
            let s = get(series)?;
            (s.mean, s.mean_se)
        }
        Quantity::Variance { series } => {
            let s = get(series)?;
            (s.variance, s.variance_se)
        }
        Quantity::FourthMoment { series } => {
            let s = get(series)?;
            (s.fourth_moment, s.fourth_moment_se)
        }
        Quantity::Ks { series } => (get(series)?.ks, 0.0),
        Quantity::Covariance { a, b } => {
            let x = report.values_of(a).ok_or_else(|| invalid("target", format!("unknown series `{a}`")))?;
            let y = report.values_of(b).ok_or_else(|| invalid("target", format!("unknown series `{b}`")))?;
            covariance_with_se(x, y)?
        }
        Quantity::Exact { name } => return Err(invalid("target", format!("`{name}` is not a Monte Carlo quantity"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ks_of_constant_is_half() {
        assert!((ks_statistic(&vec![0.0; 50], 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_of_exact_quantiles() {
        let n = 200;
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (1..=n).map(|i| normal.inverse_cdf((i as f64 - 0.5) / n as f64)).collect();
        let d = ks_statistic(&xs, 1.0).unwrap();
        assert!((d - 0.5 / n as f64).abs() < 1e-9, "{d}");
    }

    #[test]
    fn ks_rejects_wrong_variance() {
        let mut rng = crate::rng::rng_from_seed(3);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * 2f64.sqrt()
            })
            .collect();
        let d = ks_statistic(&xs, 1.0).unwrap();
        // sup_x |Φ(x/√2) − Φ(x)| by grid search, and at its stationary point x = sqrt(2 ln 2)
        let gap = (0..200_000)
            .map(|i| {
                let x = i as f64 * 1e-4;
                normal_cdf(x) - normal_cdf(x / 2f64.sqrt())
            })
            .fold(0.0, f64::max);
        let x = (2.0 * 2f64.ln()).sqrt();
        let closed = normal_cdf(x) - normal_cdf(x / 2f64.sqrt());
        assert!((gap - closed).abs() < 1e-8, "{gap} vs {closed}");
        assert!((d - closed).abs() < 0.015, "{d}");
        assert!(ks_statistic(&[f64::NAN, 1.0], 1.0).is_err());
    }

    #[test]
    fn slopes() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let f = slope_fit(&x, &x.map(|v| 3.0 / v)).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12 && f.half_width < 1e-6);
        let f = slope_fit(&x, &x.map(|v| 3.0 / v.sqrt())).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!(slope_fit(&x, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(slope_fit(&x[..2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn jackknife_matches_direct_leave_one_out() {
        let x = [0.3, -1.2, 2.5, 0.7, 0.1, -0.4];
        let (v, se) = jackknife_variance(&x).unwrap();
        let var = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (s.len() as f64 - 1.0)
        };
        assert!((v - var(&x)).abs() < 1e-14);
        let loo: Vec<f64> = (0..x.len())
            .map(|i| {
                let s: Vec<f64> = x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, a)| *a).collect();
                var(&s)
            })
            .collect();
        let n = x.len() as f64;
        let m = loo.iter().sum::<f64>() / n;
        let want = ((n - 1.0) / n * loo.iter().map(|a| (a - m).powi(2)).sum::<f64>()).sqrt();
        assert!((se - want).abs() < 1e-13);
    }

    #[test]
    fn zero_statistic_report() {
        let exp = Experiment {
            name: "zero",
            series: &["x"],
            ks_reference: &[1.0],
            reps: 100,
            master_seed: 1,
            workers: 1,
        };
        let r = run_experiment(&exp, &[], |_, _| Ok(vec![0.0])).unwrap();
        let s = r.series("x").unwrap();
        assert_eq!((s.mean, s.variance), (0.0, 0.0));
        assert!((s.ks - 0.5).abs() < 1e-15);
    }

    #[test]
    fn failures_report_lowest_index() {
        let err = replicate(50, 9, 4, |i, _| if i % 7 == 3 { Err(Error::NonFinite(i as usize)) } else { Ok(i) }).unwrap_err();
        match err {
            Error::Replication { index, seed, .. } => {
                assert_eq!(index, 3);
                assert_eq!(seed, derive_seed(9, 3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn verdict_rules() {
        assert!(Verdict::judge("a", 1.05, 0.03, 1.0, Rule::Band(0.1)).pass);
        assert!(!Verdict::judge("a", 1.05, 0.01, 1.0, Rule::Band(0.1)).pass);
        assert!(!Verdict::judge("a", 1.2, 0.1, 1.0, Rule::Band(0.1)).pass);
        assert!(Verdict::judge("ks", 0.01, 0.0, 0.02, Rule::Below).pass);
        assert!(Verdict::judge("e", 1.01, 0.0, 1.0, Rule::Relative(0.02)).pass);
    }
}
