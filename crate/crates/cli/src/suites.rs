//! Experiment suites behind each subcommand.

use std::collections::BTreeMap;

use poisson_chaos::chaos::{
    clt_criterion, families, single_clt_check, CriterionReport, FourthMomentForm, FourthMomentTerms, I2Evaluator,
    SequenceVerdict, SingleVerdict,
};
use poisson_chaos::hazard::{
    cumulative_hazard_moments, thm7_normalization, thm7_stat_of, thm7_target, thm8_constants,
    thm8_raw_variance_cumulant, thm8_stat_of, truncation_bias, HazardModel, Thm7Case, Thm8Variant, BETA_EPSILON, EXTENDED_GAMMA_EPSILON,
};
use poisson_chaos::kernels::{HazardKernel, Kernel};
use poisson_chaos::mc::{run_experiment, Experiment, ExperimentReport, Quantity, Rule, Target};
use poisson_chaos::ou_levy::{linear_variance, OuConfig, OuModel};
use poisson_chaos::point_process::{sample_pattern, ControlMeasure, PointPattern, Window};
use serde::Serialize;

use crate::settings::{HazardJob, Job, Settings};
use crate::CliError;

#[derive(Debug, Clone, Copy)]
pub struct RunParams {
    pub reps: usize,
    pub seed: u64,
    pub workers: usize,
}

/// An experiment report plus the derived reference values printed next to it.
#[derive(Debug, Clone)]
pub struct Suite {
    pub report: ExperimentReport,
    /// targets in verdict order
    pub targets: Vec<Target>,
    /// horizon `T` or block count `n`
    pub size: f64,
    pub reference: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionRun {
    pub family: String,
    pub lambda: f64,
    pub reports: Vec<CriterionReport>,
    pub sequence: Option<SequenceVerdict>,
    pub single: Option<SingleVerdict>,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Experiment(Suite),
    Criterion(CriterionRun),
    Pattern(PointPattern),
}

impl Outcome {
    pub fn passed(&self) -> bool {
        match self {
            Outcome::Experiment(s) => s.report.passed(),
            Outcome::Criterion(c) => c.pass,
            Outcome::Pattern(_) => true,
        }
    }
}

pub fn run(settings: &Settings) -> Result<Outcome, CliError> {
    let p = RunParams {
        reps: settings.reps,
        seed: settings.seed,
        workers: settings.workers,
    };
    let control = settings.control.clone();
    Ok(match &settings.job {
        Job::Criterion { family, indices, lambda } => Outcome::Criterion(criterion(family, indices, *lambda, control)?),
        Job::Block { n } => Outcome::Experiment(block(*n, p)?),
        Job::Ou { theorem, lambda, horizon } => Outcome::Experiment(ou(*theorem, *lambda, *horizon, control, p)?),
        Job::Hazard(HazardJob::Thm7 {
            case,
            tau,
            horizon,
            epsilon,
        }) => Outcome::Experiment(hazard_thm7(*case, *tau, *horizon, *epsilon, control, p)?),
        Job::Hazard(HazardJob::Thm8 { raw, tau, horizon }) => Outcome::Experiment(hazard_thm8(*raw, *tau, *horizon, control, p)?),
        Job::Sample { x_lo, x_hi } => {
            let c = control.unwrap_or_else(ControlMeasure::symmetric_bernoulli);
            let w = Window::time(*x_lo, *x_hi)?;
            Outcome::Pattern(sample_pattern(&c, &w, settings.seed)?)
        }
    })
}

fn var(series: &str) -> Quantity {
    Quantity::Variance { series: series.into() }
}

fn mean(series: &str) -> Quantity {
    Quantity::Mean { series: series.into() }
}

pub fn criterion(family: &str, indices: &[f64], lambda: f64, control: Option<ControlMeasure>) -> Result<CriterionRun, CliError> {
    let control = control.unwrap_or_else(ControlMeasure::symmetric_bernoulli);
    let as_count = |i: f64| {
        if i >= 1.0 && i.fract() == 0.0 {
            Ok(i as usize)
        } else {
            Err(CliError::Usage(format!("family `{family}` needs positive integer indices, got {i}")))
        }
    };
    let build = |i: f64| -> Result<Kernel, CliError> {
        Ok(match family {
            "block" => families::block(as_count(i)?)?,
            "fixed" => families::fixed_support()?,
            "block-single" => families::block_single(as_count(i)?)?,
            "ou-jt" => families::ou_jt(lambda, i, lambda.sqrt())?,
            "ou-jt-half" => families::ou_jt(lambda, i, (lambda / 2.0).sqrt())?,
            "ou-jt-raw" => families::ou_jt(lambda, i, 1.0)?,
            "ou-single" => families::ou_single_normalized(lambda, i)?,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown family `{other}` (block | fixed | ou-jt | ou-jt-half | ou-jt-raw | block-single | ou-single)"
                )))
            }
        })
    };
    let seq = indices.iter().map(|&i| Ok((i, build(i)?))).collect::<Result<Vec<_>, CliError>>()?;
    if matches!(family, "block-single" | "ou-single") {
        let v = single_clt_check(&seq, &control)?;
        return Ok(CriterionRun {
            family: family.into(),
            lambda,
            reports: Vec::new(),
            sequence: None,
            pass: v.pass,
            single: Some(v),
        });
    }
    let out = clt_criterion(&seq, &control)?;
    let pass = out.verdict.as_ref().is_some_and(|v| v.pass);
    Ok(CriterionRun {
        family: family.into(),
        lambda,
        reports: out.reports,
        sequence: out.verdict,
        single: None,
        pass,
    })
}

/// `I_2` of the block kernel: isometry, fourth moment and Gaussian distance.
pub fn block(n: usize, p: RunParams) -> Result<Suite, CliError> {
    let control = ControlMeasure::symmetric_bernoulli();
    let f = Kernel::block(n)?;
    let window = Window::time(0.0, n as f64)?;
    let ev = I2Evaluator::new(&f, &control, &window)?;
    let sampler = poisson_chaos::point_process::PatternSampler::new(&control, &window)?;
    let terms = FourthMomentTerms::compute(&f, &control)?;
    let nf = n as f64;
    let targets = [
        Target::new("mean = 0", mean("i2"), 0.0, Rule::StdErrors(4.0)),
        Target::new("variance = 2‖f‖²", var("i2"), terms.norm2_doubled, Rule::StdErrors(4.0)),
        Target::new(
            "fourth moment = 3 + 37/n",
            Quantity::FourthMoment { series: "i2".into() },
            terms.value(FourthMomentForm::Printed),
            Rule::Band(0.15),
        ),
        Target::new("KS to N(0,1) < 0.02", Quantity::Ks { series: "i2".into() }, 0.02, Rule::Below),
    ];
    let exp = Experiment {
        name: "block",
        series: &["i2"],
        ks_reference: &[1.0],
        reps: p.reps,
        master_seed: p.seed,
        workers: p.workers,
    };
    let report = run_experiment(&exp, &targets, |_, seed| Ok(vec![ev.eval(&sampler.sample(seed).atoms)?]))?;
    let reference = BTreeMap::from([
        ("fourth_moment_printed".to_string(), terms.value(FourthMomentForm::Printed)),
        ("fourth_moment_exact_identity".to_string(), terms.value(FourthMomentForm::Exact)),
        ("e_f4".to_string(), terms.e_f4()),
        ("e_f4_block_closed_form".to_string(), 3.0 + 50.0 / nf),
    ]);
    Ok(Suite {
        targets: targets.to_vec(),
        report,
        size: nf,
        reference,
    })
}

pub fn ou(theorem: u8, lambda: f64, horizon: f64, control: Option<ControlMeasure>, p: RunParams) -> Result<Suite, CliError> {
    let cfg = OuConfig::new(lambda, control.unwrap_or_else(ControlMeasure::symmetric_bernoulli), horizon)?;
    let model = OuModel::new(cfg)?;
    let lin_var = linear_variance(lambda, horizon);
    let root_t = horizon.sqrt();
    match theorem {
        4 => {
            let ev = model.linear_only()?;
            let targets = [
                Target::new("mean = 0", mean("linear"), 0.0, Rule::StdErrors(3.0)),
                Target::new("variance = finite-T closed form", var("linear"), lin_var, Rule::StdErrors(3.0)),
                Target::new("variance = 2/λ within 2%", var("linear"), 2.0 / lambda, Rule::Relative(0.02)),
            ];
            let exp = Experiment {
                name: "ou_theorem4",
                series: &["linear"],
                ks_reference: &[lin_var],
                reps: p.reps,
                master_seed: p.seed,
                workers: p.workers,
            };
            let report = run_experiment(&exp, &targets, |_, seed| Ok(vec![ev.linear(&model.sample(seed).atoms)?]))?;
            Ok(Suite {
        targets: targets.to_vec(),
                report,
                size: horizon,
                reference: BTreeMap::from([
                    ("finite_t_variance".to_string(), lin_var),
                    ("asymptotic_variance".to_string(), 2.0 / lambda),
                ]),
            })
        }
        5 | 6 => {
            let ev = model.evaluators()?;
            let c2 = model.cfg.c_nu_sq()?;
            let (v2, v1) = model.quadratic_variances()?;
            let limit = 1.0 / lambda + c2;
            let mut reference = BTreeMap::from([
                ("var_k2_finite_t".to_string(), v2),
                ("var_k1_finite_t".to_string(), v1),
                ("var_total_finite_t".to_string(), v1 + v2),
                ("var_k2_limit_derived".to_string(), 2.0 / lambda),
                ("var_total_limit_derived".to_string(), 2.0 / lambda + c2),
            ]);
            if theorem == 5 {
                let targets = [
                    Target::new("Var K2 = 1/λ", var("k2"), 1.0 / lambda, Rule::Band(0.1)),
                    Target::new("Var K1 = c_ν²", var("k1"), c2, Rule::Band(0.1)),
                    Target::new("Var(K2 + K1) = 1/λ + c_ν²", var("total"), limit, Rule::Band(0.15)),
                    Target::new(
                        "Cov(K2, K1) = 0",
                        Quantity::Covariance {
                            a: "k2".into(),
                            b: "k1".into(),
                        },
                        0.0,
                        Rule::StdErrors(4.0),
                    ),
                ];
                let exp = Experiment {
                    name: "ou_theorem5",
                    series: &["k2", "k1", "total"],
                    ks_reference: &[1.0 / lambda, c2, limit],
                    reps: p.reps,
                    master_seed: p.seed,
                    workers: p.workers,
                };
                let report = run_experiment(&exp, &targets, |_, seed| {
                    let q = ev.quadratic(&model.sample(seed).atoms)?;
                    Ok(vec![q.k2, q.k1, q.total])
                })?;
                Ok(Suite {
        targets: targets.to_vec(),
                    report,
                    size: horizon,
                    reference,
                })
            } else {
                let correction_mean = lin_var / root_t;
                reference.insert("correction_mean".to_string(), correction_mean);
                let targets = [
                    Target::new("sample-variance statistic variance = 1/λ + c_ν²", var("sample_variance"), limit, Rule::Band(0.15)),
                    Target::new("correction mean = Var(linear)/√T", mean("correction"), correction_mean, Rule::StdErrors(3.0)),
                ];
                let exp = Experiment {
                    name: "ou_theorem6",
                    series: &["sample_variance", "correction"],
                    ks_reference: &[limit, 1.0],
                    reps: p.reps,
                    master_seed: p.seed,
                    workers: p.workers,
                };
                let report = run_experiment(&exp, &targets, |_, seed| {
                    let atoms = model.sample(seed).atoms;
                    Ok(vec![ev.sample_variance(&atoms)?, ev.correction(&atoms)?])
                })?;
                Ok(Suite {
        targets: targets.to_vec(),
                    report,
                    size: horizon,
                    reference,
                })
            }
        }
        other => Err(CliError::Usage(format!("ou theorem {other} (expected 4, 5 or 6)"))),
    }
}

pub fn hazard_model(case: Thm7Case, tau: f64, horizon: f64, epsilon: Option<f64>, control: Option<ControlMeasure>) -> Result<HazardModel, CliError> {
    Ok(match case {
        Thm7Case::Homogeneous => HazardModel::new(
            HazardKernel::Rect { tau },
            control.unwrap_or_else(|| ControlMeasure::dirac(1.0).expect("unit jump")),
            horizon,
        )?,
        Thm7Case::ExtendedGamma | Thm7Case::Beta if control.is_some() => {
            return Err(CliError::Usage(format!("case {} fixes its own control; drop the [control] section", case.index())))
        }
        Thm7Case::ExtendedGamma if tau == 1.0 => HazardModel::extended_gamma_case(horizon, epsilon.unwrap_or(EXTENDED_GAMMA_EPSILON))?,
        Thm7Case::Beta if tau == 1.0 => HazardModel::beta_case(horizon, epsilon.unwrap_or(BETA_EPSILON))?,
        _ => return Err(CliError::Usage(format!("case {} is stated for tau = 1", case.index()))),
    })
}

/// Standardized cumulative hazard. Variance tolerances per case: 0.3, 0.8, 1.0.
pub fn hazard_thm7(case: u8, tau: f64, horizon: f64, epsilon: Option<f64>, control: Option<ControlMeasure>, p: RunParams) -> Result<Suite, CliError> {
    let case = poisson_chaos::hazard::Thm7Case::from_index(case)?;
    let model = hazard_model(case, tau, horizon, epsilon, control)?;
    let target = thm7_target(case, &model)?;
    let (center, scale) = thm7_normalization(case, &model)?;
    let (h_mean, h_var) = cumulative_hazard_moments(&model)?;
    let (cut_mean, cut_var) = truncation_bias(&model)?;
    let tol = match case {
        Thm7Case::Homogeneous => 0.3,
        Thm7Case::ExtendedGamma => 0.8,
        Thm7Case::Beta => 1.0,
    };
    let mut targets = vec![Target::new("variance", var("h"), target, Rule::Band(tol))];
    if case == Thm7Case::Homogeneous {
        targets.push(Target::new("KS to N(0, target) < 0.03", Quantity::Ks { series: "h".into() }, 0.03, Rule::Below));
    }
    let sampler = model.sampler()?;
    let name = format!("hazard_theorem7_case{}", case.index());
    let exp = Experiment {
        name: &name,
        series: &["h"],
        ks_reference: &[target],
        reps: p.reps,
        master_seed: p.seed,
        workers: p.workers,
    };
    let report = run_experiment(&exp, &targets, |_, seed| {
        Ok(vec![thm7_stat_of(&model, case, &sampler.sample(seed).atoms)?])
    })?;
    let mc_mean = report.series("h").map(|s| s.mean).unwrap_or(f64::NAN);
    let reference = BTreeMap::from([
        ("empirical_centering".to_string(), center + scale * mc_mean),
        ("stated_centering".to_string(), center),
        ("scale".to_string(), scale),
        ("campbell_mean".to_string(), h_mean),
        ("campbell_variance".to_string(), h_var),
        ("finite_t_statistic_variance".to_string(), h_var / (scale * scale)),
        ("finite_t_statistic_mean".to_string(), (h_mean - center) / scale),
        ("truncation_epsilon".to_string(), model.control.epsilon()),
        ("neglected_mean".to_string(), cut_mean / scale),
        ("neglected_variance".to_string(), cut_var / (scale * scale)),
    ]);
    Ok(Suite {
        targets: targets.to_vec(),
        report,
        size: horizon,
        reference,
    })
}

pub fn hazard_thm8(raw: bool, tau: f64, horizon: f64, control: Option<ControlMeasure>, p: RunParams) -> Result<Suite, CliError> {
    let model = HazardModel::new(
        HazardKernel::Rect { tau },
        control.unwrap_or_else(|| ControlMeasure::dirac(1.0).expect("unit jump")),
        horizon,
    )?;
    let variant = if raw { Thm8Variant::Raw } else { Thm8Variant::Centered };
    let (center, c) = thm8_constants(&model, variant)?;
    let tol = if raw { 4.0 } else { 1.5 };
    let targets = [Target::new("variance", var("q"), c, Rule::Band(tol))];
    let sampler = model.sampler()?;
    let name = if raw { "hazard_theorem8_raw" } else { "hazard_theorem8_centered" };
    let exp = Experiment {
        name,
        series: &["q"],
        ks_reference: &[c],
        reps: p.reps,
        master_seed: p.seed,
        workers: p.workers,
    };
    let report = run_experiment(&exp, &targets, |_, seed| Ok(vec![thm8_stat_of(&model, variant, &sampler.sample(seed).atoms)?]))?;
    let mut reference = BTreeMap::from([("centering".to_string(), center), ("stated_variance".to_string(), c)]);
    if raw {
        reference.insert("cumulant_variance".to_string(), thm8_raw_variance_cumulant(&model)?);
    }
    Ok(Suite {
        targets: targets.to_vec(),
        report,
        size: horizon,
        reference,
    })
}
