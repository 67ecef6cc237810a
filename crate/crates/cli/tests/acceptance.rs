//! Acceptance checks. Prints one `PASS` / `FAIL` line per check and exits
//! non-zero if any check fails. Lines tagged `diag` assert derived reference
//! values next to the stated targets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use poisson_chaos::chaos::{
    charlier_block_oracle, eval_i1, eval_i2, families, fourth_moment_chaos, FourthMomentForm, FourthMomentTerms,
};
use poisson_chaos::contractions::{contraction_norms, product_expand, star, Contraction, ContractionIndex};
use poisson_chaos::hazard::{cumulative_hazard_moments, thm7_normalization, thm7_target, Thm7Case};
use poisson_chaos::kernels::{l2_norm_sq, norm_estimate, symmetrize, GridKernel, Kernel, Route};
use poisson_chaos::mc::slope_fit;
use poisson_chaos::ou_levy::linear_variance;
use poisson_chaos::point_process::{sample_pattern, ControlMeasure, Window};
use poisson_chaos_cli::output::embedded_config;
use poisson_chaos_cli::suites::{self, RunParams, Suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_917;
const EXACT_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-9;
const SLOPE_BAND: (f64, f64) = (-1.2, -0.8);
const CORRECTION_SLOPE: f64 = -0.5;
const CORRECTION_SLOPE_TOL: f64 = 0.1;
const HAZARD_SLOW_REPS: usize = 1000;

struct Board {
    lines: Vec<(String, bool)>,
}

impl Board {
    fn check(&mut self, criterion: &str, what: &str, pass: bool, detail: String) {
        let line = format!("{} [{criterion}] {what}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((line, pass));
    }

    /// Records every verdict of a suite whose label is in `labels` (all verdicts when empty).
    fn suite(&mut self, criterion: &str, suite: &Suite, labels: &[&str]) {
        for v in &suite.report.verdicts {
            if labels.is_empty() || labels.contains(&v.label.as_str()) {
                let detail = format!("estimate {:.5} ± {:.5}, target {:.5}", v.estimate, v.se, v.target);
                self.check(criterion, &format!("{} {}", suite.report.name, v.label), v.pass, detail);
            }
        }
    }
}

fn params(reps: usize) -> RunParams {
    RunParams {
        reps,
        seed: SEED,
        workers: 0,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn reference(s: &Suite, key: &str) -> f64 {
    s.reference[key]
}

fn main() {
    let mut b = Board { lines: Vec::new() };
    criterion_1(&mut b);
    criterion_2(&mut b);
    criterion_3(&mut b);
    criterion_4(&mut b);
    criterion_5(&mut b);
    criterion_6(&mut b);
    criterion_7(&mut b);
    criterion_8(&mut b);
    criterion_9(&mut b);
    criterion_10(&mut b);

    let failed: Vec<&str> = b.lines.iter().filter(|(_, p)| !p).map(|(l, _)| l.as_str()).collect();
    println!("\nacceptance: {}/{} checks passed", b.lines.len() - failed.len(), b.lines.len());
    if !failed.is_empty() {
        println!("failing checks:");
        for l in &failed {
            println!("  {l}");
        }
        std::process::exit(1);
    }
}

fn criterion_1(b: &mut Board) {
    let c = ControlMeasure::symmetric_bernoulli();
    let mut worst: f64 = 0.0;
    for n in [1usize, 5, 50, 500] {
        let f = Kernel::block(n).unwrap();
        let norms = contraction_norms(&f, &c).unwrap();
        let q = 0.25 / n as f64;
        worst = worst
            .max((2.0 * l2_norm_sq(&f, &c).unwrap() - 1.0).abs())
            .max(rel(norms.n11, q))
            .max(rel(norms.n21, q));
    }
    b.check("1", "block kernel 2‖f‖² = 1, ‖⋆₁¹‖² = ‖⋆₂¹‖² = 1/(4n)", worst <= EXACT_TOL, format!("max error {worst:.2e}"));

    let n = 50;
    let f = Kernel::block(n).unwrap();
    let blocks: Vec<Window> = (0..n).map(|j| Window::time(j as f64, j as f64 + 1.0).unwrap()).collect();
    let w = Window::time(0.0, n as f64).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..500 {
        let p = sample_pattern(&c, &w, seed).unwrap();
        let a = eval_i2(&f, &p, &c).unwrap();
        let o = charlier_block_oracle(&p, &blocks, &c).unwrap();
        worst = worst.max((a - o).abs());
    }
    b.check("1", "eval_I2 equals the Charlier oracle on 500 paths", worst <= IDENTITY_TOL, format!("max |Δ| {worst:.2e}"));

    // route A: the library's fourth-moment value; route B: contractions rebuilt with `star`
    // and normed on an independent route (grid sums for blocks, quadrature for the OU kernel)
    let mut worst: f64 = 0.0;
    let mut cases: Vec<Kernel> = [1usize, 5, 50].iter().map(|&n| Kernel::block(n).unwrap()).collect();
    cases.push(families::ou_jt(1.0, 10.0, 1.0).unwrap());
    for f in &cases {
        let a = fourth_moment_chaos(f, &c, FourthMomentForm::Printed).unwrap();
        let route = if matches!(f.family(), "block") { None } else { Some(Route::Quadrature) };
        let norm = |r: usize, l: usize| match star(f, f, ContractionIndex::new(r, l), &c).unwrap() {
            Contraction::Kernel(k) => norm_estimate(&k, 2, &c, route).unwrap().value,
            other => other.norm_sq(&c).unwrap(),
        };
        let n2 = 2.0 * norm_estimate(f, 2, &c, route).unwrap().value;
        let recomputed = 3.0 * n2 * n2 + 48.0 * norm(1, 1) + 96.0 * norm(1, 0) + 4.0 * norm(2, 1);
        worst = worst.max(rel(a, recomputed));
    }
    b.check("1", "fourth-moment identity recomputed two ways", worst <= IDENTITY_TOL, format!("max relative gap {worst:.2e}"));
    let mut worst: f64 = 0.0;
    for n in [1usize, 5, 50] {
        let v = fourth_moment_chaos(&Kernel::block(n).unwrap(), &c, FourthMomentForm::Printed).unwrap();
        worst = worst.max((v - (3.0 + 37.0 / n as f64)).abs());
    }
    b.check("1", "block fourth-moment identity value 3 + 37/n", worst <= EXACT_TOL, format!("max error {worst:.2e}"));

    // pathwise I1(g) I1(h) = I2(g ⊗ h) + I1(gh) + ⟨g, h⟩ on a shared grid
    let cells: Vec<Window> = (0..6).map(|j| Window::new(-2.0, 2.0, j as f64 * 0.5, (j + 1) as f64 * 0.5).unwrap()).collect();
    let w = Window::time(0.0, 3.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let g = Kernel::grid(GridKernel::arity1(cells.clone(), (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap());
        let h = Kernel::grid(GridKernel::arity1(cells.clone(), (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap());
        let e = product_expand(1, 1, &g, &h, &c).unwrap();
        let p = sample_pattern(&c, &w, 1000 + trial).unwrap();
        let lhs = eval_i1(&g, &p, &c).unwrap() * eval_i1(&h, &p, &c).unwrap();
        let mut rhs = e.constant;
        for t in &e.terms {
            let k = t.kernel.kernel().unwrap();
            rhs += t.coefficient * if t.order == 2 { eval_i2(k, &p, &c).unwrap() } else { eval_i1(k, &p, &c).unwrap() };
        }
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    b.check("1", "pathwise product formula p = q = 1 on aligned grids", worst <= IDENTITY_TOL, format!("max relative gap {worst:.2e}"));

    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let m: Vec<Vec<f64>> = (0..6).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let f = Kernel::grid(GridKernel::dense2(cells.clone(), &m).unwrap());
        let s = symmetrize(&f).unwrap();
        let p = sample_pattern(&c, &w, 2000 + trial).unwrap();
        let (a, z) = (eval_i2(&f, &p, &c).unwrap(), eval_i2(&s, &p, &c).unwrap());
        worst = worst.max((a - z).abs() / a.abs().max(1.0));
    }
    b.check("1", "eval_I2 invariant under symmetrization", worst <= EXACT_TOL, format!("max relative gap {worst:.2e}"));
}

fn criterion_2(b: &mut Board) {
    let s = suites::block(50, params(200_000)).unwrap();
    b.suite("2", &s, &["fourth moment = 3 + 37/n", "KS to N(0,1) < 0.02"]);
    let m = s.report.series("i2").unwrap();
    let e_f4 = reference(&s, "e_f4");
    b.check(
        "2 diag",
        "MC fourth moment matches the exact E[F⁴] = 3 + 50/n within 3 se",
        (m.fourth_moment - e_f4).abs() <= 3.0 * m.fourth_moment_se && (e_f4 - 4.0).abs() < EXACT_TOL,
        format!("estimate {:.4} ± {:.4}, exact {e_f4:.4}", m.fourth_moment, m.fourth_moment_se),
    );
    b.suite("2 diag", &s, &["mean = 0", "variance = 2‖f‖²"]);
}

fn criterion_3(b: &mut Board) {
    let s = suites::ou(4, 1.0, 100.0, None, params(5000)).unwrap();
    b.suite("3", &s, &["variance = finite-T closed form"]);
    let v800 = linear_variance(1.0, 800.0);
    b.check("3", "closed-form variance at T = 800 within 2% of 2", rel(v800, 2.0) <= 0.02, format!("{v800:.6}"));
    let s = suites::ou(4, 1.0, 800.0, None, params(50_000)).unwrap();
    b.suite("3", &s, &["variance = 2/λ within 2%"]);
}

fn criterion_4(b: &mut Board) {
    let s = suites::ou(5, 1.0, 200.0, None, params(5000)).unwrap();
    b.suite("4", &s, &[]);
    let h = Kernel::ou_double_h(1.0, 800.0).unwrap();
    let c = ControlMeasure::symmetric_bernoulli();
    let v = 2.0 * 800.0 * l2_norm_sq(&h, &c).unwrap();
    b.check("4", "2T‖H‖² at T = 800 within 2% of 1", rel(v, 1.0) <= 0.02, format!("{v:.6}"));
    let derived = 2.0 - (1.0 - (-1600.0f64).exp()) / 800.0;
    b.check("4 diag", "2T‖H‖² matches 2/λ − (1 − e^{−2λT})/(λ²T)", rel(v, derived) <= IDENTITY_TOL, format!("{v:.9} vs {derived:.9}"));
    let m = s.report.series("k2").unwrap();
    let fin = reference(&s, "var_k2_finite_t");
    b.check(
        "4 diag",
        "Var K2 matches its finite-T value within 3 se",
        (m.variance - fin).abs() <= 3.0 * m.variance_se,
        format!("estimate {:.4} ± {:.4}, finite-T {fin:.4}", m.variance, m.variance_se),
    );
}

fn criterion_5(b: &mut Board) {
    let c = ControlMeasure::symmetric_bernoulli();
    let ts = [50.0, 100.0, 200.0, 400.0, 800.0];
    let terms: Vec<FourthMomentTerms> =
        ts.iter().map(|&t| FourthMomentTerms::compute(&families::ou_jt(1.0, t, 1.0).unwrap(), &c).unwrap()).collect();
    for (name, pick) in [
        ("T²‖H ⋆₁¹ H‖²", (|t: &FourthMomentTerms| t.n11) as fn(&FourthMomentTerms) -> f64),
        ("T²‖H ⋆₂¹ H‖²", |t| t.n21),
        ("T²‖H‖⁴₄", |t| t.l4),
    ] {
        let ys: Vec<f64> = terms.iter().map(pick).collect();
        let fit = slope_fit(&ts, &ys).unwrap();
        let pass = (SLOPE_BAND.0..=SLOPE_BAND.1).contains(&fit.slope);
        b.check("5", &format!("log-log slope of {name}"), pass, format!("{:.4}", fit.slope));
    }
}

fn criterion_6(b: &mut Board) {
    let s = suites::ou(6, 1.0, 200.0, None, params(5000)).unwrap();
    b.suite("6", &s, &[]);
    let ts = [50.0, 100.0, 200.0, 400.0, 800.0];
    let mut means = Vec::new();
    for &t in &ts {
        let s = suites::ou(6, 1.0, t, None, params(2000)).unwrap();
        means.push(s.report.series("correction").unwrap().mean);
    }
    let fit = slope_fit(&ts, &means).unwrap();
    b.check(
        "6",
        "correction term decays with slope −1/2",
        (fit.slope - CORRECTION_SLOPE).abs() <= CORRECTION_SLOPE_TOL,
        format!("MC slope {:.4}", fit.slope),
    );
    let exact: Vec<f64> = ts.iter().map(|&t| linear_variance(1.0, t) / t.sqrt()).collect();
    let fit = slope_fit(&ts, &exact).unwrap();
    b.check(
        "6 diag",
        "exact correction mean decays with slope −1/2",
        (fit.slope - CORRECTION_SLOPE).abs() <= CORRECTION_SLOPE_TOL,
        format!("slope {:.4}", fit.slope),
    );
}

fn criterion_7(b: &mut Board) {
    let s = suites::hazard_thm7(1, 1.0, 200.0, None, None, params(5000)).unwrap();
    b.suite("7(1)", &s, &[]);
    for case in [2u8, 3] {
        let s = suites::hazard_thm7(case, 1.0, 1e4, None, None, params(HAZARD_SLOW_REPS)).unwrap();
        b.suite(&format!("7({case})"), &s, &[]);
        let fin = reference(&s, "finite_t_statistic_variance");
        let m = s.report.series("h").unwrap();
        b.check(
            &format!("7({case}) diag"),
            "MC variance matches the Campbell finite-T variance within 3 se",
            (m.variance - fin).abs() <= 3.0 * m.variance_se,
            format!("estimate {:.4} ± {:.4}, Campbell {fin:.4}", m.variance, m.variance_se),
        );
        let c = Thm7Case::from_index(case).unwrap();
        // untruncated control: at large T the sampling truncation removes most of the Beta jump mass
        let horizons = [1e2, 1e3, 1e4, 1e5, 1e6];
        let mut gaps = Vec::new();
        for &t in &horizons {
            let model = suites::hazard_model(c, 1.0, t, Some(0.0), None).unwrap();
            let (_, var) = cumulative_hazard_moments(&model).unwrap();
            let (_, scale) = thm7_normalization(c, &model).unwrap();
            gaps.push((var / (scale * scale) - thm7_target(c, &model).unwrap()).abs());
        }
        let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
        let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.3}")).collect();
        b.check(
            &format!("7({case})"),
            "untruncated finite-T variance approaches the limit monotonically over T = 1e2..1e6",
            monotone,
            format!("|gap| {}", shown.join(", ")),
        );
    }
}

fn criterion_8(b: &mut Board) {
    let raw = suites::hazard_thm8(true, 1.0, 400.0, None, params(5000)).unwrap();
    b.suite("8", &raw, &[]);
    let m = raw.report.series("q").unwrap();
    let cum = reference(&raw, "cumulant_variance");
    b.check(
        "8 diag",
        "raw variance matches the cumulant-derived 332/3 within 3 se",
        (m.variance - cum).abs() <= 3.0 * m.variance_se && (cum - 332.0 / 3.0).abs() < IDENTITY_TOL,
        format!("estimate {:.3} ± {:.3}, derived {cum:.3}", m.variance, m.variance_se),
    );
    let centered = suites::hazard_thm8(false, 1.0, 400.0, None, params(5000)).unwrap();
    b.suite("8", &centered, &[]);
}

fn pchaos(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pchaos")).args(args).output().expect("spawn pchaos");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pchaos-acceptance-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn criterion_9(b: &mut Board) {
    let dir = scratch("criterion");
    let out = dir.to_str().unwrap();
    let (code, _) = pchaos(&["--out", out, "criterion", "--family", "block"]);
    b.check("9", "block family passes (exit 0)", code == 0, format!("exit {code}"));

    let (code, text) = pchaos(&["--out", out, "criterion", "--family", "fixed"]);
    let fourth_fails = text.lines().any(|l| l.contains("FAIL") && l.contains("∫∫f⁴"));
    let norm_holds = text.lines().any(|l| l.contains("PASS") && l.contains("2‖f‖²"));
    b.check(
        "9",
        "fixed-support family fails on the fourth-power condition only (exit 1)",
        code == 1 && fourth_fails && norm_holds,
        format!("exit {code}"),
    );

    let (code, text) = pchaos(&["--out", out, "criterion", "--family", "ou-jt"]);
    let first_fail = text.lines().find(|l| l.trim_start().starts_with("FAIL")).unwrap_or("none").trim().to_string();
    b.check("9", "√λ·J_T family passes (exit 0)", code == 0, format!("exit {code}; {first_fail}"));
    let (code, _) = pchaos(&["--out", out, "criterion", "--family", "ou-jt-half"]);
    b.check("9 diag", "√(λ/2)·J_T family passes (exit 0)", code == 0, format!("exit {code}"));

    let cfg = dir.join("bad.conf");
    fs::write(&cfg, "[run]\nreps = many\n").unwrap();
    let (code, _) = pchaos(&["--config", cfg.to_str().unwrap(), "--out", out, "block"]);
    b.check("9", "malformed config exits 2", code == 2, format!("exit {code}"));
    let (code, _) = pchaos(&["--out", out, "criterion", "--family", "nope"]);
    b.check("9", "unknown family exits 2", code == 2, format!("exit {code}"));
    let _ = fs::remove_dir_all(&dir);
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn criterion_10(b: &mut Board) {
    let runs: [(&str, &[&str]); 3] = [
        ("block", &["--reps", "3000", "block", "--n", "20"]),
        ("ou", &["--reps", "400", "ou", "--theorem", "5", "--T", "50"]),
        ("hazard", &["--reps", "400", "hazard", "--theorem", "8", "--T", "100", "--variant", "centered"]),
    ];
    for (name, args) in runs {
        for format in ["json", "csv"] {
            let mut outputs = Vec::new();
            for workers in ["1", "4", "8"] {
                let dir = scratch(&format!("{name}-{format}-{workers}"));
                let mut a = vec!["--format", format, "--workers", workers, "--out", dir.to_str().unwrap()];
                a.extend_from_slice(args);
                let (code, _) = pchaos(&a);
                assert!(code == 0 || code == 1, "{name} run failed with exit {code}");
                outputs.push(files(&dir));
                let _ = fs::remove_dir_all(&dir);
            }
            let same = outputs.windows(2).all(|w| w[0] == w[1]) && !outputs[0].is_empty();
            b.check("10", &format!("{name} {format} output identical at 1, 4, 8 workers"), same, format!("{} files", outputs[0].len()));

            // rerun from the config embedded in the first file
            let embedded = embedded_config(&String::from_utf8_lossy(&outputs[0][0].1)).expect("embedded config");
            let dir = scratch(&format!("{name}-{format}-rerun"));
            let cfg = dir.join("rerun.conf");
            fs::write(&cfg, embedded).unwrap();
            let out = dir.join("out");
            let (code, _) = pchaos(&["--config", cfg.to_str().unwrap(), "--format", format, "--out", out.to_str().unwrap()]);
            let again = files(&out);
            b.check(
                "10",
                &format!("{name} {format} rerun from the embedded config is byte-identical"),
                (code == 0 || code == 1) && again == outputs[0],
                format!("exit {code}"),
            );
            let _ = fs::remove_dir_all(&dir);
        }
    }
}
