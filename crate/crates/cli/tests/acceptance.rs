//! Acceptance suite. Runs every criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion; the process exits non-zero if any criterion fails.

use damageid_core::damage::{check_bounds, integrate_damage, DamageLaw, TimeGrid};
use damageid_core::fem::{build_mesh, DomainSpec, LoadSet, MaterialModel, Side};
use damageid_core::forward::{contraction_estimate, picard_forward_solve, ForwardConfig, ForwardProblem};
use damageid_core::gram::build_parameter_gram;
use damageid_core::inversion::{cone_constant_estimate, landweber_run, semiconvergence_probe, spectrum_probe, LandweberConfig, Measurement, Termination};
use damageid_core::mollifier::{MollifierSpec, MollifierVariant};
use damageid_core::presets::{self, InversionSize, InversionSetup};
use damageid_core::process::{project_admissible, DamageProcess, ProcessBasis, StrainFeature};
use damageid_core::sensitivity::Linearization;
use damageid_core::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

type Outcome = Result<String, String>;
type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn twin() -> InversionSetup {
    presets::twin_inversion(InversionSize::TWIN, Exec::Parallel).expect("twin setup")
}

fn ode_oracle() -> Outcome {
    let law = DamageLaw { alpha: 1.0, omega0: 0.0, omega1: 0.5, source_bound: 0.25 };
    let max_error = |steps: usize| -> f64 {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let field = integrate_damage(&grid, &law, &[0.0], &vec![vec![0.25]; grid.len()], Exec::Serial).unwrap();
        field.values.iter().enumerate().map(|(m, d)| (d[0] - (1.0 - (1.0 - 0.5 * grid.time(m)).sqrt())).abs()).fold(0.0, f64::max)
    };
    let err = max_error(1000);
    let errors: Vec<f64> = [50, 100, 200, 400].iter().map(|&n| max_error(n)).collect();
    let slopes: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let ok = err <= 1e-6 && slopes.iter().all(|s| (s - 2.0).abs() <= 0.1);
    verdict(ok, format!("max error at dt=1e-3 {err:.3e}, halving slopes {slopes:.3?}"))
}

fn random_problem(rng: &mut ChaCha8Rng, two_d: bool) -> (ForwardProblem, DamageProcess) {
    let omega0 = rng.random_range(0.0..0.2);
    let omega1 = rng.random_range(omega0 + 0.1..0.9);
    let alpha = rng.random_range(1.0..3.0);
    let horizon = rng.random_range(0.5..2.0);
    let (domain, base, feature, splines) = if two_d {
        let domain = DomainSpec { extent: vec![1.0, 1.0], elements: vec![8, 8], clamped: vec![Side::Left] };
        let base = MaterialModel::isotropic(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        (domain, base, StrainFeature::StrainNorm, 5)
    } else {
        (DomainSpec::interval(1.0, 16), MaterialModel::bar(rng.random_range(0.5..2.0)), StrainFeature::Gradient, 6)
    };
    let material = MaterialModel { alpha, omega0, omega1, horizon, y_bar: rng.random_range(1.0..4.0), ..base };
    let mesh = build_mesh(&domain).unwrap();
    let grid = TimeGrid::new(horizon, 10).unwrap();
    let (f, tau, rate) = (rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..2.0));
    let loads = LoadSet::from_fn(&mesh, &grid.times(), |_, x| [f * (1.0 - x[1]), 0.3 * f], |t, x| [tau + rate * t, 0.5 * tau * x[1]]);
    let d0: Vec<f64> = (0..mesh.node_count()).map(|_| rng.random_range(0.0..=omega0)).collect();
    let spec = MollifierSpec { radius: rng.random_range(0.125..0.4), variant: if rng.random_bool(0.5) { MollifierVariant::Difference } else { MollifierVariant::Average } };
    let dim = mesh.dim();
    let basis = Arc::new(ProcessBasis::new(dim, [1.0, if two_d { 1.0 } else { 0.0 }], horizon, 2, [2, if two_d { 2 } else { 1 }], splines, material.y_bar).unwrap());
    let gmax = material.source_bound();
    let coeffs = (0..basis.len()).map(|_| rng.random_range(0.0..=gmax)).collect();
    let g = DamageProcess { basis, coeffs, bound: gmax };
    let problem = ForwardProblem::new(mesh, material, &spec, feature, grid, loads, d0, Exec::Parallel).unwrap();
    (problem, g)
}

fn bound_preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    let mut failures = Vec::new();
    for k in 0..100 {
        let (problem, g) = random_problem(&mut rng, k % 5 == 4);
        match picard_forward_solve(&problem, &g, &ForwardConfig::default()) {
            Ok(state) => violations += check_bounds(&state.damage, problem.material.omega1).violations.len(),
            Err(e) => failures.push(format!("config {k}: {e}")),
        }
    }
    verdict(violations == 0 && failures.is_empty(), format!("100 configurations (20 in 2D), {violations} violations, {} solver failures {failures:?}", failures.len()))
}

fn coupled_march(problem: &ForwardProblem, refine: usize) -> Vec<Vec<f64>> {
    use damageid_core::fem::solve_equilibrium;
    let law = presets::twin_law(&problem.material);
    let rhs = problem.load_vector(0).to_vec();
    let source = |d: &[f64], t: f64| -> Vec<f64> {
        let u = solve_equilibrium(&problem.mesh, &problem.material, d, &rhs).unwrap().values;
        let y = problem.mollifier.apply(&u);
        problem.mesh.nodes().iter().zip(&y).map(|(&x, &y)| damageid_core::process::SourceLaw::value(&law, t, x, y)).collect()
    };
    let h = problem.grid.dt() / refine as f64;
    let mut d = problem.d0.clone();
    let mut out = vec![d.clone()];
    let mut t = 0.0;
    for _ in 1..problem.grid.len() {
        for _ in 0..refine {
            let f0: Vec<f64> = d.iter().zip(source(&d, t)).map(|(&di, gi)| gi / (1.0 - di)).collect();
            let mut next = d.clone();
            loop {
                let g1 = source(&next, t + h);
                let cand: Vec<f64> = (0..d.len()).map(|j| d[j] + 0.5 * h * (f0[j] + g1[j] / (1.0 - next[j]))).collect();
                let change = cand.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                next = cand;
                if change < 1e-15 {
                    break;
                }
            }
            d = next;
            t += h;
        }
        out.push(d.clone());
    }
    out
}

fn picard_equivalence() -> Outcome {
    let problem = presets::twin_bar(16, 200, Exec::Parallel).unwrap();
    let law = presets::twin_law(&problem.material);
    let state = picard_forward_solve(&problem, &law, &ForwardConfig { tol: 1e-10, ..ForwardConfig::default() }).map_err(|e| e.to_string())?;
    let oracle = coupled_march(&problem, 100);
    let err = state.damage.values.iter().zip(&oracle).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max);
    verdict(err <= 1e-6 && state.sweeps <= 30, format!("sup-norm damage mismatch {err:.3e}, {} Picard sweeps", state.sweeps))
}

fn contraction(setup: &InversionSetup) -> Outcome {
    let lambdas = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let q = contraction_estimate(&setup.problem, &setup.truth, &lambdas, 10, 11).map_err(|e| e.to_string())?;
    let below_one = q.iter().any(|&(_, v)| v < 1.0);
    let monotone = q.windows(2).all(|w| w[1].1 <= w[0].1);
    let values: Vec<String> = q.iter().map(|(l, v)| format!("{l}:{v:.2e}")).collect();
    verdict(below_one && monotone, format!("q(lambda) = [{}]", values.join(", ")))
}

fn taylor(setup: &InversionSetup) -> Outcome {
    let p = &setup.problem;
    let g = setup.start.with_coeffs(setup.start.coeffs.iter().zip(&setup.truth.coeffs).map(|(a, b)| 0.5 * (a + b)).collect());
    let tight = ForwardConfig { tol: 1e-14, max_sweeps: 200, ..ForwardConfig::default() };
    let state = picard_forward_solve(p, &g, &tight).map_err(|e| e.to_string())?;
    let base = state.data();
    let lin = Linearization::new(p, &g, &state).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..10 {
        let raw: Vec<f64> = (0..g.coeffs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let moved = project_admissible(&g.with_coeffs(g.coeffs.iter().zip(&raw).map(|(c, x)| c + 0.02 * g.bound * x).collect()));
        let h: Vec<f64> = moved.coeffs.iter().zip(&g.coeffs).map(|(a, b)| (a - b) / 0.1).collect();
        let dphi = lin.apply(&h).map_err(|e| e.to_string())?;
        let mut rems = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
            let gp = g.with_coeffs(g.coeffs.iter().zip(&h).map(|(a, b)| a + eps * b).collect());
            let up = picard_forward_solve(p, &gp, &tight).map_err(|e| e.to_string())?.data();
            let r: Vec<f64> = up.iter().zip(&base).zip(&dphi).map(|((a, b), c)| a - b - eps * c).collect();
            rems.push(p.data_norm(&r));
        }
        for w in rems.windows(2) {
            let s = (w[0] / w[1]).log10();
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    verdict(lo >= 1.8 && hi <= 2.2, format!("remainder slopes in [{lo:.4}, {hi:.4}] over 10 directions"))
}

fn adjoint(setup: &InversionSetup) -> Outcome {
    let p = &setup.problem;
    let g = &setup.truth;
    let gram = build_parameter_gram(&setup.basis, setup.s).map_err(|e| e.to_string())?;
    let state = picard_forward_solve(p, g, &ForwardConfig::default()).map_err(|e| e.to_string())?;
    let lin = Linearization::new(p, g, &state).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let h: Vec<f64> = (0..g.coeffs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..p.data_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dphi = lin.apply(&h).map_err(|e| e.to_string())?;
        let adj = lin.adjoint(&gram, &r).map_err(|e| e.to_string())?;
        let rel = (p.data_inner(&dphi, &r) - gram.inner(&h, &adj)).abs() / (p.data_norm(&dphi) * p.data_norm(&r));
        worst = worst.max(rel);
    }
    verdict(worst <= 1e-8, format!("max relative mismatch {worst:.3e} over 20 pairs"))
}

fn cone(setup: &InversionSetup) -> Outcome {
    let gram = build_parameter_gram(&setup.basis, setup.s).map_err(|e| e.to_string())?;
    let tight = ForwardConfig { tol: 1e-13, max_sweeps: 200, ..ForwardConfig::default() };
    let mut maxima = Vec::new();
    for scale in [1e-1, 1e-2, 1e-3] {
        let report = cone_constant_estimate(&setup.problem, &setup.truth, &gram, &tight, 50, scale, 8).map_err(|e| e.to_string())?;
        if report.ratios.len() + report.skipped != 50 || report.ratios.is_empty() {
            return Err(format!("scale {scale}: {} ratios, {} skipped", report.ratios.len(), report.skipped));
        }
        maxima.push(report.max_ratio());
    }
    verdict(maxima[2] <= 2.0 * maxima[0], format!("max ratio at scales 1e-1/1e-2/1e-3: {:.4e} / {:.4e} / {:.4e}", maxima[0], maxima[1], maxima[2]))
}

fn ill_posedness(setup: &InversionSetup) -> Outcome {
    let p = &setup.problem;
    let gram = build_parameter_gram(&setup.basis, setup.s).map_err(|e| e.to_string())?;
    let state = picard_forward_solve(p, &setup.truth, &ForwardConfig::default()).map_err(|e| e.to_string())?;
    let lin = Linearization::new(p, &setup.truth, &state).map_err(|e| e.to_string())?;
    let dim = lin.param_len();
    let spectrum = spectrum_probe(&lin, &gram, dim, 9).map_err(|e| e.to_string())?;
    let s1 = spectrum.values[0];
    let k = spectrum.values.iter().position(|&s| s <= 1e-3 * s1).map(|i| i + 1);
    let spectral_ok = k.is_some_and(|k| k <= dim / 2);

    let meas = Measurement::synthesize(p, &state.data(), 0.05, 7).map_err(|e| e.to_string())?;
    let cfg = LandweberConfig { max_iter: 1500, ..LandweberConfig::new(setup.start.clone(), setup.s) };
    let report = semiconvergence_probe(p, &cfg, &meas, &setup.truth).map_err(|e| e.to_string())?;
    let kmin = report.argmin();
    let detail = format!(
        "first k with sigma_k/sigma_1 <= 1e-3: {k:?} of {dim}; 5% noise error minimum {:.4e} at iteration {kmin} of {}, final {:.4e}",
        report.errors[kmin],
        report.errors.len() - 1,
        report.errors.last().unwrap()
    );
    verdict(spectral_ok && report.has_interior_minimum(), detail)
}

fn twin_landweber(setup: &InversionSetup) -> Outcome {
    let p = &setup.problem;
    let clean = picard_forward_solve(p, &setup.truth, &ForwardConfig::default()).map_err(|e| e.to_string())?.data();
    let meas = Measurement::synthesize(p, &clean, 0.01, 7).map_err(|e| e.to_string())?;
    let cfg = LandweberConfig { max_iter: 500, tau: 1.5, ..LandweberConfig::new(setup.start.clone(), setup.s) };
    let started = Instant::now();
    let history = landweber_run(p, &cfg, &meas, None).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed().as_secs_f64();
    let residuals = history.residuals();
    let last = *residuals.last().unwrap();
    let monotone = residuals.windows(2).all(|w| w[1] <= w[0]);
    let ok = history.termination == Termination::Discrepancy && last <= 1.5 * meas.delta && monotone && elapsed <= 900.0;
    verdict(
        ok,
        format!(
            "{:?} at iteration {}, residual {last:.4e} vs 1.5*delta {:.4e} (initial {:.4e}), monotone {monotone}, {elapsed:.2} s",
            history.termination,
            residuals.len() - 1,
            1.5 * meas.delta,
            residuals[0]
        ),
    )
}

fn run_cli_quiet(args: &[&str]) -> i32 {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = damageid::run_cli_with(args.iter().copied(), &mut out, &mut err);
    if code != 0 {
        eprintln!("{}", String::from_utf8_lossy(&err));
    }
    code
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/twin.toml")).map_err(|e| e.to_string())?;
    let config = format!("{}\nparallel = false\n", base.trim_end());
    let cfg_path = dir.path().join("twin.toml");
    std::fs::write(&cfg_path, config).map_err(|e| e.to_string())?;
    let cfg = cfg_path.to_str().unwrap();
    let mut runs = Vec::new();
    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();
    for _ in 0..2 {
        if out_dir.exists() {
            std::fs::remove_dir_all(&out_dir).map_err(|e| e.to_string())?;
        }
        for cmd in [&["forward"][..], &["synthesize"], &["invert"], &["diagnose", "adjoint"], &["diagnose", "cone", "--trials", "5"]] {
            let mut args = vec!["damageid"];
            args.extend_from_slice(cmd);
            args.extend_from_slice(&["--config", cfg, "--out", out]);
            if run_cli_quiet(&args) != 0 {
                return Err(format!("command {cmd:?} failed"));
            }
        }
        let mut files: Vec<_> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        runs.push(files.iter().map(|f| (f.file_name().unwrap().to_owned(), std::fs::read(f).unwrap())).collect::<Vec<_>>());
    }
    let identical = runs[0] == runs[1];
    verdict(identical && runs[0].len() >= 8, format!("{} output files compared byte for byte, identical: {identical}", runs[0].len()))
}

fn main() {
    let setup = twin();
    let criteria: Vec<Check> = vec![
        ("damage ODE oracle", Box::new(ode_oracle)),
        ("bound preservation", Box::new(bound_preservation)),
        ("Picard vs coupled time march", Box::new(picard_equivalence)),
        ("contraction", Box::new(|| contraction(&setup))),
        ("derivative (Taylor)", Box::new(|| taylor(&setup))),
        ("adjoint consistency", Box::new(|| adjoint(&setup))),
        ("tangential cone", Box::new(|| cone(&setup))),
        ("ill-posedness", Box::new(|| ill_posedness(&setup))),
        ("twin Landweber at 1% noise", Box::new(|| twin_landweber(&setup))),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = run();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
