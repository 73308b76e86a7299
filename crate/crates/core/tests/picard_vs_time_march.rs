use damageid_core::fem::solve_equilibrium;
use damageid_core::forward::{picard_forward_solve, ForwardConfig};
use damageid_core::mollifier::MollifiedGradient;
use damageid_core::presets;
use damageid_core::process::SourceLaw;
use damageid_core::Exec;

/// Per-step coupled march: at every substep the new damage, displacement and
/// source are iterated to a joint fixed point before moving on.
fn coupled_march(elements: usize, steps: usize, refine: usize) -> Vec<Vec<f64>> {
    let problem = presets::twin_bar(elements, steps, Exec::Serial).unwrap();
    let law = presets::twin_law(&problem.material);
    let grad = MollifiedGradient::new(&presets::twin_mollifier(), &problem.mesh).unwrap();
    let rhs = problem.load_vector(0).to_vec();
    let source = |d: &[f64], t: f64| -> Vec<f64> {
        let u = solve_equilibrium(&problem.mesh, &problem.material, d, &rhs).unwrap().values;
        let g = grad.apply(&u);
        problem.mesh.nodes().iter().zip(&g).map(|(&x, &y)| law.value(t, x, y)).collect()
    };
    let h = problem.grid.dt() / refine as f64;
    let mut d = problem.d0.clone();
    let mut out = vec![d.clone()];
    let mut t = 0.0;
    for _ in 0..steps {
        for _ in 0..refine {
            let g0 = source(&d, t);
            let f0: Vec<f64> = d.iter().zip(&g0).map(|(&di, &gi)| gi / (1.0 - di)).collect();
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

#[test]
fn global_picard_matches_coupled_time_march() {
    let (elements, steps) = (16, 200);
    let problem = presets::twin_bar(elements, steps, Exec::Parallel).unwrap();
    let law = presets::twin_law(&problem.material);
    let state = picard_forward_solve(&problem, &law, &ForwardConfig::default()).unwrap();
    assert!(state.sweeps <= 30, "{} sweeps", state.sweeps);
    let oracle = coupled_march(elements, steps, 100);
    let err = state
        .damage
        .values
        .iter()
        .zip(&oracle)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(err <= 1e-6, "sup-norm mismatch {err:e}");
}

#[test]
fn uniform_strain_matches_closed_form() {
    // d' = 1/(8(1-d)^3) from d(0)=0 gives (1-d)^4 = 1 - t/2.
    let problem = presets::twin_bar(16, 400, Exec::Parallel).unwrap();
    let law = presets::twin_law(&problem.material);
    let state = picard_forward_solve(&problem, &law, &ForwardConfig::default()).unwrap();
    for (m, slice) in state.damage.values.iter().enumerate() {
        let exact = 1.0 - (1.0 - 0.5 * problem.grid.time(m)).powf(0.25);
        for &v in slice {
            assert!((v - exact).abs() < 1e-6);
        }
    }
}
