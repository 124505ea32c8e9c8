//! Randomized invariants of the model, the policies and the solvers.

mod common;

use common::*;
use gridfreq_core::control::{
    AdaptedConfig, HysteresisThresholds, LoadControl, OptimalConfig, StaticSwitchConfig,
    make_design2,
};
use gridfreq_core::dispatch::{
    certify_equilibrium, epsilon_bound, kkt_residual, solve_exact, solve_genetic, solve_relaxed,
    GeneticParams,
};
use gridfreq_core::equilibrium::{
    HysteresisOutcome, equilibria_adapted, solve_hysteresis_equilibrium,
};
use gridfreq_core::grid::ContinuousState;
use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn random_state(rng: &mut impl Rng, n_lines: usize, n_buses: usize) -> ContinuousState {
    ContinuousState {
        eta: (0..n_lines).map(|_| rng.random_range(-0.5..0.5)).collect(),
        omega: (0..n_buses).map(|_| rng.random_range(-0.2..0.2)).collect(),
        p_mech: (0..n_buses).map(|_| rng.random_range(-0.5..0.5)).collect(),
    }
}

#[test]
fn aggregate_swing_balance_on_random_networks() {
    // Line-flow terms cancel over the network, so the inertia-weighted sum
    // of frequency derivatives reduces to the aggregate imbalance.
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..200 {
        let n = rng.random_range(1..=12);
        let model = random_network(&mut rng, n);
        let p_load: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let model = model.with_loads(&p_load).unwrap();
        let state = random_state(&mut rng, model.n_lines(), n);
        let d_ctrl: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.4)).collect();
        let dx = model.flow_field(&state, &d_ctrl).unwrap();
        let lhs: f64 = model
            .buses()
            .iter()
            .zip(&dx.omega)
            .map(|(b, dw)| b.inertia * dw)
            .sum();
        let rhs = -model.aggregate_load()
            - d_ctrl.iter().sum::<f64>()
            - model
                .buses()
                .iter()
                .zip(&state.omega)
                .map(|(b, w)| b.damping * w)
                .sum::<f64>()
            + state.p_mech.iter().sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-10, "lhs {lhs} rhs {rhs}");
    }
}

#[test]
fn flow_field_linear_in_state_and_demand() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let model = random_network(&mut rng, n); // zero loads
        let s1 = random_state(&mut rng, model.n_lines(), n);
        let s2 = random_state(&mut rng, model.n_lines(), n);
        let d1: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        let d2: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mix = ContinuousState {
            eta: s1.eta.iter().zip(&s2.eta).map(|(x, y)| a * x + b * y).collect(),
            omega: s1
                .omega
                .iter()
                .zip(&s2.omega)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            p_mech: s1
                .p_mech
                .iter()
                .zip(&s2.p_mech)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        };
        let d_mix: Vec<f64> = d1.iter().zip(&d2).map(|(x, y)| a * x + b * y).collect();
        let f_mix = model.flow_field(&mix, &d_mix).unwrap();
        let f1 = model.flow_field(&s1, &d1).unwrap();
        let f2 = model.flow_field(&s2, &d2).unwrap();
        let check = |m: &[f64], x: &[f64], y: &[f64]| {
            for ((mv, xv), yv) in m.iter().zip(x).zip(y) {
                assert!((mv - (a * xv + b * yv)).abs() < 1e-9);
            }
        };
        check(&f_mix.eta, &f1.eta, &f2.eta);
        check(&f_mix.omega, &f1.omega, &f2.omega);
        check(&f_mix.p_mech, &f1.p_mech, &f2.p_mech);
    }
}

#[test]
fn dc_power_flow_balances_every_bus() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..200 {
        let n = rng.random_range(2..=20);
        let model = random_network(&mut rng, n);
        let q = random_balanced_injections(&mut rng, n);
        let sol = model.dc_power_flow(&q).unwrap();
        let mut residual = q.clone();
        for (l, p) in model.lines().iter().zip(&sol.flows) {
            residual[l.from] -= p;
            residual[l.to] += p;
        }
        for r in residual {
            assert!(r.abs() < 1e-10, "bus residual {r}");
        }
    }
}

proptest! {
    #[test]
    fn static_interval_contains_demand(
        omega in -0.2f64..0.2,
        upper in 1e-4f64..0.1,
        lower_mag in 1e-4f64..0.1,
        d_up in 0.0f64..0.5,
        d_down_mag in 0.0f64..0.5,
    ) {
        let cfg = StaticSwitchConfig {
            omega_upper: upper,
            omega_lower: -lower_mag,
            d_up,
            d_down: -d_down_mag,
        };
        // Interior points plus both exact thresholds.
        for w in [omega, upper, -lower_mag] {
            let d = cfg.demand(w);
            let (lo, hi) = cfg.demand_interval(w);
            prop_assert!(lo <= d && d <= hi);
        }
    }

    #[test]
    fn flow_and_jump_sets_cover_state_space(
        omega_off in 1e-3f64..0.1,
        width in 1e-4f64..0.1,
        magnitude in 1e-3f64..0.5,
        pc_lower in -0.5f64..0.5,
        gap in 1e-4f64..0.3,
        omega_probe in -0.3f64..0.3,
        pc_probe in -1.0f64..1.0,
        on in proptest::bool::ANY,
        probe_sel in 0usize..4,
    ) {
        let thresholds = HysteresisThresholds {
            omega_off,
            omega_on: omega_off + width,
            magnitude,
        };
        let controls = [
            LoadControl::Hysteresis(thresholds),
            LoadControl::Adapted(AdaptedConfig { thresholds, pc_lower }),
            LoadControl::Optimal(OptimalConfig {
                thresholds,
                pc_lower,
                pc_upper: pc_lower + gap,
                cost: 1e-3,
            }),
        ];
        // Exercise exact threshold values as well as generic probes.
        let omega = [omega_probe, omega_off, omega_off + width, omega_probe][probe_sel];
        let pc = [pc_probe, pc_lower, pc_lower + gap, pc_lower][probe_sel];
        for c in &controls {
            prop_assert!(c.in_flow_set(omega, pc, on) || c.in_jump_set(omega, pc, on));
            let next = c.jump_update(omega, pc, on);
            prop_assert_eq!(next, c.jump_update(omega, pc, next));
            if c.in_jump_set(omega, pc, on) {
                prop_assert!(c.in_flow_set(omega, pc, next));
            }
        }
    }
}

#[test]
fn design2_ladder_is_disjoint_and_ranked() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..300 {
        let n = rng.random_range(1..=10);
        let n_buses = rng.random_range(1..=4);
        let problem = random_coupled_problem(&mut rng, n_buses, n);
        let total = problem.aggregate_response();
        let cfgs = make_design2(&design2_inputs(&problem), total).unwrap();
        let mut by_ratio: Vec<&(usize, OptimalConfig)> = cfgs.iter().collect();
        by_ratio.sort_by(|a, b| {
            (a.1.cost / a.1.thresholds.magnitude)
                .partial_cmp(&(b.1.cost / b.1.thresholds.magnitude))
                .unwrap()
                .then(a.0.cmp(&b.0))
        });
        for w in by_ratio.windows(2) {
            // Cheaper loads sit strictly lower on the command ladder and the
            // admissible windows never overlap.
            assert!(w[0].1.pc_lower < w[1].1.pc_lower);
            assert!(w[0].1.pc_upper < w[1].1.pc_lower);
        }
        for (_, c) in &cfgs {
            assert_eq!(c.thresholds.omega_off, c.cost / c.thresholds.magnitude);
            assert!(c.pc_upper > c.pc_lower);
        }
    }
}

#[test]
fn hysteresis_equilibrium_exists_under_width_condition() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..300 {
        let n = rng.random_range(1..=5);
        let model = random_network(&mut rng, n);
        let total = model.aggregate_response();
        let loads: Vec<_> = (0..n)
            .map(|b| (b, random_wide_hysteresis(&mut rng, total)))
            .collect();
        let capacity: f64 = loads.iter().map(|(_, t)| t.magnitude).sum();
        let ell = -rng.random_range(-0.3..capacity + 0.5);
        let p_load: Vec<f64> = (0..n).map(|j| ell * ((j + 1) as f64) / ((n * (n + 1) / 2) as f64)).collect();
        let model = model.with_loads(&p_load).unwrap();
        let sol = solve_hysteresis_equilibrium(&model, &loads, false).unwrap();
        match sol.outcome {
            HysteresisOutcome::Found(p) => {
                assert!(p.residual(&model).unwrap() < 1e-9);
                assert!(sol.trace.steps.len() <= sol.trace.initial_violations + 1);
            }
            other => panic!("no equilibrium under the width condition: {other:?}"),
        }
    }
}

#[test]
fn relaxation_dominance_and_kkt() {
    // The relaxed optimum lower-bounds the exact optimum, which lower-bounds
    // every switch vector's cost.
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let n_buses = rng.random_range(1..=4);
        let mut problem = random_coupled_problem(&mut rng, n_buses, n);
        let capacity: f64 = problem.loads.iter().map(|l| l.magnitude).sum();
        let ell = -rng.random_range(-0.2..capacity + 0.3);
        problem.p_load[0] = ell;
        let relaxed = solve_relaxed(&problem).unwrap();
        assert!(kkt_residual(&problem, &relaxed) < 1e-9);
        let exact = solve_exact(&problem).unwrap();
        assert!(relaxed.cost <= exact.cost + 1e-12);
        for _ in 0..5 {
            let sigma: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            assert!(exact.cost <= problem.cost_of(&sigma) + 1e-12);
        }
    }
}

#[test]
fn rounded_relaxation_matches_exact_between_breakpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut interior = 0usize;
    for _ in 0..500 {
        let n = rng.random_range(1..=10);
        let mut problem = random_coupled_problem(&mut rng, 2, n);
        let capacity: f64 = problem.loads.iter().map(|l| l.magnitude).sum();
        problem.p_load[0] = -rng.random_range(0.0..capacity + 0.3);
        let relaxed = solve_relaxed(&problem).unwrap();
        if relaxed.breakpoint_load.is_some() {
            continue;
        }
        interior += 1;
        let rounded = relaxed.rounded(&problem);
        let exact = solve_exact(&problem).unwrap();
        assert_eq!(rounded.sigma, exact.sigma);
        assert_eq!(rounded.cost, exact.cost);
    }
    assert!(interior > 50, "only {interior} interior instances sampled");
}

#[test]
fn genetic_never_beats_exact_and_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for round in 0..30 {
        let n = rng.random_range(1..=10);
        let mut problem = random_coupled_problem(&mut rng, 2, n);
        problem.p_load[0] = -rng.random_range(0.0..1.0);
        let exact = solve_exact(&problem).unwrap();
        let params = GeneticParams {
            generations: 60,
            ..GeneticParams::default()
        };
        let ga = solve_genetic(&problem, round, &params).unwrap();
        assert!(ga.cost >= exact.cost - 1e-15);
        let again = solve_genetic(&problem, round, &params).unwrap();
        assert_eq!(ga, again);
    }
}

#[test]
fn adapted_equilibria_respect_rank_ladder() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for _ in 0..300 {
        let n_buses = rng.random_range(1..=4);
        let n = rng.random_range(1..=8);
        let problem = random_coupled_problem(&mut rng, n_buses, n);
        let mut model_buses: Vec<gridfreq_core::grid::BusParams> = Vec::new();
        for j in 0..n_buses {
            model_buses.push(gridfreq_core::grid::BusParams {
                inertia: 1.0,
                damping: problem.damping[j],
                droop: problem.droop[j],
                governor_tc: 1.0,
                p_load: 0.0,
                gen_cost: problem.gen_cost[j],
            });
        }
        let lines: Vec<gridfreq_core::grid::LineParams> = (1..n_buses)
            .map(|j| gridfreq_core::grid::LineParams {
                from: j - 1,
                to: j,
                susceptance: 1.0,
            })
            .collect();
        let model = gridfreq_core::grid::NetworkModel::new(model_buses, lines).unwrap();
        let capacity: f64 = problem.loads.iter().map(|l| l.magnitude).sum();
        let ell = -rng.random_range(-0.2..capacity + 0.4);
        let mut p_load = vec![0.0; n_buses];
        p_load[0] = ell;
        let model = model.with_loads(&p_load).unwrap();
        let cfgs = make_design2(&design2_inputs(&problem), model.aggregate_response()).unwrap();
        let set = gridfreq_core::control::ControllerSet::Optimal(cfgs.clone());
        let points = equilibria_adapted(&model, &set).unwrap();
        assert!(!points.is_empty());
        // Rank order: every switched-on load is cheaper per unit than every
        // switched-off one (ties broken by bus).
        let mut rank: Vec<usize> = (0..cfgs.len()).collect();
        rank.sort_by(|&a, &b| {
            (cfgs[a].1.cost / cfgs[a].1.thresholds.magnitude)
                .partial_cmp(&(cfgs[b].1.cost / cfgs[b].1.thresholds.magnitude))
                .unwrap()
                .then(cfgs[a].0.cmp(&cfgs[b].0))
        });
        for p in &points {
            assert!(p.residual(&model).unwrap() < 1e-9);
            let ranked: Vec<bool> = rank.iter().map(|&k| p.sigma[k]).collect();
            let first_off = ranked.iter().position(|&b| !b).unwrap_or(ranked.len());
            assert!(
                ranked[first_off..].iter().all(|&b| !b),
                "ladder violated: {ranked:?}"
            );
        }
    }
}

#[test]
fn epsilon_certificates_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let mut problem = random_coupled_problem(&mut rng, 2, n);
        let capacity: f64 = problem.loads.iter().map(|l| l.magnitude).sum();
        problem.p_load[0] = -rng.random_range(0.0..capacity + 0.3);
        let eps = epsilon_bound(&problem);
        let exact = solve_exact(&problem).unwrap();
        let cert = certify_equilibrium(&problem, &exact.sigma).unwrap();
        assert_eq!(cert.gap, 0.0);
        assert!(cert.pass);
        assert!(cert.epsilon == eps);
    }
}
