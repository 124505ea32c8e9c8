//! Supply and on-off load allocation.
//!
//! Given a disturbance, the network must make up the aggregate imbalance
//! from three sources: extra generation (quadratic cost), frequency-dependent
//! demand (quadratic cost) and switched on-off loads (fixed cost each). For
//! a fixed switch vector the continuous part has a closed-form optimum, so
//! the mixed-integer problem reduces to a search over switch vectors:
//!
//! - [`solve_exact`] enumerates all of them (parallelized when the
//!   `parallel` feature is on; a deterministic reduction keeps ties stable),
//! - [`solve_genetic`] runs a small seeded genetic algorithm,
//! - [`solve_relaxed`] solves the continuous relaxation by searching the
//!   breakpoints of the piecewise-linear aggregate demand curve and checks
//!   the subgradient optimality conditions.
//!
//! [`certify_equilibrium`] compares the cost of a given switch vector
//! against the exact optimum and the relaxation bound.

use crate::control::OptimalConfig;
use crate::grid::NetworkModel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest load count accepted by the exhaustive solver (2^24 evaluations).
pub const EXACT_MAX_LOADS: usize = 24;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("{n} on-off loads exceed the exhaustive solver limit of {max}")]
    TooManyLoads { n: usize, max: usize },
    #[error("instance has no buses")]
    Empty,
    #[error("invalid parameter `{field}` at index {index}: {value}")]
    InvalidParameter {
        field: &'static str,
        index: usize,
        value: f64,
    },
}

/// One on-off load of the allocation problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnOffLoad {
    pub bus: usize,
    /// Cost incurred when switched on, > 0.
    pub cost: f64,
    /// Demand magnitude when switched on (p.u.), > 0.
    pub magnitude: f64,
}

impl OnOffLoad {
    /// Cost per unit of demand, the quantity loads are ranked by.
    pub fn cost_per_unit(&self) -> f64 {
        self.cost / self.magnitude
    }
}

/// Data of the mixed-integer allocation problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchProblem {
    /// Generation cost coefficients c_j per bus, > 0.
    pub gen_cost: Vec<f64>,
    /// Damping coefficients A_j per bus, > 0.
    pub damping: Vec<f64>,
    /// Droop gains α_j per bus, > 0.
    pub droop: Vec<f64>,
    /// Uncontrollable loads p^L_j per bus.
    pub p_load: Vec<f64>,
    pub loads: Vec<OnOffLoad>,
}

impl DispatchProblem {
    pub fn validate(&self) -> Result<(), DispatchError> {
        if self.gen_cost.is_empty() {
            return Err(DispatchError::Empty);
        }
        for (index, &v) in self.gen_cost.iter().enumerate() {
            if !(v > 0.0) {
                return Err(DispatchError::InvalidParameter {
                    field: "gen_cost",
                    index,
                    value: v,
                });
            }
        }
        for (index, &v) in self.damping.iter().enumerate() {
            if !(v > 0.0) {
                return Err(DispatchError::InvalidParameter {
                    field: "damping",
                    index,
                    value: v,
                });
            }
        }
        for (index, l) in self.loads.iter().enumerate() {
            if !(l.cost > 0.0) {
                return Err(DispatchError::InvalidParameter {
                    field: "cost",
                    index,
                    value: l.cost,
                });
            }
            if !(l.magnitude > 0.0) {
                return Err(DispatchError::InvalidParameter {
                    field: "magnitude",
                    index,
                    value: l.magnitude,
                });
            }
        }
        Ok(())
    }

    /// Builds the problem from a network and its optimality-tuned loads.
    pub fn from_network(model: &NetworkModel, loads: &[(usize, OptimalConfig)]) -> Self {
        DispatchProblem {
            gen_cost: model.buses().iter().map(|b| b.gen_cost).collect(),
            damping: model.buses().iter().map(|b| b.damping).collect(),
            droop: model.buses().iter().map(|b| b.droop).collect(),
            p_load: model.buses().iter().map(|b| b.p_load).collect(),
            loads: loads
                .iter()
                .map(|(bus, c)| OnOffLoad {
                    bus: *bus,
                    cost: c.cost,
                    magnitude: c.thresholds.magnitude,
                })
                .collect(),
        }
    }

    pub fn aggregate_load(&self) -> f64 {
        self.p_load.iter().sum()
    }

    /// Σ_j (α_j + A_j).
    pub fn aggregate_response(&self) -> f64 {
        self.droop
            .iter()
            .zip(&self.damping)
            .map(|(a, d)| a + d)
            .sum()
    }

    /// Σ_j (1/c_j + A_j), the denominator of the continuous-optimal cost.
    /// Equals the aggregate response exactly when α_j = 1/c_j.
    pub fn cost_denominator(&self) -> f64 {
        self.gen_cost
            .iter()
            .zip(&self.damping)
            .map(|(c, d)| 1.0 / c + d)
            .sum()
    }

    /// Whether droop gains match inverse generation costs, the coupling
    /// under which steady-state allocations inherit optimality guarantees.
    pub fn droop_matches_inverse_cost(&self) -> bool {
        self.droop
            .iter()
            .zip(&self.gen_cost)
            .all(|(a, c)| (a * c - 1.0).abs() <= 1e-12)
    }

    /// Minimum total cost with the switch vector held fixed: the continuous
    /// optimum spreads the residual imbalance over generation and damping.
    pub fn cost_of(&self, sigma: &[bool]) -> f64 {
        let switched: f64 = sigma
            .iter()
            .zip(&self.loads)
            .filter(|(on, _)| **on)
            .map(|(_, l)| l.magnitude)
            .sum();
        let fixed: f64 = sigma
            .iter()
            .zip(&self.loads)
            .filter(|(on, _)| **on)
            .map(|(_, l)| l.cost)
            .sum();
        let residual = self.aggregate_load() + switched;
        residual * residual / (2.0 * self.cost_denominator()) + fixed
    }

    /// Continuous allocations attaining [`Self::cost_of`] for this switch
    /// vector: per-bus generation and frequency-dependent demand.
    pub fn continuous_allocation(&self, sigma: &[bool]) -> (Vec<f64>, Vec<f64>) {
        let switched: f64 = sigma
            .iter()
            .zip(&self.loads)
            .filter(|(on, _)| **on)
            .map(|(_, l)| l.magnitude)
            .sum();
        let q = self.aggregate_load() + switched;
        let mu = q / self.cost_denominator();
        let p_mech: Vec<f64> = self.gen_cost.iter().map(|c| mu / c).collect();
        let d_unc: Vec<f64> = self.damping.iter().map(|a| -mu * a).collect();
        (p_mech, d_unc)
    }
}

/// Tag identifying which solver produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverTag {
    Exact,
    Genetic,
    RelaxedRounded,
}

/// A feasible point of the mixed-integer problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub sigma: Vec<bool>,
    pub p_mech: Vec<f64>,
    pub d_unc: Vec<f64>,
    pub cost: f64,
    pub solver: SolverTag,
}

fn solution_for(problem: &DispatchProblem, sigma: Vec<bool>, solver: SolverTag) -> DispatchSolution {
    let cost = problem.cost_of(&sigma);
    let (p_mech, d_unc) = problem.continuous_allocation(&sigma);
    DispatchSolution {
        sigma,
        p_mech,
        d_unc,
        cost,
        solver,
    }
}

fn sigma_from_bits(bits: u32, n: usize) -> Vec<bool> {
    (0..n).map(|k| bits >> (n - 1 - k) & 1 == 1).collect()
}

fn eval_bits(problem: &DispatchProblem, bits: u32, n: usize) -> f64 {
    let mut switched = 0.0;
    let mut fixed = 0.0;
    for (k, l) in problem.loads.iter().enumerate() {
        if bits >> (n - 1 - k) & 1 == 1 {
            switched += l.magnitude;
            fixed += l.cost;
        }
    }
    let residual = problem.aggregate_load() + switched;
    residual * residual / (2.0 * problem.cost_denominator()) + fixed
}

/// Exhaustive minimization over all switch vectors.
///
/// Ties are broken toward the lexicographically smallest vector; the
/// parallel reduction compares `(cost, bits)` pairs so the result does not
/// depend on evaluation order. Dispatches to the parallel path when the
/// feature is enabled and the instance is large enough to benefit.
pub fn solve_exact(problem: &DispatchProblem) -> Result<DispatchSolution, DispatchError> {
    let n = problem.loads.len();
    if n > EXACT_MAX_LOADS {
        return Err(DispatchError::TooManyLoads {
            n,
            max: EXACT_MAX_LOADS,
        });
    }
    problem.validate()?;
    #[cfg(feature = "parallel")]
    {
        if n >= 14 {
            return Ok(solve_exact_par_impl(problem, n));
        }
    }
    Ok(solve_exact_seq_impl(problem, n))
}

/// Sequential exhaustive minimization, always available; the benchmark
/// baseline.
pub fn solve_exact_seq(problem: &DispatchProblem) -> Result<DispatchSolution, DispatchError> {
    let n = problem.loads.len();
    if n > EXACT_MAX_LOADS {
        return Err(DispatchError::TooManyLoads {
            n,
            max: EXACT_MAX_LOADS,
        });
    }
    problem.validate()?;
    Ok(solve_exact_seq_impl(problem, n))
}

fn solve_exact_seq_impl(problem: &DispatchProblem, n: usize) -> DispatchSolution {
    let mut best_bits = 0u32;
    let mut best_cost = f64::INFINITY;
    for bits in 0u32..1 << n {
        let cost = eval_bits(problem, bits, n);
        if cost < best_cost || (cost == best_cost && bits < best_bits) {
            best_cost = cost;
            best_bits = bits;
        }
    }
    solution_for(problem, sigma_from_bits(best_bits, n), SolverTag::Exact)
}

/// Parallel exhaustive minimization over all switch vectors.
#[cfg(feature = "parallel")]
pub fn solve_exact_par(problem: &DispatchProblem) -> Result<DispatchSolution, DispatchError> {
    let n = problem.loads.len();
    if n > EXACT_MAX_LOADS {
        return Err(DispatchError::TooManyLoads {
            n,
            max: EXACT_MAX_LOADS,
        });
    }
    problem.validate()?;
    Ok(solve_exact_par_impl(problem, n))
}

#[cfg(feature = "parallel")]
fn solve_exact_par_impl(problem: &DispatchProblem, n: usize) -> DispatchSolution {
    use rayon::prelude::*;
    let best = (0u32..1 << n)
        .into_par_iter()
        .map(|bits| (eval_bits(problem, bits, n), bits))
        .reduce(
            || (f64::INFINITY, u32::MAX),
            |a, b| {
                if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );
    solution_for(problem, sigma_from_bits(best.1, n), SolverTag::Exact)
}

/// Solution of the continuous relaxation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedSolution {
    /// Multiplier of the balance constraint (rad/s scale).
    pub lambda: f64,
    /// Per-bus generation -λ/c_j.
    pub p_mech: Vec<f64>,
    /// Per-bus frequency-dependent demand A_j λ.
    pub d_unc: Vec<f64>,
    /// Per-load continuous demand in [0, magnitude].
    pub d_ctrl: Vec<f64>,
    pub cost: f64,
    /// Index of the load whose cost-per-unit equals λ, when the balance
    /// lands on a breakpoint of the demand curve.
    pub breakpoint_load: Option<usize>,
}

impl RelaxedSolution {
    /// Feasible point obtained by switching on exactly the saturated loads.
    /// Between breakpoints the relaxation is already integral and this is
    /// the exact optimum.
    pub fn rounded(&self, problem: &DispatchProblem) -> DispatchSolution {
        let sigma: Vec<bool> = self
            .d_ctrl
            .iter()
            .zip(&problem.loads)
            .map(|(d, l)| *d >= l.magnitude)
            .collect();
        solution_for(problem, sigma, SolverTag::RelaxedRounded)
    }
}

/// Solves the continuous relaxation by breakpoint search.
///
/// The aggregate demand served by loads is a nondecreasing step function of
/// the multiplier, while the supply side is strictly decreasing, so the
/// balance has a unique crossing: either strictly between breakpoints (all
/// loads at a bound) or on one (that breakpoint's loads absorb the
/// fractional remainder, lowest index first).
pub fn solve_relaxed(problem: &DispatchProblem) -> Result<RelaxedSolution, DispatchError> {
    problem.validate()?;
    let n = problem.loads.len();
    let denom = problem.cost_denominator();
    let ell = problem.aggregate_load();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        problem.loads[a]
            .cost_per_unit()
            .partial_cmp(&problem.loads[b].cost_per_unit())
            .unwrap()
            .then(a.cmp(&b))
    });

    // Candidate intervals: with the k cheapest loads saturated, the balance
    // gives λ = (-ell - served) / denom; accept if consistent with every
    // load's threshold.
    let mut served = 0.0;
    let mut solution: Option<(f64, Vec<f64>, Option<usize>)> = None;
    for k in 0..=n {
        let lambda = (-ell - served) / denom;
        let lo = if k == 0 {
            f64::NEG_INFINITY
        } else {
            problem.loads[order[k - 1]].cost_per_unit()
        };
        let hi = if k == n {
            f64::INFINITY
        } else {
            problem.loads[order[k]].cost_per_unit()
        };
        if lambda > lo && lambda < hi {
            let mut d_ctrl = vec![0.0; n];
            for &idx in &order[..k] {
                d_ctrl[idx] = problem.loads[idx].magnitude;
            }
            solution = Some((lambda, d_ctrl, None));
            break;
        }
        if k < n {
            // Try the breakpoint at the next cost-per-unit level: every load
            // strictly cheaper is saturated, ties absorb the remainder.
            let gamma = problem.loads[order[k]].cost_per_unit();
            let tied: Vec<usize> = order[k..]
                .iter()
                .copied()
                .take_while(|&idx| problem.loads[idx].cost_per_unit() == gamma)
                .collect();
            let required = -denom * gamma - ell - served;
            let capacity: f64 = tied.iter().map(|&idx| problem.loads[idx].magnitude).sum();
            if required >= 0.0 && required <= capacity {
                let mut d_ctrl = vec![0.0; n];
                for &idx in &order[..k] {
                    d_ctrl[idx] = problem.loads[idx].magnitude;
                }
                let mut fill_order = tied.clone();
                fill_order.sort_unstable();
                let mut remaining = required;
                for idx in fill_order {
                    let take = remaining.min(problem.loads[idx].magnitude);
                    d_ctrl[idx] = take;
                    remaining -= take;
                }
                solution = Some((gamma, d_ctrl, Some(order[k])));
                break;
            }
            served += problem.loads[order[k]].magnitude;
        }
    }
    let (lambda, d_ctrl, breakpoint_load) =
        solution.expect("piecewise-linear balance always has a crossing");
    let p_mech: Vec<f64> = problem.gen_cost.iter().map(|c| -lambda / c).collect();
    let d_unc: Vec<f64> = problem.damping.iter().map(|a| a * lambda).collect();
    let gen_cost: f64 = problem
        .gen_cost
        .iter()
        .zip(&p_mech)
        .map(|(c, p)| 0.5 * c * p * p)
        .sum();
    let unc_cost: f64 = problem
        .damping
        .iter()
        .zip(&d_unc)
        .map(|(a, d)| d * d / (2.0 * a))
        .sum();
    let load_cost: f64 = problem
        .loads
        .iter()
        .zip(&d_ctrl)
        .map(|(l, d)| l.cost_per_unit() * d)
        .sum();
    Ok(RelaxedSolution {
        lambda,
        p_mech,
        d_unc,
        d_ctrl,
        cost: gen_cost + unc_cost + load_cost,
        breakpoint_load,
    })
}

/// Maximum violation of the relaxation's optimality conditions: balance,
/// generation and damping stationarity, and the subgradient condition on
/// each load.
pub fn kkt_residual(problem: &DispatchProblem, sol: &RelaxedSolution) -> f64 {
    let mut worst: f64 = 0.0;
    let total_ctrl: f64 = sol.d_ctrl.iter().sum();
    let balance: f64 = sol
        .p_mech
        .iter()
        .zip(&sol.d_unc)
        .zip(&problem.p_load)
        .map(|((p, d), pl)| p - d - pl)
        .sum::<f64>()
        - total_ctrl;
    worst = worst.max(balance.abs());
    for ((c, p), (a, d)) in problem
        .gen_cost
        .iter()
        .zip(&sol.p_mech)
        .zip(problem.damping.iter().zip(&sol.d_unc))
    {
        worst = worst.max((-sol.lambda - c * p).abs());
        worst = worst.max((sol.lambda - d / a).abs());
    }
    for (l, &d) in problem.loads.iter().zip(&sol.d_ctrl) {
        let gamma = l.cost_per_unit();
        worst = worst.max((-d).max(d - l.magnitude).max(0.0)); // box
        if d <= 0.0 {
            worst = worst.max((sol.lambda - gamma).max(0.0));
        } else if d >= l.magnitude {
            worst = worst.max((gamma - sol.lambda).max(0.0));
        } else {
            worst = worst.max((sol.lambda - gamma).abs());
        }
    }
    worst
}

/// The optimality slack guaranteed at equilibrium:
/// `max_j magnitude_j^2 / (2 * aggregate response)`; zero without loads.
pub fn epsilon_bound(problem: &DispatchProblem) -> f64 {
    let max_mag = problem
        .loads
        .iter()
        .map(|l| l.magnitude)
        .fold(0.0, f64::max);
    max_mag * max_mag / (2.0 * problem.aggregate_response())
}

/// Certificate comparing a candidate switch vector against the exact
/// optimum and the relaxation bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityCertificate {
    /// Cost of the candidate vector.
    pub cost: f64,
    /// Exhaustive optimum.
    pub optimum: f64,
    /// `cost - optimum`.
    pub gap: f64,
    /// Guaranteed slack for design-rule equilibria.
    pub epsilon: f64,
    /// Whether `gap <= epsilon` (with a 1e-12 float allowance).
    pub pass: bool,
    /// Optimum of the continuous relaxation (a lower bound).
    pub relaxed_cost: f64,
    /// `cost - relaxed_cost`.
    pub relaxation_gap: f64,
    /// Total candidate demand minus total relaxed demand, meaningful when
    /// the relaxation lands on a breakpoint; the relaxation gap then equals
    /// `q_hat^2 / (2 * aggregate response)`.
    pub q_hat: Option<f64>,
    /// Whether droop gains equal inverse generation costs; the epsilon
    /// guarantee is only stated under that coupling.
    pub droop_matches_inverse_cost: bool,
}

/// Certifies how far a switch vector's cost is from optimal.
pub fn certify_equilibrium(
    problem: &DispatchProblem,
    sigma: &[bool],
) -> Result<OptimalityCertificate, DispatchError> {
    let exact = solve_exact(problem)?;
    let relaxed = solve_relaxed(problem)?;
    let cost = problem.cost_of(sigma);
    let gap = cost - exact.cost;
    let epsilon = epsilon_bound(problem);
    let q_hat = relaxed.breakpoint_load.map(|_| {
        let candidate: f64 = sigma
            .iter()
            .zip(&problem.loads)
            .filter(|(on, _)| **on)
            .map(|(_, l)| l.magnitude)
            .sum();
        let relaxed_total: f64 = relaxed.d_ctrl.iter().sum();
        candidate - relaxed_total
    });
    Ok(OptimalityCertificate {
        cost,
        optimum: exact.cost,
        gap,
        epsilon,
        pass: gap <= epsilon + 1e-12,
        relaxed_cost: relaxed.cost,
        relaxation_gap: cost - relaxed.cost,
        q_hat,
        droop_matches_inverse_cost: problem.droop_matches_inverse_cost(),
    })
}

/// Genetic-algorithm hyperparameters; the defaults are conventional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneticParams {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    pub mutation_rate: Option<f64>,
}

impl Default for GeneticParams {
    fn default() -> Self {
        GeneticParams {
            population: 64,
            generations: 200,
            tournament: 3,
            crossover_rate: 0.9,
            mutation_rate: None, // 1/n
        }
    }
}

/// Seeded genetic search over switch vectors: tournament selection, uniform
/// crossover, per-bit mutation, elitist replacement. Deterministic for a
/// fixed seed.
pub fn solve_genetic(
    problem: &DispatchProblem,
    seed: u64,
    params: &GeneticParams,
) -> Result<DispatchSolution, DispatchError> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    problem.validate()?;
    let n = problem.loads.len();
    if n == 0 {
        return Ok(solution_for(problem, vec![], SolverTag::Genetic));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mutation = params.mutation_rate.unwrap_or(1.0 / n as f64);
    let pop_size = params.population.max(2);

    let mut population: Vec<Vec<bool>> = (0..pop_size)
        .map(|_| (0..n).map(|_| rng.random_bool(0.5)).collect())
        .collect();
    let mut fitness: Vec<f64> = population.iter().map(|s| problem.cost_of(s)).collect();
    let mut best_idx = argmin(&fitness);
    let mut best = (population[best_idx].clone(), fitness[best_idx]);

    for _ in 0..params.generations {
        let mut next = Vec::with_capacity(pop_size);
        next.push(best.0.clone()); // elitism
        while next.len() < pop_size {
            let a = tournament(&fitness, params.tournament, &mut rng);
            let b = tournament(&fitness, params.tournament, &mut rng);
            let (pa, pb) = (&population[a], &population[b]);
            let mut child: Vec<bool> = if rng.random_bool(params.crossover_rate) {
                (0..n)
                    .map(|k| if rng.random_bool(0.5) { pa[k] } else { pb[k] })
                    .collect()
            } else {
                pa.clone()
            };
            for bit in child.iter_mut() {
                if rng.random_bool(mutation) {
                    *bit = !*bit;
                }
            }
            next.push(child);
        }
        population = next;
        fitness = population.iter().map(|s| problem.cost_of(s)).collect();
        best_idx = argmin(&fitness);
        if fitness[best_idx] < best.1 {
            best = (population[best_idx].clone(), fitness[best_idx]);
        }
    }
    Ok(solution_for(problem, best.0, SolverTag::Genetic))
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn tournament(fitness: &[f64], size: usize, rng: &mut impl rand::Rng) -> usize {
    let mut best = rng.random_range(0..fitness.len());
    for _ in 1..size.max(1) {
        let c = rng.random_range(0..fitness.len());
        if fitness[c] < fitness[best] {
            best = c;
        }
    }
    best
}
