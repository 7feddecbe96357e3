//! Random linear-Gaussian structural causal models with interventional
//! environments.
//!
//! Node ids: predictors are `0..p`, the target is `p`. Environment 0 is
//! observational; every other environment intervenes on a fixed fraction of
//! the predictors by rescaling their noise and, sometimes, perturbing their
//! incoming coefficients. The target's equation never changes.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{blocks_to_csv, EnvBlock, EnvironmentDataset};
use crate::error::{Result, WvmError};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScmSpec {
    /// Number of predictors (the graph has `p + 1` nodes).
    pub p: usize,
    /// 1-based position of the target in the causal order. `None` picks
    /// `max(⌈0.4 (p + 1)⌉, n_parents + 1)`.
    pub target_position: Option<usize>,
    pub n_parents: usize,
    /// Expected degree `k`; each pair is connected with probability `k / p`.
    pub avg_degree: f64,
    pub n_envs: usize,
    pub n_per_env: usize,
    pub coef_range: (f64, f64),
    pub noise_var_range: (f64, f64),
    /// Fraction of predictors intervened on in each interventional environment.
    pub intervention_fraction: f64,
    /// Range from which the noise-scale bounds `lb < ub` are drawn.
    pub scale_bounds_range: (f64, f64),
    /// Fraction of predictors shared by consecutive intervention sets.
    pub overlap_fraction: f64,
    /// Probability that an intervened node gets a random (rather than
    /// midpoint) noise scale.
    pub random_scale_prob: f64,
    /// Probability that an intervened node's incoming coefficients are shifted.
    pub coef_shift_prob: f64,
    pub seed: u64,
}

impl Default for ScmSpec {
    fn default() -> Self {
        Self {
            p: 50,
            target_position: None,
            n_parents: 6,
            avg_degree: 12.0,
            n_envs: 5,
            n_per_env: 500,
            coef_range: (0.2, 1.0),
            noise_var_range: (0.09, 1.0),
            intervention_fraction: 0.65,
            scale_bounds_range: (0.5, 5.0),
            overlap_fraction: 0.40,
            random_scale_prob: 2.0 / 3.0,
            coef_shift_prob: 1.0 / 3.0,
            seed: 0,
        }
    }
}

impl ScmSpec {
    pub fn resolved_target_position(&self) -> usize {
        self.target_position.unwrap_or_else(|| {
            let default = (0.4 * (self.p + 1) as f64).ceil() as usize;
            default.max(self.n_parents + 1).min(self.p + 1)
        })
    }

    pub fn validate(&self) -> Result<()> {
        let pos = self.resolved_target_position();
        if pos == 0 || pos > self.p + 1 {
            return Err(WvmError::Infeasible(format!(
                "target position {pos} outside 1..={}",
                self.p + 1
            )));
        }
        if self.n_parents > pos - 1 {
            return Err(WvmError::Infeasible(format!(
                "{} parents requested but the target has only {} non-descendants",
                self.n_parents,
                pos - 1
            )));
        }
        if self.n_envs == 0 || self.n_per_env == 0 {
            return Err(WvmError::Infeasible("need at least one environment and sample".into()));
        }
        if !(0.0..=1.0).contains(&self.intervention_fraction)
            || !(0.0..=1.0).contains(&self.overlap_fraction)
        {
            return Err(WvmError::Infeasible("fractions must lie in [0, 1]".into()));
        }
        let ranges = [self.coef_range, self.noise_var_range, self.scale_bounds_range];
        if ranges.iter().any(|&(lo, hi)| !(lo > 0.0 && lo <= hi)) {
            return Err(WvmError::Infeasible("ranges must be positive and ordered".into()));
        }
        if self.avg_degree < 0.0 {
            return Err(WvmError::Infeasible("average degree must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Observational structural equations in causal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralEquations {
    /// `parents[v] = [(parent, coefficient)]`.
    pub parents: Vec<Vec<(usize, f64)>>,
    pub noise_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeIntervention {
    pub id: usize,
    /// Multiplier on the node's noise standard deviation.
    pub scale: f64,
    pub coef_shifted: bool,
    /// Shifted incoming coefficients `[(parent, coefficient)]`, when shifted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coefficients: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvInterventions {
    pub env: usize,
    pub nodes: Vec<NodeIntervention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub p: usize,
    pub target: usize,
    pub causal_order: Vec<usize>,
    /// `[from, to, coefficient]` in the observational environment.
    pub edges: Vec<(usize, usize, f64)>,
    pub parents: Vec<usize>,
    pub noise_var: Vec<f64>,
    pub interventions: Vec<EnvInterventions>,
    pub seed: u64,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }

    /// Every predictor intervened on in at least one environment.
    pub fn covered(&self) -> Vec<bool> {
        let mut c = vec![false; self.p];
        for env in &self.interventions {
            for n in &env.nodes {
                c[n.id] = true;
            }
        }
        c
    }
}

fn sample_coefficient(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    let mag = rng.random_range(range.0..=range.1);
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

/// Draws the graph and its observational structural equations.
pub fn sample_scm(spec: &ScmSpec, seed: u64) -> Result<(GroundTruth, StructuralEquations)> {
    spec.validate()?;
    let p = spec.p;
    let target = p;
    let pos = spec.resolved_target_position() - 1;
    let mut rng = rng_for(seed, "scm_graph", 0);

    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    order.insert(pos, target);

    let prob = if p == 0 { 0.0 } else { (spec.avg_degree / p as f64).min(1.0) };
    let nv = p + 1;
    let mut parent_lists: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for i in 0..nv {
        for j in i + 1..nv {
            let (from, to) = (order[i], order[j]);
            if rng.random_bool(prob) && to != target {
                parent_lists[to].push(from);
            }
        }
    }
    let candidates: Vec<usize> = order[..pos].to_vec();
    let mut parents: Vec<usize> = candidates
        .choose_multiple(&mut rng, spec.n_parents)
        .copied()
        .collect();
    parents.sort_unstable();
    parent_lists[target] = parents.clone();

    // observational covariance, filled in causal order
    let mut cov = vec![vec![0.0; nv]; nv];
    let mut eq_parents: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nv];
    let mut noise_var = vec![0.0; nv];
    for &v in &order {
        noise_var[v] = rng.random_range(spec.noise_var_range.0..=spec.noise_var_range.1);
        let mut coefs: Vec<(usize, f64)> = parent_lists[v]
            .iter()
            .map(|&u| (u, sample_coefficient(&mut rng, spec.coef_range)))
            .collect();
        if !coefs.is_empty() {
            let var: f64 = coefs
                .iter()
                .flat_map(|&(a, ca)| coefs.iter().map(move |&(b, cb)| (a, ca, b, cb)))
                .map(|(a, ca, b, cb)| ca * cb * cov[a][b])
                .sum();
            let norm = var.sqrt();
            coefs.iter_mut().for_each(|(_, c)| *c /= norm);
        }
        for &u in &order {
            if u == v {
                break;
            }
            let c: f64 = coefs.iter().map(|&(a, ca)| ca * cov[a][u]).sum();
            cov[v][u] = c;
            cov[u][v] = c;
        }
        let explained: f64 = coefs.iter().map(|&(a, ca)| ca * cov[v][a]).sum();
        cov[v][v] = explained + noise_var[v];
        eq_parents[v] = coefs;
    }

    let mut edges: Vec<(usize, usize, f64)> = order
        .iter()
        .flat_map(|&v| eq_parents[v].iter().map(move |&(u, c)| (u, v, c)))
        .collect();
    edges.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));

    let truth = GroundTruth {
        p,
        target,
        causal_order: order,
        edges,
        parents,
        noise_var: noise_var.clone(),
        interventions: Vec::new(),
        seed,
    };
    let eqs = StructuralEquations {
        parents: eq_parents,
        noise_var,
    };
    Ok((truth, eqs))
}

/// Intervention sets for environments `1..n_envs`, with consecutive overlap
/// and full coverage of the predictors.
fn intervention_sets(spec: &ScmSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let p = spec.p;
    let n_int = spec.n_envs.saturating_sub(1);
    let m = (spec.intervention_fraction * p as f64).ceil() as usize;
    if n_int == 0 || m == 0 {
        return vec![Vec::new(); n_int];
    }
    let m = m.min(p);
    let carry_n = ((spec.overlap_fraction * p as f64).round() as usize).min(m);
    let all: Vec<usize> = (0..p).collect();
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(n_int);
    for e in 0..n_int {
        let set = if e == 0 {
            all.choose_multiple(rng, m).copied().collect()
        } else {
            let prev = &sets[e - 1];
            let mut set: Vec<usize> = prev.choose_multiple(rng, carry_n).copied().collect();
            let outside: Vec<usize> = all.iter().copied().filter(|v| !prev.contains(v)).collect();
            let need = m - set.len();
            let fresh: Vec<usize> = outside.choose_multiple(rng, need).copied().collect();
            set.extend(&fresh);
            if set.len() < m {
                let rest: Vec<usize> = prev.iter().copied().filter(|v| !set.contains(v)).collect();
                let extra: Vec<usize> = rest.choose_multiple(rng, m - set.len()).copied().collect();
                set.extend(extra);
            }
            set
        };
        sets.push(set);
    }

    // repair: every predictor intervened on at least once
    let mut count = vec![0usize; p];
    for s in &sets {
        for &v in s {
            count[v] += 1;
        }
    }
    for v in 0..p {
        if count[v] > 0 {
            continue;
        }
        let e = rng.random_range(0..n_int);
        let replaceable: Vec<usize> = (0..sets[e].len()).filter(|&i| count[sets[e][i]] >= 2).collect();
        match replaceable.choose(rng) {
            Some(&i) => {
                count[sets[e][i]] -= 1;
                sets[e][i] = v;
            }
            None => sets[e].push(v),
        }
        count[v] += 1;
    }
    for s in &mut sets {
        s.sort_unstable();
    }
    sets
}

/// Draws the interventions and samples every environment.
pub fn generate_environments(
    truth: &GroundTruth,
    eqs: &StructuralEquations,
    spec: &ScmSpec,
    seed: u64,
) -> Result<(SimulatedData, Vec<EnvInterventions>)> {
    spec.validate()?;
    let p = truth.p;
    let nv = p + 1;
    let mut rng = rng_for(seed, "interventions", 0);
    let sets = intervention_sets(spec, &mut rng);

    let mut interventions = Vec::with_capacity(sets.len());
    for (i, set) in sets.iter().enumerate() {
        let mut nodes = Vec::with_capacity(set.len());
        for &v in set {
            let (r0, r1) = spec.scale_bounds_range;
            let a = rng.random_range(r0..=r1);
            let b = rng.random_range(r0..=r1);
            let (lb, ub) = if a <= b { (a, b) } else { (b, a) };
            let scale = if rng.random_bool(spec.random_scale_prob) {
                rng.random_range(lb..=ub)
            } else {
                0.5 * (lb + ub)
            };
            let coef_shifted = rng.random_bool(spec.coef_shift_prob);
            let coefficients = if coef_shifted {
                eqs.parents[v]
                    .iter()
                    .map(|&(u, c)| (u, c + rng.sample::<f64, _>(StandardNormal)))
                    .collect()
            } else {
                Vec::new()
            };
            nodes.push(NodeIntervention {
                id: v,
                scale,
                coef_shifted,
                coefficients,
            });
        }
        interventions.push(EnvInterventions { env: i + 1, nodes });
    }

    let mut blocks = Vec::with_capacity(spec.n_envs);
    for e in 0..spec.n_envs {
        let mut parents = eqs.parents.clone();
        let mut sd: Vec<f64> = eqs.noise_var.iter().map(|v| v.sqrt()).collect();
        if e > 0 {
            for node in &interventions[e - 1].nodes {
                sd[node.id] *= node.scale;
                if node.coef_shifted {
                    parents[node.id] = node.coefficients.clone();
                }
            }
        }
        let mut rng = rng_for(seed, "env_data", e as u64);
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let mut x = Vec::with_capacity(spec.n_per_env * p);
        let mut y = Vec::with_capacity(spec.n_per_env);
        let mut vals = vec![0.0; nv];
        for _ in 0..spec.n_per_env {
            for &v in &truth.causal_order {
                let mean: f64 = parents[v].iter().map(|&(u, c)| c * vals[u]).sum();
                vals[v] = mean + sd[v] * rng.sample(noise);
            }
            x.extend_from_slice(&vals[..p]);
            y.push(vals[p]);
        }
        blocks.push(EnvBlock::new(e, p, x, y)?);
    }
    Ok((SimulatedData { p, blocks }, interventions))
}

/// Generated samples before dataset validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub p: usize,
    pub blocks: Vec<EnvBlock>,
}

impl SimulatedData {
    pub fn column_names(&self) -> Vec<String> {
        (1..=self.p).map(|j| format!("x{j}")).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let labels: Vec<i64> = (0..self.blocks.len() as i64).collect();
        blocks_to_csv(&self.blocks, &self.column_names(), &labels)
    }

    /// Fails for a single environment.
    pub fn to_dataset(&self) -> Result<EnvironmentDataset> {
        let labels = (0..self.blocks.len() as i64).collect();
        EnvironmentDataset::with_metadata(self.blocks.clone(), self.column_names(), labels)
    }
}

/// A simulated instance: ground truth (with interventions) and data.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub truth: GroundTruth,
    pub equations: StructuralEquations,
    pub data: SimulatedData,
}

impl Simulation {
    pub fn dataset(&self) -> Result<EnvironmentDataset> {
        self.data.to_dataset()
    }
}

pub fn simulate(spec: &ScmSpec) -> Result<Simulation> {
    let (mut truth, equations) = sample_scm(spec, spec.seed)?;
    let (data, interventions) = generate_environments(&truth, &equations, spec, spec.seed)?;
    truth.interventions = interventions;
    Ok(Simulation {
        truth,
        equations,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(p: usize, n_parents: usize) -> ScmSpec {
        ScmSpec {
            p,
            n_parents,
            avg_degree: 0.24 * p as f64,
            n_per_env: 50,
            ..ScmSpec::default()
        }
    }

    #[test]
    fn exact_parent_count() {
        for seed in 0..20 {
            let (truth, eqs) = sample_scm(&small(4, 2), seed).unwrap();
            assert_eq!(truth.parents.len(), 2);
            assert_eq!(eqs.parents[truth.target].len(), 2);
            let pos = truth.causal_order.iter().position(|&v| v == truth.target).unwrap();
            for &pa in &truth.parents {
                let at = truth.causal_order.iter().position(|&v| v == pa).unwrap();
                assert!(at < pos);
            }
        }
    }

    #[test]
    fn average_degree_tracks_k() {
        let spec = ScmSpec::default();
        let total: f64 = (0..500)
            .map(|seed| {
                let (truth, _) = sample_scm(&spec, seed).unwrap();
                let mut deg = vec![0usize; spec.p + 1];
                for &(a, b, _) in &truth.edges {
                    deg[a] += 1;
                    deg[b] += 1;
                }
                deg[..spec.p].iter().sum::<usize>() as f64 / spec.p as f64
            })
            .sum();
        let avg = total / 500.0;
        assert!((avg - spec.avg_degree).abs() < 0.1 * spec.avg_degree, "{avg}");
    }

    #[test]
    fn parent_combination_has_unit_variance() {
        // exact normalization shows up as Var(Σ c x) ≈ 1 in a large observational sample
        let spec = ScmSpec {
            p: 8,
            n_parents: 3,
            avg_degree: 3.0,
            n_envs: 1,
            n_per_env: 40_000,
            ..ScmSpec::default()
        };
        let sim = simulate(&spec).unwrap();
        let block = &sim.data.blocks[0];
        let t = sim.truth.target;
        let lin: Vec<f64> = block
            .rows()
            .map(|row| sim.equations.parents[t].iter().map(|&(u, c)| c * row[u]).sum())
            .collect();
        let mean = lin.iter().sum::<f64>() / lin.len() as f64;
        let var = lin.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / lin.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn too_many_parents_is_infeasible() {
        let spec = ScmSpec {
            p: 10,
            n_parents: 10,
            target_position: Some(4),
            ..ScmSpec::default()
        };
        assert!(matches!(sample_scm(&spec, 0), Err(WvmError::Infeasible(_))));
    }

    #[test]
    fn every_predictor_is_intervened_on() {
        for seed in 0..50 {
            let spec = ScmSpec {
                p: 20,
                n_envs: 3,
                n_per_env: 10,
                seed,
                ..small(20, 3)
            };
            let sim = simulate(&spec).unwrap();
            assert!(sim.truth.covered().iter().all(|&c| c));
            for env in &sim.truth.interventions {
                assert!(env.nodes.iter().all(|n| n.id != sim.truth.target));
                assert!(env.nodes.len() >= 13);
            }
        }
    }

    #[test]
    fn consecutive_sets_overlap() {
        let spec = ScmSpec {
            n_envs: 5,
            n_per_env: 2,
            ..ScmSpec::default()
        };
        let sim = simulate(&spec).unwrap();
        let sets: Vec<Vec<usize>> = sim
            .truth
            .interventions
            .iter()
            .map(|e| e.nodes.iter().map(|n| n.id).collect())
            .collect();
        for pair in sets.windows(2) {
            let shared = pair[1].iter().filter(|v| pair[0].contains(v)).count();
            assert!(shared >= 20, "{shared}");
        }
    }

    #[test]
    fn single_environment_is_observational() {
        let spec = ScmSpec {
            n_envs: 1,
            ..small(6, 2)
        };
        let sim = simulate(&spec).unwrap();
        assert!(sim.truth.interventions.is_empty());
        assert_eq!(sim.data.blocks.len(), 1);
        let csv = sim.data.to_csv_string();
        assert!(csv.starts_with("env,y,x1,"));
        assert!(csv.lines().skip(1).all(|l| l.starts_with("0,")));
        assert!(sim.dataset().is_err());
    }

    #[test]
    fn no_interventions_means_identical_distributions() {
        let spec = ScmSpec {
            p: 6,
            n_parents: 2,
            avg_degree: 2.0,
            n_envs: 2,
            n_per_env: 2000,
            intervention_fraction: 0.0,
            seed: 5,
            ..ScmSpec::default()
        };
        let sim = simulate(&spec).unwrap();
        assert!(sim.truth.interventions[0].nodes.is_empty());
        let cols = |b: &EnvBlock| -> Vec<Vec<f64>> {
            let mut c: Vec<Vec<f64>> = (0..b.p()).map(|j| b.rows().map(|r| r[j]).collect()).collect();
            c.push(b.y().to_vec());
            c
        };
        let (a, b) = (cols(&sim.data.blocks[0]), cols(&sim.data.blocks[1]));
        let n = 2000.0;
        for (u, v) in a.iter().zip(&b) {
            let moments = |s: &[f64]| {
                let m = s.iter().sum::<f64>() / n;
                let var = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
                let m4 = s.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
                (m, var, m4)
            };
            let (mu, vu, ku) = moments(u);
            let (mv, vv, kv) = moments(v);
            let se_mean = ((vu + vv) / n).sqrt();
            assert!((mu - mv).abs() < 4.0 * se_mean);
            let se_var = ((ku - vu * vu + kv - vv * vv) / n).sqrt();
            assert!((vu - vv).abs() < 4.0 * se_var);
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let spec = ScmSpec {
            seed: 9,
            ..small(10, 3)
        };
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a.data.to_csv_string(), b.data.to_csv_string());
        assert_eq!(a.truth.to_json(), b.truth.to_json());
        let c = simulate(&ScmSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.data.to_csv_string(), c.data.to_csv_string());
    }

    #[test]
    fn target_equation_is_invariant() {
        let sim = simulate(&small(12, 3)).unwrap();
        for env in &sim.truth.interventions {
            assert!(env.nodes.iter().all(|n| n.id < 12));
        }
        assert!(sim.equations.parents[sim.truth.target].iter().all(|&(u, _)| sim.truth.parents.contains(&u)));
    }
}
