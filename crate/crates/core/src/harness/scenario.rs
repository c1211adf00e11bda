//! Experiment configuration and the built-in geometries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deadlock::DeadlockConfig;
use crate::netsim::{parse_node, JamWindow};
use crate::qp::OptimizationConfig;
use crate::trigger::TriggerKind;
use crate::{Error, Result, Round, Vec3};

/// Initial positions and one or more target sets. The swarm moves on to the
/// next set once every UAV has settled on the current one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub initial: Vec<Vec3>,
    pub phases: Vec<Vec<Vec3>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n_uavs: usize,
    pub n_cus: usize,
    pub rounds: Round,
    pub trigger: TriggerKind,
    pub loss_prob: f64,
    pub jams: Vec<JamWindow>,
    pub delta_d_min: f64,
    pub optimization: OptimizationConfig,
    pub deadlock: DeadlockConfig,
    pub soft_constraints: bool,
    pub planner: bool,
    pub disable_mlr: bool,
    /// Run CU computation phases on the rayon pool.
    pub parallel: bool,
    pub seed: u64,
    pub geometry: Geometry,
}

pub const BUILTINS: [&str; 4] = ["formations", "circle-exchange", "random-targets", "cross-exchange"];

impl Scenario {
    /// A built-in scenario with default settings.
    pub fn builtin(name: &str, n_uavs: usize, n_cus: usize, seed: u64) -> Result<Self> {
        let optimization = OptimizationConfig::default();
        let geometry = builtin_geometry(name, n_uavs, seed, &optimization)?;
        let rounds = match name {
            "formations" => 400,
            "cross-exchange" => 300,
            _ => 150,
        };
        Ok(Self {
            name: name.to_string(),
            n_uavs,
            n_cus,
            rounds,
            trigger: TriggerKind::Ht,
            loss_prob: 0.0,
            jams: Vec::new(),
            delta_d_min: 0.05,
            optimization,
            deadlock: DeadlockConfig::default(),
            soft_constraints: true,
            planner: true,
            disable_mlr: false,
            parallel: false,
            seed,
            geometry,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.optimization.validate()?;
        let n = self.n_uavs;
        if n == 0 || self.n_cus == 0 || self.n_cus > n {
            return Err(Error::Scenario(format!(
                "need 1 <= M <= N, got N={n}, M={}",
                self.n_cus
            )));
        }
        if self.rounds < 0 {
            return Err(Error::Scenario("rounds must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(Error::Scenario("loss probability must lie in [0, 1]".into()));
        }
        if !(self.delta_d_min >= 0.0) {
            return Err(Error::Scenario("delta_d_min must be nonnegative".into()));
        }
        let g = &self.geometry;
        if g.initial.len() != n || g.phases.is_empty() || g.phases.iter().any(|p| p.len() != n) {
            return Err(Error::Scenario("one initial position and target per UAV and phase".into()));
        }
        let c = &self.optimization;
        for (i, a) in g.initial.iter().enumerate() {
            for b in &g.initial[i + 1..] {
                if c.scaled_distance(a, b) < c.d_hat_min {
                    return Err(Error::Scenario(format!(
                        "initial positions {a:?} and {b:?} closer than d_hat_min"
                    )));
                }
            }
        }
        let nodes = n + self.n_cus;
        for j in &self.jams {
            if j.end < j.start || j.nodes.iter().any(|&x| x >= nodes) {
                return Err(Error::Scenario(format!("bad jam window {j:?}")));
            }
        }
        Ok(())
    }
}

fn builtin_geometry(name: &str, n: usize, seed: u64, c: &OptimizationConfig) -> Result<Geometry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6765_6f6d);
    let jitter = |rng: &mut ChaCha8Rng, p: Vec3| {
        p + Vec3::from_fn(|_, _| rng.random_range(-0.02..0.02))
    };
    match name {
        "circle-exchange" => {
            let ring = circle(n, 1.4, 1.3);
            let initial = ring.iter().map(|p| jitter(&mut rng, *p)).collect();
            let targets = (0..n).map(|i| ring[(i + n / 2) % n]).collect();
            Ok(Geometry {
                initial,
                phases: vec![targets],
            })
        }
        "cross-exchange" => {
            if n != 4 {
                return Err(Error::Scenario("cross-exchange is defined for 4 UAVs".into()));
            }
            // exact coordinates keep the swap perfectly symmetric
            let ring = vec![
                Vec3::new(1.0, 0.0, 1.0),
                Vec3::new(0.0, 1.0, 1.0),
                Vec3::new(-1.0, 0.0, 1.0),
                Vec3::new(0.0, -1.0, 1.0),
            ];
            let targets = (0..4).map(|i| ring[(i + 2) % 4]).collect();
            Ok(Geometry {
                initial: ring,
                phases: vec![targets],
            })
        }
        "random-targets" => {
            let initial = random_positions(n, c, &mut rng)?;
            let targets = random_positions(n, c, &mut rng)?;
            Ok(Geometry {
                initial,
                phases: vec![targets],
            })
        }
        "formations" => {
            let shapes = [plane(n)?, pyramid(n)?, cube(n)?, sphere(n), plane(n)?];
            let initial: Vec<Vec3> = shapes[0].iter().map(|p| jitter(&mut rng, *p)).collect();
            let mut phases = Vec::new();
            let mut from = initial.clone();
            for shape in &shapes[1..] {
                let assigned = assign_greedy(&from, shape);
                from = assigned.clone();
                phases.push(assigned);
            }
            Ok(Geometry { initial, phases })
        }
        other => Err(Error::Scenario(format!(
            "unknown scenario '{other}' (built-ins: {})",
            BUILTINS.join(", ")
        ))),
    }
}

fn circle(n: usize, radius: f64, z: f64) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            Vec3::new(radius * a.cos(), radius * a.sin(), z)
        })
        .collect()
}

/// Uniform positions well inside the flight box, pairwise at least 0.5 m apart
/// in scaled distance.
fn random_positions(n: usize, c: &OptimizationConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec3>> {
    let lo = Vec3::new(-1.4, -1.4, 0.5);
    let hi = Vec3::new(1.4, 1.4, 2.1);
    let mut out: Vec<Vec3> = Vec::with_capacity(n);
    for _ in 0..100_000 {
        if out.len() == n {
            break;
        }
        let p = Vec3::from_fn(|a, _| rng.random_range(lo[a]..hi[a]));
        if out.iter().all(|q| c.scaled_distance(&p, q) >= 2.0 * c.d_hat_min) {
            out.push(p);
        }
    }
    if out.len() < n {
        return Err(Error::Scenario(format!("cannot place {n} UAVs at random")));
    }
    Ok(out)
}

fn take(points: Vec<Vec3>, n: usize, shape: &str) -> Result<Vec<Vec3>> {
    if points.len() < n {
        return Err(Error::Scenario(format!(
            "{shape} formation supports at most {} UAVs",
            points.len()
        )));
    }
    Ok(points.into_iter().take(n).collect())
}

fn plane(n: usize) -> Result<Vec<Vec3>> {
    let side = (n as f64).sqrt().ceil() as usize;
    let spacing = (2.8 / side.max(2) as f64).min(0.9);
    let offset = (side as f64 - 1.0) * spacing / 2.0;
    let pts = (0..side * side)
        .map(|k| {
            let (r, c) = (k / side, k % side);
            Vec3::new(c as f64 * spacing - offset, r as f64 * spacing - offset, 1.0)
        })
        .collect();
    take(pts, n, "plane")
}

fn pyramid(n: usize) -> Result<Vec<Vec3>> {
    let corners = |h: f64, z: f64| {
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(x, y)| Vec3::new(x * h, y * h, z))
    };
    let edges = |h: f64, z: f64| {
        [(0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)].map(|(x, y)| Vec3::new(x * h, y * h, z))
    };
    let mut pts = Vec::new();
    pts.extend(corners(1.1, 0.6));
    pts.extend(corners(0.55, 1.3));
    pts.push(Vec3::new(0.0, 0.0, 2.0));
    pts.extend(edges(1.1, 0.6));
    pts.push(Vec3::new(0.0, 0.0, 0.6));
    take(pts, n, "pyramid")
}

fn cube(n: usize) -> Result<Vec<Vec3>> {
    let (h, zl, zh) = (0.8, 0.6, 2.0);
    let mut pts = Vec::new();
    for z in [zl, zh] {
        for (x, y) in [(-h, -h), (h, -h), (h, h), (-h, h)] {
            pts.push(Vec3::new(x, y, z));
        }
    }
    let zm = (zl + zh) / 2.0;
    pts.extend([
        Vec3::new(0.0, 0.0, zl),
        Vec3::new(0.0, 0.0, zh),
        Vec3::new(h, 0.0, zm),
        Vec3::new(-h, 0.0, zm),
        Vec3::new(0.0, h, zm),
        Vec3::new(0.0, -h, zm),
    ]);
    take(pts, n, "cube")
}

/// Fibonacci points on an ellipsoid centred in the box.
fn sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            Vec3::new(1.1 * r * a.cos(), 1.1 * r * a.sin(), 1.3 + 0.8 * z)
        })
        .collect()
}

/// Assign targets to UAVs by repeatedly taking the closest free pair.
fn assign_greedy(from: &[Vec3], to: &[Vec3]) -> Vec<Vec3> {
    let mut pairs: Vec<(f64, usize, usize)> = from
        .iter()
        .enumerate()
        .flat_map(|(i, a)| to.iter().enumerate().map(move |(j, b)| ((a - b).norm(), i, j)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut out = vec![None; from.len()];
    let mut used = vec![false; to.len()];
    for (_, i, j) in pairs {
        if out[i].is_none() && !used[j] {
            out[i] = Some(to[j]);
            used[j] = true;
        }
    }
    out.into_iter().map(|p| p.expect("square assignment")).collect()
}

/// Key-value scenario document (TOML). Every key is optional; see the
/// README for the list.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    /// Built-in geometry; ignored when `initial` and `targets` are given.
    pub builtin: Option<String>,
    pub n_uavs: Option<usize>,
    pub n_cus: Option<usize>,
    pub rounds: Option<Round>,
    pub trigger: Option<TriggerKind>,
    pub loss_prob: Option<f64>,
    pub delta_d_min: Option<f64>,
    pub soft_constraints: Option<bool>,
    pub planner: Option<bool>,
    pub disable_mlr: Option<bool>,
    pub parallel: Option<bool>,
    pub seed: Option<u64>,
    pub jam: Vec<JamSpec>,
    pub initial: Option<Vec<[f64; 3]>>,
    pub targets: Option<Vec<Vec<[f64; 3]>>>,
    pub optimization: Option<OptimizationConfig>,
    pub deadlock: Option<DeadlockConfig>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct JamSpec {
    pub start: Round,
    pub end: Round,
    /// Node names: `uN`, `cN` or a bare node index.
    pub nodes: Vec<String>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn into_scenario(self) -> Result<Scenario> {
        let to_vec = |p: &[f64; 3]| Vec3::new(p[0], p[1], p[2]);
        let explicit = self.initial.is_some() || self.targets.is_some();
        let n_from_file = self.initial.as_ref().map(|v| v.len());
        let default_n = if self.builtin.as_deref() == Some("cross-exchange") { 4 } else { 8 };
        let n_uavs = self.n_uavs.or(n_from_file).unwrap_or(default_n);
        let n_cus = self.n_cus.unwrap_or(n_uavs.min(2));
        let seed = self.seed.unwrap_or(0);
        let mut s = if explicit {
            let (Some(initial), Some(targets)) = (&self.initial, &self.targets) else {
                return Err(Error::Scenario("`initial` and `targets` go together".into()));
            };
            let mut s = Scenario::builtin("random-targets", n_uavs, n_cus, seed)?;
            s.name = "custom".into();
            s.geometry = Geometry {
                initial: initial.iter().map(to_vec).collect(),
                phases: targets.iter().map(|p| p.iter().map(to_vec).collect()).collect(),
            };
            s
        } else {
            let b = self.builtin.as_deref().unwrap_or("circle-exchange");
            Scenario::builtin(b, n_uavs, n_cus, seed)?
        };
        if let Some(opt) = self.optimization {
            s.optimization = opt;
            if !explicit {
                let b = s.name.clone();
                s.geometry = builtin_geometry(&b, n_uavs, seed, &s.optimization)?;
            }
        }
        if let Some(v) = self.name {
            s.name = v;
        }
        if let Some(v) = self.rounds {
            s.rounds = v;
        }
        if let Some(v) = self.trigger {
            s.trigger = v;
        }
        if let Some(v) = self.loss_prob {
            s.loss_prob = v;
        }
        if let Some(v) = self.delta_d_min {
            s.delta_d_min = v;
        }
        if let Some(v) = self.soft_constraints {
            s.soft_constraints = v;
        }
        if let Some(v) = self.planner {
            s.planner = v;
        }
        if let Some(v) = self.disable_mlr {
            s.disable_mlr = v;
        }
        if let Some(v) = self.parallel {
            s.parallel = v;
        }
        if let Some(v) = self.deadlock {
            s.deadlock = v;
        }
        for j in self.jam {
            let nodes = j
                .nodes
                .iter()
                .map(|x| parse_node(x, n_uavs))
                .collect::<Result<Vec<_>>>()?;
            s.jams.push(JamWindow {
                start: j.start,
                end: j.end,
                nodes,
            });
        }
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid() {
        for name in BUILTINS {
            let n = if name == "cross-exchange" { 4 } else { 8 };
            let s = Scenario::builtin(name, n, 2, 3).unwrap();
            s.validate().unwrap();
            let c = &s.optimization;
            for phase in &s.geometry.phases {
                for (i, a) in phase.iter().enumerate() {
                    assert!(c.state_box.contains(&crate::NominalState::hover(*a), 0.0));
                    for b in &phase[i + 1..] {
                        assert!(c.scaled_distance(a, b) >= c.d_hat_min, "{name}");
                    }
                }
            }
        }
        assert!(Scenario::builtin("nope", 4, 1, 0).is_err());
    }

    #[test]
    fn formations_have_four_transitions() {
        let s = Scenario::builtin("formations", 8, 2, 0).unwrap();
        assert_eq!(s.geometry.phases.len(), 4);
    }

    #[test]
    fn scenario_file_overrides() {
        let text = r#"
            builtin = "circle-exchange"
            n_uavs = 6
            n_cus = 3
            rounds = 40
            trigger = "rr"
            loss_prob = 0.1
            [[jam]]
            start = 5
            end = 15
            nodes = ["c0", "u1"]
        "#;
        let s = ScenarioFile::parse(text).unwrap().into_scenario().unwrap();
        assert_eq!((s.n_uavs, s.n_cus, s.rounds), (6, 3, 40));
        assert_eq!(s.trigger, TriggerKind::Rr);
        assert_eq!(s.jams[0].nodes, vec![6, 1]);
        assert!(ScenarioFile::parse("bogus_key = 1").is_err());
    }

    #[test]
    fn explicit_geometry() {
        let text = r#"
            n_cus = 1
            initial = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]]
            targets = [[[1.0, 1.0, 1.0], [0.0, 1.0, 1.0]]]
        "#;
        let s = ScenarioFile::parse(text).unwrap().into_scenario().unwrap();
        assert_eq!(s.n_uavs, 2);
        assert_eq!(s.geometry.phases[0][0], Vec3::new(1.0, 1.0, 1.0));
    }
}
