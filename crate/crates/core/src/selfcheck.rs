//! Built-in consistency suites: reduction against the naive oracle, fixed
//! topology fixtures, matching against brute force, and analytic gradients
//! against finite differences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagram::{brute_force_w2, w2_distance, PersistenceDiagram};
use crate::filtration::{compute_persistence, naive_persistence, Diagrams};
use crate::loss::{topo_loss, topo_loss_against, TopoLossResult};
use crate::volume::Volume;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy)]
pub struct SelfCheckConfig {
    pub seed: u64,
    pub ph_volumes: usize,
    pub w2_pairs: usize,
    pub gradient_pairs: usize,
}

impl Default for SelfCheckConfig {
    fn default() -> Self {
        Self { seed: 0, ph_volumes: 50, w2_pairs: 200, gradient_pairs: 20 }
    }
}

/// A volume whose values are a random permutation of `offset + k * step`.
pub fn distinct_volume(dims: [usize; 3], step: f64, offset: f64, rng: &mut impl Rng) -> Volume {
    let n = dims.iter().product::<usize>();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    Volume::new(dims, ranks.into_iter().map(|r| offset + r as f64 * step).collect())
        .expect("finite values of the right length")
}

/// Hollow 5x5x5 cube: ones on the boundary, zeros inside.
pub fn shell_fixture() -> Volume {
    Volume::from_fn([5, 5, 5], |x, y, z| if [x, y, z].iter().any(|&c| c == 0 || c == 4) { 1.0 } else { 0.0 })
        .expect("fixture is valid")
}

/// A one-voxel-thick square loop of eight voxels in the middle slab of a
/// 5x5x3 block of zeros.
pub fn ring_fixture() -> Volume {
    Volume::from_fn([5, 5, 3], |x, y, z| {
        let in_square = (1..=3).contains(&x) && (1..=3).contains(&y);
        if z == 1 && in_square && !(x == 2 && y == 2) {
            1.0
        } else {
            0.0
        }
    })
    .expect("fixture is valid")
}

fn summary(d: &Diagrams) -> Vec<(usize, u64, u64, bool)> {
    let mut s: Vec<_> =
        d.iter().flat_map(|d| d.points()).map(|p| (p.dim, p.birth.to_bits(), p.death.to_bits(), p.essential)).collect();
    s.sort_unstable();
    s
}

fn check_oracle(cfg: &SelfCheckConfig) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut failures = 0;
    for _ in 0..cfg.ph_volumes {
        let v = distinct_volume([4, 4, 4], 1.0 / 64.0, 0.0, &mut rng);
        let naive = naive_persistence(&v).expect("4^3 is within the oracle limit");
        if summary(&compute_persistence(&v)) != summary(&naive) {
            failures += 1;
        }
    }
    CheckOutcome {
        name: "persistence-vs-naive",
        passed: failures == 0,
        detail: format!("{failures} of {} random 4^3 volumes disagree", cfg.ph_volumes),
    }
}

fn check_fixtures() -> CheckOutcome {
    let solid = Volume::filled([3, 3, 3], 1.0).expect("valid");
    let cases = [
        ("solid box", solid, vec![(0, true)]),
        ("hollow shell", shell_fixture(), vec![(0, true), (2, false)]),
        ("ring", ring_fixture(), vec![(0, true), (1, false)]),
    ];
    let mut bad = Vec::new();
    for (name, v, expected) in cases {
        let d = compute_persistence(&v);
        let got: Vec<(usize, bool)> = d.iter().flat_map(|d| d.points()).map(|p| (p.dim, p.essential)).collect();
        let agrees = naive_persistence(&v).map(|n| summary(&n) == summary(&d)).unwrap_or(true);
        if got != expected || !agrees {
            bad.push(name);
        }
    }
    CheckOutcome {
        name: "topology-fixtures",
        passed: bad.is_empty(),
        detail: if bad.is_empty() { "box, shell and ring as expected".into() } else { format!("failed: {bad:?}") },
    }
}

fn random_diagram(rng: &mut impl Rng, max_points: usize) -> PersistenceDiagram {
    let n = rng.random_range(0..=max_points);
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let death: f64 = rng.random_range(0.0..1.0);
            (death + rng.random_range(0.0..1.0), death)
        })
        .collect();
    PersistenceDiagram::from_coords(0, &coords).expect("birth >= death")
}

fn check_matching(cfg: &SelfCheckConfig) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..cfg.w2_pairs {
        let a = random_diagram(&mut rng, 4);
        let b = random_diagram(&mut rng, 4);
        let (w, _) = w2_distance(&a, &b).expect("same dimension");
        let exact = brute_force_w2(&a, &b).expect("within the brute-force limit");
        worst = worst.max((w - exact).abs());
    }
    CheckOutcome {
        name: "w2-vs-brute-force",
        passed: worst <= 1e-9,
        detail: format!("max deviation {worst:e} over {} pairs", cfg.w2_pairs),
    }
}

/// Matchings, critical voxels and, per point-to-point pair, the voxel carrying
/// the larger coordinate difference. Finite differences are only meaningful
/// while all of these stay fixed.
fn structure(target: &Diagrams, r: &TopoLossResult) -> Vec<Vec<[usize; 3]>> {
    let mut out = Vec::new();
    for k in 0..3 {
        let (t, d) = (target[k].points(), r.recon_diagrams[k].points());
        out.push(d.iter().flat_map(|p| [p.birth_vertex, p.death_vertex]).collect());
        let mut row = Vec::new();
        for &pair in &r.matchings[k].pairs {
            let code = |x: Option<usize>| x.map_or(usize::MAX, |i| i);
            row.push([code(pair.0), code(pair.1), 0]);
            if let (Some(i), Some(j)) = pair {
                let birth_active = (d[j].birth - t[i].birth).abs() >= (d[j].death - t[i].death).abs();
                row.push(if birth_active { d[j].birth_vertex } else { d[j].death_vertex });
            }
        }
        out.push(row);
    }
    out
}

fn check_gradient(cfg: &SelfCheckConfig) -> CheckOutcome {
    const H: f64 = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9a4d);
    let (mut qualified, mut sampled, mut bad) = (0usize, 0usize, 0usize);
    for _ in 0..cfg.gradient_pairs {
        let target = Volume::from_fn([6, 6, 6], |_, _, _| rng.random_range(0.0..216.0)).expect("finite");
        let recon = distinct_volume([6, 6, 6], 1.0, 0.0, &mut rng);
        let base = topo_loss(&target, &recon, true).expect("same dims");
        let target_diagrams = compute_persistence(&target);
        let base_structure = structure(&target_diagrams, &base);
        let grad = base.gradient.as_ref().expect("gradient requested");
        for (i, &g) in grad.data().iter().enumerate() {
            if g.abs() <= 1e-6 {
                continue;
            }
            sampled += 1;
            let eval = |delta: f64| {
                let mut data = recon.data().to_vec();
                data[i] += delta;
                let v = Volume::new(recon.dims(), data).expect("finite");
                topo_loss_against(&target_diagrams, &v, false).expect("same dims")
            };
            let (plus, minus) = (eval(H), eval(-H));
            if structure(&target_diagrams, &plus) != base_structure
                || structure(&target_diagrams, &minus) != base_structure
            {
                continue;
            }
            qualified += 1;
            let fd = (plus.value - minus.value) / (2.0 * H);
            if (fd - g).abs() > 1e-3 * g.abs() {
                bad += 1;
            }
        }
    }
    let share = if sampled == 0 { 0.0 } else { qualified as f64 / sampled as f64 };
    CheckOutcome {
        name: "gradient-vs-finite-differences",
        passed: bad == 0 && share >= 0.9,
        detail: format!("{bad} mismatches; {qualified}/{sampled} components qualified ({:.1}%)", 100.0 * share),
    }
}

/// Runs every suite.
pub fn run(cfg: &SelfCheckConfig) -> Vec<CheckOutcome> {
    vec![check_oracle(cfg), check_fixtures(), check_matching(cfg), check_gradient(cfg)]
}
