//! Brute-force cross-checks of the derived math, runnable as `selftest`.
//!
//! Each check validates an implementation against something it cannot
//! share code with: frozen generator outputs, exhaustive enumeration of
//! permutations or grid distributions, or closed-form invariants evaluated
//! independently. All checks are deterministic.

use crate::attack::reweight;
use crate::entropy::inverse_cdf_index;
use crate::rng::SplitMix64;
use crate::watermark::{
    dipmark_reweight_with_permutation, green_list, replay_green_flags, WatermarkConfig,
    WatermarkScheme,
};

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn pass(name: &'static str, detail: impl Into<String>) -> Self {
        CheckReport { name, passed: true, detail: detail.into() }
    }

    fn fail(name: &'static str, detail: impl Into<String>) -> Self {
        CheckReport { name, passed: false, detail: detail.into() }
    }
}

/// Frozen outputs of the 64-bit mixing generator, three per seed.
pub fn splitmix_reference() -> CheckReport {
    const NAME: &str = "splitmix_reference";
    const EXPECTED: [(u64, [u64; 3]); 4] = [
        (0, [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]),
        (1, [0x910A2DEC89025CC1, 0xBEEB8DA1658EEC67, 0xF893A2EEFB32555E]),
        (42, [0xBDD732262FEB6E95, 0x28EFE333B266F103, 0x47526757130F9F52]),
        (
            0xDEADBEEF,
            [0x4ADFB90F68C9EB9B, 0xDE586A3141A10922, 0x021FBC2F8E1CFC1D],
        ),
    ];
    for (seed, outs) in EXPECTED {
        let mut g = SplitMix64::new(seed);
        for (i, &want) in outs.iter().enumerate() {
            let got = g.next_u64();
            if got != want {
                return CheckReport::fail(
                    NAME,
                    format!("seed {seed} output {i}: got {got:#018x}, want {want:#018x}"),
                );
            }
        }
    }
    CheckReport::pass(NAME, "4 seeds x 3 outputs match the frozen table")
}

fn random_distribution(g: &mut SplitMix64, n: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| -(1.0 - g.next_open_f64()).ln()).collect();
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    p
}

/// Multiplicative reweighting against its closed-form invariants: unit
/// mass, preserved off-target ratios, and the boosted-target mass formula
/// bM / (1 + (b - 1)M), each evaluated without reusing the implementation's
/// arithmetic.
pub fn reweight_invariants() -> CheckReport {
    const NAME: &str = "reweight_invariants";
    let third = 1.0 / 3.0;
    let hand = reweight(&[third, third, third], &[0], 3.0).unwrap();
    for (got, want) in hand.iter().zip([0.6, 0.2, 0.2]) {
        if (got - want).abs() > f64::EPSILON {
            return CheckReport::fail(NAME, format!("hand case: got {got}, want {want}"));
        }
    }
    let mut g = SplitMix64::new(0x0AC1E);
    for trial in 0..200 {
        let n = 2 + (g.next_below(63)) as usize;
        let p = random_distribution(&mut g, n);
        let mut targets: Vec<usize> =
            (0..n).filter(|_| g.next_f64() < 0.3).collect();
        if targets.is_empty() && g.next_f64() < 0.5 {
            targets.push(g.next_below(n as u64) as usize);
        }
        let boost = [1.0, 2.0, 10.0, 100.0][g.next_below(4) as usize];
        let out = match reweight(&p, &targets, boost) {
            Ok(out) => out,
            Err(e) => return CheckReport::fail(NAME, format!("trial {trial}: {e}")),
        };
        if boost == 1.0 || targets.is_empty() {
            if out != p {
                return CheckReport::fail(NAME, format!("trial {trial}: identity case changed"));
            }
            continue;
        }
        let sum: f64 = out.iter().rev().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return CheckReport::fail(NAME, format!("trial {trial}: mass {sum}"));
        }
        let m: f64 = targets.iter().rev().map(|&t| p[t]).sum();
        let want_target_mass = boost * m / (1.0 + (boost - 1.0) * m);
        let got_target_mass: f64 = targets.iter().rev().map(|&t| out[t]).sum();
        if (got_target_mass - want_target_mass).abs() > 1e-12 {
            return CheckReport::fail(
                NAME,
                format!("trial {trial}: target mass {got_target_mass} vs {want_target_mass}"),
            );
        }
        let off: Vec<usize> = (0..n).filter(|i| !targets.contains(i)).collect();
        for pair in off.windows(2) {
            let (i, j) = (pair[0], pair[1]);
            if (out[i] * p[j] - out[j] * p[i]).abs() > 1e-15 {
                return CheckReport::fail(
                    NAME,
                    format!("trial {trial}: off-target ratio moved at ({i}, {j})"),
                );
            }
        }
    }
    CheckReport::pass(NAME, "hand case and 200 random trials hold")
}

/// Heap's algorithm; calls `f` with every permutation of 0..n.
pub fn for_each_permutation<F: FnMut(&[usize])>(n: usize, mut f: F) {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Permutation reweighting averaged over all 720 orderings of a 6-token
/// vocabulary must return the input distribution exactly (to accumulation
/// error): that is the distortion-freeness claim, checked by enumeration.
/// At alpha 1/2 every single ordering must be the identity.
pub fn dipmark_exhaustive() -> CheckReport {
    const NAME: &str = "dipmark_exhaustive";
    let mut g = SplitMix64::new(0xD1B);
    for trial in 0..5 {
        let p = random_distribution(&mut g, 6);
        for alpha in [0.5, 0.45, 0.25, 0.1] {
            let mut acc = vec![0.0f64; 6];
            let mut count = 0usize;
            let mut bad: Option<String> = None;
            for_each_permutation(6, |perm| {
                let out = dipmark_reweight_with_permutation(&p, perm, alpha).unwrap();
                if alpha == 0.5 && out != p && bad.is_none() {
                    bad = Some(format!("alpha 1/2 not identity for {perm:?}"));
                }
                for (a, o) in acc.iter_mut().zip(&out) {
                    *a += o;
                }
                count += 1;
            });
            if let Some(msg) = bad {
                return CheckReport::fail(NAME, format!("trial {trial}: {msg}"));
            }
            if count != 720 {
                return CheckReport::fail(NAME, format!("enumerated {count} permutations"));
            }
            for (i, a) in acc.iter().enumerate() {
                let avg = a / 720.0;
                if (avg - p[i]).abs() > 1e-9 {
                    return CheckReport::fail(
                        NAME,
                        format!("trial {trial} alpha {alpha}: mean[{i}] {avg} vs {}", p[i]),
                    );
                }
            }
        }
    }
    CheckReport::pass(NAME, "mean over all 720 orderings restores the input, 5 inputs x 4 alphas")
}

/// Planted-uniform steering over every length-3 distribution on a 1/20
/// grid and every non-empty target subset: the planted value must land the
/// inverse-CDF draw on the heaviest positive-mass target, and only a
/// zero-mass target set may yield no plant.
pub fn steering_exhaustive() -> CheckReport {
    const NAME: &str = "steering_exhaustive";
    const STEPS: i32 = 20;
    let mut cases = 0usize;
    for i in 0..=STEPS {
        for j in 0..=(STEPS - i) {
            let k = STEPS - i - j;
            let p = [f64::from(i) / 20.0, f64::from(j) / 20.0, f64::from(k) / 20.0];
            for mask in 1u8..8 {
                let targets: Vec<usize> = (0..3).filter(|t| mask & (1 << t) != 0).collect();
                cases += 1;
                let planted = match crate::entropy::steer_draw(&p, &targets) {
                    Ok(x) => x,
                    Err(e) => return CheckReport::fail(NAME, format!("{p:?} {targets:?}: {e}")),
                };
                let best = targets
                    .iter()
                    .copied()
                    .filter(|&t| p[t] > 0.0)
                    .max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap().then(b.cmp(&a)));
                match (planted, best) {
                    (None, None) => {}
                    (None, Some(b)) => {
                        return CheckReport::fail(
                            NAME,
                            format!("{p:?} {targets:?}: no plant despite mass on {b}"),
                        )
                    }
                    (Some(_), None) => {
                        return CheckReport::fail(
                            NAME,
                            format!("{p:?} {targets:?}: planted into zero mass"),
                        )
                    }
                    (Some(u), Some(b)) => {
                        if !(0.0..1.0).contains(&u) {
                            return CheckReport::fail(NAME, format!("plant {u} outside [0, 1)"));
                        }
                        let landed = inverse_cdf_index(&p, u);
                        if landed != b {
                            return CheckReport::fail(
                                NAME,
                                format!("{p:?} {targets:?}: landed {landed}, heaviest {b}"),
                            );
                        }
                    }
                }
            }
        }
    }
    CheckReport::pass(NAME, format!("{cases} grid cases steered correctly"))
}

/// Keyed partitions hit the configured green rate: one fixed partition and
/// one replayed random token stream, both within 4 binomial sigma.
pub fn partition_rate() -> CheckReport {
    const NAME: &str = "partition_rate";
    let v = 512usize;
    for gamma in [0.25, 0.5] {
        let cfg = WatermarkConfig {
            gamma,
            ..WatermarkConfig::new(WatermarkScheme::Unigram, 0x9E1D)
        };
        let seed = crate::watermark::step_seed(&cfg, &[]);
        let part = green_list(&cfg, seed, v);
        let frac = part.green_fraction();
        let band = 4.0 * (gamma * (1.0 - gamma) / v as f64).sqrt();
        if (frac - gamma).abs() > band {
            return CheckReport::fail(
                NAME,
                format!("partition rate {frac} outside {gamma} +/- {band}"),
            );
        }
    }
    let cfg = WatermarkConfig::new(WatermarkScheme::Kgw, 0xF00D);
    let mut g = SplitMix64::new(3);
    let tokens: Vec<usize> = (0..4000).map(|_| g.next_below(512) as usize).collect();
    let flags = replay_green_flags(&cfg, &tokens, 512);
    let frac = flags.iter().filter(|&&x| x).count() as f64 / flags.len() as f64;
    let band = 4.0 * (0.5f64 * 0.5 / 4000.0).sqrt();
    if (frac - 0.5).abs() > band {
        return CheckReport::fail(NAME, format!("replayed rate {frac} outside 0.5 +/- {band}"));
    }
    CheckReport::pass(NAME, "green rates inside 4-sigma bands at gamma 0.25 and 0.5")
}

pub fn run_all() -> Vec<CheckReport> {
    vec![
        splitmix_reference(),
        reweight_invariants(),
        dipmark_exhaustive(),
        steering_exhaustive(),
        partition_rate(),
    ]
}
