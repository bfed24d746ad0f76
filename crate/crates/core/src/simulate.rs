//! Monte Carlo phonon-ladder generator for excitation transitions.
//!
//! Starting at the ZPL, each step draws a phonon mode by weight plus a
//! Gaussian jitter and advances to the new position. The line is placed
//! with probability `min(1, 3/(m+n+1))`, where `m` counts consecutive skips
//! (reset to 1 on placement) and `n` is twice the number of lines generated
//! so far. Generation stops at the first candidate above the range.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::fitting::TransitionSet;
use crate::models::gaussian;
use crate::par::{self, Execution};
use crate::types::{wavelength_to_energy, Spectrum};

/// Hard cap on lines per emitter, against configurations that never leave
/// the range.
pub const MAX_LINES_PER_EMITTER: usize = 100_000;

/// Synthetic ZPLs are drawn uniformly from this window when no measured
/// list is supplied (555–585 nm).
pub const SYNTHETIC_ZPL_RANGE: (f64, f64) = (2.119, 2.234);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    /// eV
    pub energy: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementRule {
    /// `min(1, 3/(m+n+1))`.
    #[default]
    Decaying,
    /// Every line is placed.
    Always,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub modes: Vec<Mode>,
    /// eV
    pub jitter_sigma: f64,
    /// `[lo, hi]` in eV.
    pub range: [f64; 2],
    pub duplication: usize,
    pub seed: u64,
    pub placement: PlacementRule,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            modes: vec![
                Mode {
                    energy: 0.165,
                    weight: 25.0,
                },
                Mode {
                    energy: 0.190,
                    weight: 2.0,
                },
                Mode {
                    energy: 0.100,
                    weight: 2.0,
                },
            ],
            jitter_sigma: 0.017,
            range: [2.34, 2.88],
            duplication: 7,
            seed: 0,
            placement: PlacementRule::Decaying,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return param("at least one phonon mode is required");
        }
        if self
            .modes
            .iter()
            .any(|m| !(m.energy > 0.0) || !(m.weight >= 0.0))
        {
            return param("mode energies must be positive and weights non-negative");
        }
        if !(self.modes.iter().map(|m| m.weight).sum::<f64>() > 0.0) {
            return param("mode weights must sum to a positive value");
        }
        if !(self.jitter_sigma >= 0.0) || !self.jitter_sigma.is_finite() {
            return param("jitter_sigma must be finite and non-negative");
        }
        if !(self.range[0] < self.range[1]) {
            return param(format!(
                "empty range [{}, {}]",
                self.range[0], self.range[1]
            ));
        }
        if self.duplication == 0 {
            return param("duplication must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEmitter {
    pub id: u64,
    /// eV
    pub zpl: f64,
    /// Placed lines inside the range, strictly increasing.
    pub transitions: Vec<f64>,
    /// Every candidate drawn, including skipped and out-of-range ones.
    pub generated_count: usize,
}

impl SimEmitter {
    pub fn to_transition_set(&self) -> TransitionSet {
        TransitionSet::new(self.id, self.zpl, self.transitions.clone())
    }
}

/// `min(1, 3/(m+n+1))`.
pub fn placement_probability(m: u64, n: u64) -> Result<f64> {
    if m < 1 {
        return param(format!("skip counter m must be ≥ 1, got {m}"));
    }
    Ok((3.0 / (m + n + 1) as f64).min(1.0))
}

/// Generates one emitter with the placement rule from `config`.
pub fn generate_emitter<R: Rng + ?Sized>(
    id: u64,
    zpl: f64,
    config: &SimConfig,
    rng: &mut R,
) -> Result<SimEmitter> {
    let rule = config.placement;
    generate_emitter_with(id, zpl, config, rng, |m, n, _| match rule {
        PlacementRule::Decaying => placement_probability(m, n).unwrap_or(0.0),
        PlacementRule::Always => 1.0,
    })
}

/// Like [`generate_emitter`] with a caller-supplied placement probability
/// `p(m, n, generated)`.
pub fn generate_emitter_with<R, P>(
    id: u64,
    zpl: f64,
    config: &SimConfig,
    rng: &mut R,
    mut probability: P,
) -> Result<SimEmitter>
where
    R: Rng + ?Sized,
    P: FnMut(u64, u64, usize) -> f64,
{
    config.validate()?;
    let [lo, hi] = config.range;
    if !(zpl < hi) {
        return param(format!("ZPL {zpl} eV must lie below the range end {hi} eV"));
    }
    let weights = WeightedIndex::new(config.modes.iter().map(|m| m.weight))
        .map_err(|e| crate::Error::Parameter(e.to_string()))?;
    let jitter = Normal::new(0.0, config.jitter_sigma)
        .map_err(|e| crate::Error::Parameter(e.to_string()))?;

    let mut pos = zpl;
    let (mut m, mut n) = (1u64, 0u64);
    let mut generated = 0usize;
    let mut transitions: Vec<f64> = Vec::new();
    while generated < MAX_LINES_PER_EMITTER {
        let mode = config.modes[weights.sample(rng)].energy;
        let cand = pos + mode + jitter.sample(rng);
        generated += 1;
        if cand > hi {
            break;
        }
        let p = probability(m, n, generated);
        if rng.random::<f64>() < p {
            if cand >= lo && transitions.last().is_none_or(|&t| cand > t) {
                transitions.push(cand);
            }
            m = 1;
        } else {
            m += 1;
        }
        n = 2 * generated as u64;
        pos = cand;
    }
    Ok(SimEmitter {
        id,
        zpl,
        transitions,
        generated_count: generated,
    })
}

/// Generator for emitter `index` of a dataset: the seed's ChaCha stream
/// number `index`, so results do not depend on scheduling.
pub fn emitter_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generator for the spectrum noise of emitter `index`, disjoint from the
/// transition streams.
pub fn noise_rng(seed: u64, index: u64) -> ChaCha8Rng {
    emitter_rng(seed, (1 << 63) | index)
}

/// Repeats `zpls` `duplication` times and generates one emitter per entry.
/// Emitter ids are the positions in the repeated list.
pub fn generate_dataset(
    zpls: &[f64],
    config: &SimConfig,
    exec: Execution,
) -> Result<Vec<SimEmitter>> {
    config.validate()?;
    if zpls.is_empty() {
        return param("ZPL list is empty");
    }
    let total = zpls.len() * config.duplication;
    par::map_range(exec, total, |i| {
        let mut rng = emitter_rng(config.seed, i as u64);
        generate_emitter(i as u64, zpls[i % zpls.len()], config, &mut rng)
    })
    .into_iter()
    .collect()
}

/// `count` ZPLs uniform in [`SYNTHETIC_ZPL_RANGE`]. Uses a stream separate
/// from the per-emitter ones.
pub fn synthetic_zpls(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = emitter_rng(seed, u64::MAX);
    let (lo, hi) = SYNTHETIC_ZPL_RANGE;
    let u = Uniform::new_inclusive(lo, hi).expect("valid ZPL range");
    (0..count).map(|_| u.sample(&mut rng)).collect()
}

/// Parameters for turning transition lists into spectra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSynthesis {
    /// Line width, eV.
    pub sigma: f64,
    /// Amplitude ratio between consecutive lines.
    pub decay: f64,
    /// Half-width of the additive uniform noise, before normalization.
    pub noise: f64,
    /// Excitation wavelength grid, nm.
    pub ple_nm: [f64; 2],
    pub ple_step_nm: f64,
    /// Emission wavelength grid, nm.
    pub pl_nm: [f64; 2],
    pub pl_step_nm: f64,
}

impl Default for SpectrumSynthesis {
    fn default() -> Self {
        Self {
            sigma: 0.015,
            decay: 0.75,
            noise: 0.0,
            ple_nm: [430.0, 530.0],
            ple_step_nm: 1.0,
            pl_nm: [540.0, 700.0],
            pl_step_nm: 0.5,
        }
    }
}

fn nm_grid(range: [f64; 2], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(range[0] > 0.0) || !(range[1] > range[0]) {
        return param(format!("bad wavelength grid {range:?} step {step}"));
    }
    let n = ((range[1] - range[0]) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| range[0] + k as f64 * step).collect())
}

/// Normalized excitation spectrum: one Gaussian per transition with
/// amplitude `decay^k` in placement order, plus uniform noise.
pub fn synthesize_ple<R: Rng + ?Sized>(
    transitions: &[f64],
    synth: &SpectrumSynthesis,
    rng: &mut R,
) -> Result<Spectrum> {
    let nm = nm_grid(synth.ple_nm, synth.ple_step_nm)?;
    let noise = (synth.noise > 0.0)
        .then(|| Uniform::new_inclusive(-synth.noise, synth.noise))
        .transpose()
        .map_err(|e| crate::Error::Parameter(e.to_string()))?;
    let mut y = Vec::with_capacity(nm.len());
    for &l in &nm {
        let e = wavelength_to_energy(l)?;
        let mut v: f64 = transitions
            .iter()
            .enumerate()
            .map(|(k, &t)| gaussian(synth.decay.powi(k as i32), t, synth.sigma, e))
            .sum();
        if let Some(u) = &noise {
            v += u.sample(rng);
        }
        y.push(v);
    }
    let s = Spectrum::from_wavelength(nm, y)?;
    if s.max_intensity() > 0.0 {
        crate::types::normalize(&s)
    } else {
        Ok(s)
    }
}

/// Normalized emission spectrum with a ZPL line and a weak optical side
/// band 165 meV below it.
pub fn synthesize_pl(zpl: f64, synth: &SpectrumSynthesis) -> Result<Spectrum> {
    let nm = nm_grid(synth.pl_nm, synth.pl_step_nm)?;
    let y = nm
        .iter()
        .map(|&l| {
            let e = wavelength_to_energy(l)?;
            Ok(gaussian(1.0, zpl, 0.008, e) + gaussian(0.15, zpl - 0.165, 0.02, e))
        })
        .collect::<Result<Vec<f64>>>()?;
    crate::types::normalize(&Spectrum::from_wavelength(nm, y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_mode(jitter: f64) -> SimConfig {
        SimConfig {
            modes: vec![Mode {
                energy: 0.165,
                weight: 1.0,
            }],
            jitter_sigma: jitter,
            ..Default::default()
        }
    }

    #[test]
    fn probability_examples() {
        assert_eq!(placement_probability(1, 0).unwrap(), 1.0);
        assert_eq!(placement_probability(1, 2).unwrap(), 0.75);
        assert_eq!(placement_probability(3, 4).unwrap(), 0.375);
        assert!(placement_probability(0, 0).is_err());
    }

    #[test]
    fn forced_ladder() {
        let cfg = SimConfig {
            placement: PlacementRule::Always,
            ..single_mode(0.0)
        };
        let e = generate_emitter(0, 2.16, &cfg, &mut emitter_rng(1, 0)).unwrap();
        let expect = [2.490, 2.655, 2.820];
        assert_eq!(e.transitions.len(), 3);
        for (t, x) in e.transitions.iter().zip(expect) {
            assert!((t - x).abs() < 1e-12, "{t} vs {x}");
        }
        // 2.325 … 2.985: five candidates, the last one terminates.
        assert_eq!(e.generated_count, 5);
    }

    #[test]
    fn zpl_near_range_end_is_empty() {
        let cfg = single_mode(0.0);
        let e = generate_emitter(0, 2.80, &cfg, &mut emitter_rng(1, 0)).unwrap();
        assert!(e.transitions.is_empty());
        assert!(generate_emitter(0, 2.88, &cfg, &mut emitter_rng(1, 0)).is_err());
    }

    #[test]
    fn forcing_skips_stops_placement() {
        let cfg = single_mode(0.0);
        let e = generate_emitter_with(0, 2.16, &cfg, &mut emitter_rng(3, 0), |_, _, g| {
            if g <= 2 {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        // Only the second line (2.490) lands in range before skipping starts.
        assert_eq!(e.transitions.len(), 1);
        assert!((e.transitions[0] - 2.49).abs() < 1e-12);
    }

    #[test]
    fn dataset_size_and_determinism() {
        let zpls = synthetic_zpls(152, 42);
        assert_eq!(zpls.len(), 152);
        assert!(zpls.iter().all(|z| (2.119..=2.234).contains(z)));
        let cfg = SimConfig {
            seed: 42,
            ..Default::default()
        };
        let a = generate_dataset(&zpls, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a.len(), 1064);
        let b = generate_dataset(&zpls, &cfg, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        let one = SimConfig {
            duplication: 1,
            ..cfg.clone()
        };
        assert_eq!(
            generate_dataset(&zpls[..10], &one, Execution::Parallel)
                .unwrap()
                .len(),
            10
        );
        let mean = a.iter().map(|e| e.transitions.len()).sum::<usize>() as f64 / a.len() as f64;
        assert!(mean.is_finite() && mean < 8.0, "mean {mean}");
        assert!(generate_dataset(&[], &cfg, Execution::Parallel).is_err());
    }

    #[test]
    fn default_density_peaks_near_mode() {
        use crate::correlation::{local_maxima, spacing_density};
        let cfg = SimConfig {
            seed: 7,
            ..Default::default()
        };
        let sets: Vec<TransitionSet> =
            generate_dataset(&synthetic_zpls(152, 7), &cfg, Execution::Parallel)
                .unwrap()
                .iter()
                .map(SimEmitter::to_transition_set)
                .collect();
        let m = spacing_density(&sets, 0.05, 0.005).unwrap();
        let top = m.centers[m.argmax().unwrap()];
        assert!((0.155..=0.175).contains(&top), "mode at {top}");
        assert!(local_maxima(&m.values)
            .iter()
            .any(|&i| (0.315..=0.345).contains(&m.centers[i])));
    }

    #[test]
    fn synthetic_ple_peaks_at_transitions() {
        let s = synthesize_ple(
            &[2.5, 2.7],
            &SpectrumSynthesis::default(),
            &mut emitter_rng(0, 0),
        )
        .unwrap();
        assert!(s.is_normalized());
        assert!((s.axis()[s.argmax()] - 2.5).abs() < 0.006);
        let pl = synthesize_pl(2.16, &SpectrumSynthesis::default()).unwrap();
        assert!((pl.axis()[pl.argmax()] - 2.16).abs() < 0.002);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn transitions_in_range_and_increasing(seed in any::<u64>(), zpl in 2.0f64..2.3) {
            let cfg = SimConfig::default();
            let e = generate_emitter(0, zpl, &cfg, &mut emitter_rng(seed, 0)).unwrap();
            prop_assert!(e.transitions.iter().all(|t| (2.34..=2.88).contains(t)));
            prop_assert!(e.transitions.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(e.generated_count >= e.transitions.len());
        }

        #[test]
        fn no_jitter_diffs_are_multiples(seed in any::<u64>(), zpl in 2.0f64..2.3, d in 0.05f64..0.2) {
            let cfg = SimConfig {
                modes: vec![Mode { energy: d, weight: 1.0 }],
                jitter_sigma: 0.0,
                ..Default::default()
            };
            let e = generate_emitter(0, zpl, &cfg, &mut emitter_rng(seed, 0)).unwrap();
            for diff in e.to_transition_set().pairwise_diffs {
                let k = (diff / d).round();
                prop_assert!(k >= 1.0 && (diff - k * d).abs() < 1e-9);
            }
        }

        #[test]
        fn same_seed_same_emitter(seed in any::<u64>(), idx in any::<u64>()) {
            let cfg = SimConfig::default();
            let a = generate_emitter(0, 2.2, &cfg, &mut emitter_rng(seed, idx)).unwrap();
            let b = generate_emitter(0, 2.2, &cfg, &mut emitter_rng(seed, idx)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
