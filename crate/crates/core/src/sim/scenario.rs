//! Simulation scenarios: planar shapes and discrete clustering settings.

use std::f64::consts::TAU;
use std::fmt;

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, StandardNormal};

use crate::error::{NpmleError, Result};
use crate::mixture::{Dataset, MixingMeasure, Noise};

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioKind {
    /// Concentric circles of radii 2 and 6, half the points on each.
    TwoCircles,
    /// Edges of the triangle with vertices (−3,0), (0,6), (3,0).
    Triangle,
    /// Radius-3 circles centred at (0,0) and (0,6).
    DigitEight,
    /// Chain (−4,−6), (−2,0), (0,6), (2,0), (4,6) plus the bar from (−2,0) to (2,0).
    LetterA,
    /// ½ at (0,0), ½ at (2,2).
    Clustering1,
    /// ¼ at (0,0), ¾ at (2,2).
    Clustering2,
    /// ¼ at (0,0), ¼ at (0,2), ½ at (2,−2).
    Clustering3,
    /// Dirichlet(1,1,1,1) proportions over (0,0), (0,3), (3,0), (3,3).
    Clustering4,
    Custom(MixingMeasure),
}

impl ScenarioKind {
    /// Names accepted by [`ScenarioKind::from_name`].
    pub const NAMES: [&'static str; 8] = [
        "two-circles",
        "triangle",
        "digit-eight",
        "letter-a",
        "clustering1",
        "clustering2",
        "clustering3",
        "clustering4",
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        let kind = match name.to_ascii_lowercase().as_str() {
            "two-circles" => ScenarioKind::TwoCircles,
            "triangle" => ScenarioKind::Triangle,
            "digit-eight" => ScenarioKind::DigitEight,
            "letter-a" => ScenarioKind::LetterA,
            "clustering1" => ScenarioKind::Clustering1,
            "clustering2" => ScenarioKind::Clustering2,
            "clustering3" => ScenarioKind::Clustering3,
            "clustering4" => ScenarioKind::Clustering4,
            _ => return None,
        };
        Some(kind)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::TwoCircles => "two-circles",
            ScenarioKind::Triangle => "triangle",
            ScenarioKind::DigitEight => "digit-eight",
            ScenarioKind::LetterA => "letter-a",
            ScenarioKind::Clustering1 => "clustering1",
            ScenarioKind::Clustering2 => "clustering2",
            ScenarioKind::Clustering3 => "clustering3",
            ScenarioKind::Clustering4 => "clustering4",
            ScenarioKind::Custom(_) => "custom",
        }
    }

    pub fn is_shape(&self) -> bool {
        matches!(
            self,
            ScenarioKind::TwoCircles | ScenarioKind::Triangle | ScenarioKind::DigitEight | ScenarioKind::LetterA
        )
    }

    pub fn dim(&self) -> usize {
        match self {
            ScenarioKind::Custom(g) => g.dim(),
            _ => 2,
        }
    }

    /// Number of generating parts: shape pieces or mixture atoms.
    pub fn true_k(&self) -> usize {
        match self {
            ScenarioKind::TwoCircles | ScenarioKind::DigitEight => 2,
            ScenarioKind::Triangle => 3,
            ScenarioKind::LetterA => LETTER_A.len(),
            ScenarioKind::Clustering1 | ScenarioKind::Clustering2 => 2,
            ScenarioKind::Clustering3 => 3,
            ScenarioKind::Clustering4 => 4,
            ScenarioKind::Custom(g) => g.len(),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    pub seed: u64,
}

/// One draw of a scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub latents: Dataset,
    pub data: Dataset,
    /// Generating part of each point.
    pub labels: Vec<usize>,
    /// Population mixing measure for discrete scenarios.
    pub truth: Option<MixingMeasure>,
}

const TRIANGLE: [[[f64; 2]; 2]; 3] = [
    [[-3.0, 0.0], [0.0, 6.0]],
    [[0.0, 6.0], [3.0, 0.0]],
    [[3.0, 0.0], [-3.0, 0.0]],
];

const LETTER_A: [[[f64; 2]; 2]; 5] = [
    [[-4.0, -6.0], [-2.0, 0.0]],
    [[-2.0, 0.0], [0.0, 6.0]],
    [[0.0, 6.0], [2.0, 0.0]],
    [[2.0, 0.0], [4.0, 6.0]],
    [[-2.0, 0.0], [2.0, 0.0]],
];

/// Splits `n` into `parts` counts differing by at most one, extras first.
pub fn stratified_counts(n: usize, parts: usize) -> Vec<usize> {
    let base = n / parts;
    let extra = n % parts;
    (0..parts).map(|p| base + usize::from(p < extra)).collect()
}

fn circle_points<R: Rng>(rng: &mut R, center: [f64; 2], radius: f64, count: usize, out: &mut Vec<f64>) {
    for _ in 0..count {
        let t: f64 = rng.random_range(0.0..TAU);
        out.push(center[0] + radius * t.cos());
        out.push(center[1] + radius * t.sin());
    }
}

fn segment_points<R: Rng>(rng: &mut R, seg: [[f64; 2]; 2], count: usize, out: &mut Vec<f64>) {
    let [a, b] = seg;
    for _ in 0..count {
        let t: f64 = rng.random_range(0.0..=1.0);
        out.push(a[0] + t * (b[0] - a[0]));
        out.push(a[1] + t * (b[1] - a[1]));
    }
}

fn discrete(atoms: &[f64], weights: Vec<f64>) -> Result<MixingMeasure> {
    MixingMeasure::from_unnormalized(Dataset::new(2, atoms.to_vec())?, weights)
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    if spec.n == 0 {
        return Err(NpmleError::contract("scenario needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let mut coords = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let mut truth = None;
    match &spec.kind {
        ScenarioKind::TwoCircles | ScenarioKind::DigitEight => {
            let circles: [([f64; 2], f64); 2] = if spec.kind == ScenarioKind::TwoCircles {
                [([0.0, 0.0], 2.0), ([0.0, 0.0], 6.0)]
            } else {
                [([0.0, 0.0], 3.0), ([0.0, 6.0], 3.0)]
            };
            for (part, (&count, (c, r))) in stratified_counts(n, 2).iter().zip(circles).enumerate() {
                circle_points(&mut rng, c, r, count, &mut coords);
                labels.extend(std::iter::repeat_n(part, count));
            }
        }
        ScenarioKind::Triangle | ScenarioKind::LetterA => {
            let segs: &[[[f64; 2]; 2]] = if spec.kind == ScenarioKind::Triangle {
                &TRIANGLE
            } else {
                &LETTER_A
            };
            for (part, (&count, &seg)) in stratified_counts(n, segs.len()).iter().zip(segs).enumerate() {
                segment_points(&mut rng, seg, count, &mut coords);
                labels.extend(std::iter::repeat_n(part, count));
            }
        }
        kind => {
            let g = match kind {
                ScenarioKind::Clustering1 => discrete(&[0.0, 0.0, 2.0, 2.0], vec![0.5, 0.5])?,
                ScenarioKind::Clustering2 => discrete(&[0.0, 0.0, 2.0, 2.0], vec![0.25, 0.75])?,
                ScenarioKind::Clustering3 => discrete(&[0.0, 0.0, 0.0, 2.0, 2.0, -2.0], vec![0.25, 0.25, 0.5])?,
                ScenarioKind::Clustering4 => {
                    let alpha: [f64; 4] = Dirichlet::new([1.0; 4])
                        .map_err(|e| NpmleError::config(format!("dirichlet: {e}")))?
                        .sample(&mut rng);
                    discrete(&[0.0, 0.0, 0.0, 3.0, 3.0, 0.0, 3.0, 3.0], alpha.to_vec())?
                }
                ScenarioKind::Custom(g) => g.clone(),
                _ => unreachable!("shapes handled above"),
            };
            let sample = g.sample_with(n, &Noise::Identity, &mut rng)?;
            truth = Some(g);
            return Ok(Scenario {
                latents: sample.latents,
                data: sample.data,
                labels: sample.components,
                truth,
            });
        }
    }
    let latents = Dataset::new(2, coords)?;
    let noisy: Vec<f64> = latents
        .as_flat()
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + z
        })
        .collect();
    Ok(Scenario {
        data: Dataset::new(2, noisy)?,
        latents,
        labels,
        truth,
    })
}
