//! Synthetic anisotropic stacks of disc-shaped processes with ground truth.
//!
//! Processes are discs that drift from slice to slice and occasionally split,
//! merge, appear or disappear. Discs are kept apart by a membrane gap, so the
//! ground-truth segments of a slice are disjoint. Gray values are dark inside
//! processes and bright on their boundaries. The probability map is built
//! from a per-process contrast (some processes are faint), blurred, and
//! perturbed by noise, so that no single threshold recovers every process.
//!
//! Every random draw comes from a ChaCha stream keyed by (seed, slice,
//! process, purpose); the output does not depend on evaluation order.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{GroundTruth, SegmentLink, SegmentRef};
use crate::image_model::{write_unit_stack, Dims, ImageStack, LabelMap, ProbabilityStack};

/// Minimum free space between the rims of two discs, in pixels.
const GAP: f64 = 2.5;
/// Width of the bright boundary ring around a disc.
const MEMBRANE: f64 = 1.2;
const PLACEMENT_ATTEMPTS: u32 = 200;

const INTENSITY_INTERIOR: f64 = 0.35;
const INTENSITY_MEMBRANE: f64 = 0.85;
const INTENSITY_BACKGROUND: f64 = 0.6;
const PROB_BACKGROUND: f64 = 0.1;
const PROB_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub n_processes: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Maximum centroid motion between slices, in pixels.
    pub drift: f64,
    pub split_prob: f64,
    pub merge_prob: f64,
    /// Per slice and per process slot.
    pub appear_prob: f64,
    pub disappear_prob: f64,
    /// Standard deviation of the gray-value noise.
    pub noise: f64,
    /// Standard deviation of the Gaussian blur applied to the probability map.
    pub blur: f64,
    /// Standard deviation of the probability noise.
    pub prob_noise: f64,
    /// Range of the per-process probability contrast; 1 means a fully
    /// confident foreground.
    pub contrast_min: f64,
    pub contrast_max: f64,
    /// Amplitude of a smooth additive bias on the background probability,
    /// shared by all slices.
    pub bias: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            depth: 10,
            n_processes: 18,
            radius_min: 3.0,
            radius_max: 6.0,
            drift: 1.5,
            split_prob: 0.06,
            merge_prob: 0.06,
            appear_prob: 0.01,
            disappear_prob: 0.02,
            noise: 0.08,
            blur: 1.5,
            prob_noise: 0.06,
            contrast_min: 0.3,
            contrast_max: 0.9,
            bias: 0.4,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synthetic: {msg}")));
        if self.width < 8 || self.height < 8 {
            return bad("width and height must be at least 8");
        }
        if self.depth == 0 {
            return bad("depth must be at least 1");
        }
        if !(self.radius_min >= 1.0 && self.radius_max >= self.radius_min) {
            return bad("radii must satisfy 1 <= radius_min <= radius_max");
        }
        let fits = 2.0 * (self.radius_max + 3.0);
        if fits > self.width as f64 || fits > self.height as f64 {
            return bad("radius_max does not fit into the image");
        }
        for (name, p) in [
            ("split_prob", self.split_prob),
            ("merge_prob", self.merge_prob),
            ("appear_prob", self.appear_prob),
            ("disappear_prob", self.disappear_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("drift", self.drift),
            ("noise", self.noise),
            ("blur", self.blur),
            ("prob_noise", self.prob_noise),
            ("bias", self.bias),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        if !(self.contrast_min > 0.0
            && self.contrast_min <= self.contrast_max
            && self.contrast_max <= 1.0)
        {
            return bad("contrast range must satisfy 0 < contrast_min <= contrast_max <= 1");
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }
}

/// Purposes of the keyed random streams.
#[derive(Clone, Copy)]
enum Purpose {
    Initial = 1,
    Disappear,
    Merge,
    Split,
    Drift,
    Appear,
    Gray,
    Prob,
    Bias,
}

fn stream(seed: u64, slice: usize, process: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((slice as u64) << 40) ^ (process << 8) ^ purpose as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Disc {
    id: u32,
    x: f64,
    y: f64,
    r: f64,
    contrast: f64,
}

fn separated(a: &Disc, b: &Disc) -> bool {
    let d = GAP + a.r + b.r;
    (a.x - b.x).powi(2) + (a.y - b.y).powi(2) >= d * d
}

/// Event counts of a generated stack.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub splits: usize,
    pub merges: usize,
    pub appearances: usize,
    pub disappearances: usize,
}

struct Planner<'a> {
    spec: &'a SyntheticSpec,
    next_id: u32,
    events: EventCounts,
    links: Vec<SegmentLink>,
}

impl Planner<'_> {
    fn fresh_id(&mut self) -> Result<u32> {
        if self.next_id > u16::MAX as u32 {
            return Err(Error::Config(
                "synthetic: more than 65535 processes would be created".into(),
            ));
        }
        let id = self.next_id;
        self.next_id += 1;
        Ok(id)
    }

    fn clamp_center(&self, d: &mut Disc) {
        let s = self.spec;
        let lo = d.r + 2.0;
        d.x = d.x.clamp(lo, s.width as f64 - lo - 1.0);
        d.y = d.y.clamp(lo, s.height as f64 - lo - 1.0);
    }

    fn random_disc(&self, rng: &mut ChaCha8Rng, id: u32) -> Disc {
        let s = self.spec;
        let r = rng.random_range(s.radius_min..=s.radius_max);
        let mut d = Disc {
            id,
            x: rng.random_range(0.0..s.width as f64),
            y: rng.random_range(0.0..s.height as f64),
            r,
            contrast: rng.random_range(s.contrast_min..=s.contrast_max),
        };
        self.clamp_center(&mut d);
        d
    }

    fn initial(&mut self) -> Result<Vec<Disc>> {
        let mut placed: Vec<Disc> = Vec::new();
        for k in 0..self.spec.n_processes {
            let mut rng = stream(self.spec.seed, 0, k as u64, Purpose::Initial);
            let id = self.fresh_id()?;
            let disc = (0..PLACEMENT_ATTEMPTS)
                .map(|_| self.random_disc(&mut rng, id))
                .find(|d| placed.iter().all(|o| separated(d, o)))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "synthetic: cannot place {} non-overlapping processes in {}x{}",
                        self.spec.n_processes, self.spec.width, self.spec.height
                    ))
                })?;
            placed.push(disc);
        }
        Ok(placed)
    }

    fn link(&mut self, z: usize, from: u32, to: u32) {
        if from != to {
            self.links.push(SegmentLink {
                from: SegmentRef {
                    slice: z,
                    label: from,
                },
                to: SegmentRef {
                    slice: z + 1,
                    label: to,
                },
            });
        }
    }

    /// Discs of slice `z + 1` given those of slice `z`.
    fn advance(&mut self, z: usize, current: &[Disc]) -> Result<Vec<Disc>> {
        let s = self.spec;
        let seed = s.seed;
        let n = current.len();
        let mut done = vec![false; n];
        let mut next: Vec<Disc> = Vec::new();
        // A candidate must clear the new discs and the old discs of tracks
        // not handled yet. Staying in place always satisfies both.
        let fits = |cand: &[Disc], next: &[Disc], done: &[bool], skip: &[usize]| {
            cand.iter().all(|c| {
                next.iter().all(|o| separated(c, o))
                    && current
                        .iter()
                        .enumerate()
                        .all(|(i, o)| done[i] || skip.contains(&i) || separated(c, o))
            })
        };

        for (i, d) in current.iter().enumerate() {
            let mut rng = stream(seed, z, d.id as u64, Purpose::Disappear);
            if rng.random::<f64>() < s.disappear_prob {
                done[i] = true;
                self.events.disappearances += 1;
            }
        }

        for i in 0..n {
            if done[i] {
                continue;
            }
            let a = current[i];
            let mut rng = stream(seed, z, a.id as u64, Purpose::Merge);
            if rng.random::<f64>() >= s.merge_prob {
                continue;
            }
            let reach = |b: &Disc| {
                let d = a.r + b.r + GAP + 2.0 * s.drift + 1.0;
                (a.x - b.x).powi(2) + (a.y - b.y).powi(2) <= d * d
            };
            let Some(j) = (0..n).find(|&j| j != i && !done[j] && reach(&current[j])) else {
                continue;
            };
            let b = current[j];
            let (wa, wb) = (a.r * a.r, b.r * b.r);
            let mut merged = Disc {
                id: 0,
                x: (a.x * wa + b.x * wb) / (wa + wb),
                y: (a.y * wa + b.y * wb) / (wa + wb),
                r: (wa + wb).sqrt().min(s.radius_max),
                contrast: 0.5 * (a.contrast + b.contrast),
            };
            self.clamp_center(&mut merged);
            if fits(&[merged], &next, &done, &[i, j]) {
                merged.id = self.fresh_id()?;
                self.link(z, a.id, merged.id);
                self.link(z, b.id, merged.id);
                done[i] = true;
                done[j] = true;
                next.push(merged);
                self.events.merges += 1;
            }
        }

        for i in 0..n {
            if done[i] {
                continue;
            }
            let a = current[i];
            let mut rng = stream(seed, z, a.id as u64, Purpose::Split);
            if rng.random::<f64>() >= s.split_prob {
                continue;
            }
            let rc = a.r / std::f64::consts::SQRT_2;
            if rc < s.radius_min {
                continue;
            }
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let off = rc + GAP / 2.0;
            let mut children = [-1.0, 1.0].map(|sign| Disc {
                id: 0,
                x: a.x + sign * off * angle.cos(),
                y: a.y + sign * off * angle.sin(),
                r: rc,
                contrast: a.contrast,
            });
            for c in &mut children {
                self.clamp_center(c);
            }
            if separated(&children[0], &children[1]) && fits(&children, &next, &done, &[i]) {
                for mut c in children {
                    c.id = self.fresh_id()?;
                    self.link(z, a.id, c.id);
                    next.push(c);
                }
                done[i] = true;
                self.events.splits += 1;
            }
        }

        for i in 0..n {
            if done[i] {
                continue;
            }
            let a = current[i];
            let mut rng = stream(seed, z, a.id as u64, Purpose::Drift);
            let moved = (0..8).find_map(|_| {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let len = s.drift * rng.random::<f64>().sqrt();
                let mut c = Disc {
                    x: a.x + len * angle.cos(),
                    y: a.y + len * angle.sin(),
                    ..a
                };
                self.clamp_center(&mut c);
                fits(&[c], &next, &done, &[i]).then_some(c)
            });
            next.push(moved.unwrap_or(a));
            done[i] = true;
        }

        for k in 0..s.n_processes {
            let mut rng = stream(seed, z, k as u64, Purpose::Appear);
            if rng.random::<f64>() >= s.appear_prob {
                continue;
            }
            let cand = (0..20)
                .map(|_| self.random_disc(&mut rng, 0))
                .find(|c| next.iter().all(|o| separated(c, o)));
            if let Some(mut c) = cand {
                c.id = self.fresh_id()?;
                next.push(c);
                self.events.appearances += 1;
            }
        }

        next.sort_by_key(|d| d.id);
        Ok(next)
    }
}

/// Smooth field with values in `[0, bias]`: the mean of three random
/// low-frequency cosine waves, each mapped to `[0, 1]`.
fn bias_field(spec: &SyntheticSpec) -> Vec<f64> {
    let dims = spec.dims();
    if spec.bias == 0.0 {
        return vec![0.0; dims.len()];
    }
    let mut rng = stream(spec.seed, 0, 0, Purpose::Bias);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let freq = rng.random_range(0.5..1.5) * std::f64::consts::TAU
                / dims.width.max(dims.height) as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (freq * angle.cos(), freq * angle.sin(), phase)
        })
        .collect();
    (0..dims.len())
        .map(|i| {
            let (x, y) = dims.coords(i);
            let sum: f64 = waves
                .iter()
                .map(|&(fx, fy, ph)| 0.5 * (1.0 + (fx * x as f64 + fy * y as f64 + ph).cos()))
                .sum();
            spec.bias * sum / waves.len() as f64
        })
        .collect()
}

struct RenderedSlice {
    labels: Vec<u32>,
    gray: Vec<f64>,
    prob: Vec<f64>,
}

fn render(spec: &SyntheticSpec, z: usize, discs: &[Disc], bias: &[f64]) -> RenderedSlice {
    let dims = spec.dims();
    let mut labels = vec![0u32; dims.len()];
    let mut membrane = vec![false; dims.len()];
    let mut indicator: Vec<f32> = bias.iter().map(|b| (PROB_BACKGROUND + b) as f32).collect();
    for d in discs {
        let reach = d.r + MEMBRANE;
        let x0 = (d.x - reach).floor().max(0.0) as usize;
        let y0 = (d.y - reach).floor().max(0.0) as usize;
        let x1 = ((d.x + reach).ceil() as usize).min(dims.width - 1);
        let y1 = ((d.y + reach).ceil() as usize).min(dims.height - 1);
        let p_in = 0.5 + 0.45 * d.contrast;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dist2 = (x as f64 - d.x).powi(2) + (y as f64 - d.y).powi(2);
                let i = dims.index(x, y);
                if dist2 <= d.r * d.r {
                    labels[i] = d.id;
                    indicator[i] = p_in as f32;
                } else if dist2 <= reach * reach {
                    membrane[i] = true;
                }
            }
        }
    }

    let mut rng = stream(spec.seed, z, 0, Purpose::Gray);
    let gray_noise = Normal::new(0.0, spec.noise).expect("validated noise");
    let gray = labels
        .iter()
        .zip(&membrane)
        .map(|(&l, &m)| {
            let base = if l != 0 {
                INTENSITY_INTERIOR
            } else if m {
                INTENSITY_MEMBRANE
            } else {
                INTENSITY_BACKGROUND
            };
            (base + gray_noise.sample(&mut rng)).clamp(0.0, 1.0)
        })
        .collect();

    let blurred: Vec<f32> = if spec.blur > 0.0 {
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_raw(dims.width as u32, dims.height as u32, indicator)
                .expect("buffer length matches dimensions");
        image::imageops::blur(&buf, spec.blur as f32).into_raw()
    } else {
        indicator
    };
    let mut rng = stream(spec.seed, z, 0, Purpose::Prob);
    let prob_noise = Normal::new(0.0, spec.prob_noise).expect("validated noise");
    let prob = blurred
        .iter()
        .map(|&v| (v as f64 + prob_noise.sample(&mut rng)).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
        .collect();
    RenderedSlice { labels, gray, prob }
}

/// A generated stack with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticStack {
    pub spec: SyntheticSpec,
    pub image: ImageStack,
    pub probs: ProbabilityStack,
    pub gt: GroundTruth,
    pub events: EventCounts,
}

impl SyntheticStack {
    /// Writes `images/`, `probs/`, `gt/` (with `gt/links.json`) and `spec.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let dims = self.spec.dims();
        write_unit_stack(self.image.slices(), dims, &dir.join("images"))?;
        let probs: Vec<Vec<f64>> = (0..self.probs.depth())
            .map(|z| self.probs.slice(z).to_vec())
            .collect();
        write_unit_stack(&probs, dims, &dir.join("probs"))?;
        self.gt.write(&dir.join("gt"))?;
        let text = serde_json::to_string_pretty(&self.spec).expect("spec serializes");
        let path = dir.join("spec.json");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticStack> {
    spec.validate()?;
    let mut planner = Planner {
        spec,
        next_id: 1,
        events: EventCounts::default(),
        links: Vec::new(),
    };
    let mut slices = vec![planner.initial()?];
    for z in 0..spec.depth - 1 {
        let next = planner.advance(z, &slices[z])?;
        slices.push(next);
    }

    let bias = bias_field(spec);
    let rendered: Vec<RenderedSlice> = slices
        .par_iter()
        .enumerate()
        .map(|(z, discs)| render(spec, z, discs, &bias))
        .collect();
    let dims = spec.dims();
    let mut gray = Vec::with_capacity(spec.depth);
    let mut prob = Vec::with_capacity(spec.depth);
    let mut labels = Vec::with_capacity(spec.depth);
    for r in rendered {
        gray.push(r.gray);
        prob.push(r.prob);
        labels.push(LabelMap {
            dims,
            ids: r.labels,
        });
    }
    Ok(SyntheticStack {
        spec: spec.clone(),
        image: ImageStack::new(dims, gray)?,
        probs: ProbabilityStack::from_raw(dims, prob)?,
        gt: GroundTruth::from_labels(labels, planner.links)?,
        events: planner.events,
    })
}
