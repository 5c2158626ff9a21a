//! Synthetic pillar images: dark noisy background, bright contact ring with a
//! dimmer interior, and for damaged samples circular crack arcs in the zone
//! between 1.1 and 1.5 pillar radii.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{save_image, save_mask, BBox, BoxSource, Image, Mask};
use crate::manifest::{write_file, Manifest, ManifestHeader, Record};
use crate::rng::{self, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub image_size: usize,
    pub radius_range: [f64; 2],
    /// Width of the bright ring just inside the contact edge.
    pub ring_width: f64,
    pub ring_brightness: [f64; 2],
    pub interior_brightness: [f64; 2],
    pub background: f64,
    pub noise_sigma: f64,
    pub crack_count: [usize; 2],
    /// Crack zone as multiples of the pillar radius.
    pub crack_zone: [f64; 2],
    pub crack_thickness: [f64; 2],
    /// Upper bound of the radial waviness amplitude (px).
    pub crack_wobble: f64,
    pub crack_brightness: [f64; 2],
    /// Peak brightness of the reflections at both arc tips.
    pub tip_brightness: [f64; 2],
    pub dark_crack_prob: f64,
    pub dark_crack_brightness: [f64; 2],
    /// Mean number of scratches / debris specks per image (both classes).
    pub scratch_rate: f64,
    pub debris_rate: f64,
    /// Per-image global illumination factor.
    pub illumination: [f64; 2],
    /// Per-channel gain range of the color tint.
    pub tint: [f64; 2],
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams::half()
    }
}

impl SynthParams {
    /// 500 px frames with pillar radius around 88 px.
    pub fn half() -> Self {
        SynthParams {
            image_size: 500,
            radius_range: [80.0, 96.0],
            ring_width: 6.0,
            ring_brightness: [225.0, 250.0],
            interior_brightness: [110.0, 140.0],
            background: 55.0,
            noise_sigma: 6.0,
            crack_count: [1, 4],
            crack_zone: [1.1, 1.5],
            crack_thickness: [2.5, 5.0],
            crack_wobble: 3.0,
            crack_brightness: [100.0, 150.0],
            tip_brightness: [180.0, 215.0],
            dark_crack_prob: 0.15,
            dark_crack_brightness: [70.0, 90.0],
            scratch_rate: 1.0,
            debris_rate: 3.0,
            illumination: [0.9, 1.1],
            tint: [0.85, 1.0],
        }
    }

    /// Twice the half-scale geometry.
    pub fn full() -> Self {
        let h = SynthParams::half();
        SynthParams {
            image_size: 1000,
            radius_range: [160.0, 192.0],
            ring_width: 12.0,
            crack_thickness: [6.0, 12.0],
            crack_wobble: 6.0,
            ..h
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0].is_finite() && r[1].is_finite();
        let ranges = [
            ("radius_range", self.radius_range),
            ("ring_brightness", self.ring_brightness),
            ("interior_brightness", self.interior_brightness),
            ("crack_zone", self.crack_zone),
            ("crack_thickness", self.crack_thickness),
            ("crack_brightness", self.crack_brightness),
            ("tip_brightness", self.tip_brightness),
            ("dark_crack_brightness", self.dark_crack_brightness),
            ("illumination", self.illumination),
            ("tint", self.tint),
        ];
        if let Some((name, _)) = ranges.iter().find(|(_, r)| !ordered(*r)) {
            return Err(Error::Config(format!("synth.{name} must be an ordered finite range")));
        }
        if self.crack_zone[0] <= 1.0 {
            return Err(Error::Config("synth.crack_zone must start outside the contact edge (> 1.0)".into()));
        }
        if self.crack_count[0] == 0 || self.crack_count[0] > self.crack_count[1] {
            return Err(Error::Config("synth.crack_count must be an ordered range starting at 1 or more".into()));
        }
        if self.radius_range[0] <= self.ring_width {
            return Err(Error::Config("synth.radius_range must exceed the ring width".into()));
        }
        if (self.image_size as f64) < 4.0 * self.radius_range[1] {
            return Err(Error::Config(format!(
                "synth.image_size {} is smaller than four times the largest radius",
                self.image_size
            )));
        }
        let zone = self.radius_range[0] * (self.crack_zone[1] - self.crack_zone[0]);
        if !(self.crack_wobble > 0.0) || self.crack_thickness[1] + 2.0 * self.crack_wobble > zone {
            return Err(Error::Config("synth.crack_thickness plus waviness must fit in the crack zone".into()));
        }
        if !(0.0..=1.0).contains(&self.dark_crack_prob) {
            return Err(Error::Config("synth.dark_crack_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One crack segment: a circular arc about the pillar center, angles in
/// degrees measured clockwise from +x in image coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub radius: f64,
    pub start_deg: f64,
    pub end_deg: f64,
    pub thickness: f64,
    pub brightness: f64,
    pub tip_brightness: f64,
    pub dark: bool,
    /// Radial waviness: amplitude (px), cycles per turn and phase (rad).
    pub wobble: [f64; 3],
}

impl Arc {
    /// Centerline radius at angle `deg`.
    pub fn radius_at(&self, deg: f64) -> f64 {
        let [amp, cycles, phase] = self.wobble;
        self.radius + amp * (cycles * deg.to_radians() + phase).sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub label: u8,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub arcs: Vec<Arc>,
    pub scratches: usize,
    pub debris: usize,
}

impl TruthRecord {
    pub fn bbox(&self) -> BBox {
        BBox {
            cx: self.cx,
            cy: self.cy,
            width: 2.0 * self.radius,
            height: 2.0 * self.radius,
            source: BoxSource::Truth,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Image,
    pub label: u8,
    pub mask: Mask,
    pub truth: TruthRecord,
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let limit = (-mean).exp();
    let mut k = 0;
    let mut p: f64 = rng.random();
    while p > limit {
        k += 1;
        p *= rng.random::<f64>();
    }
    k
}

/// Angular offset of `deg` into the arc starting at `start` (both wrapped to [0, 360)).
fn angle_into(deg: f64, start: f64) -> f64 {
    (deg - start).rem_euclid(360.0)
}

/// Arcs whose union reaches into every angular quadrant: the four quadrants
/// are dealt out as contiguous runs, one run per arc.
fn plan_arcs<R: Rng>(rng: &mut R, p: &SynthParams, radius: f64) -> Vec<Arc> {
    let k = rng.random_range(p.crack_count[0]..=p.crack_count[1]);
    let first = rng.random_range(0..4usize);
    let runs: Vec<usize> = match k {
        1 => vec![4],
        2 => vec![2, 2],
        3 => {
            let mut r = vec![2, 1, 1];
            r.shuffle(rng);
            r
        }
        _ => vec![1; 4],
    };
    let mut arcs = Vec::with_capacity(k.max(runs.len()));
    let mut q = first;
    for &len in &runs {
        let lo = q as f64 * 90.0;
        let hi = lo + len as f64 * 90.0;
        let (start, end) = if len == 4 {
            let s = lo + rng.random_range(0.0..30.0);
            (s, s + rng.random_range(300.0..345.0))
        } else {
            (lo + rng.random_range(0.0..30.0), hi - rng.random_range(0.0..30.0))
        };
        arcs.push(new_arc(rng, p, radius, start, end));
        q = (q + len) % 4;
    }
    // Extra arcs beyond the quadrant cover land anywhere.
    for _ in runs.len()..k {
        let start = rng.random_range(0.0..360.0);
        let span = rng.random_range(40.0..120.0);
        arcs.push(new_arc(rng, p, radius, start, start + span));
    }
    arcs
}

fn new_arc<R: Rng>(rng: &mut R, p: &SynthParams, radius: f64, start: f64, end: f64) -> Arc {
    let thickness = uniform(rng, p.crack_thickness);
    let amp = rng.random_range(0.0..p.crack_wobble);
    let lo = p.crack_zone[0] * radius + thickness / 2.0 + amp;
    let hi = p.crack_zone[1] * radius - thickness / 2.0 - amp;
    let dark = rng.random::<f64>() < p.dark_crack_prob;
    let (brightness, tip) = if dark {
        let b = uniform(rng, p.dark_crack_brightness);
        (b, b)
    } else {
        (uniform(rng, p.crack_brightness), uniform(rng, p.tip_brightness))
    };
    Arc {
        radius: uniform(rng, [lo, hi.max(lo)]),
        start_deg: start.rem_euclid(360.0),
        end_deg: start.rem_euclid(360.0) + (end - start),
        thickness,
        brightness,
        tip_brightness: tip,
        dark,
        wobble: [amp, rng.random_range(2.0..7.0), rng.random_range(0.0..TAU)],
    }
}

/// Gray canvas in luminance units; tint and illumination are applied when
/// converting to RGB.
struct Canvas {
    size: usize,
    v: Vec<f64>,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, value: f64, alpha: f64) {
        let i = y * self.size + x;
        self.v[i] = self.v[i] * (1.0 - alpha) + value * alpha;
    }

    /// Pixel box `[x0, x1) × [y0, y1)` clipped to the canvas.
    fn clip(&self, cx: f64, cy: f64, reach: f64) -> (usize, usize, usize, usize) {
        let s = self.size as f64;
        let lo = |c: f64| (c - reach).floor().clamp(0.0, s) as usize;
        let hi = |c: f64| ((c + reach).ceil() + 1.0).clamp(0.0, s) as usize;
        (lo(cx), hi(cx), lo(cy), hi(cy))
    }
}

fn coverage(d: f64, half_width: f64) -> f64 {
    (half_width + 0.5 - d).clamp(0.0, 1.0)
}

fn draw_pillar(c: &mut Canvas, cx: f64, cy: f64, r: f64, ring_w: f64, ring: f64, interior: f64) {
    let (x0, x1, y0, y1) = c.clip(cx, cy, r + 1.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let disk = coverage(d, r);
            if disk <= 0.0 {
                continue;
            }
            // Interior brightens slightly towards the rim.
            let inner = interior * (0.9 + 0.1 * (d / r).min(1.0));
            let ring_a = coverage((d - (r - ring_w / 2.0)).abs(), ring_w / 2.0);
            let value = inner * (1.0 - ring_a) + ring * ring_a;
            c.blend(x, y, value, disk);
        }
    }
}

fn draw_arc(c: &mut Canvas, mask: &mut Mask, cx: f64, cy: f64, arc: &Arc) {
    let reach = arc.radius + arc.wobble[0] + arc.thickness;
    let (x0, x1, y0, y1) = c.clip(cx, cy, reach);
    let span = arc.end_deg - arc.start_deg;
    let half = arc.thickness / 2.0;
    // Tip glints fall off over about a tenth of the arc length (in degrees).
    let glint = (span * 0.1).max(3.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let d = (dx * dx + dy * dy).sqrt();
            if (d - arc.radius).abs() > half + arc.wobble[0] + 1.0 {
                continue;
            }
            let deg = dy.atan2(dx).to_degrees().rem_euclid(360.0);
            let t = angle_into(deg, arc.start_deg);
            if t > span {
                continue;
            }
            let a = coverage((d - arc.radius_at(deg)).abs(), half);
            if a <= 0.0 {
                continue;
            }
            let tip = (-(t.min(span - t) / glint).powi(2)).exp();
            let value = arc.brightness + (arc.tip_brightness - arc.brightness) * tip;
            c.blend(x, y, value, a);
            if a >= 0.5 {
                mask.set(x, y, true);
            }
        }
    }
}

fn draw_line(c: &mut Canvas, p0: (f64, f64), p1: (f64, f64), width: f64, value: f64) {
    let (vx, vy) = (p1.0 - p0.0, p1.1 - p0.1);
    let len2 = (vx * vx + vy * vy).max(1e-9);
    let cx = (p0.0 + p1.0) / 2.0;
    let cy = (p0.1 + p1.1) / 2.0;
    let reach = len2.sqrt() / 2.0 + width;
    let (x0, x1, y0, y1) = c.clip(cx, cy, reach);
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 - p0.0, y as f64 - p0.1);
            let t = ((px * vx + py * vy) / len2).clamp(0.0, 1.0);
            let d = ((px - t * vx).powi(2) + (py - t * vy).powi(2)).sqrt();
            let a = coverage(d, width / 2.0);
            if a > 0.0 {
                c.blend(x, y, value, a);
            }
        }
    }
}

fn draw_speck(c: &mut Canvas, cx: f64, cy: f64, r: f64, value: f64) {
    let (x0, x1, y0, y1) = c.clip(cx, cy, r + 1.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let a = coverage(d, r);
            if a > 0.0 {
                c.blend(x, y, value, a);
            }
        }
    }
}

/// Renders one sample from the given stream.
pub fn generate_sample<R: Rng>(params: &SynthParams, label: u8, id: &str, rng: &mut R) -> Result<Sample> {
    params.validate()?;
    let size = params.image_size;
    let s = size as f64;
    let radius = uniform(rng, params.radius_range);
    let margin = params.crack_zone[1] * params.radius_range[1] + params.crack_thickness[1];
    let lo = margin.min(s / 2.0);
    let hi = (s - margin).max(s / 2.0);
    let cx = uniform(rng, [lo, hi]);
    let cy = uniform(rng, [lo, hi]);

    let mut canvas = Canvas {
        size,
        v: vec![params.background; size * size],
    };
    let ring = uniform(rng, params.ring_brightness);
    let interior = uniform(rng, params.interior_brightness);
    draw_pillar(&mut canvas, cx, cy, radius, params.ring_width, ring, interior);

    let mut mask = Mask::new(size, size);
    let arcs = if label == 1 {
        plan_arcs(rng, params, radius)
    } else {
        Vec::new()
    };
    for arc in &arcs {
        draw_arc(&mut canvas, &mut mask, cx, cy, arc);
    }

    let scratches = poisson(rng, params.scratch_rate);
    for _ in 0..scratches {
        let (x, y) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let ang = rng.random_range(0.0..PI);
        let len = rng.random_range(0.2..0.6) * s;
        let (dx, dy) = (ang.cos() * len / 2.0, ang.sin() * len / 2.0);
        let width = rng.random_range(1.0..2.5);
        let value = rng.random_range(70.0..140.0);
        draw_line(&mut canvas, (x - dx, y - dy), (x + dx, y + dy), width, value);
    }
    let debris = poisson(rng, params.debris_rate);
    for _ in 0..debris {
        let (x, y) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let r = rng.random_range(1.0..4.0);
        let value = rng.random_range(100.0..220.0);
        draw_speck(&mut canvas, x, y, r, value);
    }

    let illumination = uniform(rng, params.illumination);
    let tint = [
        uniform(rng, params.tint),
        uniform(rng, params.tint),
        uniform(rng, params.tint),
    ];
    let noise = Normal::new(0.0, params.noise_sigma.max(0.0))
        .map_err(|e| Error::Config(format!("synth.noise_sigma: {e}")))?;
    let mut image = Image::new(size, size);
    for (px, &v) in image.data_mut().chunks_exact_mut(3).zip(&canvas.v) {
        let base = v * illumination;
        for (ch, g) in px.iter_mut().zip(tint) {
            *ch = (base * g + noise.sample(rng)).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(Sample {
        image,
        label,
        mask,
        truth: TruthRecord {
            id: id.to_string(),
            label,
            cx,
            cy,
            radius,
            arcs,
            scratches,
            debris,
        },
    })
}

/// Labels for `n` samples with exactly `round(n·frac)` damaged, in a
/// seed-determined order.
pub fn assign_labels(n: usize, damaged_frac: f64, seed: u64) -> Vec<u8> {
    let damaged = ((n as f64) * damaged_frac).round() as usize;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < damaged.min(n))).collect();
    labels.shuffle(&mut rng::stream(seed, &[tag::SYNTH, u64::MAX]));
    labels
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:04}")
}

/// Generates sample `index` of a dataset; independent of every other index.
pub fn dataset_sample(params: &SynthParams, labels: &[u8], index: usize, seed: u64) -> Result<Sample> {
    let mut rng = rng::stream(seed, &[tag::SYNTH, index as u64]);
    generate_sample(params, labels[index], &sample_id(index), &mut rng)
}

/// Writes `images/`, `masks/`, `manifest.jsonl` and `truth.jsonl` under
/// `out_dir`, using up to `jobs` worker threads.
pub fn generate_dataset(
    n: usize,
    damaged_frac: f64,
    params: &SynthParams,
    seed: u64,
    config_hash: &str,
    out_dir: &Path,
    jobs: usize,
) -> Result<Manifest> {
    if n < 2 {
        return Err(Error::Argument(format!("dataset needs at least 2 samples, got {n}")));
    }
    if !(0.0..=1.0).contains(&damaged_frac) {
        return Err(Error::Argument(format!("damaged fraction {damaged_frac} outside [0, 1]")));
    }
    params.validate()?;
    let labels = assign_labels(n, damaged_frac, seed);
    let write_one = |i: usize| -> Result<(Record, TruthRecord)> {
        let sample = dataset_sample(params, &labels, i, seed)?;
        let id = sample_id(i);
        let img_rel = format!("images/{id}.png");
        let mask_rel = format!("masks/{id}.png");
        save_image(&sample.image, &out_dir.join(&img_rel))?;
        save_mask(&sample.mask, &out_dir.join(&mask_rel))?;
        let mut rec = Record::new(&id, &img_rel, sample.label, &id);
        rec.bbox = Some(sample.truth.bbox());
        rec.mask_path = Some(mask_rel);
        Ok((rec, sample.truth))
    };
    let results = crate::par::map_indexed(n, jobs, write_one);
    let mut manifest = Manifest::new(ManifestHeader::new("synth", seed, config_hash), out_dir);
    let mut truth = String::new();
    for r in results {
        let (rec, t) = r?;
        manifest.records.push(rec);
        truth.push_str(&serde_json::to_string(&t).expect("truth serializes"));
        truth.push('\n');
    }
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    write_file(&out_dir.join("truth.jsonl"), truth.as_bytes())?;
    Ok(manifest)
}

/// Quadrants (as crop tiles: 0 top-left, 1 top-right, 2 bottom-left,
/// 3 bottom-right) an arc reaches.
pub fn arc_tiles(arc: &Arc) -> [bool; 4] {
    let mut hit = [false; 4];
    let steps = ((arc.end_deg - arc.start_deg) * 4.0).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let deg = arc.start_deg + (arc.end_deg - arc.start_deg) * i as f64 / steps as f64;
        let rad = (deg.rem_euclid(360.0)).to_radians();
        let (dx, dy) = (rad.cos(), rad.sin());
        let tile = match (dx >= 0.0, dy >= 0.0) {
            (false, false) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (true, true) => 3,
        };
        hit[tile] = true;
    }
    hit
}
