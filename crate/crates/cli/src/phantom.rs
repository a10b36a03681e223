//! Synthetic image sequences with known motion.
//!
//! Every frame is an analytic image rendered at `x - s_t`, so the exact
//! registering displacement of frame `t` is the constant field `s_t`
//! (`s_1 = 0`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sqn_core::grid::{Grid, Image, ImageStack};
use sqn_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    /// Fixed anatomy with contrast-enhancing organs, random translations.
    Uptake,
    /// Slowly morphing sections with jittered placement.
    Serial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub frames: usize,
    /// `[rows, cols]`.
    pub dims: [usize; 2],
    pub seed: u64,
    /// Uptake: shifts drawn uniformly from `[-max_shift, max_shift]` per axis.
    /// Serial: standard deviation of the jitter.
    pub max_shift: f64,
    /// Contrast factor of the enhancing structures in the first and last
    /// frame, linear in between.
    pub intensity: (f64, f64),
    /// Scales all motion; 0 gives motionless sequences.
    pub amplitude: f64,
    /// Peak amplitude in pixels of an additional smooth per-frame warp.
    /// Zero keeps frames rigidly translated, which makes `shifts` exact.
    pub deformation: f64,
}

impl PhantomSpec {
    pub fn uptake(frames: usize, size: usize, seed: u64) -> Self {
        Self {
            kind: PhantomKind::Uptake,
            frames,
            dims: [size, size],
            seed,
            max_shift: 3.0,
            intensity: (1.0, 2.0),
            amplitude: 1.0,
            deformation: 0.0,
        }
    }

    pub fn serial(frames: usize, size: usize, seed: u64) -> Self {
        Self {
            kind: PhantomKind::Serial,
            frames,
            dims: [size, size],
            seed,
            max_shift: 1.5,
            intensity: (1.0, 1.0),
            amplitude: 1.0,
            deformation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::InvalidParameter(
                "a phantom needs at least 2 frames".into(),
            ));
        }
        if self.dims.iter().any(|&m| m < 32) {
            return Err(Error::InvalidParameter(
                "phantom dims must be at least 32".into(),
            ));
        }
        let finite = [
            self.max_shift,
            self.intensity.0,
            self.intensity.1,
            self.amplitude,
            self.deformation,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "shift, intensity, amplitude and deformation must be finite and non-negative"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub stack: ImageStack,
    /// Ground-truth registering translation per frame, `[dy, dx]` in pixels.
    pub shifts: Vec<[f64; 2]>,
}

/// Smooth indicator of the ellipse `((y-cy)/ry)^2 + ((x-cx)/rx)^2 <= 1`
/// with an edge about `2 * edge` px wide.
fn ellipse(p: [f64; 2], c: [f64; 2], r: [f64; 2], angle: f64, edge: f64) -> f64 {
    let (s, co) = angle.sin_cos();
    let dy = p[0] - c[0];
    let dx = p[1] - c[1];
    let u = co * dx + s * dy;
    let v = -s * dx + co * dy;
    let rho = ((v / r[0]).powi(2) + (u / r[1]).powi(2)).sqrt();
    let dist = (rho - 1.0) * r[0].min(r[1]);
    0.5 * (1.0 - (dist / edge).tanh())
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    center: [f64; 2],
    radii: [f64; 2],
    angle: f64,
    intensity: f64,
    /// Wall thickness in pixels for hollow structures.
    wall: Option<f64>,
    /// Half-width of the edge in pixels.
    edge: f64,
    /// Scaled by the frame's contrast factor.
    enhancing: bool,
    /// Center displacement per frame index.
    velocity: [f64; 2],
}

impl Blob {
    fn filled(center: [f64; 2], radii: [f64; 2], intensity: f64) -> Self {
        Self {
            center,
            radii,
            angle: 0.0,
            intensity,
            wall: None,
            edge: 0.75,
            enhancing: false,
            velocity: [0.0; 2],
        }
    }

    fn eval(&self, p: [f64; 2], t: f64) -> f64 {
        let c = [
            self.center[0] + self.velocity[0] * t,
            self.center[1] + self.velocity[1] * t,
        ];
        let outer = ellipse(p, c, self.radii, self.angle, self.edge);
        match self.wall {
            None => self.intensity * outer,
            Some(w) => {
                let inner = [self.radii[0] - w, self.radii[1] - w];
                self.intensity * (outer - ellipse(p, c, inner, self.angle, self.edge))
            }
        }
    }
}

/// Morphing filled ellipse for the serial kind: center and radii vary
/// linearly across the sections.
#[derive(Debug, Clone, Copy)]
struct Section {
    blob: Blob,
    growth: [f64; 2],
}

/// Body outline with two contrast-enhancing organs and a scatter of small
/// ring-shaped structures.
fn uptake_anatomy(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<Blob> {
    let [h, w] = spec.dims.map(|m| m as f64);
    let mid = [h / 2.0, w / 2.0];
    let body = [0.34 * h, 0.36 * w];
    let scale = h.min(w);
    let mut blobs = vec![Blob::filled(mid, body, 10.0)];
    for _ in 0..15 {
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let rr: f64 = rng.random_range(0.0..0.72);
        let r = rng.random_range(0.06..0.1) * scale;
        blobs.push(Blob {
            center: [
                mid[0] + rr * body[0] * a.sin(),
                mid[1] + rr * body[1] * a.cos(),
            ],
            radii: [r, r * rng.random_range(0.7..1.3)],
            angle: rng.random_range(0.0..std::f64::consts::PI),
            intensity: rng.random_range(40.0..70.0),
            wall: Some(1.8),
            edge: 0.75,
            enhancing: false,
            velocity: [0.0; 2],
        });
    }
    for side in [-1.0, 1.0] {
        let mut organ = Blob::filled(
            [mid[0], mid[1] + side * 0.17 * w],
            [0.12 * h, 0.07 * w],
            40.0,
        );
        organ.angle = side * 0.3;
        organ.enhancing = true;
        blobs.push(organ);
    }
    blobs
}

/// Body outline with broad filled structures whose position and size change
/// slowly from section to section.
fn serial_anatomy(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<Section> {
    let [h, w] = spec.dims.map(|m| m as f64);
    let mid = [h / 2.0, w / 2.0];
    let body = [0.36 * h, 0.38 * w];
    let scale = h.min(w);
    let span = (spec.frames - 1) as f64;
    let mut outline = Blob::filled(mid, body, 10.0);
    outline.edge = SERIAL_EDGE;
    let mut out = vec![Section {
        blob: outline,
        growth: [0.0; 2],
    }];
    for _ in 0..SERIAL_STRUCTURES {
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let rr: f64 = rng.random_range(0.0..0.6);
        let r = rng.random_range(0.08..0.14) * scale;
        let travel = SERIAL_TRAVEL * scale;
        let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut blob = Blob::filled(
            [
                mid[0] + rr * body[0] * a.sin(),
                mid[1] + rr * body[1] * a.cos(),
            ],
            [r, r * rng.random_range(0.7..1.3)],
            rng.random_range(20.0..60.0),
        );
        blob.angle = rng.random_range(0.0..std::f64::consts::PI);
        blob.edge = SERIAL_EDGE;
        blob.velocity = [travel * dir.sin() / span, travel * dir.cos() / span];
        let g: f64 = rng.random_range(-SERIAL_GROWTH..SERIAL_GROWTH);
        out.push(Section {
            blob,
            growth: [g * blob.radii[0] / span, g * blob.radii[1] / span],
        });
    }
    out
}

const SERIAL_STRUCTURES: usize = 10;
/// Distance a structure moves across the whole stack, relative to image size.
const SERIAL_TRAVEL: f64 = 0.02;
/// Largest relative radius change across the stack.
const SERIAL_GROWTH: f64 = 0.15;
/// Edge half-width; sharper edges leave jittered frames outside the capture
/// range of the edge-based measures.
const SERIAL_EDGE: f64 = 2.0;

/// Render a phantom; identical specs give bit-identical output.
pub fn synth(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (blobs, sections) = match spec.kind {
        PhantomKind::Uptake => (uptake_anatomy(spec, &mut rng), Vec::new()),
        PhantomKind::Serial => (Vec::new(), serial_anatomy(spec, &mut rng)),
    };
    let t_count = spec.frames;
    let mut shifts = vec![[0.0; 2]; t_count];
    match spec.kind {
        PhantomKind::Uptake => {
            for s in shifts.iter_mut().skip(1) {
                for v in s.iter_mut() {
                    let u: f64 = rng.random_range(-1.0..=1.0);
                    *v = spec.amplitude * spec.max_shift * u;
                }
            }
        }
        PhantomKind::Serial => {
            let normal = Normal::new(0.0, spec.max_shift)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            for s in shifts.iter_mut().skip(1) {
                for v in s.iter_mut() {
                    *v = spec.amplitude * normal.sample(&mut rng);
                }
            }
            // center the jitter so the sequence has no net placement offset
            for k in 0..2 {
                let mean = shifts[1..].iter().map(|s| s[k]).sum::<f64>() / (t_count - 1) as f64;
                for s in shifts.iter_mut().skip(1) {
                    s[k] -= mean;
                }
            }
        }
    }
    let [h, w] = spec.dims.map(|m| m as f64);
    let phases: Vec<[f64; 2]> = (0..t_count)
        .map(|_| {
            [
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    let grid = Grid::new(spec.dims.to_vec(), vec![1.0, 1.0], vec![0.0, 0.0])?;
    let frames = (0..t_count)
        .map(|t| {
            let frac = t as f64 / (t_count - 1) as f64;
            let gain = spec.intensity.0 + (spec.intensity.1 - spec.intensity.0) * frac;
            let s = shifts[t];
            let morphed: Vec<Blob> = sections
                .iter()
                .map(|sec| {
                    let mut b = sec.blob;
                    b.radii = [
                        b.radii[0] + sec.growth[0] * t as f64,
                        b.radii[1] + sec.growth[1] * t as f64,
                    ];
                    b
                })
                .collect();
            let a = if t == 0 {
                0.0
            } else {
                spec.amplitude * spec.deformation
            };
            let ph = phases[t];
            Image::from_fn(grid.clone(), |p| {
                let (ky, kx) = (
                    std::f64::consts::TAU * p[0] / h,
                    std::f64::consts::TAU * p[1] / w,
                );
                let warp = [
                    a * (kx + ph[0]).sin() * ky.sin(),
                    a * (ky + ph[1]).sin() * kx.sin(),
                ];
                let q = [p[0] - s[0] - warp[0], p[1] - s[1] - warp[1]];
                blobs
                    .iter()
                    .chain(&morphed)
                    .map(|b| if b.enhancing { gain } else { 1.0 } * b.eval(q, t as f64))
                    .sum::<f64>()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Phantom {
        stack: ImageStack::new(frames)?,
        shifts,
    })
}

pub const SHIFTS_HEADER: &str = "frame,dy,dx";

pub fn shifts_csv(shifts: &[[f64; 2]]) -> String {
    let mut out = String::from(SHIFTS_HEADER);
    out.push('\n');
    for (t, s) in shifts.iter().enumerate() {
        out.push_str(&format!("{},{:.17e},{:.17e}\n", t, s[0], s[1]));
    }
    out
}
