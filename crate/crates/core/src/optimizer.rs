//! Gradient-descent driver: neighbor search and calibration once, then per
//! iteration tree build, summarization, both force passes and the
//! momentum/gains update.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::affinity::{calibrate_perplexity, symmetrize, SparseAffinity};
use crate::error::{Result, TsneError};
use crate::forces::{attractive, repulsive_bh, GradientBuffers};
use crate::knn::knn_exact;
use crate::par::*;
use crate::points::Points;
use crate::quadtree::{build_summarized, build_tree, compute_bounds, morton_codes, summarize};
use crate::real::{Precision, Real};
use crate::tensor_io::InputMatrix;

/// Standard deviation of the initial Gaussian cloud.
pub const INIT_STD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub theta: f64,
    pub n_iter: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub min_gain: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    /// Record a Barnes-Hut KL estimate every this many iterations.
    pub kl_every: Option<usize>,
    pub bsp_max_iter: usize,
    pub bsp_tol: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            theta: 0.5,
            n_iter: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            min_gain: 0.01,
            seed: 0,
            precision: Precision::F64,
            threads: 0,
            kl_every: None,
            bsp_max_iter: crate::affinity::DEFAULT_MAX_ITER,
            bsp_tol: crate::affinity::DEFAULT_TOL,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TsneError::Parameter(msg));
        if !(self.perplexity > 1.0) || !self.perplexity.is_finite() {
            return bad(format!("perplexity must satisfy u > 1, got {}", self.perplexity));
        }
        if !(self.theta >= 0.0) || !self.theta.is_finite() {
            return bad(format!("theta must satisfy theta >= 0, got {}", self.theta));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.early_exaggeration > 0.0) || !self.early_exaggeration.is_finite() {
            return bad(format!("exaggeration must be > 0, got {}", self.early_exaggeration));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.final_momentum) {
            return bad("momentum must lie in [0, 1)".into());
        }
        if !(self.min_gain > 0.0) {
            return bad(format!("min_gain must be > 0, got {}", self.min_gain));
        }
        if self.kl_every == Some(0) {
            return bad("kl_every must be positive".into());
        }
        if !(self.bsp_tol > 0.0) || self.bsp_max_iter == 0 {
            return bad("perplexity search needs tol > 0 and at least one iteration".into());
        }
        Ok(())
    }

    /// Neighborhood size `floor(3u)`, capped at N - 1.
    pub fn neighbors_for(&self, n_points: usize) -> usize {
        ((3.0 * self.perplexity).floor() as usize).min(n_points.saturating_sub(1))
    }

    pub fn momentum_at(&self, iteration: usize) -> f64 {
        if iteration < self.momentum_switch_iter {
            self.momentum
        } else {
            self.final_momentum
        }
    }
}

/// Low-dimensional points and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub y: Points<T>,
    pub velocity: Points<T>,
    pub gains: Points<T>,
    pub iteration: usize,
    pub rng_seed: u64,
}

impl<T: Real> Embedding<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn from_points(y: Points<T>, rng_seed: u64) -> Self {
        let n = y.len();
        Embedding {
            y,
            velocity: Points::zeros(n),
            gains: Points {
                coords: [vec![T::one(); n], vec![T::one(); n]],
            },
            iteration: 0,
            rng_seed,
        }
    }
}

/// i.i.d. N(0, 1e-4^2) coordinates from a seeded ChaCha8 stream, drawn in
/// f64 (x then y per point) and rounded to `T`.
pub fn init_embedding<T: Real>(n: usize, seed: u64) -> Result<Embedding<T>> {
    if n < 2 {
        return Err(TsneError::Shape(format!("need at least 2 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        xs.push(T::lit(rng.sample(normal)));
        ys.push(T::lit(rng.sample(normal)));
    }
    Ok(Embedding::from_points(Points::new(xs, ys)?, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Knn,
    Bsp,
    Tree,
    Summarize,
    Attractive,
    Repulsive,
    Update,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Knn,
        Stage::Bsp,
        Stage::Tree,
        Stage::Summarize,
        Stage::Attractive,
        Stage::Repulsive,
        Stage::Update,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Knn => "knn",
            Stage::Bsp => "bsp",
            Stage::Tree => "tree",
            Stage::Summarize => "summarize",
            Stage::Attractive => "attractive",
            Stage::Repulsive => "repulsive",
            Stage::Update => "update",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTiming {
    /// Seconds spent in each call, in call order.
    pub samples: Vec<f64>,
}

impl StageTiming {
    pub fn calls(&self) -> usize {
        self.samples.len()
    }

    pub fn total(&self) -> f64 {
        self.samples.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.total() / self.samples.len() as f64
        }
    }
}

/// Wall-clock time per pipeline stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepTimings {
    pub stages: [StageTiming; 7],
    /// End-to-end wall time of the run.
    pub wall_s: f64,
}

impl StepTimings {
    pub fn stage(&self, s: Stage) -> &StageTiming {
        &self.stages[s as usize]
    }

    pub fn record(&mut self, s: Stage, seconds: f64) {
        self.stages[s as usize].samples.push(seconds);
    }

    /// Run `f`, charging its wall time to `s`.
    pub fn time<R>(&mut self, s: Stage, f: impl FnOnce() -> R) -> R {
        let t0 = Instant::now();
        let r = f();
        self.record(s, t0.elapsed().as_secs_f64());
        r
    }

    pub fn stage_sum(&self) -> f64 {
        self.stages.iter().map(StageTiming::total).sum()
    }
}

/// `{stage: {total_s, per_iter_mean_s, calls}}` in pipeline order.
impl Serialize for StepTimings {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Entry {
            total_s: f64,
            per_iter_mean_s: f64,
            calls: usize,
        }
        let mut map = serializer.serialize_map(Some(Stage::ALL.len()))?;
        for s in Stage::ALL {
            let t = self.stage(s);
            map.serialize_entry(
                s.name(),
                &Entry {
                    total_s: t.total(),
                    per_iter_mean_s: t.mean(),
                    calls: t.calls(),
                },
            )?;
        }
        map.end()
    }
}

/// Reusable per-run scratch.
pub struct Workspace<T> {
    pub buffers: GradientBuffers<T>,
}

impl<T: Real> Workspace<T> {
    pub fn new(n: usize) -> Self {
        Workspace {
            buffers: GradientBuffers::new(n),
        }
    }
}

/// Forces for the current embedding into `ws.buffers`: tree, summary,
/// attraction and repulsion, each timed separately.
pub fn compute_forces<T: Real>(
    y: &Points<T>,
    p: &SparseAffinity<T>,
    theta: T,
    ws: &mut Workspace<T>,
    timings: &mut StepTimings,
) -> Result<()> {
    let mut tree = timings.time(Stage::Tree, || -> Result<_> {
        let (center, r_span) = compute_bounds(y)?;
        build_tree(morton_codes(y, center, r_span))
    })?;
    timings.time(Stage::Summarize, || summarize(&mut tree, y))?;
    timings.time(Stage::Attractive, || attractive(p, y, &mut ws.buffers))?;
    timings.time(Stage::Repulsive, || repulsive_bh(&tree, y, theta, &mut ws.buffers))?;
    Ok(())
}

/// Momentum/gains update from precomputed forces, then re-centering.
///
/// Per coordinate: `g = 4 (attr - rep / z)`; gains grow by 0.2 where `g` and
/// the velocity disagree in sign, otherwise shrink by 0.8, floored at
/// `min_gain`; `v = momentum v - lr gain g`; `y += v`.
pub fn apply_update<T: Real>(
    e: &mut Embedding<T>,
    buffers: &GradientBuffers<T>,
    momentum: T,
    learning_rate: T,
    min_gain: T,
) -> Result<()> {
    let n = e.len();
    if buffers.len() != n {
        return Err(TsneError::Shape(format!(
            "buffers sized {} for {n} points",
            buffers.len()
        )));
    }
    let z = T::lit(buffers.z);
    let four = T::lit(4.0);
    let up = T::lit(0.2);
    let down = T::lit(0.8);
    for c in 0..2 {
        let bad = buffers.attr.coords[c]
            .par_iter()
            .zip(buffers.rep.coords[c].par_iter())
            .enumerate()
            .map(|(i, (&a, &r))| {
                let g = four * (a - r / z);
                if g.is_finite() {
                    usize::MAX
                } else {
                    i
                }
            })
            .collect::<Vec<_>>()
            .into_iter()
            .min()
            .filter(|&i| i != usize::MAX);
        if let Some(index) = bad {
            return Err(TsneError::Diverged { index });
        }
        let attr = &buffers.attr.coords[c];
        let rep = &buffers.rep.coords[c];
        e.y.coords[c]
            .par_iter_mut()
            .zip(e.velocity.coords[c].par_iter_mut())
            .zip(e.gains.coords[c].par_iter_mut())
            .enumerate()
            .for_each(|(i, ((y, v), gain))| {
                let g = four * (attr[i] - rep[i] / z);
                *gain = if (*v * g) < T::zero() { *gain + up } else { *gain * down };
                if *gain < min_gain {
                    *gain = min_gain;
                }
                *v = momentum * *v - learning_rate * *gain * g;
                *y += *v;
            });
    }
    let mean = e.y.mean();
    for c in 0..2 {
        let m = mean[c];
        e.y.coords[c].par_iter_mut().for_each(|v| *v -= m);
    }
    e.iteration += 1;
    Ok(())
}

/// One full iteration against `p` as currently exaggerated.
pub fn gradient_step<T: Real>(
    e: &mut Embedding<T>,
    p: &SparseAffinity<T>,
    cfg: &TsneConfig,
    ws: &mut Workspace<T>,
    timings: &mut StepTimings,
) -> Result<()> {
    compute_forces(&e.y, p, T::lit(cfg.theta), ws, timings)?;
    let momentum = T::lit(cfg.momentum_at(e.iteration));
    timings.time(Stage::Update, || {
        apply_update(
            e,
            &ws.buffers,
            momentum,
            T::lit(cfg.learning_rate),
            T::lit(cfg.min_gain),
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlMode {
    Exact,
    BarnesHut(f64),
}

/// Exact normalization `sum_{k != l} (1 + |y_k - y_l|^2)^-1`, in f64.
pub fn exact_z<T: Real>(y: &Points<T>) -> f64 {
    let n = y.len();
    let [y0, y1] = &y.coords;
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (a0, a1) = (y0[i].as_f64(), y1[i].as_f64());
            let mut s = 0.0;
            for j in 0..n {
                if j != i {
                    let d0 = a0 - y0[j].as_f64();
                    let d1 = a1 - y1[j].as_f64();
                    s += 1.0 / (1.0 + d0 * d0 + d1 * d1);
                }
            }
            s
        })
        .collect();
    rows.iter().sum()
}

/// Sum over stored entries of `p ln(p Z (1 + |y_i - y_j|^2))`, natural log.
/// Entries that underflowed to zero contribute nothing.
fn kl_with_z<T: Real>(p: &SparseAffinity<T>, y: &Points<T>, z: f64, scale: f64) -> f64 {
    let [y0, y1] = &y.coords;
    let rows: Vec<f64> = (0..p.n)
        .into_par_iter()
        .map(|i| {
            let (cols, vals) = p.row(i);
            let mut s = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                let j = j as usize;
                let pij = v.as_f64() / scale;
                if pij == 0.0 {
                    continue;
                }
                let d0 = y0[i].as_f64() - y0[j].as_f64();
                let d1 = y1[i].as_f64() - y1[j].as_f64();
                s += pij * (pij * z * (1.0 + d0 * d0 + d1 * d1)).ln();
            }
            s
        })
        .collect();
    rows.iter().sum()
}

fn z_for<T: Real>(y: &Points<T>, mode: KlMode) -> Result<f64> {
    Ok(match mode {
        KlMode::Exact => exact_z(y),
        KlMode::BarnesHut(theta) => {
            let tree = build_summarized(y)?;
            let mut buf = GradientBuffers::new(y.len());
            repulsive_bh(&tree, y, T::lit(theta), &mut buf)?;
            buf.z
        }
    })
}

/// KL(P || Q) over the stored entries of `p`. `p` must not be exaggerated.
pub fn kl_divergence<T: Real>(p: &SparseAffinity<T>, y: &Points<T>, mode: KlMode) -> Result<f64> {
    if p.exaggeration != T::one() {
        return Err(TsneError::Contract(format!(
            "KL needs the unexaggerated affinity (exaggeration = {})",
            p.exaggeration
        )));
    }
    if p.n != y.len() {
        return Err(TsneError::Shape(format!(
            "affinity over {} points, embedding has {}",
            p.n,
            y.len()
        )));
    }
    Ok(kl_with_z(p, y, z_for(y, mode)?, 1.0))
}

/// Neighbor search, calibration and symmetrization, timed as `knn` and `bsp`.
pub fn input_affinity<T: Real>(
    x: &InputMatrix<T>,
    cfg: &TsneConfig,
    timings: &mut StepTimings,
) -> Result<SparseAffinity<T>> {
    let n = x.n_points();
    let k = cfg.neighbors_for(n);
    if cfg.perplexity > k as f64 {
        return Err(TsneError::Parameter(format!(
            "perplexity exceeds neighborhood size ({} > {k} for {n} points)",
            cfg.perplexity
        )));
    }
    let graph = timings.time(Stage::Knn, || knn_exact(x, k))?;
    timings.time(Stage::Bsp, || {
        let pr = calibrate_perplexity(&graph, cfg.perplexity, cfg.bsp_max_iter, cfg.bsp_tol)?;
        symmetrize(&pr, &graph)
    })
}

#[derive(Debug, Clone)]
pub struct TsneOutput<T> {
    pub embedding: Embedding<T>,
    pub timings: StepTimings,
    /// Exact KL of the final embedding.
    pub kl: f64,
    /// `(iterations completed, Barnes-Hut KL)` when `kl_every` is set.
    pub kl_history: Vec<(usize, f64)>,
}

/// Full pipeline on a dedicated pool of `cfg.threads` workers.
pub fn run<T: Real>(x: &InputMatrix<T>, cfg: &TsneConfig) -> Result<TsneOutput<T>> {
    cfg.validate()?;
    if cfg.precision != T::PRECISION {
        return Err(TsneError::Parameter(format!(
            "config asks for {} but the data is {}",
            cfg.precision.name(),
            T::PRECISION.name()
        )));
    }
    with_threads(cfg.threads, || run_in_pool(x, cfg))?
}

fn run_in_pool<T: Real>(x: &InputMatrix<T>, cfg: &TsneConfig) -> Result<TsneOutput<T>> {
    let t0 = Instant::now();
    let mut timings = StepTimings::default();
    let mut p = input_affinity(x, cfg, &mut timings)?;
    let mut e = init_embedding::<T>(x.n_points(), cfg.seed)?;
    let mut ws = Workspace::new(x.n_points());
    let mut kl_history = Vec::new();

    let exaggerate = cfg.exaggeration_iters.min(cfg.n_iter) > 0;
    if exaggerate {
        p.set_exaggeration(T::lit(cfg.early_exaggeration))?;
    }
    for it in 0..cfg.n_iter {
        if exaggerate && it == cfg.exaggeration_iters {
            p.set_exaggeration(T::one())?;
        }
        gradient_step(&mut e, &p, cfg, &mut ws, &mut timings)?;
        if let Some(every) = cfg.kl_every {
            if (it + 1) % every == 0 {
                let scale = p.exaggeration.as_f64();
                let z = z_for(&e.y, KlMode::BarnesHut(cfg.theta))?;
                kl_history.push((it + 1, kl_with_z(&p, &e.y, z, scale)));
            }
        }
    }
    p.set_exaggeration(T::one())?;
    let kl = kl_divergence(&p, &e.y, KlMode::Exact)?;
    timings.wall_s = t0.elapsed().as_secs_f64();
    Ok(TsneOutput {
        embedding: e,
        timings,
        kl,
        kl_history,
    })
}
