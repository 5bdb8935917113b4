//! Path simulation under the reference measure P and under kernel-tilted
//! measures Q^u, with Radon-Nikodym bookkeeping, and the Monte Carlo
//! estimators built on top.
//!
//! Scheme: Euler-Maruyama with full truncation (the diffusion reads
//! `sqrt(max(alpha_i + beta_i x, 0))`), left-point accumulation of the
//! rate integral, and per-step Bernoulli jump sampling with probability
//! `min(lambda(x)^+ nu(R^n) dt, 1)`; marks are drawn proportionally to the
//! atom weights. A tilt by kernel `u` adds `g(s,x) u'` to the drift and
//! accumulates
//!
//! ```text
//! log dQ/dP = sum ( -1/2 |u|^2 dt + u . dW^P )
//!           + sum_steps ( -lambda(x)^+ theta_G dt ) + sum_jumps G(s, z)
//! ```
//!
//! where `theta_G = sum_i w_i (e^{G(s, z_i)} - 1)`; tilted jump sampling
//! reweights atoms by `e^{G(s, z_i)}`.
//!
//! Determinism: each path draws from its own counter-based substream keyed
//! by `(seed, path index)` (ChaCha streams), so ensembles are bit-identical
//! for a given `(seed, grid, n_paths, spec, kernel)` regardless of the
//! number of worker threads or of `n_paths` ordering.

use std::io::{self, Read, Write};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::model::{ModelSpec, PriceModelSpec};
use crate::riccati::TimeGrid;

/// How much per-path data an ensemble keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recording {
    /// Terminal state plus scalar accumulators only.
    Summary,
    /// Also every node state (needed by default sampling on state-dependent
    /// intensities).
    States,
    /// Node states plus Brownian increments (needed by the FBSDE residual
    /// and density checks).
    StatesAndNoise,
}

/// Measure the ensemble was generated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureTag {
    P,
    /// Tilted by the kernel passed to `simulate`.
    QKernel,
}

/// One realized jump: grid step index and atom index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JumpMark {
    pub step: u32,
    pub atom: u16,
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub recording: Recording,
    /// Worker threads; 0 defers to [`set_default_threads`], then to all
    /// available cores.
    pub threads: usize,
}

static DEFAULT_THREADS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);

/// Process-wide default worker count used when `SimOptions::threads == 0`.
/// Thread count never affects simulation output, only resource usage.
pub fn set_default_threads(threads: usize) {
    DEFAULT_THREADS.store(threads, std::sync::atomic::Ordering::Relaxed);
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            recording: Recording::Summary,
            threads: 0,
        }
    }
}

/// Simulated factor paths with accumulated rate integrals, entropy
/// integrands, RN log-weights and jump marks.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub seed: u64,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub dim: usize,
    pub x0: DVector<f64>,
    pub measure: MeasureTag,
    pub recording: Recording,
    /// Left-point `int r(X_v) dv` per path.
    pub rate_integrals: Vec<f64>,
    /// `log dQ/dP` per path; identically zero under P.
    pub log_rn_weights: Vec<f64>,
    /// Left-point `int 1/2 |u(v, X_v)|^2 dv` per path (zero under P).
    pub entropy_integrals: Vec<f64>,
    pub jump_marks: Vec<Vec<JumpMark>>,
    terminal: Vec<f64>,
    states: Option<Vec<f64>>,
    noise: Option<Vec<f64>>,
}

impl PathEnsemble {
    pub fn terminal_state(&self, path: usize) -> &[f64] {
        &self.terminal[path * self.dim..(path + 1) * self.dim]
    }

    /// State at a grid node; requires `States` or `StatesAndNoise` recording.
    pub fn state(&self, path: usize, node: usize) -> Option<&[f64]> {
        let states = self.states.as_ref()?;
        let w = (self.grid.steps + 1) * self.dim;
        let base = path * w + node * self.dim;
        Some(&states[base..base + self.dim])
    }

    /// Brownian increment over step `k` (under the simulation measure);
    /// requires `StatesAndNoise` recording.
    pub fn noise(&self, path: usize, step: usize) -> Option<&[f64]> {
        let noise = self.noise.as_ref()?;
        let w = self.grid.steps * self.dim;
        let base = path * w + step * self.dim;
        Some(&noise[base..base + self.dim])
    }
}

/// Monte Carlo point estimate with standard error and 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub ci95: (f64, f64),
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std_error = (var / n as f64).sqrt();
        McEstimate {
            mean,
            std_error,
            n,
            ci95: (mean - 1.96 * std_error, mean + 1.96 * std_error),
        }
    }
}

// ---------------------------------------------------------------------------
// engine
// ---------------------------------------------------------------------------

enum Diffusion {
    /// `S diag(sqrt(max(alpha_i + beta_i x, 0)))`, row-major blocks.
    SqrtAffine {
        s: Vec<f64>,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    },
    /// Constant `Sigma`, row-major.
    Constant { sigma: Vec<f64> },
}

struct JumpData {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    n_atoms: usize,
    total_weight: f64,
    quad: Option<Vec<f64>>,
    slope: Vec<f64>,
    konst: f64,
}

struct Engine<'k> {
    dim: usize,
    grid: TimeGrid,
    x0: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    diffusion: Diffusion,
    rate_quad: Option<Vec<f64>>,
    rate_slope: Vec<f64>,
    rate_const: f64,
    jump: Option<JumpData>,
    kernel: &'k KernelSpec,
    tilted: bool,
}

fn flatten_rm(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl<'k> Engine<'k> {
    fn new(
        spec: &ModelSpec,
        x0: &DVector<f64>,
        grid: &TimeGrid,
        kernel: &'k KernelSpec,
    ) -> Result<Self> {
        let dim = spec.dim();
        if x0.len() != dim {
            return Err(invalid("x0 dimension does not match the model"));
        }
        if let Some(kdim) = kernel.dim_hint() {
            if kdim != dim {
                return Err(invalid("kernel dimension does not match the model"));
            }
        }
        let tilted = !kernel.is_zero();
        let (a, b, diffusion, rate_quad, rate_slope, rate_const, jump) = match spec {
            ModelSpec::Affine(m) => (
                flatten_rm(&m.a),
                m.b.iter().copied().collect::<Vec<f64>>(),
                Diffusion::SqrtAffine {
                    s: flatten_rm(&m.s),
                    alpha: m.alpha.iter().copied().collect(),
                    beta: flatten_rm(&m.beta),
                },
                None,
                m.r.iter().copied().collect::<Vec<f64>>(),
                m.k,
                m.jump.as_ref().map(|j| JumpData {
                    atoms: j.measure.atoms.iter().flat_map(|z| z.iter().copied()).collect(),
                    weights: j.measure.weights.clone(),
                    n_atoms: j.measure.len(),
                    total_weight: j.measure.total_weight(),
                    quad: None,
                    slope: j.intensity_slope.iter().copied().collect(),
                    konst: j.intensity_const,
                }),
            ),
            ModelSpec::Quadratic(m) => (
                flatten_rm(&m.a),
                m.b.iter().copied().collect::<Vec<f64>>(),
                Diffusion::Constant {
                    sigma: flatten_rm(&m.sigma),
                },
                Some(flatten_rm(&m.q)),
                m.r.iter().copied().collect::<Vec<f64>>(),
                m.k,
                m.jump.as_ref().map(|j| JumpData {
                    atoms: j.measure.atoms.iter().flat_map(|z| z.iter().copied()).collect(),
                    weights: j.measure.weights.clone(),
                    n_atoms: j.measure.len(),
                    total_weight: j.measure.total_weight(),
                    quad: Some(flatten_rm(&j.intensity_quad)),
                    slope: j.intensity_slope.iter().copied().collect(),
                    konst: j.intensity_const,
                }),
            ),
        };
        Ok(Engine {
            dim,
            grid: *grid,
            x0: x0.iter().copied().collect(),
            a,
            b,
            diffusion,
            rate_quad,
            rate_slope,
            rate_const,
            jump,
            kernel,
            tilted,
        })
    }

    fn rate(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let mut r = self.rate_const;
        for (sj, xj) in self.rate_slope.iter().zip(x) {
            r += sj * xj;
        }
        if let Some(q) = &self.rate_quad {
            for (i, xi) in x.iter().enumerate() {
                let mut acc = 0.0;
                for (j, xj) in x.iter().enumerate() {
                    acc += q[i * n + j] * xj;
                }
                r += xi * acc;
            }
        }
        r
    }

    fn jump_intensity(&self, x: &[f64]) -> f64 {
        let jd = self.jump.as_ref().expect("jump data");
        let n = self.dim;
        let mut lam = jd.konst;
        for (sj, xj) in jd.slope.iter().zip(x) {
            lam += sj * xj;
        }
        if let Some(q) = &jd.quad {
            for (i, xi) in x.iter().enumerate() {
                let mut acc = 0.0;
                for (j, xj) in x.iter().enumerate() {
                    acc += q[i * n + j] * xj;
                }
                lam += xi * acc;
            }
        }
        lam.max(0.0)
    }
}

struct Scratch {
    z: Vec<f64>,
    u: Vec<f64>,
    diag: Vec<f64>,
    xnew: Vec<f64>,
    tmp: Vec<f64>,
    tilt_w: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize, n_atoms: usize) -> Self {
        Scratch {
            z: vec![0.0; dim],
            u: vec![0.0; dim],
            diag: vec![0.0; dim],
            xnew: vec![0.0; dim],
            tmp: vec![0.0; dim],
            tilt_w: vec![0.0; n_atoms],
        }
    }
}

struct PathOut<'a> {
    terminal: &'a mut [f64],
    rate: &'a mut f64,
    logrn: &'a mut f64,
    ent: &'a mut f64,
    marks: &'a mut Vec<JumpMark>,
    states: Option<&'a mut [f64]>,
    noise: Option<&'a mut [f64]>,
}

fn run_path(
    engine: &Engine<'_>,
    path_idx: usize,
    seed: u64,
    scratch: &mut Scratch,
    out: PathOut<'_>,
) -> Result<()> {
    let n = engine.dim;
    let dt = engine.grid.dt();
    let sqrt_dt = dt.sqrt();
    let steps = engine.grid.steps;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(path_idx as u64);

    let mut x = engine.x0.clone();
    let mut rate_int = 0.0;
    let mut logrn = 0.0;
    let mut ent = 0.0;

    if let Some(states) = &out.states {
        debug_assert_eq!(states.len(), (steps + 1) * n);
    }
    let mut states = out.states;
    if let Some(st) = states.as_deref_mut() {
        st[..n].copy_from_slice(&x);
    }
    let mut noise = out.noise;

    for k in 0..steps {
        let s = engine.grid.node(k);
        rate_int += engine.rate(&x) * dt;

        for zj in scratch.z.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *zj = g * sqrt_dt;
        }
        if let Some(ns) = noise.as_deref_mut() {
            ns[k * n..(k + 1) * n].copy_from_slice(&scratch.z);
        }

        // diffusion diagonal (affine) and tilt kernel
        if let Diffusion::SqrtAffine { alpha, beta, .. } = &engine.diffusion {
            for j in 0..n {
                let mut d = alpha[j];
                for (m, xv) in x.iter().enumerate() {
                    d += beta[j * n + m] * xv;
                }
                scratch.diag[j] = d.max(0.0).sqrt();
            }
        }
        if engine.tilted {
            engine
                .kernel
                .eval_into(s, &x, &mut scratch.u, &mut scratch.tmp);
            let mut usq = 0.0;
            let mut udw = 0.0;
            for (uj, zj) in scratch.u.iter().zip(&scratch.z) {
                if !uj.is_finite() {
                    return Err(Error::InvalidKernel { s });
                }
                usq += uj * uj;
                udw += uj * zj;
            }
            ent += 0.5 * usq * dt;
            // -1/2 |u|^2 dt + u . dW^P with dW^P = dW^Q + u dt
            logrn += 0.5 * usq * dt + udw;
        }

        // x_new = x + (A x + b) dt + G (z + u dt)
        for i in 0..n {
            let mut drift = engine.b[i];
            for (j, xv) in x.iter().enumerate() {
                drift += engine.a[i * n + j] * xv;
            }
            let mut diff = 0.0;
            match &engine.diffusion {
                Diffusion::SqrtAffine { s: smat, .. } => {
                    for j in 0..n {
                        let gij = smat[i * n + j] * scratch.diag[j];
                        let mut inc = scratch.z[j];
                        if engine.tilted {
                            inc += scratch.u[j] * dt;
                        }
                        diff += gij * inc;
                    }
                }
                Diffusion::Constant { sigma } => {
                    for j in 0..n {
                        let mut inc = scratch.z[j];
                        if engine.tilted {
                            inc += scratch.u[j] * dt;
                        }
                        diff += sigma[i * n + j] * inc;
                    }
                }
            }
            scratch.xnew[i] = x[i] + drift * dt + diff;
        }

        if let Some(jd) = &engine.jump {
            let lam = engine.jump_intensity(&x);
            let tilt_jumps = engine.tilted && engine.kernel.has_jump_part();
            let eff_weight = if tilt_jumps {
                let mut w_eff = 0.0;
                for ai in 0..jd.n_atoms {
                    let z = &jd.atoms[ai * n..(ai + 1) * n];
                    let g = engine.kernel.jump_log_tilt(s, z);
                    let w = jd.weights[ai] * g.exp();
                    scratch.tilt_w[ai] = w;
                    w_eff += w;
                }
                // compensator correction: theta_G = sum w_i (e^{G_i} - 1)
                logrn -= lam * (w_eff - jd.total_weight) * dt;
                w_eff
            } else {
                jd.total_weight
            };
            let p_jump = (lam * eff_weight * dt).min(1.0);
            let u1: f64 = rng.gen();
            if u1 < p_jump {
                let u2: f64 = rng.gen();
                let target = u2 * eff_weight;
                let mut acc = 0.0;
                let mut idx = jd.n_atoms - 1;
                for ai in 0..jd.n_atoms {
                    acc += if tilt_jumps {
                        scratch.tilt_w[ai]
                    } else {
                        jd.weights[ai]
                    };
                    if target < acc {
                        idx = ai;
                        break;
                    }
                }
                let z = &jd.atoms[idx * n..(idx + 1) * n];
                for (xi, zi) in scratch.xnew.iter_mut().zip(z) {
                    *xi += zi;
                }
                if tilt_jumps {
                    logrn += engine.kernel.jump_log_tilt(s, z);
                }
                out.marks.push(JumpMark {
                    step: k as u32,
                    atom: idx as u16,
                });
            }
        }

        x.copy_from_slice(&scratch.xnew);
        if let Some(st) = states.as_deref_mut() {
            st[(k + 1) * n..(k + 2) * n].copy_from_slice(&x);
        }
    }

    out.terminal.copy_from_slice(&x);
    *out.rate = rate_int;
    *out.logrn = logrn;
    *out.ent = ent;
    Ok(())
}

/// Simulates `n_paths` factor paths started at `x0` on `grid`.
/// `kernel = Zero` simulates under P; any other kernel simulates under the
/// tilted measure `Q^u` and accumulates the RN log-weights.
pub fn simulate(
    spec: &ModelSpec,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    kernel: &KernelSpec,
) -> Result<PathEnsemble> {
    simulate_with(spec, x0, grid, n_paths, seed, kernel, SimOptions::default())
}

/// [`simulate`] with explicit recording level and thread count.
pub fn simulate_with(
    spec: &ModelSpec,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    kernel: &KernelSpec,
    options: SimOptions,
) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(invalid("n_paths must be positive"));
    }
    let engine = Engine::new(spec, x0, grid, kernel)?;
    let n = engine.dim;
    let steps = grid.steps;

    let mut terminal = vec![0.0; n_paths * n];
    let mut rate = vec![0.0; n_paths];
    let mut logrn = vec![0.0; n_paths];
    let mut ent = vec![0.0; n_paths];
    let mut marks: Vec<Vec<JumpMark>> = vec![Vec::new(); n_paths];
    let mut states = match options.recording {
        Recording::Summary => None,
        _ => Some(vec![0.0; n_paths * (steps + 1) * n]),
    };
    let mut noise = match options.recording {
        Recording::StatesAndNoise => Some(vec![0.0; n_paths * steps * n]),
        _ => None,
    };

    let configured = if options.threads != 0 {
        options.threads
    } else {
        DEFAULT_THREADS.load(std::sync::atomic::Ordering::Relaxed)
    };
    let threads = if configured == 0 {
        std::thread::available_parallelism()
            .map(|v| v.get())
            .unwrap_or(1)
    } else {
        configured
    }
    .min(n_paths)
    .max(1);
    let chunk = n_paths.div_ceil(threads);
    let n_atoms = engine.jump.as_ref().map_or(0, |j| j.n_atoms);

    let result: Result<()> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        let mut term_rest = terminal.as_mut_slice();
        let mut rate_rest = rate.as_mut_slice();
        let mut logrn_rest = logrn.as_mut_slice();
        let mut ent_rest = ent.as_mut_slice();
        let mut marks_rest = marks.as_mut_slice();
        let mut states_rest = states.as_deref_mut();
        let mut noise_rest = noise.as_deref_mut();
        let engine = &engine;

        let mut start = 0;
        while start < n_paths {
            let len = chunk.min(n_paths - start);
            let (term_c, tr) = term_rest.split_at_mut(len * n);
            term_rest = tr;
            let (rate_c, rr) = rate_rest.split_at_mut(len);
            rate_rest = rr;
            let (logrn_c, lr) = logrn_rest.split_at_mut(len);
            logrn_rest = lr;
            let (ent_c, er) = ent_rest.split_at_mut(len);
            ent_rest = er;
            let (marks_c, mr) = marks_rest.split_at_mut(len);
            marks_rest = mr;
            let states_c = states_rest.take().map(|s| {
                let (c, r) = s.split_at_mut(len * (steps + 1) * n);
                states_rest = Some(r);
                c
            });
            let noise_c = noise_rest.take().map(|s| {
                let (c, r) = s.split_at_mut(len * steps * n);
                noise_rest = Some(r);
                c
            });

            handles.push(scope.spawn(move || -> Result<()> {
                let mut scratch = Scratch::new(n, n_atoms);
                let mut states_iter = states_c.map(|s| s.chunks_mut((steps + 1) * n));
                let mut noise_iter = noise_c.map(|s| s.chunks_mut(steps * n));
                for (i, (((term_p, rate_p), logrn_p), (ent_p, marks_p))) in term_c
                    .chunks_mut(n)
                    .zip(rate_c.iter_mut())
                    .zip(logrn_c.iter_mut())
                    .zip(ent_c.iter_mut().zip(marks_c.iter_mut()))
                    .enumerate()
                {
                    let out = PathOut {
                        terminal: term_p,
                        rate: rate_p,
                        logrn: logrn_p,
                        ent: ent_p,
                        marks: marks_p,
                        states: states_iter.as_mut().map(|it| it.next().expect("states chunk")),
                        noise: noise_iter.as_mut().map(|it| it.next().expect("noise chunk")),
                    };
                    run_path(engine, start + i, seed, &mut scratch, out)?;
                }
                Ok(())
            }));
            start += len;
        }
        let mut first_err = None;
        for h in handles {
            match h.join().expect("simulation worker panicked") {
                Ok(()) => {}
                Err(e) if first_err.is_none() => first_err = Some(e),
                Err(_) => {}
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    });
    result?;

    Ok(PathEnsemble {
        seed,
        grid: *grid,
        n_paths,
        dim: n,
        x0: x0.clone(),
        measure: if kernel.is_zero() {
            MeasureTag::P
        } else {
            MeasureTag::QKernel
        },
        recording: options.recording,
        rate_integrals: rate,
        log_rn_weights: logrn,
        entropy_integrals: ent,
        jump_marks: marks,
        terminal,
        states,
        noise,
    })
}

// ---------------------------------------------------------------------------
// estimators
// ---------------------------------------------------------------------------

/// `P(t, T) = E_P[exp(-int r)]` from an ensemble under P.
pub fn mc_bond_price(ensemble: &PathEnsemble) -> McEstimate {
    assert_eq!(
        ensemble.measure,
        MeasureTag::P,
        "mc_bond_price expects an ensemble under P"
    );
    let samples: Vec<f64> = ensemble
        .rate_integrals
        .iter()
        .map(|ri| (-ri).exp())
        .collect();
    McEstimate::from_samples(&samples)
}

/// `G(t, T) = E_P[S(T, X_T)]` from an ensemble under P.
pub fn mc_futures_price(ensemble: &PathEnsemble, price_model: &PriceModelSpec) -> McEstimate {
    assert_eq!(ensemble.measure, MeasureTag::P);
    let samples: Vec<f64> = (0..ensemble.n_paths)
        .map(|p| log_payoff_slice(price_model, ensemble.terminal_state(p)).exp())
        .collect();
    McEstimate::from_samples(&samples)
}

/// Forward numerator `E_P[exp(-int r) S(T, X_T)]` from an ensemble under P.
pub fn mc_forward_numerator(ensemble: &PathEnsemble, price_model: &PriceModelSpec) -> McEstimate {
    assert_eq!(ensemble.measure, MeasureTag::P);
    let samples: Vec<f64> = (0..ensemble.n_paths)
        .map(|p| {
            (log_payoff_slice(price_model, ensemble.terminal_state(p))
                - ensemble.rate_integrals[p])
                .exp()
        })
        .collect();
    McEstimate::from_samples(&samples)
}

pub(crate) fn log_payoff_slice(pm: &PriceModelSpec, x: &[f64]) -> f64 {
    match pm {
        PriceModelSpec::Apm { a_t, h_t } => {
            let mut acc = *h_t;
            for (j, xv) in x.iter().enumerate() {
                acc += a_t[j] * xv;
            }
            acc
        }
        PriceModelSpec::Qpm { b_t, a_t, h_t } => {
            let mut acc = *h_t;
            for (i, xi) in x.iter().enumerate() {
                acc += a_t[i] * xi;
                for (j, xj) in x.iter().enumerate() {
                    acc += xi * b_t[(i, j)] * xj;
                }
            }
            acc
        }
    }
}

/// Importance-sampling estimates from a tilted ensemble: the target
/// `E_P[payoff] = E_Q[payoff e^{-log dQ/dP}]` and the plain tilted mean
/// `E_Q[payoff]`.
#[derive(Debug, Clone, Copy)]
pub struct ReweightEstimate {
    pub under_p: McEstimate,
    pub under_q: McEstimate,
}

pub fn reweight(ensemble: &PathEnsemble, payoff: &[f64]) -> ReweightEstimate {
    assert_eq!(payoff.len(), ensemble.n_paths);
    let weighted: Vec<f64> = payoff
        .iter()
        .zip(&ensemble.log_rn_weights)
        .map(|(v, lw)| v * (-lw).exp())
        .collect();
    ReweightEstimate {
        under_p: McEstimate::from_samples(&weighted),
        under_q: McEstimate::from_samples(payoff),
    }
}

// ---------------------------------------------------------------------------
// binary dump
// ---------------------------------------------------------------------------

const DUMP_MAGIC: &[u8; 8] = b"OMTENS1\0";

/// Writes the summary-level ensemble dump. Little-endian layout:
///
/// ```text
/// magic "OMTENS1\0" | seed u64 | t0 f64 | t_end f64 | steps u64
/// n_paths u64 | dim u64 | measure u8 (0 = P, 1 = tilted) | pad [7]u8
/// then per path:
///   terminal state: dim x f64
///   rate_integral, log_rn_weight, entropy_integral: f64
///   jump_count u32, then jump_count x (step u32, atom u16)
/// ```
pub fn write_binary<W: Write>(ensemble: &PathEnsemble, w: &mut W) -> io::Result<()> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&ensemble.seed.to_le_bytes())?;
    w.write_all(&ensemble.grid.t0.to_le_bytes())?;
    w.write_all(&ensemble.grid.t_end.to_le_bytes())?;
    w.write_all(&(ensemble.grid.steps as u64).to_le_bytes())?;
    w.write_all(&(ensemble.n_paths as u64).to_le_bytes())?;
    w.write_all(&(ensemble.dim as u64).to_le_bytes())?;
    let measure = match ensemble.measure {
        MeasureTag::P => 0u8,
        MeasureTag::QKernel => 1u8,
    };
    w.write_all(&[measure, 0, 0, 0, 0, 0, 0, 0])?;
    for p in 0..ensemble.n_paths {
        for v in ensemble.terminal_state(p) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&ensemble.rate_integrals[p].to_le_bytes())?;
        w.write_all(&ensemble.log_rn_weights[p].to_le_bytes())?;
        w.write_all(&ensemble.entropy_integrals[p].to_le_bytes())?;
        let marks = &ensemble.jump_marks[p];
        w.write_all(&(marks.len() as u32).to_le_bytes())?;
        for m in marks {
            w.write_all(&m.step.to_le_bytes())?;
            w.write_all(&m.atom.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a dump produced by [`write_binary`]. The x0 recorded in the
/// returned ensemble is zero (the dump does not carry it).
pub fn read_binary<R: Read>(r: &mut R) -> io::Result<PathEnsemble> {
    fn read_exact<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf)?;
        Ok(buf)
    }
    let magic = read_exact::<8, _>(r)?;
    if &magic != DUMP_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad magic"));
    }
    let seed = u64::from_le_bytes(read_exact::<8, _>(r)?);
    let t0 = f64::from_le_bytes(read_exact::<8, _>(r)?);
    let t_end = f64::from_le_bytes(read_exact::<8, _>(r)?);
    let steps = u64::from_le_bytes(read_exact::<8, _>(r)?) as usize;
    let n_paths = u64::from_le_bytes(read_exact::<8, _>(r)?) as usize;
    let dim = u64::from_le_bytes(read_exact::<8, _>(r)?) as usize;
    let tag = read_exact::<8, _>(r)?;
    let measure = if tag[0] == 0 {
        MeasureTag::P
    } else {
        MeasureTag::QKernel
    };
    let mut terminal = vec![0.0; n_paths * dim];
    let mut rate = vec![0.0; n_paths];
    let mut logrn = vec![0.0; n_paths];
    let mut ent = vec![0.0; n_paths];
    let mut marks = vec![Vec::new(); n_paths];
    for p in 0..n_paths {
        for i in 0..dim {
            terminal[p * dim + i] = f64::from_le_bytes(read_exact::<8, _>(r)?);
        }
        rate[p] = f64::from_le_bytes(read_exact::<8, _>(r)?);
        logrn[p] = f64::from_le_bytes(read_exact::<8, _>(r)?);
        ent[p] = f64::from_le_bytes(read_exact::<8, _>(r)?);
        let count = u32::from_le_bytes(read_exact::<4, _>(r)?) as usize;
        let mut pm = Vec::with_capacity(count);
        for _ in 0..count {
            let step = u32::from_le_bytes(read_exact::<4, _>(r)?);
            let atom = u16::from_le_bytes(read_exact::<2, _>(r)?);
            pm.push(JumpMark { step, atom });
        }
        marks[p] = pm;
    }
    Ok(PathEnsemble {
        seed,
        grid: TimeGrid { t0, t_end, steps },
        n_paths,
        dim,
        x0: DVector::zeros(dim),
        measure,
        recording: Recording::Summary,
        rate_integrals: rate,
        log_rn_weights: logrn,
        entropy_integrals: ent,
        jump_marks: marks,
        terminal,
        states: None,
        noise: None,
    })
}
