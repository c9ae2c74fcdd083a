//! Independent oracles shared by the integration tests: dense loss
//! evaluations written as plain loops over every cell, a finite-difference
//! Newton step, and seeded toy instances.
#![allow(dead_code)]

pub mod exact;
pub mod oracle;

use std::collections::HashMap;

use dtf_core::dataset::{RawEvent, TimeAnchors};
use dtf_core::legendre::{KernelMoments, LegendreBasis};
use dtf_core::linalg::DenseMatrix;
use dtf_core::models::{Interactions, TrainConfig, TrainEvent};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn toy_config(k: usize, r: usize) -> TrainConfig {
    TrainConfig {
        k,
        r,
        alpha: 3.0,
        lambda: 0.7,
        lambda_a: 0.3,
        sigma: 0.3,
        iterations: 1,
        cg_tol: 1e-12,
        cg_max_iter: 1000,
        threads: 1,
        ..TrainConfig::default()
    }
}

/// `n_events` random events on an `m × n × l` grid with weights in [1, 4].
pub fn toy_interactions(m: usize, n: usize, l: usize, n_events: usize, seed: u64) -> Interactions {
    let mut rng = rng(seed);
    let events = (0..n_events)
        .map(|_| {
            let t: f64 = rng.random_range(-1.0..1.0);
            let bin = (((t + 1.0) / 2.0) * l as f64).floor().min((l - 1) as f64) as u32;
            TrainEvent {
                user: rng.random_range(0..m) as u32,
                item: rng.random_range(0..n) as u32,
                t,
                bin,
                weight: rng.random_range(1.0..4.0),
            }
        })
        .collect();
    Interactions::from_events(m, n, l, TimeAnchors { t_min: 0, t_max: 1_000_000 }, events)
}

pub fn raw(user: &str, item: &str, ts: i64) -> RawEvent {
    RawEvent {
        user: user.to_string(),
        item: item.to_string(),
        timestamp: ts,
    }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_norm(m: &DenseMatrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum()
}

fn sq_dist(m: &DenseMatrix, target: f64) -> f64 {
    m.as_slice().iter().map(|v| (v - target) * (v - target)).sum()
}

/// Legendre values by the closed-form monomial coefficients (degrees ≤ 6),
/// and by Bonnet's recurrence beyond.
pub fn legendre_direct(d: usize, x: f64) -> f64 {
    match d {
        0 => 1.0,
        1 => x,
        2 => (3.0 * x * x - 1.0) / 2.0,
        3 => (5.0 * x.powi(3) - 3.0 * x) / 2.0,
        4 => (35.0 * x.powi(4) - 30.0 * x * x + 3.0) / 8.0,
        5 => (63.0 * x.powi(5) - 70.0 * x.powi(3) + 15.0 * x) / 8.0,
        6 => (231.0 * x.powi(6) - 315.0 * x.powi(4) + 105.0 * x * x - 5.0) / 16.0,
        _ => {
            let n = d as f64;
            ((2.0 * n - 1.0) * x * legendre_direct(d - 1, x) - (n - 1.0) * legendre_direct(d - 2, x)) / n
        }
    }
}

/// `∫_{-1}^{1} P_d P_e` written out, not taken from the library.
pub fn gram_entry(d: usize, e: usize) -> f64 {
    if d == e {
        2.0 / (2.0 * d as f64 + 1.0)
    } else {
        0.0
    }
}

/// Midpoint-rule integral of `f` over `[-1, 1]`.
pub fn integrate(f: impl Fn(f64) -> f64, samples: usize) -> f64 {
    let h = 2.0 / samples as f64;
    (0..samples).map(|j| f(-1.0 + (j as f64 + 0.5) * h)).sum::<f64>() * h
}

// ---------------------------------------------------------------- dense losses

/// WMF over every (u, i) cell; repeated events of a pair count once at their largest weight.
pub fn wmf_loss(data: &Interactions, cfg: &TrainConfig, p: &DenseMatrix, q: &DenseMatrix) -> f64 {
    let mut weight: HashMap<(u32, u32), f64> = HashMap::new();
    for e in &data.events {
        let w = weight.entry((e.user, e.item)).or_insert(0.0);
        *w = w.max(e.weight);
    }
    let mut loss = 0.0;
    for u in 0..p.rows() {
        for i in 0..q.rows() {
            let x = dotv(p.row(u), q.row(i));
            loss += x * x;
            if let Some(w) = weight.get(&(u as u32, i as u32)) {
                loss += w * (1.0 - x) * (1.0 - x);
            }
        }
    }
    loss + cfg.lambda * (sq_norm(p) + sq_norm(q))
}

fn triple(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    (0..a.len()).map(|j| a[j] * b[j] * c[j]).sum()
}

pub fn itals_loss(
    data: &Interactions,
    cfg: &TrainConfig,
    p: &DenseMatrix,
    q: &DenseMatrix,
    b: &DenseMatrix,
) -> f64 {
    let l = b.rows();
    let mut loss = 0.0;
    for e in &data.events {
        let x = triple(p.row(e.user as usize), q.row(e.item as usize), b.row(e.bin as usize));
        loss += e.weight * (1.0 - x) * (1.0 - x);
    }
    for u in 0..p.rows() {
        for i in 0..q.rows() {
            for t in 0..l {
                let x = triple(p.row(u), q.row(i), b.row(t));
                loss += x * x / l as f64;
            }
        }
    }
    let d = cfg.default_factor;
    loss + cfg.lambda * (sq_dist(p, d.users.value()) + sq_dist(q, d.items.value()) + sq_dist(b, d.time.value()))
}

pub fn italsx_predict(p: &[f64], q: &[f64], b: &[f64]) -> f64 {
    dotv(p, q) + dotv(p, b) + dotv(q, b)
}

pub fn italsx_loss(
    data: &Interactions,
    cfg: &TrainConfig,
    p: &DenseMatrix,
    q: &DenseMatrix,
    b: &DenseMatrix,
) -> f64 {
    let l = b.rows();
    let mut loss = 0.0;
    for e in &data.events {
        let x = italsx_predict(p.row(e.user as usize), q.row(e.item as usize), b.row(e.bin as usize));
        loss += e.weight * (1.0 - x) * (1.0 - x);
    }
    for u in 0..p.rows() {
        for i in 0..q.rows() {
            for t in 0..l {
                let x = italsx_predict(p.row(u), q.row(i), b.row(t));
                loss += x * x / l as f64;
            }
        }
    }
    loss + cfg.lambda * (sq_norm(p) + sq_norm(q) + sq_norm(b))
}

/// `(C_t A)` for one `t`, with the basis evaluated independently.
pub fn fit_factor(a: &DenseMatrix, t: f64) -> Vec<f64> {
    let (r, k) = a.shape();
    (0..k)
        .map(|c| (0..r).map(|d| legendre_direct(d, t) * a[(d, c)]).sum())
        .collect()
}

/// `∫ (Σ_c h_c (C_t A)_c)² dt` through the diagonal Gram matrix.
fn integral_sq(a: &DenseMatrix, h: &[f64]) -> f64 {
    let (r, k) = a.shape();
    (0..r)
        .map(|d| {
            let ah: f64 = (0..k).map(|c| a[(d, c)] * h[c]).sum();
            gram_entry(d, d) * ah * ah
        })
        .sum()
}

fn ridge_fit(cfg: &TrainConfig, a: &DenseMatrix) -> f64 {
    // λ ∫ ‖C_t A‖² + λ_A ‖A‖²
    let k = a.cols();
    let mut limit = 0.0;
    for c in 0..k {
        let mut e = vec![0.0; k];
        e[c] = 1.0;
        limit += integral_sq(a, &e);
    }
    cfg.lambda * limit + cfg.lambda_a * sq_norm(a)
}

pub fn dtf_loss(data: &Interactions, cfg: &TrainConfig, p: &DenseMatrix, q: &DenseMatrix, a: &DenseMatrix) -> f64 {
    let k = p.cols();
    let mut loss = 0.0;
    for e in &data.events {
        let x = triple(p.row(e.user as usize), q.row(e.item as usize), &fit_factor(a, e.t));
        loss += e.weight * (1.0 - x) * (1.0 - x);
    }
    for u in 0..p.rows() {
        for i in 0..q.rows() {
            let h: Vec<f64> = (0..k).map(|c| p[(u, c)] * q[(i, c)]).collect();
            loss += integral_sq(a, &h);
        }
    }
    loss + cfg.lambda * (sq_norm(p) + sq_norm(q)) + ridge_fit(cfg, a)
}

/// Kernel moments of every event, computed once per toy instance.
pub fn event_moments(data: &Interactions, cfg: &TrainConfig) -> Vec<KernelMoments> {
    let basis = LegendreBasis::new(cfg.r).unwrap();
    data.events
        .iter()
        .map(|e| basis.kernel_moments(e.t, cfg.sigma, cfg.kernel_samples).unwrap())
        .collect()
}

/// Kernel variant: each event contributes `W ∫ (K(t' − t) − X̂(t'))² dt'`,
/// expanded with the library's kernel moments (checked separately).
pub fn dtf_kernel_loss(
    data: &Interactions,
    cfg: &TrainConfig,
    moments: &[KernelMoments],
    p: &DenseMatrix,
    q: &DenseMatrix,
    a: &DenseMatrix,
) -> f64 {
    let (r, k) = a.shape();
    let mut loss = 0.0;
    for (e, m) in data.events.iter().zip(moments) {
        let h: Vec<f64> = (0..k)
            .map(|c| p[(e.user as usize, c)] * q[(e.item as usize, c)])
            .collect();
        let cross: f64 = (0..r)
            .map(|d| m.kc[d] * (0..k).map(|c| a[(d, c)] * h[c]).sum::<f64>())
            .sum();
        // ∫K² = 2·k2 and ∫K·C = 2·kc on [-1, 1]
        loss += e.weight * (2.0 * m.k2 - 2.0 * 2.0 * cross + integral_sq(a, &h));
    }
    for u in 0..p.rows() {
        for i in 0..q.rows() {
            let h: Vec<f64> = (0..k).map(|c| p[(u, c)] * q[(i, c)]).collect();
            loss += integral_sq(a, &h);
        }
    }
    loss + cfg.lambda * (sq_norm(p) + sq_norm(q)) + ridge_fit(cfg, a)
}

pub fn dmf_loss(data: &Interactions, cfg: &TrainConfig, p: &DenseMatrix, a: &[DenseMatrix]) -> f64 {
    let mut loss = 0.0;
    for e in &data.events {
        let x = dotv(p.row(e.user as usize), &fit_factor(&a[e.item as usize], e.t));
        loss += e.weight * (1.0 - x) * (1.0 - x);
    }
    for u in 0..p.rows() {
        for ai in a {
            loss += integral_sq(ai, p.row(u));
        }
    }
    loss + cfg.lambda * sq_norm(p) + a.iter().map(|ai| ridge_fit(cfg, ai)).sum::<f64>()
}

// ------------------------------------------------------------ Newton oracle

/// Exact minimizer of a quadratic `f` by one Newton step from `x0`, with
/// the gradient and Hessian taken by central differences of step 1 (exact
/// for quadratics up to rounding).
pub fn newton_minimizer(f: impl Fn(&[f64]) -> f64, x0: &[f64]) -> Vec<f64> {
    let n = x0.len();
    let eval = |shift: &[(usize, f64)]| {
        let mut x = x0.to_vec();
        for &(i, s) in shift {
            x[i] += s;
        }
        f(&x)
    };
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        grad[i] = (eval(&[(i, 1.0)]) - eval(&[(i, -1.0)])) / 2.0;
        for j in i..n {
            let h = (eval(&[(i, 1.0), (j, 1.0)]) - eval(&[(i, 1.0), (j, -1.0)]) - eval(&[(i, -1.0), (j, 1.0)])
                + eval(&[(i, -1.0), (j, -1.0)]))
                / 4.0;
            hess[(i, j)] = h;
            hess[(j, i)] = h;
        }
    }
    let step = hess.lu().solve(&grad).expect("Hessian is invertible");
    (0..n).map(|i| x0[i] - step[i]).collect()
}

/// `max |a − b| / max(1, max |b|)`
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

pub fn with_values(template: &DenseMatrix, values: &[f64]) -> DenseMatrix {
    DenseMatrix::from_vec(template.rows(), template.cols(), values.to_vec()).unwrap()
}

pub fn flatten(ms: &[DenseMatrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

pub fn unflatten(template: &[DenseMatrix], values: &[f64]) -> Vec<DenseMatrix> {
    let mut offset = 0;
    template
        .iter()
        .map(|m| {
            let len = m.rows() * m.cols();
            let out = with_values(m, &values[offset..offset + len]);
            offset += len;
            out
        })
        .collect()
}

/// Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub const DAY: i64 = 86_400;

/// Seeded log of `events` uniform events over `span_days`, starting at a fixed epoch.
pub fn random_log(seed: u64, users: usize, items: usize, events: usize, span_days: i64) -> dtf_core::dataset::EventLog {
    let mut rng = rng(seed);
    let mut records: Vec<RawEvent> = (0..events)
        .map(|_| {
            raw(
                &format!("u{}", rng.random_range(0..users)),
                &format!("i{}", rng.random_range(0..items)),
                1_700_000_000 + rng.random_range(0..span_days * DAY),
            )
        })
        .collect();
    // pin the range so every seed spans the same window
    records.push(raw("u0", "i0", 1_700_000_000));
    records.push(raw("u0", "i0", 1_700_000_000 + span_days * DAY));
    dtf_core::dataset::EventLog::from_records(records).unwrap()
}
