//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod cli;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use psmt::sparse::Dictionary;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| gaussian(rng))
}

pub fn random_dictionary(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Dictionary {
    Dictionary::from_unnormalized(gaussian_matrix(rng, n, m)).unwrap()
}

/// Every `k`-subset of `0..m` with `k <= max_k`, including the empty set.
pub fn subsets(m: usize, max_k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_k {
        let mut next = Vec::new();
        for s in &frontier {
            let from = s.last().map(|&l: &usize| l + 1).unwrap_or(0);
            for j in from..m {
                let mut t = s.clone();
                t.push(j);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Minimizer of `1/2||x - Phi a||^2 + lambda sum(a)`, `a >= 0`, found by
/// enumerating supports of size `<= max_k`. Returns the candidate with the
/// lowest objective among those satisfying all optimality conditions, or
/// `None` when no small support is optimal.
pub fn lasso_by_enumeration(phi: &DMatrix<f64>, x: &DVector<f64>, lambda: f64, max_k: usize) -> Option<DVector<f64>> {
    let m = phi.ncols();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for s in subsets(m, max_k) {
        let mut a = DVector::zeros(m);
        if !s.is_empty() {
            let ps = phi.select_columns(&s);
            let rhs = ps.transpose() * x - DVector::from_element(s.len(), lambda);
            let Some(ch) = (ps.transpose() * &ps).cholesky() else { continue };
            let sol = ch.solve(&rhs);
            if sol.iter().any(|&v| v <= 0.0) {
                continue;
            }
            for (i, &j) in s.iter().enumerate() {
                a[j] = sol[i];
            }
        }
        let g = phi.transpose() * (phi * &a - x);
        let optimal = (0..m).all(|j| if a[j] > 0.0 { true } else { g[j] + lambda >= -1e-9 });
        if !optimal {
            continue;
        }
        let obj = 0.5 * (x - phi * &a).norm_squared() + lambda * a.sum();
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, a));
        }
    }
    best.map(|(_, a)| a)
}

/// Smallest value of `p B p^T / p V p^T` over unit `p`, by nested grid
/// search on hyperspherical angles with successive zooming.
pub fn rayleigh_grid_min(b: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let m = b.nrows();
    let quotient = |angles: &[f64]| {
        let p = sphere_point(angles, m);
        let num = (b * &p).dot(&p);
        let den = (v * &p).dot(&p);
        num / den
    };
    let dims = m - 1;
    let coarse = match m {
        0..=3 => 64,
        4 => 24,
        5 => 14,
        _ => 9,
    };
    let mut center = vec![std::f64::consts::FRAC_PI_2; dims];
    let mut half = vec![std::f64::consts::FRAC_PI_2; dims];
    let mut best = f64::INFINITY;
    let mut points = coarse;
    for _ in 0..80 {
        let mut idx = vec![0usize; dims];
        let mut best_angles = center.clone();
        let mut on_edge = false;
        loop {
            let angles: Vec<f64> = (0..dims)
                .map(|d| center[d] - half[d] + 2.0 * half[d] * idx[d] as f64 / (points - 1) as f64)
                .collect();
            let q = quotient(&angles);
            if q < best {
                best = q;
                best_angles = angles;
                on_edge = idx.iter().any(|&i| i == 0 || i == points - 1);
            }
            let mut d = 0;
            loop {
                if d == dims {
                    break;
                }
                idx[d] += 1;
                if idx[d] < points {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == dims {
                break;
            }
        }
        center = best_angles;
        // keep the box size while the minimum may lie outside it
        if !on_edge || points == coarse {
            for h in half.iter_mut() {
                *h *= 0.5;
            }
        }
        points = 5;
    }
    best
}

fn sphere_point(angles: &[f64], m: usize) -> DVector<f64> {
    let mut p = DVector::zeros(m);
    let mut s = 1.0;
    for (i, &a) in angles.iter().enumerate() {
        p[i] = s * a.cos();
        s *= a.sin();
    }
    p[m - 1] = s;
    p
}

/// Component sizes containing each item, by union-find over an edge list.
pub fn union_find_sizes(n: usize, edges: &[(usize, usize)], items: &[usize]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for &(a, b) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    items
        .iter()
        .map(|&it| roots.iter().filter(|&&r| r == roots[it]).count())
        .collect()
}

/// Symmetric matrix with unit diagonal and off-diagonal entries in [-1, 1].
pub fn random_similarity(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut s = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.gen_range(-1.0..1.0);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Trimmed mean and sample std by explicit sorting and slicing.
pub fn naive_trimmed(values: &[f64], p: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cut = (p * v.len() as f64).floor() as usize;
    let kept: Vec<f64> = v[cut..v.len() - cut].to_vec();
    let n = kept.len() as f64;
    let mut mean = 0.0;
    for x in &kept {
        mean += x;
    }
    mean /= n;
    let mut ss = 0.0;
    for x in &kept {
        ss += (x - mean) * (x - mean);
    }
    let std = if kept.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

/// Quantile with linear interpolation between closest ranks.
pub fn naive_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor();
    let i = lo as usize;
    if i + 1 >= v.len() {
        return v[i];
    }
    v[i] + (h - lo) * (v[i + 1] - v[i])
}

/// Prediction inputs where every code is exactly linear in time.
pub struct LinearFixture {
    pub dict: Dictionary,
    pub training: psmt::sparse::SparseCodeMatrix,
    pub future: psmt::signal::PatchSequence,
    /// Codes of every frame, training and future.
    pub codes: Vec<DVector<f64>>,
    pub t: usize,
    pub h: usize,
    pub k: usize,
    pub coding: psmt::sparse::CodingConfig,
}

/// Identity dictionary with `x_t = alpha_t + lambda`, so the encoder returns
/// `alpha_t = a + b t` exactly.
pub fn linear_fixture(m: usize, h: usize, k: usize) -> LinearFixture {
    let lambda = 0.1;
    let mut r = rng(31);
    let a = DVector::from_fn(m, |_, _| r.gen_range(1.0..2.0));
    let b = DVector::from_fn(m, |_, _| r.gen_range(-0.01..0.01));
    let t = h + 5;
    let total = t + k + 1;
    let codes: Vec<DVector<f64>> = (0..total).map(|i| &a + &b * i as f64).collect();
    let dict = Dictionary::new(DMatrix::identity(m, m)).unwrap();
    let patches: Vec<Vec<f64>> = codes.iter().map(|c| c.iter().map(|v| v + lambda).collect()).collect();
    let all = psmt::signal::PatchSequence::new(patches, 0).unwrap();
    let cols: Vec<DVector<f64>> = codes[t + 1 - h..t].to_vec();
    let training = psmt::harness::codes_from_columns(&cols, t + 1 - h).unwrap();
    LinearFixture {
        dict,
        training,
        future: all.slice(t, total - t).unwrap(),
        codes,
        t,
        h,
        k,
        coding: psmt::sparse::CodingConfig {
            lambda_sc: lambda,
            tolerance: 1e-12,
            ..psmt::sparse::CodingConfig::default()
        },
    }
}

/// A small learned dictionary on a drifting grating with its training codes.
pub struct LadderFixture {
    pub dict: Dictionary,
    pub training: psmt::sparse::SparseCodeMatrix,
    pub future: psmt::signal::PatchSequence,
    pub h: usize,
    pub cfg: psmt::predictor::PredictorConfig,
}

pub fn ladder_fixture() -> LadderFixture {
    use psmt::signal::{preprocess, PreprocessConfig};
    let frames = psmt::synth::generate(
        &psmt::synth::SynthConfig {
            width: 16,
            height: 16,
            grating_rotation: 0.03,
            ..psmt::synth::SynthConfig::default()
        },
        psmt::synth::SynthKind::Grating,
        140,
        5,
    )
    .unwrap()
    .frames;
    let pre = PreprocessConfig {
        downsample_factor: 2,
        patch_side: 4,
        constant_patch_epsilon: 1e-8,
    };
    let patches = preprocess(&frames, &pre).unwrap();
    let t = 120;
    let h = 48;
    let coding = psmt::sparse::CodingConfig {
        lambda_sc: psmt::sparse::default_lambda_sc(&patches),
        dict_learn_epochs: 4,
        ..psmt::sparse::CodingConfig::default()
    };
    let learned = psmt::sparse::learn_dictionary(&patches.slice(0, t).unwrap(), 24, &coding, 1).unwrap();
    let training = learned.codes.window(t + 1 - h, h - 1).unwrap();
    let mut cfg = psmt::predictor::PredictorConfig {
        coding,
        ..psmt::predictor::PredictorConfig::default()
    };
    cfg.embedding.f = Some(4);
    cfg.embedding.interior_only = true;
    LadderFixture {
        dict: learned.dict,
        training,
        future: patches.slice(t, patches.len() - t).unwrap(),
        h,
        cfg,
    }
}
