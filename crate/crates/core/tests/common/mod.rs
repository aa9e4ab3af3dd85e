//! Independent oracles and property checks shared by the integration tests
//! and the acceptance suite. Nothing here calls the code under test to
//! compute an expected value.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use fedecl::data::{sort_and_group, ExpertAssignment, LabeledDataset};
use fedecl::ecl::{PersonalizedState, ScalingScheme};
use fedecl::nncore::{bsce_loss, ce_loss, init_model, ArchSpec, Group, Layer, LossKind, Matrix, ModelParams};

pub mod props;

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_arch<R: Rng>(rng: &mut R) -> ArchSpec {
    let depth = rng.random_range(1..=3);
    ArchSpec {
        input_dim: rng.random_range(1..=5),
        block_widths: (0..depth).map(|_| rng.random_range(1..=6)).collect(),
        num_classes: rng.random_range(2..=5),
        init_seed: rng.random(),
    }
}

/// Glorot-initialized model with random (non-zero) biases. The weights come
/// from a fresh seed but the model reports `arch` unchanged.
pub fn random_model_for<R: Rng>(rng: &mut R, arch: &ArchSpec) -> ModelParams {
    let mut fresh = arch.clone();
    fresh.init_seed = rng.random();
    let drawn = init_model(&fresh).unwrap();
    let mut m = ModelParams::from_layers(arch.clone(), drawn.blocks, drawn.classifier).unwrap();
    let groups: Vec<Group> = m.groups().collect();
    for g in groups {
        for b in m.layer_mut(g).bias.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    m
}

pub fn random_model<R: Rng>(rng: &mut R) -> ModelParams {
    let arch = random_arch(rng);
    random_model_for(rng, &arch)
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

pub fn random_labels<R: Rng>(rng: &mut R, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Gaussian blobs around `num_classes` random centres, for training checks.
pub fn blobs<R: Rng>(rng: &mut R, num_classes: usize, dim: usize, per_class: &[usize], spread: f64) -> LabeledDataset {
    let centres: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let normal = rand_distr::Normal::new(0.0, spread.max(1e-12)).unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (c, &n) in per_class.iter().enumerate() {
        for _ in 0..n {
            xs.extend(centres[c].iter().map(|m| m + normal.sample(rng)));
            ys.push(c);
        }
    }
    LabeledDataset::new(Matrix::from_vec(ys.len(), dim, xs).unwrap(), ys, num_classes).unwrap()
}

fn layer_apply(layer: &Layer, x: &[f64]) -> Vec<f64> {
    let (out, inp) = layer.weight.shape();
    assert_eq!(inp, x.len());
    (0..out)
        .map(|j| {
            let mut s = layer.bias[j];
            for (i, xi) in x.iter().enumerate() {
                s += layer.weight.get(j, i) * xi;
            }
            s
        })
        .collect()
}

/// Straight-line forward pass: logits and the ReLU on/off pattern.
pub fn oracle_forward(model: &ModelParams, x: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut h = x.to_vec();
    let mut pattern = Vec::new();
    for block in &model.blocks {
        let pre = layer_apply(block, &h);
        pattern.extend(pre.iter().map(|v| *v > 0.0));
        h = pre.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect();
    }
    (layer_apply(&model.classifier, &h), pattern)
}

fn patterns(model: &ModelParams, x: &Matrix) -> Vec<bool> {
    (0..x.rows()).flat_map(|r| oracle_forward(model, x.row(r)).1).collect()
}

pub fn close_rel(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel * analytic.abs().max(numeric.abs())
}

fn loss_value(logits: &Matrix, labels: &[usize], kind: LossKind, counts: &[usize]) -> (f64, Matrix) {
    match kind {
        LossKind::CrossEntropy => ce_loss(logits, labels).unwrap(),
        LossKind::BalancedSoftmax => bsce_loss(logits, labels, counts).unwrap(),
    }
}

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL: f64 = 1e-5;
/// Gradients this small are compared absolutely; a relative test is
/// meaningless at the truncation-error level of the difference quotient.
pub const FD_ABS_FLOOR: f64 = 1e-8;

/// Central differences of the loss w.r.t. the logits themselves.
pub fn check_dlogits(logits: &Matrix, labels: &[usize], kind: LossKind, counts: &[usize]) -> Check {
    let (_, d) = loss_value(logits, labels, kind, counts);
    for i in 0..logits.rows() {
        for j in 0..logits.cols() {
            let mut p = logits.clone();
            p.set(i, j, logits.get(i, j) + FD_STEP);
            let mut m = logits.clone();
            m.set(i, j, logits.get(i, j) - FD_STEP);
            let num =
                (loss_value(&p, labels, kind, counts).0 - loss_value(&m, labels, kind, counts).0) / (2.0 * FD_STEP);
            if !close_rel(d.get(i, j), num, FD_REL, FD_ABS_FLOOR) {
                return Err(format!("dlogits[{i}][{j}] analytic {} vs numeric {num}", d.get(i, j)));
            }
        }
    }
    Ok(())
}

/// Central differences of loss(forward(x)) w.r.t. every trainable
/// parameter, compared with `backward`. Coordinates whose perturbation flips
/// a ReLU are skipped (the loss is not differentiable across the kink).
/// Returns the number of coordinates compared.
pub fn check_param_grads(
    model: &ModelParams,
    x: &Matrix,
    labels: &[usize],
    kind: LossKind,
    counts: &[usize],
) -> Result<usize, String> {
    let cache = model.forward_cached(x).map_err(|e| e.to_string())?;
    let (_, dl) = loss_value(&cache.logits, labels, kind, counts);
    let grads = model.backward(&cache, &dl).map_err(|e| e.to_string())?;
    let base = patterns(model, x);
    let loss_at = |m: &ModelParams| loss_value(&m.forward(x).unwrap(), labels, kind, counts).0;
    let mut compared = 0;
    let groups: Vec<Group> = model.groups().collect();
    for g in groups {
        let Some(grad) = grads.get(g) else {
            if !model.freeze_mask().is_frozen(g) {
                return Err(format!("no gradient for trainable group {g:?}"));
            }
            continue;
        };
        if model.freeze_mask().is_frozen(g) {
            return Err(format!("gradient returned for frozen group {g:?}"));
        }
        let analytic: Vec<f64> = grad.values().copied().collect();
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = model.clone();
            *plus.layer_mut(g).values_mut().nth(i).unwrap() += FD_STEP;
            let mut minus = model.clone();
            *minus.layer_mut(g).values_mut().nth(i).unwrap() -= FD_STEP;
            if patterns(&plus, x) != base || patterns(&minus, x) != base {
                continue;
            }
            let num = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
            if !close_rel(a, num, FD_REL, FD_ABS_FLOOR) {
                return Err(format!("{g:?} coordinate {i}: analytic {a} vs numeric {num}"));
            }
            compared += 1;
        }
    }
    Ok(compared)
}

/// Class-balanced check of an expert assignment against the grouping rule.
pub fn check_grouping(counts: &[usize], m: usize, a: &ExpertAssignment) -> Check {
    let mut expected: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    expected.sort_by(|&x, &y| counts[y].cmp(&counts[x]).then(x.cmp(&y)));
    if a.sorted_classes != expected {
        return Err(format!("sorted order {:?}, expected {expected:?}", a.sorted_classes));
    }
    if a.groups.len() != m {
        return Err(format!("{} groups for M = {m}", a.groups.len()));
    }
    // concatenation equal to the sorted order gives disjointness, coverage and contiguity at once
    let concat: Vec<usize> = a.groups.iter().flatten().copied().collect();
    if concat != expected {
        return Err(format!("groups {:?} are not contiguous runs of {expected:?}", a.groups));
    }
    let p = expected.len();
    for (i, g) in a.groups.iter().enumerate() {
        let want = p / m + usize::from(i < p % m);
        if g.len() != want {
            return Err(format!("group {i} has {} classes, expected {want}", g.len()));
        }
    }
    let nonempty: Vec<usize> = a.groups.iter().map(Vec::len).filter(|&n| n > 0).collect();
    if let (Some(max), Some(min)) = (nonempty.iter().max(), nonempty.iter().min()) {
        if max - min > 1 {
            return Err("group sizes differ by more than one".into());
        }
    }
    Ok(())
}

fn frob_sq(layer: &Layer) -> f64 {
    layer.weight.as_slice().iter().map(|w| w * w).sum()
}

fn row_sq(layer: &Layer, c: usize) -> f64 {
    layer.weight.row(c).iter().map(|w| w * w).sum()
}

/// Scaled logit aggregation recomputed from raw forward outputs: owned
/// classes mix the scaled expert logit with the retrained global logit,
/// absent classes keep the global logit.
pub fn oracle_aggregate(state: &PersonalizedState, x: &[f64]) -> Vec<f64> {
    let g = &state.retrained_global;
    let z0 = oracle_forward(g, x).0;
    (0..z0.len())
        .map(|c| {
            let owner = state.assignment.groups.iter().position(|grp| grp.contains(&c));
            match owner {
                None => z0[c],
                Some(m) => {
                    let e = &state.experts[m];
                    let z = oracle_forward(e, x).0[c];
                    let factor = match state.scaling {
                        ScalingScheme::NoScaling => 1.0,
                        ScalingScheme::EclScaling => row_sq(&e.classifier, c) / row_sq(&g.classifier, c),
                        ScalingScheme::EclScalingMatrix => frob_sq(&e.classifier) / frob_sq(&g.classifier),
                    };
                    state.lambda * (factor * z) + (1.0 - state.lambda) * z0[c]
                }
            }
        })
        .collect()
}

pub fn random_state<R: Rng>(rng: &mut R) -> PersonalizedState {
    let arch = random_arch(rng);
    let c = arch.num_classes;
    let m = rng.random_range(1..=c + 1);
    let counts: Vec<usize> = (0..c)
        .map(|_| {
            if rng.random_bool(0.3) {
                0
            } else {
                rng.random_range(1..50)
            }
        })
        .collect();
    let mut counts = counts;
    if counts.iter().all(|&n| n == 0) {
        counts[0] = 1;
    }
    let assignment = sort_and_group(&counts, m).unwrap();
    let lambda = match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..=1.0),
    };
    let scaling = [
        ScalingScheme::EclScaling,
        ScalingScheme::EclScalingMatrix,
        ScalingScheme::NoScaling,
    ][rng.random_range(0..3)];
    PersonalizedState {
        retrained_global: random_model_for(rng, &arch),
        experts: (0..m).map(|_| random_model_for(rng, &arch)).collect(),
        assignment,
        lambda,
        scaling,
    }
}

/// Per-client class counts from an independent Dirichlet sampler: for each
/// class, K Gamma(α, 1) draws normalized to the simplex, integerized by
/// largest remainder, then the class members shuffled with the same stream.
/// Returns `counts[client][class]`.
pub fn reference_dirichlet_counts(class_sizes: &[usize], k: usize, alpha: f64, seed: u64) -> Vec<Vec<usize>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(alpha, 1.0).unwrap();
    let mut out = vec![vec![0; class_sizes.len()]; k];
    for (c, &n) in class_sizes.iter().enumerate() {
        let g: Vec<f64> = (0..k).map(|_| gamma.sample(&mut r)).collect();
        let s: f64 = g.iter().sum();
        let p: Vec<f64> = if s > 0.0 && s.is_finite() {
            g.iter().map(|v| v / s).collect()
        } else {
            vec![1.0 / k as f64; k]
        };
        let quota: Vec<f64> = p.iter().map(|pi| pi * n as f64).collect();
        let mut alloc: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
        let mut rank: Vec<(f64, usize)> = quota.iter().enumerate().map(|(i, q)| (q - q.floor(), i)).collect();
        rank.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let short = n - alloc.iter().sum::<usize>();
        for &(_, i) in rank.iter().take(short) {
            alloc[i] += 1;
        }
        for (client, a) in alloc.into_iter().enumerate() {
            out[client][c] = a;
        }
        let mut members: Vec<usize> = (0..n).collect();
        members.shuffle(&mut r);
    }
    out
}
