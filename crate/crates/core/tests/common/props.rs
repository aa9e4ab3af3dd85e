//! Seeded property checks. Each takes a case seed, builds a random case and
//! returns `Err` with a description on the first violated invariant. The
//! proptest files drive them with generated seeds; the acceptance suite runs
//! the whole table under a time budget.

use rand::seq::SliceRandom;
use rand::Rng;

use super::*;
use fedecl::checkpoint::{decode_state, encode_state};
use fedecl::data::{
    balance_subset, build_client_testset, dirichlet_partition, longtail_counts, shape_longtail, PartitionSpec,
};
use fedecl::ecl::{personalize_client, Phase2Config, Provenance};
use fedecl::eval::{
    mean_record, metrics_csv, parse_metrics_csv, summary_json, ClassGroups, ClientTag, MetricsRecord, Tally,
};
use fedecl::fed::{aggregate, run_phase1, sample_clients, FedConfig};
use fedecl::nncore::{deserialize, serialize, softmax, train_epochs, OptState, SgdHyper, TrainSpec};

pub type Prop = fn(u64) -> Check;

pub const ALL: &[(&str, Prop)] = &[
    ("ce_gradients_match_finite_differences", ce_gradients),
    ("bsce_gradients_match_finite_differences", bsce_gradients),
    ("bsce_with_equal_counts_is_ce", bsce_equal_counts),
    ("softmax_is_a_distribution", softmax_distribution),
    ("frozen_groups_are_untouched_by_training", frozen_untouched),
    ("training_is_deterministic", training_deterministic),
    ("checkpoints_round_trip", checkpoints_round_trip),
    ("grouping_follows_sorted_contiguous_split", grouping),
    ("longtail_profile_and_subset", longtail),
    ("dirichlet_conserves_and_matches_reference", dirichlet),
    ("balance_subset_equalizes_group", balance),
    ("client_testset_matches_histogram", client_testset),
    ("client_sampling_is_a_sorted_subset", client_sampling),
    ("fedavg_aggregation_is_a_convex_weighted_mean", fedavg_aggregation),
    ("aggregated_logits_match_oracle", aggregated_logits),
    ("lambda_endpoints_are_exact", lambda_endpoints),
    ("scale_factors_are_positive", scale_factors_positive),
    ("mean_and_pooled_records", mean_and_pooled),
    ("class_groups_partition_classes", class_groups_partition),
    ("phase1_is_deterministic_and_logs_the_schedule", phase1_deterministic),
    ("phase2_contracts", phase2_contracts),
    ("report_is_a_pure_function_of_records", report_pure),
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_freeze<R: Rng>(rng: &mut R, model: &mut ModelParams) {
    match rng.random_range(0..4) {
        0 => model.unfreeze_all(),
        1 => model.train_classifier_only(),
        2 => model.train_last_block_and_classifier(),
        _ => {
            let groups: Vec<Group> = model.groups().collect();
            model.unfreeze_all();
            for g in groups {
                model.set_frozen(g, rng.random_bool(0.5));
            }
        }
    }
}

fn grad_case(seed: u64, kind: LossKind) -> Check {
    let mut r = rng(seed);
    let mut model = random_model(&mut r);
    random_freeze(&mut r, &mut model);
    let rows = r.random_range(1..=4);
    let x = random_matrix(&mut r, rows, model.arch().input_dim);
    let c = model.num_classes();
    let labels = random_labels(&mut r, rows, c);
    let mut counts = vec![0; c];
    for &y in &labels {
        counts[y] += r.random_range(1..20);
    }
    for n in counts.iter_mut() {
        if *n == 0 && r.random_bool(0.5) {
            *n = r.random_range(1..20);
        }
    }
    let logits = model.forward(&x).map_err(|e| e.to_string())?;
    check_dlogits(&logits, &labels, kind, &counts)?;
    check_param_grads(&model, &x, &labels, kind, &counts).map(|_| ())
}

pub fn ce_gradients(seed: u64) -> Check {
    grad_case(seed, LossKind::CrossEntropy)
}

pub fn bsce_gradients(seed: u64) -> Check {
    grad_case(seed, LossKind::BalancedSoftmax)
}

pub fn bsce_equal_counts(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(2..8);
    let rows = r.random_range(1..6);
    let logits = random_matrix(&mut r, rows, c);
    let labels = random_labels(&mut r, rows, c);
    let n = r.random_range(1..1000);
    let (l1, d1) = ce_loss(&logits, &labels).unwrap();
    let (l2, d2) = bsce_loss(&logits, &labels, &vec![n; c]).unwrap();
    ensure(l1.to_bits() == l2.to_bits(), || format!("loss {l1} vs {l2}"))?;
    ensure(
        d1.as_slice()
            .iter()
            .zip(d2.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits()),
        || "gradients differ".into(),
    )
}

pub fn softmax_distribution(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(1..10);
    let scale = [1.0, 50.0, 1e3][r.random_range(0..3)];
    let z: Vec<f64> = (0..c).map(|_| r.random_range(-scale..scale)).collect();
    let p = softmax(&z);
    ensure(p.iter().all(|v| v.is_finite() && *v >= 0.0), || format!("{p:?}"))?;
    let s: f64 = p.iter().sum();
    ensure((s - 1.0).abs() <= 1e-12, || format!("sum {s}"))
}

fn small_training_case(seed: u64) -> (ModelParams, LabeledDataset, TrainSpec, SgdHyper) {
    let mut r = rng(seed);
    let mut model = random_model(&mut r);
    random_freeze(&mut r, &mut model);
    let arch = model.arch().clone();
    let per_class: Vec<usize> = (0..arch.num_classes).map(|_| r.random_range(1..8)).collect();
    let data = blobs(&mut r, arch.num_classes, arch.input_dim, &per_class, 0.5);
    let spec = TrainSpec {
        epochs: r.random_range(1..3),
        loss: if r.random_bool(0.5) {
            LossKind::CrossEntropy
        } else {
            LossKind::BalancedSoftmax
        },
        batch_size: r.random_range(1..10),
        shuffle_seed: r.random(),
    };
    let hyper = SgdHyper {
        learning_rate: 0.05,
        momentum: 0.9,
        weight_decay: 5e-4,
    };
    (model, data, spec, hyper)
}

pub fn frozen_untouched(seed: u64) -> Check {
    let (mut model, data, spec, hyper) = small_training_case(seed);
    let before = model.clone();
    let mut opt = OptState::new(&model, hyper).unwrap();
    train_epochs(&mut model, &data, &spec, &mut opt).map_err(|e| e.to_string())?;
    for g in before.groups() {
        let frozen = before.freeze_mask().is_frozen(g);
        ensure(!frozen || model.group_bits_eq(&before, g), || {
            format!("frozen {g:?} changed")
        })?;
        ensure(frozen == opt.buffer(g).is_none(), || {
            format!("buffer presence for {g:?}")
        })?;
    }
    Ok(())
}

pub fn training_deterministic(seed: u64) -> Check {
    let (model, data, spec, hyper) = small_training_case(seed);
    let run = || {
        let mut m = model.clone();
        let mut opt = OptState::new(&m, hyper).unwrap();
        let loss = train_epochs(&mut m, &data, &spec, &mut opt).unwrap();
        (m, loss.map(f64::to_bits))
    };
    let (a, la) = run();
    let (b, lb) = run();
    ensure(a.bits_eq(&b) && la == lb, || "two identical runs diverged".into())
}

pub fn checkpoints_round_trip(seed: u64) -> Check {
    let mut r = rng(seed);
    let mut state = random_state(&mut r);
    state.retrained_global.quantize_f32();
    state.experts.iter_mut().for_each(ModelParams::quantize_f32);
    let bytes = serialize(&state.retrained_global);
    let back = deserialize(&bytes).map_err(|e| e.to_string())?;
    ensure(back.bits_eq(&state.retrained_global), || "model bits changed".into())?;
    let sbytes = encode_state(&state);
    let sback = decode_state(&sbytes).map_err(|e| e.to_string())?;
    ensure(sback == state, || "state changed".into())?;
    // any strict prefix must be rejected, never panic
    let cut = r.random_range(0..sbytes.len());
    ensure(decode_state(&sbytes[..cut]).is_err(), || {
        format!("prefix of {cut} bytes decoded")
    })
}

pub fn grouping(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(1..=15);
    let counts: Vec<usize> = (0..c)
        .map(|_| match r.random_range(0..4) {
            0 => 0,
            1 => r.random_range(1..4), // ties are common
            _ => r.random_range(1..500),
        })
        .collect();
    let m = r.random_range(1..=c);
    if counts.iter().all(|&n| n == 0) {
        return ensure(sort_and_group(&counts, m).is_err(), || {
            "grouping of an empty client succeeded".into()
        });
    }
    let a = sort_and_group(&counts, m).map_err(|e| e.to_string())?;
    check_grouping(&counts, m, &a)
}

/// Dataset whose first feature is the sample's own index, so subsets can be
/// traced back to their source rows.
fn traceable(labels: Vec<usize>, num_classes: usize) -> LabeledDataset {
    let n = labels.len();
    let feats: Vec<f64> = (0..n).map(|i| i as f64).collect();
    LabeledDataset::new(Matrix::from_vec(n, 1, feats).unwrap(), labels, num_classes).unwrap()
}

fn ids(d: &LabeledDataset) -> Vec<usize> {
    (0..d.len()).map(|i| d.sample(i).0[0] as usize).collect()
}

pub fn longtail(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(2..10);
    let n0 = r.random_range(1..200);
    let imb = r.random_range(1.0..200.0);
    let t = longtail_counts(n0, c, imb).map_err(|e| e.to_string())?;
    ensure(t[0] == n0, || format!("head {} != {n0}", t[0]))?;
    ensure(t.windows(2).all(|w| w[0] >= w[1]), || format!("not monotone {t:?}"))?;
    let want_tail = (n0 as f64 / imb).round() as usize;
    ensure(t[c - 1] == want_tail, || format!("tail {} != {want_tail}", t[c - 1]))?;

    let mut labels: Vec<usize> = (0..c).flat_map(|k| std::iter::repeat_n(k, n0)).collect();
    labels.shuffle(&mut r);
    let data = traceable(labels.clone(), c);
    let lt = shape_longtail(&data, imb, r.random()).map_err(|e| e.to_string())?;
    ensure(lt.class_counts() == t.as_slice(), || {
        format!("{:?} vs {t:?}", lt.class_counts())
    })?;
    let kept = ids(&lt);
    ensure(kept.windows(2).all(|w| w[0] < w[1]), || {
        "kept samples out of order or repeated".into()
    })?;
    ensure(kept.iter().zip(lt.labels()).all(|(&i, &y)| labels[i] == y), || {
        "label changed".into()
    })
}

pub fn dirichlet(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(1..8);
    let k = r.random_range(1..8);
    let alpha = [0.05, 0.2, 1.0, 10.0][r.random_range(0..4)];
    let sizes: Vec<usize> = (0..c).map(|_| r.random_range(0..60)).collect();
    let mut labels: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(cls, &n)| std::iter::repeat_n(cls, n))
        .collect();
    labels.shuffle(&mut r);
    let data = traceable(labels, c);
    let spec = PartitionSpec {
        num_clients: k,
        alpha,
        seed: r.random(),
    };
    let clients = dirichlet_partition(&data, &spec).map_err(|e| e.to_string())?;
    ensure(clients.len() == k, || "client count".into())?;
    let mut all: Vec<usize> = clients.iter().flat_map(ids).collect();
    all.sort_unstable();
    ensure(all == (0..data.len()).collect::<Vec<_>>(), || {
        "samples lost or duplicated".into()
    })?;
    ensure(dirichlet_partition(&data, &spec).unwrap() == clients, || {
        "not reproducible".into()
    })?;
    let reference = reference_dirichlet_counts(&sizes, k, alpha, spec.seed);
    for (i, cl) in clients.iter().enumerate() {
        ensure(cl.class_counts() == reference[i].as_slice(), || {
            format!("client {i}: {:?} vs reference {:?}", cl.class_counts(), reference[i])
        })?;
    }
    Ok(())
}

pub fn balance(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(1..8);
    let sizes: Vec<usize> = (0..c).map(|_| r.random_range(0..30)).collect();
    let present: Vec<usize> = (0..c).filter(|&k| sizes[k] > 0).collect();
    if present.is_empty() {
        return Ok(());
    }
    let labels: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(cls, &n)| std::iter::repeat_n(cls, n))
        .collect();
    let data = traceable(labels, c);
    let mut group: Vec<usize> = present.iter().copied().filter(|_| r.random_bool(0.6)).collect();
    if group.is_empty() {
        group.push(present[0]);
    }
    let out = balance_subset(&data, &group, r.random()).map_err(|e| e.to_string())?;
    let target = group.iter().map(|&k| sizes[k]).max().unwrap();
    for k in 0..c {
        let want = if group.contains(&k) { target } else { 0 };
        ensure(out.class_counts()[k] == want, || {
            format!("class {k}: {} vs {want}", out.class_counts()[k])
        })?;
    }
    let got = ids(&out);
    for (&i, &y) in got.iter().zip(out.labels()) {
        ensure(data.labels()[i] == y, || "resampled label mismatch".into())?;
    }
    for &k in &group {
        for i in data.indices_of(k) {
            ensure(got.contains(&i), || format!("original sample {i} dropped"))?;
        }
    }
    Ok(())
}

/// Largest remainder written out independently of the library.
fn apportion(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    let mut base: Vec<usize> = weights.iter().map(|&w| w * total / sum).collect();
    // exact integer remainders avoid float ties entirely
    let mut rem: Vec<(usize, usize)> = weights.iter().enumerate().map(|(i, &w)| (w * total % sum, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - base.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(short) {
        base[i] += 1;
    }
    base
}

pub fn client_testset(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(1..8);
    let per = r.random_range(5..40);
    let labels: Vec<usize> = (0..c).flat_map(|k| std::iter::repeat_n(k, per)).collect();
    let pool = traceable(labels, c);
    let mut counts: Vec<usize> = (0..c)
        .map(|_| if r.random_bool(0.3) { 0 } else { r.random_range(1..300) })
        .collect();
    if counts.iter().all(|&n| n == 0) {
        counts[0] = 1;
    }
    let size = r.random_range(1..=per);
    let t = build_client_testset(&pool, &counts, size, r.random()).map_err(|e| e.to_string())?;
    let want = apportion(&counts, size);
    ensure(t.class_counts() == want.as_slice(), || {
        format!("{:?} vs {want:?}", t.class_counts())
    })?;
    let mut got = ids(&t);
    got.sort_unstable();
    got.dedup();
    ensure(got.len() == t.len(), || "test sample drawn twice".into())
}

pub fn client_sampling(seed: u64) -> Check {
    let mut r = rng(seed);
    let total = r.random_range(1..30);
    let eligible: Vec<usize> = (0..total).filter(|_| r.random_bool(0.8)).collect();
    let cfg = FedConfig {
        rounds: 1,
        clients_total: total,
        clients_per_round: r.random_range(1..=total),
        local_epochs: 1,
        lr: 0.1,
        lr_milestone_round: 0,
        lr_after_milestone: 0.1,
        momentum: 0.0,
        weight_decay: 0.0,
        batch_size: 1,
        seed: r.random(),
    };
    let round = r.random_range(0..1000);
    let s = sample_clients(round, &cfg, &eligible);
    ensure(s.len() == cfg.clients_per_round.min(eligible.len()), || {
        "sample size".into()
    })?;
    ensure(s.windows(2).all(|w| w[0] < w[1]), || "not sorted or repeated".into())?;
    ensure(s.iter().all(|k| eligible.contains(k)), || "ineligible client".into())?;
    ensure(s == sample_clients(round, &cfg, &eligible), || {
        "not reproducible".into()
    })
}

pub fn fedavg_aggregation(seed: u64) -> Check {
    let mut r = rng(seed);
    let arch = random_arch(&mut r);
    let n = r.random_range(1..6);
    let models: Vec<ModelParams> = (0..n).map(|_| random_model_for(&mut r, &arch)).collect();
    let sizes: Vec<usize> = (0..n).map(|_| r.random_range(1..1000)).collect();
    let refs: Vec<&ModelParams> = models.iter().collect();
    let avg = aggregate(&refs, &sizes).map_err(|e| e.to_string())?;
    let total: usize = sizes.iter().sum();
    let vals: Vec<Vec<f64>> = models.iter().map(|m| m.values().copied().collect()).collect();
    for (i, &v) in avg.values().enumerate() {
        let want: f64 = vals.iter().zip(&sizes).map(|(m, &s)| m[i] * s as f64).sum::<f64>() / total as f64;
        ensure((v - want).abs() <= 1e-12 * (1.0 + want.abs()), || {
            format!("coord {i}: {v} vs {want}")
        })?;
        let lo = vals.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min);
        let hi = vals.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max);
        ensure(v >= lo - 1e-12 && v <= hi + 1e-12, || format!("coord {i} outside hull"))?;
    }
    // weights sum to one: averaging copies of one model returns it
    let same = vec![&models[0]; n];
    let fixed = aggregate(&same, &sizes).unwrap();
    ensure(
        fixed
            .values()
            .zip(models[0].values())
            .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs())),
        || "copies of one model did not average to it".into(),
    )?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let prefs: Vec<&ModelParams> = perm.iter().map(|&i| &models[i]).collect();
    let psizes: Vec<usize> = perm.iter().map(|&i| sizes[i]).collect();
    let pavg = aggregate(&prefs, &psizes).unwrap();
    let close = pavg
        .values()
        .zip(avg.values())
        .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    ensure(close, || "order dependent beyond rounding".into())
}

pub fn aggregated_logits(seed: u64) -> Check {
    let mut r = rng(seed);
    let state = random_state(&mut r);
    let dim = state.retrained_global.arch().input_dim;
    let rows = r.random_range(1..4);
    let x = random_matrix(&mut r, rows, dim);
    let (got, prov) = state.aggregate_batch(&x).map_err(|e| e.to_string())?;
    for b in 0..rows {
        let want = oracle_aggregate(&state, x.row(b));
        for (c, (&g, &w)) in got.row(b).iter().zip(&want).enumerate() {
            ensure((g - w).abs() <= 1e-12 * (1.0 + w.abs()), || {
                format!("row {b} class {c}: {g} vs {w}")
            })?;
        }
    }
    let owners = state.owners();
    ensure(
        prov.iter().zip(&owners).all(|(p, o)| match (p, o) {
            (Provenance::Expert(m), Some(n)) => m == n,
            (Provenance::GlobalOnly, None) => true,
            _ => false,
        }),
        || format!("provenance {prov:?} vs owners {owners:?}"),
    )
}

pub fn lambda_endpoints(seed: u64) -> Check {
    let mut r = rng(seed);
    let state = random_state(&mut r);
    let x = random_matrix(&mut r, 2, state.retrained_global.arch().input_dim);
    let z0 = state.retrained_global.forward(&x).unwrap();
    let factors = state.scale_factors().unwrap();
    let owners = state.owners();
    let (at0, _) = state.with_lambda(0.0).unwrap().aggregate_batch(&x).unwrap();
    ensure(at0.as_slice() == z0.as_slice(), || {
        "lambda 0 differs from retrained global".into()
    })?;
    let (at1, _) = state.with_lambda(1.0).unwrap().aggregate_batch(&x).unwrap();
    for b in 0..2 {
        for c in 0..owners.len() {
            let want = match owners[c] {
                Some(m) => factors[c] * state.experts[m].forward(&x).unwrap().get(b, c),
                None => z0.get(b, c),
            };
            ensure(at1.get(b, c) == want, || {
                format!("lambda 1, class {c}: {} vs {want}", at1.get(b, c))
            })?;
        }
    }
    Ok(())
}

pub fn scale_factors_positive(seed: u64) -> Check {
    let mut r = rng(seed);
    let state = random_state(&mut r);
    let f = state.scale_factors().map_err(|e| e.to_string())?;
    let owners = state.owners();
    for (c, v) in f.iter().enumerate() {
        ensure(v.is_finite() && *v > 0.0, || format!("factor {c} = {v}"))?;
        if state.scaling == ScalingScheme::NoScaling || owners[c].is_none() {
            ensure(*v == 1.0, || format!("factor {c} = {v}, expected 1"))?;
        }
    }
    Ok(())
}

pub fn mean_and_pooled(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(1..8);
    let groups = ClassGroups::from_counts(&(0..c).map(|_| r.random_range(0..100)).collect::<Vec<_>>());
    let n = r.random_range(1..6);
    let tallies: Vec<Tally> = (0..n)
        .map(|_| {
            let mut t = Tally::new(c);
            for k in 0..c {
                t.total[k] = r.random_range(1..50);
                t.correct[k] = r.random_range(0..=t.total[k]);
            }
            t
        })
        .collect();
    let records: Vec<_> = tallies
        .iter()
        .enumerate()
        .map(|(k, t)| t.record("m", 0, ClientTag::Id(k), &groups))
        .collect();
    let mean = mean_record("m", 0, &records, c);
    let want_mean = records.iter().map(|x| x.overall).sum::<f64>() / n as f64;
    ensure((mean.overall - want_mean).abs() <= 1e-12, || {
        format!("mean {} vs {want_mean}", mean.overall)
    })?;
    let mut pooled = Tally::new(c);
    tallies.iter().for_each(|t| pooled.add(t));
    let rec = pooled.record("m", 0, ClientTag::Pooled, &groups);
    let correct: usize = tallies.iter().flat_map(|t| t.correct.iter()).sum();
    let total: usize = tallies.iter().flat_map(|t| t.total.iter()).sum();
    let want = correct as f64 / total as f64;
    ensure((rec.overall - want).abs() <= 1e-12, || {
        format!("pooled {} vs {want}", rec.overall)
    })?;
    // overall is the sample-weighted mean of the per-class accuracies
    let weighted: f64 = (0..c).map(|k| rec.per_class[k] * pooled.total[k] as f64).sum::<f64>() / total as f64;
    ensure((rec.overall - weighted).abs() <= 1e-12, || {
        "overall is not the weighted class mean".into()
    })
}

pub fn class_groups_partition(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(1..20);
    let counts: Vec<usize> = (0..c).map(|_| r.random_range(0..20)).collect();
    let g = ClassGroups::from_counts(&counts);
    let mut all: Vec<usize> = g.head.iter().chain(&g.mid).chain(&g.tail).copied().collect();
    all.sort_unstable();
    ensure(all == (0..c).collect::<Vec<_>>(), || {
        "groups do not partition the classes".into()
    })?;
    let sizes = [g.head.len(), g.mid.len(), g.tail.len()];
    ensure(
        sizes[0] >= sizes[1] && sizes[1] >= sizes[2] && sizes[0] - sizes[2] <= 1,
        || format!("sizes {sizes:?}"),
    )?;
    let min_head = g.head.iter().map(|&k| counts[k]).min().unwrap_or(usize::MAX);
    let max_rest = g.mid.iter().chain(&g.tail).map(|&k| counts[k]).max().unwrap_or(0);
    ensure(g.head.is_empty() || min_head >= max_rest, || {
        "head is not the most frequent third".into()
    })
}

pub fn phase1_deterministic(seed: u64) -> Check {
    let mut r = rng(seed);
    let arch = ArchSpec {
        block_widths: vec![r.random_range(2..6)],
        ..random_arch(&mut r)
    };
    let k = r.random_range(1..5);
    let clients: Vec<LabeledDataset> = (0..k)
        .map(|_| {
            let per: Vec<usize> = (0..arch.num_classes).map(|_| r.random_range(0..6)).collect();
            blobs(&mut r, arch.num_classes, arch.input_dim, &per, 0.5)
        })
        .collect();
    if clients.iter().all(LabeledDataset::is_empty) {
        return Ok(());
    }
    let rounds = r.random_range(1..5);
    let cfg = FedConfig {
        rounds,
        clients_total: k,
        clients_per_round: r.random_range(1..=k),
        local_epochs: 1,
        lr: 0.1,
        lr_milestone_round: r.random_range(0..=rounds),
        lr_after_milestone: 0.01,
        momentum: 0.9,
        weight_decay: 5e-4,
        batch_size: 4,
        seed: r.random(),
    };
    let (a, la) = run_phase1(&cfg, &clients, &arch).map_err(|e| e.to_string())?;
    let (b, lb) = run_phase1(&cfg, &clients, &arch).unwrap();
    ensure(a.bits_eq(&b) && la == lb, || "phase 1 not reproducible".into())?;
    for l in &la {
        let want = if l.round < cfg.lr_milestone_round {
            cfg.lr
        } else {
            cfg.lr_after_milestone
        };
        ensure(l.lr == want, || format!("round {} used lr {}", l.round, l.lr))?;
    }
    Ok(())
}

/// Freeze contracts, determinism, ownership, argmax consistency and
/// affinity in λ for one randomly personalized client.
pub fn phase2_contracts(seed: u64) -> Check {
    let mut r = rng(seed);
    let arch = random_arch(&mut r);
    let global = random_model_for(&mut r, &arch);
    let per: Vec<usize> = (0..arch.num_classes)
        .map(|_| if r.random_bool(0.3) { 0 } else { r.random_range(1..12) })
        .collect();
    let data = blobs(&mut r, arch.num_classes, arch.input_dim, &per, 0.7);
    let m_total = r.random_range(1..=arch.num_classes + 1);
    let cfg = Phase2Config {
        num_experts: m_total,
        lambda: r.random_range(0.0..=1.0),
        scaling: [
            ScalingScheme::EclScaling,
            ScalingScheme::EclScalingMatrix,
            ScalingScheme::NoScaling,
        ][r.random_range(0..3)],
        classifier_epochs: r.random_range(0..3),
        expert_epochs: r.random_range(0..3),
        lr: 0.05,
        momentum: 0.9,
        weight_decay: 5e-4,
        batch_size: r.random_range(1..8),
        reinit_expert_classifier: false,
        seed: r.random(),
    };
    let k = r.random_range(0..10);
    let st = personalize_client(&global, k, &data, &cfg).map_err(|e| e.to_string())?;
    let again = personalize_client(&global, k, &data, &cfg).unwrap();
    ensure(st == again, || "phase 2 not reproducible".into())?;

    let last = Group::Block(arch.block_widths.len() - 1);
    for g in global.groups() {
        ensure(
            g == Group::Classifier || st.retrained_global.group_bits_eq(&global, g),
            || format!("retrained global touched {g:?}"),
        )?;
        for (m, e) in st.experts.iter().enumerate() {
            let may_change = g == Group::Classifier || (g == last && m + 1 < m_total);
            ensure(may_change || e.group_bits_eq(&global, g), || {
                format!("expert {m} touched {g:?}")
            })?;
        }
    }
    let owners = st.owners();
    for c in 0..arch.num_classes {
        let holders = st.assignment.groups.iter().filter(|g| g.contains(&c)).count();
        let want = usize::from(data.class_counts()[c] > 0);
        ensure(holders == want, || format!("class {c} owned {holders} times"))?;
    }

    let x: Vec<f64> = (0..arch.input_dim).map(|_| r.random_range(-2.0..2.0)).collect();
    let (label, agg) = st.predict(&x).map_err(|e| e.to_string())?;
    ensure(label == agg.argmax(), || "label is not the argmax".into())?;
    let z0 = st.with_lambda(0.0).unwrap().predict(&x).unwrap().1.logits;
    let z1 = st.with_lambda(1.0).unwrap().predict(&x).unwrap().1.logits;
    for c in 0..owners.len() {
        let affine = z0[c] + st.lambda * (z1[c] - z0[c]);
        let tol = 1e-12 * (1.0 + z0[c].abs() + z1[c].abs());
        ensure((agg.logits[c] - affine).abs() <= tol, || {
            format!("class {c} not affine in lambda")
        })?;
    }
    Ok(())
}

pub fn report_pure(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(1..6);
    let acc = |r: &mut ChaCha8Rng| {
        if r.random_bool(0.1) {
            f64::NAN
        } else {
            r.random_range(0..=40) as f64 / 40.0
        }
    };
    let records: Vec<MetricsRecord> = (0..r.random_range(1..8))
        .map(|i| MetricsRecord {
            method: ["ecl", "fedavg", "ecl[lambda=0.25]", "local/matched"][r.random_range(0..4)].to_string(),
            seed: r.random_range(0..5),
            client: [ClientTag::Id(i), ClientTag::Mean, ClientTag::Pooled][r.random_range(0..3)],
            overall: acc(&mut r),
            head: acc(&mut r),
            mid: acc(&mut r),
            tail: acc(&mut r),
            per_class: (0..c).map(|_| acc(&mut r)).collect(),
        })
        .collect();
    let text = metrics_csv(&records, c);
    ensure(
        text == metrics_csv(&records, c) && summary_json(&records) == summary_json(&records),
        || "unstable output".into(),
    )?;
    let (back, cols) = parse_metrics_csv(&text).map_err(|e| e.to_string())?;
    ensure(cols == c && back == records, || "metrics.csv does not read back".into())?;
    ensure(summary_json(&back) == summary_json(&records), || {
        "summary changed after re-reading".into()
    })
}
