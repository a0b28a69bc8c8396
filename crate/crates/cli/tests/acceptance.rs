//! Acceptance suite: one PASS/FAIL line per headline criterion. Exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::NaiveDate;
use ecannot_cli::service::{start, ServiceConfig};
use ecannot_cli::store::{Job, JobState, JobStore};
use ecannot_core::agents::{
    predict_agent3, train_agent3, train_one_vs_all_exhaustive, Agent3Params, Mode, RECOMMENDATION_LIMIT,
};
use ecannot_core::align::{
    align_query, band_width, build_kmer_index, smith_waterman_banded, transfer_labels, GAP_EXTEND, GAP_OPEN, MATCH,
    MISMATCH,
};
use ecannot_core::ann::{brute_force_knn, DistanceMetric, Hnsw, HnswParams};
use ecannot_core::annotate::annotate;
use ecannot_core::bundle::{train_bundle, TrainConfig};
use ecannot_core::dataset::{
    chronological_split, function_count_partition, holdout_latest, preprocess, read_flatfile, snapshot_diff, Snapshot,
    Task,
};
use ecannot_core::ec::{build_label_dictionary, parse_ec};
use ecannot_core::embedding::{one_hot_table, EmbeddingKind};
use ecannot_core::eval::{binary_metrics, evaluate_task, read_predictions, ConfusionCounts, Metric};
use ecannot_core::gbdt::{predict_gbdt, train_gbdt, train_gbdt_traced, GbdtParams, Node};
use ecannot_core::integrator::{
    greedy_tune, integrate, score_objective, IntegrationPolicy, Objective, Stage, TuneGrid,
};
use ecannot_core::linear::{logistic_objective, train_l2svm, train_l2svm_traced, SvmParams};
use ecannot_core::record::ALPHABET;
use ecannot_core::synthetic::{synthetic_records, SyntheticSpec};
use ecannot_core::{EmbeddingTable, ProteinRecord};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tower::ServiceExt;

fn close(m: Metric, want: f64) -> bool {
    m.value().is_some_and(|v| (v - want).abs() <= 1e-4)
}

fn metric_regression() -> Result<String> {
    let t0 = Instant::now();
    let rows = [
        (
            "ours",
            ConfusionCounts::new(3185, 159, 4295, 394, 0, 0),
            [0.9312, 0.9525, 0.9160, 0.8899, 0.9201],
        ),
        (
            "knn",
            ConfusionCounts::new(2962, 192, 3605, 342, 0, 0),
            [0.9248, 0.9391, 0.9134, 0.8965, 0.9173],
        ),
    ];
    for (name, c, want) in rows {
        let m = binary_metrics(&c);
        let got = [m.acc, m.ppv, m.npv, m.recall, m.f1];
        for (g, w) in got.iter().zip(want) {
            ensure!(close(*g, w), "{name}: got {g}, want {w:.4}");
        }
    }
    let dt = t0.elapsed();
    ensure!(dt < Duration::from_secs(1), "took {dt:?}");
    Ok(format!("both reference rows within 1e-4 in {dt:?}"))
}

fn gold_record(id: &str, enzyme: bool) -> ProteinRecord {
    let d = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    ProteinRecord {
        id: id.into(),
        name: String::new(),
        seq: "ACDEFG".into(),
        is_enzyme: enzyme,
        function_count: u8::from(enzyme),
        ecs: if enzyme {
            vec![parse_ec("1.1.1.1").unwrap()]
        } else {
            Vec::new()
        },
        date_integrated: d,
        date_sequence_update: d,
    }
}

fn abstention_accounting() -> Result<String> {
    // Hand count: TP e1 e2 e6; FN e3; UP e4 e5; TN n1 n4; FP n2; UN n3.
    let external = "e1\t1\t1.1.1.1\ne2\t1\t\ne3\t0\t\ne4\t\t\ne5\t\t\ne6\t1\t\nn1\t0\t\nn2\t1\t\nn3\t\t\nn4\t0\t\n";
    let gold: Vec<ProteinRecord> = ["e1", "e2", "e3", "e4", "e5", "e6"]
        .iter()
        .map(|id| gold_record(id, true))
        .chain(["n1", "n2", "n3", "n4"].iter().map(|id| gold_record(id, false)))
        .collect();
    let preds = read_predictions(external)?;
    let report = evaluate_task(&preds, &gold, Task::EnzymeOrNot, None)?;
    let (c, m) = report.binary.context("no binary report")?;
    ensure!(c == ConfusionCounts::new(3, 1, 2, 1, 2, 1), "counts {c:?}");
    ensure!(report.abstained == 3, "abstained {}", report.abstained);
    let recall = 3.0 / (3.0 + 1.0 + 2.0);
    ensure!(
        m.recall.value() == Some(recall),
        "recall {} != TP/(TP+FN+UP) = {recall}",
        m.recall
    );
    ensure!(m.acc.value() == Some(5.0 / 10.0), "accuracy {}", m.acc);
    ensure!(m.ppv.value() == Some(3.0 / 4.0), "precision {}", m.ppv);
    Ok(format!("recall {recall:.4} = TP/(TP+FN+UP) with 3 planted blanks"))
}

fn hnsw_quality() -> Result<String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (n, dim) = (2000, 64);
    let params = HnswParams {
        m: 16,
        ef_construction: 200,
        metric: DistanceMetric::Euclidean,
    };
    let mut index = Hnsw::<f32>::new(dim, params, 7)?;
    let mut table = EmbeddingTable::new(EmbeddingKind::Custom("random".into()), dim)?;
    for i in 0..n {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        index.insert(format!("p{i}"), &v)?;
        table.insert(format!("p{i}"), &v)?;
        index
            .check_invariants()
            .with_context(|| format!("after insertion {i}"))?;
    }
    let queries = 200;
    let mut found = 0;
    for _ in 0..queries {
        let q: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let truth: HashSet<usize> = brute_force_knn(&table, &q, 10, params.metric)
            .iter()
            .map(|nb| nb.index)
            .collect();
        found += index
            .search(&q, 10, 300)?
            .iter()
            .filter(|nb| truth.contains(&nb.index))
            .count();
    }
    let recall = found as f64 / (queries * 10) as f64;
    let dt = t0.elapsed();
    ensure!(recall >= 0.95, "recall@10 {recall:.4}");
    ensure!(dt < Duration::from_secs(30), "took {dt:?}");
    Ok(format!(
        "recall@10 {recall:.4}, invariants held after all {n} insertions, {dt:.1?}"
    ))
}

fn l2svm_correctness() -> Result<String> {
    // Symmetric pair at ±1: b = 0 and w minimizes ½w² + 2C(1 − w)², so w = 4C/(1 + 4C).
    let c = 1.0;
    let params = SvmParams {
        c,
        max_iter: 10_000,
        tol: 1e-10,
        seed: 0,
    };
    let (m, trace) = train_l2svm_traced::<f64>(&[&[1.0]], &[&[-1.0]], &params)?;
    let w0 = m.dense_weights()[0];
    ensure!(
        (w0 - 4.0 * c / (1.0 + 4.0 * c)).abs() < 1e-6 && m.bias().abs() < 1e-6,
        "w {w0} b {}",
        m.bias()
    );
    ensure!(
        trace.windows(2).all(|p| p[1] <= p[0] + 1e-12),
        "dual objective not monotone"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.4).unwrap();
    let pos: Vec<Vec<f64>> = (0..80)
        .map(|_| (0..16).map(|_| 1.0 + noise.sample(&mut rng)).collect())
        .collect();
    let neg: Vec<Vec<f64>> = (0..80)
        .map(|_| (0..16).map(|_| -1.0 + noise.sample(&mut rng)).collect())
        .collect();
    let p: Vec<&[f64]> = pos.iter().map(|r| r.as_slice()).collect();
    let n: Vec<&[f64]> = neg.iter().map(|r| r.as_slice()).collect();
    let (blob, trace) = train_l2svm_traced(&p, &n, &SvmParams::default())?;
    ensure!(
        trace.windows(2).all(|p| p[1] <= p[0] + 1e-9),
        "dual objective not monotone on blobs"
    );
    let correct = p.iter().filter(|x| blob.decision(x).unwrap() > 0.0).count()
        + n.iter().filter(|x| blob.decision(x).unwrap() < 0.0).count();
    ensure!(correct == 160, "blob accuracy {correct}/160");
    let _ = train_l2svm(&p, &n, &SvmParams::default())?;

    let x: Vec<&[f64]> = p.iter().chain(&n).copied().collect();
    let y: Vec<bool> = (0..160).map(|i| i < 80).collect();
    let w: Vec<f64> = (0..16).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let (_, g) = logistic_objective(&x, &y, 0.1, &w, 0.2);
    let mut worst: f64 = 0.0;
    for k in 0..=16 {
        let f = |d: f64| {
            let mut w2 = w.clone();
            let mut b = 0.2;
            if k < 16 {
                w2[k] += d;
            } else {
                b += d;
            }
            logistic_objective(&x, &y, 0.1, &w2, b).0
        };
        let num = (f(1e-6) - f(-1e-6)) / 2e-6;
        worst = worst.max((num - g[k]).abs() / g[k].abs().max(1e-3));
    }
    ensure!(worst < 1e-5, "finite-difference relative error {worst:e}");
    Ok(format!(
        "analytic w = {w0:.6}, blobs 160/160, gradient rel. error {worst:.1e}"
    ))
}

fn blobs(rng: &mut ChaCha8Rng, centers: &[[f64; 2]], n: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..n {
            x.push(vec![
                c[0] + rng.gen_range(-spread..spread),
                c[1] + rng.gen_range(-spread..spread),
            ]);
            y.push(k);
        }
    }
    (x, y)
}

fn walk(nodes: &[Node<f64>], x: &[f64]) -> f64 {
    let mut i = 0;
    loop {
        match &nodes[i] {
            Node::Leaf { value, .. } => return *value,
            Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                i = if x[*feature as usize] <= *threshold {
                    *left
                } else {
                    *right
                } as usize
            }
        }
    }
}

fn gbdt_correctness() -> Result<String> {
    let centers = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
    let full = GbdtParams {
        subsample: 1.0,
        ..GbdtParams::default()
    };
    // 0/1 error is not a convex surrogate, so boosting can bump it up a
    // notch on overlapping classes. The property is asserted on one fixed,
    // non-trivial fixture and measured over a family of harder ones.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (xs, y) = blobs(&mut rng, &centers, 50, 1.6);
    let x: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
    let (_, errors) = train_gbdt_traced(&x, &y, &full, 5)?;
    ensure!(errors[0] > 0.0, "fixture is separable after one round");
    ensure!(
        errors.windows(2).all(|p| p[1] <= p[0]),
        "training error rose: {errors:?}"
    );
    let mut monotone = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hx, hy) = blobs(&mut rng, &centers, 50, 2.0);
        let h: Vec<&[f64]> = hx.iter().map(|r| r.as_slice()).collect();
        let (_, e) = train_gbdt_traced(&h, &hy, &full, 5)?;
        monotone += usize::from(e.windows(2).all(|p| p[1] <= p[0]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (sx, sy) = blobs(&mut rng, &[[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]], 50, 1.0);
    let s: Vec<&[f64]> = sx.iter().map(|r| r.as_slice()).collect();
    let model = train_gbdt(&s, &sy, &GbdtParams::default(), 1)?;
    ensure!(
        model.params().max_depth == 6 && model.rounds() == 120,
        "not the reference configuration"
    );
    let wrong = s
        .iter()
        .zip(&sy)
        .filter(|(r, &c)| predict_gbdt(&model, r).unwrap().0 != c)
        .count();
    ensure!(wrong == 0, "{wrong} training errors on the separable toy");

    let k = model.classes();
    for _ in 0..1000 {
        let q = [rng.gen_range(-2.0..8.0), rng.gen_range(-2.0..8.0)];
        let mut margin = vec![0.0; k];
        for (t, tree) in model.trees().iter().enumerate() {
            margin[t % k] += walk(tree.nodes(), &q);
        }
        let mut best = 0;
        for c in 1..k {
            if margin[c] > margin[best] {
                best = c;
            }
        }
        ensure!(predict_gbdt(&model, &q)?.0 == best, "tree-walk disagreement at {q:?}");
    }
    Ok(format!(
        "error {:.4} → {:.4} non-increasing on the fixed fixture (holds on {monotone}/20 heavier-overlap fixtures), toy error 0, 1k tree-walk matches",
        errors[0],
        errors[errors.len() - 1]
    ))
}

fn slice_pipeline() -> Result<String> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let (labels, per_label, dim) = (500, 10, 32);
    let noise = Normal::new(0.0, 0.35).unwrap();
    let centers: Vec<Vec<f32>> = (0..labels)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let d = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
    let ec_of = |l: usize| parse_ec(&format!("{}.{}.{}.{}", l % 7 + 1, l / 7 % 20 + 1, l / 140 + 1, l + 1)).unwrap();
    let mut table = EmbeddingTable::new(EmbeddingKind::Custom("clusters".into()), dim)?;
    let mut records = Vec::new();
    for (l, c) in centers.iter().enumerate() {
        for i in 0..per_label {
            let id = format!("L{l}P{i}");
            let v: Vec<f32> = c.iter().map(|x| x + noise.sample(&mut rng) as f32).collect();
            table.insert(id.clone(), &v)?;
            records.push(ProteinRecord {
                id,
                name: String::new(),
                seq: "ACDEFGHIK".into(),
                is_enzyme: true,
                function_count: 1,
                ecs: vec![ec_of(l)],
                date_integrated: d,
                date_sequence_update: d,
            });
        }
    }
    let dict = build_label_dictionary(&records);
    let params = Agent3Params::default();
    let sampled = train_agent3(&records, &table, &dict, &params, 1)?;
    let oracle = train_one_vs_all_exhaustive(&records, &table, &dict, &params, 1)?;
    let used: u64 = sampled.negative_counts().iter().map(|&n| u64::from(n)).sum();
    let full: u64 = oracle.negative_counts().iter().map(|&n| u64::from(n)).sum();
    let share = used as f64 / full as f64;
    ensure!(
        share <= 0.2,
        "sampled negatives are {:.1}% of the exhaustive count",
        100.0 * share
    );

    let queries = 1000;
    let (mut hit_s, mut hit_o) = (0, 0);
    for q in 0..queries {
        let l = q % labels;
        let v: Vec<f32> = centers[l].iter().map(|x| x + noise.sample(&mut rng) as f32).collect();
        let want = ec_of(l);
        let top = predict_agent3(&sampled, &v, Mode::Prediction, 1)?;
        hit_s += usize::from(top.first().is_some_and(|t| t.0 == want));
        hit_o += usize::from(
            predict_agent3(&oracle, &v, Mode::Prediction, 1)?
                .first()
                .is_some_and(|t| t.0 == want),
        );
        let ranked = predict_agent3(&sampled, &v, Mode::Recommendation, 1)?;
        ensure!(ranked.len() <= RECOMMENDATION_LIMIT, "{} recommendations", ranked.len());
        ensure!(
            ranked
                .windows(2)
                .all(|p| p[0].1 > p[1].1 || (p[0].1 == p[1].1 && p[0].0 < p[1].0)),
            "ranked output not sorted"
        );
    }
    let (acc_s, acc_o) = (hit_s as f64 / queries as f64, hit_o as f64 / queries as f64);
    ensure!(acc_s >= acc_o - 0.02, "top-1 {acc_s:.4} vs exhaustive {acc_o:.4}");
    let dt = t0.elapsed();
    ensure!(dt < Duration::from_secs(300), "took {dt:?}");
    Ok(format!(
        "negatives {:.1}% of exhaustive, top-1 {acc_s:.4} vs {acc_o:.4}, {dt:.1?}",
        100.0 * share
    ))
}

fn one_hot(records: &[ProteinRecord]) -> Result<EmbeddingTable> {
    Ok(one_hot_table(
        records.iter().map(|r| (r.id.as_str(), r.seq.as_str())),
        150,
    )?)
}

fn integration_guarantee() -> Result<String> {
    let mut notes = Vec::new();
    for (seed, mutation) in [(7u64, 0.15), (8, 0.3), (9, 0.45)] {
        let spec = SyntheticSpec {
            enzyme_families: 16,
            non_enzyme_families: 10,
            members_per_family: 8,
            mutation_rate: mutation,
            seed,
            ..SyntheticSpec::default()
        };
        let records = synthetic_records(&spec);
        let table = one_hot(&records)?;
        let (rest, val) = holdout_latest(&records, 0.25);
        let (bundle, _) = train_bundle(&rest, &table, &TrainConfig::default())?;
        let evidence = val
            .iter()
            .map(|r| bundle.evidence(&r.id, &r.seq, table.require(&r.id)?))
            .collect::<ecannot_core::Result<Vec<_>>>()?;
        for objective in [Objective::EcMicroF1, Objective::EnzymeF1] {
            let res = greedy_tune(&evidence, &val, &TuneGrid::default(), objective, Mode::Prediction)?;
            let single = |stage: Stage| -> Result<f64> {
                let policy = IntegrationPolicy {
                    precedence: vec![stage],
                    ..IntegrationPolicy::default()
                };
                let preds: Vec<_> = evidence
                    .iter()
                    .map(|e| integrate(e, &policy, Mode::Prediction))
                    .collect();
                Ok(score_objective(&preds, &val, objective)?)
            };
            let (a, g) = (single(Stage::Alignment)?, single(Stage::Agents)?);
            let best_single = res
                .scoreboard
                .iter()
                .filter(|(p, _)| p.precedence.len() == 1)
                .map(|x| x.1)
                .fold(a.max(g), f64::max);
            ensure!(
                res.objective >= best_single,
                "seed {seed} {objective:?}: tuned {:.4} < single-stage {best_single:.4}",
                res.objective
            );
            notes.push(format!("{:.3}≥{:.3}", res.objective, best_single));
        }

        // self-test: the training set replayed through its own bundle
        let (full, _) = train_bundle(&records, &table, &TrainConfig::default())?;
        let entries: Vec<(String, String)> = records.iter().map(|r| (r.id.clone(), r.seq.clone())).collect();
        let out = annotate(&full, &entries, Mode::Prediction, None)?;
        let preds = read_predictions(&out.tsv)?;
        for task in [Task::EnzymeOrNot, Task::EcNumber] {
            let gold: Vec<ProteinRecord> = records
                .iter()
                .filter(|r| !task.enzymes_only() || r.is_enzyme)
                .cloned()
                .collect();
            let ids: HashSet<&str> = gold.iter().map(|g| g.id.as_str()).collect();
            let p: Vec<_> = preds.iter().filter(|p| ids.contains(p.id.as_str())).cloned().collect();
            let report = evaluate_task(&p, &gold, task, None)?;
            ensure!(
                report.accuracy == 1.0,
                "seed {seed} self-test {task} accuracy {}",
                report.accuracy
            );
        }
    }
    Ok(format!(
        "tuned ≥ best single stage on 3 fixtures × 2 objectives ({}); self-test accuracy 1.0",
        notes.join(", ")
    ))
}

const PIPELINE_TRAIN: &str = "\
id\tname\tec\tis_enzyme\tfunction_count\tseq\tdate_integrated\tdate_seq_update
A1\talpha\t1.1.1.1\t1\t1\tMKTAYIAKQRQISFVKSHFSRQ\t2016-01-01\t2016-01-01
A2\talpha copy\t1.1.1.1\t1\t1\tMKTAYIAKQRQISFVKSHFSRQ\t2016-06-01\t2016-06-01
A3\tunstable\t\t0\t0\tMSSHEGGKKKALKQPKKQAKEM\t2017-01-01\t2017-01-01
A3\tunstable\t\t0\t0\tMSSHEGGKKKALKQPKKQAKEW\t2017-01-01\t2017-03-01
A4\tbeta\t2.2.2.2;3.3.3.3\t1\t2\tMADEEKLPPGWEKRMSRSSGRV\t2016-02-01\t2016-02-01
A5\tgamma\t\t0\t0\tMGLSDGEWQLVLNVWGKVEADI\t2016-03-01\t2016-03-01
A6\tdelta\t1.1.1.1;1.1.1.1\t1\t2\tMVLSPADKTNVKAAWGKVGAHA\t2017-05-01\t2017-05-01
";

const PIPELINE_TEST: &str = "\
id\tname\tec\tis_enzyme\tfunction_count\tseq\tdate_integrated\tdate_seq_update
A1\talpha\t1.1.1.1\t1\t1\tMKTAYIAKQRQISFVKSHFSRQ\t2016-01-01\t2016-01-01
A4\tbeta\t2.2.2.2;3.3.3.3\t1\t2\tMADEEKLPPGWEKRMSRSSGRV\t2016-02-01\t2016-02-01
A6\tdelta\t1.1.1.1\t1\t1\tMVLSPADKTNVKAAWGKVGAHA\t2017-05-01\t2017-05-01
B1\tnew enzyme\t4.1.2.13\t1\t1\tMPHSLFSKLLLAAGCTAVSAQA\t2019-01-01\t2019-01-01
B2\tnew protein\t\t0\t0\tMQIFVKTLTGKTITLEVEPSDT\t2018-05-01\t2018-05-01
B3\treturning sequence\t\t0\t0\tMGLSDGEWQLVLNVWGKVEADI\t2019-02-01\t2019-02-01
B4\tlate arrival\t\t0\t0\tMKVLAAGIVGLLLAWSQPAHAE\t2017-01-01\t2017-01-01
";

fn dataset_pipeline() -> Result<String> {
    let cutoff = NaiveDate::from_ymd_opt(2018, 2, 28).unwrap();
    let train_flat = read_flatfile(PIPELINE_TRAIN.as_bytes(), "train")?;
    let test_flat = read_flatfile(PIPELINE_TEST.as_bytes(), "test")?;
    ensure!(
        train_flat.rejects.is_empty() && test_flat.rejects.is_empty(),
        "unexpected rejects"
    );
    let (train, report, dict) = preprocess(train_flat.records);
    ensure!(report.raw == 7, "raw {}", report.raw);
    ensure!(
        report.changed_seq == 1 && report.changed_seq_records == 2,
        "changed-sequence {report:?}"
    );
    ensure!(report.dedup == 1, "dedup {}", report.dedup);
    ensure!(
        report.count_fixed == 1 && report.ec_canonicalized == 1,
        "canonicalization {report:?}"
    );
    ensure!(
        report.clean == 4 && dict.len() == 3,
        "clean {} labels {}",
        report.clean,
        dict.len()
    );
    let (test, test_report, _) = preprocess(test_flat.records);
    ensure!(
        test_report.clean == 7 && test_report.removed() == 0,
        "test preprocessing {test_report:?}"
    );

    let older = Snapshot {
        label: "train".into(),
        date: cutoff,
        records: train,
    };
    let newer = Snapshot {
        label: "test".into(),
        date: NaiveDate::from_ymd_opt(2019, 6, 30).unwrap(),
        records: test,
    };
    // (train, test, shared, stale) per task, counted by hand
    let expected = [
        (Task::EnzymeOrNot, (4, 2, 4, 1)),
        (Task::FunctionCount, (3, 1, 3, 0)),
        (Task::EcNumber, (3, 1, 3, 0)),
    ];
    for (task, want) in expected {
        let split = chronological_split(&older, &newer, task)?;
        split.assert_no_leakage()?;
        let got = (
            split.train.len(),
            split.test.len(),
            split.excluded_shared,
            split.excluded_stale,
        );
        ensure!(got == want, "{task}: got {got:?}, want {want:?}");
        let enzymes = split.train.iter().filter(|r| r.is_enzyme).count();
        ensure!(
            function_count_partition(&split.train).values().sum::<usize>() == enzymes,
            "{task}: count partition does not sum to the enzyme total"
        );
    }
    let ds2 = chronological_split(&older, &newer, Task::FunctionCount)?;
    let partition: Vec<(u8, usize)> = function_count_partition(&ds2.train).into_iter().collect();
    ensure!(partition == [(1, 2), (2, 1)], "count partition {partition:?}");
    let diff = snapshot_diff(&older, &newer);
    let r = diff.records;
    ensure!((r.before, r.after, r.added, r.deleted) == (4, 7, 3, 0), "diff {r:?}");
    Ok("dedup 1, changed-sequence 1 id / 2 records, shared 4, stale 1, no leakage on any split".into())
}

fn full_dp_score(a: &[u8], b: &[u8]) -> i32 {
    const NEG: i32 = i32::MIN / 4;
    let m = b.len();
    let mut h_prev = vec![0i32; m + 1];
    let mut f_prev = vec![NEG; m + 1];
    let mut best = 0;
    for &ca in a {
        let mut h = vec![0i32; m + 1];
        let mut f = vec![NEG; m + 1];
        let mut e = NEG;
        for j in 1..=m {
            e = (e - GAP_EXTEND).max(h[j - 1] - GAP_OPEN - GAP_EXTEND);
            f[j] = (f_prev[j] - GAP_EXTEND).max(h_prev[j] - GAP_OPEN - GAP_EXTEND);
            let s = if ca == b[j - 1] { MATCH } else { MISMATCH };
            h[j] = 0.max(h_prev[j - 1] + s).max(e).max(f[j]);
            best = best.max(h[j]);
        }
        h_prev = h;
        f_prev = f;
    }
    best
}

fn alignment() -> Result<String> {
    let records = synthetic_records(&SyntheticSpec {
        enzyme_families: 6,
        non_enzyme_families: 4,
        members_per_family: 4,
        ..SyntheticSpec::default()
    });
    let index = build_kmer_index(&records, 5)?;
    for r in &records {
        let hit = align_query(&index, &r.seq, 0.4, 1).context("no hit for an indexed sequence")?;
        ensure!(hit.identity == 1.0, "{}: identity {}", r.id, hit.identity);
        let (enzyme, count, ecs) = transfer_labels(&hit);
        ensure!(
            enzyme == r.is_enzyme && count == r.function_count && ecs == r.ecs,
            "{}: labels not transferred",
            r.id
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for pair in 0..100 {
        let len = rng.gen_range(30..=295);
        let a: Vec<u8> = (0..len).map(|_| ALPHABET[rng.gen_range(0..20)]).collect();
        let mut b: Vec<u8> = a
            .iter()
            .map(|&c| {
                if rng.gen_bool(0.25) {
                    ALPHABET[rng.gen_range(0..20)]
                } else {
                    c
                }
            })
            .collect();
        if rng.gen_bool(0.5) {
            let at = rng.gen_range(0..b.len() - 2);
            b.drain(at..at + 2);
        }
        let got = smith_waterman_banded(&a, &b, band_width(a.len(), b.len())).score;
        let want = full_dp_score(&a, &b);
        ensure!(got == want, "pair {pair}: banded {got} vs full {want}");
    }
    Ok(format!(
        "{} self-queries at identity 1.0 with labels; 100 banded = full",
        records.len()
    ))
}

fn cli(args: &[&str]) -> Result<Vec<u8>> {
    let out = Command::new(env!("CARGO_BIN_EXE_ecannot")).args(args).output()?;
    ensure!(
        out.status.success(),
        "ecannot {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(out.stdout)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Runs the tiny-fixture pipeline in `root`; returns the bytes of every
/// artifact that must be reproducible.
fn run_pipeline(root: &Path) -> Result<Vec<Vec<u8>>> {
    let (raw, data, emb, bundle, pred) = (
        root.join("raw"),
        root.join("data"),
        root.join("emb.bin"),
        root.join("bundle"),
        root.join("pred.tsv"),
    );
    cli(&["synth", "--out", p(&raw)])?;
    cli(&[
        "prepare",
        "--train",
        p(&raw.join("train.tsv")),
        "--test",
        p(&raw.join("test.tsv")),
        "--out",
        p(&data),
    ])?;
    cli(&[
        "embed",
        "--one-hot",
        "--max-len",
        "150",
        "--input",
        p(&data.join("ds1_train.tsv")),
        "--out",
        p(&emb),
    ])?;
    cli(&[
        "train",
        "--data",
        p(&data),
        "--embeddings",
        p(&emb),
        "--out",
        p(&bundle),
    ])?;
    cli(&[
        "predict",
        "--bundle",
        p(&bundle),
        "--fasta",
        p(&raw.join("query.fasta")),
        "--out",
        p(&pred),
    ])?;
    cli(&[
        "evaluate",
        "--predictions",
        p(&pred),
        "--gold",
        p(&data.join("ds3_test.tsv")),
        "--task",
        "ec",
        "--dict",
        p(&data.join("label_dict.tsv")),
        "--out",
        p(&root.join("eval.tsv")),
    ])?;
    let files = [
        raw.join("run.json"),
        data.join("run.json"),
        root.join("emb.bin.run.json"),
        bundle.join("manifest.json"),
        bundle.join("run.json"),
        root.join("pred.tsv.run.json"),
        pred,
        root.join("eval.tsv"),
    ];
    files
        .iter()
        .map(|f| fs::read(f).with_context(|| format!("reading {}", f.display())))
        .collect()
}

async fn call(app: &Router, req: Request<Body>) -> Result<(StatusCode, Vec<u8>)> {
    let resp = app.clone().oneshot(req).await?;
    let status = resp.status();
    Ok((status, resp.into_body().collect().await?.to_bytes().to_vec()))
}

async fn submit_and_wait(app: Router, fasta: String) -> Result<(Job, Vec<u8>)> {
    let (s, body) = call(&app, Request::post("/jobs").body(Body::from(fasta))?).await?;
    ensure!(s == StatusCode::ACCEPTED, "submit returned {s}");
    let job: Job = serde_json::from_slice(&body)?;
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let (s, body) = call(&app, Request::get(format!("/jobs/{}", job.job_id)).body(Body::empty())?).await?;
        ensure!(s == StatusCode::OK, "status returned {s}");
        let now: Job = serde_json::from_slice(&body)?;
        if now.state.is_terminal() {
            let (s, bytes) = call(
                &app,
                Request::get(format!("/jobs/{}/result", job.job_id)).body(Body::empty())?,
            )
            .await?;
            ensure!(s == StatusCode::OK, "result returned {s} for a {} job", now.state);
            return Ok((now, bytes));
        }
        let (s, _) = call(
            &app,
            Request::get(format!("/jobs/{}/result", job.job_id)).body(Body::empty())?,
        )
        .await?;
        ensure!(
            s == StatusCode::NOT_FOUND || now.state != JobState::Done,
            "result served before Done"
        );
        ensure!(Instant::now() < deadline, "job stuck");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

fn end_to_end() -> Result<String> {
    let a = tempfile::tempdir()?;
    let b = tempfile::tempdir()?;
    let t0 = Instant::now();
    let first = run_pipeline(a.path())?;
    let dt = t0.elapsed();
    ensure!(dt < Duration::from_secs(60), "pipeline took {dt:?}");
    ensure!(first == run_pipeline(b.path())?, "rerun produced different artifacts");

    let bundle = Arc::new(ecannot_core::bundle::Bundle::load(&a.path().join("bundle"))?);
    let query = fs::read_to_string(a.path().join("raw/query.fasta"))?;
    let cli_bytes = fs::read(a.path().join("pred.tsv"))?;
    let entries: Vec<&str> = query.split_inclusive('\n').collect();
    let store_dir = tempfile::tempdir()?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(8)
        .enable_all()
        .build()?;

    let (ids, served_full) = rt.block_on(async {
        let app = start(
            Arc::clone(&bundle),
            JobStore::open(store_dir.path())?,
            ServiceConfig { workers: 4, ttl: None },
        );
        let mut handles = Vec::new();
        for i in 0..16 {
            let chunk: String = entries.iter().skip(i * 8).take(16).copied().collect();
            handles.push(tokio::spawn(submit_and_wait(app.clone(), chunk)));
        }
        let full = tokio::spawn(submit_and_wait(app.clone(), query.clone()));
        let mut ids = Vec::new();
        for h in handles {
            let (job, _) = h.await??;
            ensure!(job.state == JobState::Done, "job {} ended {}", job.job_id, job.state);
            ensure!(
                job.history == [JobState::Pending, JobState::Running, JobState::Done],
                "illegal history {:?}",
                job.history
            );
            ids.push(job.job_id);
        }
        let (_, bytes) = full.await??;
        anyhow::Ok((ids, bytes))
    })?;
    ensure!(served_full == cli_bytes, "service result differs from CLI output");
    drop(rt);

    // "crash" while one job is mid-run, then restart on the same store
    let interrupted = {
        let store = JobStore::open(store_dir.path())?;
        let job = store.create(query.as_bytes(), Mode::Prediction)?;
        store.start(&job.job_id)?;
        job.job_id
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let app = start(
            Arc::clone(&bundle),
            JobStore::open(store_dir.path())?,
            ServiceConfig { workers: 2, ttl: None },
        );
        for id in &ids {
            let (s, _) = call(&app, Request::get(format!("/jobs/{id}/result")).body(Body::empty())?).await?;
            ensure!(s == StatusCode::OK, "job {id} lost across restart");
        }
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            let (_, body) = call(
                &app,
                Request::get(format!("/jobs/{interrupted}/result")).body(Body::empty())?,
            )
            .await?;
            if body == cli_bytes {
                break;
            }
            ensure!(Instant::now() < deadline, "interrupted job never finished");
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        anyhow::Ok(())
    })?;
    Ok(format!(
        "pipeline {dt:.1?}, rerun identical, 16 concurrent jobs done, service = CLI bytes, restart kept {} jobs",
        ids.len() + 1
    ))
}

type Check = fn() -> Result<String>;

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("metric regression", metric_regression),
        ("abstention accounting", abstention_accounting),
        ("HNSW quality", hnsw_quality),
        ("L2SVM correctness", l2svm_correctness),
        ("GBDT correctness", gbdt_correctness),
        ("negative-sampled EC classifier", slice_pipeline),
        ("integration guarantee", integration_guarantee),
        ("dataset pipeline", dataset_pipeline),
        ("alignment", alignment),
        ("end-to-end", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e:#}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
