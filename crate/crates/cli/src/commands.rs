//! Subcommand implementations. Each returns the process exit status.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use ecannot_core::annotate::annotate_fasta;
use ecannot_core::bundle::{train_bundle, Bundle, TrainConfig};
use ecannot_core::dataset::{
    chronological_split, function_count_partition, parse_fasta, parse_flatfile, preprocess, snapshot_diff,
    write_flatfile, write_rejects, Snapshot, Task,
};
use ecannot_core::embedding::{load_embedding_table, one_hot_table};
use ecannot_core::eval::{binary_metrics, evaluate_task, read_predictions, ConfusionCounts};
use ecannot_core::integrator::{IntegrationPolicy, TuneResult};
use ecannot_core::record::normalize_sequence;
use ecannot_core::synthetic::{synthetic_records, SyntheticSpec};
use ecannot_core::{EmbeddingTable, LabelDictionary, ProteinRecord, Scalar};
use serde_json::json;

use crate::args::*;
use crate::runinfo::RunManifest;
use crate::service::{serve, ServiceConfig};
use crate::store::JobStore;

/// Some prediction rows carry an error instead of a prediction.
pub const EXIT_FAILED_ROWS: u8 = 2;
/// The evaluation fell below `--min-f1`.
pub const EXIT_BELOW_THRESHOLD: u8 = 3;

pub fn run(command: Command) -> Result<u8> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Prepare(a) => prepare(&a),
        Command::Embed(a) => embed(&a),
        Command::Train(a) => train(&a),
        Command::Predict(a) => predict(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Tune(a) => tune(&a),
        Command::Serve(a) => serve_command(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synth(a: &SynthArgs) -> Result<u8> {
    create_dir(&a.out)?;
    let spec = SyntheticSpec {
        enzyme_families: a.enzyme_families,
        non_enzyme_families: a.non_enzyme_families,
        members_per_family: a.members,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let records = synthetic_records(&spec);
    let older: Vec<ProteinRecord> = records
        .iter()
        .filter(|r| r.date_integrated <= a.cutoff)
        .cloned()
        .collect();
    let newer: Vec<&ProteinRecord> = records.iter().filter(|r| r.date_integrated > a.cutoff).collect();
    let mut fasta = String::new();
    for r in &newer {
        fasta.push_str(&format!(">{}\n{}\n", r.id, r.seq));
    }
    let mut run = RunManifest::new("synth", json!({ "spec": spec, "cutoff": a.cutoff }));
    run.output(&a.out, "train.tsv", write_flatfile(&older).as_bytes())?;
    run.output(&a.out, "test.tsv", write_flatfile(&records).as_bytes())?;
    run.output(&a.out, "query.fasta", fasta.as_bytes())?;
    run.write(&a.out)?;
    println!(
        "{} records: {} in the older snapshot, {} added after {}",
        records.len(),
        older.len(),
        newer.len(),
        a.cutoff
    );
    Ok(0)
}

pub fn prepare(a: &PrepareArgs) -> Result<u8> {
    create_dir(&a.out)?;
    let mut run = RunManifest::new("prepare", json!({ "cutoff": a.cutoff, "test_date": a.test_date }));
    run.input(&a.train)?;
    run.input(&a.test)?;

    let mut snapshots = Vec::new();
    let mut dict = LabelDictionary::default();
    for (label, path) in [("train", &a.train), ("test", &a.test)] {
        let flat = parse_flatfile(path)?;
        if flat.remapped_rows > 0 {
            log::warn!("{label}: {} rows had residues remapped to X", flat.remapped_rows);
        }
        run.output(
            &a.out,
            &format!("{label}_rejects.tsv"),
            write_rejects(&flat.rejects).as_bytes(),
        )?;
        let (clean, report, d) = preprocess(flat.records);
        run.output(&a.out, &format!("{label}_preprocess.tsv"), report.to_tsv().as_bytes())?;
        if label == "train" {
            dict = d;
        }
        let date = match (label, a.test_date) {
            ("train", _) => a.cutoff,
            (_, Some(d)) => d,
            _ => clean
                .iter()
                .map(|r| r.last_touched())
                .max()
                .ok_or_else(|| anyhow!("{}: no usable records", path.display()))?,
        };
        snapshots.push(Snapshot {
            label: label.to_string(),
            date,
            records: clean,
        });
    }
    run.output(&a.out, "label_dict.tsv", dict.to_tsv().as_bytes())?;
    let diff = snapshot_diff(&snapshots[0], &snapshots[1]);
    run.output(&a.out, "diff.tsv", diff.to_tsv().as_bytes())?;

    let mut summary = String::from("dataset\ttrain\ttest\texcluded_shared\texcluded_stale\n");
    for task in Task::ALL {
        let split = chronological_split(&snapshots[0], &snapshots[1], task)?;
        let name = task.short_name();
        run.output(
            &a.out,
            &format!("{name}_train.tsv"),
            write_flatfile(&split.train).as_bytes(),
        )?;
        run.output(
            &a.out,
            &format!("{name}_test.tsv"),
            write_flatfile(&split.test).as_bytes(),
        )?;
        summary.push_str(&format!(
            "{name}\t{}\t{}\t{}\t{}\n",
            split.train.len(),
            split.test.len(),
            split.excluded_shared,
            split.excluded_stale
        ));
        if task == Task::FunctionCount {
            let mut counts = String::from("side\tfunction_count\trecords\n");
            for (side, recs) in [("train", &split.train), ("test", &split.test)] {
                for (k, n) in function_count_partition(recs) {
                    counts.push_str(&format!("{side}\t{k}\t{n}\n"));
                }
            }
            run.output(&a.out, "function_counts.tsv", counts.as_bytes())?;
        }
    }
    run.output(&a.out, "splits.tsv", summary.as_bytes())?;
    run.write(&a.out)?;
    print!("{summary}");
    Ok(0)
}

pub fn embed(a: &EmbedArgs) -> Result<u8> {
    if !a.one_hot {
        bail!("only --one-hot embedding is computed in-process; supply other tables precomputed");
    }
    let mut seen = HashSet::new();
    let mut entries: Vec<(String, String)> = Vec::new();
    let mut run = RunManifest::new("embed", json!({ "kind": "onehot", "max_len": a.max_len }));
    for path in &a.input {
        run.input(path)?;
        let pairs = if looks_like_fasta(path)? {
            parse_fasta(path)?
                .into_iter()
                .map(|(id, seq)| (id, normalize_sequence(&seq).0))
                .collect()
        } else {
            parse_flatfile(path)?
                .records
                .into_iter()
                .map(|r| (r.id, r.seq))
                .collect::<Vec<_>>()
        };
        for (id, seq) in pairs {
            if seen.insert(id.clone()) {
                entries.push((id, seq));
            }
        }
    }
    let table: EmbeddingTable = one_hot_table(entries.iter().map(|(i, s)| (i.as_str(), s.as_str())), a.max_len)?;
    let bytes = if a.tsv {
        table.to_tsv().into_bytes()
    } else {
        table.to_bytes()
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    ecannot_core::bundle::write_atomic(&a.out, &bytes)?;
    run.record_output(&file_name(&a.out), ecannot_core::bundle::sha256_hex(&bytes));
    run.write_to(&sidecar(&a.out))?;
    println!("{} vectors of dimension {}", table.len(), table.dim());
    Ok(0)
}

fn looks_like_fasta(path: &Path) -> Result<bool> {
    use std::io::BufRead;
    let reader = ecannot_core::dataset::open_maybe_gzip(path)?;
    for line in reader.lines() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if !line.trim().is_empty() {
            return Ok(line.starts_with('>'));
        }
    }
    Ok(false)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `out.tsv` → `out.tsv.run.json`.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

fn training_records(data: &Path) -> Result<(PathBuf, Vec<ProteinRecord>)> {
    let path = if data.is_dir() {
        data.join("ds1_train.tsv")
    } else {
        data.to_path_buf()
    };
    let flat = parse_flatfile(&path)?;
    if !flat.rejects.is_empty() {
        log::warn!("{}: {} rows rejected", path.display(), flat.rejects.len());
    }
    Ok((path, flat.records))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn scoreboard_tsv(res: &TuneResult) -> String {
    let mut out = String::from("policy\tobjective\n");
    for (p, s) in &res.scoreboard {
        out.push_str(&format!("{p}\t{s:.6}\n"));
    }
    out
}

pub fn train(a: &TrainArgs) -> Result<u8> {
    let mut config = load_config(a.config.as_deref(), a.seed)?;
    if let Some(p) = &a.policy {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        config.policy =
            serde_json::from_str::<IntegrationPolicy>(&text).with_context(|| format!("parsing {}", p.display()))?;
    }
    config.tune |= a.tune;
    let (data_path, records) = training_records(&a.data)?;
    let table: EmbeddingTable = load_embedding_table(&a.embeddings, a.kind.clone(), None)?;
    let (mut bundle, tuned) = train_bundle(&records, &table, &config)?;
    let manifest = bundle.save(&a.out)?.clone();

    let mut run = RunManifest::new("train", serde_json::to_value(&config)?);
    run.input(&data_path)?;
    run.input(&a.embeddings)?;
    for (name, digest) in &manifest.files {
        run.record_output(name, digest.clone());
    }
    if let Some(res) = &tuned {
        run.output(&a.out, "scoreboard.tsv", scoreboard_tsv(res).as_bytes())?;
        println!("tuned policy {} (objective {:.4})", res.policy, res.objective);
    }
    run.write(&a.out)?;
    println!(
        "bundle written to {}: {} records, {} EC labels, policy {}",
        a.out.display(),
        manifest.train_records,
        manifest.labels,
        manifest.policy
    );
    Ok(0)
}

pub fn tune(a: &TuneArgs) -> Result<u8> {
    let mut config = load_config(a.config.as_deref(), a.seed)?;
    config.tune = true;
    let (data_path, records) = training_records(&a.data)?;
    let table: EmbeddingTable = load_embedding_table(&a.embeddings, a.kind.clone(), None)?;
    let (_, tuned) = train_bundle(&records, &table, &config)?;
    let res = tuned.ok_or_else(|| anyhow!("tuning produced no result"))?;
    create_dir(&a.out)?;
    let mut run = RunManifest::new("tune", serde_json::to_value(&config)?);
    run.input(&data_path)?;
    run.input(&a.embeddings)?;
    let policy = serde_json::to_string_pretty(&res.policy)?;
    run.output(&a.out, "policy.json", format!("{policy}\n").as_bytes())?;
    run.output(&a.out, "scoreboard.tsv", scoreboard_tsv(&res).as_bytes())?;
    let trajectory: Vec<String> = res.trajectory.iter().map(|v| format!("{v:.6}")).collect();
    run.output(
        &a.out,
        "trajectory.tsv",
        format!("objective\n{}\n", trajectory.join("\n")).as_bytes(),
    )?;
    run.write(&a.out)?;
    println!("policy {} objective {:.4}", res.policy, res.objective);
    Ok(0)
}

fn external_table(path: Option<&Path>, bundle: &Bundle) -> Result<Option<EmbeddingTable>> {
    path.map(|p| load_embedding_table::<Scalar>(p, bundle.embedding.clone(), Some(bundle.dim())))
        .transpose()
        .map_err(Into::into)
}

pub fn predict(a: &PredictArgs) -> Result<u8> {
    let bundle = Bundle::load(&a.bundle)?;
    let external = external_table(a.embeddings.as_deref(), &bundle)?;
    let mut text = String::new();
    {
        use std::io::Read;
        ecannot_core::dataset::open_maybe_gzip(&a.fasta)?
            .read_to_string(&mut text)
            .with_context(|| format!("reading {}", a.fasta.display()))?;
    }
    let out = annotate_fasta(&bundle, &text, a.mode, external.as_ref())?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut run = RunManifest::new(
        "predict",
        json!({ "mode": a.mode.to_string(), "bundle": bundle.manifest.files }),
    );
    run.input(&a.fasta)?;
    if let Some(p) = &a.embeddings {
        run.input(p)?;
    }
    ecannot_core::bundle::write_atomic(&a.out, out.tsv.as_bytes())?;
    run.record_output(&file_name(&a.out), ecannot_core::bundle::sha256_hex(out.tsv.as_bytes()));
    run.write_to(&sidecar(&a.out))?;
    if out.failed > 0 {
        eprintln!("{} of {} rows failed", out.failed, out.rows);
        return Ok(EXIT_FAILED_ROWS);
    }
    println!("{} rows written to {}", out.rows, a.out.display());
    Ok(0)
}

/// Named confusion rows: `name tp fp tn fn up un`, whitespace separated.
/// A leading header line is skipped.
pub fn read_counts(text: &str) -> Result<Vec<(String, ConfusionCounts)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || fields[0].starts_with('#') {
            continue;
        }
        let numeric: Result<Vec<u64>, _> = fields[1..].iter().map(|f| f.parse::<u64>()).collect();
        match numeric {
            Ok(v) if v.len() == 6 => out.push((
                fields[0].to_string(),
                ConfusionCounts::new(v[0], v[1], v[2], v[3], v[4], v[5]),
            )),
            _ if i == 0 => continue,
            _ => bail!("line {}: expected a name and six counts (tp fp tn fn up un)", i + 1),
        }
    }
    Ok(out)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<u8> {
    if let Some(path) = &a.counts {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let rows = read_counts(&text)?;
        let mut tsv = String::from("name\tacc\tppv\tnpv\trecall\tf1\ttp\tfp\tfn\ttn\tup\tun\n");
        println!("{:<16} ACC    PPV    NPV    Recall F1     | TP FP FN TN UP UN", "name");
        let mut below = false;
        for (name, c) in &rows {
            let m = binary_metrics(c);
            println!(
                "{name:<16} {} {} {} {} {} | {} {} {} {} {} {}",
                m.acc, m.ppv, m.npv, m.recall, m.f1, c.tp, c.fp, c.fn_, c.tn, c.up, c.un
            );
            tsv.push_str(&format!(
                "{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                m.acc, m.ppv, m.npv, m.recall, m.f1, c.tp, c.fp, c.fn_, c.tn, c.up, c.un
            ));
            below |= a.min_f1.is_some_and(|t| m.f1.value_or_zero() < t);
        }
        if let Some(out) = &a.out {
            ecannot_core::bundle::write_atomic(out, tsv.as_bytes())?;
        }
        return Ok(if below { EXIT_BELOW_THRESHOLD } else { 0 });
    }

    let (pred_path, gold_path) = match (&a.predictions, &a.gold) {
        (Some(p), Some(g)) => (p, g),
        _ => bail!("--predictions and --gold are required without --counts"),
    };
    let text = fs::read_to_string(pred_path).with_context(|| format!("reading {}", pred_path.display()))?;
    let preds = read_predictions(&text)?;
    let gold_all = parse_flatfile(gold_path)?.records;
    // Predictions usually cover every query; enzyme-only tasks score a subset.
    let gold: Vec<ProteinRecord> = gold_all
        .into_iter()
        .filter(|g| !a.task.enzymes_only() || g.is_enzyme)
        .collect();
    let gold_ids: HashSet<&str> = gold.iter().map(|g| g.id.as_str()).collect();
    let preds: Vec<_> = preds.into_iter().filter(|p| gold_ids.contains(p.id.as_str())).collect();
    let dict = match &a.dict {
        Some(p) => Some(LabelDictionary::from_tsv(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?),
        None => None,
    };
    let report = evaluate_task(&preds, &gold, a.task, dict.as_ref())?;
    print!("{report}");
    if let Some(out) = &a.out {
        ecannot_core::bundle::write_atomic(out, report.to_tsv().as_bytes())?;
    }
    if a.min_f1.is_some_and(|t| report.headline_f1() < t) {
        eprintln!(
            "headline F1 {:.4} below {}",
            report.headline_f1(),
            a.min_f1.unwrap_or_default()
        );
        return Ok(EXIT_BELOW_THRESHOLD);
    }
    Ok(0)
}

fn serve_command(a: &ServeArgs) -> Result<u8> {
    let bundle = Arc::new(Bundle::load(&a.bundle)?);
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let store = JobStore::open(&a.store)?;
        let config = ServiceConfig {
            workers,
            ttl: a.ttl_secs.map(std::time::Duration::from_secs),
        };
        serve(a.bind, bundle, store, config).await
    })?;
    Ok(0)
}
