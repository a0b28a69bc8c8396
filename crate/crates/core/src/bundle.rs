//! Model bundle: the three agents, the alignment catalog, the label
//! dictionary and the integration policy in one directory, bound together
//! by a manifest with content digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{
    predict_agent1, predict_agent2, predict_agent3, train_agent1, train_agent2, train_agent3, Agent1Model,
    Agent1Params, Agent2Model, Agent3Model, Agent3Params, Mode,
};
use crate::align::{align_query, build_kmer_index, KmerIndex};
use crate::dataset::holdout_latest;
use crate::ec::LabelDictionary;
use crate::embedding::EmbeddingKind;
use crate::error::{Error, Result};
use crate::gbdt::GbdtParams;
use crate::integrator::{greedy_tune, Evidence, IntegrationPolicy, Objective, TuneGrid, TuneResult};
use crate::record::ProteinRecord;
use crate::scalar::Real;
use crate::{EmbeddingTable, Scalar};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
const DICT_FILE: &str = "label_dict.tsv";
const AGENT1_FILE: &str = "agent1.bin";
const AGENT2_FILE: &str = "agent2.bin";
const AGENT3_FILE: &str = "agent3.bin";
const CATALOG_FILE: &str = "catalog.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub agent1: Agent1Params,
    pub agent2: GbdtParams,
    pub agent3: Agent3Params,
    /// Seed length of the alignment index.
    pub kmer_k: usize,
    pub min_seed_hits: usize,
    /// Used as-is unless `tune` is set.
    pub policy: IntegrationPolicy,
    pub tune: bool,
    /// Latest fraction of the training records held out for tuning.
    pub holdout_fraction: f64,
    pub grid: TuneGrid,
    pub objective: Objective,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            agent1: Agent1Params::default(),
            agent2: GbdtParams::default(),
            agent3: Agent3Params::default(),
            kmer_k: 5,
            min_seed_hits: 1,
            policy: IntegrationPolicy::default(),
            tune: false,
            holdout_fraction: 0.1,
            grid: TuneGrid::default(),
            objective: Objective::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub embedding: String,
    pub dim: usize,
    pub scalar_width: u8,
    pub train_records: usize,
    pub labels: usize,
    pub policy: IntegrationPolicy,
    pub kmer_k: usize,
    pub min_seed_hits: usize,
    pub config: TrainConfig,
    /// File name to SHA-256 hex digest.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: BundleManifest,
    pub embedding: EmbeddingKind,
    pub dict: LabelDictionary,
    pub agent1: Agent1Model<Scalar>,
    /// Absent when training had no multifunctional enzymes; every enzyme
    /// then gets a count of one.
    pub agent2: Option<Agent2Model<Scalar>>,
    pub agent3: Agent3Model<Scalar>,
    pub catalog: KmerIndex,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Models {
    agent1: Agent1Model<Scalar>,
    agent2: Option<Agent2Model<Scalar>>,
    agent3: Agent3Model<Scalar>,
    catalog: KmerIndex,
    dict: LabelDictionary,
}

fn fit_models(records: &[ProteinRecord], table: &EmbeddingTable, config: &TrainConfig) -> Result<Models> {
    let enzymes: Vec<ProteinRecord> = records.iter().filter(|r| r.is_enzyme).cloned().collect();
    if enzymes.is_empty() || enzymes.len() == records.len() {
        return Err(Error::invalid("training needs both enzymes and non-enzymes"));
    }
    let dict = LabelDictionary::from_ecs(enzymes.iter().flat_map(|r| r.ecs.iter().copied()));
    info!(
        "training on {} records ({} enzymes, {} labels)",
        records.len(),
        enzymes.len(),
        dict.len()
    );
    let agent1 = train_agent1(records, table, &config.agent1, config.seed)?;
    let agent2 = match train_agent2(&enzymes, table, &config.agent2, config.seed) {
        Ok(m) => Some(m),
        Err(e) if enzymes.iter().all(|r| r.function_count <= 1) => {
            warn!("function-count model skipped: {e}");
            None
        }
        Err(e) => return Err(e),
    };
    let agent3 = train_agent3(&enzymes, table, &dict, &config.agent3, config.seed)?;
    let catalog = build_kmer_index(records, config.kmer_k)?;
    Ok(Models {
        agent1,
        agent2,
        agent3,
        catalog,
        dict,
    })
}

fn evidence(
    agent1: &Agent1Model<Scalar>,
    agent2: Option<&Agent2Model<Scalar>>,
    agent3: &Agent3Model<Scalar>,
    catalog: &KmerIndex,
    min_seed_hits: usize,
    (id, seq, x): (&str, &str, &[Scalar]),
) -> Result<Evidence> {
    let agent1 = predict_agent1(agent1, x)?;
    let function_count = match agent2 {
        Some(m) => predict_agent2(m, x)?,
        None => 1,
    };
    let ranked = predict_agent3(agent3, x, Mode::Recommendation, function_count as usize)?;
    Ok(Evidence {
        id: id.to_string(),
        agent1,
        function_count,
        ranked,
        // the identity threshold is applied by the policy
        hit: align_query(catalog, seq, 0.0, min_seed_hits),
    })
}

/// Trains every component on `records` (embedding rows from `table`). With
/// `config.tune`, a first pass on all but the latest records tunes the
/// policy on that holdout before the final fit on everything.
pub fn train_bundle(
    records: &[ProteinRecord],
    table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<(Bundle, Option<TuneResult>)> {
    config.policy.validate()?;
    let mut policy = config.policy.clone();
    let mut tuned = None;
    if config.tune {
        let (rest, val) = holdout_latest(records, config.holdout_fraction);
        if val.is_empty() {
            return Err(Error::invalid("holdout fraction leaves no validation records"));
        }
        let models = fit_models(&rest, table, config)?;
        let ev: Vec<Evidence> = val
            .iter()
            .map(|r| {
                evidence(
                    &models.agent1,
                    models.agent2.as_ref(),
                    &models.agent3,
                    &models.catalog,
                    config.min_seed_hits,
                    (&r.id, &r.seq, table.require(&r.id)?),
                )
            })
            .collect::<Result<_>>()?;
        let res = greedy_tune(&ev, &val, &config.grid, config.objective, Mode::Prediction)?;
        policy = res.policy.clone();
        tuned = Some(res);
    }
    let models = fit_models(records, table, config)?;
    let manifest = BundleManifest {
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        embedding: table.kind().to_string(),
        dim: table.dim(),
        scalar_width: Scalar::WIDTH,
        train_records: records.len(),
        labels: models.dict.len(),
        policy,
        kmer_k: config.kmer_k,
        min_seed_hits: config.min_seed_hits,
        config: config.clone(),
        files: BTreeMap::new(),
    };
    let bundle = Bundle {
        manifest,
        embedding: table.kind().clone(),
        dict: models.dict,
        agent1: models.agent1,
        agent2: models.agent2,
        agent3: models.agent3,
        catalog: models.catalog,
    };
    Ok((bundle, tuned))
}

impl Bundle {
    pub fn policy(&self) -> &IntegrationPolicy {
        &self.manifest.policy
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    /// Agent and alignment outputs for one query.
    pub fn evidence(&self, id: &str, seq: &str, x: &[Scalar]) -> Result<Evidence> {
        evidence(
            &self.agent1,
            self.agent2.as_ref(),
            &self.agent3,
            &self.catalog,
            self.manifest.min_seed_hits,
            (id, seq, x),
        )
    }

    fn files(&self) -> Vec<(&'static str, Vec<u8>)> {
        let mut files = vec![
            (DICT_FILE, self.dict.to_tsv().into_bytes()),
            (AGENT1_FILE, self.agent1.to_bytes()),
            (AGENT3_FILE, self.agent3.to_bytes()),
            (CATALOG_FILE, self.catalog.to_bytes()),
        ];
        if let Some(a2) = &self.agent2 {
            files.push((AGENT2_FILE, a2.to_bytes()));
        }
        files
    }

    /// Writes all components and the manifest (last). Returns the manifest
    /// with digests filled in.
    pub fn save(&mut self, dir: &Path) -> Result<&BundleManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut digests = BTreeMap::new();
        for (name, bytes) in self.files() {
            write_atomic(&dir.join(name), &bytes)?;
            digests.insert(name.to_string(), sha256_hex(&bytes));
        }
        self.manifest.files = digests;
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::invalid(e.to_string()))?;
        write_atomic(&dir.join(MANIFEST), format!("{json}\n").as_bytes())?;
        Ok(&self.manifest)
    }

    /// Loads a bundle, verifying every file against its manifest digest.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: BundleManifest =
            serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: manifest.format_version as u16,
                expected: FORMAT_VERSION as u16,
            });
        }
        if manifest.scalar_width != Scalar::WIDTH {
            return Err(Error::Corrupt(format!(
                "bundle stores {}-byte scalars",
                manifest.scalar_width
            )));
        }
        manifest.policy.validate()?;
        let read = |name: &str| -> Result<Option<Vec<u8>>> {
            let Some(expected) = manifest.files.get(name) else {
                return Ok(None);
            };
            let p = dir.join(name);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let got = sha256_hex(&bytes);
            if &got != expected {
                return Err(Error::Corrupt(format!(
                    "{name}: digest {got} does not match manifest {expected}"
                )));
            }
            Ok(Some(bytes))
        };
        let need = |name: &str| -> Result<Vec<u8>> {
            read(name)?.ok_or_else(|| Error::Corrupt(format!("manifest does not list {name}")))
        };
        let dict = LabelDictionary::from_tsv(
            &String::from_utf8(need(DICT_FILE)?).map_err(|_| Error::Corrupt("label dictionary is not utf-8".into()))?,
        )?;
        let agent1 = Agent1Model::from_bytes(&need(AGENT1_FILE)?)?;
        let agent2 = read(AGENT2_FILE)?.map(|b| Agent2Model::from_bytes(&b)).transpose()?;
        let agent3 = Agent3Model::from_bytes(&need(AGENT3_FILE)?)?;
        let catalog = KmerIndex::from_bytes(&need(CATALOG_FILE)?)?;
        let embedding: EmbeddingKind = manifest
            .embedding
            .parse()
            .map_err(|e: String| Error::Corrupt(format!("embedding tag: {e}")))?;
        if agent1.dim() != manifest.dim
            || agent3.dim() != manifest.dim
            || agent2.as_ref().is_some_and(|a| a.sp().dim() != manifest.dim)
        {
            return Err(Error::Corrupt("component dimensions disagree with the manifest".into()));
        }
        if agent3.dictionary() != &dict {
            return Err(Error::Corrupt(
                "EC classifier dictionary differs from the bundle dictionary".into(),
            ));
        }
        Ok(Bundle {
            manifest,
            embedding,
            dict,
            agent1,
            agent2,
            agent3,
            catalog,
        })
    }
}
