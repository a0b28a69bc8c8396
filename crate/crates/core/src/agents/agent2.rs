use super::rows_for;
use crate::codec::{Reader, Writer};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::gbdt::{predict_gbdt, train_gbdt, GbdtModel, GbdtParams};
use crate::record::{ProteinRecord, MAX_FUNCTIONS};
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"ECA2";
const VERSION: u16 = 1;

/// Boosted trees over a dense relabeling of the observed target values.
/// A single observed value gives a tree-less constant model.
#[derive(Debug, Clone, PartialEq)]
struct Dense<T> {
    values: Vec<u8>,
    model: GbdtModel<T>,
}

impl<T: Real> Dense<T> {
    fn fit(x: &[&[T]], y: &[u8], dim: usize, params: &GbdtParams, seed: u64) -> Result<Self> {
        let mut values = y.to_vec();
        values.sort_unstable();
        values.dedup();
        let model = if values.len() == 1 {
            GbdtModel::empty(1, dim, *params)
        } else {
            let dense: Vec<usize> = y
                .iter()
                .map(|v| values.binary_search(v).expect("observed value"))
                .collect();
            train_gbdt(x, &dense, params, seed)?
        };
        Ok(Dense { values, model })
    }

    fn predict(&self, x: &[T]) -> Result<u8> {
        let (c, _) = predict_gbdt(&self.model, x)?;
        Ok(self.values[c])
    }

    fn write(&self, w: &mut Writer) {
        w.u32(self.values.len() as u32);
        for &v in &self.values {
            w.u8(v);
        }
        self.model.write(w);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.u32()? as usize;
        let mut values = Vec::with_capacity(n.min(256));
        for _ in 0..n {
            values.push(r.u8()?);
        }
        let model = GbdtModel::read(r)?;
        if values.is_empty() || model.classes() != values.len() || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Corrupt("class values do not match the tree model".into()));
        }
        Ok(Dense { values, model })
    }
}

/// Two-stage function-count predictor: mono vs multi, then the count
/// among multifunctional enzymes.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent2Model<T> {
    /// Values: 0 = monofunctional, 1 = multifunctional.
    sp: Dense<T>,
    /// Values: function counts 2..=8 observed in training.
    mp: Dense<T>,
}

pub fn train_agent2<T: Real>(
    records: &[ProteinRecord],
    table: &EmbeddingTable<T>,
    params: &GbdtParams,
    seed: u64,
) -> Result<Agent2Model<T>> {
    if let Some(r) = records
        .iter()
        .find(|r| r.function_count == 0 || r.function_count as usize > MAX_FUNCTIONS)
    {
        return Err(Error::invalid(format!(
            "record {} has function count {} outside 1..={MAX_FUNCTIONS}",
            r.id, r.function_count
        )));
    }
    if records.is_empty() {
        return Err(Error::invalid("function-count model needs training records"));
    }
    let x = rows_for(records, table)?;
    let multi: Vec<usize> = (0..records.len()).filter(|&i| records[i].function_count > 1).collect();
    if multi.is_empty() {
        return Err(Error::invalid("no multifunctional rows to train the count model"));
    }
    let sp_y: Vec<u8> = records.iter().map(|r| u8::from(r.function_count > 1)).collect();
    let sp = Dense::fit(&x, &sp_y, table.dim(), params, seed)?;
    let mp_x: Vec<&[T]> = multi.iter().map(|&i| x[i]).collect();
    let mp_y: Vec<u8> = multi.iter().map(|&i| records[i].function_count).collect();
    let mp = Dense::fit(&mp_x, &mp_y, table.dim(), params, seed.wrapping_add(1))?;
    Ok(Agent2Model { sp, mp })
}

impl<T: Real> Agent2Model<T> {
    pub fn sp(&self) -> &GbdtModel<T> {
        &self.sp.model
    }

    pub fn mp(&self) -> &GbdtModel<T> {
        &self.mp.model
    }

    /// Function count for each class of the multifunctional model.
    pub fn mp_counts(&self) -> &[u8] {
        &self.mp.values
    }

    /// Whether the mono/multi model predicts multifunctional.
    pub fn is_multi(&self, x: &[T]) -> Result<bool> {
        Ok(self.sp.predict(x)? == 1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        self.sp.write(&mut w);
        self.mp.write(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let sp = Dense::read(&mut r)?;
        let mp = Dense::read(&mut r)?;
        r.finish()?;
        if sp.values.iter().any(|&v| v > 1) || mp.values.iter().any(|&v| v < 2 || v as usize > MAX_FUNCTIONS) {
            return Err(Error::Corrupt("function-count classes out of range".into()));
        }
        if sp.model.dim() != mp.model.dim() {
            return Err(Error::Corrupt("count models disagree on dimension".into()));
        }
        Ok(Agent2Model { sp, mp })
    }
}

/// 1 when predicted monofunctional, otherwise the multifunctional model's
/// most probable count.
pub fn predict_agent2<T: Real>(model: &Agent2Model<T>, x: &[T]) -> Result<u8> {
    if model.is_multi(x)? {
        model.mp.predict(x)
    } else {
        Ok(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingKind;
    use chrono::NaiveDate;

    fn rec(id: &str, count: u8) -> ProteinRecord {
        let d = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
        ProteinRecord {
            id: id.into(),
            name: String::new(),
            seq: "M".into(),
            is_enzyme: true,
            function_count: count,
            ecs: Vec::new(),
            date_integrated: d,
            date_sequence_update: d,
        }
    }

    fn fixture(counts: &[u8]) -> (Vec<ProteinRecord>, EmbeddingTable<f64>) {
        let mut t = EmbeddingTable::new(EmbeddingKind::Custom("c".into()), 2).unwrap();
        let mut recs = Vec::new();
        for (i, &c) in counts.iter().enumerate() {
            let id = format!("r{i}");
            t.insert(id.clone(), &[f64::from(c) * 10.0 + (i % 3) as f64, 1.0])
                .unwrap();
            recs.push(rec(&id, c));
        }
        (recs, t)
    }

    #[test]
    fn all_monofunctional_is_refused() {
        let (recs, t) = fixture(&[1; 20]);
        let err = train_agent2(&recs, &t, &GbdtParams::default(), 0).unwrap_err();
        assert!(err.to_string().contains("no multifunctional rows"), "{err}");
    }

    #[test]
    fn count_out_of_range_is_refused() {
        let (recs, t) = fixture(&[1, 2, 9]);
        assert!(train_agent2(&recs, &t, &GbdtParams::default(), 0).is_err());
    }

    #[test]
    fn single_multi_count_is_constant() {
        let counts: Vec<u8> = (0..40).map(|i| if i % 4 == 0 { 3 } else { 1 }).collect();
        let (recs, t) = fixture(&counts);
        let p = GbdtParams {
            min_child_weight: 1.0,
            subsample: 1.0,
            ..Default::default()
        };
        let m = train_agent2(&recs, &t, &p, 0).unwrap();
        assert_eq!(m.mp_counts(), &[3]);
        assert_eq!(predict_agent2(&m, &[10.0, 1.0]).unwrap(), 1);
        assert_eq!(predict_agent2(&m, &[30.0, 1.0]).unwrap(), 3);
        let back = Agent2Model::<f64>::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
    }
}
