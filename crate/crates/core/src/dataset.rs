//! In-memory choice data: observations, chooser covariates and item features.
//!
//! Item and chooser ids are interned to dense indices in order of first
//! appearance. Choice sets are stored as sorted index lists, so two
//! observations share a set exactly when their lists are equal.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bijection between string ids and dense indices `0..len`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interner {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut interner = Self::new();
        for id in ids {
            let id = id.into();
            if interner.index.contains_key(&id) {
                return Err(Error::contract(format!("duplicate id {id:?}")));
            }
            interner.intern(&id);
        }
        Ok(interner)
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One choice: a chooser, the set they were shown, and what they picked.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub chooser: usize,
    /// Sorted, distinct item indices.
    pub choice_set: Vec<usize>,
    pub chosen: usize,
}

impl Observation {
    /// Builds an observation, sorting the set and checking the invariants.
    pub fn new(chooser: usize, mut choice_set: Vec<usize>, chosen: usize) -> Result<Self> {
        choice_set.sort_unstable();
        if let Some(w) = choice_set.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::contract(format!("duplicate item {} in choice set", w[0])));
        }
        if choice_set.binary_search(&chosen).is_err() {
            return Err(Error::contract(format!(
                "chosen item {chosen} is not in its choice set"
            )));
        }
        Ok(Self {
            chooser,
            choice_set,
            chosen,
        })
    }

    pub fn position_of(&self, item: usize) -> Option<usize> {
        self.choice_set.binary_search(&item).ok()
    }

    /// Position of the chosen item within `choice_set`.
    pub fn chosen_position(&self) -> usize {
        self.choice_set
            .binary_search(&self.chosen)
            .expect("chosen item is always in the set")
    }

    pub fn len(&self) -> usize {
        self.choice_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choice_set.is_empty()
    }

    /// Singleton sets carry no likelihood information.
    pub fn is_informative(&self) -> bool {
        self.choice_set.len() >= 2
    }
}

/// Dense row-major numeric table with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    names: Vec<String>,
    rows: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn new(names: Vec<String>, rows: usize, data: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::contract("table needs at least one column"));
        }
        if data.len() != rows * names.len() {
            return Err(Error::dims("table entries", rows * names.len(), data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite entry in row {}, column {:?}",
                pos / names.len(),
                names[pos % names.len()]
            )));
        }
        Ok(Self { names, rows, data })
    }

    pub fn from_matrix(names: Vec<String>, m: &DMatrix<f64>) -> Result<Self> {
        let data = (0..m.nrows())
            .flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)]))
            .collect();
        Self::new(names, m.nrows(), data)
    }

    /// Columns named `x0, x1, ...`.
    pub fn with_default_names(prefix: &str, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let names = (0..cols).map(|c| format!("{prefix}{c}")).collect();
        Self::new(names, rows, data)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.names.len();
        &self.data[r * d..(r + 1) * d]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols(), &self.data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChoiceFormat {
    Csv,
    Jsonl,
}

impl ChoiceFormat {
    /// Guesses the format from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => ChoiceFormat::Jsonl,
            _ => ChoiceFormat::Csv,
        }
    }
}

impl FromStr for ChoiceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ChoiceFormat::Csv),
            "jsonl" => Ok(ChoiceFormat::Jsonl),
            other => Err(Error::invalid(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    chooser: String,
    choice_set: Vec<String>,
    chosen: String,
}

/// A collection of choice observations with optional covariate tables.
#[derive(Clone, Debug)]
pub struct ChoiceDataset {
    items: Interner,
    choosers: Interner,
    observations: Vec<Observation>,
    chooser_covariates: Option<Table>,
    item_features: Option<Table>,
    unique_sets: Vec<Vec<usize>>,
    set_of_obs: Vec<usize>,
}

impl ChoiceDataset {
    /// Assembles a dataset from already-interned parts.
    pub fn from_parts(items: Interner, choosers: Interner, observations: Vec<Observation>) -> Result<Self> {
        for (k, obs) in observations.iter().enumerate() {
            if obs.chooser >= choosers.len() {
                return Err(Error::contract(format!("observation {k}: unknown chooser index")));
            }
            if obs.choice_set.iter().any(|&i| i >= items.len()) {
                return Err(Error::contract(format!("observation {k}: unknown item index")));
            }
            if obs.choice_set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::contract(format!(
                    "observation {k}: choice set not sorted or has duplicates"
                )));
            }
            if obs.position_of(obs.chosen).is_none() {
                return Err(Error::contract(format!("observation {k}: chosen item not in set")));
            }
        }
        let mut ds = Self {
            items,
            choosers,
            observations,
            chooser_covariates: None,
            item_features: None,
            unique_sets: Vec::new(),
            set_of_obs: Vec::new(),
        };
        ds.rebuild_registry();
        Ok(ds)
    }

    fn rebuild_registry(&mut self) {
        let mut lookup: BTreeMap<&[usize], usize> = BTreeMap::new();
        let mut unique = Vec::new();
        let mut set_of_obs = Vec::with_capacity(self.observations.len());
        for obs in &self.observations {
            let next = unique.len();
            let id = *lookup.entry(obs.choice_set.as_slice()).or_insert_with(|| {
                unique.push(obs.choice_set.clone());
                next
            });
            set_of_obs.push(id);
        }
        self.unique_sets = unique;
        self.set_of_obs = set_of_obs;
    }

    pub fn load_choices(path: impl AsRef<Path>, format: ChoiceFormat) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        Self::read_choices(BufReader::new(file), format)
    }

    pub fn read_choices<R: Read>(reader: R, format: ChoiceFormat) -> Result<Self> {
        let mut items = Interner::new();
        let mut choosers = Interner::new();
        let mut observations = Vec::new();
        let mut push = |line: usize, chooser: &str, set: &[&str], chosen: &str| -> Result<()> {
            let parse_err = |message: String| Error::Parse { line, message };
            if chooser.is_empty() {
                return Err(parse_err("empty chooser id".into()));
            }
            if set.iter().any(|s| s.is_empty()) || set.is_empty() {
                return Err(parse_err("empty item id in choice set".into()));
            }
            if !set.contains(&chosen) {
                return Err(parse_err(format!("chosen item {chosen:?} is not in its choice set")));
            }
            let mut seen: Vec<&str> = set.to_vec();
            seen.sort_unstable();
            if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
                return Err(parse_err(format!("duplicate item {:?} in choice set", w[0])));
            }
            let c = choosers.intern(chooser);
            let idx: Vec<usize> = set.iter().map(|s| items.intern(s)).collect();
            let chosen = items.intern(chosen);
            let obs = Observation::new(c, idx, chosen).map_err(|e| parse_err(e.to_string()))?;
            observations.push(obs);
            Ok(())
        };
        match format {
            ChoiceFormat::Csv => {
                let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
                let headers = rdr.headers()?.clone();
                let expected = ["chooser", "choice_set", "chosen"];
                if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("expected header `chooser,choice_set,chosen`, found {headers:?}"),
                    });
                }
                for record in rdr.records() {
                    let record = record.map_err(|e| Error::Parse {
                        line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                        message: e.to_string(),
                    })?;
                    let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
                    let set: Vec<&str> = record[1].split('|').map(str::trim).collect();
                    push(line, &record[0], &set, &record[2])?;
                }
            }
            ChoiceFormat::Jsonl => {
                for (k, line) in BufReader::new(reader).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                        line: k + 1,
                        message: e.to_string(),
                    })?;
                    let set: Vec<&str> = rec.choice_set.iter().map(String::as_str).collect();
                    push(k + 1, &rec.chooser, &set, &rec.chosen)?;
                }
            }
        }
        Self::from_parts(items, choosers, observations)
    }

    pub fn write_choices(&self, path: impl AsRef<Path>, format: ChoiceFormat) -> Result<()> {
        let file = BufWriter::new(File::create(path.as_ref())?);
        self.write_choices_to(file, format)
    }

    pub fn write_choices_to<W: Write>(&self, mut writer: W, format: ChoiceFormat) -> Result<()> {
        match format {
            ChoiceFormat::Csv => {
                let mut wtr = csv::Writer::from_writer(writer);
                wtr.write_record(["chooser", "choice_set", "chosen"])?;
                for obs in &self.observations {
                    let set: Vec<&str> = obs.choice_set.iter().map(|&i| self.items.id(i)).collect();
                    wtr.write_record([
                        self.choosers.id(obs.chooser),
                        &set.join("|"),
                        self.items.id(obs.chosen),
                    ])?;
                }
                wtr.flush()?;
            }
            ChoiceFormat::Jsonl => {
                for obs in &self.observations {
                    let rec = JsonRecord {
                        chooser: self.choosers.id(obs.chooser).to_owned(),
                        choice_set: obs.choice_set.iter().map(|&i| self.items.id(i).to_owned()).collect(),
                        chosen: self.items.id(obs.chosen).to_owned(),
                    };
                    serde_json::to_writer(&mut writer, &rec)?;
                    writer.write_all(b"\n")?;
                }
                writer.flush()?;
            }
        }
        Ok(())
    }

    /// Reads `chooser,<name1>,...` and attaches one covariate row per chooser.
    pub fn attach_covariates(self, path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        self.read_covariates(BufReader::new(file))
    }

    pub fn read_covariates<R: Read>(self, reader: R) -> Result<Self> {
        let (names, rows) = read_keyed_table(reader, "chooser")?;
        let n = self.choosers.len();
        let table = assemble_keyed(&names, rows, n, |id| self.choosers.get(id))
            .map_err(|missing| Error::MissingChoosers(missing.into_iter().map(|c| self.choosers.id(c).to_owned()).collect()))?;
        self.with_chooser_covariates(table)
    }

    /// Reads `item,<name1>,...` and attaches one feature row per item.
    pub fn attach_item_features(self, path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        self.read_item_features(BufReader::new(file))
    }

    pub fn read_item_features<R: Read>(self, reader: R) -> Result<Self> {
        let (names, rows) = read_keyed_table(reader, "item")?;
        let n = self.items.len();
        let table = assemble_keyed(&names, rows, n, |id| self.items.get(id))
            .map_err(|missing| Error::MissingItems(missing.into_iter().map(|i| self.items.id(i).to_owned()).collect()))?;
        self.with_item_features(table)
    }

    pub fn write_covariates(&self, path: impl AsRef<Path>) -> Result<()> {
        let table = self
            .chooser_covariates
            .as_ref()
            .ok_or_else(|| Error::contract("dataset has no chooser covariates"))?;
        write_keyed_table(path.as_ref(), "chooser", self.choosers.ids(), table)
    }

    pub fn write_item_features(&self, path: impl AsRef<Path>) -> Result<()> {
        let table = self
            .item_features
            .as_ref()
            .ok_or_else(|| Error::contract("dataset has no item features"))?;
        write_keyed_table(path.as_ref(), "item", self.items.ids(), table)
    }

    pub fn with_chooser_covariates(mut self, table: Table) -> Result<Self> {
        if table.rows() != self.choosers.len() {
            return Err(Error::dims("covariate rows", self.choosers.len(), table.rows()));
        }
        self.chooser_covariates = Some(table);
        Ok(self)
    }

    pub fn with_item_features(mut self, table: Table) -> Result<Self> {
        if table.rows() != self.items.len() {
            return Err(Error::dims("item feature rows", self.items.len(), table.rows()));
        }
        self.item_features = Some(table);
        Ok(self)
    }

    pub fn items(&self) -> &Interner {
        &self.items
    }

    pub fn choosers(&self) -> &Interner {
        &self.choosers
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_choosers(&self) -> usize {
        self.choosers.len()
    }

    pub fn chooser_covariates(&self) -> Option<&Table> {
        self.chooser_covariates.as_ref()
    }

    pub fn item_features(&self) -> Option<&Table> {
        self.item_features.as_ref()
    }

    pub fn covariate_dim(&self) -> Option<usize> {
        self.chooser_covariates.as_ref().map(Table::cols)
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.item_features.as_ref().map(Table::cols)
    }

    /// Covariate row of the chooser behind observation `obs`.
    pub fn covariates_of(&self, obs: usize) -> Option<&[f64]> {
        self.chooser_covariates
            .as_ref()
            .map(|t| t.row(self.observations[obs].chooser))
    }

    pub fn features_of(&self, item: usize) -> Option<&[f64]> {
        self.item_features.as_ref().map(|t| t.row(item))
    }

    /// Mean feature vector over the choice set of observation `obs`.
    pub fn mean_set_features(&self, obs: usize) -> Option<DVector<f64>> {
        let table = self.item_features.as_ref()?;
        Some(mean_rows(table, &self.observations[obs].choice_set))
    }

    /// Number of observations whose choice set is a singleton.
    pub fn singleton_count(&self) -> usize {
        self.observations.iter().filter(|o| !o.is_informative()).count()
    }

    /// Distinct choice sets in order of first appearance.
    pub fn unique_sets(&self) -> &[Vec<usize>] {
        &self.unique_sets
    }

    pub fn n_unique_sets(&self) -> usize {
        self.unique_sets.len()
    }

    /// Index into [`unique_sets`](Self::unique_sets) for observation `obs`.
    pub fn set_id(&self, obs: usize) -> usize {
        self.set_of_obs[obs]
    }

    /// Keeps the observations at `indices` (in that order); tables are shared.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut ds = Self {
            items: self.items.clone(),
            choosers: self.choosers.clone(),
            observations: indices.iter().map(|&k| self.observations[k].clone()).collect(),
            chooser_covariates: self.chooser_covariates.clone(),
            item_features: self.item_features.clone(),
            unique_sets: Vec::new(),
            set_of_obs: Vec::new(),
        };
        ds.rebuild_registry();
        ds
    }

    /// Shuffles observations under `seed` and cuts off a training part of
    /// `floor(train_fraction * len)` observations, clamped so that both
    /// halves are nonempty.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::invalid(format!("train fraction {train_fraction} not in (0, 1)")));
        }
        let n = self.len();
        if n < 2 {
            return Err(Error::contract(format!(
                "cannot split {n} observations into two nonempty parts"
            )));
        }
        let n_train = ((train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (train, test) = order.split_at(n_train);
        Ok((self.subset(train), self.subset(test)))
    }

    /// Replaces chooser covariates with the binary encoding of each
    /// observation's choice set; each observation becomes its own chooser.
    pub fn indicator_encode(&self) -> Self {
        let n = self.n_items();
        let m = self.len();
        let mut data = vec![0.0; m * n];
        let mut observations = Vec::with_capacity(m);
        for (k, obs) in self.observations.iter().enumerate() {
            for &i in &obs.choice_set {
                data[k * n + i] = 1.0;
            }
            observations.push(Observation {
                chooser: k,
                ..obs.clone()
            });
        }
        let choosers = Interner::from_ids((0..m).map(|k| format!("obs{k}"))).expect("distinct ids");
        let names = self.items.ids().iter().map(|id| format!("in_{id}")).collect();
        let mut ds = Self {
            items: self.items.clone(),
            choosers,
            observations,
            chooser_covariates: None,
            item_features: self.item_features.clone(),
            unique_sets: self.unique_sets.clone(),
            set_of_obs: self.set_of_obs.clone(),
        };
        if n > 0 {
            ds.chooser_covariates = Some(Table::new(names, m, data).expect("finite indicator table"));
        }
        ds
    }

    /// Re-indexes items to follow `ids` (e.g. the item order of a fitted
    /// model). Fails if the dataset mentions an item not in `ids`.
    pub fn align_items(&self, ids: &[String]) -> Result<Self> {
        let target = Interner::from_ids(ids.iter().cloned())?;
        let mut unknown = Vec::new();
        let map: Vec<usize> = self
            .items
            .ids()
            .iter()
            .map(|id| {
                target.get(id).unwrap_or_else(|| {
                    unknown.push(id.clone());
                    usize::MAX
                })
            })
            .collect();
        if !unknown.is_empty() {
            return Err(Error::contract(format!("items unknown to the model: {}", unknown.join(", "))));
        }
        let observations = self
            .observations
            .iter()
            .map(|o| Observation::new(o.chooser, o.choice_set.iter().map(|&i| map[i]).collect(), map[o.chosen]))
            .collect::<Result<Vec<_>>>()?;
        let item_features = match &self.item_features {
            None => None,
            Some(t) => {
                let mut data = vec![0.0; ids.len() * t.cols()];
                let mut present = vec![false; ids.len()];
                for (old, &new) in map.iter().enumerate() {
                    data[new * t.cols()..(new + 1) * t.cols()].copy_from_slice(t.row(old));
                    present[new] = true;
                }
                if present.iter().any(|p| !p) {
                    // model items absent from this dataset have no feature rows
                    return Err(Error::MissingItems(
                        ids.iter().zip(&present).filter(|(_, p)| !**p).map(|(id, _)| id.clone()).collect(),
                    ));
                }
                Some(Table::new(t.names().to_vec(), ids.len(), data)?)
            }
        };
        let mut ds = Self::from_parts(target, self.choosers.clone(), observations)?;
        ds.chooser_covariates = self.chooser_covariates.clone();
        ds.item_features = item_features;
        Ok(ds)
    }
}

pub(crate) fn mean_rows(table: &Table, rows: &[usize]) -> DVector<f64> {
    let mut mean = DVector::zeros(table.cols());
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(table.row(r)) {
            *m += v;
        }
    }
    mean / rows.len().max(1) as f64
}

type KeyedRows = Vec<(usize, String, Vec<f64>)>;

fn read_keyed_table<R: Read>(reader: R, key: &str) -> Result<(Vec<String>, KeyedRows)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some(key) || headers.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{key},<name>,...`"),
        });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let values = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("non-numeric value {cell:?} in column {:?}", names[c]),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, record[0].to_owned(), values));
    }
    Ok((names, rows))
}

/// Places keyed rows at their dense index. Rows for unknown keys are ignored;
/// returns the dense indices lacking a row on failure.
fn assemble_keyed(
    names: &[String],
    rows: KeyedRows,
    n: usize,
    lookup: impl Fn(&str) -> Option<usize>,
) -> Result<Table, Vec<usize>> {
    let d = names.len();
    let mut data = vec![0.0; n * d];
    let mut seen = vec![false; n];
    for (_, key, values) in rows {
        if let Some(i) = lookup(&key) {
            data[i * d..(i + 1) * d].copy_from_slice(&values);
            seen[i] = true;
        }
    }
    let missing: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
    if !missing.is_empty() {
        return Err(missing);
    }
    Ok(Table::new(names.to_vec(), n, data).expect("validated cells"))
}

fn write_keyed_table(path: &Path, key: &str, ids: &[String], table: &Table) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec![key.to_owned()];
    header.extend(table.names().iter().cloned());
    wtr.write_record(&header)?;
    for (r, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(table.row(r).iter().map(|v| format!("{v}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
