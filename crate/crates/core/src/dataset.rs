//! Rating files, splits and one-hot user slices.
//!
//! Users and items are remapped to contiguous zero-based indices (ordered
//! numerically when every ID is an integer, lexicographically otherwise);
//! the external IDs are kept so results can be reported in the file's own
//! vocabulary. Rating indices are one-based (`1..=k`), with `0` reserved for
//! "not observed".

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

const SCALE_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    values: Vec<f64>,
}

impl RatingScale {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "a rating scale needs at least two values, got {values:?}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "rating scale must be finite and strictly increasing, got {values:?}"
            )));
        }
        Ok(RatingScale { values })
    }

    /// The integer scale `1, 2, …, k`.
    pub fn integer(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|v| v as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    /// `u_k − u_1`.
    pub fn span(&self) -> f64 {
        self.values[self.values.len() - 1] - self.values[0]
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Rating value for a one-based rating index.
    pub fn value(&self, kappa: usize) -> f64 {
        self.values[kappa - 1]
    }

    /// One-based rating index of `rating`, if it lies on the scale.
    pub fn index_of(&self, rating: f64) -> Option<usize> {
        self.values
            .iter()
            .position(|&v| (v - rating).abs() <= SCALE_MATCH_TOL * v.abs().max(1.0))
            .map(|p| p + 1)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

impl std::fmt::Display for RatingScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl std::str::FromStr for RatingScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad rating scale value {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        RatingScale::new(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub user: usize,
    pub item: usize,
    /// One-based rating index.
    pub rating: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedDataset {
    pub m: usize,
    pub n: usize,
    pub scale: RatingScale,
    pub triples: Vec<Triple>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl ObservedDataset {
    /// Dataset with synthetic IDs `0..m` and `0..n`.
    pub fn from_triples(
        m: usize,
        n: usize,
        scale: RatingScale,
        triples: Vec<Triple>,
    ) -> Result<Self> {
        let data = ObservedDataset {
            m,
            n,
            scale,
            triples,
            user_ids: (0..m).map(|i| i.to_string()).collect(),
            item_ids: (0..n).map(|j| j.to_string()).collect(),
        };
        data.validate()?;
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn k(&self) -> usize {
        self.scale.k()
    }

    fn validate(&self) -> Result<()> {
        let k = self.scale.k();
        for t in &self.triples {
            if t.user >= self.m || t.item >= self.n || t.rating == 0 || t.rating > k {
                return Err(Error::invalid(format!(
                    "triple {t:?} outside m={}, n={}, k={k}",
                    self.m, self.n
                )));
            }
        }
        Ok(())
    }

    /// Same dimensions and ID maps, different triples.
    pub fn with_triples(&self, triples: Vec<Triple>) -> ObservedDataset {
        ObservedDataset {
            m: self.m,
            n: self.n,
            scale: self.scale.clone(),
            triples,
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
        }
    }

    /// Observed `(item, rating)` pairs per user, sorted by item.
    pub fn by_user(&self) -> Vec<Vec<(usize, usize)>> {
        let mut rows = vec![Vec::new(); self.m];
        for t in &self.triples {
            rows[t.user].push((t.item, t.rating));
        }
        for row in &mut rows {
            row.sort_unstable();
        }
        rows
    }

    pub fn user_slice(&self, user: usize) -> Result<UserSlice> {
        if user >= self.m {
            return Err(Error::invalid(format!(
                "user index {user} out of range (m = {})",
                self.m
            )));
        }
        let mut entries: Vec<(usize, usize)> = self
            .triples
            .iter()
            .filter(|t| t.user == user)
            .map(|t| (t.item, t.rating))
            .collect();
        entries.sort_unstable();
        Ok(UserSlice {
            user,
            n: self.n,
            k: self.k(),
            entries,
        })
    }

    pub fn user_index(&self, external: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == external)
    }

    pub fn item_index(&self, external: &str) -> Option<usize> {
        self.item_ids.iter().position(|u| u == external)
    }

    /// Writes tab-separated `user item rating` lines with external IDs.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.triples {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                self.user_ids[t.user],
                self.item_ids[t.item],
                self.scale.value(t.rating)
            );
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Sparse view of one user's one-hot slice `U_i ∈ ℝ^{n×(k+1)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSlice {
    pub user: usize,
    pub n: usize,
    pub k: usize,
    /// `(item, rating index)` pairs sorted by item; all other items are channel 0.
    pub entries: Vec<(usize, usize)>,
}

impl UserSlice {
    pub fn channel(&self, item: usize) -> usize {
        match self.entries.binary_search_by_key(&item, |&(j, _)| j) {
            Ok(p) => self.entries[p].1,
            Err(_) => 0,
        }
    }

    pub fn dense(&self) -> Matrix {
        let mut u = Matrix::zeros(self.n, self.k + 1);
        for j in 0..self.n {
            u.set(j, 0, 1.0);
        }
        for &(j, kappa) in &self.entries {
            u.set(j, 0, 0.0);
            u.set(j, kappa, 1.0);
        }
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
    /// Split each user's triples separately instead of one global shuffle.
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.9,
            validation: 0.05,
            test: 0.05,
            seed: 0,
            stratified: false,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        let fr = [self.train, self.validation, self.test];
        if fr.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::invalid(format!(
                "split fractions must be positive, got {fr:?}"
            )));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "split fractions must sum to 1, got {fr:?}"
            )));
        }
        Ok(())
    }

    /// Part sizes `(train, validation, test)` for `len` items.
    fn sizes(&self, len: usize) -> (usize, usize, usize) {
        let v = (self.validation * len as f64).round() as usize;
        let t = (self.test * len as f64).round() as usize;
        let v = v.min(len);
        let t = t.min(len - v);
        (len - v - t, v, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Part {
    Train,
    Validation,
    Test,
}

impl Part {
    pub fn tag(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Validation => "validation",
            Part::Test => "test",
        }
    }

    fn from_tag(tag: &str) -> Option<Part> {
        match tag {
            "train" => Some(Part::Train),
            "validation" => Some(Part::Validation),
            "test" => Some(Part::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: ObservedDataset,
    pub validation: ObservedDataset,
    pub test: ObservedDataset,
}

impl Splits {
    pub fn part(&self, part: Part) -> &ObservedDataset {
        match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        }
    }
}

pub fn split(data: &ObservedDataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let len = data.len();
    if len < 3 {
        return Err(Error::invalid(format!(
            "cannot split {len} triples into three parts"
        )));
    }
    let mut rng = Rng::new(spec.seed);
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    if spec.stratified {
        for mut row in group_by_user(data) {
            rng.shuffle(&mut row);
            let (a, b, _) = spec.sizes(row.len());
            train.extend_from_slice(&row[..a]);
            validation.extend_from_slice(&row[a..a + b]);
            test.extend_from_slice(&row[a + b..]);
        }
    } else {
        let mut all = data.triples.clone();
        rng.shuffle(&mut all);
        let (a, b, _) = spec.sizes(len);
        train.extend_from_slice(&all[..a]);
        validation.extend_from_slice(&all[a..a + b]);
        test.extend_from_slice(&all[a + b..]);
    }
    for (name, part) in [
        ("train", &train),
        ("validation", &validation),
        ("test", &test),
    ] {
        if part.is_empty() {
            return Err(Error::invalid(format!(
                "split fractions {:?} leave the {name} part empty for N = {len}",
                [spec.train, spec.validation, spec.test]
            )));
        }
    }
    Ok(Splits {
        train: data.with_triples(train),
        validation: data.with_triples(validation),
        test: data.with_triples(test),
    })
}

fn group_by_user(data: &ObservedDataset) -> Vec<Vec<Triple>> {
    let mut rows = vec![Vec::new(); data.m];
    for t in &data.triples {
        rows[t.user].push(*t);
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Delimiter {
    DoubleColon,
    Tab,
    Comma,
}

impl Delimiter {
    fn detect(line: &str) -> Option<Self> {
        if line.contains("::") {
            Some(Delimiter::DoubleColon)
        } else if line.contains('\t') {
            Some(Delimiter::Tab)
        } else if line.contains(',') {
            Some(Delimiter::Comma)
        } else {
            None
        }
    }

    fn split<'a>(self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::DoubleColon => line.split("::").collect(),
            Delimiter::Tab => line.split('\t').collect(),
            Delimiter::Comma => line.split(',').collect(),
        }
    }
}

struct RawRow {
    line: usize,
    user: String,
    item: String,
    rating: f64,
    part: Option<Part>,
}

fn parse_rows(path: &Path, text: &str, with_part: bool) -> Result<Vec<RawRow>> {
    let mut delimiter = None;
    let mut rows = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    let mut first_data_line = true;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let delim = match delimiter {
            Some(d) => d,
            None => {
                let d = Delimiter::detect(line).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: "no tab, comma or '::' delimiter found".into(),
                })?;
                delimiter = Some(d);
                d
            }
        };
        let fields: Vec<&str> = delim.split(line).iter().map(|f| f.trim()).collect();
        let header_candidate = std::mem::replace(&mut first_data_line, false);
        let expected = if with_part { 4 } else { 3 };
        if fields.len() < expected || (!with_part && fields.len() > 4) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!(
                    "expected user, item, rating[, timestamp]; got {} fields",
                    fields.len()
                ),
            });
        }
        let rating = match fields[2].parse::<f64>() {
            Ok(r) if r.is_finite() => r,
            _ if header_candidate => continue,
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("rating {:?} is not a number", fields[2]),
                })
            }
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: "empty user or item ID".into(),
            });
        }
        let part = if with_part {
            Some(Part::from_tag(fields[3]).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("unknown part tag {:?}", fields[3]),
            })?)
        } else {
            None
        };
        let key = (fields[0].to_string(), fields[1].to_string());
        if let Some(&first) = seen.get(&key) {
            return Err(Error::DuplicateEntry {
                path: path.to_path_buf(),
                user: key.0,
                item: key.1,
                first_line: first,
                second_line: line_no,
            });
        }
        seen.insert(key.clone(), line_no);
        rows.push(RawRow {
            line: line_no,
            user: key.0,
            item: key.1,
            rating,
            part,
        });
    }
    Ok(rows)
}

/// Sorted ID vocabulary: numeric order when every ID is an integer.
fn vocabulary<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut distinct: Vec<&str> = ids.collect();
    distinct.sort_unstable();
    distinct.dedup();
    let numeric: Option<Vec<i128>> = distinct.iter().map(|s| s.parse::<i128>().ok()).collect();
    match numeric {
        Some(nums) => {
            let mut pairs: Vec<(i128, &str)> = nums.into_iter().zip(distinct).collect();
            pairs.sort();
            pairs.into_iter().map(|(_, s)| s.to_string()).collect()
        }
        None => distinct.into_iter().map(str::to_string).collect(),
    }
}

fn build(
    path: &Path,
    rows: &[RawRow],
    scale: Option<RatingScale>,
) -> Result<(Vec<String>, Vec<String>, RatingScale, Vec<Triple>)> {
    let scale = match scale {
        Some(s) => s,
        None if rows.is_empty() => RatingScale::integer(5)?,
        None => {
            let mut values: Vec<f64> = rows.iter().map(|r| r.rating).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            RatingScale::new(values).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: rows[0].line,
                msg: format!(
                    "cannot infer a rating scale from the file ({e}); pass one explicitly"
                ),
            })?
        }
    };
    let user_ids = vocabulary(rows.iter().map(|r| r.user.as_str()));
    let item_ids = vocabulary(rows.iter().map(|r| r.item.as_str()));
    let user_pos: HashMap<&str, usize> = user_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let item_pos: HashMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let triples = rows
        .iter()
        .map(|r| {
            let rating = scale.index_of(r.rating).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: r.line,
                msg: format!("rating {} is not on the scale {{{scale}}}", r.rating),
            })?;
            Ok(Triple {
                user: user_pos[r.user.as_str()],
                item: item_pos[r.item.as_str()],
                rating,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((user_ids, item_ids, scale, triples))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads `user, item, rating[, timestamp]` lines separated by tabs, commas
/// or `::`. A non-numeric first line is treated as a header. Without an
/// explicit scale, the distinct rating values in the file form the scale.
pub fn load_ratings(path: &Path, scale: Option<RatingScale>) -> Result<ObservedDataset> {
    let text = read(path)?;
    let rows = parse_rows(path, &text, false)?;
    let (user_ids, item_ids, scale, triples) = build(path, &rows, scale)?;
    Ok(ObservedDataset {
        m: user_ids.len(),
        n: item_ids.len(),
        scale,
        triples,
        user_ids,
        item_ids,
    })
}

/// Writes every triple with its part tag so a split can be replayed exactly.
pub fn write_manifest(path: &Path, splits: &Splits) -> Result<()> {
    let mut out = format!("# scale={}\n", splits.train.scale);
    for part in [Part::Train, Part::Validation, Part::Test] {
        let data = splits.part(part);
        for t in &data.triples {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                data.user_ids[t.user],
                data.item_ids[t.item],
                data.scale.value(t.rating),
                part.tag()
            );
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Splits> {
    let text = read(path)?;
    let scale = text
        .lines()
        .find_map(|l| l.strip_prefix("# scale="))
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "missing '# scale=' line".into(),
        })?
        .parse::<RatingScale>()?;
    let rows = parse_rows(path, &text, true)?;
    let (user_ids, item_ids, scale, triples) = build(path, &rows, Some(scale))?;
    let mut parts: BTreeMap<&str, Vec<Triple>> = BTreeMap::new();
    for (row, t) in rows.iter().zip(triples) {
        parts
            .entry(row.part.expect("parsed with parts").tag())
            .or_default()
            .push(t);
    }
    let base = ObservedDataset {
        m: user_ids.len(),
        n: item_ids.len(),
        scale,
        triples: Vec::new(),
        user_ids,
        item_ids,
    };
    let mut take = |p: Part| base.with_triples(parts.remove(p.tag()).unwrap_or_default());
    Ok(Splits {
        train: take(Part::Train),
        validation: take(Part::Validation),
        test: take(Part::Test),
    })
}
