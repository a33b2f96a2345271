//! Wide-format longitudinal data: covariates, treatments and a terminal outcome
//! per subject, plus optional oracle-only latent confounder columns.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A binary treatment sequence over all visits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TreatmentRegime(Vec<u8>);

impl TreatmentRegime {
    pub fn new(a_bar: Vec<u8>) -> Result<Self> {
        if a_bar.iter().any(|&a| a > 1) {
            return Err(Error::InvalidArgument(format!("regime {a_bar:?} is not binary")));
        }
        Ok(Self(a_bar))
    }

    pub fn constant(visits: usize, value: u8) -> Self {
        Self(vec![value.min(1); visits])
    }

    pub fn always(visits: usize) -> Self {
        Self::constant(visits, 1)
    }

    pub fn never(visits: usize) -> Self {
        Self::constant(visits, 0)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of visits with treatment.
    pub fn cumulative_dose(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    /// All 2^J sequences in lexicographic order (000, 001, ...).
    pub fn enumerate(visits: usize) -> Vec<TreatmentRegime> {
        (0..1usize << visits)
            .map(|code| Self((0..visits).map(|j| ((code >> (visits - 1 - j)) & 1) as u8).collect()))
            .collect()
    }
}

impl fmt::Display for TreatmentRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl FromStr for TreatmentRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(Error::InvalidArgument(format!("bad regime '{s}'"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(v)
    }
}

/// Oracle-only latent values, `dims[j]` values per visit.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentColumns {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    width: usize,
    values: Vec<f64>,
}

impl LatentColumns {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, subject: usize, visit: usize) -> &[f64] {
        let start = subject * self.width + self.offsets[visit];
        &self.values[start..start + self.dims[visit]]
    }

    /// All latent values of visits `0..=visit` for a subject.
    pub fn history(&self, subject: usize, visit: usize) -> &[f64] {
        let start = subject * self.width;
        &self.values[start..start + self.offsets[visit] + self.dims[visit]]
    }

    pub fn column_names(&self) -> Vec<String> {
        let multi = self.dims.iter().any(|&d| d > 1);
        let mut names = Vec::with_capacity(self.width);
        for (j, &d) in self.dims.iter().enumerate() {
            for m in 0..d {
                names.push(if multi { format!("u{}_{}", j + 1, m + 1) } else { format!("u{}", j + 1) });
            }
        }
        names
    }
}

/// One subject's record, used to build datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    /// `x[j][k]`
    pub x: Vec<Vec<f64>>,
    pub a: Vec<u8>,
    pub y: f64,
    /// `u[j][m]`, oracle-only.
    pub u: Option<Vec<Vec<f64>>>,
}

/// n subjects by J visits. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    visits: usize,
    covariates: usize,
    ids: Vec<String>,
    x: Vec<f64>,
    a: Vec<u8>,
    y: Vec<f64>,
    latent: Option<LatentColumns>,
}

impl LongitudinalDataset {
    pub fn empty(visits: usize, covariates: usize) -> Self {
        Self { visits, covariates, ids: Vec::new(), x: Vec::new(), a: Vec::new(), y: Vec::new(), latent: None }
    }

    /// Builds a dataset from subject records. `latent_dims` must be given iff records carry `u`.
    pub fn from_records(
        visits: usize,
        covariates: usize,
        latent_dims: Option<Vec<usize>>,
        records: Vec<SubjectRecord>,
    ) -> Result<Self> {
        let n = records.len();
        let mut ids = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n * visits * covariates);
        let mut a = Vec::with_capacity(n * visits);
        let mut y = Vec::with_capacity(n);
        let mut latent = match latent_dims {
            None => None,
            Some(dims) => {
                if dims.len() != visits {
                    return Err(Error::InvalidData(format!(
                        "latent dims cover {} visits, expected {visits}",
                        dims.len()
                    )));
                }
                let mut offsets = Vec::with_capacity(visits);
                let mut acc = 0;
                for &d in &dims {
                    offsets.push(acc);
                    acc += d;
                }
                Some(LatentColumns { dims, offsets, width: acc, values: Vec::with_capacity(n * acc) })
            }
        };

        for (i, r) in records.into_iter().enumerate() {
            if r.x.len() != visits || r.a.len() != visits {
                return Err(Error::InvalidData(format!("subject {i} does not have exactly {visits} visits")));
            }
            for (j, xv) in r.x.iter().enumerate() {
                if xv.len() != covariates {
                    return Err(Error::InvalidData(format!("subject {i} visit {} has {} covariates", j + 1, xv.len())));
                }
                if xv.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidData(format!("subject {i} visit {} has a non-finite covariate", j + 1)));
                }
                x.extend_from_slice(xv);
            }
            if r.a.iter().any(|&v| v > 1) {
                return Err(Error::InvalidData(format!("subject {i} has a non-binary treatment")));
            }
            a.extend_from_slice(&r.a);
            if !r.y.is_finite() {
                return Err(Error::InvalidData(format!("subject {i} has a non-finite outcome")));
            }
            y.push(r.y);
            match (&mut latent, r.u) {
                (Some(l), Some(u)) => {
                    if u.len() != visits || u.iter().zip(&l.dims).any(|(v, &d)| v.len() != d) {
                        return Err(Error::InvalidData(format!("subject {i} latent shape mismatch")));
                    }
                    for v in u {
                        l.values.extend_from_slice(&v);
                    }
                }
                (None, None) => {}
                _ => return Err(Error::InvalidData(format!("subject {i} latent presence mismatch"))),
            }
            ids.push(r.id);
        }
        Ok(Self { visits, covariates, ids, x, a, y, latent })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn visits(&self) -> usize {
        self.visits
    }

    pub fn covariates(&self) -> usize {
        self.covariates
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn x(&self, i: usize, j: usize, k: usize) -> f64 {
        self.x[(i * self.visits + j) * self.covariates + k]
    }

    /// Covariates of visit `j`.
    pub fn x_visit(&self, i: usize, j: usize) -> &[f64] {
        let s = (i * self.visits + j) * self.covariates;
        &self.x[s..s + self.covariates]
    }

    /// Covariates of visits `0..=j`, visit-major.
    pub fn x_history(&self, i: usize, j: usize) -> &[f64] {
        let s = i * self.visits * self.covariates;
        &self.x[s..s + (j + 1) * self.covariates]
    }

    pub fn a(&self, i: usize, j: usize) -> u8 {
        self.a[i * self.visits + j]
    }

    pub fn treatments(&self, i: usize) -> &[u8] {
        &self.a[i * self.visits..(i + 1) * self.visits]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn latent(&self) -> Option<&LatentColumns> {
        self.latent.as_ref()
    }

    pub fn has_latent(&self) -> bool {
        self.latent.is_some()
    }

    pub fn covariates_binary(&self) -> bool {
        self.x.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Copy without the oracle-only latent columns.
    pub fn observed(&self) -> Self {
        Self { latent: None, ..self.clone() }
    }

    /// Estimator entry guard: latent columns may only be present when the
    /// caller is explicitly the U-included benchmark.
    pub fn ensure_estimable(&self, include_u: bool) -> Result<()> {
        match (include_u, self.has_latent()) {
            (false, true) => Err(Error::OracleColumns),
            (true, false) => Err(Error::MissingLatent),
            _ => Ok(()),
        }
    }

    /// Dataset made of the given subject rows (repeats allowed).
    pub fn select(&self, rows: &[usize]) -> Self {
        let per_x = self.visits * self.covariates;
        let mut out = Self::empty(self.visits, self.covariates);
        for &i in rows {
            out.ids.push(self.ids[i].clone());
            out.x.extend_from_slice(&self.x[i * per_x..(i + 1) * per_x]);
            out.a.extend_from_slice(self.treatments(i));
            out.y.push(self.y[i]);
        }
        out.latent = self.latent.as_ref().map(|l| {
            let mut values = Vec::with_capacity(rows.len() * l.width);
            for &i in rows {
                values.extend_from_slice(&l.values[i * l.width..(i + 1) * l.width]);
            }
            LatentColumns { values, ..l.clone() }
        });
        out
    }

    /// Same subjects with a different outcome vector.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::InvalidData(format!("outcome has {} entries, expected {}", y.len(), self.n())));
        }
        Ok(Self { y, ..self.clone() })
    }

    fn covariate_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for j in 0..self.visits {
            for k in 0..self.covariates {
                names.push(if self.covariates == 1 { format!("x{}", j + 1) } else { format!("x{}_{}", j + 1, k + 1) });
            }
        }
        names
    }

    /// Header: `id, x.., a1..aJ, y[, u..]`.
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["id".to_string()];
        h.extend(self.covariate_names());
        h.extend((1..=self.visits).map(|j| format!("a{j}")));
        h.push("y".into());
        if let Some(l) = &self.latent {
            h.extend(l.column_names());
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.write_csv_with_extras(w, &[])
    }

    /// Writes the dataset followed by extra numeric columns (e.g. `y_sf`).
    pub fn write_csv_with_extras<W: Write>(&self, w: W, extras: &[(&str, &[f64])]) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = self.csv_header();
        for (name, col) in extras {
            if col.len() != self.n() {
                return Err(Error::InvalidData(format!("extra column {name} has wrong length")));
            }
            header.push(name.to_string());
        }
        wr.write_record(&header)?;
        let per_x = self.visits * self.covariates;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            row.clear();
            row.push(self.ids[i].clone());
            row.extend(self.x[i * per_x..(i + 1) * per_x].iter().map(|v| v.to_string()));
            row.extend(self.treatments(i).iter().map(|v| v.to_string()));
            row.push(self.y[i].to_string());
            if let Some(l) = &self.latent {
                row.extend(l.values[i * l.width..(i + 1) * l.width].iter().map(|v| v.to_string()));
            }
            for (_, col) in extras {
                row.push(col[i].to_string());
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let (ds, extras) = Self::read_csv_with_extras(r)?;
        if let Some((name, _)) = extras.iter().next() {
            return Err(Error::InvalidData(format!("unexpected column '{name}'")));
        }
        Ok(ds)
    }

    /// Reads the wide format; columns that are not part of it are returned by name.
    pub fn read_csv_with_extras<R: Read>(r: R) -> Result<(Self, BTreeMap<String, Vec<f64>>)> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let layout = CsvLayout::parse(&header)?;

        let mut records = Vec::new();
        let mut extras: BTreeMap<String, Vec<f64>> =
            layout.extras.iter().map(|(name, _)| (name.clone(), Vec::new())).collect();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let field = |c: usize| -> Result<f64> {
                let s = rec.get(c).map(str::trim).unwrap_or("");
                if s.is_empty() {
                    return Err(Error::InvalidData(format!("missing value in row {} column '{}'", line + 1, header[c])));
                }
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidData(format!("bad number '{s}' in row {} column '{}'", line + 1, header[c])))
            };
            let id = rec.get(layout.id).unwrap_or("").trim().to_string();
            let mut x = vec![vec![0.0; layout.covariates]; layout.visits];
            for &(c, j, k) in &layout.x_cols {
                x[j][k] = field(c)?;
            }
            let mut a = vec![0u8; layout.visits];
            for &(c, j) in &layout.a_cols {
                let v = field(c)?;
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidData(format!("treatment a{} = {v} in row {} is not binary", j + 1, line + 1)));
                }
                a[j] = v as u8;
            }
            let y = field(layout.y)?;
            let u = if layout.u_dims.is_some() {
                let dims = layout.u_dims.as_ref().unwrap();
                let mut u: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
                for &(c, j, m) in &layout.u_cols {
                    u[j][m] = field(c)?;
                }
                Some(u)
            } else {
                None
            };
            for (name, c) in &layout.extras {
                extras.get_mut(name).unwrap().push(field(*c)?);
            }
            records.push(SubjectRecord { id, x, a, y, u });
        }
        let ds = Self::from_records(layout.visits, layout.covariates, layout.u_dims.clone(), records)?;
        Ok((ds, extras))
    }
}

struct CsvLayout {
    id: usize,
    y: usize,
    visits: usize,
    covariates: usize,
    x_cols: Vec<(usize, usize, usize)>,
    a_cols: Vec<(usize, usize)>,
    u_dims: Option<Vec<usize>>,
    u_cols: Vec<(usize, usize, usize)>,
    extras: Vec<(String, usize)>,
}

/// Parses `x3`, `x3_2`, `a2`, `u1`, `u2_1` style names into (prefix, visit, sub) with 0-based indices.
fn parse_indexed(name: &str) -> Option<(char, usize, Option<usize>)> {
    let mut chars = name.chars();
    let prefix = chars.next()?;
    if !matches!(prefix, 'x' | 'a' | 'u') {
        return None;
    }
    let rest = &name[1..];
    let (j, k) = match rest.split_once('_') {
        Some((j, k)) => (j, Some(k)),
        None => (rest, None),
    };
    let j: usize = j.parse().ok().filter(|&v| v >= 1)?;
    let k = match k {
        Some(k) => Some(k.parse::<usize>().ok().filter(|&v| v >= 1)? - 1),
        None => None,
    };
    if prefix == 'a' && k.is_some() {
        return None;
    }
    Some((prefix, j - 1, k))
}

impl CsvLayout {
    fn parse(header: &[String]) -> Result<Self> {
        let mut id = None;
        let mut y = None;
        let mut xs = Vec::new();
        let mut a_cols = Vec::new();
        let mut us = Vec::new();
        let mut extras = Vec::new();
        for (c, name) in header.iter().enumerate() {
            match name.as_str() {
                "id" => id = Some(c),
                "y" => y = Some(c),
                _ => match parse_indexed(name) {
                    Some(('x', j, k)) => xs.push((c, j, k.unwrap_or(0))),
                    Some(('a', j, _)) => a_cols.push((c, j)),
                    Some(('u', j, m)) => us.push((c, j, m.unwrap_or(0))),
                    _ => extras.push((name.clone(), c)),
                },
            }
        }
        let id = id.ok_or_else(|| Error::InvalidData("missing 'id' column".into()))?;
        let y = y.ok_or_else(|| Error::InvalidData("missing 'y' column".into()))?;
        let visits = a_cols.iter().map(|&(_, j)| j + 1).max().unwrap_or(0);
        if visits == 0 || a_cols.len() != visits {
            return Err(Error::InvalidData("treatment columns must be a1..aJ".into()));
        }
        let covariates = xs.iter().map(|&(_, _, k)| k + 1).max().unwrap_or(0);
        if xs.len() != visits * covariates || xs.iter().any(|&(_, j, _)| j >= visits) {
            return Err(Error::InvalidData("covariate columns must cover every visit".into()));
        }
        let u_dims = if us.is_empty() {
            None
        } else {
            let mut dims = vec![0usize; visits];
            for &(_, j, m) in &us {
                if j >= visits {
                    return Err(Error::InvalidData(format!("latent column for visit {} beyond J", j + 1)));
                }
                dims[j] = dims[j].max(m + 1);
            }
            if dims.iter().sum::<usize>() != us.len() {
                return Err(Error::InvalidData("latent columns are not contiguous".into()));
            }
            Some(dims)
        };
        Ok(Self { id, y, visits, covariates, x_cols: xs, a_cols, u_dims, u_cols: us, extras })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, x: &[f64], a: &[u8], y: f64, u: Option<&[f64]>) -> SubjectRecord {
        SubjectRecord {
            id: id.into(),
            x: x.iter().map(|&v| vec![v]).collect(),
            a: a.to_vec(),
            y,
            u: u.map(|u| u.iter().map(|&v| vec![v]).collect()),
        }
    }

    #[test]
    fn cumulative_dose_examples() {
        assert_eq!(TreatmentRegime::new(vec![0, 0, 0]).unwrap().cumulative_dose(), 0);
        assert_eq!(TreatmentRegime::new(vec![1, 1, 1]).unwrap().cumulative_dose(), 3);
        assert_eq!(TreatmentRegime::new(vec![0, 1, 1]).unwrap().cumulative_dose(), 2);
    }

    #[test]
    fn regime_parse_and_enumerate() {
        let r: TreatmentRegime = "101".parse().unwrap();
        assert_eq!(r.as_slice(), &[1, 0, 1]);
        assert_eq!(r.to_string(), "101");
        assert!("12".parse::<TreatmentRegime>().is_err());
        let all = TreatmentRegime::enumerate(3);
        assert_eq!(all.len(), 8);
        assert_eq!(all[0].to_string(), "000");
        assert_eq!(all[7].to_string(), "111");
    }

    #[test]
    fn rejects_non_binary_treatment_and_ragged_visits() {
        let bad = record("1", &[0.0, 1.0], &[0, 2], 1.0, None);
        assert!(LongitudinalDataset::from_records(2, 1, None, vec![bad]).is_err());
        let short = record("1", &[0.0], &[0], 1.0, None);
        assert!(LongitudinalDataset::from_records(2, 1, None, vec![short]).is_err());
    }

    #[test]
    fn estimator_guard() {
        let r = record("1", &[0.0, 1.0], &[0, 1], 1.0, Some(&[1.0, 0.0]));
        let ds = LongitudinalDataset::from_records(2, 1, Some(vec![1, 1]), vec![r]).unwrap();
        assert!(matches!(ds.ensure_estimable(false), Err(Error::OracleColumns)));
        assert!(ds.ensure_estimable(true).is_ok());
        let obs = ds.observed();
        assert!(obs.ensure_estimable(false).is_ok());
        assert!(matches!(obs.ensure_estimable(true), Err(Error::MissingLatent)));
    }

    #[test]
    fn header_layout() {
        let r = record("7", &[0.0, 1.0, 1.0], &[0, 1, 1], -2.5, Some(&[1.0, 0.0, 1.0]));
        let ds = LongitudinalDataset::from_records(3, 1, Some(vec![1, 1, 1]), vec![r]).unwrap();
        assert_eq!(ds.csv_header().join(","), "id,x1,x2,x3,a1,a2,a3,y,u1,u2,u3");
    }

    #[test]
    fn extras_are_returned_and_rejected_by_strict_reader() {
        let text = "id,x1,a1,y,y_sf\n1,0,1,2.5,2\n";
        let (ds, extras) = LongitudinalDataset::read_csv_with_extras(text.as_bytes()).unwrap();
        assert_eq!(ds.n(), 1);
        assert_eq!(extras["y_sf"], vec![2.0]);
        assert!(LongitudinalDataset::read_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn missing_values_rejected() {
        let text = "id,x1,a1,y\n1,,1,2.5\n";
        assert!(LongitudinalDataset::read_csv(text.as_bytes()).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = LongitudinalDataset> {
        (1usize..4, 0usize..3, prop::bool::ANY, 0usize..6).prop_flat_map(|(visits, cov, with_u, n)| {
            let subj = (
                prop::collection::vec(prop::collection::vec(prop::sample::select(vec![0.0, 1.0, 0.25, -3.5]), cov), visits),
                prop::collection::vec(0u8..2, visits),
                -1e6f64..1e6,
                prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), visits),
            );
            prop::collection::vec(subj, n).prop_map(move |rows| {
                let records = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (x, a, y, u))| SubjectRecord { id: format!("s{i}"), x, a, y, u: with_u.then_some(u) })
                    .collect();
                LongitudinalDataset::from_records(visits, cov, with_u.then(|| vec![2; visits]), records).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(ds in arb_dataset()) {
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).unwrap();
            if ds.n() > 0 {
                let back = LongitudinalDataset::read_csv(buf.as_slice()).unwrap();
                prop_assert_eq!(back, ds);
            }
        }
    }
}
