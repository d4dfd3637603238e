//! Monthly panel ingestion and per-equation design construction.
//!
//! A panel holds N cross-section units ("countries"), unit i contributing
//! M_i monthly series, all observed over one common window of T months.
//! Units and series keep the order of the input configuration; that order
//! fixes the global column layout used everywhere downstream.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::horseshoe::ColumnClass;

/// Calendar month, the panel's time unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    index: i32, // year * 12 + (month - 1)
}

impl Month {
    pub fn new(year: i32, month: u8) -> Self {
        assert!((1..=12).contains(&month), "month out of range");
        Month {
            index: year * 12 + i32::from(month) - 1,
        }
    }

    pub fn year(&self) -> i32 {
        self.index.div_euclid(12)
    }

    pub fn month(&self) -> u8 {
        (self.index.rem_euclid(12) + 1) as u8
    }

    pub fn plus(&self, months: i32) -> Month {
        Month {
            index: self.index + months,
        }
    }

    /// Whole months from `earlier` to `self`.
    pub fn since(&self, earlier: Month) -> i32 {
        self.index - earlier.index
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for Month {
    type Err = Error;

    fn from_str(s: &str) -> Result<Month> {
        let err = || Error::Ingestion(format!("bad period {s:?}, expected YYYY-MM"));
        let (y, m) = s.split_once('-').ok_or_else(err)?;
        let year: i32 = y.parse().map_err(|_| err())?;
        let month: u8 = m.parse().map_err(|_| err())?;
        if !(1..=12).contains(&month) {
            return Err(err());
        }
        Ok(Month::new(year, month))
    }
}

/// How a raw level series enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// Code 0: series used as is.
    Level,
    /// Code 1: 100 * (x_t / x_{t-12} - 1).
    YoyGrowth,
    /// Code 2: 100 * (x_t / x_{t-1} - 1).
    MomGrowth,
}

impl Transform {
    pub fn from_code(code: u8) -> Result<Transform> {
        match code {
            0 => Ok(Transform::Level),
            1 => Ok(Transform::YoyGrowth),
            2 => Ok(Transform::MomGrowth),
            other => Err(Error::UnknownTransform(other)),
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Transform::Level => 0,
            Transform::YoyGrowth => 1,
            Transform::MomGrowth => 2,
        }
    }

    /// Leading observations consumed by the transform.
    pub fn lead_loss(&self) -> usize {
        match self {
            Transform::Level => 0,
            Transform::YoyGrowth => 12,
            Transform::MomGrowth => 1,
        }
    }
}

/// One series of the panel: identifier, display name, unit it belongs to and
/// the transform applied at ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSpec {
    pub code: String,
    pub name: String,
    pub country: String,
    pub transform: Transform,
}

/// A raw series before alignment: an anchor month and values from there on,
/// `None` marking months the source did not cover.
#[derive(Debug, Clone)]
pub struct RawSeries {
    pub spec: VariableSpec,
    pub start: Month,
    pub values: Vec<Option<f64>>,
}

/// Applies a growth transform; the output is shorter than the input by the
/// transform's lead loss.
pub fn transform_series(raw: &[f64], transform: Transform) -> Result<Vec<f64>> {
    transform_named(raw, transform, "<unnamed>", None)
}

fn transform_named(
    raw: &[f64],
    transform: Transform,
    series: &str,
    start: Option<Month>,
) -> Result<Vec<f64>> {
    let lag = transform.lead_loss();
    if raw.len() < lag + 1 {
        return Err(Error::SeriesTooShort {
            series: series.to_string(),
            needed: lag + 1,
            got: raw.len(),
        });
    }
    if transform == Transform::Level {
        return Ok(raw.to_vec());
    }
    if let Some(bad) = raw.iter().position(|&x| x <= 0.0) {
        let period = match start {
            Some(s) => s.plus(bad as i32).to_string(),
            None => format!("offset {bad}"),
        };
        return Err(Error::NonPositiveLevel {
            series: series.to_string(),
            period,
        });
    }
    Ok((lag..raw.len())
        .map(|t| 100.0 * (raw[t] / raw[t - lag] - 1.0))
        .collect())
}

/// One cross-section unit and its series, in configuration order.
#[derive(Debug, Clone)]
pub struct CountryBlock {
    pub code: String,
    pub vars: Vec<VariableSpec>,
}

/// An aligned panel: the T x n data matrix, its time index and the unit
/// layout that maps columns to (country, variable) pairs.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    countries: Vec<CountryBlock>,
    series: DMatrix<f64>,
    time_index: Vec<Month>,
}

impl PanelDataset {
    pub fn new(
        countries: Vec<CountryBlock>,
        series: DMatrix<f64>,
        time_index: Vec<Month>,
    ) -> Result<Self> {
        let n: usize = countries.iter().map(|c| c.vars.len()).sum();
        if n == 0 {
            return Err(Error::Ingestion("panel has no series".into()));
        }
        if series.ncols() != n {
            return Err(Error::Dimension(format!(
                "{} data columns for {} configured series",
                series.ncols(),
                n
            )));
        }
        if series.nrows() != time_index.len() {
            return Err(Error::Dimension(format!(
                "{} data rows for {} periods",
                series.nrows(),
                time_index.len()
            )));
        }
        if series.nrows() == 0 {
            return Err(Error::EmptySample {
                detail: "zero aligned periods".into(),
            });
        }
        for w in time_index.windows(2) {
            if w[1].since(w[0]) != 1 {
                return Err(Error::Ingestion(format!(
                    "time index not contiguous at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        for c in &countries {
            if c.vars.is_empty() {
                return Err(Error::EmptyCountry(c.code.clone()));
            }
        }
        if series.iter().any(|x| !x.is_finite()) {
            return Err(Error::Ingestion("panel contains non-finite values".into()));
        }
        Ok(PanelDataset {
            countries,
            series,
            time_index,
        })
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    /// Total number of series across all units.
    pub fn n_vars(&self) -> usize {
        self.series.ncols()
    }

    pub fn t_len(&self) -> usize {
        self.series.nrows()
    }

    pub fn m(&self, country: usize) -> usize {
        self.countries[country].vars.len()
    }

    pub fn country(&self, country: usize) -> &CountryBlock {
        &self.countries[country]
    }

    pub fn countries(&self) -> &[CountryBlock] {
        &self.countries
    }

    /// First global column of a unit's block.
    pub fn col_offset(&self, country: usize) -> usize {
        self.countries[..country].iter().map(|c| c.vars.len()).sum()
    }

    pub fn col_index(&self, country: usize, var: usize) -> usize {
        self.col_offset(country) + var
    }

    /// Country index of each global column.
    pub fn country_of_cols(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_vars());
        for (ci, c) in self.countries.iter().enumerate() {
            out.extend(std::iter::repeat(ci).take(c.vars.len()));
        }
        out
    }

    /// Variable spec of each global column, in column order.
    pub fn specs(&self) -> Vec<&VariableSpec> {
        self.countries.iter().flat_map(|c| c.vars.iter()).collect()
    }

    pub fn series(&self) -> &DMatrix<f64> {
        &self.series
    }

    pub fn value(&self, t: usize, col: usize) -> f64 {
        self.series[(t, col)]
    }

    pub fn time(&self, t: usize) -> Month {
        self.time_index[t]
    }

    pub fn time_index(&self) -> &[Month] {
        &self.time_index
    }

    /// The panel restricted to its first `t_end` periods.
    pub fn window(&self, t_end: usize) -> PanelDataset {
        assert!(t_end >= 1 && t_end <= self.t_len());
        PanelDataset {
            countries: self.countries.clone(),
            series: self.series.rows(0, t_end).into_owned(),
            time_index: self.time_index[..t_end].to_vec(),
        }
    }

    /// Last `p` rows, newest first, as needed to seed forecast recursions.
    pub fn recent_lags(&self, p: usize) -> DMatrix<f64> {
        assert!(p >= 1 && p <= self.t_len());
        let t = self.t_len();
        let mut lags = DMatrix::zeros(p, self.n_vars());
        for l in 0..p {
            lags.row_mut(l).copy_from(&self.series.row(t - 1 - l));
        }
        lags
    }
}

/// Joins raw series on their common post-transform window.
///
/// Series with an interior gap are dropped with a warning, growth transforms
/// consume their leading observations, and the surviving series are
/// intersected on time. Unit order and within-unit order follow the order of
/// first appearance in `raw`.
pub fn align_panel(raw: Vec<RawSeries>) -> Result<PanelDataset> {
    struct Aligned {
        spec: VariableSpec,
        start: Month,
        values: Vec<f64>,
    }

    let mut aligned: Vec<Aligned> = Vec::new();
    for rs in raw {
        let label = format!("{}.{}", rs.spec.country, rs.spec.code);
        let lead = rs.values.iter().take_while(|v| v.is_none()).count();
        let tail = rs.values.iter().rev().take_while(|v| v.is_none()).count();
        if lead + tail >= rs.values.len() {
            log::warn!("dropping {label}: no observations");
            continue;
        }
        let inner = &rs.values[lead..rs.values.len() - tail];
        if inner.iter().any(|v| v.is_none()) {
            log::warn!("dropping {label}: interior gap in coverage");
            continue;
        }
        let levels: Vec<f64> = inner.iter().map(|v| v.unwrap()).collect();
        if levels.iter().any(|x| !x.is_finite()) {
            log::warn!("dropping {label}: non-finite values");
            continue;
        }
        let start = rs.start.plus(lead as i32);
        let values = transform_named(&levels, rs.spec.transform, &label, Some(start))?;
        let start = start.plus(rs.spec.transform.lead_loss() as i32);
        aligned.push(Aligned {
            spec: rs.spec,
            start,
            values,
        });
    }
    if aligned.is_empty() {
        return Err(Error::EmptySample {
            detail: "no series survived ingestion".into(),
        });
    }

    let lo = aligned.iter().map(|a| a.start).max().unwrap();
    let hi = aligned
        .iter()
        .map(|a| a.start.plus(a.values.len() as i32 - 1))
        .min()
        .unwrap();
    if hi < lo {
        let last_start = aligned.iter().max_by_key(|a| a.start).unwrap();
        let first_end = aligned
            .iter()
            .min_by_key(|a| a.start.plus(a.values.len() as i32 - 1))
            .unwrap();
        return Err(Error::EmptySample {
            detail: format!(
                "{}.{} starts {} but {}.{} ends {}",
                last_start.spec.country,
                last_start.spec.code,
                last_start.start,
                first_end.spec.country,
                first_end.spec.code,
                first_end.start.plus(first_end.values.len() as i32 - 1),
            ),
        });
    }
    let t_len = (hi.since(lo) + 1) as usize;

    let mut countries: Vec<CountryBlock> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for a in &aligned {
        let from = lo.since(a.start) as usize;
        let col = a.values[from..from + t_len].to_vec();
        match countries.iter_mut().find(|c| c.code == a.spec.country) {
            Some(block) => block.vars.push(a.spec.clone()),
            None => countries.push(CountryBlock {
                code: a.spec.country.clone(),
                vars: vec![a.spec.clone()],
            }),
        }
        columns.push(col);
    }
    // aligned series arrive grouped by first appearance of the country, but the
    // matrix must follow block order; re-sort columns accordingly
    let mut order: Vec<usize> = (0..aligned.len()).collect();
    let country_rank = |spec: &VariableSpec| {
        countries
            .iter()
            .position(|c| c.code == spec.country)
            .unwrap()
    };
    order.sort_by_key(|&idx| (country_rank(&aligned[idx].spec), idx));
    let n = aligned.len();
    let mut series = DMatrix::zeros(t_len, n);
    for (dst, &src) in order.iter().enumerate() {
        for t in 0..t_len {
            series[(t, dst)] = columns[src][t];
        }
    }
    let time_index: Vec<Month> = (0..t_len as i32).map(|d| lo.plus(d)).collect();
    PanelDataset::new(countries, series, time_index)
}

/// Where a stacked-regressor column comes from; drives both the shrinkage
/// class split and the reassembly of system matrices from equation draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    /// Lag `lag` (1-based) of variable `var` of another unit.
    OtherLag {
        country: usize,
        lag: usize,
        var: usize,
    },
    /// Contemporaneous value of an earlier equation of the same unit.
    OwnContemp { eq: usize },
    /// Contemporaneous value of variable `var` of an earlier unit.
    PrecedingContemp { country: usize, var: usize },
}

impl ColumnRole {
    pub fn class(&self) -> ColumnClass {
        match self {
            ColumnRole::OtherLag { .. } => ColumnClass::OtherLag,
            _ => ColumnClass::Contemporaneous,
        }
    }
}

/// Regression pieces for one equation: its target, the own-lag block and the
/// stacked block of everything else.
#[derive(Debug, Clone)]
pub struct EquationDesign {
    pub country: usize,
    pub eq: usize,
    pub p: usize,
    /// T_eff response vector.
    pub y: DVector<f64>,
    /// T_eff x k own-lag block, k = M_i * p, ordered lag 1 block, lag 2 block, ...
    pub x_own: DMatrix<f64>,
    /// T_eff x K stacked block; the role list documents its column order.
    pub z_other: DMatrix<f64>,
    pub roles: Vec<ColumnRole>,
}

impl EquationDesign {
    pub fn t_eff(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x_own.ncols()
    }

    pub fn big_k(&self) -> usize {
        self.z_other.ncols()
    }

    pub fn classes(&self) -> Vec<ColumnClass> {
        self.roles.iter().map(|r| r.class()).collect()
    }
}

/// Number of stacked-block columns for equation (i, j), 0-based j.
pub fn stacked_width(m: &[usize], p: usize, i: usize, j: usize) -> usize {
    let n: usize = m.iter().sum();
    let before: usize = m[..i].iter().sum();
    (n - m[i]) * p + j + before
}

/// Builds the regression for equation j of unit i (both 0-based) with p lags.
///
/// Row t of the stacked block holds, in order: lags 1..p of every other
/// unit's variables (units in panel order, lag-major within a unit), the
/// contemporaneous values of this unit's earlier equations, and the
/// contemporaneous values of all earlier units' variables.
pub fn build_equation_design(
    ds: &PanelDataset,
    i: usize,
    j: usize,
    p: usize,
) -> Result<EquationDesign> {
    if p == 0 {
        return Err(Error::Config("lag order must be at least 1".into()));
    }
    if i >= ds.n_countries() || j >= ds.m(i) {
        return Err(Error::Dimension(format!(
            "equation ({i},{j}) outside panel with {} units",
            ds.n_countries()
        )));
    }
    let t_len = ds.t_len();
    if t_len <= p {
        return Err(Error::EmptySample {
            detail: format!("{t_len} periods cannot support {p} lags"),
        });
    }
    let t_eff = t_len - p;
    let m_i = ds.m(i);
    let k = m_i * p;
    if t_eff <= k {
        return Err(Error::InsufficientObservations {
            country: i,
            eq: j,
            t_eff,
            k,
        });
    }

    let off_i = ds.col_offset(i);
    let mut y = DVector::zeros(t_eff);
    let mut x_own = DMatrix::zeros(t_eff, k);
    let big_k = stacked_width(
        &(0..ds.n_countries()).map(|c| ds.m(c)).collect::<Vec<_>>(),
        p,
        i,
        j,
    );
    let mut z_other = DMatrix::zeros(t_eff, big_k);
    let mut roles = Vec::with_capacity(big_k);

    for (row, t) in (p..t_len).enumerate() {
        y[row] = ds.value(t, off_i + j);
        for lag in 1..=p {
            for v in 0..m_i {
                x_own[(row, (lag - 1) * m_i + v)] = ds.value(t - lag, off_i + v);
            }
        }
        let mut col = 0;
        for c in 0..ds.n_countries() {
            if c == i {
                continue;
            }
            let off_c = ds.col_offset(c);
            for lag in 1..=p {
                for v in 0..ds.m(c) {
                    z_other[(row, col)] = ds.value(t - lag, off_c + v);
                    if row == 0 {
                        roles.push(ColumnRole::OtherLag {
                            country: c,
                            lag,
                            var: v,
                        });
                    }
                    col += 1;
                }
            }
        }
        for s in 0..j {
            z_other[(row, col)] = ds.value(t, off_i + s);
            if row == 0 {
                roles.push(ColumnRole::OwnContemp { eq: s });
            }
            col += 1;
        }
        for c in 0..i {
            let off_c = ds.col_offset(c);
            for v in 0..ds.m(c) {
                z_other[(row, col)] = ds.value(t, off_c + v);
                if row == 0 {
                    roles.push(ColumnRole::PrecedingContemp { country: c, var: v });
                }
                col += 1;
            }
        }
        debug_assert_eq!(col, big_k);
    }
    debug_assert_eq!(roles.len(), big_k);

    Ok(EquationDesign {
        country: i,
        eq: j,
        p,
        y,
        x_own,
        z_other,
        roles,
    })
}

/// Reads a variable list CSV with columns code,country,transform and an
/// optional name column.
pub fn read_specs_csv(path: &Path) -> Result<Vec<VariableSpec>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let idx = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (code_i, country_i, transform_i) = match (idx("code"), idx("country"), idx("transform")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::Ingestion(format!(
                "{} must have code,country,transform columns",
                path.display()
            )))
        }
    };
    let name_i = idx("name");
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let code = rec
            .get(code_i)
            .ok_or_else(|| Error::Ingestion("short record in variable list".into()))?
            .to_string();
        let country = rec.get(country_i).unwrap_or_default().to_string();
        let tcode: u8 = rec
            .get(transform_i)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::Ingestion(format!("bad transform code for {country}.{code}")))?;
        if code.is_empty() || country.is_empty() {
            return Err(Error::Ingestion(
                "empty code or country in variable list".into(),
            ));
        }
        if !seen.insert((country.clone(), code.clone())) {
            return Err(Error::Ingestion(format!(
                "duplicate series {country}.{code} in variable list"
            )));
        }
        let name = name_i
            .and_then(|ni| rec.get(ni))
            .filter(|s| !s.is_empty())
            .unwrap_or(&code)
            .to_string();
        out.push(VariableSpec {
            code,
            name,
            country,
            transform: Transform::from_code(tcode)?,
        });
    }
    if out.is_empty() {
        return Err(Error::Ingestion(format!(
            "{} lists no series",
            path.display()
        )));
    }
    Ok(out)
}

/// Reads a wide data CSV (first column a YYYY-MM period, one column per
/// series named COUNTRY.CODE, empty cells for months without coverage) and
/// pairs it with the variable list.
pub fn read_panel_csv(path: &Path, specs: &[VariableSpec]) -> Result<Vec<RawSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Ingestion(format!("{} is empty", path.display())));
    }
    let mut col_of = Vec::with_capacity(specs.len());
    for spec in specs {
        let wanted = format!("{}.{}", spec.country, spec.code);
        let pos = headers
            .iter()
            .position(|h| h == wanted)
            .ok_or_else(|| Error::Ingestion(format!("{} lacks column {wanted}", path.display())))?;
        col_of.push(pos);
    }

    let mut months: Vec<Month> = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); specs.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let period: Month = rec
            .get(0)
            .ok_or_else(|| Error::Ingestion("missing period cell".into()))?
            .parse()?;
        if let Some(&last) = months.last() {
            if period.since(last) != 1 {
                return Err(Error::Ingestion(format!(
                    "{}: periods must advance by one month ({last} -> {period})",
                    path.display()
                )));
            }
        }
        months.push(period);
        for (s, &ci) in col_of.iter().enumerate() {
            let cell = rec.get(ci).unwrap_or_default();
            if cell.is_empty() {
                cells[s].push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Ingestion(format!(
                        "{}: bad number {cell:?} in column {}",
                        path.display(),
                        headers.get(ci).unwrap_or("?")
                    ))
                })?;
                cells[s].push(Some(v));
            }
        }
    }
    if months.is_empty() {
        return Err(Error::EmptySample {
            detail: format!("{} has no data rows", path.display()),
        });
    }
    let start = months[0];
    Ok(specs
        .iter()
        .zip(cells)
        .map(|(spec, values)| RawSeries {
            spec: spec.clone(),
            start,
            values,
        })
        .collect())
}

/// Reads and aligns a panel from the wide data CSV and its variable list.
pub fn load_dataset(panel_csv: &Path, specs_csv: &Path) -> Result<PanelDataset> {
    let specs = read_specs_csv(specs_csv)?;
    let raw = read_panel_csv(panel_csv, &specs)?;
    align_panel(raw)
}

/// Writes a dataset back out in the wide CSV layout `read_panel_csv` accepts.
pub fn write_panel_csv(ds: &PanelDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["period".to_string()];
    for spec in ds.specs() {
        header.push(format!("{}.{}", spec.country, spec.code));
    }
    w.write_record(&header)?;
    for t in 0..ds.t_len() {
        let mut row = vec![ds.time(t).to_string()];
        for c in 0..ds.n_vars() {
            row.push(ds.value(t, c).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the variable list companion of `write_panel_csv`.
pub fn write_specs_csv(ds: &PanelDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["code", "country", "transform", "name"])?;
    for spec in ds.specs() {
        w.write_record([
            spec.code.as_str(),
            spec.country.as_str(),
            &spec.transform.code().to_string(),
            spec.name.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
