//! DBnomics series fetching: one REST call per requested series, a local
//! byte cache keyed by the request, bounded retries, and partial results
//! kept when some series fail.

use std::path::{Path, PathBuf};
use std::time::Duration;

use panelvar::panel::Month;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::manifest::hex_string;
use crate::{validation, CliResult};

pub const DEFAULT_BASE_URL: &str = "https://api.db.nomics.world/v22";

/// One row of the series-list CSV: where the series lives upstream and how
/// the panel should label and transform it.
#[derive(Debug, Clone)]
pub struct SeriesRequest {
    pub provider: String,
    pub dataset: String,
    pub series: String,
    pub code: String,
    pub country: String,
    pub transform: u8,
    pub name: String,
}

impl SeriesRequest {
    pub fn id(&self) -> String {
        format!("{}/{}/{}", self.provider, self.dataset, self.series)
    }
}

#[derive(Debug)]
pub struct FetchOutcome {
    pub fetched: usize,
    pub errors: Vec<(SeriesRequest, String)>,
}

/// Reads the series list; columns provider, dataset, series, code, country,
/// transform, with name optional.
pub fn read_series_list(path: &Path) -> CliResult<Vec<SeriesRequest>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| validation(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| -> CliResult<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| validation(format!("{} lacks column {name}", path.display())))
    };
    let (pi, di, si) = (col("provider")?, col("dataset")?, col("series")?);
    let (ci, ui, ti) = (col("code")?, col("country")?, col("transform")?);
    let ni = headers.iter().position(|h| h == "name");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| validation(format!("{}: {e}", path.display())))?;
        let get = |i: usize| rec.get(i).unwrap_or_default().to_string();
        let transform: u8 = get(ti)
            .parse()
            .map_err(|_| validation(format!("{}: bad transform {:?}", path.display(), get(ti))))?;
        let code = get(ci);
        out.push(SeriesRequest {
            provider: get(pi),
            dataset: get(di),
            series: get(si),
            name: ni
                .map(|i| get(i))
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| code.clone()),
            code,
            country: get(ui),
            transform,
        });
    }
    if out.is_empty() {
        return Err(validation(format!("{} lists no series", path.display())));
    }
    Ok(out)
}

/// Fetches every listed series and writes the wide data CSV, the variable
/// list, and (when anything failed) fetch_errors.csv. Failed series are
/// dropped from the data; successes are kept.
pub fn run_fetch(cfg: &Config, out: &Path) -> CliResult<FetchOutcome> {
    let list_path = cfg.existing_path("fetch.series")?;
    let requests = read_series_list(&list_path)?;
    let base_url = cfg
        .get("fetch.base_url")
        .unwrap_or(DEFAULT_BASE_URL)
        .trim_end_matches('/')
        .to_string();
    let cache_dir = cfg
        .get("fetch.cache_dir")
        .map(PathBuf::from)
        .unwrap_or_else(|| out.join("cache"));
    let retries: usize = cfg.parse_or("fetch.retries", 3)?;
    let base_ms: u64 = cfg.parse_or("fetch.retry_base_ms", 500)?;
    std::fs::create_dir_all(&cache_dir)
        .map_err(|e| validation(format!("cannot create {}: {e}", cache_dir.display())))?;

    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(|e| validation(format!("http client: {e}")))?;

    let mut fetched: Vec<(SeriesRequest, Month, Vec<Option<f64>>)> = Vec::new();
    let mut errors: Vec<(SeriesRequest, String)> = Vec::new();
    for req in requests {
        let url = format!(
            "{base_url}/series/{}/{}/{}?observations=1",
            req.provider, req.dataset, req.series
        );
        match fetch_one(&client, &url, &cache_dir, retries, base_ms) {
            Ok(bytes) => match parse_dbnomics(&bytes) {
                Ok((start, values)) => fetched.push((req, start, values)),
                Err(e) => errors.push((req, e)),
            },
            Err(e) => errors.push((req, e)),
        }
    }

    if !fetched.is_empty() {
        write_wide_csv(&out.join(crate::store::DATA_FILE), &fetched)?;
        write_variable_list(&out.join(crate::store::VARS_FILE), &fetched)?;
    }
    if !errors.is_empty() {
        let path = out.join("fetch_errors.csv");
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| validation(format!("cannot write {}: {e}", path.display())))?;
        let res: Result<(), csv::Error> = (|| {
            w.write_record(["provider", "dataset", "series", "error"])?;
            for (req, msg) in &errors {
                w.write_record([&req.provider, &req.dataset, &req.series, msg])?;
            }
            w.flush()?;
            Ok(())
        })();
        res.map_err(|e| validation(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(FetchOutcome {
        fetched: fetched.len(),
        errors,
    })
}

/// Cache-or-network bytes for one request URL. The cache key is the URL
/// hash, so a hit is by construction the same request.
fn fetch_one(
    client: &reqwest::blocking::Client,
    url: &str,
    cache_dir: &Path,
    retries: usize,
    base_ms: u64,
) -> Result<Vec<u8>, String> {
    let key = hex_string(&Sha256::digest(url.as_bytes()));
    let cache_file = cache_dir.join(format!("{key}.json"));
    if cache_file.is_file() {
        log::info!("cache hit for {url}");
        return std::fs::read(&cache_file).map_err(|e| format!("cache read: {e}"));
    }
    let mut last_err = String::new();
    for attempt in 0..retries.max(1) {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(base_ms << (attempt - 1)));
        }
        match try_get(client, url) {
            Ok(bytes) => {
                if let Err(e) = std::fs::write(&cache_file, &bytes) {
                    return Err(format!("cache write: {e}"));
                }
                return Ok(bytes);
            }
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

fn try_get(client: &reqwest::blocking::Client, url: &str) -> Result<Vec<u8>, String> {
    let resp = client.get(url).send().map_err(|e| e.to_string())?;
    let status = resp.status();
    if !status.is_success() {
        return Err(format!("HTTP {status}"));
    }
    resp.bytes().map(|b| b.to_vec()).map_err(|e| e.to_string())
}

/// Extracts (first period, per-month values) from a DBnomics series
/// response; "NA" and null observations become gaps.
pub fn parse_dbnomics(bytes: &[u8]) -> Result<(Month, Vec<Option<f64>>), String> {
    let v: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| format!("response JSON: {e}"))?;
    let docs = v
        .pointer("/series/docs")
        .and_then(|d| d.as_array())
        .ok_or("response lacks series.docs")?;
    let doc = docs.first().ok_or("series not found")?;
    let periods = doc
        .get("period")
        .and_then(|p| p.as_array())
        .ok_or("series lacks periods")?;
    let values = doc
        .get("value")
        .and_then(|p| p.as_array())
        .ok_or("series lacks values")?;
    if periods.len() != values.len() {
        return Err("period and value lengths differ".into());
    }
    if periods.is_empty() {
        return Err("series is empty".into());
    }
    let months: Vec<Month> = periods
        .iter()
        .map(|p| {
            p.as_str()
                .ok_or_else(|| "non-string period".to_string())
                .and_then(|s| s.parse::<Month>().map_err(|e| e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let start = months[0];
    let span = months[months.len() - 1].since(start);
    if span < 0 {
        return Err("periods out of order".into());
    }
    let mut out: Vec<Option<f64>> = vec![None; span as usize + 1];
    for (m, val) in months.iter().zip(values) {
        let slot = m.since(start);
        if slot < 0 || slot as usize >= out.len() {
            return Err("periods out of order".into());
        }
        out[slot as usize] = match val {
            serde_json::Value::Number(n) => n.as_f64(),
            _ => None,
        };
    }
    Ok((start, out))
}

fn write_wide_csv(path: &Path, rows: &[(SeriesRequest, Month, Vec<Option<f64>>)]) -> CliResult<()> {
    let lo = rows.iter().map(|(_, s, _)| *s).min().unwrap();
    let hi = rows
        .iter()
        .map(|(_, s, v)| s.plus(v.len() as i32 - 1))
        .max()
        .unwrap();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| validation(format!("cannot write {}: {e}", path.display())))?;
    let res: Result<(), csv::Error> = (|| {
        let mut header = vec!["period".to_string()];
        header.extend(
            rows.iter()
                .map(|(r, _, _)| format!("{}.{}", r.country, r.code)),
        );
        w.write_record(&header)?;
        for t in 0..=hi.since(lo) {
            let month = lo.plus(t);
            let mut rec = vec![month.to_string()];
            for (_, start, values) in rows {
                let idx = month.since(*start);
                let cell = if idx >= 0 && (idx as usize) < values.len() {
                    values[idx as usize]
                        .map(|x| x.to_string())
                        .unwrap_or_default()
                } else {
                    String::new()
                };
                rec.push(cell);
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| validation(format!("cannot write {}: {e}", path.display())))
}

fn write_variable_list(
    path: &Path,
    rows: &[(SeriesRequest, Month, Vec<Option<f64>>)],
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| validation(format!("cannot write {}: {e}", path.display())))?;
    let res: Result<(), csv::Error> = (|| {
        w.write_record(["code", "country", "transform", "name"])?;
        for (r, _, _) in rows {
            w.write_record([
                r.code.as_str(),
                r.country.as_str(),
                &r.transform.to_string(),
                r.name.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| validation(format!("cannot write {}: {e}", path.display())))
}
