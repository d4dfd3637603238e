//! Run-directory persistence: the aligned data a run consumed and the
//! per-equation posterior draws, in CSV layouts the loaders round-trip.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use panelvar::gibbs::ChainDraws;
use panelvar::panel::{build_equation_design, load_dataset, write_panel_csv, PanelDataset};
use panelvar::pvar::{EquationPosterior, PanelDims, PvarPosterior};
use panelvar::vamp::ApproxPosterior;

use crate::manifest::{EquationInfo, RunManifest};
use crate::{validation, CliResult};

pub const DATA_FILE: &str = "data.csv";
pub const VARS_FILE: &str = "variables.csv";
pub const DRAWS_DIR: &str = "draws";

/// One line in the manifest documents everything under draws/.
pub const DRAWS_LAYOUT: &str = "draws/own_{country}_{eq}.csv: draw, a_0..a_{k-1}, \
     psi2_0..psi2_{k-1}, lambda2 (one row per saved draw); draws/stacked_mean.csv: \
     country, eq, coord, mean";

/// Writes the aligned panel the run consumed. The emitted values are already
/// transformed, so the variable list carries transform code 0 and reloading
/// reproduces the matrix bit for bit.
pub fn write_data_echo(dir: &Path, ds: &PanelDataset) -> CliResult<(PathBuf, PathBuf)> {
    let data = dir.join(DATA_FILE);
    let vars = dir.join(VARS_FILE);
    write_panel_csv(ds, &data).map_err(validation)?;
    let mut w = csv::Writer::from_path(&vars)
        .map_err(|e| validation(format!("cannot write {}: {e}", vars.display())))?;
    w.write_record(["code", "country", "transform", "name"])
        .and_then(|_| {
            for spec in ds.specs() {
                w.write_record([spec.code.as_str(), spec.country.as_str(), "0", &spec.name])?;
            }
            w.flush()?;
            Ok(())
        })
        .map_err(|e| validation(format!("cannot write {}: {e}", vars.display())))?;
    Ok((data, vars))
}

pub fn load_data_echo(dir: &Path) -> CliResult<PanelDataset> {
    load_dataset(&dir.join(DATA_FILE), &dir.join(VARS_FILE)).map_err(validation)
}

/// Persists every equation's draws under draws/; see DRAWS_LAYOUT.
pub fn write_draws(dir: &Path, post: &PvarPosterior) -> CliResult<()> {
    let ddir = dir.join(DRAWS_DIR);
    std::fs::create_dir_all(&ddir)
        .map_err(|e| validation(format!("cannot create {}: {e}", ddir.display())))?;
    for ep in &post.equations {
        let path = ddir.join(format!("own_{}_{}.csv", ep.country, ep.eq));
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| validation(format!("cannot write {}: {e}", path.display())))?;
        let k = ep.chain.dim();
        let mut header = vec!["draw".to_string()];
        header.extend((0..k).map(|q| format!("a_{q}")));
        header.extend((0..k).map(|q| format!("psi2_{q}")));
        header.push("lambda2".into());
        let rows: Result<(), csv::Error> = (|| {
            w.write_record(&header)?;
            for d in 0..ep.chain.n_save() {
                let mut rec = vec![d.to_string()];
                rec.extend((0..k).map(|q| ep.chain.a[(d, q)].to_string()));
                rec.extend((0..k).map(|q| ep.chain.psi2[(d, q)].to_string()));
                rec.push(ep.chain.lambda2[d].to_string());
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok(())
        })();
        rows.map_err(|e| validation(format!("cannot write {}: {e}", path.display())))?;
    }
    let spath = ddir.join("stacked_mean.csv");
    let mut w = csv::Writer::from_path(&spath)
        .map_err(|e| validation(format!("cannot write {}: {e}", spath.display())))?;
    let result: Result<(), csv::Error> = (|| {
        w.write_record(["country", "eq", "coord", "mean"])?;
        for ep in &post.equations {
            for q in 0..ep.approx.mean.len() {
                w.write_record([
                    ep.country.to_string(),
                    ep.eq.to_string(),
                    q.to_string(),
                    ep.approx.mean[q].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    result.map_err(|e| validation(format!("cannot write {}: {e}", spath.display())))?;
    Ok(())
}

/// Manifest rows describing each equation of a fitted posterior.
pub fn equation_infos(post: &PvarPosterior) -> Vec<EquationInfo> {
    post.equations
        .iter()
        .map(|ep| EquationInfo {
            country: ep.country,
            eq: ep.eq,
            k: ep.chain.dim(),
            k_stacked: ep.approx.mean.len(),
            t_eff: ep.t_eff,
            vamp_converged: ep.approx.converged,
            vamp_iterations: ep.approx.iterations,
            clamp_events: ep.approx.clamp_events,
            var_scalar: ep.approx.var_scalar,
            sigma2_hat: ep.approx.sigma2_hat,
            ess: ep.chain.ess.clone(),
        })
        .collect()
}

/// Rebuilds the posterior from a run directory. Column roles are
/// reconstructed from the echoed data, then checked against the stored
/// dimensions so a mismatched directory fails loudly.
pub fn read_draws(dir: &Path, ds: &PanelDataset, m: &RunManifest) -> CliResult<PvarPosterior> {
    let p = m.panel.p;
    let dims = PanelDims::from_dataset(ds, p);
    if dims.m != m.panel.m {
        return Err(validation(format!(
            "run directory {} was estimated on a different panel layout",
            dir.display()
        )));
    }
    let by_eq: BTreeMap<(usize, usize), &EquationInfo> =
        m.equations.iter().map(|e| ((e.country, e.eq), e)).collect();
    let stacked = read_stacked_means(&dir.join(DRAWS_DIR).join("stacked_mean.csv"))?;

    let mut equations = Vec::new();
    for i in 0..dims.n_units() {
        for j in 0..dims.m[i] {
            let info = by_eq
                .get(&(i, j))
                .ok_or_else(|| validation(format!("manifest lists no equation ({i},{j})")))?;
            let design = build_equation_design(ds, i, j, p).map_err(validation)?;
            let (a, psi2, lambda2) = read_own_csv(
                &dir.join(DRAWS_DIR).join(format!("own_{i}_{j}.csv")),
                info.k,
            )?;
            let mean = stacked.get(&(i, j)).cloned().unwrap_or_default();
            if mean.len() != design.roles.len() || mean.len() != info.k_stacked {
                return Err(validation(format!(
                    "equation ({i},{j}): stored stacked block has {} coordinates, expected {}",
                    mean.len(),
                    design.roles.len()
                )));
            }
            if a.nrows() != m.n_save {
                return Err(validation(format!(
                    "equation ({i},{j}): {} stored draws, manifest says {}",
                    a.nrows(),
                    m.n_save
                )));
            }
            equations.push(EquationPosterior {
                country: i,
                eq: j,
                chain: ChainDraws {
                    a,
                    psi2,
                    lambda2,
                    ess: info.ess.clone(),
                },
                approx: ApproxPosterior {
                    mean: DVector::from_vec(mean),
                    var_scalar: info.var_scalar,
                    sigma2_hat: info.sigma2_hat,
                    converged: info.vamp_converged,
                    iterations: info.vamp_iterations,
                    clamp_events: info.clamp_events,
                    trace: Vec::new(),
                },
                roles: design.roles,
                t_eff: info.t_eff,
            });
        }
    }
    Ok(PvarPosterior { dims, equations })
}

fn read_own_csv(path: &Path, k: usize) -> CliResult<(DMatrix<f64>, DMatrix<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    let width = rdr
        .headers()
        .map_err(|e| validation(format!("{}: {e}", path.display())))?
        .len();
    if width != 2 * k + 2 {
        return Err(validation(format!(
            "{}: {} columns, expected {} for k = {k}",
            path.display(),
            width,
            2 * k + 2
        )));
    }
    let mut a_rows: Vec<Vec<f64>> = Vec::new();
    let mut psi_rows: Vec<Vec<f64>> = Vec::new();
    let mut lambda2 = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| validation(format!("{}: {e}", path.display())))?;
        let cell = |idx: usize| -> CliResult<f64> {
            rec.get(idx)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| validation(format!("{}: bad cell in column {idx}", path.display())))
        };
        let mut a = Vec::with_capacity(k);
        let mut psi = Vec::with_capacity(k);
        for q in 0..k {
            a.push(cell(1 + q)?);
            psi.push(cell(1 + k + q)?);
        }
        lambda2.push(cell(1 + 2 * k)?);
        a_rows.push(a);
        psi_rows.push(psi);
    }
    let n = a_rows.len();
    let a = DMatrix::from_fn(n, k, |r, c| a_rows[r][c]);
    let psi2 = DMatrix::from_fn(n, k, |r, c| psi_rows[r][c]);
    Ok((a, psi2, lambda2))
}

fn read_stacked_means(path: &Path) -> CliResult<BTreeMap<(usize, usize), Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    let mut out: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| validation(format!("{}: {e}", path.display())))?;
        let field = |idx: usize| -> CliResult<&str> {
            rec.get(idx)
                .ok_or_else(|| validation(format!("{}: short row", path.display())))
        };
        let country: usize = field(0)?
            .parse()
            .map_err(|_| validation(format!("{}: bad country cell", path.display())))?;
        let eq: usize = field(1)?
            .parse()
            .map_err(|_| validation(format!("{}: bad eq cell", path.display())))?;
        let coord: usize = field(2)?
            .parse()
            .map_err(|_| validation(format!("{}: bad coord cell", path.display())))?;
        let mean: f64 = field(3)?
            .parse()
            .map_err(|_| validation(format!("{}: bad mean cell", path.display())))?;
        let entry = out.entry((country, eq)).or_default();
        if coord != entry.len() {
            return Err(validation(format!(
                "{}: coordinates of ({country},{eq}) out of order",
                path.display()
            )));
        }
        entry.push(mean);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::PanelInfo;
    use panelvar::gibbs::McmcConfig;
    use panelvar::pvar::estimate_pvar;
    use panelvar::sim::{simulate_pvar, SimSpec};
    use panelvar::vamp::VampConfig;

    fn small_run() -> (PanelDataset, PvarPosterior) {
        let mut spec = SimSpec::new(2, 2, 1, 60);
        spec.sparsity = 0.3;
        spec.seed = 5;
        let (ds, _) = simulate_pvar(&spec).unwrap();
        let mcmc = McmcConfig {
            n_burn: 20,
            n_save: 40,
            thin: 1,
            seed: 11,
            freeze_scales: None,
        };
        let post = estimate_pvar(&ds, 1, &VampConfig::default(), &mcmc).unwrap();
        (ds, post)
    }

    #[test]
    fn draws_round_trip_exactly() {
        let (ds, post) = small_run();
        let dir = tempfile::tempdir().unwrap();
        write_data_echo(dir.path(), &ds).unwrap();
        write_draws(dir.path(), &post).unwrap();
        let m = RunManifest {
            tool: "test".into(),
            seed: 11,
            data_fingerprint: String::new(),
            config: Default::default(),
            panel: PanelInfo {
                n_units: 2,
                m: vec![2, 2],
                p: 1,
                t_len: ds.t_len(),
            },
            equations: equation_infos(&post),
            n_save: post.n_save(),
            timings_ms: Default::default(),
            draws_layout: DRAWS_LAYOUT.into(),
        };
        let echoed = load_data_echo(dir.path()).unwrap();
        assert_eq!(echoed.series().as_slice(), ds.series().as_slice());
        let back = read_draws(dir.path(), &echoed, &m).unwrap();
        assert_eq!(back.equations.len(), post.equations.len());
        for (a, b) in back.equations.iter().zip(&post.equations) {
            assert_eq!(a.chain.a.as_slice(), b.chain.a.as_slice());
            assert_eq!(a.chain.psi2.as_slice(), b.chain.psi2.as_slice());
            assert_eq!(a.chain.lambda2, b.chain.lambda2);
            assert_eq!(a.approx.mean.as_slice(), b.approx.mean.as_slice());
            assert_eq!(a.approx.var_scalar, b.approx.var_scalar);
            assert_eq!(a.approx.sigma2_hat, b.approx.sigma2_hat);
            assert_eq!(a.roles, b.roles);
            assert_eq!(a.t_eff, b.t_eff);
        }
    }

    #[test]
    fn mismatched_draw_count_is_rejected() {
        let (ds, post) = small_run();
        let dir = tempfile::tempdir().unwrap();
        write_data_echo(dir.path(), &ds).unwrap();
        write_draws(dir.path(), &post).unwrap();
        let m = RunManifest {
            tool: "test".into(),
            seed: 11,
            data_fingerprint: String::new(),
            config: Default::default(),
            panel: PanelInfo {
                n_units: 2,
                m: vec![2, 2],
                p: 1,
                t_len: ds.t_len(),
            },
            equations: equation_infos(&post),
            n_save: post.n_save() + 1,
            timings_ms: Default::default(),
            draws_layout: DRAWS_LAYOUT.into(),
        };
        let err = read_draws(dir.path(), &ds, &m).unwrap_err();
        assert!(err.to_string().contains("stored draws"));
    }
}
