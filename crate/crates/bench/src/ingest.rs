//! Loading observed features for semi-synthetic runs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use causalstrat_core::scm::{synthesize_outcomes, Features, Population, ScmConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub x_c: Vec<f64>,
    pub x_s: Vec<f64>,
    /// Rows skipped because a mapped cell was empty or `NA`.
    pub dropped: usize,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.x_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_c.is_empty()
    }

    pub fn features(&self) -> Vec<Features> {
        self.x_c.iter().zip(&self.x_s).map(|(&c, &s)| Features::scalar(c, s)).collect()
    }

    /// Draws latents and outcomes for the observed features.
    pub fn population(&self, cfg: &ScmConfig, seed: u64) -> Result<Population> {
        Ok(synthesize_outcomes(self.features(), cfg, seed)?)
    }
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null")
}

pub fn read_feature_csv<R: std::io::Read>(reader: R, xc_column: &str, xs_column: &str, standardize: bool) -> Result<FeatureTable> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(reader);
    let headers = rd.headers().context("reading CSV header")?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name).with_context(|| format!("column `{name}` not found in header"));
    let (jc, js) = (find(xc_column)?, find(xs_column)?);
    let mut table = FeatureTable { x_c: Vec::new(), x_s: Vec::new(), dropped: 0 };
    for (i, rec) in rd.records().enumerate() {
        let row = i + 2;
        let rec = rec.with_context(|| format!("malformed CSV at line {row}"))?;
        let (c, s) = (rec.get(jc).unwrap_or(""), rec.get(js).unwrap_or(""));
        if is_missing(c) || is_missing(s) {
            table.dropped += 1;
            continue;
        }
        let parse = |v: &str, col: &str| -> Result<f64> {
            let x: f64 = v.trim().parse().with_context(|| format!("line {row}, column `{col}`: `{v}` is not numeric"))?;
            if !x.is_finite() {
                bail!("line {row}, column `{col}`: value is not finite");
            }
            Ok(x)
        };
        table.x_c.push(parse(c, xc_column)?);
        table.x_s.push(parse(s, xs_column)?);
    }
    if table.is_empty() {
        bail!("mapped columns `{xc_column}`/`{xs_column}` have no usable rows");
    }
    if standardize {
        zscore(&mut table.x_c).with_context(|| format!("column `{xc_column}`"))?;
        zscore(&mut table.x_s).with_context(|| format!("column `{xs_column}`"))?;
    }
    Ok(table)
}

pub fn ingest_feature_csv(path: &Path, xc_column: &str, xs_column: &str, standardize: bool) -> Result<FeatureTable> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_feature_csv(f, xc_column, xs_column, standardize)
}

/// Centres and scales by the population standard deviation.
fn zscore(v: &mut [f64]) -> Result<()> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var.is_nan() || var <= 1e-24 * mean.abs().max(1.0).powi(2) {
        bail!("zero variance, cannot standardize");
    }
    let sd = var.sqrt();
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    Ok(())
}
