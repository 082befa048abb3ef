//! Fan charts: empirical 10/50/90 % quantile bands of sampled forecasts
//! with the realized series overlaid, one SVG per feature.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, ensure, Context, Result};
use ndarray::{Array2, ArrayView1};
use plotters::prelude::*;
use probcast::load_csv;

pub const QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `[windows x 3]` quantiles of one feature, `n` draws per window.
pub fn fan(samples: ArrayView1<'_, f64>, n: usize) -> Array2<f64> {
    let k = samples.len() / n;
    let mut out = Array2::zeros((k, QUANTILES.len()));
    for i in 0..k {
        let mut block: Vec<f64> = samples.iter().skip(i * n).take(n).copied().collect();
        block.sort_by(f64::total_cmp);
        for (q, &p) in QUANTILES.iter().enumerate() {
            out[[i, q]] = quantile(&block, p);
        }
    }
    out
}

fn output_paths(out: &Path, features: &[usize]) -> Vec<PathBuf> {
    if features.len() == 1 {
        return vec![out.to_path_buf()];
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("fan");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("svg");
    features
        .iter()
        .map(|j| out.with_file_name(format!("{stem}_{j}.{ext}")))
        .collect()
}

/// Reads a sample file (`n` rows per window) and a truth file (one row per
/// window) and writes a chart per selected feature; all features when
/// `features` is `None`. Returns the written paths.
pub fn cmd_plot(samples: &Path, truth: &Path, out: &Path, features: Option<&[usize]>) -> Result<Vec<PathBuf>> {
    let s = load_csv(samples, true).with_context(|| format!("cannot read samples {}", samples.display()))?;
    let t = load_csv(truth, true).with_context(|| format!("cannot read ground truth {}", truth.display()))?;
    let f = t.n_features();
    ensure!(
        s.n_features() == f,
        "samples have {} features, ground truth has {f}",
        s.n_features()
    );
    ensure!(
        s.len() % t.len() == 0,
        "{} sample rows are not a whole number of draws for {} windows",
        s.len(),
        t.len()
    );
    let n = s.len() / t.len();
    let selected: Vec<usize> = match features {
        Some(list) => list.to_vec(),
        None => (0..f).collect(),
    };
    ensure!(!selected.is_empty(), "no features selected");
    if let Some(&bad) = selected.iter().find(|&&j| j >= f) {
        return Err(anyhow!("feature index {bad} out of range: the files have {f} features"));
    }
    let paths = output_paths(out, &selected);
    for (&j, path) in selected.iter().zip(&paths) {
        let bands = fan(s.values().column(j), n);
        let name = &t.feature_names()[j];
        draw(path, name, &bands, t.values().column(j)).with_context(|| format!("cannot draw {}", path.display()))?;
    }
    Ok(paths)
}

fn draw(path: &Path, name: &str, bands: &Array2<f64>, truth: ArrayView1<'_, f64>) -> Result<()> {
    let k = bands.nrows();
    let (mut lo, mut hi) = bands
        .iter()
        .chain(truth.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.05).max(1e-6);
    lo -= pad;
    hi += pad;

    let root = SVGBackend::new(path, (960, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{name}: 10/50/90% sample quantiles"), ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(-0.5f64..(k as f64 - 0.5).max(0.5), lo..hi)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("window")
        .disable_x_mesh()
        .draw()
        .map_err(|e| anyhow!("{e}"))?;

    let band: Vec<(f64, f64)> = (0..k)
        .map(|i| (i as f64, bands[[i, 2]]))
        .chain((0..k).rev().map(|i| (i as f64, bands[[i, 0]])))
        .collect();
    chart
        .draw_series(std::iter::once(Polygon::new(band, BLUE.mix(0.2).filled())))
        .map_err(|e| anyhow!("{e}"))?
        .label("10-90%")
        .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 15, y + 5)], BLUE.mix(0.2).filled()));
    chart
        .draw_series(LineSeries::new((0..k).map(|i| (i as f64, bands[[i, 1]])), BLUE.stroke_width(2)))
        .map_err(|e| anyhow!("{e}"))?
        .label("median")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 15, y)], BLUE.stroke_width(2)));
    chart
        .draw_series(LineSeries::new(truth.iter().enumerate().map(|(i, &v)| (i as f64, v)), BLACK))
        .map_err(|e| anyhow!("{e}"))?
        .label("truth")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 15, y)], BLACK));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.1), 0.4);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn single_draw_collapses_the_band() {
        let f = fan(array![1.0, 2.0, 3.0].view(), 1);
        for i in 0..3 {
            assert_eq!(f[[i, 0]], f[[i, 2]]);
        }
    }
}
