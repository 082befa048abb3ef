//! Ingestion, chronological splitting, z-score scaling and windowing of
//! multivariate series.

use std::io::Read;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `T x f` matrix of observations, one row per timestep in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    values: Array2<f64>,
    feature_names: Vec<String>,
    sample_rate: String,
}

impl TimeSeriesFrame {
    pub fn new(values: Array2<f64>, feature_names: Vec<String>) -> Result<Self> {
        if values.ncols() != feature_names.len() {
            return Err(Error::shape(
                format!("{} feature names", values.ncols()),
                feature_names.len(),
            ));
        }
        if let Some(((row, col), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Parse {
                location: format!("row {row}, column {col}"),
                message: format!("non-finite value {v}"),
            });
        }
        Ok(Self {
            values,
            feature_names,
            sample_rate: String::new(),
        })
    }

    /// Frame with generated feature names `f0, f1, ...`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let names = default_names(values.ncols());
        Self::new(values, names)
    }

    pub fn with_sample_rate(mut self, rate: impl Into<String>) -> Self {
        self.sample_rate = rate.into();
        self
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn sample_rate(&self) -> &str {
        &self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `[start, end)` as a new frame with the same metadata.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            values: self.values.slice(s![start..end, ..]).to_owned(),
            feature_names: self.feature_names.clone(),
            sample_rate: self.sample_rate.clone(),
        }
    }

    fn map_values(&self, values: Array2<f64>) -> Self {
        Self {
            values,
            feature_names: self.feature_names.clone(),
            sample_rate: self.sample_rate.clone(),
        }
    }
}

fn default_names(f: usize) -> Vec<String> {
    (0..f).map(|i| format!("f{i}")).collect()
}

/// Reads a comma-separated file of decimal reals, one timestep per row.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, has_header)
}

pub fn parse_csv<R: Read>(reader: R, has_header: bool) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut names = if has_header {
        let header = rdr.headers().map_err(|e| Error::Parse {
            location: "header".into(),
            message: e.to_string(),
        })?;
        Some(header.iter().map(str::to_owned).collect::<Vec<_>>())
    } else {
        None
    };

    let mut data = Vec::new();
    let mut width: Option<usize> = names.as_ref().map(Vec::len);
    let mut rows = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            location: format!("record {i}"),
            message: e.to_string(),
        })?;
        // Fully blank lines are skipped by the csv reader; a single empty
        // field is still a ragged/non-numeric row.
        match width {
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    location: format!("row {i}"),
                    message: format!("ragged row: expected {w} fields, found {}", record.len()),
                })
            }
            None => width = Some(record.len()),
            _ => {}
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                location: format!("row {i}, column {j}"),
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    location: format!("row {i}, column {j}"),
                    message: format!("non-finite cell {cell:?}"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }

    let f = width.unwrap_or(0);
    if rows == 0 || f == 0 {
        return Err(Error::EmptyInput(format!("{rows} rows x {f} columns")));
    }
    let values = Array2::from_shape_vec((rows, f), data).expect("row widths checked");
    let names = names.take().unwrap_or_else(|| default_names(f));
    TimeSeriesFrame::new(values, names)
}

/// Writes a frame as CSV with a one-line header of feature names.
pub fn write_csv(frame: &TimeSeriesFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_matrix_csv(path, frame.feature_names(), frame.values())
}

pub(crate) fn write_matrix_csv(
    path: &Path,
    header: &[String],
    values: ArrayView2<'_, f64>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidConfig(format!("{other:?}")),
    })?;
    let to_err = |e: csv::Error| Error::InvalidConfig(format!("writing {}: {e}", path.display()));
    wtr.write_record(header).map_err(to_err)?;
    for row in values.rows() {
        wtr.write_record(row.iter().map(|v| v.to_string())).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.75,
            valid_frac: 0.05,
            test_frac: 0.20,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.valid_frac, self.test_frac];
        if fracs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::InvalidSplit(format!("fractions must be positive: {fracs:?}")));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Segment lengths for a series of `t` rows: floor for train and valid,
    /// remainder to test.
    pub fn lengths(&self, t: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
        let floor = |frac: f64| (frac * t as f64 + 1e-9).floor() as usize;
        let train = floor(self.train_frac);
        let valid = floor(self.valid_frac);
        let test = t.saturating_sub(train + valid);
        if train == 0 || valid == 0 || test == 0 {
            return Err(Error::TooShort(format!(
                "T={t} gives segments ({train}, {valid}, {test})"
            )));
        }
        Ok((train, valid, test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: TimeSeriesFrame,
    pub valid: TimeSeriesFrame,
    pub test: TimeSeriesFrame,
}

pub fn chronological_split(frame: &TimeSeriesFrame, spec: &SplitSpec) -> Result<Splits> {
    if frame.len() < 3 {
        return Err(Error::TooShort(format!("T={} < 3", frame.len())));
    }
    let (train, valid, _) = spec.lengths(frame.len())?;
    Ok(Splits {
        train: frame.slice_rows(0, train),
        valid: frame.slice_rows(train, train + valid),
        test: frame.slice_rows(train + valid, frame.len()),
    })
}

/// Per-feature z-score parameters (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub per_feature_mean: Vec<f64>,
    pub per_feature_std: Vec<f64>,
}

/// Standard deviations at or below this are treated as a constant feature.
const CONSTANT_STD: f64 = 1e-12;

pub fn fit_scaler(train: &TimeSeriesFrame) -> ScalerState {
    let values = train.values();
    let n = values.nrows() as f64;
    let mut mean = Vec::with_capacity(values.ncols());
    let mut std = Vec::with_capacity(values.ncols());
    for col in values.columns() {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        mean.push(m);
        std.push(if sd > CONSTANT_STD * m.abs().max(1.0) { sd } else { 1.0 });
    }
    ScalerState {
        per_feature_mean: mean,
        per_feature_std: std,
    }
}

impl ScalerState {
    pub fn identity(f: usize) -> Self {
        Self {
            per_feature_mean: vec![0.0; f],
            per_feature_std: vec![1.0; f],
        }
    }

    pub fn n_features(&self) -> usize {
        self.per_feature_mean.len()
    }

    fn check(&self, f: usize) -> Result<()> {
        if self.n_features() != f {
            return Err(Error::shape(
                format!("{} features (scaler)", self.n_features()),
                format!("{f} features"),
            ));
        }
        Ok(())
    }

    /// Scales the columns of a `rows x f` matrix.
    pub fn transform(&self, values: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(values.ncols())?;
        let mut out = values.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.per_feature_mean[j], self.per_feature_std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn inverse(&self, values: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(values.ncols())?;
        let mut out = values.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.per_feature_mean[j], self.per_feature_std[j]);
            col.mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }

    pub fn inverse_row(&self, row: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let m = row.to_owned().insert_axis(Axis(0));
        Ok(self.inverse(m.view())?.remove_axis(Axis(0)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path.as_ref())
    }
}

pub fn apply_scaler(frame: &TimeSeriesFrame, state: &ScalerState) -> Result<TimeSeriesFrame> {
    Ok(frame.map_values(state.transform(frame.values())?))
}

pub fn invert_scaler(frame: &TimeSeriesFrame, state: &ScalerState) -> Result<TimeSeriesFrame> {
    Ok(frame.map_values(state.inverse(frame.values())?))
}

/// One unit of supervision: `w` consecutive rows and the row that follows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedExample {
    pub condition: Array2<f64>,
    pub target: Array1<f64>,
}

/// Lazily indexed sliding windows over one split.
///
/// Example `i` conditions on rows `[i, i + w)` and targets row `i + w`.
#[derive(Debug, Clone)]
pub struct WindowSet {
    values: Array2<f64>,
    window: usize,
}

/// A time-major batch: `steps[t]` is `[batch x f]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub steps: Vec<Array2<f64>>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.nrows() == 0
    }
}

impl WindowSet {
    pub fn new(frame: &TimeSeriesFrame, window: usize) -> Result<Self> {
        Self::from_values(frame.values().to_owned(), window)
    }

    pub fn from_values(values: Array2<f64>, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidSpec("window length must be at least 1".into()));
        }
        if values.nrows() < window + 1 {
            return Err(Error::TooShort(format!(
                "T={} needs at least w+1={} rows",
                values.nrows(),
                window + 1
            )));
        }
        Ok(Self { values, window })
    }

    pub fn len(&self) -> usize {
        self.values.nrows() - self.window
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn condition(&self, i: usize) -> ArrayView2<'_, f64> {
        self.values.slice(s![i..i + self.window, ..])
    }

    pub fn target(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i + self.window)
    }

    pub fn example(&self, i: usize) -> WindowedExample {
        WindowedExample {
            condition: self.condition(i).to_owned(),
            target: self.target(i).to_owned(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WindowedExample> + '_ {
        (0..self.len()).map(move |i| self.example(i))
    }

    /// Targets of every example stacked as `[len x f]`.
    pub fn targets(&self) -> ArrayView2<'_, f64> {
        self.values.slice(s![self.window.., ..])
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let f = self.n_features();
        let b = indices.len();
        let steps = (0..self.window)
            .map(|t| {
                let mut step = Array2::zeros((b, f));
                for (r, &i) in indices.iter().enumerate() {
                    step.row_mut(r).assign(&self.values.row(i + t));
                }
                step
            })
            .collect();
        let mut targets = Array2::zeros((b, f));
        for (r, &i) in indices.iter().enumerate() {
            targets.row_mut(r).assign(&self.target(i));
        }
        Batch { steps, targets }
    }

    /// All examples in order, chunked into batches of at most `size`.
    pub fn ordered_batches(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(move |start| self.batch(&idx[start..(start + size).min(idx.len())]))
    }
}

pub fn make_windows(frame: &TimeSeriesFrame, w: usize) -> Result<Vec<WindowedExample>> {
    Ok(WindowSet::new(frame, w)?.iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn ramp(t: usize, f: usize) -> TimeSeriesFrame {
        TimeSeriesFrame::from_values(Array2::from_shape_fn((t, f), |(i, j)| (i * f + j) as f64))
            .unwrap()
    }

    #[test]
    fn literal_csv_loads() {
        let frame = parse_csv("a,b\n1,2\n3,4\n5.5,-6e1\n".as_bytes(), true).unwrap();
        assert_eq!(frame.len(), 3);
        assert_eq!(frame.n_features(), 2);
        assert_eq!(frame.feature_names(), ["a", "b"]);
        assert_eq!(frame.values()[[2, 1]], -60.0);

        let no_header = parse_csv("1,2\n3,4\n".as_bytes(), false).unwrap();
        assert_eq!(no_header.feature_names(), ["f0", "f1"]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            parse_csv("1,2\n3,x\n".as_bytes(), false),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_csv("1,2\n3\n".as_bytes(), false),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_csv("1,2\nNaN,1\n".as_bytes(), false),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(parse_csv("".as_bytes(), false), Err(Error::EmptyInput(_))));
        assert!(matches!(parse_csv("a,b\n".as_bytes(), true), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_csv("/nonexistent/data.csv", true),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn split_lengths() {
        let spec = SplitSpec::default();
        assert_eq!(spec.lengths(1000).unwrap(), (750, 50, 200));
        assert_eq!(spec.lengths(7588).unwrap(), (5691, 379, 1518));
        assert_eq!(spec.lengths(20).unwrap(), (15, 1, 4));
        assert!(matches!(spec.lengths(10), Err(Error::TooShort(_))));
    }

    #[test]
    fn split_validation() {
        let bad = SplitSpec {
            train_frac: 0.8,
            valid_frac: 0.1,
            test_frac: 0.2,
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidSplit(_))));
        let neg = SplitSpec {
            train_frac: 1.1,
            valid_frac: -0.1,
            test_frac: 0.0,
        };
        assert!(neg.validate().is_err());
        let frame = ramp(2, 1);
        assert!(matches!(
            chronological_split(&frame, &SplitSpec::default()),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn split_concatenates_to_input() {
        let frame = ramp(103, 3);
        let s = chronological_split(&frame, &SplitSpec::default()).unwrap();
        let joined = ndarray::concatenate(
            Axis(0),
            &[s.train.values(), s.valid.values(), s.test.values()],
        )
        .unwrap();
        assert_eq!(joined, frame.values());
    }

    #[test]
    fn scaler_examples() {
        let frame = TimeSeriesFrame::from_values(array![[2.0, 5.0], [4.0, 5.0]]).unwrap();
        let state = fit_scaler(&frame);
        assert_eq!(state.per_feature_mean, vec![3.0, 5.0]);
        assert_eq!(state.per_feature_std, vec![1.0, 1.0]);
        let scaled = apply_scaler(&frame, &state).unwrap();
        assert_eq!(scaled.values(), array![[-1.0, 0.0], [1.0, 0.0]]);

        let constant = TimeSeriesFrame::from_values(array![[5.0], [5.0], [5.0]]).unwrap();
        let st = fit_scaler(&constant);
        assert_eq!(st.per_feature_std, vec![1.0]);
        assert_eq!(
            apply_scaler(&constant, &st).unwrap().values(),
            array![[0.0], [0.0], [0.0]]
        );
    }

    #[test]
    fn scaled_train_is_standardized() {
        let frame = TimeSeriesFrame::from_values(Array2::from_shape_fn((50, 2), |(i, j)| {
            ((i * 7 + j * 3) % 11) as f64 * 3.5 - 2.0
        }))
        .unwrap();
        let state = fit_scaler(&frame);
        let scaled = apply_scaler(&frame, &state).unwrap();
        for col in scaled.values().columns() {
            let m = col.mean().unwrap();
            let sd = col.std(0.0);
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(sd, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn scaler_wrong_width() {
        let state = ScalerState::identity(2);
        assert!(matches!(
            state.transform(Array2::<f64>::zeros((3, 1)).view()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn window_examples() {
        assert_eq!(make_windows(&ramp(100, 2), 10).unwrap().len(), 90);

        let frame = ramp(175, 1);
        let ws = make_windows(&frame, 174).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].target[0], 174.0);

        let frame = ramp(11, 1);
        let ws = make_windows(&frame, 10).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].condition.column(0).to_vec(), (0..10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(ws[0].target[0], 10.0);

        assert!(matches!(make_windows(&ramp(10, 1), 10), Err(Error::TooShort(_))));
    }

    #[test]
    fn batch_is_time_major() {
        let set = WindowSet::new(&ramp(20, 2), 3).unwrap();
        let b = set.batch(&[0, 5]);
        assert_eq!(b.steps.len(), 3);
        assert_eq!(b.steps[2].row(1), set.condition(5).row(2));
        assert_eq!(b.targets.row(0), set.target(0));
        let total: usize = set.ordered_batches(4).map(|b| b.len()).sum();
        assert_eq!(total, set.len());
    }
}
