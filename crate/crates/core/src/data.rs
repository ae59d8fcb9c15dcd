//! Panels of series, quantile discretization and Kendall τ-b screening.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::marginal::StateSpace;

/// A rectangular panel of K series observed at T time points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub names: Vec<String>,
    pub time_labels: Vec<String>,
    /// `values[k][t]`
    pub values: Vec<Vec<f64>>,
}

impl Panel {
    pub fn new(names: Vec<String>, time_labels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} series names for {} series",
                names.len(),
                values.len()
            )));
        }
        let t = time_labels.len();
        if let Some((k, _)) = values.iter().enumerate().find(|(_, v)| v.len() != t) {
            return Err(Error::Dimension(format!(
                "series '{}' has {} values, expected {t}",
                names[k],
                values[k].len()
            )));
        }
        Ok(Self {
            names,
            time_labels,
            values,
        })
    }

    pub fn n_series(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.time_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_labels.is_empty()
    }
}

/// Column conventions for delimited panel files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelSchema {
    /// Name of the column holding time labels. `None` auto-detects a first
    /// column called `time`, `t`, `date`, `period` or `quarter`.
    pub time_column: Option<String>,
    pub delimiter: u8,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            time_column: None,
            delimiter: b',',
        }
    }
}

const TIME_NAMES: [&str; 5] = ["time", "t", "date", "period", "quarter"];

pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<Panel> {
    let file = std::fs::File::open(path.as_ref())?;
    read_panel(file, schema)
}

pub fn read_panel<R: Read>(reader: R, schema: &PanelSchema) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let time_idx = match &schema.time_column {
        Some(name) => Some(header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            column: name.clone(),
            message: "time column not found in header".into(),
        })?),
        None => header
            .first()
            .filter(|h| TIME_NAMES.contains(&h.to_ascii_lowercase().as_str()))
            .map(|_| 0),
    };
    let series_cols: Vec<usize> = (0..header.len()).filter(|&i| Some(i) != time_idx).collect();
    let names: Vec<String> = series_cols.iter().map(|&i| header[i].clone()).collect();
    if names.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            message: "no series columns in header".into(),
        });
    }
    let mut values = vec![Vec::new(); names.len()];
    let mut time_labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        time_labels.push(match time_idx {
            Some(ti) => rec[ti].to_owned(),
            None => (i + 1).to_string(),
        });
        for (k, &c) in series_cols.iter().enumerate() {
            let cell = &rec[c];
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(Error::Parse {
                    row,
                    column: header[c].clone(),
                    message: "missing value".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: header[c].clone(),
                message: format!("non-numeric value '{cell}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: header[c].clone(),
                    message: format!("non-finite value '{cell}'"),
                });
            }
            values[k].push(v);
        }
    }
    Panel::new(names, time_labels, values)
}

pub fn write_panel<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_owned()];
    header.extend(panel.names.iter().cloned());
    w.write_record(&header)?;
    for t in 0..panel.len() {
        let mut row = vec![panel.time_labels[t].clone()];
        row.extend(panel.values.iter().map(|s| format_value(s[t])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_panel(panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    write_panel(panel, std::fs::File::create(path.as_ref())?)
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Sorted distinct observed values of each series.
pub fn infer_state_spaces(panel: &Panel) -> Result<Vec<StateSpace>> {
    panel
        .values
        .iter()
        .zip(&panel.names)
        .map(|(col, name)| {
            let mut labels = Vec::with_capacity(col.len());
            for &v in col {
                if v.fract() != 0.0 {
                    return Err(domain(format!("series '{name}' holds non-integer value {v}")));
                }
                labels.push(v as i64);
            }
            labels.sort_unstable();
            labels.dedup();
            StateSpace::new(labels).map_err(|e| domain(format!("series '{name}': {e}")))
        })
        .collect()
}

/// Ordinal panel with 0-based state indices per series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePanel {
    pub names: Vec<String>,
    pub time_labels: Vec<String>,
    /// `states[k][t]`
    pub states: Vec<Vec<usize>>,
    pub state_spaces: Vec<StateSpace>,
}

impl StatePanel {
    /// Infers per-series state spaces from the observed labels.
    pub fn from_panel(panel: &Panel) -> Result<Self> {
        let spaces = infer_state_spaces(panel)?;
        Self::with_state_spaces(panel, spaces)
    }

    pub fn with_state_spaces(panel: &Panel, state_spaces: Vec<StateSpace>) -> Result<Self> {
        if state_spaces.len() != panel.n_series() {
            return Err(Error::Dimension(format!(
                "{} state spaces for {} series",
                state_spaces.len(),
                panel.n_series()
            )));
        }
        let mut states = Vec::with_capacity(panel.n_series());
        for (k, col) in panel.values.iter().enumerate() {
            let space = &state_spaces[k];
            let mut s = Vec::with_capacity(col.len());
            for (t, &v) in col.iter().enumerate() {
                let idx = (v.fract() == 0.0)
                    .then(|| space.index_of(v as i64))
                    .flatten()
                    .ok_or_else(|| Error::Parse {
                        row: t + 2,
                        column: panel.names[k].clone(),
                        message: format!("value {v} is not a state of {:?}", space.labels()),
                    })?;
                s.push(idx);
            }
            states.push(s);
        }
        Ok(Self {
            names: panel.names.clone(),
            time_labels: panel.time_labels.clone(),
            states,
            state_spaces,
        })
    }

    /// Wraps a state matrix with default names `Z1..ZK` and times `1..T`.
    pub fn from_states(states: Vec<Vec<usize>>, state_spaces: Vec<StateSpace>) -> Result<Self> {
        if states.len() != state_spaces.len() {
            return Err(Error::Dimension(format!(
                "{} series for {} state spaces",
                states.len(),
                state_spaces.len()
            )));
        }
        let t = states.first().map_or(0, Vec::len);
        for (k, s) in states.iter().enumerate() {
            if s.len() != t {
                return Err(Error::Dimension(format!("series {k} has length {} instead of {t}", s.len())));
            }
            if let Some(&bad) = s.iter().find(|&&z| z >= state_spaces[k].len()) {
                return Err(domain(format!("state {bad} invalid for series {k}")));
            }
        }
        Ok(Self {
            names: (1..=states.len()).map(|k| format!("Z{k}")).collect(),
            time_labels: (1..=t).map(|t| t.to_string()).collect(),
            states,
            state_spaces,
        })
    }

    pub fn n_series(&self) -> usize {
        self.states.len()
    }

    pub fn len(&self) -> usize {
        self.time_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_labels.is_empty()
    }

    /// Panel of state labels.
    pub fn to_panel(&self) -> Panel {
        Panel {
            names: self.names.clone(),
            time_labels: self.time_labels.clone(),
            values: self
                .states
                .iter()
                .zip(&self.state_spaces)
                .map(|(s, sp)| s.iter().map(|&z| sp.label(z) as f64).collect())
                .collect(),
        }
    }

    /// Time points `range` of every series, keeping the state spaces.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            names: self.names.clone(),
            time_labels: self.time_labels[range.clone()].to_vec(),
            states: self.states.iter().map(|s| s[range.clone()].to_vec()).collect(),
            state_spaces: self.state_spaces.clone(),
        }
    }

    /// State vector at time `t`.
    pub fn at(&self, t: usize) -> Vec<usize> {
        self.states.iter().map(|s| s[t]).collect()
    }

    /// The last `p` state vectors, oldest first.
    pub fn tail_history(&self, p: usize) -> Result<Vec<Vec<usize>>> {
        if self.len() < p {
            return Err(Error::InsufficientHistory {
                needed: p,
                got: self.len(),
            });
        }
        Ok((self.len() - p..self.len()).map(|t| self.at(t)).collect())
    }
}

/// Result of pooled-quantile discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    /// Panel of states `1..=n_states`.
    pub panel: Panel,
    pub breakpoints: Vec<f64>,
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// State `1 + #{b : b < y}`: the lowest bin is closed on both sides, every
/// other bin is left-open and right-closed.
pub fn discretize_value(y: f64, breakpoints: &[f64]) -> i64 {
    1 + breakpoints.iter().filter(|&&b| b < y).count() as i64
}

/// Discretizes every series at quantiles of the pooled values. `probs`
/// defaults to `j / n_states`, `j = 1..n_states − 1`.
pub fn discretize_quantile(panel: &Panel, n_states: usize, probs: Option<&[f64]>) -> Result<Discretization> {
    if n_states < 2 {
        return Err(domain("discretization needs at least 2 states"));
    }
    let probs: Vec<f64> = match probs {
        Some(p) => {
            if p.len() != n_states - 1 {
                return Err(Error::Dimension(format!(
                    "{} cut probabilities for {n_states} states",
                    p.len()
                )));
            }
            if p.iter().any(|&x| !(x > 0.0 && x < 1.0)) || p.windows(2).any(|w| w[0] >= w[1]) {
                return Err(domain("cut probabilities must be strictly increasing in (0, 1)"));
            }
            p.to_vec()
        }
        None => (1..n_states).map(|j| j as f64 / n_states as f64).collect(),
    };
    let mut pooled: Vec<f64> = panel.values.iter().flatten().copied().collect();
    if pooled.is_empty() {
        return Err(domain("cannot discretize an empty panel"));
    }
    pooled.sort_by(f64::total_cmp);
    let breakpoints: Vec<f64> = probs.iter().map(|&p| quantile_sorted(&pooled, p)).collect();
    if pooled[0] == pooled[pooled.len() - 1] || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(domain(format!("degenerate quantile breakpoints {breakpoints:?}")));
    }
    let values = panel
        .values
        .iter()
        .map(|s| s.iter().map(|&y| discretize_value(y, &breakpoints) as f64).collect())
        .collect();
    Ok(Discretization {
        panel: Panel {
            names: panel.names.clone(),
            time_labels: panel.time_labels.clone(),
            values,
        },
        breakpoints,
    })
}

/// Kendall's τ-b; `None` when either input is constant.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_x, mut ties_y) = (0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                ties_x += 1;
                ties_y += 1;
            } else if dx == 0.0 {
                ties_x += 1;
            } else if dy == 0.0 {
                ties_y += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let n0 = (n * n.saturating_sub(1) / 2) as i64;
    let denom = (((n0 - ties_x) as f64) * ((n0 - ties_y) as f64)).sqrt();
    (denom > 0.0).then(|| (concordant - discordant) as f64 / denom)
}

/// Entry `(k, m)` is τ-b between `Z_k[t]` and `Z_m[t − lag]`; `None` marks
/// a series that is constant over the window.
pub fn kendall_matrix(panel: &StatePanel, lag: usize) -> Result<Vec<Vec<Option<f64>>>> {
    let t = panel.len();
    if t < lag + 2 {
        return Err(domain(format!("{t} time points leave fewer than 2 pairs at lag {lag}")));
    }
    let labels: Vec<Vec<f64>> = panel.to_panel().values;
    let k = panel.n_series();
    Ok((0..k)
        .map(|a| {
            (0..k)
                .map(|b| {
                    if lag == 0 && a == b {
                        let x = &labels[a];
                        return x.iter().any(|&v| v != x[0]).then_some(1.0);
                    }
                    kendall_tau_b(&labels[a][lag..], &labels[b][..t - lag])
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel_from(csv: &str) -> Result<Panel> {
        read_panel(csv.as_bytes(), &PanelSchema::default())
    }

    #[test]
    fn parses_well_formed_file() {
        let p = panel_from("time,A,B\n2001Q1,1,2\n2001Q2,2,2\n2001Q3,3,1\n").unwrap();
        assert_eq!(p.names, vec!["A", "B"]);
        assert_eq!(p.time_labels, vec!["2001Q1", "2001Q2", "2001Q3"]);
        assert_eq!(p.values, vec![vec![1.0, 2.0, 3.0], vec![2.0, 2.0, 1.0]]);
        let p = panel_from("A,B\n1,2\n2,2\n").unwrap();
        assert_eq!(p.time_labels, vec!["1", "2"]);
    }

    #[test]
    fn blank_cell_is_located() {
        let err = panel_from("time,A,B\n1,1,2\n2,,2\n").unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "A");
            }
            e => panic!("{e}"),
        }
        assert!(matches!(panel_from("A,B\n1,x\n"), Err(Error::Parse { row: 2, .. })));
        assert!(matches!(panel_from("A,B\n1,2,3\n"), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn collapsed_state_space() {
        let p = panel_from("Spain,Italy\n2,1\n3,2\n4,3\n3,1\n").unwrap();
        let spaces = infer_state_spaces(&p).unwrap();
        assert_eq!(spaces[0].labels(), &[2, 3, 4]);
        assert_eq!(spaces[1].labels(), &[1, 2, 3]);
        let sp = StatePanel::from_panel(&p).unwrap();
        assert_eq!(sp.states[0], vec![0, 1, 2, 1]);
        assert_eq!(sp.to_panel(), p);
    }

    #[test]
    fn interval_convention() {
        let b = [7.88, 10.4, 13.9];
        assert_eq!(discretize_value(8.0, &b), 2);
        assert_eq!(discretize_value(7.88, &b), 1);
        assert_eq!(discretize_value(3.8, &b), 1);
        assert_eq!(discretize_value(10.4, &b), 2);
        assert_eq!(discretize_value(27.9, &b), 4);
    }

    #[test]
    fn equal_mass_bins() {
        let vals: Vec<f64> = (1..=16).map(f64::from).collect();
        let p = Panel::new(
            vec!["A".into(), "B".into()],
            (1..=8).map(|t| t.to_string()).collect(),
            vec![vals[..8].to_vec(), vals[8..].to_vec()],
        )
        .unwrap();
        let d = discretize_quantile(&p, 4, None).unwrap();
        let mut counts = [0usize; 4];
        for v in d.panel.values.iter().flatten() {
            counts[*v as usize - 1] += 1;
        }
        assert_eq!(counts, [4, 4, 4, 4]);
        assert_eq!(d.breakpoints, vec![4.75, 8.5, 12.25]);
    }

    #[test]
    fn constant_data_is_degenerate() {
        let p = Panel::new(vec!["A".into()], vec!["1".into(), "2".into()], vec![vec![5.0, 5.0]]).unwrap();
        assert!(matches!(discretize_quantile(&p, 3, None), Err(Error::Domain(_))));
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau_b(&[1., 2., 3., 4.], &[4., 3., 2., 1.]), Some(-1.0));
        assert_eq!(kendall_tau_b(&[1., 1., 2., 2.], &[1., 2., 1., 2.]), Some(0.0));
        assert_eq!(kendall_tau_b(&[1., 1., 1.], &[1., 2., 3.]), None);
    }

    #[test]
    fn kendall_tau_b_brute_force_with_ties() {
        // Oracle: explicit sign products over ordered pairs and the τ-b
        // denominator from tie-group sizes.
        let x = [1., 2., 2., 3., 3., 3., 1., 2.];
        let y = [2., 1., 2., 3., 3., 1., 1., 2.];
        let n = x.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i < j {
                    s += ((x[i] - x[j]) as f64).signum_or_zero() * ((y[i] - y[j]) as f64).signum_or_zero();
                }
            }
        }
        let ties = |v: &[f64]| -> f64 {
            let mut sorted = v.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut acc = 0.0;
            let mut i = 0;
            while i < sorted.len() {
                let mut j = i;
                while j < sorted.len() && sorted[j] == sorted[i] {
                    j += 1;
                }
                let c = (j - i) as f64;
                acc += c * (c - 1.0) / 2.0;
                i = j;
            }
            acc
        };
        let n0 = (n * (n - 1) / 2) as f64;
        let want = s / ((n0 - ties(&x)) * (n0 - ties(&y))).sqrt();
        assert!((kendall_tau_b(&x, &y).unwrap() - want).abs() < 1e-15);
    }

    trait SignumOrZero {
        fn signum_or_zero(self) -> f64;
    }

    impl SignumOrZero for f64 {
        fn signum_or_zero(self) -> f64 {
            if self == 0.0 {
                0.0
            } else {
                self.signum()
            }
        }
    }

    #[test]
    fn kendall_matrix_lag_structure() {
        let spaces = vec![StateSpace::contiguous(3).unwrap(); 2];
        let sp = StatePanel::from_states(
            vec![vec![0, 1, 2, 1, 0, 2, 2, 1], vec![1, 1, 2, 0, 0, 1, 2, 2]],
            spaces,
        )
        .unwrap();
        let m0 = kendall_matrix(&sp, 0).unwrap();
        assert_eq!(m0[0][0], Some(1.0));
        assert_eq!(m0[0][1], m0[1][0]);
        let m1 = kendall_matrix(&sp, 1).unwrap();
        let x: Vec<f64> = sp.states[0][1..].iter().map(|&z| z as f64).collect();
        let y: Vec<f64> = sp.states[1][..7].iter().map(|&z| z as f64).collect();
        assert_eq!(m1[0][1], kendall_tau_b(&x, &y));
        assert!(kendall_matrix(&sp, 7).is_err());
    }
}
