//! CSV tables in the column layouts consumed by the plotting scripts.
//!
//! Numbers are written with 17 significant digits (`{:.16e}`), `.` as decimal separator and
//! LF line endings, so identical inputs give byte-identical files.

use num_complex::Complex64;

use crate::oracle::OracleRun;
use crate::spinbath::SpinBathRun;
use crate::tls::Trajectory;

pub const TRAJECTORY_COLUMNS: [&str; 5] = ["t", "sigma_z", "sigma_x_P", "sigma_y_P", "P1"];
pub const ALPHA_COLUMNS: [&str; 5] = ["t", "m", "alpha_x", "alpha_y", "alpha_z"];
pub const KERNEL_COLUMNS: [&str; 4] = ["t", "phi1", "phi2", "psi1"];
pub const THETA_COLUMNS: [&str; 13] = [
    "t", "abs_tpp", "abs_tpm", "abs_tmp", "abs_tmm", "re_tpp", "im_tpp", "re_tpm", "im_tpm",
    "re_tmp", "im_tmp", "re_tmm", "im_tmm",
];
pub const MATRIX_COLUMNS: [&str; 4] = ["m", "n", "re", "im"];
/// Steady-state table; the first column is named after the swept parameter.
pub const STEADY_VALUE_COLUMN: &str = "P1_inf";
/// Surface table `t,<parameter>,sigma_z`.
pub const SURFACE_VALUE_COLUMN: &str = "sigma_z";

pub fn number(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header plus rows of preformatted cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_numbers(&mut self, values: &[f64]) {
        self.push(values.iter().map(|&x| number(x)).collect());
    }

    pub fn push(&mut self, cells: Vec<String>) {
        assert_eq!(
            cells.len(),
            self.header.len(),
            "row width must match the header"
        );
        self.rows.push(cells);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn trajectory_table(tr: &Trajectory) -> Table {
    let mut table = Table::new(&TRAJECTORY_COLUMNS);
    for i in 0..tr.t.len() {
        table.push_numbers(&[
            tr.t[i],
            tr.sigma_z[i],
            tr.sigma_x_p[i],
            tr.sigma_y_p[i],
            tr.p1[i],
        ]);
    }
    table
}

/// Long-format α_m(t), sectors in increasing m within each time.
pub fn alpha_table(tr: &Trajectory) -> Table {
    let mut table = Table::new(&ALPHA_COLUMNS);
    for (i, &t) in tr.t.iter().enumerate() {
        for s in &tr.sectors {
            let a = s.alpha[i];
            table.push(vec![
                number(t),
                s.m.to_string(),
                number(a[0]),
                number(a[1]),
                number(a[2]),
            ]);
        }
    }
    table
}

pub fn oracle_table(run: &OracleRun) -> Table {
    let mut table = Table::new(&TRAJECTORY_COLUMNS);
    for i in 0..run.t.len() {
        table.push_numbers(&[
            run.t[i],
            run.sigma_z[i],
            run.sigma_x_p[i],
            run.sigma_y_p[i],
            run.p1[i],
        ]);
    }
    table
}

fn theta_row(t: f64, th: &[Complex64; 4]) -> Vec<f64> {
    let mut row = vec![t];
    row.extend(th.iter().map(|z| z.norm()));
    for z in th {
        row.push(z.re);
        row.push(z.im);
    }
    row
}

/// Θ_{±±} along a run.
pub fn theta_table(run: &SpinBathRun) -> Table {
    theta_series(&run.t, &run.theta)
}

pub fn theta_series(t: &[f64], theta: &[[Complex64; 4]]) -> Table {
    let mut table = Table::new(&THETA_COLUMNS);
    for (t, th) in t.iter().zip(theta) {
        table.push_numbers(&theta_row(*t, th));
    }
    table
}

/// Full [Θ_S]_{mn} with m, n ∈ {−N/2, …, N/2}.
pub fn matrix_table(matrix: &[Complex64], n: u32) -> Table {
    let half = (n / 2) as i32;
    let size = n as usize + 1;
    let mut table = Table::new(&MATRIX_COLUMNS);
    for (a, m) in (-half..=half).enumerate() {
        for (b, k) in (-half..=half).enumerate() {
            let z = matrix[a * size + b];
            table.push(vec![
                m.to_string(),
                k.to_string(),
                number(z.re),
                number(z.im),
            ]);
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_have_seventeen_digits() {
        assert_eq!(number(0.1), "1.0000000000000001e-1");
        assert_eq!(number(-2.5), "-2.5000000000000000e0");
        assert_eq!(number(0.0), "0.0000000000000000e0");
        assert_eq!("1.0000000000000001e-1".parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["a", "b"]);
        t.push_numbers(&[1.0, 2.0]);
        assert_eq!(
            t.to_csv(),
            "a,b\n1.0000000000000000e0,2.0000000000000000e0\n"
        );
        assert_eq!(t.len(), 1);
    }

    #[test]
    #[should_panic]
    fn ragged_rows_rejected() {
        Table::new(&["a", "b"]).push_numbers(&[1.0]);
    }
}
