//! Bus admittance matrix under the standard branch pi-model.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::case::NetworkCase;
use crate::error::{Error, Result};

/// Two-port admittances of one in-service branch, in per-unit.
///
/// Terminal currents are `I_f = y_ff V_f + y_ft V_t` and `I_t = y_tf V_f + y_tt V_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    /// Position of the branch in the case's branch list.
    pub branch: usize,
    pub from: usize,
    pub to: usize,
    pub y_series: Complex64,
    /// Half of the line charging, applied at each end.
    pub y_shunt_from: Complex64,
    pub y_shunt_to: Complex64,
    pub y_ff: Complex64,
    pub y_ft: Complex64,
    pub y_tf: Complex64,
    pub y_tt: Complex64,
}

/// Sparse complex bus admittance matrix, row-compressed with sorted columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
    branches: Vec<BranchAdmittance>,
    /// Branch position in the case -> position in `branches`.
    lookup: Vec<Option<usize>>,
}

pub fn build_ybus(case: &NetworkCase) -> Result<AdmittanceMatrix> {
    let n = case.n_buses();
    let base = case.base_mva();
    let mut acc: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); n];
    let mut branches = Vec::new();
    let mut lookup = vec![None; case.branches().len()];

    for (i, bus) in case.buses().iter().enumerate() {
        let y_sh = Complex64::new(bus.gs, bus.bs) / base;
        *acc[i].entry(i).or_default() += y_sh;
    }

    for (k, br) in case.branches().iter().enumerate() {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::ZeroImpedance {
                from: br.from_bus,
                to: br.to_bus,
            });
        }
        if !br.in_service() {
            continue;
        }
        let f = case.index_of(br.from_bus).expect("validated endpoint");
        let t = case.index_of(br.to_bus).expect("validated endpoint");
        let y_series = Complex64::new(br.r, br.x).inv();
        let y_half = Complex64::new(0.0, br.b_charging / 2.0);
        let ratio = Complex64::from_polar(br.tap, br.shift);
        let y_tt = y_series + y_half;
        let y_ff = y_tt / (br.tap * br.tap);
        let y_ft = -y_series / ratio.conj();
        let y_tf = -y_series / ratio;

        *acc[f].entry(f).or_default() += y_ff;
        *acc[f].entry(t).or_default() += y_ft;
        *acc[t].entry(f).or_default() += y_tf;
        *acc[t].entry(t).or_default() += y_tt;

        lookup[k] = Some(branches.len());
        branches.push(BranchAdmittance {
            branch: k,
            from: f,
            to: t,
            y_series,
            y_shunt_from: y_half,
            y_shunt_to: y_half,
            y_ff,
            y_ft,
            y_tf,
            y_tt,
        });
    }

    let rows = acc.into_iter().map(|row| row.into_iter().collect()).collect();
    Ok(AdmittanceMatrix {
        n,
        rows,
        branches,
        lookup,
    })
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries of row `i` as `(column, value)`, sorted by column.
    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self.rows[i].binary_search_by_key(&j, |&(c, _)| c) {
            Ok(pos) => self.rows[i][pos].1,
            Err(_) => Complex64::default(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn branch_admittances(&self) -> &[BranchAdmittance] {
        &self.branches
    }

    /// Admittances of a case branch, `None` when the branch is out of service.
    pub fn branch(&self, case_branch: usize) -> Option<&BranchAdmittance> {
        self.lookup
            .get(case_branch)
            .copied()
            .flatten()
            .map(|k| &self.branches[k])
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut dense = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, y) in row {
                dense[(i, j)] = y;
            }
        }
        dense
    }
}
