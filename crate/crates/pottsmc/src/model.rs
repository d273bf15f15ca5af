//! Explicit MILP instances for the two formulations:
//!
//! * the Potts model — L1 fitting of a piecewise-constant image with binary
//!   edge variables linked to intensity jumps through big-M rows, optionally
//!   strengthened with the 4-edge chordless cycle inequalities;
//! * the multicut baseline — binary edge variables only, weighted by local
//!   intensity contrast, with cycle inequalities left to lazy separation.
//!
//! Also the parameter rules: the block-contrast estimate Y* and the
//! regularization weight λ = σ·Y*/4.

use crate::error::Error;
use crate::grid::GridGraph;

/// Gray-scale image with intensities normalized to [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ImageGray {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, Error> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::invalid_argument(format!(
                "pixel buffer of {} entries does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::invalid_argument(
                "intensities must lie within [0,1]".into(),
            ));
        }
        Ok(ImageGray { rows, cols, data })
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Result<Self, Error> {
        ImageGray::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_pixels(&self) -> usize {
        self.data.len()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Rectangular crop with top-left corner (i0, j0).
    pub fn crop(&self, i0: usize, j0: usize, height: usize, width: usize) -> ImageGray {
        assert!(i0 + height <= self.rows && j0 + width <= self.cols);
        let mut data = Vec::with_capacity(height * width);
        for i in i0..i0 + height {
            data.extend_from_slice(&self.data[i * self.cols + j0..i * self.cols + j0 + width]);
        }
        ImageGray { rows: height, cols: width, data }
    }
}

/// Global contrast estimate Y*: the image is tiled by 5×5 blocks (trailing
/// blocks take the remainder) and Y* is the spread between the largest and
/// smallest block mean.
pub fn contrast_estimate(img: &ImageGray) -> f64 {
    const B: usize = 5;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut i0 = 0;
    while i0 < img.rows() {
        let h = B.min(img.rows() - i0);
        let mut j0 = 0;
        while j0 < img.cols() {
            let w = B.min(img.cols() - j0);
            let mut sum = 0.0;
            for i in i0..i0 + h {
                for j in j0..j0 + w {
                    sum += img.at(i, j);
                }
            }
            let mean = sum / (h * w) as f64;
            lo = lo.min(mean);
            hi = hi.max(mean);
            j0 += B;
        }
        i0 += B;
    }
    (hi - lo).max(0.0)
}

/// Regularization weight λ = σ·Y*/4. Isolating a single pixel costs four
/// boundary edges, i.e. the full penalty σ·Y*.
pub fn lambda_from_sigma(sigma: f64, ystar: f64) -> f64 {
    sigma * ystar / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone)]
pub struct VarDef {
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub objective: f64,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTag {
    Fit,
    BigM,
    Cycle4,
    UserCut,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    /// Sparse row: (variable id, coefficient).
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub tag: RowTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Potts,
    Multicut,
}

/// Explicit variable/constraint/objective description of one MILP instance.
///
/// Variable layout is deterministic. Binaries `x_e` come first, indexed by
/// edge id. For the Potts kind they are followed by the per-pixel continuous
/// variables in row-major order: `w`, then `ep` (positive residual), then
/// `em` (negative residual).
#[derive(Debug, Clone)]
pub struct MilpModel {
    pub kind: ModelKind,
    pub rows: usize,
    pub cols: usize,
    pub lambda: f64,
    pub big_m: f64,
    pub vars: Vec<VarDef>,
    pub constraints: Vec<Constraint>,
    pub num_binaries: usize,
}

impl MilpModel {
    pub fn grid(&self) -> GridGraph {
        GridGraph::new(self.rows, self.cols).expect("model dims already validated")
    }

    /// Id of the fitted-intensity variable for pixel `p` (Potts only).
    pub fn w_var(&self, p: usize) -> usize {
        debug_assert_eq!(self.kind, ModelKind::Potts);
        self.num_binaries + p
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    /// Serializes the instance as an LP-format text file for cross-checking
    /// with external solvers. One constraint per line.
    pub fn to_lp_format(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        out.push_str("Minimize\n obj:");
        let mut first = true;
        for (id, v) in self.vars.iter().enumerate() {
            if v.objective != 0.0 {
                let sep = if first { " " } else { " + " };
                let _ = write!(out, "{sep}{} {}", fmt_coeff(v.objective), self.vars[id].name);
                first = false;
            }
        }
        if first {
            out.push_str(" 0");
        }
        out.push_str("\nSubject To\n");
        for (r, c) in self.constraints.iter().enumerate() {
            let _ = write!(out, " c{r}:");
            for (pos, (id, coef)) in c.terms.iter().enumerate() {
                if pos == 0 {
                    let _ = write!(out, " {} {}", fmt_coeff(*coef), self.vars[*id].name);
                } else if *coef >= 0.0 {
                    let _ = write!(out, " + {} {}", fmt_coeff(*coef), self.vars[*id].name);
                } else {
                    let _ = write!(out, " - {} {}", fmt_coeff(-*coef), self.vars[*id].name);
                }
            }
            let sense = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(out, " {} {}", sense, fmt_coeff(c.rhs));
        }
        out.push_str("Bounds\n");
        for v in &self.vars {
            if v.kind == VarKind::Continuous {
                if v.upper.is_finite() {
                    let _ = writeln!(out, " {} <= {} <= {}", fmt_coeff(v.lower), v.name, fmt_coeff(v.upper));
                } else {
                    let _ = writeln!(out, " {} >= {}", v.name, fmt_coeff(v.lower));
                }
            }
        }
        out.push_str("Binaries\n");
        for v in &self.vars {
            if v.kind == VarKind::Binary {
                out.push(' ');
                out.push_str(&v.name);
            }
        }
        out.push_str("\nEnd\n");
        out
    }
}

fn fmt_coeff(v: f64) -> String {
    // shortest round-trip representation keeps the files diffable
    format!("{v}")
}

/// Builds the Potts MILP: minimize Σ(ε⁺+ε⁻) + λ·Σ x_e subject to the fit
/// equalities, the two big-M rows per edge, and (optionally) all four
/// rotations of every unit-square cycle inequality.
pub fn build_potts_milp(
    img: &ImageGray,
    lambda: f64,
    big_m: f64,
    with_cycle_cuts: bool,
) -> Result<MilpModel, Error> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::invalid_argument(format!("lambda must be nonnegative, got {lambda}")));
    }
    if big_m < 1.0 || !big_m.is_finite() {
        return Err(Error::invalid_argument(format!(
            "big-M must be at least 1 for normalized intensities, got {big_m}"
        )));
    }
    let g = GridGraph::new(img.rows(), img.cols())?;
    let ne = g.num_edges();
    let np = g.num_pixels();
    let mut vars = Vec::with_capacity(ne + 3 * np);
    for e in 0..ne {
        vars.push(VarDef {
            kind: VarKind::Binary,
            lower: 0.0,
            upper: 1.0,
            objective: lambda,
            name: format!("x_{e}"),
        });
    }
    for (prefix, obj) in [("w", 0.0), ("ep", 1.0), ("em", 1.0)] {
        for p in 0..np {
            let (i, j) = g.node_coords(p);
            vars.push(VarDef {
                kind: VarKind::Continuous,
                lower: 0.0,
                upper: if prefix == "w" { 1.0 } else { f64::INFINITY },
                objective: obj,
                name: format!("{prefix}_{i}_{j}"),
            });
        }
    }
    let w0 = ne;
    let ep0 = ne + np;
    let em0 = ne + 2 * np;

    let mut constraints = Vec::new();
    // fit rows: w_p - ep_p + em_p = y_p
    for p in 0..np {
        constraints.push(Constraint {
            terms: vec![(w0 + p, 1.0), (ep0 + p, -1.0), (em0 + p, 1.0)],
            sense: Sense::Eq,
            rhs: img.pixels()[p],
            tag: RowTag::Fit,
        });
    }
    // big-M rows: ±(w_v - w_u) <= M x_e
    for e in 0..ne {
        let (u, v) = g.edge_endpoints(e);
        constraints.push(Constraint {
            terms: vec![(w0 + v, 1.0), (w0 + u, -1.0), (e, -big_m)],
            sense: Sense::Le,
            rhs: 0.0,
            tag: RowTag::BigM,
        });
        constraints.push(Constraint {
            terms: vec![(w0 + u, 1.0), (w0 + v, -1.0), (e, -big_m)],
            sense: Sense::Le,
            rhs: 0.0,
            tag: RowTag::BigM,
        });
    }
    if with_cycle_cuts {
        for cycle in g.enumerate_unit_cycles() {
            for &rhs_edge in &cycle {
                let mut terms: Vec<(usize, f64)> = Vec::with_capacity(4);
                for &e in &cycle {
                    terms.push((e, if e == rhs_edge { -1.0 } else { 1.0 }));
                }
                constraints.push(Constraint { terms, sense: Sense::Ge, rhs: 0.0, tag: RowTag::Cycle4 });
            }
        }
    }
    Ok(MilpModel {
        kind: ModelKind::Potts,
        rows: img.rows(),
        cols: img.cols(),
        lambda,
        big_m,
        vars,
        constraints,
        num_binaries: ne,
    })
}

/// Builds the multicut baseline ILP: binaries only, objective
/// Σ (λ − c_e)·x_e with c_e the absolute intensity difference across the
/// edge. Cycle inequalities are not materialized; the solver separates them
/// lazily.
pub fn build_multicut_ilp(img: &ImageGray, lambda: f64) -> Result<MilpModel, Error> {
    if !lambda.is_finite() {
        return Err(Error::invalid_argument(format!("lambda must be finite, got {lambda}")));
    }
    let g = GridGraph::new(img.rows(), img.cols())?;
    let ne = g.num_edges();
    let mut vars = Vec::with_capacity(ne);
    for e in 0..ne {
        let (u, v) = g.edge_endpoints(e);
        let contrast = (img.pixels()[u] - img.pixels()[v]).abs();
        vars.push(VarDef {
            kind: VarKind::Binary,
            lower: 0.0,
            upper: 1.0,
            objective: lambda - contrast,
            name: format!("x_{e}"),
        });
    }
    Ok(MilpModel {
        kind: ModelKind::Multicut,
        rows: img.rows(),
        cols: img.cols(),
        lambda,
        big_m: 0.0,
        vars,
        constraints: Vec::new(),
        num_binaries: ne,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        assert!(ImageGray::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(ImageGray::new(1, 2, vec![-0.1, 0.5]).is_err());
        assert!(ImageGray::new(0, 2, vec![]).is_err());
        assert!(ImageGray::new(1, 2, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn contrast_constant_image_is_zero() {
        let img = ImageGray::constant(7, 9, 0.42).unwrap();
        assert!(contrast_estimate(&img) < 1e-12);
    }

    #[test]
    fn contrast_half_and_half() {
        // left 10x5 half black, right half white: pure blocks on each side
        let mut data = vec![0.0; 100];
        for i in 0..10 {
            for j in 5..10 {
                data[i * 10 + j] = 1.0;
            }
        }
        let img = ImageGray::new(10, 10, data).unwrap();
        assert_eq!(contrast_estimate(&img), 1.0);
    }

    #[test]
    fn contrast_single_block_with_outlier() {
        // 5x5: one block; max mean = min mean = 1/25
        let mut data = vec![0.0; 25];
        data[12] = 1.0;
        let img = ImageGray::new(5, 5, data).unwrap();
        assert_eq!(contrast_estimate(&img), 0.0);
    }

    #[test]
    fn contrast_ragged_blocks_cover_every_pixel() {
        // 6x7 image: blocks are 5x5, 5x2, 1x5, 1x2; bright pixel in the 1x2 block
        let mut data = vec![0.0; 42];
        data[5 * 7 + 6] = 1.0;
        let img = ImageGray::new(6, 7, data).unwrap();
        let got = contrast_estimate(&img);
        assert!((got - 0.5).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn lambda_rule() {
        assert_eq!(lambda_from_sigma(0.5, 1.0), 0.125);
        assert_eq!(lambda_from_sigma(0.7, 0.0), 0.0);
        // isolating one pixel costs 4λ = σY*
        let (sigma, ystar) = (0.35, 0.62);
        let lambda = lambda_from_sigma(sigma, ystar);
        assert!((4.0 * lambda - sigma * ystar).abs() < 1e-15);
    }

    fn count_tag(m: &MilpModel, tag: RowTag) -> usize {
        m.constraints.iter().filter(|c| c.tag == tag).count()
    }

    #[test]
    fn potts_model_counts_4x4() {
        let img = ImageGray::constant(4, 4, 0.5).unwrap();
        let m = build_potts_milp(&img, 0.1, 1.0, true).unwrap();
        assert_eq!(m.num_binaries, 24);
        assert_eq!(m.vars.iter().filter(|v| v.kind == VarKind::Continuous).count(), 48);
        assert_eq!(count_tag(&m, RowTag::Fit), 16);
        assert_eq!(count_tag(&m, RowTag::BigM), 48);
        assert_eq!(count_tag(&m, RowTag::Cycle4), 36);
    }

    #[test]
    fn potts_model_counts_1x2() {
        let img = ImageGray::new(1, 2, vec![0.0, 1.0]).unwrap();
        let m = build_potts_milp(&img, 0.1, 1.0, true).unwrap();
        assert_eq!(m.num_binaries, 1);
        assert_eq!(m.vars.iter().filter(|v| v.kind == VarKind::Continuous).count(), 6);
        assert_eq!(count_tag(&m, RowTag::Fit), 2);
        assert_eq!(count_tag(&m, RowTag::BigM), 2);
        assert_eq!(count_tag(&m, RowTag::Cycle4), 0);
    }

    #[test]
    fn cycle_flag_changes_only_cycle_rows() {
        let img = ImageGray::constant(3, 3, 0.25).unwrap();
        let with = build_potts_milp(&img, 0.1, 1.0, true).unwrap();
        let without = build_potts_milp(&img, 0.1, 1.0, false).unwrap();
        let strip = |m: &MilpModel| {
            m.constraints
                .iter()
                .filter(|c| c.tag != RowTag::Cycle4)
                .map(|c| format!("{:?}{:?}{}{:?}", c.terms, c.sense, c.rhs, c.tag))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&with), strip(&without));
        assert!(count_tag(&with, RowTag::Cycle4) > 0);
        assert_eq!(count_tag(&without, RowTag::Cycle4), 0);
    }

    #[test]
    fn potts_rejects_bad_parameters() {
        let img = ImageGray::constant(2, 2, 0.5).unwrap();
        assert!(build_potts_milp(&img, -0.1, 1.0, true).is_err());
        assert!(build_potts_milp(&img, 0.1, 0.5, true).is_err());
    }

    #[test]
    fn potts_big_m_rows_reference_one_binary_and_two_w() {
        let img = ImageGray::constant(3, 4, 0.5).unwrap();
        let m = build_potts_milp(&img, 0.1, 1.0, false).unwrap();
        let g = m.grid();
        for c in m.constraints.iter().filter(|c| c.tag == RowTag::BigM) {
            let binaries: Vec<_> = c.terms.iter().filter(|(id, _)| *id < m.num_binaries).collect();
            assert_eq!(binaries.len(), 1);
            let e = binaries[0].0;
            assert_eq!(binaries[0].1, -1.0);
            let (u, v) = g.edge_endpoints(e);
            let mut ws: Vec<_> = c
                .terms
                .iter()
                .filter(|(id, _)| *id >= m.num_binaries)
                .map(|(id, coef)| (id - m.num_binaries, *coef))
                .collect();
            ws.sort_by_key(|(p, _)| *p);
            assert_eq!(ws.len(), 2);
            assert_eq!(ws[0].0, u);
            assert_eq!(ws[1].0, v);
            assert_eq!(ws[0].1 + ws[1].1, 0.0);
        }
    }

    #[test]
    fn model_construction_is_deterministic() {
        let img = ImageGray::new(2, 3, vec![0.1, 0.9, 0.3, 0.6, 0.2, 0.8]).unwrap();
        let a = build_potts_milp(&img, 0.07, 1.0, true).unwrap();
        let b = build_potts_milp(&img, 0.07, 1.0, true).unwrap();
        assert_eq!(a.to_lp_format(), b.to_lp_format());
    }

    #[test]
    fn multicut_objective_coefficients() {
        let img = ImageGray::new(1, 2, vec![0.0, 1.0]).unwrap();
        let m = build_multicut_ilp(&img, 0.5).unwrap();
        assert_eq!(m.num_binaries, 1);
        assert_eq!(m.vars[0].objective, -0.5);
        assert!(m.constraints.is_empty());
    }

    #[test]
    fn lp_format_golden_1x2() {
        let img = ImageGray::new(1, 2, vec![0.25, 0.75]).unwrap();
        let m = build_potts_milp(&img, 0.5, 1.0, false).unwrap();
        let text = m.to_lp_format();
        let expected = concat!(
            "Minimize\n",
            " obj: 0.5 x_0 + 1 ep_0_0 + 1 ep_0_1 + 1 em_0_0 + 1 em_0_1\n",
            "Subject To\n",
            " c0: 1 w_0_0 - 1 ep_0_0 + 1 em_0_0 = 0.25\n",
            " c1: 1 w_0_1 - 1 ep_0_1 + 1 em_0_1 = 0.75\n",
            " c2: 1 w_0_1 - 1 w_0_0 - 1 x_0 <= 0\n",
            " c3: 1 w_0_0 - 1 w_0_1 - 1 x_0 <= 0\n",
            "Bounds\n",
            " 0 <= w_0_0 <= 1\n",
            " 0 <= w_0_1 <= 1\n",
            " ep_0_0 >= 0\n",
            " ep_0_1 >= 0\n",
            " em_0_0 >= 0\n",
            " em_0_1 >= 0\n",
            "Binaries\n",
            " x_0\n",
            "End\n"
        );
        assert_eq!(text, expected);
    }
}
