//! Stain separation: sparse non-negative factorization of optical densities
//! into a two-column color basis and per-pixel stain densities.
//!
//! The fitted objective is
//!
//! ```text
//! 1/2 ||V - W H||_F^2 + lambda * sum(H),   W >= 0, H >= 0, ||W(:, j)||_2 = 1
//! ```
//!
//! with `V` the 3 x M optical densities of the sampled pixels. It is solved by
//! alternating exact block minimization: every pixel's densities are refined
//! by cyclic coordinate descent (warm-started from the previous iterate), then
//! each basis column is replaced by its exact minimizer on the non-negative
//! unit sphere. Both steps never increase the objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, Warning};
use crate::optics::ODBlock;

/// Reference hematoxylin optical-density color (unnormalized).
pub const REFERENCE_HEMATOXYLIN: [f64; 3] = [0.650, 0.704, 0.286];
/// Reference eosin optical-density color (unnormalized).
pub const REFERENCE_EOSIN: [f64; 3] = [0.072, 0.990, 0.105];

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_MAX_OUTER_ITERS: usize = 200;
pub const DEFAULT_REL_TOL: f64 = 1e-6;

/// Fewer pixels than this is an error.
pub const MIN_PIXELS: usize = 10;
/// Fewer pixels than this draws a warning.
pub const RECOMMENDED_PIXELS: usize = 1000;

const UNIT_TOLERANCE: f64 = 1e-9;
const INIT_NOISE: f64 = 0.05;
const CD_TOLERANCE: f64 = 1e-13;
const CD_MAX_SWEEPS: usize = 100_000;
pub const MIN_DENSITY_SHARE: f64 = 0.01;
const MIN_COLUMN_ANGLE_DEG: f64 = 2.0;

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Angle between two vectors, in degrees.
pub fn angle_degrees(a: [f64; 3], b: [f64; 3]) -> f64 {
    let c = dot(a, b) / (norm(a) * norm(b));
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// 3 x 2 non-negative stain color basis with unit columns; rows are the red,
/// green and blue optical-density components, columns the stains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainBasis {
    columns: [[f64; 3]; 2],
}

impl StainBasis {
    /// Validating constructor: entries must be finite and non-negative and
    /// each column must have unit length.
    pub fn from_columns(c0: [f64; 3], c1: [f64; 3]) -> Result<Self> {
        for (j, c) in [c0, c1].iter().enumerate() {
            if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidBasis(format!("column {j} has a negative or non-finite entry: {c:?}")));
            }
            let n = norm(*c);
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::InvalidBasis(format!("column {j} has norm {n}, expected 1")));
            }
        }
        Ok(StainBasis { columns: [c0, c1] })
    }

    /// Scale both columns to unit length first.
    pub fn normalized(c0: [f64; 3], c1: [f64; 3]) -> Result<Self> {
        if norm(c0) == 0.0 || norm(c1) == 0.0 {
            return Err(Error::InvalidBasis("zero column".into()));
        }
        StainBasis::from_columns(normalize(c0), normalize(c1))
    }

    /// Unit-normalized reference hematoxylin and eosin colors.
    pub fn reference() -> Self {
        StainBasis::normalized(REFERENCE_HEMATOXYLIN, REFERENCE_EOSIN).expect("reference basis is valid")
    }

    pub fn column(&self, j: usize) -> [f64; 3] {
        self.columns[j]
    }

    pub fn columns(&self) -> [[f64; 3]; 2] {
        self.columns
    }

    /// Entries in row-major order: `[r0, r1, g0, g1, b0, b1]`.
    pub fn row_major(&self) -> [f64; 6] {
        let [a, b] = self.columns;
        [a[0], b[0], a[1], b[1], a[2], b[2]]
    }

    pub fn from_row_major(w: [f64; 6]) -> Result<Self> {
        StainBasis::from_columns([w[0], w[2], w[4]], [w[1], w[3], w[5]])
    }

    /// `W h` for one pixel.
    #[inline]
    pub fn mix(&self, h: [f64; 2]) -> [f64; 3] {
        let [a, b] = self.columns;
        [
            a[0] * h[0] + b[0] * h[1],
            a[1] * h[0] + b[1] * h[1],
            a[2] * h[0] + b[2] * h[1],
        ]
    }

    /// Hematoxylin-ness of a column: red minus blue optical density.
    pub fn red_minus_blue(&self, j: usize) -> f64 {
        self.columns[j][0] - self.columns[j][2]
    }

    pub fn swapped(&self) -> Self {
        StainBasis {
            columns: [self.columns[1], self.columns[0]],
        }
    }
}

/// Put the column with the larger red-minus-blue component first
/// (hematoxylin, then eosin). Returns the ordered basis and the permutation
/// applied: `perm[i]` is the input column now at position `i`. An exact tie
/// keeps the input order.
pub fn order_stains(w: &StainBasis) -> (StainBasis, [usize; 2]) {
    if w.red_minus_blue(1) > w.red_minus_blue(0) {
        (w.swapped(), [1, 0])
    } else {
        (*w, [0, 1])
    }
}

/// Non-negative densities of two stains for a block of pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct StainDensityBlock {
    pub width: u32,
    pub height: u32,
    /// One `[stain0, stain1]` pair per pixel, row-major.
    pub data: Vec<[f64; 2]>,
}

impl StainDensityBlock {
    pub fn new(width: u32, height: u32, data: Vec<[f64; 2]>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        StainDensityBlock { width, height, data }
    }

    pub fn stain(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(move |h| h[j])
    }

    pub fn permuted(&self, perm: [usize; 2]) -> Self {
        StainDensityBlock {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|h| [h[perm[0]], h[perm[1]]]).collect(),
        }
    }
}

/// Per-pixel solver for `min_h 1/2 ||v - W h||^2 + lambda * (h0 + h1)`,
/// `h >= 0`, by cyclic coordinate descent with exact soft-threshold steps.
#[derive(Debug, Clone, Copy)]
pub struct SparseCoder {
    columns: [[f64; 3]; 2],
    diag: [f64; 2],
    cross: f64,
    lambda: f64,
}

impl SparseCoder {
    pub fn new(basis: &StainBasis, lambda: f64) -> Self {
        SparseCoder::from_columns(basis.columns, lambda)
    }

    fn from_columns(columns: [[f64; 3]; 2], lambda: f64) -> Self {
        let [a, b] = columns;
        SparseCoder {
            columns,
            diag: [dot(a, a), dot(b, b)],
            cross: dot(a, b),
            lambda,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn code(&self, v: [f64; 3]) -> [f64; 2] {
        self.code_from(v, [0.0, 0.0])
    }

    /// Coordinate descent started from `h`; each step exactly minimizes the
    /// objective over one coordinate, so the objective never increases.
    ///
    /// After every sweep the optimality conditions are solved exactly on the
    /// current support; once that solution checks out it is returned. This
    /// keeps nearly collinear stain colors, where plain coordinate descent
    /// crawls, to a couple of sweeps.
    #[inline]
    pub fn code_from(&self, v: [f64; 3], mut h: [f64; 2]) -> [f64; 2] {
        let b = [dot(self.columns[0], v), dot(self.columns[1], v)];
        for _ in 0..CD_MAX_SWEEPS {
            let mut step: f64 = 0.0;
            for j in 0..2 {
                let k = 1 - j;
                let next = ((b[j] - self.cross * h[k] - self.lambda) / self.diag[j]).max(0.0);
                step = step.max((next - h[j]).abs());
                h[j] = next;
            }
            if let Some(exact) = self.solve_on_support(b, h) {
                return exact;
            }
            if step <= CD_TOLERANCE * (1.0 + h[0].max(h[1])) {
                break;
            }
        }
        h
    }

    /// The minimizer restricted to the support of `h`, if it is optimal for
    /// the full problem.
    #[inline]
    fn solve_on_support(&self, b: [f64; 2], h: [f64; 2]) -> Option<[f64; 2]> {
        let lambda = self.lambda;
        let [d0, d1] = self.diag;
        let inactive_ok = |j: usize, s: [f64; 2]| b[j] - self.cross * s[1 - j] - lambda <= 0.0;
        match (h[0] > 0.0, h[1] > 0.0) {
            (true, true) => {
                let det = d0 * d1 - self.cross * self.cross;
                if det <= 1e-12 * d0 * d1 {
                    return None;
                }
                let r = [b[0] - lambda, b[1] - lambda];
                let s = [(d1 * r[0] - self.cross * r[1]) / det, (d0 * r[1] - self.cross * r[0]) / det];
                (s[0] > 0.0 && s[1] > 0.0).then_some(s)
            }
            (false, false) => (b[0] <= lambda && b[1] <= lambda).then_some([0.0, 0.0]),
            (first, _) => {
                let j = if first { 0 } else { 1 };
                let mut s = [0.0; 2];
                s[j] = (b[j] - lambda) / self.diag[j];
                (s[j] > 0.0 && inactive_ok(1 - j, s)).then_some(s)
            }
        }
    }
}

/// Unconstrained least-squares densities `(W^T W)^-1 W^T v`. Faster than the
/// sparse coder but densities can come out negative.
#[derive(Debug, Clone, Copy)]
pub struct PseudoInverse {
    rows: [[f64; 3]; 2],
}

impl PseudoInverse {
    pub fn new(basis: &StainBasis) -> Self {
        let [a, b] = basis.columns;
        let (g00, g01, g11) = (dot(a, a), dot(a, b), dot(b, b));
        let det = g00 * g11 - g01 * g01;
        let inv = [[g11 / det, -g01 / det], [-g01 / det, g00 / det]];
        let mut rows = [[0.0; 3]; 2];
        for (i, row) in rows.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = inv[i][0] * a[c] + inv[i][1] * b[c];
            }
        }
        PseudoInverse { rows }
    }

    #[inline]
    pub fn code(&self, v: [f64; 3]) -> [f64; 2] {
        [dot(self.rows[0], v), dot(self.rows[1], v)]
    }
}

/// Either density coder, chosen once per run.
#[derive(Debug, Clone, Copy)]
pub enum DensityCoder {
    Sparse(SparseCoder),
    PseudoInverse(PseudoInverse),
}

impl DensityCoder {
    #[inline]
    pub fn code(&self, v: [f64; 3]) -> [f64; 2] {
        match self {
            DensityCoder::Sparse(c) => c.code(v),
            DensityCoder::PseudoInverse(p) => p.code(v),
        }
    }
}

/// Non-negative sparse densities of every pixel in `od` against basis `w`.
pub fn code_densities(od: &ODBlock, w: &StainBasis, lambda: f64) -> StainDensityBlock {
    let coder = SparseCoder::new(w, lambda);
    StainDensityBlock::new(od.width, od.height, od.data.iter().map(|&v| coder.code(v)).collect())
}

/// `1/2 ||v - W h||^2 + lambda * (h0 + h1)` for one pixel.
#[inline]
pub fn pixel_objective(v: [f64; 3], w: &StainBasis, h: [f64; 2], lambda: f64) -> f64 {
    let r = w.mix(h);
    let d = [v[0] - r[0], v[1] - r[1], v[2] - r[2]];
    0.5 * dot(d, d) + lambda * (h[0] + h[1])
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Default, Clone, Copy)]
struct Accumulator {
    sum: f64,
    compensation: f64,
}

impl Accumulator {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Factorization objective over a whole sample.
pub fn objective(od: &[[f64; 3]], w: &StainBasis, h: &[[f64; 2]], lambda: f64) -> f64 {
    let mut acc = Accumulator::default();
    for (&v, &hx) in od.iter().zip(h) {
        acc.add(pixel_objective(v, w, hx, lambda));
    }
    acc.value()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnmfConfig {
    /// Sparsity weight on the densities.
    pub lambda: f64,
    pub max_outer_iters: usize,
    /// Stop once the relative objective change falls below this.
    pub rel_tol: f64,
    /// Seed for the initialization perturbation.
    pub seed: u64,
}

impl Default for SnmfConfig {
    fn default() -> Self {
        SnmfConfig {
            lambda: DEFAULT_LAMBDA,
            max_outer_iters: DEFAULT_MAX_OUTER_ITERS,
            rel_tol: DEFAULT_REL_TOL,
            seed: 0,
        }
    }
}

impl SnmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidConfig("max_outer_iters must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// Outcome of [`fit_basis`].
#[derive(Debug, Clone)]
pub struct BasisFit {
    /// Ordered basis (hematoxylin first).
    pub basis: StainBasis,
    /// Column permutation applied by [`order_stains`].
    pub permutation: [usize; 2],
    /// Objective after the initial density step and after every outer
    /// iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Fraction of total density carried by each ordered stain.
    pub density_share: [f64; 2],
    pub warnings: Vec<Warning>,
}

/// Observer for the per-iteration basis (for tests and diagnostics).
pub trait IterateObserver {
    fn observe(&mut self, iteration: usize, basis: &StainBasis, densities: &[[f64; 2]]);
}

impl IterateObserver for () {
    fn observe(&mut self, _: usize, _: &StainBasis, _: &[[f64; 2]]) {}
}

fn initial_basis(seed: u64) -> [[f64; 3]; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturb = |c: [f64; 3]| {
        let c = normalize(c);
        normalize([
            c[0] + rng.random::<f64>() * INIT_NOISE,
            c[1] + rng.random::<f64>() * INIT_NOISE,
            c[2] + rng.random::<f64>() * INIT_NOISE,
        ])
    };
    [perturb(REFERENCE_HEMATOXYLIN), perturb(REFERENCE_EOSIN)]
}

fn density_step(od: &[[f64; 3]], columns: [[f64; 3]; 2], lambda: f64, h: &mut [[f64; 2]]) {
    let coder = SparseCoder::from_columns(columns, lambda);
    for (hx, &v) in h.iter_mut().zip(od) {
        *hx = coder.code_from(v, *hx);
    }
}

/// Replace each column by the unit, non-negative vector minimizing the data
/// term with everything else fixed: the normalized positive part of
/// `B_j - sum_{k != j} A_kj w_k` (or the best axis if that part is empty).
fn basis_step(od: &[[f64; 3]], h: &[[f64; 2]], columns: &mut [[f64; 3]; 2]) {
    let mut a = [[Accumulator::default(); 2]; 2];
    let mut b = [[Accumulator::default(); 2]; 3];
    for (&v, &hx) in od.iter().zip(h) {
        for j in 0..2 {
            for k in 0..2 {
                a[j][k].add(hx[j] * hx[k]);
            }
            for c in 0..3 {
                b[c][j].add(v[c] * hx[j]);
            }
        }
    }
    for j in 0..2 {
        if a[j][j].value() <= 0.0 {
            continue;
        }
        let k = 1 - j;
        let akj = a[k][j].value();
        let g: [f64; 3] = std::array::from_fn(|c| b[c][j].value() - columns[k][c] * akj);
        let positive = g.map(|x| x.max(0.0));
        let n = norm(positive);
        columns[j] = if n > 0.0 {
            positive.map(|x| x / n)
        } else {
            let best = (0..3).max_by(|&p, &q| g[p].total_cmp(&g[q])).unwrap_or(0);
            std::array::from_fn(|c| if c == best { 1.0 } else { 0.0 })
        };
    }
}

/// Learn an ordered stain basis from sampled optical densities.
pub fn fit_basis(od: &[[f64; 3]], cfg: &SnmfConfig) -> Result<BasisFit> {
    fit_basis_observed(od, cfg, &mut ())
}

pub fn fit_basis_observed(od: &[[f64; 3]], cfg: &SnmfConfig, observer: &mut dyn IterateObserver) -> Result<BasisFit> {
    cfg.validate()?;
    let m = od.len();
    if m < MIN_PIXELS {
        return Err(Error::InsufficientPixels {
            found: m,
            required: MIN_PIXELS,
        });
    }
    let mut warnings = Vec::new();
    if m < RECOMMENDED_PIXELS {
        warnings.push(Warning::FewPixels {
            found: m,
            recommended: RECOMMENDED_PIXELS,
        });
    }

    let mut columns = initial_basis(cfg.seed);
    let mut h = vec![[0.0; 2]; m];
    density_step(od, columns, cfg.lambda, &mut h);
    let basis_of = |c: [[f64; 3]; 2]| StainBasis { columns: c };
    let mut current = objective(od, &basis_of(columns), &h, cfg.lambda);
    observer.observe(0, &basis_of(columns), &h);

    let mut history = vec![current];
    let mut best = (current, columns);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_outer_iters {
        iterations = it;
        basis_step(od, &h, &mut columns);
        density_step(od, columns, cfg.lambda, &mut h);
        let next = objective(od, &basis_of(columns), &h, cfg.lambda);
        observer.observe(it, &basis_of(columns), &h);
        history.push(next);
        if next < best.0 {
            best = (next, columns);
        }
        let change = (current - next).abs() / current.abs().max(f64::MIN_POSITIVE);
        current = next;
        if change < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(Warning::NotConverged { iterations });
    }

    let fitted = basis_of(best.1);
    let (basis, permutation) = order_stains(&fitted);

    let mut totals = [0.0f64; 2];
    for hx in &h {
        totals[0] += hx[permutation[0]];
        totals[1] += hx[permutation[1]];
    }
    let sum = totals[0] + totals[1];
    let density_share = if sum > 0.0 {
        [totals[0] / sum, totals[1] / sum]
    } else {
        [0.0, 0.0]
    };
    for (j, &share) in density_share.iter().enumerate() {
        if share < MIN_DENSITY_SHARE {
            warnings.push(Warning::DegenerateBasis {
                reason: format!("stain {j} carries {:.3}% of the density", share * 100.0),
            });
        }
    }
    let separation = angle_degrees(basis.column(0), basis.column(1));
    if separation < MIN_COLUMN_ANGLE_DEG {
        warnings.push(Warning::DegenerateBasis {
            reason: format!("stain colors are only {separation:.2} degrees apart"),
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(BasisFit {
        basis,
        permutation,
        objective_history: history,
        iterations,
        converged,
        density_share,
        warnings,
    })
}
