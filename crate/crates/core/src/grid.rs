//! Sharing grids: partitions of a `k×k` kernel into `k'×k'` shared regions.
//!
//! A grid is stored as its half form, outermost cell first and the center
//! cell last (`[9,8,4,2,1,1,1]` for the default 51×51 kernel). The full form
//! mirrors the half about its last element, so every grid is symmetric about
//! the kernel center.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact fraction used for parameter and area ratios.
pub type Fraction = Ratio<u64>;

#[derive(Clone, Debug)]
pub struct SharingGrid {
    k: usize,
    k_prime: usize,
    half: Vec<usize>,
    full: Vec<usize>,
    r_c: usize,
    m: usize,
    // false when the center cell itself is shared (custom grids only)
    center_unshared: bool,
}

/// Two grids are equal when they describe the same partition. The central
/// radius and base are construction metadata and do not take part.
impl PartialEq for SharingGrid {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k && self.half == other.half
    }
}

impl Eq for SharingGrid {}

/// Builds the exponential grid for a `k×k` kernel with a fine-grained central
/// `(2·r_c+1)²` region and growth base `m`.
///
/// Each side of the kernel (excluding the center cell) holds `r_c` unit cells,
/// then `m¹, m², …` while they fit in `(k-1)/2`; the outermost cell absorbs
/// whatever remains and is omitted when nothing remains.
pub fn build_grid(k: usize, r_c: usize, m: usize) -> Result<SharingGrid> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "kernel size must be a positive odd integer, got {k}"
        )));
    }
    if m < 2 {
        return Err(Error::invalid(format!("base must be at least 2, got {m}")));
    }
    if k < 2 * r_c + 1 {
        return Err(Error::invalid(format!(
            "kernel size {k} is smaller than the {0}x{0} central region",
            2 * r_c + 1
        )));
    }
    let per_side = (k - 1) / 2;

    // inner to outer, center excluded
    let mut side = vec![1usize; r_c];
    let mut used = r_c;
    let mut power = Some(m);
    while let Some(p) = power {
        if used + p > per_side {
            break;
        }
        side.push(p);
        used += p;
        power = p.checked_mul(m);
    }
    if per_side > used {
        side.push(per_side - used);
    }

    let mut half: Vec<usize> = side.into_iter().rev().collect();
    half.push(1);
    let mut grid = from_half(half)?;
    grid.r_c = r_c;
    grid.m = m;
    debug_assert_eq!(grid.k, k);
    Ok(grid)
}

/// Builds a grid directly from its half form. Only symmetry and tiling are
/// enforced; the central radius is derived from the run of unit cells at the
/// center and the base is recorded as 2.
pub fn build_custom_grid(half: &[usize]) -> Result<SharingGrid> {
    if half.is_empty() {
        return Err(Error::invalid("sharing grid must not be empty"));
    }
    if half.contains(&0) {
        return Err(Error::invalid(format!(
            "sharing grid cells must be positive, got {half:?}"
        )));
    }
    from_half(half.to_vec())
}

fn from_half(half: Vec<usize>) -> Result<SharingGrid> {
    let n = half.len();
    let mut full = half.clone();
    full.extend(half[..n - 1].iter().rev());
    let k = full
        .iter()
        .try_fold(0usize, |acc, &s| acc.checked_add(s))
        .ok_or_else(|| Error::invalid("sharing grid sum overflows"))?;
    let center_unshared = half[n - 1] == 1;
    let unit_run = half.iter().rev().take_while(|&&s| s == 1).count();
    Ok(SharingGrid {
        k,
        k_prime: full.len(),
        half,
        full,
        r_c: unit_run.saturating_sub(1),
        m: 2,
        center_unshared,
    })
}

impl SharingGrid {
    /// Full kernel size.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Compact kernel size.
    pub fn k_prime(&self) -> usize {
        self.k_prime
    }

    pub fn half(&self) -> &[usize] {
        &self.half
    }

    pub fn full(&self) -> &[usize] {
        &self.full
    }

    pub fn central_radius(&self) -> usize {
        self.r_c
    }

    pub fn base(&self) -> usize {
        self.m
    }

    /// True when every cell is a single position (no sharing).
    pub fn is_identity(&self) -> bool {
        self.k == self.k_prime
    }

    /// Learnable weights per channel.
    pub fn params_per_channel(&self) -> usize {
        self.k_prime * self.k_prime
    }

    /// `k'² / k²`.
    pub fn param_ratio(&self) -> Fraction {
        Fraction::new((self.k_prime * self.k_prime) as u64, (self.k * self.k) as u64)
    }

    /// `(2·r_c+1)² / k²`, or `None` when the center cell is shared.
    pub fn central_ratio(&self) -> Option<Fraction> {
        if !self.center_unshared {
            return None;
        }
        let c = (2 * self.r_c + 1) as u64;
        Some(Fraction::new(c * c, (self.k * self.k) as u64))
    }

    pub fn partition(&self) -> RegionPartition {
        RegionPartition::new(self)
    }

    pub fn to_json(&self) -> GridJson {
        GridJson {
            k: self.k,
            k_prime: self.k_prime,
            half: self.half.clone(),
            r_c: self.r_c,
            m: self.m,
        }
    }

    pub fn from_json(json: &GridJson) -> Result<Self> {
        let mut grid = build_custom_grid(&json.half)?;
        if grid.k != json.k || grid.k_prime != json.k_prime {
            return Err(Error::invalid(format!(
                "grid {:?} gives k={}, k'={} but the record says k={}, k'={}",
                json.half, grid.k, grid.k_prime, json.k, json.k_prime
            )));
        }
        if json.m < 2 {
            return Err(Error::invalid(format!("base must be at least 2, got {}", json.m)));
        }
        let center = (grid.k_prime - 1) / 2;
        let unit_run = if grid.center_unshared { grid.r_c + 1 } else { 0 };
        if json.r_c + 1 > unit_run || json.r_c > center {
            return Err(Error::invalid(format!(
                "central radius {} is not unshared in grid {:?}",
                json.r_c, json.half
            )));
        }
        grid.r_c = json.r_c;
        grid.m = json.m;
        Ok(grid)
    }
}

/// JSON record of a grid: `{"k","k_prime","half","r_c","m"}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridJson {
    pub k: usize,
    pub k_prime: usize,
    pub half: Vec<usize>,
    pub r_c: usize,
    pub m: usize,
}

/// Mapping from full-kernel positions to compact-kernel regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionPartition {
    k: usize,
    k_prime: usize,
    // cell index of each coordinate along one axis
    cell_of: Vec<usize>,
    // cumulative cell boundaries, length k'+1
    starts: Vec<usize>,
}

impl RegionPartition {
    fn new(grid: &SharingGrid) -> Self {
        let mut starts = Vec::with_capacity(grid.k_prime + 1);
        let mut cell_of = Vec::with_capacity(grid.k);
        starts.push(0);
        for (a, &s) in grid.full.iter().enumerate() {
            cell_of.extend(std::iter::repeat_n(a, s));
            starts.push(starts[a] + s);
        }
        RegionPartition {
            k: grid.k,
            k_prime: grid.k_prime,
            cell_of,
            starts,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn k_prime(&self) -> usize {
        self.k_prime
    }

    /// Compact cell index of coordinate `x` along one axis.
    pub fn cell_of(&self, x: usize) -> usize {
        self.cell_of[x]
    }

    /// Region `(a, b)` that owns position `(x, y)`.
    ///
    /// # Panics
    ///
    /// Panics if `x` or `y` is not below `k`.
    pub fn region_of(&self, x: usize, y: usize) -> (usize, usize) {
        (self.cell_of[x], self.cell_of[y])
    }

    /// Half-open extent `[lo, hi)` of cell `a` along one axis.
    pub fn cell_bounds(&self, a: usize) -> (usize, usize) {
        (self.starts[a], self.starts[a + 1])
    }

    /// Rectangle `([x_lo, x_hi), [y_lo, y_hi))` owned by region `(a, b)`.
    pub fn bounds(&self, a: usize, b: usize) -> ((usize, usize), (usize, usize)) {
        (self.cell_bounds(a), self.cell_bounds(b))
    }

    pub fn region_size(&self, a: usize, b: usize) -> usize {
        let ((x0, x1), (y0, y1)) = self.bounds(a, b);
        (x1 - x0) * (y1 - y0)
    }
}

/// Rounds `value · scale` to the nearest integer, ties away from zero.
///
/// `round_scaled(r, 100)` gives a ratio to two decimals, `round_scaled(r,
/// 10_000)` a percentage to two decimals.
pub fn round_scaled(value: Fraction, scale: u64) -> u64 {
    let num = *value.numer() as u128 * scale as u128;
    let den = *value.denom() as u128;
    ((2 * num + den) / (2 * den)) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_51_grid() {
        let g = build_grid(51, 2, 2).unwrap();
        assert_eq!(g.half(), &[9, 8, 4, 2, 1, 1, 1]);
        assert_eq!(g.k_prime(), 13);
        assert_eq!(g.full(), &[9, 8, 4, 2, 1, 1, 1, 1, 1, 2, 4, 8, 9]);
    }

    #[test]
    fn central_ablation_grids() {
        let cases: [(usize, &[usize]); 4] = [
            (0, &[11, 8, 4, 2, 1]),
            (1, &[10, 8, 4, 2, 1, 1]),
            (2, &[9, 8, 4, 2, 1, 1, 1]),
            (3, &[8, 8, 4, 2, 1, 1, 1, 1]),
        ];
        for (r_c, half) in cases {
            assert_eq!(build_grid(51, r_c, 2).unwrap().half(), half, "r_c={r_c}");
        }
    }

    #[test]
    fn exact_fit_omits_remainder() {
        let g = build_grid(33, 2, 2).unwrap();
        assert_eq!(g.half(), &[8, 4, 2, 1, 1, 1]);
        assert_eq!(g.k_prime(), 11);
    }

    #[test]
    fn large_kernels() {
        let g = build_grid(101, 3, 2).unwrap();
        assert_eq!(g.half(), &[17, 16, 8, 4, 2, 1, 1, 1, 1]);
        assert_eq!(g.k_prime(), 17);
        assert_eq!(g.full().iter().sum::<usize>(), 101);

        let g = build_grid(151, 2, 2).unwrap();
        assert_eq!(g.half(), &[11, 32, 16, 8, 4, 2, 1, 1, 1]);
        assert_eq!(g.k_prime(), 17);
    }

    #[test]
    fn remainder_may_be_smaller_than_previous_power() {
        let g = build_grid(37, 2, 2).unwrap();
        assert_eq!(g.half(), &[2, 8, 4, 2, 1, 1, 1]);
    }

    #[test]
    fn trivial_and_degenerate_grids() {
        let g = build_grid(3, 1, 2).unwrap();
        assert_eq!(g.half(), &[1, 1]);
        assert_eq!(g.full(), &[1, 1, 1]);
        assert!(g.is_identity());
        assert_eq!(build_grid(1, 0, 2).unwrap().full(), &[1]);
        // (7-1)/2 = 3 leaves a unit remainder after two central cells
        assert!(build_grid(7, 2, 2).unwrap().is_identity());
    }

    #[test]
    fn base_three() {
        // per side 12 = 1 + 3 + 8(remainder)
        let g = build_grid(25, 1, 3).unwrap();
        assert_eq!(g.half(), &[8, 3, 1, 1]);
        assert_eq!(g.base(), 3);
    }

    #[test]
    fn rejects_invalid_arguments() {
        assert!(matches!(build_grid(4, 1, 2), Err(Error::InvalidArgument(_))));
        assert!(build_grid(0, 0, 2).is_err());
        assert!(build_grid(5, 3, 2).is_err());
        assert!(build_grid(51, 2, 1).is_err());
        assert!(build_custom_grid(&[]).is_err());
        assert!(build_custom_grid(&[2, 0, 1]).is_err());
    }

    #[test]
    fn custom_grids_from_ablation() {
        let g = build_custom_grid(&[2, 2, 2, 2, 2, 2, 2, 2, 1]).unwrap();
        assert_eq!((g.k(), g.k_prime()), (33, 17));
        let g = build_custom_grid(&[4, 4, 4, 2, 1, 1, 1]).unwrap();
        assert_eq!((g.k(), g.k_prime()), (33, 13));
        let g = build_custom_grid(&[1, 1, 2, 4, 8, 1]).unwrap();
        assert_eq!((g.k(), g.k_prime()), (33, 11));
        assert_eq!(g.central_radius(), 0);
    }

    #[test]
    fn custom_grid_with_shared_center_has_no_central_ratio() {
        let g = build_custom_grid(&[2, 3]).unwrap();
        assert_eq!(g.k(), 7);
        assert_eq!(g.central_ratio(), None);
    }

    #[test]
    fn ratios() {
        let g = build_custom_grid(&[8, 4, 2, 1, 1, 1]).unwrap();
        assert_eq!(g.param_ratio(), Fraction::new(121, 1089));
        let g = build_custom_grid(&[2, 2, 2, 2, 2, 2, 2, 1, 1, 1]).unwrap();
        assert_eq!(g.param_ratio(), Fraction::new(361, 1089));
        assert_eq!(build_grid(9, 4, 2).unwrap().param_ratio(), Fraction::new(1, 1));

        assert_eq!(
            build_grid(51, 2, 2).unwrap().central_ratio(),
            Some(Fraction::new(25, 2601))
        );
        assert_eq!(
            build_grid(51, 3, 2).unwrap().central_ratio(),
            Some(Fraction::new(49, 2601))
        );
        assert_eq!(
            build_grid(51, 0, 2).unwrap().central_ratio(),
            Some(Fraction::new(1, 2601))
        );
    }

    #[test]
    fn rounding() {
        assert_eq!(round_scaled(Fraction::new(25, 2601), 10_000), 96);
        assert_eq!(round_scaled(Fraction::new(1, 8), 100), 13);
        assert_eq!(round_scaled(Fraction::new(2601, 49), 10), 531);
    }

    #[test]
    fn partition_of_figure_grid() {
        let g = build_custom_grid(&[2, 1]).unwrap();
        assert_eq!(g.full(), &[2, 1, 2]);
        let p = g.partition();
        assert_eq!(p.region_of(0, 0), (0, 0));
        assert_eq!(p.region_of(2, 2), (1, 1));
        assert_eq!(p.region_of(4, 3), (2, 2));
        assert_eq!(p.bounds(2, 0), ((3, 5), (0, 2)));
        assert_eq!(p.region_size(0, 1), 2);
    }

    #[test]
    fn center_maps_to_center() {
        let p = build_grid(51, 2, 2).unwrap().partition();
        assert_eq!(p.region_of(25, 25), (6, 6));
    }

    #[test]
    fn json_round_trip_keeps_metadata() {
        let g = build_grid(51, 3, 2).unwrap();
        let text = serde_json::to_string(&g.to_json()).unwrap();
        assert_eq!(text, r#"{"k":51,"k_prime":15,"half":[8,8,4,2,1,1,1,1],"r_c":3,"m":2}"#);
        let back = SharingGrid::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.central_radius(), 3);
    }

    #[test]
    fn json_rejects_inconsistent_records() {
        let mut j = build_grid(51, 2, 2).unwrap().to_json();
        j.k = 49;
        assert!(SharingGrid::from_json(&j).is_err());
        let mut j = build_grid(51, 2, 2).unwrap().to_json();
        j.r_c = 4;
        assert!(SharingGrid::from_json(&j).is_err());
    }
}
