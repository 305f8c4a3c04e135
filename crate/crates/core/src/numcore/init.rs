use super::Matrix;
use crate::error::{PrismError, Result};
use crate::rng::SeedRng;

/// Half-width of the Xavier/Glorot uniform interval.
pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Entries i.i.d. uniform on `[-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]`.
pub fn xavier_uniform_init(rows: usize, cols: usize, rng: &mut SeedRng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(PrismError::dim(format!(
            "xavier init needs non-zero dims, got {rows}x{cols}"
        )));
    }
    let bound = xavier_bound(rows, cols);
    let data = (0..rows * cols)
        .map(|_| rng.uniform_range(-bound, bound))
        .collect();
    Matrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry_within_sqrt3() {
        let m = xavier_uniform_init(1, 1, &mut SeedRng::new(1)).unwrap();
        assert!(m.data()[0].abs() <= 3f64.sqrt());
    }

    #[test]
    fn four_by_two_within_one() {
        assert_eq!(xavier_bound(4, 2), 1.0);
        let m = xavier_uniform_init(4, 2, &mut SeedRng::new(2)).unwrap();
        assert_eq!(m.len(), 8);
        assert!(m.data().iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn large_sample_mean_near_zero() {
        let m = xavier_uniform_init(100, 100, &mut SeedRng::new(0)).unwrap();
        let mean = m.data().iter().sum::<f64>() / m.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            xavier_uniform_init(0, 3, &mut SeedRng::new(0)),
            Err(PrismError::Dimension(_))
        ));
    }

    #[test]
    fn seeded_runs_bit_identical_and_bounded() {
        for seed in 0..20 {
            let a = xavier_uniform_init(7, 3, &mut SeedRng::new(seed)).unwrap();
            let b = xavier_uniform_init(7, 3, &mut SeedRng::new(seed)).unwrap();
            assert_eq!(a, b);
            let bound = xavier_bound(7, 3);
            assert!(a.data().iter().all(|x| x.abs() <= bound));
        }
    }
}
