//! i.i.d. Rayleigh MIMO channels and AWGN.
//!
//! SNR is per receive antenna: with unit-variance channel entries and
//! unit-energy symbols each receive antenna collects `M_T` units of signal
//! power, so `N_o = M_T / 10^(snr_db / 10)`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{ComplexMatrix, ComplexVector, LinalgError};

/// One sample of a circularly symmetric complex Gaussian with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let scale = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * scale, im * scale)
}

/// `M_R x M_T` matrix of i.i.d. CN(0, 1) entries.
pub fn draw_channel<R: Rng + ?Sized>(rng: &mut R, receive: usize, transmit: usize) -> ComplexMatrix {
    assert!(receive >= transmit && transmit >= 1, "need M_R >= M_T >= 1");
    let data = (0..receive * transmit).map(|_| complex_gaussian(rng, 1.0)).collect();
    ComplexMatrix::from_row_major(receive, transmit, data)
}

/// Noise variance per complex entry for an SNR in dB.
pub fn snr_to_noise(snr_db: f64, transmit: usize) -> f64 {
    assert!(transmit >= 1);
    transmit as f64 / 10f64.powf(snr_db / 10.0)
}

/// `y = H s + n` with `n ~ CN(0, N_o I)`.
pub fn transmit<R: Rng + ?Sized>(
    h: &ComplexMatrix,
    s: &ComplexVector,
    noise_var: f64,
    rng: &mut R,
) -> Result<ComplexVector, LinalgError> {
    let hs = h.mul_vec(s)?;
    if noise_var == 0.0 {
        return Ok(hs);
    }
    let y = hs.iter().map(|v| v + complex_gaussian(rng, noise_var)).collect();
    Ok(ComplexVector::new(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn snr_convention() {
        assert!((snr_to_noise(10.0, 4) - 0.4).abs() < 1e-15);
        assert_eq!(snr_to_noise(0.0, 1), 1.0);
        let ratio = snr_to_noise(5.0, 2) / snr_to_noise(5.0 + 10.0 * 2f64.log10(), 2);
        assert!((ratio - 2.0).abs() < 1e-6);
    }

    #[test]
    fn channel_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut power = 0.0;
        let draws = 25_000;
        for _ in 0..draws {
            let h = draw_channel(&mut rng, 2, 2);
            power += h.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let mean = power / (4 * draws) as f64;
        assert!((0.98..=1.02).contains(&mean), "{mean}");
    }

    #[test]
    fn seeded_draws_repeat() {
        let a = draw_channel(&mut ChaCha8Rng::seed_from_u64(9), 4, 3);
        let b = draw_channel(&mut ChaCha8Rng::seed_from_u64(9), 4, 3);
        assert_eq!(a, b);
        assert_eq!((a.rows(), a.cols()), (4, 3));
    }

    #[test]
    fn noiseless_transmission() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e1 = ComplexVector::new(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        assert_eq!(transmit(&ComplexMatrix::identity(2), &e1, 0.0, &mut rng).unwrap(), e1);
        let h = draw_channel(&mut rng, 3, 2);
        assert_eq!(transmit(&h, &e1, 0.0, &mut rng).unwrap(), h.mul_vec(&e1).unwrap());
    }

    #[test]
    fn noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let no = 0.37;
        let n = 100_000;
        let zero = ComplexVector::new(vec![Complex64::new(0.0, 0.0)]);
        let h = ComplexMatrix::identity(1);
        let (mut re2, mut im2) = (0.0, 0.0);
        for _ in 0..n {
            let y = transmit(&h, &zero, no, &mut rng).unwrap();
            re2 += y[0].re * y[0].re;
            im2 += y[0].im * y[0].im;
        }
        let (re_var, im_var) = (re2 / n as f64, im2 / n as f64);
        assert!(((re_var + im_var) / no - 1.0).abs() < 0.02);
        // each component has variance N_o / 2; sample variance sd = sqrt(2/n) * var
        let sigma = (2.0 / n as f64).sqrt() * no / 2.0;
        assert!((re_var - no / 2.0).abs() < 3.0 * sigma);
        assert!((im_var - no / 2.0).abs() < 3.0 * sigma);
    }
}
