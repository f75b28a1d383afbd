//! Adaptive Gauss-Kronrod (10/21 point) quadrature for vector-valued
//! integrands on finite intervals.
//!
//! The vector form lets `specfun` integrate all derivative orders of the
//! fundamental solution in one pass, sharing the expensive exponential.

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_931_966_574,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral<const N: usize> {
    pub value: [f64; N],
    pub error: [f64; N],
    pub subdivisions: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel<const N: usize> {
    lo: f64,
    hi: f64,
    value: [f64; N],
    error: [f64; N],
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut scaled = err.abs();
    if res_asc != 0.0 && scaled != 0.0 {
        let scale = (200.0 * scaled / res_asc).powf(1.5);
        scaled = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        scaled = scaled.max(50.0 * f64::EPSILON * res_abs);
    }
    scaled
}

/// One 21-point Kronrod panel with its embedded 10-point Gauss estimate.
fn gk21<const N: usize, F>(f: &F, lo: f64, hi: f64) -> Panel<N>
where
    F: Fn(f64) -> [f64; N],
{
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let abs_half = half.abs();

    let fc = f(center);
    let mut res_k = [0.0; N];
    let mut res_g = [0.0; N];
    let mut res_abs = [0.0; N];
    for k in 0..N {
        res_k[k] = WGK[10] * fc[k];
        res_abs[k] = WGK[10] * fc[k].abs();
    }

    let mut samples = [([0.0; N], [0.0; N]); 10];
    for (j, sample) in samples.iter_mut().enumerate() {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for k in 0..N {
            res_k[k] += WGK[j] * (f1[k] + f2[k]);
            res_abs[k] += WGK[j] * (f1[k].abs() + f2[k].abs());
            if j % 2 == 1 {
                res_g[k] += WG[j / 2] * (f1[k] + f2[k]);
            }
        }
        *sample = (f1, f2);
    }

    let mut value = [0.0; N];
    let mut error = [0.0; N];
    for k in 0..N {
        let mean = 0.5 * res_k[k];
        let mut res_asc = WGK[10] * (fc[k] - mean).abs();
        for (j, (f1, f2)) in samples.iter().enumerate() {
            res_asc += WGK[j] * ((f1[k] - mean).abs() + (f2[k] - mean).abs());
        }
        value[k] = res_k[k] * half;
        let raw = (res_k[k] - res_g[k]) * half;
        error[k] = rescale_error(raw, res_abs[k] * abs_half, res_asc * abs_half);
    }
    Panel { lo, hi, value, error }
}

fn totals<const N: usize>(panels: &[Panel<N>]) -> ([f64; N], [f64; N]) {
    let mut value = [0.0; N];
    let mut error = [0.0; N];
    for p in panels {
        for k in 0..N {
            value[k] += p.value[k];
            error[k] += p.error[k];
        }
    }
    (value, error)
}

/// Integrate a vector-valued `f` over `[lo, hi]` until every component
/// satisfies `error <= max(abs_tol, rel_tol * |value|)`.
pub fn integrate_vec<const N: usize, F>(
    f: F,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_subdivisions: usize,
) -> Result<Integral<N>>
where
    F: Fn(f64) -> [f64; N],
{
    if lo == hi {
        return Ok(Integral {
            value: [0.0; N],
            error: [0.0; N],
            subdivisions: 0,
        });
    }
    let mut panels: Vec<Panel<N>> = vec![gk21(&f, lo, hi)];

    loop {
        let (value, error) = totals(&panels);
        let tol: [f64; N] = std::array::from_fn(|k| abs_tol.max(rel_tol * value[k].abs()));
        if (0..N).all(|k| error[k] <= tol[k]) {
            return Ok(Integral {
                value,
                error,
                subdivisions: panels.len(),
            });
        }
        if panels.len() >= max_subdivisions {
            let k = (0..N)
                .max_by(|&i, &j| {
                    let ri = error[i] / tol[i].max(f64::MIN_POSITIVE);
                    let rj = error[j] / tol[j].max(f64::MIN_POSITIVE);
                    ri.total_cmp(&rj)
                })
                .unwrap_or(0);
            return Err(Error::Quadrature {
                estimate: value[k],
                error: error[k],
                subdivisions: panels.len(),
            });
        }

        // Bisect the panel contributing the largest share of the budget.
        let worst = panels
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let score = (0..N)
                    .map(|k| p.error[k] / tol[k].max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                (i, score)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.lo + p.hi);
        if mid <= p.lo.min(p.hi) || mid >= p.lo.max(p.hi) {
            // Interval can no longer be split in floating point.
            return Err(Error::Quadrature {
                estimate: value[0],
                error: error[0],
                subdivisions: panels.len() + 1,
            });
        }
        panels.push(gk21(&f, p.lo, mid));
        panels.push(gk21(&f, mid, p.hi));
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(f: F, lo: f64, hi: f64, rel_tol: f64, abs_tol: f64, max_subdivisions: usize) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let r = integrate_vec(|t| [f(t)], lo, hi, rel_tol, abs_tol, max_subdivisions)?;
    Ok((r.value[0], r.error[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let (v, e) = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, 1e-12, 0.0, 10).unwrap();
        assert!((v - (64.0 / 6.0 - 4.0)).abs() < 1e-13);
        assert!(e < 1e-12);
    }

    #[test]
    fn algebraic_endpoint_singularity() {
        // integral of x^{-1/2} on (0, 1] is 2
        let (v, _) = integrate(|x| x.powf(-0.5), 0.0, 1.0, 1e-10, 0.0, 200).unwrap();
        assert!((v - 2.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn vector_components_converge_independently() {
        let r = integrate_vec(|x| [x.exp(), (3.0 * x).sin()], 0.0, 1.0, 1e-12, 0.0, 50).unwrap();
        assert!((r.value[0] - (1f64.exp() - 1.0)).abs() < 1e-13);
        assert!((r.value[1] - (1.0 - 3f64.cos()) / 3.0).abs() < 1e-13);
    }

    #[test]
    fn reports_non_convergence() {
        let err = integrate(|x| (1.0 / x).sin() / x, 1e-9, 1.0, 1e-14, 0.0, 8).unwrap_err();
        assert!(matches!(err, Error::Quadrature { subdivisions: 8, .. }));
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let (v, _) = integrate(|x| x * x, 1.0, 0.0, 1e-12, 0.0, 10).unwrap();
        assert!((v + 1.0 / 3.0).abs() < 1e-14);
    }
}
