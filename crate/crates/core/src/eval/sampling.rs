// AS241 coefficients are kept exactly as published.
#![allow(clippy::excessive_precision)]

use super::EvalError;

/// Two-sided z values for common confidence levels.
const Z_TABLE: [(f64, f64); 6] = [
    (0.80, 1.2815515655446004),
    (0.90, 1.6448536269514722),
    (0.95, 1.959963984540054),
    (0.98, 2.3263478740408408),
    (0.99, 2.5758293035489004),
    (0.999, 3.2905267314918945),
];

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Inverse of the standard normal CDF (Wichura's AS 241, relative error about 1e-16).
pub fn normal_quantile(p: f64) -> Result<f64, EvalError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(EvalError::InvalidArgument(format!(
            "quantile probability must lie in (0, 1), got {p}"
        )));
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        133.141_667_891_784_38,
        1_971.590_950_306_551_3,
        13_731.693_765_509_461,
        45_921.953_931_549_87,
        67_265.770_927_008_7,
        33_430.575_583_588_13,
        2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_91,
        687.187_007_492_057_9,
        5_394.196_021_424_751,
        21_213.794_301_586_597,
        39_307.895_800_092_71,
        28_729.085_735_721_943,
        5_226.495_278_852_854,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_6,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        0.241_780_725_177_450_6,
        0.022_723_844_989_269_184,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_8,
        1.676_384_830_183_803_8,
        0.689_767_334_985_1,
        0.148_103_976_427_480_08,
        0.015_198_666_563_616_457,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        0.296_560_571_828_504_9,
        0.026_532_189_526_576_124,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_888,
        0.136_929_880_922_735_8,
        0.014_875_361_290_850_615,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_94e-15,
    ];

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    Ok(if q < 0.0 { -z } else { z })
}

fn check_open_unit(name: &str, value: f64) -> Result<(), EvalError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(EvalError::InvalidArgument(format!(
            "{name} must lie in (0, 1), got {value}"
        )))
    }
}

/// Two-sided critical value for `confidence`, e.g. 1.96 for 0.95.
pub fn z_for_confidence(confidence: f64) -> Result<f64, EvalError> {
    check_open_unit("confidence", confidence)?;
    if let Some(&(_, z)) = Z_TABLE.iter().find(|(c, _)| *c == confidence) {
        return Ok(z);
    }
    normal_quantile(1.0 - (1.0 - confidence) / 2.0)
}

/// Documents to label so an accuracy estimate near `p` has the given margin
/// of error at the given confidence. `population` applies the finite-population
/// correction.
pub fn required_sample_size(
    confidence: f64,
    margin: f64,
    p: f64,
    population: Option<u64>,
) -> Result<u64, EvalError> {
    check_open_unit("margin", margin)?;
    check_open_unit("p", p)?;
    if population == Some(0) {
        return Err(EvalError::InvalidArgument("population must be at least 1".into()));
    }
    let z = z_for_confidence(confidence)?;
    // the small offset keeps float noise on an exact integer from adding one
    let n0 = (z * z * p * (1.0 - p) / (margin * margin) - 1e-9).ceil().max(1.0);
    Ok(match population {
        None => n0 as u64,
        Some(n) => {
            let n = n as f64;
            (n0 / (1.0 + (n0 - 1.0) / n) - 1e-9).ceil().max(1.0) as u64
        }
    })
}

/// Half-width of the normal-approximation confidence interval for a proportion.
pub fn margin_of_error(
    n: u64,
    p: f64,
    confidence: f64,
    population: Option<u64>,
) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidArgument("sample size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(EvalError::InvalidArgument(format!("p must lie in [0, 1], got {p}")));
    }
    let z = z_for_confidence(confidence)?;
    let base = z * (p * (1.0 - p) / n as f64).sqrt();
    match population {
        None => Ok(base),
        Some(big_n) if n > big_n => Err(EvalError::InvalidArgument(format!(
            "sample size {n} exceeds population {big_n}"
        ))),
        Some(big_n) if n == big_n => Ok(0.0),
        Some(big_n) => Ok(base * ((big_n - n) as f64 / (big_n - 1) as f64).sqrt()),
    }
}
