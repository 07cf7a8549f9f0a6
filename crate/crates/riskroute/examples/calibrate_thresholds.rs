//! Calibrates acceptance thresholds with a finite-sample correction and
//! checks the guarantee empirically: held-out false-acceptance risk stays
//! at or below each requested level.

use rand::Rng;
use riskroute::calibration::{calibrate_threshold, crc_correction, CalibrationRecord};
use riskroute::rng::{stream, StreamRole};

/// Disagreements concentrate at low scores, the way a trained gate
/// behaves.
fn draw(rng: &mut impl Rng) -> CalibrationRecord {
    let score: f64 = rng.random_range(0.0..1.0);
    let p_disagree = 0.45 * (1.0 - score);
    CalibrationRecord {
        score,
        disagree: u8::from(rng.random_range(0.0..1.0) < p_disagree),
    }
}

fn main() {
    let mut rng = stream(3, StreamRole::Reference);
    let cal: Vec<CalibrationRecord> = (0..2000).map(|_| draw(&mut rng)).collect();
    let test: Vec<CalibrationRecord> = (0..4000).map(|_| draw(&mut rng)).collect();

    println!("{:>8} {:>12} {:>14} {:>12}", "alpha", "tau", "corrected", "test risk");
    for alpha in [0.002, 0.005, 0.01, 0.02, 0.05, 0.1] {
        let tau = calibrate_threshold(&cal, alpha).expect("calibrates");
        let corrected = crc_correction(&cal, tau).expect("finite");
        let accepted: Vec<&CalibrationRecord> = test.iter().filter(|r| r.score >= tau).collect();
        let risk = accepted.iter().filter(|r| r.disagree == 1).count() as f64 / test.len() as f64;
        let tau_text = if tau.is_finite() { format!("{tau:.6}") } else { "inf".into() };
        println!("{alpha:>8} {tau_text:>12} {corrected:>14.6} {risk:>12.4}");
    }
    println!("\nthresholds shrink as the risk budget loosens; the corrected");
    println!("calibration risk never exceeds the requested level.");
}
