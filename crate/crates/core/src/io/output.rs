use std::io::Write;

use nalgebra::DVector;

use crate::error::Result;
use crate::inference::TestResult;
use crate::model::Family;
use crate::stats::sigmoid;

/// Shortest round-trip text, in exponent form outside `[1e-4, 1e15)`.
fn fmt_float(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// One row per sample: `row,linear_predictor` followed by `prediction`
/// (outcome scale, training mean restored) for the Gaussian family or
/// `probability` for the Bernoulli family.
pub fn write_predictions<W: Write>(out: W, linear_predictor: &DVector<f64>, family: Family, z_mean: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let last = match family {
        Family::Gaussian => "prediction",
        Family::Bernoulli => "probability",
    };
    w.write_record(["row", "linear_predictor", last])?;
    for (i, &eta) in linear_predictor.iter().enumerate() {
        let extra = match family {
            Family::Gaussian => eta + z_mean,
            Family::Bernoulli => sigmoid(eta),
        };
        w.write_record([(i + 1).to_string(), fmt_float(eta), fmt_float(extra)])?;
    }
    w.flush()?;
    Ok(())
}

/// `test,statistic,df,p_value,asymptotics_verified`, one row per test.
pub fn write_tests<W: Write>(out: W, results: &[TestResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["test", "statistic", "df", "p_value", "asymptotics_verified"])?;
    for r in results {
        w.write_record([
            r.kind.to_string(),
            fmt_float(r.statistic),
            r.df.to_string(),
            fmt_float(r.p_value),
            r.asymptotics_verified.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
