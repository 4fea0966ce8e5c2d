//! CSV emission. Floats use Rust's shortest round-trip formatting.

use std::io::{self, Write};

use matheron_core::experiment::{MethodRun, TimingRecord, TwinInstance};

pub const POSTERIOR_HEADER: &str =
    "method,grid_index,position,truth,is_observed,obs_value,post_mean,post_std,draw_id,draw_value";
pub const TIMING_HEADER: &str = "method,axis,axis_value,fit_time_s,predict_time_s,rmse,runs,seed";

pub fn float(v: f64) -> String {
    format!("{v:?}")
}

/// One `draw_id = -1` row per grid point with the mean and spread, then one
/// row per draw.
pub fn write_posterior<W: Write>(out: &mut W, instance: &TwinInstance, runs: &[MethodRun]) -> io::Result<()> {
    writeln!(out, "{POSTERIOR_HEADER}")?;
    let grid = instance.grid();
    let mut obs_value = vec![None; grid.dim()];
    for (j, &i) in grid.obs_indices().iter().enumerate() {
        obs_value[i] = Some(instance.y_star()[j]);
    }
    for run in runs {
        for (i, &pos) in grid.positions().iter().enumerate() {
            let prefix = format!(
                "{},{i},{},{},{},{},{},{}",
                run.method,
                float(pos),
                float(instance.truth()[i]),
                u8::from(obs_value[i].is_some()),
                obs_value[i].map(float).unwrap_or_default(),
                float(run.mean[i]),
                float(run.std[i]),
            );
            writeln!(out, "{prefix},-1,")?;
            for k in 0..run.draws.ncols() {
                writeln!(out, "{prefix},{k},{}", float(run.draws[(i, k)]))?;
            }
        }
    }
    Ok(())
}

pub fn write_timing_header<W: Write>(out: &mut W) -> io::Result<()> {
    writeln!(out, "{TIMING_HEADER}")
}

pub fn write_timing_row<W: Write>(out: &mut W, r: &TimingRecord) -> io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        r.method,
        r.axis.as_str(),
        r.axis_value,
        float(r.fit_time_s),
        float(r.predict_time_s),
        float(r.rmse),
        r.runs,
        r.seed
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0, 1e-7, -2.5e300, 0.30000000000000004] {
            assert_eq!(float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(float(1.0), "1.0");
    }
}
