//! Compact pipeline-step strings, shared by the config file and the
//! `--pipeline` flag. One step per string, fields separated by `:`; numeric
//! fields may be omitted from the right to take the defaults listed here.
//!
//! | syntax                  | meaning                                        |
//! |-------------------------|------------------------------------------------|
//! | `sor[:K[:N]]`           | outlier removal, k=30, n_remove=100            |
//! | `srs:N`                 | random subsampling to N points                 |
//! | `rotate_z[:DEG]`        | ±DEG/2 z-rotation sweep, default 20            |
//! | `rotate_xyz_360`        | free rotation about all axes                   |
//! | `scale[:MIN:MAX]`       | uniform scale, default 0.5..1.5                |
//! | `shift[:MAX]`           | uniform translation, default ±0.1              |
//! | `dropout[:RATIO]`       | random dropout, default max ratio 0.2          |
//! | `jitter[:SIGMA[:CLIP]]` | clipped Gaussian noise, default 0.02/0.05      |
//! | `defense_average`       | randomized uniform-blend local transformation  |
//! | `defense_smooth`        | randomized kernel-blend local transformation   |

use crate::error::{CliError, CliResult};
use pointblank::preprocess::{AdaptiveRanges, AugKind, DefenseMode, PipelineSpec, PipelineStep};

fn bad(step: &str, why: &str) -> CliError {
    CliError::config(format!("pipeline step `{step}`: {why}"))
}

fn num<T: std::str::FromStr>(step: &str, field: &str, raw: &str) -> CliResult<T> {
    raw.parse().map_err(|_| bad(step, &format!("bad {field} `{raw}`")))
}

pub fn parse_step(step: &str) -> CliResult<PipelineStep> {
    let parts: Vec<&str> = step.split(':').collect();
    let arity = |max: usize| -> CliResult<()> {
        if parts.len() > max + 1 {
            return Err(bad(step, "too many fields"));
        }
        Ok(())
    };
    match parts[0] {
        "sor" => {
            arity(2)?;
            let k = parts.get(1).map_or(Ok(30), |r| num(step, "k", r))?;
            let n_remove = parts.get(2).map_or(Ok(100), |r| num(step, "n_remove", r))?;
            Ok(PipelineStep::Sor { k, n_remove })
        }
        "srs" => {
            arity(1)?;
            let raw = parts.get(1).ok_or_else(|| bad(step, "needs a point count"))?;
            Ok(PipelineStep::Srs { n_keep: num(step, "n_keep", raw)? })
        }
        "rotate_z" => {
            arity(1)?;
            let deg: f64 = parts.get(1).map_or(Ok(20.0), |r| num(step, "angle", r))?;
            if !deg.is_finite() || deg <= 0.0 {
                return Err(bad(step, "angle must be positive degrees"));
            }
            Ok(PipelineStep::Augment { kind: AugKind::RotateZ { max_angle: deg.to_radians() } })
        }
        "rotate_xyz_360" => {
            arity(0)?;
            Ok(PipelineStep::Augment { kind: AugKind::RotateXyz360 })
        }
        "scale" => {
            arity(2)?;
            let min: f64 = parts.get(1).map_or(Ok(0.5), |r| num(step, "min", r))?;
            let max: f64 = parts.get(2).map_or(Ok(1.5), |r| num(step, "max", r))?;
            if !(0.0 < min && min <= max) {
                return Err(bad(step, "need 0 < min <= max"));
            }
            Ok(PipelineStep::Augment { kind: AugKind::Scale { min, max } })
        }
        "shift" => {
            arity(1)?;
            let max_abs: f64 = parts.get(1).map_or(Ok(0.1), |r| num(step, "max", r))?;
            if !max_abs.is_finite() || max_abs <= 0.0 {
                return Err(bad(step, "shift bound must be positive"));
            }
            Ok(PipelineStep::Augment { kind: AugKind::Shift { max_abs } })
        }
        "dropout" => {
            arity(1)?;
            let max_ratio: f64 = parts.get(1).map_or(Ok(0.2), |r| num(step, "ratio", r))?;
            if !(0.0 < max_ratio && max_ratio < 1.0) {
                return Err(bad(step, "ratio must lie in (0, 1)"));
            }
            Ok(PipelineStep::Augment { kind: AugKind::Dropout { max_ratio } })
        }
        "jitter" => {
            arity(2)?;
            let sigma: f64 = parts.get(1).map_or(Ok(0.02), |r| num(step, "sigma", r))?;
            let clip: f64 = parts.get(2).map_or(Ok(0.05), |r| num(step, "clip", r))?;
            if !(sigma > 0.0 && clip > 0.0) {
                return Err(bad(step, "sigma and clip must be positive"));
            }
            Ok(PipelineStep::Augment { kind: AugKind::Jitter { sigma, clip } })
        }
        "defense_average" => {
            arity(0)?;
            Ok(PipelineStep::Defense { mode: DefenseMode::Average, ranges: AdaptiveRanges::default() })
        }
        "defense_smooth" => {
            arity(0)?;
            Ok(PipelineStep::Defense { mode: DefenseMode::Smooth, ranges: AdaptiveRanges::default() })
        }
        other => Err(bad(step, &format!("unknown step `{other}`"))),
    }
}

pub fn parse_pipeline(steps: &[String]) -> CliResult<PipelineSpec> {
    let parsed: CliResult<Vec<PipelineStep>> = steps.iter().map(|s| parse_step(s)).collect();
    Ok(PipelineSpec::new(parsed?))
}
