//! Evaluation reports as text and as `key=value` records.
//!
//! Record fields, one per line:
//!
//! | field               | value                                  |
//! |---------------------|----------------------------------------|
//! | `psnr_diffuse_db`   | dB, or `inf` for an exact match        |
//! | `psnr_specular_db`  | dB, or `inf`                           |
//! | `cluster_accuracy`  | fraction in `[0, 1]`, or `none`        |
//! | `iterations`        | adaptive clustering iterations         |
//! | `wall_time_s`       | seconds                                |

use std::collections::BTreeMap;

use unglare_core::eval::{EvalReport, Psnr};

pub fn to_text(r: &EvalReport) -> String {
    let acc = r
        .cluster_accuracy
        .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
    format!(
        "PSNR diffuse:     {} dB\nPSNR specular:    {} dB\ncluster accuracy: {acc}\niterations:       {}\nwall time:        {:.4} s\n",
        r.psnr_diffuse, r.psnr_specular, r.iterations, r.wall_time_secs
    )
}

fn psnr_field(p: Psnr) -> String {
    match p {
        Psnr::Finite(v) => format!("{v:?}"),
        Psnr::Infinite => "inf".into(),
    }
}

pub fn to_record(r: &EvalReport) -> String {
    let acc = r.cluster_accuracy.map_or_else(|| "none".into(), |a| format!("{a:?}"));
    format!(
        "psnr_diffuse_db={}\npsnr_specular_db={}\ncluster_accuracy={acc}\niterations={}\nwall_time_s={:?}\n",
        psnr_field(r.psnr_diffuse),
        psnr_field(r.psnr_specular),
        r.iterations,
        r.wall_time_secs
    )
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("missing field {0}")]
    Missing(&'static str),
    #[error("bad value for {0}")]
    Bad(&'static str),
}

pub fn parse_record(text: &str) -> Result<EvalReport, RecordError> {
    let fields: BTreeMap<&str, &str> = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let get = |k: &'static str| fields.get(k).copied().ok_or(RecordError::Missing(k));
    let psnr = |k: &'static str| -> Result<Psnr, RecordError> {
        match get(k)? {
            "inf" => Ok(Psnr::Infinite),
            v => v.parse().map(Psnr::Finite).map_err(|_| RecordError::Bad(k)),
        }
    };
    Ok(EvalReport {
        psnr_diffuse: psnr("psnr_diffuse_db")?,
        psnr_specular: psnr("psnr_specular_db")?,
        cluster_accuracy: match get("cluster_accuracy")? {
            "none" => None,
            v => Some(v.parse().map_err(|_| RecordError::Bad("cluster_accuracy"))?),
        },
        iterations: get("iterations")?.parse().map_err(|_| RecordError::Bad("iterations"))?,
        wall_time_secs: get("wall_time_s")?.parse().map_err(|_| RecordError::Bad("wall_time_s"))?,
    })
}
