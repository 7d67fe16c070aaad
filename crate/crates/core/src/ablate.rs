//! Ablation grid: head count, deconv removal, kernel diversity, input count,
//! and a reduction-ratio sweep, each trained and scored on the same data.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{ablation_variant, AttentionConfig, SWEEP_VARIANTS, TABLE_VARIANTS};
use crate::error::{Error, Result};
use crate::manifest::{Dataset, Split};
use crate::network::{Host, ModelSpec};
use crate::tensor::Real;
use crate::train::{evaluate, train, LogEvent, TrainConfig};

/// One planned configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub group: &'static str,
    pub name: String,
    pub n_modalities: usize,
    pub attention: Option<AttentionConfig>,
}

fn describe(variant: &str, cfg: &AttentionConfig) -> String {
    let heads = if cfg.heads == 1 {
        "1 head".to_string()
    } else {
        format!("{} heads", cfg.heads)
    };
    let r = cfg.reduction;
    match variant {
        "3heads_nodeconv" => format!("{heads}, no deconv, r={r}"),
        "4heads_1x1_r2" => format!("{heads}, 1x1 kernels, r={r}"),
        _ => format!("{heads}, r={r}"),
    }
}

/// Every row of the grid in output order: the single-input baseline, seven
/// single-input attention variants, the attention-free multimodal baseline,
/// the same seven variants with multimodal input, then the `r` sweep.
pub fn ablation_plan(host: Host, n_multi: usize) -> Result<Vec<AblationPlan>> {
    let base = match host {
        Host::EdsrLite => "EDSR",
        Host::EspcLite => "ESPC",
    };
    let mut rows = vec![AblationPlan {
        group: "table",
        name: base.into(),
        n_modalities: 1,
        attention: None,
    }];
    for v in TABLE_VARIANTS {
        let a = ablation_variant(v)?;
        rows.push(AblationPlan {
            group: "table",
            name: format!("{base} + MHCA ({})", describe(v, &a)),
            n_modalities: 1,
            attention: Some(a),
        });
    }
    rows.push(AblationPlan {
        group: "table",
        name: format!("{base} + multimodal input"),
        n_modalities: n_multi,
        attention: None,
    });
    for v in TABLE_VARIANTS {
        let a = ablation_variant(v)?;
        rows.push(AblationPlan {
            group: "table",
            name: format!("{base} + MMHCA ({})", describe(v, &a)),
            n_modalities: n_multi,
            attention: Some(a),
        });
    }
    for v in SWEEP_VARIANTS {
        let a = ablation_variant(v)?;
        rows.push(AblationPlan {
            group: "r_sweep",
            name: format!("{base} + MMHCA (3 heads, r={})", a.reduction),
            n_modalities: n_multi,
            attention: Some(a),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub group: String,
    pub name: String,
    pub params: usize,
    pub steps: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct AblationConfig {
    /// Template for every run; `target_index` and `n_modalities` are set per row.
    pub base: ModelSpec,
    pub train: TrainConfig,
    /// Total wall-clock budget shared evenly across rows.
    pub budget_seconds: Option<f64>,
    /// Run only rows whose name contains this substring.
    pub filter: Option<String>,
}

/// Train and test every planned row.
pub fn run_ablation<T: Real>(
    cfg: &AblationConfig,
    ds: &Dataset<T>,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let n_multi = ds.modalities.len();
    if n_multi < 2 {
        return Err(Error::Config("ablation needs a dataset with at least two modalities".into()));
    }
    let plan: Vec<_> = ablation_plan(cfg.base.host, n_multi)?
        .into_iter()
        .filter(|p| cfg.filter.as_deref().is_none_or(|f| p.name.contains(f)))
        .collect();
    let test = ds.split(Split::Test);
    if test.is_empty() {
        return Err(Error::Manifest("test split is empty".into()));
    }
    let mut train_cfg = cfg.train.clone();
    if let Some(b) = cfg.budget_seconds {
        let share = b / plan.len().max(1) as f64;
        train_cfg.max_seconds = Some(train_cfg.max_seconds.map_or(share, |m| m.min(share)));
    }
    let mut rows = Vec::with_capacity(plan.len());
    for p in plan {
        let started = Instant::now();
        let inputs = ds.default_inputs(p.n_modalities)?;
        let spec = ModelSpec {
            n_modalities: p.n_modalities,
            target_index: inputs.iter().position(|&i| i == ds.target).unwrap_or(0),
            attention: p.attention.clone(),
            placement: None,
            ..cfg.base.clone()
        };
        let out = train(&spec, &train_cfg, ds, &inputs, |_: &LogEvent| {})?;
        let report = evaluate(&out.best_model, &inputs, ds.target, &test, false, &p.name)?;
        let row = AblationRow {
            group: p.group.to_string(),
            name: p.name,
            params: spec.param_count()?,
            steps: out.losses.len(),
            psnr: report.mean_psnr,
            ssim: report.mean_ssim,
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Tab-separated table with a header row.
pub fn rows_to_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from("group\tname\tparams\tsteps\tpsnr_db\tssim\tseconds\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.4}\t{:.6}\t{:.1}\n",
            r.group, r.name, r.params, r.steps, r.psnr, r.ssim, r.seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_has_sixteen_table_rows_and_five_sweep_rows() {
        let plan = ablation_plan(Host::EdsrLite, 2).unwrap();
        assert_eq!(plan.iter().filter(|p| p.group == "table").count(), 16);
        assert_eq!(plan.iter().filter(|p| p.group == "r_sweep").count(), 5);
        assert_eq!(plan[0].name, "EDSR");
        assert_eq!(plan[5].name, "EDSR + MHCA (3 heads, no deconv, r=0.5)");
        assert_eq!(plan[8].name, "EDSR + multimodal input");
        assert!(plan[..8].iter().all(|p| p.n_modalities == 1));
        assert!(plan[8..].iter().all(|p| p.n_modalities == 2));
    }
}
