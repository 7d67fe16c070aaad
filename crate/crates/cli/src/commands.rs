use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use mmhca::ablate::{rows_to_tsv, run_ablation, AblationConfig};
use mmhca::attention::export_attention;
use mmhca::checkpoint::Checkpoint;
use mmhca::gradcheck::{check_model, GradCheckOptions};
use mmhca::image::{read_pgm, write_pgm, GrayImage};
use mmhca::manifest::{Dataset, Split};
use mmhca::metrics::MetricsReport;
use mmhca::network::self_ensemble;
use mmhca::synth::{write_dataset, SynthConfig};
use mmhca::train::{check_inputs, evaluate, evaluate_bicubic, train, Precision, TrainConfig};
use mmhca::{ModelSpec, Real, SrModel, Tensor};

use crate::args::{
    AblateArgs, Command, DumpAttentionArgs, EvalArgs, GradcheckArgs, SrArgs, SynthArgs, TrainArgs,
};
use crate::{io_error, write_echo, CliError};

pub fn dispatch(command: Command, argv: &[String]) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Eval(a) => eval(a, argv),
        Command::Sr(a) => sr(a, argv),
        Command::Ablate(a) => ablate(a, argv),
        Command::Gradcheck(a) => gradcheck(a, argv),
        Command::DumpAttention(a) => dump_attention(a, argv),
        Command::Replay(_) => unreachable!("handled by the caller"),
    }
}

/// The argv recorded in a config echo.
pub fn read_echo(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_value(v["argv"].clone())
        .map_err(|_| CliError::Usage(format!("{}: no `argv` list", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialize")
}

fn synth(a: SynthArgs, argv: &[String]) -> Result<(), CliError> {
    let cfg = SynthConfig {
        seed: a.seed,
        train: a.train,
        val: a.val,
        test: a.test,
        hr_size: a.hr_size,
        n_modalities: a.modalities,
    };
    cfg.validate()?;
    write_echo(&a.out_dir, argv, "synth", to_json(&cfg))?;
    let m = write_dataset(&cfg, &a.out_dir)?;
    println!(
        "records={} modalities={} target={} manifest={}",
        m.records.len(),
        m.modalities.join(","),
        m.target,
        a.out_dir.join("manifest.toml").display()
    );
    Ok(())
}

/// Resolve `--inputs` names against the dataset and build the spec.
fn model_for<T: Real>(
    ds: &Dataset<T>,
    names: &[String],
    model: &crate::args::ModelArgs,
) -> Result<(ModelSpec, Vec<usize>), CliError> {
    let inputs = if names.is_empty() {
        ds.default_inputs(ds.modalities.len())?
    } else {
        ds.inputs_by_name(names)?
    };
    let target_index = inputs.iter().position(|&i| i == ds.target).ok_or_else(|| {
        CliError::Usage(format!(
            "--inputs must include the target modality `{}`",
            ds.modalities[ds.target]
        ))
    })?;
    let spec = model.resolve(ModelSpec::default(), inputs.len(), target_index)?;
    check_inputs(&spec, ds, &inputs)?;
    Ok((spec, inputs))
}

fn cmd_train(a: TrainArgs, argv: &[String]) -> Result<(), CliError> {
    // Validate every flag before touching the data.
    let cfg = a.optim.resolve()?;
    let n = if a.inputs.is_empty() { 1 } else { a.inputs.len() };
    a.model.resolve(ModelSpec::default(), n, 0)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(&a, &cfg, argv),
        Precision::F64 => train_typed::<f64>(&a, &cfg, argv),
    }
}

fn train_typed<T: Real>(a: &TrainArgs, cfg: &TrainConfig, argv: &[String]) -> Result<(), CliError> {
    let ds = Dataset::<T>::load(&a.manifest)?;
    let (spec, inputs) = model_for(&ds, &a.inputs, &a.model)?;
    let params = spec.param_count()?;
    let input_names: Vec<&str> = inputs.iter().map(|&i| ds.modalities[i].as_str()).collect();
    write_echo(
        &a.out_dir,
        argv,
        "train",
        json!({
            "manifest": a.manifest,
            "inputs": input_names,
            "spec": spec,
            "train": cfg,
            "params": params,
        }),
    )?;
    let log_path = a.out_dir.join("train.log");
    let mut log = std::fs::File::create(&log_path).map_err(|e| io_error(&log_path, e))?;
    let mut emit = |line: String| {
        println!("{line}");
        // A log-file write failure should not kill a long run; stdout still has the line.
        let _ = writeln!(log, "{line}");
    };
    let attention = match (&spec.attention, spec.n_modalities) {
        (None, _) => "none",
        (Some(_), 1) => "mhca",
        (Some(_), _) => "mmhca",
    };
    emit(format!("step=0 params={params} attention={attention} inputs={}", input_names.join(",")));
    let out = train(&spec, cfg, &ds, &inputs, |e| emit(e.to_line()))?;
    let ck_path = a.out_dir.join("best.ckpt");
    out.checkpoint.save(&ck_path)?;
    emit(format!(
        "step={} done best_step={} checkpoint={}",
        out.losses.len(),
        out.best_step,
        ck_path.display()
    ));
    Ok(())
}

fn split_arg(s: &str) -> Split {
    s.parse().expect("clap restricts the split names")
}

fn write_report(out_dir: &Path, report: &MetricsReport) -> Result<(), CliError> {
    write_text(&out_dir.join("results.tsv"), &report.to_tsv())?;
    let json = serde_json::to_string_pretty(report).expect("reports serialize");
    write_text(&out_dir.join("results.json"), &(json + "\n"))?;
    println!(
        "label={} images={} mean_psnr={:.4} mean_ssim={:.6}",
        report.label,
        report.images.len(),
        report.mean_psnr,
        report.mean_ssim
    );
    Ok(())
}

fn eval(a: EvalArgs, argv: &[String]) -> Result<(), CliError> {
    if a.bicubic && a.self_ensemble {
        return Err(CliError::Usage("--self-ensemble needs a checkpoint".into()));
    }
    if a.scale != 2 && a.scale != 4 {
        return Err(CliError::Usage(format!("unsupported scale {}", a.scale)));
    }
    let split = split_arg(&a.split);
    let checkpoint = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let ds = Dataset::<f32>::load(&a.manifest)?;
    let samples = ds.split(split);
    if samples.is_empty() {
        return Err(mmhca::Error::Manifest(format!("{split} split is empty")).into());
    }
    let report = match checkpoint {
        None => {
            write_echo(
                &a.out_dir,
                argv,
                "eval",
                json!({ "manifest": a.manifest, "baseline": "bicubic", "scale": a.scale, "split": a.split }),
            )?;
            evaluate_bicubic(&ds, &samples, a.scale)?
        }
        Some(ck) => {
            let inputs = ds.inputs_by_name(&ck.inputs).map_err(|e| {
                CliError::Usage(format!("checkpoint inputs do not match the dataset: {e}"))
            })?;
            check_inputs(&ck.spec, &ds, &inputs)?;
            write_echo(
                &a.out_dir,
                argv,
                "eval",
                json!({
                    "manifest": a.manifest,
                    "checkpoint": a.checkpoint,
                    "spec": ck.spec,
                    "inputs": ck.inputs,
                    "self_ensemble": a.self_ensemble,
                    "split": a.split,
                }),
            )?;
            let label = if a.self_ensemble { "model+" } else { "model" };
            let model = SrModel {
                spec: ck.spec,
                params: ck.params,
            };
            evaluate(&model, &inputs, ds.target, &samples, a.self_ensemble, label)?
        }
    };
    write_report(&a.out_dir, &report)
}

/// Read LR slices that must all share one size.
fn read_inputs(paths: &[PathBuf]) -> Result<(Vec<Tensor<f32>>, Vec<GrayImage>), CliError> {
    let images = paths.iter().map(|p| read_pgm(p)).collect::<Result<Vec<_>, _>>()?;
    if let Some((p, img)) = paths
        .iter()
        .zip(&images)
        .find(|(_, i)| (i.width, i.height) != (images[0].width, images[0].height))
    {
        return Err(mmhca::Error::Image {
            path: p.display().to_string(),
            reason: format!(
                "size {}x{} differs from the first input ({}x{})",
                img.width, img.height, images[0].width, images[0].height
            ),
        }
        .into());
    }
    Ok((images.iter().map(|i| i.to_tensor()).collect(), images))
}

fn sr(a: SrArgs, argv: &[String]) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    if a.inputs.len() != ck.inputs.len() {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} inputs ({}), got {}",
            ck.inputs.len(),
            ck.inputs.join(", "),
            a.inputs.len()
        )));
    }
    let (lrs, images) = read_inputs(&a.inputs)?;
    write_echo(
        &a.out_dir,
        argv,
        "sr",
        json!({
            "checkpoint": a.checkpoint,
            "inputs": a.inputs,
            "modalities": ck.inputs,
            "self_ensemble": a.self_ensemble,
        }),
    )?;
    let target = ck.spec.target_index;
    let model = SrModel {
        spec: ck.spec,
        params: ck.params,
    };
    let hr = if a.self_ensemble {
        self_ensemble(|x| model.predict(x), &lrs)?
    } else {
        model.predict(&lrs)?
    };
    let out = a.out_dir.join("sr.pgm");
    let img = GrayImage::from_tensor(&hr, 0, images[target].maxval);
    write_pgm(&out, &img)?;
    println!(
        "input={}x{} output={}x{} path={}",
        images[0].width,
        images[0].height,
        img.width,
        img.height,
        out.display()
    );
    Ok(())
}

fn ablate(a: AblateArgs, argv: &[String]) -> Result<(), CliError> {
    let train_cfg = a.optim.resolve()?;
    if a.budget_seconds.is_some_and(|b| b.is_nan() || b <= 0.0) {
        return Err(CliError::Usage("--budget-seconds must be positive".into()));
    }
    // Row specs override attention and the input count; the rest comes from the flags.
    let base = a.model.resolve(ModelSpec::default(), 1, 0)?;
    match train_cfg.precision {
        Precision::F32 => ablate_typed::<f32>(&a, base, train_cfg, argv),
        Precision::F64 => ablate_typed::<f64>(&a, base, train_cfg, argv),
    }
}

fn ablate_typed<T: Real>(a: &AblateArgs, base: ModelSpec, train: TrainConfig, argv: &[String]) -> Result<(), CliError> {
    let ds = Dataset::<T>::load(&a.manifest)?;
    let cfg = AblationConfig {
        base,
        train,
        budget_seconds: a.budget_seconds,
        filter: a.filter.clone(),
    };
    write_echo(
        &a.out_dir,
        argv,
        "ablate",
        json!({
            "manifest": a.manifest,
            "base": cfg.base,
            "train": cfg.train,
            "budget_seconds": cfg.budget_seconds,
            "filter": cfg.filter,
        }),
    )?;
    let started = Instant::now();
    let rows = run_ablation(&cfg, &ds, |r| {
        println!(
            "row={:?} group={} params={} steps={} psnr={:.4} ssim={:.6} elapsed_s={:.1}",
            r.name,
            r.group,
            r.params,
            r.steps,
            r.psnr,
            r.ssim,
            started.elapsed().as_secs_f64()
        )
    })?;
    let path = a.out_dir.join("ablation.tsv");
    write_text(&path, &rows_to_tsv(&rows))?;
    println!("rows={} table={}", rows.len(), path.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs, argv: &[String]) -> Result<(), CliError> {
    let spec = a.model.resolve(ModelSpec::toy(), a.modalities, 0)?;
    if !(a.step > 0.0 && a.tolerance > 0.0) {
        return Err(CliError::Usage("--step and --tolerance must be positive".into()));
    }
    if a.patch == 0 || a.batch == 0 {
        return Err(CliError::Usage("--patch and --batch must be positive".into()));
    }
    let opts = GradCheckOptions {
        step: a.step,
        tolerance: a.tolerance,
        max_elements: a.max_elements,
        seed: a.seed,
        ..GradCheckOptions::default()
    };
    write_echo(
        &a.out_dir,
        argv,
        "gradcheck",
        json!({
            "spec": spec,
            "patch": a.patch,
            "batch": a.batch,
            "step": opts.step,
            "tolerance": opts.tolerance,
            "floor": opts.floor,
            "max_elements": opts.max_elements,
            "seed": opts.seed,
        }),
    )?;
    let started = Instant::now();
    let report = check_model(&spec, a.patch, a.batch, &opts)?;
    let elapsed = started.elapsed().as_secs_f64();
    let mut tsv = String::from("param\tchecked\tmax_rel_error\n");
    for e in &report.entries {
        tsv.push_str(&format!("{}\t{}\t{:.3e}\n", e.name, e.checked, e.max_rel_error));
    }
    write_text(&a.out_dir.join("gradcheck.tsv"), &tsv)?;
    println!(
        "params={} tensors={} max_rel_error={:.3e} tolerance={:.1e} passed={} elapsed_s={elapsed:.2}",
        spec.param_count()?,
        report.entries.len(),
        report.max_rel_error(),
        report.tolerance,
        report.passed()
    );
    if report.passed() {
        return Ok(());
    }
    let worst = report.worst().expect("a failing report has entries");
    Err(CliError::GradCheck {
        max: worst.max_rel_error,
        name: worst.name.clone(),
        tolerance: report.tolerance,
    })
}

fn dump_attention(a: DumpAttentionArgs, argv: &[String]) -> Result<(), CliError> {
    let n = a.inputs.len();
    let (model, names) = match &a.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.inputs.len() != n {
                return Err(CliError::Usage(format!(
                    "checkpoint expects {} inputs ({}), got {n}",
                    ck.inputs.len(),
                    ck.inputs.join(", ")
                )));
            }
            let model = SrModel {
                spec: ck.spec,
                params: ck.params,
            };
            (model, ck.inputs)
        }
        None => {
            let spec = a.model.resolve(ModelSpec::default(), n, a.target_index)?;
            let mut model = SrModel::<f32>::new(spec, a.seed)?;
            for (name, t) in model.params.iter_mut() {
                if name.starts_with("attn.") || name.contains(".attn.") {
                    t.data_mut().fill(0.0);
                }
            }
            (model, Vec::new())
        }
    };
    if model.spec.attention.is_none() {
        return Err(mmhca::Error::NoAttention.into());
    }
    let (lrs, _) = read_inputs(&a.inputs)?;
    write_echo(
        &a.out_dir,
        argv,
        "dump-attention",
        json!({
            "checkpoint": a.checkpoint,
            "inputs": a.inputs,
            "modalities": names,
            "spec": model.spec,
            "untrained_seed": a.checkpoint.is_none().then_some(a.seed),
        }),
    )?;
    let inference = model.infer(&lrs)?;
    for (i, att) in inference.attention.iter().enumerate() {
        let dir = a.out_dir.join(format!("module_{i:02}"));
        let files = export_attention(Some(att), 0, &dir)?;
        println!("module={i} channels={} dir={}", files.len() - 1, dir.display());
    }
    Ok(())
}
