//! Primary acceptance criteria, run back to back in a single process so the
//! timed checks never share the CPU with another test. Each criterion prints
//! one `PASS` or `FAIL` line; the process exits non-zero if any criterion
//! fails.
//!
//! This target has its own `main` (no libtest harness), so the report is
//! printed even when everything passes.

mod common;

use std::time::Instant;

use common::{naive_conv2d, naive_conv_transpose2d, rng, ssim_pair, uniform, SSIM_PAIR_REFERENCE};
use mmhca::ablate::{ablation_plan, run_ablation, AblationConfig};
use mmhca::attention::{attention_forward, head_forward};
use mmhca::checkpoint::Checkpoint;
use mmhca::gradcheck::{check_model, GradCheckOptions};
use mmhca::kernels::{conv2d, conv_transpose2d};
use mmhca::manifest::{Dataset, Split};
use mmhca::metrics::{psnr_from_mse, ssim};
use mmhca::network::{self_ensemble, Host};
use mmhca::resample::bicubic_upscale;
use mmhca::synth::{synth_in_memory, SynthConfig};
use mmhca::train::{evaluate, evaluate_bicubic, train, TrainConfig};
use mmhca::{AttentionConfig, Error, Graph, ModelSpec, ParamSet, Shape, SrModel, Tensor};
use rand::Rng;

type Verdict = Result<String, String>;

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn gradient_integrity() -> Verdict {
    let spec = ModelSpec::toy();
    let a = spec.attention.clone().ok_or("toy spec has no attention")?;
    let toy = (spec.n_modalities, spec.width, spec.blocks, spec.scale, a.heads, a.reduction);
    if toy != (2, 8, 2, 2, 3, 0.5) {
        return Err(format!("unexpected toy spec {toy:?}"));
    }
    let started = Instant::now();
    let report = check_model(&spec, 8, 2, &GradCheckOptions::default()).map_err(fail)?;
    let secs = started.elapsed().as_secs_f64();
    let worst = report.worst().map(|w| w.name.clone()).unwrap_or_default();
    let detail = format!(
        "max_rel_error={:.3e} (worst {worst}) over {} tensors in {secs:.1}s",
        report.max_rel_error(),
        report.entries.len()
    );
    if report.max_rel_error() < 1e-4 && secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn convolution_semantics() -> Verdict {
    let mut r = rng(2024);
    let (mut fwd, mut adj) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let k = r.random_range(1..=5);
        let (n, cin, cout) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4));
        let (h, w, pad) = (r.random_range(k..=12), r.random_range(k..=12), r.random_range(0..k));
        let x = uniform(&mut r, Shape::new(n, cin, h, w), -1.0, 1.0);
        let wt = uniform(&mut r, Shape::new(cout, cin, k, k), -1.0, 1.0);
        let b: Vec<f64> = (0..cout).map(|_| r.random_range(-1.0..1.0)).collect();
        let got = conv2d(&x, &wt, Some(&b), pad).map_err(fail)?;
        fwd = fwd.max(got.max_abs_diff(&naive_conv2d(&x, &wt, Some(&b), pad)));

        let wt_t = uniform(&mut r, Shape::new(cin, cout, k, k), -1.0, 1.0);
        let got = conv_transpose2d(&x, &wt_t, Some(&b)).map_err(fail)?;
        fwd = fwd.max(got.max_abs_diff(&naive_conv_transpose2d(&x, &wt_t, Some(&b))));

        let cx = conv2d(&x, &wt, None, 0).map_err(fail)?;
        let y = uniform(&mut r, cx.shape(), -1.0, 1.0);
        let back = conv_transpose2d(&y, &wt, None).map_err(fail)?;
        adj = adj.max((cx.dot(&y) - x.dot(&back)).abs());
    }
    let detail = format!("50 shapes: max oracle diff {fwd:.2e}, max adjoint gap {adj:.2e}");
    if fwd < 1e-10 && adj < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn attention_fixed_point() -> Verdict {
    let cfg = AttentionConfig::default();
    let mut p: ParamSet<f64> = ParamSet::init(&cfg.decls("attn", 6).map_err(fail)?, 1).map_err(fail)?;
    for (_, t) in p.iter_mut() {
        t.data_mut().fill(0.0);
    }
    let t = uniform(&mut rng(8), Shape::new(2, 6, 12, 10), -4.0, 4.0);
    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let x = g.constant(t.clone());
    let (out, a) = attention_forward(&mut g, &bound, "attn", &cfg, x).map_err(fail)?;
    let half = g.value(a).data().iter().all(|&v| v == 0.5);
    let exact = g
        .value(out)
        .data()
        .iter()
        .zip(t.data())
        .all(|(o, i)| o.to_bits() == (i / 2.0).to_bits());

    // The same holds inside a full network once its attention weights are zeroed.
    let mut model: SrModel<f64> = SrModel::new(ModelSpec::toy(), 5).map_err(fail)?;
    model.params.zero_prefix("attn.");
    let lrs: Vec<Tensor<f64>> = (0..2).map(|i| uniform(&mut rng(i), Shape::new(1, 1, 9, 9), 0.0, 1.0)).collect();
    let maps = model.infer(&lrs).map_err(fail)?.attention;
    let in_model = !maps.is_empty() && maps.iter().all(|m| m.data().iter().all(|&v| v == 0.5));
    let detail = format!("A==0.5: {half}, T*==T/2 bitwise: {exact}, in-network maps: {in_model}");
    if half && exact && in_model {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn shape_restoration() -> Verdict {
    let cfg = AttentionConfig::new(4, 0.5).map_err(fail)?;
    if cfg.kernel_schedule() != [1, 3, 5, 7] {
        return Err(format!("kernel schedule {:?}", cfg.kernel_schedule()));
    }
    let p: ParamSet<f64> = ParamSet::init(&cfg.decls("attn", 2).map_err(fail)?, 0).map_err(fail)?;
    let mut checked = 0;
    for h in 8..=32 {
        for w in 8..=32 {
            let mut g = Graph::new();
            let bound = p.bind(&mut g);
            let x = g.constant(Tensor::full(Shape::new(1, 2, h, w), 0.3));
            for j in 1..=4 {
                let y = head_forward(&mut g, &bound, "attn", &cfg, j, x).map_err(fail)?;
                if g.shape(y) != g.shape(x) {
                    return Err(format!("k={} on {h}x{w} gave {}", 2 * j - 1, g.shape(y)));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (k, H, W) combinations restore the input shape"))
}

fn metric_oracles() -> Verdict {
    let p = psnr_from_mse(0.01, 1.0);
    let x = uniform(&mut rng(4), Shape::new(1, 1, 24, 24), 0.0, 1.0);
    let self_ssim = ssim(&x, &x, 1.0).map_err(fail)?;
    let (a, b) = ssim_pair();
    let pair = ssim(&a, &b, 1.0).map_err(fail)?;
    let detail = format!(
        "PSNR(0.01)={p}, SSIM(x,x)-1={:.1e}, oracle pair {pair:.16} vs {SSIM_PAIR_REFERENCE:.16}",
        self_ssim - 1.0
    );
    if p == 20.0 && (self_ssim - 1.0).abs() < 1e-12 && (pair - SSIM_PAIR_REFERENCE).abs() < 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Test-split PSNR of every benchmark model for one seed, plus the
/// validation-split PSNR of the MMHCA model with and without self-ensemble.
#[derive(Debug)]
struct SeedScores {
    bicubic: f64,
    mmhca: f64,
    concat: f64,
    mhca: f64,
    val_plain: f64,
    val_ensemble: f64,
    seconds: f64,
}

const BENCH_SEEDS: [u64; 3] = [0, 1, 2];

fn bench_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        steps: 1000,
        batch: 8,
        patch: 16,
        learning_rate: 1e-4,
        seed,
        ..TrainConfig::default()
    }
}

fn run_benchmark_seed(seed: u64) -> Result<SeedScores, Error> {
    let started = Instant::now();
    let data = SynthConfig {
        seed: 100 + seed,
        ..SynthConfig::default()
    };
    let ds: Dataset<f32> = synth_in_memory(&data)?;
    let (test, val) = (ds.split(Split::Test), ds.split(Split::Val));
    let cfg = bench_train_config(seed);
    let base = ModelSpec {
        width: 16,
        blocks: 2,
        ..ModelSpec::default()
    };
    let both = ds.default_inputs(2)?;
    let target_only = ds.default_inputs(1)?;
    let fit = |spec: ModelSpec, inputs: &[usize]| -> Result<SrModel<f32>, Error> {
        Ok(train(&spec, &cfg, &ds, inputs, |_| {})?.best_model)
    };
    let score = |m: &SrModel<f32>, inputs: &[usize]| -> Result<f64, Error> {
        Ok(evaluate(m, inputs, ds.target, &test, false, "bench")?.mean_psnr)
    };

    let mm_spec = ModelSpec {
        n_modalities: 2,
        target_index: both.iter().position(|&i| i == ds.target).unwrap_or(0),
        attention: Some(AttentionConfig::default()),
        ..base.clone()
    };
    let mmhca = fit(mm_spec.clone(), &both)?;
    let concat = fit(
        ModelSpec {
            attention: None,
            ..mm_spec
        },
        &both,
    )?;
    let mhca = fit(
        ModelSpec {
            n_modalities: 1,
            target_index: 0,
            attention: Some(AttentionConfig::default()),
            ..base
        },
        &target_only,
    )?;
    Ok(SeedScores {
        bicubic: evaluate_bicubic(&ds, &test, 2)?.mean_psnr,
        mmhca: score(&mmhca, &both)?,
        concat: score(&concat, &both)?,
        mhca: score(&mhca, &target_only)?,
        val_plain: evaluate(&mmhca, &both, ds.target, &val, false, "plain")?.mean_psnr,
        val_ensemble: evaluate(&mmhca, &both, ds.target, &val, true, "ensemble")?.mean_psnr,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn benchmark(scores: &[SeedScores]) -> Verdict {
    let m = |f: fn(&SeedScores) -> f64| median(scores.iter().map(f).collect());
    let (bic, mm, cat, mh) = (m(|s| s.bicubic), m(|s| s.mmhca), m(|s| s.concat), m(|s| s.mhca));
    let longest = scores.iter().map(|s| s.seconds).fold(0.0, f64::max);
    let detail = format!(
        "median PSNR bicubic={bic:.3} mmhca={mm:.3} concat={cat:.3} mhca={mh:.3} (slowest seed {longest:.0}s)"
    );
    if mm > bic + 1.0 && mm >= cat + 0.1 && mm >= mh && longest < 1800.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation_rows() -> Verdict {
    let golden = [
        "EDSR",
        "EDSR + MHCA (1 head, r=0.5)",
        "EDSR + MHCA (2 heads, r=0.5)",
        "EDSR + MHCA (3 heads, r=0.5)",
        "EDSR + MHCA (4 heads, r=0.5)",
        "EDSR + MHCA (3 heads, no deconv, r=0.5)",
        "EDSR + MHCA (4 heads, 1x1 kernels, r=2)",
        "EDSR + MHCA (4 heads, r=2)",
        "EDSR + multimodal input",
        "EDSR + MMHCA (1 head, r=0.5)",
        "EDSR + MMHCA (2 heads, r=0.5)",
        "EDSR + MMHCA (3 heads, r=0.5)",
        "EDSR + MMHCA (4 heads, r=0.5)",
        "EDSR + MMHCA (3 heads, no deconv, r=0.5)",
        "EDSR + MMHCA (4 heads, 1x1 kernels, r=2)",
        "EDSR + MMHCA (4 heads, r=2)",
        "EDSR + MMHCA (3 heads, r=4)",
        "EDSR + MMHCA (3 heads, r=2)",
        "EDSR + MMHCA (3 heads, r=1)",
        "EDSR + MMHCA (3 heads, r=0.5)",
        "EDSR + MMHCA (3 heads, r=0.25)",
    ];
    let plan: Vec<String> = ablation_plan(Host::EdsrLite, 2).map_err(fail)?.into_iter().map(|p| p.name).collect();
    if plan != golden {
        return Err(format!("plan rows {plan:?}"));
    }
    let ds: Dataset<f32> = synth_in_memory(&SynthConfig {
        seed: 1,
        train: 4,
        val: 1,
        test: 2,
        hr_size: 32,
        n_modalities: 2,
    })
    .map_err(fail)?;
    let cfg = AblationConfig {
        base: ModelSpec {
            width: 4,
            blocks: 1,
            ..ModelSpec::default()
        },
        train: TrainConfig {
            steps: 2,
            batch: 2,
            patch: 8,
            ..TrainConfig::default()
        },
        budget_seconds: None,
        filter: None,
    };
    let rows = run_ablation(&cfg, &ds, |_| {}).map_err(fail)?;
    let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    if names != golden {
        return Err(format!("emitted rows {names:?}"));
    }
    if let Some(bad) = rows.iter().find(|r| !(r.psnr.is_finite() && r.ssim.is_finite())) {
        return Err(format!("row `{}` has no finite metrics", bad.name));
    }
    let table = rows.iter().filter(|r| r.group == "table").count();
    Ok(format!("{table} table rows + {} sweep rows, each with one metric row", rows.len() - table))
}

/// 3×3 kernel invariant under the dihedral group.
fn symmetric_kernel() -> Tensor<f64> {
    let (a, b, c) = (0.05, -0.2, 0.9);
    Tensor::new(Shape::new(1, 1, 3, 3), vec![a, b, a, b, c, b, a, b, a]).expect("9 values")
}

fn self_ensemble_check(scores: &[SeedScores]) -> Verdict {
    let k = symmetric_kernel();
    let oracle = |lrs: &[Tensor<f64>]| -> mmhca::Result<Tensor<f64>> {
        let smooth = conv2d(&lrs[0], &k, None, 1)?;
        let mixed = Tensor::from_fn(smooth.shape(), |n, c, y, x| {
            smooth.at(n, c, y, x) + lrs[1].at(n, c, y, x).powi(2).sin()
        });
        bicubic_upscale(&mixed, 2)
    };
    let mut r = rng(77);
    let lrs: Vec<Tensor<f64>> = (0..2).map(|_| uniform(&mut r, Shape::new(2, 1, 11, 11), 0.0, 1.0)).collect();
    let plain = oracle(&lrs).map_err(fail)?;
    let ens = self_ensemble(oracle, &lrs).map_err(fail)?;
    let gap = plain.max_abs_diff(&ens);
    let plain_val = median(scores.iter().map(|s| s.val_plain).collect());
    let ens_val = median(scores.iter().map(|s| s.val_ensemble).collect());
    let detail = format!("equivariant oracle gap {gap:.2e}; median val PSNR plain={plain_val:.3} ensemble={ens_val:.3}");
    if gap < 1e-12 && ens_val >= plain_val {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tiny_dataset() -> Result<Dataset<f32>, Error> {
    synth_in_memory(&SynthConfig {
        seed: 5,
        train: 6,
        val: 2,
        test: 2,
        hr_size: 32,
        n_modalities: 2,
    })
}

fn tiny_spec() -> ModelSpec {
    ModelSpec {
        width: 6,
        blocks: 1,
        target_index: 1,
        ..ModelSpec::default()
    }
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        steps: 12,
        batch: 2,
        patch: 8,
        learning_rate: 1e-3,
        seed,
        ..TrainConfig::default()
    }
}

fn persistence() -> Verdict {
    let ds = tiny_dataset().map_err(fail)?;
    let ck = train(&tiny_spec(), &tiny_config(3), &ds, &[0, 1], |_| {}).map_err(fail)?.checkpoint;
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("model.ckpt");
    ck.save(&path).map_err(fail)?;
    let back = Checkpoint::load(&path).map_err(fail)?;
    let same_bits = ck
        .params
        .iter()
        .chain(ck.optimizer.iter())
        .zip(back.params.iter().chain(back.optimizer.iter()))
        .all(|((na, a), (nb, b))| {
            na == nb && a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    let bytes = ck.to_bytes().map_err(fail)?;
    let bytes_again = back.to_bytes().map_err(fail)?;
    if !(same_bits && back == ck && bytes == bytes_again && !ck.optimizer.is_empty()) {
        return Err("round trip changed the checkpoint".into());
    }

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&2u32.to_le_bytes());
    let mut trailing = bytes.clone();
    trailing.push(0);
    let cases: [(&str, &[u8], &str); 5] = [
        ("bad magic", &bad_magic, "corrupt_checkpoint"),
        ("truncated", &bytes[..bytes.len() - 3], "corrupt_checkpoint"),
        ("trailing byte", &trailing, "corrupt_checkpoint"),
        ("header only", &bytes[..12], "corrupt_checkpoint"),
        ("version 2", &version, "unsupported_version"),
    ];
    for (what, data, code) in cases {
        match Checkpoint::from_bytes(data) {
            Err(e) if e.code() == code => {}
            other => return Err(format!("{what}: expected {code}, got {:?}", other.map(|_| ())))?,
        }
    }
    if !matches!(
        Checkpoint::from_bytes(&version),
        Err(Error::UnsupportedVersion { found: 2, expected: 1 })
    ) {
        return Err("version error does not carry found/expected".into());
    }
    Ok(format!("{} bytes round trip bit-exact; 5 damaged files rejected with structured errors", bytes.len()))
}

fn determinism() -> Verdict {
    let ds = tiny_dataset().map_err(fail)?;
    let run = |seed| train(&tiny_spec(), &tiny_config(seed), &ds, &[0, 1], |_| {}).map_err(fail);
    let (a, b, c) = (run(7)?, run(7)?, run(8)?);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let same = bits(&a.losses) == bits(&b.losses) && a.final_model == b.final_model;
    let differs = bits(&a.losses) != bits(&c.losses);
    let detail = format!("{} steps; repeat identical: {same}; other seed differs: {differs}", a.losses.len());
    if same && differs {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const NAME: &str = "primary_criteria";

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("{NAME}: test");
        return;
    }
    // Honor libtest-style name filters so `cargo test <filter>` can skip this.
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| NAME.contains(f.as_str())) {
        return;
    }
    let mut results: Vec<(&str, Verdict)> = vec![
        ("gradient integrity", gradient_integrity()),
        ("convolution semantics", convolution_semantics()),
        ("attention fixed point", attention_fixed_point()),
        ("shape restoration", shape_restoration()),
        ("metric oracles", metric_oracles()),
    ];
    let scores: Result<Vec<SeedScores>, Error> = BENCH_SEEDS.iter().map(|&s| run_benchmark_seed(s)).collect();
    match scores {
        Ok(scores) => {
            for (seed, s) in BENCH_SEEDS.iter().zip(&scores) {
                println!("  seed {seed}: {s:?}");
            }
            results.push(("desk-scale benchmark", benchmark(&scores)));
            results.push(("ablation rows", ablation_rows()));
            results.push(("self-ensemble", self_ensemble_check(&scores)));
        }
        Err(e) => {
            results.push(("desk-scale benchmark", Err(e.to_string())));
            results.push(("ablation rows", ablation_rows()));
            results.push(("self-ensemble", Err(format!("no trained models: {e}"))));
        }
    }
    results.push(("persistence", persistence()));
    results.push(("determinism", determinism()));

    let mut failed = Vec::new();
    for (name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(*name);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: {} of {} criteria passed", results.len(), results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
