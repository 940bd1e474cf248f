//! End-to-end acceptance checks. Each criterion prints one `PASS`/`FAIL`
//! line; the process exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use fogcnn::cli::{self, PolicyChoice, RunConfig};
use fogcnn::data::{
    generate_synthetic, stratified_split, SampleRecord, SplitRatios, COVID, NORMAL,
};
use fogcnn::fogsim::{
    build_topology, compare_policies, generate_workload, write_workload, LinkConfig, NodeConfig,
    SimConfig, Tier, Topology, TopologyConfig,
};
use fogcnn::metrics::{compute_metrics, ConfusionCounts};
use fogcnn::nn::gradcheck::{run_gradcheck, GradcheckOptions, TOLERANCE};
use fogcnn::nn::train::History;
use fogcnn::nn::{binary_cross_entropy, checkpoint, Mode, Model, ModelConfig, Variant};
use fogcnn::rng::seeded;
use fogcnn::Tensor;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'a str, Box<dyn FnOnce() -> Outcome>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!(
            "{what} took {:.1} s (limit {limit_s} s)",
            elapsed.as_secs_f64()
        )
    })
}

fn c1_parameter_counts() -> Outcome {
    let start = Instant::now();
    let rows = ModelConfig::for_variant(Variant::ThreeBlock)
        .summary()
        .map_err(|e| e.to_string())?;
    let nonzero: Vec<usize> = rows.iter().map(|r| r.params).filter(|&p| p > 0).collect();
    ensure(
        nonzero == [6976, 295_040, 1_179_904, 81_920_512, 513],
        || format!("nonzero counts {nonzero:?}"),
    )?;
    let total: usize = rows.iter().map(|r| r.params).sum();
    ensure(total == 83_402_945, || format!("total {total}"))?;
    let table = cli::cmd_model_summary(Variant::ThreeBlock).map_err(|e| e.to_string())?;
    ensure(table.contains("Total params: 83,402,945"), || {
        "table total line".into()
    })?;
    within(start.elapsed(), 1.0, "summary")?;
    Ok(format!("total {total}"))
}

fn c2_shape_chain() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig::for_variant(Variant::ThreeBlock);
    let model: Model<f32> = Model::build(&config, 1, 2).map_err(|e| e.to_string())?;
    let mut rng = seeded(7);
    let data: Vec<f32> = (0..200 * 200 * 3).map(|_| rng.random::<f32>()).collect();
    let input = Tensor::from_vec(&[1, 200, 200, 3], data).map_err(|e| e.to_string())?;
    let trace = model
        .forward_trace(&input, Mode::Inference)
        .map_err(|e| e.to_string())?;
    let expected: Vec<Vec<usize>> = vec![
        vec![200, 200, 64],
        vec![100, 100, 64],
        vec![100, 100, 64],
        vec![100, 100, 128],
        vec![50, 50, 128],
        vec![50, 50, 128],
        vec![50, 50, 256],
        vec![25, 25, 256],
        vec![25, 25, 256],
        vec![160_000],
        vec![512],
        vec![512],
        vec![1],
    ];
    let got: Vec<Vec<usize>> = trace.activations[1..]
        .iter()
        .map(|a| a.shape()[1..].to_vec())
        .collect();
    ensure(got == expected, || format!("shapes {got:?}"))?;
    within(start.elapsed(), 30.0, "forward pass")?;
    Ok(format!(
        "13 layers in {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn reference_records() -> Vec<SampleRecord> {
    let mut v: Vec<SampleRecord> = (0..3616)
        .map(|i| SampleRecord::new(format!("covid/{i:05}.png"), COVID))
        .collect();
    v.extend((0..10192).map(|i| SampleRecord::new(format!("normal/{i:05}.png"), NORMAL)));
    v
}

fn c3_split(out: &Path) -> Outcome {
    let start = Instant::now();
    for seed in [0u64, 1, 42, 2024, u64::MAX] {
        let m = stratified_split(reference_records(), SplitRatios::default(), seed)
            .map_err(|e| e.to_string())?;
        let c = m.class_counts();
        let covid = (c[&COVID].train, c[&COVID].val, c[&COVID].test);
        let normal = (c[&NORMAL].train, c[&NORMAL].val, c[&NORMAL].test);
        ensure(
            covid == (2894, 361, 361) && normal == (8154, 1019, 1019),
            || format!("seed {seed}: covid {covid:?} normal {normal:?}"),
        )?;
    }
    let m = stratified_split(reference_records(), SplitRatios::default(), 42)
        .map_err(|e| e.to_string())?;
    m.save(out).map_err(|e| e.to_string())?;
    within(start.elapsed(), 1.0, "split")?;
    Ok("2894/361/361 and 8154/1019/1019 for 5 seeds".into())
}

fn c4_metrics() -> Outcome {
    let mut rng = seeded(4);
    for _ in 0..100 {
        let c = ConfusionCounts::new(
            rng.random_range(0..500),
            rng.random_range(0..500),
            rng.random_range(0..500),
            rng.random_range(1..500),
        );
        let r = compute_metrics(&c).map_err(|e| e.to_string())?;
        let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
        let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
        let precision = div(tp, tp + fp);
        let recall = div(tp, tp + fn_);
        let oracle = [
            precision,
            recall,
            div(tn, tn + fp),
            (tp + tn) / (tp + tn + fp + fn_),
            div(2.0 * precision * recall, precision + recall),
        ];
        let got = [r.precision, r.recall, r.specificity, r.accuracy, r.f1];
        for (g, o) in got.iter().zip(oracle) {
            ensure((g - o).abs() <= 1e-12, || {
                format!("{c:?}: {got:?} vs {oracle:?}")
            })?;
        }
    }
    let r = compute_metrics(&ConfusionCounts::new(50, 35, 10, 5)).map_err(|e| e.to_string())?;
    let want = [0.833333, 0.909091, 0.777778, 0.85, 0.869565];
    let got = [r.precision, r.recall, r.specificity, r.accuracy, r.f1];
    for (g, w) in got.iter().zip(want) {
        ensure((g - w).abs() <= 1e-6, || format!("worked example {got:?}"))?;
    }
    Ok("100 random matrices within 1e-12; worked example within 1e-6".into())
}

fn c5_loss() -> Outcome {
    let l = binary_cross_entropy(&[0.8f64, 0.7], &[1, 1]).map_err(|e| e.to_string())?;
    ensure((l - 0.289907).abs() <= 1e-5, || format!("loss {l}"))?;
    let u = binary_cross_entropy(&[0.5f64; 6], &[1, 0, 1, 0, 0, 1]).map_err(|e| e.to_string())?;
    ensure((u - std::f64::consts::LN_2).abs() <= 1e-9, || {
        format!("uniform {u}")
    })?;
    Ok(format!("{l:.6}, uniform {u:.9}"))
}

fn c6_gradcheck() -> Outcome {
    let start = Instant::now();
    let report = run_gradcheck(&GradcheckOptions::new(0)).map_err(|e| e.to_string())?;
    ensure(report.passed(), || {
        format!(
            "max rel error {:e}: {:?}",
            report.max_rel_error(),
            report.per_layer()
        )
    })?;
    let mut corrupt = GradcheckOptions::new(0);
    corrupt.corrupt_gradient = true;
    let negative = run_gradcheck(&corrupt).map_err(|e| e.to_string())?;
    ensure(!negative.passed(), || {
        "corrupted gradient went unnoticed".into()
    })?;
    within(start.elapsed(), 300.0, "gradcheck")?;
    Ok(format!(
        "max rel error {:.2e} < {TOLERANCE:e}",
        report.max_rel_error()
    ))
}

/// Synthetic 32-per-class set at 32x32, split with `seed`.
fn synthetic_manifest(dir: &Path, seed: u64) -> Result<PathBuf, String> {
    let images = dir.join("images");
    generate_synthetic(&images, 32, 32, seed).map_err(|e| e.to_string())?;
    let manifest = images.join("manifest.csv");
    cli::cmd_split(&images, seed, &manifest).map_err(|e| e.to_string())?;
    Ok(manifest)
}

fn desk_run(manifest: &Path, out: &Path, variant: Variant, epochs: usize) -> RunConfig {
    RunConfig {
        manifest: manifest.to_path_buf(),
        root: None,
        variant,
        epochs,
        batch_size: 32,
        lr: 0.001,
        seed: 7,
        patience: 0,
        out: out.to_path_buf(),
        image_size: 32,
        base_channels: 8,
        dense_units: 32,
        conv_dropout: 0.25,
        dense_dropout: 0.5,
    }
}

fn c7_training(work: &Path) -> Outcome {
    let start = Instant::now();
    let manifest = synthetic_manifest(work, 11)?;
    let config = desk_run(&manifest, &work.join("run"), Variant::ThreeBlock, 200);
    let outcome = cli::cmd_train(&config).map_err(|e| e.to_string())?;
    let h = &outcome.history;
    ensure(h.epochs.len() == 200, || {
        format!("{} epochs recorded", h.epochs.len())
    })?;
    let first = h.epochs[0].train.loss;
    let last = h.last().unwrap();
    let val = last.val.ok_or("no validation scores")?;
    ensure(last.train.accuracy == 1.0, || {
        format!("train accuracy {}", last.train.accuracy)
    })?;
    ensure(val.accuracy >= 0.9, || {
        format!("val accuracy {}", val.accuracy)
    })?;
    ensure(last.train.loss < 0.1 * first, || {
        format!("loss {} vs epoch-1 {}", last.train.loss, first)
    })?;
    within(start.elapsed(), 600.0, "training")?;
    Ok(format!(
        "train acc 1.0, val acc {:.3}, loss {:.4} -> {:.4} in {:.0} s",
        val.accuracy,
        first,
        last.train.loss,
        start.elapsed().as_secs_f64()
    ))
}

fn c8_variants(work: &Path) -> Outcome {
    let manifest = synthetic_manifest(work, 12)?;
    for (variant, flatten) in [(Variant::TwoBlock, 320_000), (Variant::ThreeBlock, 160_000)] {
        let f = ModelConfig::for_variant(variant)
            .flatten_size()
            .map_err(|e| e.to_string())?;
        ensure(f == flatten, || format!("{variant} flatten {f}"))?;
        let out = work.join(variant.as_str());
        let outcome =
            cli::cmd_train(&desk_run(&manifest, &out, variant, 3)).map_err(|e| e.to_string())?;
        let csv = fs::read_to_string(&outcome.history_csv).map_err(|e| e.to_string())?;
        let mut lines = csv.lines();
        ensure(lines.next() == Some(History::CSV_HEADER), || {
            "history header".into()
        })?;
        for col in ["loss", "accuracy", "precision", "recall", "f1"] {
            for prefix in ["train", "val"] {
                let name = format!("{prefix}_{col}");
                ensure(History::CSV_HEADER.split(',').any(|c| c == name), || {
                    format!("missing column {name}")
                })?;
            }
        }
        let rows: Vec<&str> = lines.collect();
        ensure(
            rows.len() == 3
                && rows
                    .iter()
                    .all(|r| r.split(',').count() == 11 && !r.contains(",,")),
            || format!("{variant} history rows {rows:?}"),
        )?;
    }
    Ok("two_block flatten 320000, three_block flatten 160000, both histories complete".into())
}

/// A topology on which fog placement cannot lose: every fog serves at least
/// as fast as the cloud, faster than any payload can cross its uplink, and the
/// result record serializes faster than one cloud inference.
fn dominant_topology(rng: &mut impl Rng) -> TopologyConfig {
    let mut nodes = vec![NodeConfig {
        id: "cloud".into(),
        tier: Tier::Cloud,
        compute_rate: rng.random_range(10.0..40.0),
    }];
    let cloud_rate = nodes[0].compute_rate;
    let mut links = Vec::new();
    let link = |from: &str, to: &str, delay: f64, bw: f64| LinkConfig {
        from: from.into(),
        to: to.into(),
        delay_s: delay,
        bandwidth_bps: bw,
    };
    for f in 0..rng.random_range(1..4) {
        let fog = format!("fog{f}");
        nodes.push(NodeConfig {
            id: fog.clone(),
            tier: Tier::Fog,
            compute_rate: rng.random_range(cloud_rate.max(20.0)..100.0),
        });
        links.push(link(
            &fog,
            "cloud",
            rng.random_range(0.005..0.1),
            rng.random_range(1e6..2e6),
        ));
        for g in 0..rng.random_range(1..3) {
            let ing = format!("ing{f}_{g}");
            nodes.push(NodeConfig {
                id: ing.clone(),
                tier: Tier::Ingestion,
                compute_rate: 0.0,
            });
            links.push(link(
                &ing,
                &fog,
                rng.random_range(0.001..0.01),
                rng.random_range(1e7..1e8),
            ));
            for d in 0..rng.random_range(1..4) {
                let dev = format!("dev{f}_{g}_{d}");
                nodes.push(NodeConfig {
                    id: dev.clone(),
                    tier: Tier::Device,
                    compute_rate: 0.0,
                });
                links.push(link(
                    &dev,
                    &ing,
                    rng.random_range(0.0005..0.005),
                    rng.random_range(5e6..5e7),
                ));
            }
        }
    }
    TopologyConfig { nodes, links }
}

fn c9_fog_vs_cloud(out: &Path) -> Outcome {
    let start = Instant::now();
    fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let mut rng = seeded(9);
    let mut wins = 0;
    let mut fewer_bytes = 0;
    for i in 0..50u64 {
        let config = dominant_topology(&mut rng);
        let topology: Topology = build_topology(&config).map_err(|e| e.to_string())?;
        let workload = generate_workload(&topology, 200, 0.05, (100_000, 500_000), i)
            .map_err(|e| e.to_string())?;
        let cmp = compare_policies(&topology, &workload, i, SimConfig::default())
            .map_err(|e| e.to_string())?;
        if cmp.fog.summary.mean_latency_s < cmp.cloud.summary.mean_latency_s {
            wins += 1;
        }
        if cmp.fog.summary.cloud_bytes < cmp.cloud.summary.cloud_bytes {
            fewer_bytes += 1;
        }
        let dir = out.join(format!("t{i:02}"));
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let topo_path = dir.join("topology.json");
        fs::write(&topo_path, config.to_json()).map_err(|e| e.to_string())?;
        let wl_path = dir.join("workload.csv");
        let mut buf = Vec::new();
        write_workload(&mut buf, &workload).map_err(|e| e.to_string())?;
        fs::write(&wl_path, buf).map_err(|e| e.to_string())?;
        cli::cmd_simulate(
            &topo_path,
            &wl_path,
            PolicyChoice::Both,
            i,
            &dir.join("report"),
        )
        .map_err(|e| e.to_string())?;
    }
    ensure(wins == 50 && fewer_bytes == 50, || {
        format!("fog faster in {wins}/50, fewer cloud bytes in {fewer_bytes}/50")
    })?;
    within(start.elapsed(), 60.0, "simulation")?;
    Ok("fog faster and fewer cloud bytes in 50/50".into())
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path, what: &str) -> Result<usize, String> {
    let (x, y) = (files_under(a), files_under(b));
    ensure(!x.is_empty(), || format!("{what}: no files"))?;
    ensure(x == y, || format!("{what}: outputs differ between runs"))?;
    Ok(x.len())
}

fn c10_determinism(first: &Path, second: &Path) -> Outcome {
    fs::create_dir_all(second).map_err(|e| e.to_string())?;
    c3_split(&second.join("split.csv"))?;
    c7_training(&second.join("train"))?;
    c9_fog_vs_cloud(&second.join("sim"))?;
    let a = fs::read(first.join("split.csv")).map_err(|e| e.to_string())?;
    let b = fs::read(second.join("split.csv")).map_err(|e| e.to_string())?;
    ensure(a == b, || "split manifests differ".into())?;
    let (r1, r2) = (first.join("train/run"), second.join("train/run"));
    for file in ["model.fcnn", "history.csv"] {
        ensure(
            fs::read(r1.join(file)).ok() == fs::read(r2.join(file)).ok(),
            || format!("{file} differs between runs"),
        )?;
    }
    // run.json records the run's own paths; everything else must match.
    let strip = |dir: &Path| -> Result<String, String> {
        let text = fs::read_to_string(dir.join("run.json")).map_err(|e| e.to_string())?;
        let root = dir.parent().and_then(Path::parent).unwrap();
        Ok(text.replace(root.to_str().unwrap(), "<work>"))
    };
    ensure(strip(&r1)? == strip(&r2)?, || {
        "run.json differs beyond its paths".into()
    })?;
    let n_sim = same_tree(&first.join("sim"), &second.join("sim"), "simulation")?;
    Ok(format!(
        "split manifest, checkpoint, history, run config and {n_sim} simulation files identical"
    ))
}

fn c11_checkpoint(work: &Path) -> Outcome {
    let ckpt = work.join("train/run/model.fcnn");
    let bytes = fs::read(&ckpt).map_err(|e| e.to_string())?;
    let model = checkpoint::load(&ckpt).map_err(|e| e.to_string())?;
    let again = work.join("resaved.fcnn");
    checkpoint::save(&model, &again).map_err(|e| e.to_string())?;
    ensure(
        fs::read(&again).map_err(|e| e.to_string())? == bytes,
        || "re-saved checkpoint differs".into(),
    )?;

    let config = ModelConfig::for_variant(Variant::TwoBlock)
        .with_input_size(16)
        .with_base_channels(4)
        .with_dense_units(8);
    let fresh: Model<f32> = Model::build(&config, 5, 6).map_err(|e| e.to_string())?;
    let path = work.join("fresh.fcnn");
    checkpoint::save(&fresh, &path).map_err(|e| e.to_string())?;
    let loaded = checkpoint::load(&path).map_err(|e| e.to_string())?;
    let path2 = work.join("fresh2.fcnn");
    checkpoint::save(&loaded, &path2).map_err(|e| e.to_string())?;
    ensure(
        fs::read(&path).unwrap() == fs::read(&path2).unwrap(),
        || "fresh round trip differs".into(),
    )?;

    let mut rng = seeded(11);
    let images: Vec<Tensor<f32>> = (0..5)
        .map(|_| {
            let data = (0..16 * 16 * 3).map(|_| rng.random::<f32>()).collect();
            Tensor::from_vec(&[16, 16, 3], data).unwrap()
        })
        .collect();
    let before = fresh.predict(&images).map_err(|e| e.to_string())?;
    let after = loaded.predict(&images).map_err(|e| e.to_string())?;
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(bits(&before) == bits(&after), || {
        "predictions changed".into()
    })?;
    Ok("save-load-save identical; predictions bitwise equal".into())
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let first = work.path().join("first");
    let second = work.path().join("second");
    fs::create_dir_all(&first).unwrap();

    let criteria: Vec<Criterion> = vec![
        ("parameter counts", Box::new(c1_parameter_counts)),
        ("shape chain", Box::new(c2_shape_chain)),
        (
            "stratified split",
            Box::new({
                let p = first.join("split.csv");
                move || c3_split(&p)
            }),
        ),
        ("metrics", Box::new(c4_metrics)),
        ("log loss", Box::new(c5_loss)),
        ("gradient check", Box::new(c6_gradcheck)),
        (
            "desk-scale training",
            Box::new({
                let p = first.join("train");
                move || c7_training(&p)
            }),
        ),
        (
            "two vs three blocks",
            Box::new({
                let p = work.path().join("variants");
                move || c8_variants(&p)
            }),
        ),
        (
            "fog vs cloud",
            Box::new({
                let p = first.join("sim");
                move || c9_fog_vs_cloud(&p)
            }),
        ),
        (
            "determinism",
            Box::new({
                let (a, b) = (first.clone(), second.clone());
                move || c10_determinism(&a, &b)
            }),
        ),
        (
            "checkpoint round trip",
            Box::new({
                let p = first.clone();
                move || c11_checkpoint(&p)
            }),
        ),
    ];

    let mut failures = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
