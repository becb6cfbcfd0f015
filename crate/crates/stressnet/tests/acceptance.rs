//! Acceptance suite. Runs every release criterion, prints one line per
//! criterion and exits non-zero if any of them fails.

mod support;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use stressnet::io::load_manifest;
use stressnet::pipeline::{featurize_manifest, featurize_synth, train_kind};
use stressnet_core::baselines::{dual_objective, solve_dual, train_svm, Kernel, SvmConfig};
use stressnet_core::eval::{cohen_kappa, evaluate_model, f1_score, make_split, test_data, train_data, ConfusionMatrix};
use stressnet_core::features::{hr_features, window_features, WindowSpec};
use stressnet_core::model::{fit, FitConfig, Hyper, ModelKind};
use stressnet_core::nn::{backward, Architecture, MtlNetwork, TrainConfig};
use stressnet_core::rng::{standard_normal, substream, ChaCha8Rng, Domain};
use stressnet_core::synth::SynthConfig;
use stressnet_core::Label;
use support::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(i: u64) -> ChaCha8Rng {
    substream(0xACCE_55, Domain::Synth, i)
}

// ------------------------------------------------------------- gradients

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let tasks = ["t0", "t1", "t2"];
    let net = MtlNetwork::new(Architecture::default(), &tasks, 11);
    let lambda = 1e-2;
    let h = 1e-5;
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..20 {
        let x: Vec<f64> = (0..16).map(|_| standard_normal(&mut r)).collect();
        let y = f64::from(r.random_range(0..2u8));
        let task = tasks[r.random_range(0..3)];
        let g = backward(&net, &x, y, task, lambda).map_err(|e| e.to_string())?;

        let mut probe = net.clone();
        let mut fd = |select: &dyn Fn(&mut MtlNetwork) -> &mut Vec<f64>, analytic: &dyn Fn(usize) -> f64| -> f64 {
            let len = select(&mut probe).len();
            let mut w = 0.0f64;
            for i in 0..len {
                let orig = select(&mut probe)[i];
                select(&mut probe)[i] = orig + h;
                let up = oracle_loss(&probe, &x, y, task, lambda);
                select(&mut probe)[i] = orig - h;
                let down = oracle_loss(&probe, &x, y, task, lambda);
                select(&mut probe)[i] = orig;
                let n = (up - down) / (2.0 * h);
                let a = analytic(i);
                w = w.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
            }
            w
        };
        let t = task.to_string();
        worst = worst.max(fd(&|n| &mut n.shared.weights, &|i| g.shared.weights[i]));
        worst = worst.max(fd(&|n| &mut n.shared.biases, &|i| g.shared.biases[i]));
        worst = worst.max(fd(&|n| &mut n.tasks.get_mut(&t).unwrap().hidden.weights, &|i| g.hidden.weights[i]));
        worst = worst.max(fd(&|n| &mut n.tasks.get_mut(&t).unwrap().hidden.biases, &|i| g.hidden.biases[i]));
        worst = worst.max(fd(&|n| &mut n.tasks.get_mut(&t).unwrap().head.weights, &|i| g.head.weights[i]));
        worst = worst.max(fd(&|n| &mut n.tasks.get_mut(&t).unwrap().head.biases, &|i| g.head.biases[i]));
        // Branches of the other tasks do not enter this loss; their
        // gradient is zero.
        for other in tasks.iter().filter(|o| **o != task) {
            let o = other.to_string();
            worst = worst.max(fd(&|n| &mut n.tasks.get_mut(&o).unwrap().head.weights, &|_| 0.0));
            worst = worst.max(fd(&|n| &mut n.tasks.get_mut(&o).unwrap().hidden.biases, &|_| 0.0));
        }
        checked += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst <= 1e-4 && secs < 60.0,
        format!("{checked} triples, 3 tasks, worst relative error {worst:.2e}, {secs:.1} s"),
    )
}

// --------------------------------------------------------------- metrics

fn metric_oracle() -> Outcome {
    let mut r = rng(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = r.random_range(1..=200usize);
        let bias_t: f64 = r.random();
        let bias_p: f64 = r.random();
        let label = |r: &mut ChaCha8Rng, b: f64| if r.random::<f64>() < b { Label::Stress } else { Label::Baseline };
        let truth: Vec<Label> = (0..n).map(|_| label(&mut r, bias_t)).collect();
        let pred: Vec<Label> = (0..n).map(|_| label(&mut r, bias_p)).collect();
        let cm = ConfusionMatrix::from_labels(&truth, &pred).map_err(|e| e.to_string())?;
        let k = cohen_kappa(&cm).map_err(|e| e.to_string())?;
        if f1_score(&cm).to_bits() != oracle_f1(&truth, &pred).to_bits()
            || k.to_bits() != oracle_kappa(&truth, &pred).to_bits()
        {
            mismatches += 1;
        }
    }
    let worked = ConfusionMatrix { tp: 40, fp: 10, fn_: 10, tn: 40 };
    let kw = cohen_kappa(&worked).map_err(|e| e.to_string())?;
    check(
        mismatches == 0 && kw == 0.6 && f1_score(&worked) == 0.8,
        format!("1000 random vectors, {mismatches} mismatches; worked example kappa {kw}"),
    )
}

// -------------------------------------------------------------- features

fn feature_oracle() -> Outcome {
    let mut r = rng(3);
    let mut failures = 0;
    let mut peaks = 0.0;
    for _ in 0..1000 {
        let (hr, sc) = random_window(&mut r, 300);
        let got = window_features(&hr, &sc).map_err(|e| e.to_string())?;
        let want = oracle_features(&hr, &sc);
        peaks += want[12];
        if !got.iter().zip(&want).all(|(g, w)| rel_close(*g, *w, 1e-9)) {
            failures += 1;
        }
    }
    let hand = hr_features(&[60.0, 62.0, 60.0]).map_err(|e| e.to_string())?;
    check(
        failures == 0 && hand[5] == 2.0 && hand[6] == 2.0,
        format!(
            "1000 windows, {failures} mismatches, {:.1} responses per window; [60,62,60] rmssd {} sdsd {}",
            peaks / 1000.0,
            hand[5],
            hand[6]
        ),
    )
}

// ------------------------------------------------------- personalization

fn mtl_benefit() -> Outcome {
    let kinds = [ModelKind::Lr, ModelKind::StNn, ModelKind::MtNn];
    let mut sums = [0.0; 3];
    let mut slowest = Duration::ZERO;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let t0 = Instant::now();
        let cfg = SynthConfig { seed, ..SynthConfig::default() };
        let ds = featurize_synth(&cfg, WindowSpec::default()).map_err(|e| e.to_string())?.dataset;
        let split = make_split(&ds, "synth", seed).map_err(|e| e.to_string())?;
        let test = test_data(&ds, &split);
        let mut row = Vec::new();
        for (i, kind) in kinds.into_iter().enumerate() {
            let out = train_kind(&ds, &split, kind, &kind.default_grid(), &FitConfig::default()).map_err(|e| e.to_string())?;
            let f1 = evaluate_model(kind.display_name(), &out.model, &test).map_err(|e| e.to_string())?.mean_f1;
            sums[i] += f1;
            row.push(format!("{f1:.3}"));
        }
        slowest = slowest.max(t0.elapsed());
        lines.push(row.join("/"));
    }
    let [lr, st, mt] = sums.map(|s| s / 5.0);
    check(
        mt - st >= 0.03 && st >= lr && slowest < Duration::from_secs(300),
        format!(
            "mean F1 LR {lr:.3} ST-NN {st:.3} MT-NN {mt:.3} (margin {:.3}); per seed LR/ST/MT {}; slowest run {:.0} s",
            mt - st,
            lines.join(" "),
            slowest.as_secs_f64()
        ),
    )
}

// --------------------------------------------------------- early stopping

fn early_stopping() -> Outcome {
    let mut halted = 0;
    let mut restored = true;
    let mut epochs = Vec::new();
    let nn = TrainConfig::default();
    for seed in 0..5u64 {
        let cfg = SynthConfig { seed, ..SynthConfig::default() };
        let mut ds = featurize_synth(&cfg, WindowSpec::default()).map_err(|e| e.to_string())?.dataset;
        let mut r = rng(100 + seed);
        for s in &mut ds.subjects {
            let mut labels: Vec<Label> = s.windows.iter().map(|w| w.label).collect();
            labels.shuffle(&mut r);
            for (w, l) in s.windows.iter_mut().zip(labels) {
                w.label = l;
            }
        }
        let split = make_split(&ds, "synth", seed).map_err(|e| e.to_string())?;
        let model = fit(ModelKind::MtNn, Hyper::L2 { lambda: nn.l2_lambda }, &train_data(&ds, &split), &FitConfig::default(), seed)
            .map_err(|e| e.to_string())?;
        let log = model.training_log.ok_or("network without training log")?;
        let last = log.epochs.last().ok_or("empty training log")?;
        if log.stopped_early && log.epochs.len() < nn.max_epochs {
            halted += 1;
        }
        restored &= log.best_val_loss <= last.val_loss;
        epochs.push(format!("{}(best {})", log.epochs.len(), log.best_epoch));
    }
    check(
        halted >= 4 && restored,
        format!("halted in {halted}/5 seeds, epochs run {}; best loss <= final loss: {restored}", epochs.join(" ")),
    )
}

// -------------------------------------------------------------------- SVM

struct Toy {
    name: &'static str,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    kernel: Kernel,
    c: f64,
}

fn toys() -> Vec<Toy> {
    let pts = |v: &[[f64; 2]]| v.iter().map(|p| p.to_vec()).collect::<Vec<_>>();
    vec![
        Toy {
            name: "separable/linear",
            x: pts(&[[0.0, 0.0], [1.0, 0.5], [0.5, 1.0], [3.0, 3.0], [2.5, 3.5], [3.5, 2.0]]),
            y: vec![-1.0, -1.0, -1.0, 1.0, 1.0, 1.0],
            kernel: Kernel::Linear,
            c: 10.0,
        },
        Toy {
            name: "overlapping/linear",
            x: pts(&[[0.0, 0.0], [2.0, 2.0], [1.0, 0.0], [1.0, 1.0], [0.2, 0.8], [2.0, 1.5]]),
            y: vec![-1.0, -1.0, -1.0, 1.0, 1.0, 1.0],
            kernel: Kernel::Linear,
            c: 1.0,
        },
        Toy {
            name: "ring/rbf",
            x: pts(&[[0.0, 0.0], [0.3, -0.2], [1.5, 0.0], [-1.5, 0.2], [0.0, 1.4], [0.1, -1.6]]),
            y: vec![1.0, 1.0, -1.0, -1.0, -1.0, -1.0],
            kernel: Kernel::Rbf { gamma: 0.5 },
            c: 2.0,
        },
    ]
}

fn svm_check() -> Outcome {
    let tol = 1e-3;
    let mut notes = Vec::new();
    let mut ok = true;
    for toy in toys() {
        let gram = toy.kernel.gram(&toy.x).map_err(|e| e.to_string())?;
        let sol = solve_dual(&gram, &toy.y, toy.c, tol, 10_000).map_err(|e| e.to_string())?;
        let smo = dual_objective(&gram, &toy.y, &sol.alpha);
        let (best, _) = brute_force_dual(&gram, &toy.y, toy.c);
        let n = toy.y.len();
        let mut kkt = 0.0f64;
        for i in 0..n {
            let f: f64 = (0..n).map(|j| sol.alpha[j] * toy.y[j] * gram[i * n + j]).sum::<f64>() - sol.rho;
            let m = toy.y[i] * f;
            let a = sol.alpha[i];
            let v = if a <= 0.0 {
                1.0 - m
            } else if a >= toy.c {
                m - 1.0
            } else {
                (m - 1.0).abs()
            };
            kkt = kkt.max(v);
        }
        let sum_ay: f64 = sol.alpha.iter().zip(&toy.y).map(|(a, y)| a * y).sum();
        let feasible = sum_ay.abs() < 1e-9 && sol.alpha.iter().all(|a| (0.0..=toy.c).contains(a));
        ok &= (smo - best).abs() <= 1e-3 && kkt <= tol && feasible;
        notes.push(format!("{} |dW| {:.1e} kkt {:.1e}", toy.name, (smo - best).abs(), kkt.max(0.0)));
    }
    let xor = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let labels = [Label::Baseline, Label::Baseline, Label::Stress, Label::Stress];
    let model = train_svm(&xor, &labels, Kernel::Rbf { gamma: 1.0 }, &SvmConfig::new(10.0)).map_err(|e| e.to_string())?;
    let mut correct = 0;
    for (x, l) in xor.iter().zip(&labels) {
        if model.predict(x).map_err(|e| e.to_string())?.label == *l {
            correct += 1;
        }
    }
    let acc = correct as f64 / 4.0;
    ok &= acc == 1.0;
    notes.push(format!("XOR rbf accuracy {acc}"));
    check(ok, notes.join("; "))
}

// ------------------------------------------------------------ determinism

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p)?);
        }
    }
    Ok(())
}

fn run_pipeline(cwd: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_stressnet"))
        .current_dir(cwd)
        .args(["--seed", "7", "pipeline", "--out", "run"])
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("pipeline exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
    }
    let mut files = BTreeMap::new();
    collect_files(&cwd.join("run"), &cwd.join("run"), &mut files).map_err(|e| e.to_string())?;
    Ok(files)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    std::fs::create_dir_all(&a).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&b).map_err(|e| e.to_string())?;
    let fa = run_pipeline(&a)?;
    let fb = run_pipeline(&b)?;
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let has = |part: &str| fa.keys().any(|k| k.starts_with(part));
    check(
        differing.is_empty() && has("features") && has("models") && has("report"),
        if differing.is_empty() {
            format!("{} files byte-identical across two runs", fa.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

// -------------------------------------------------------------- real data

const REAL_ENV: &str = "STRESSNET_REAL_MANIFEST";

fn real_data(path: &str) -> Outcome {
    let path = Path::new(path);
    let manifest = load_manifest(path).map_err(|e| e.to_string())?;
    let base = path.parent().unwrap_or(Path::new("."));
    let ds = featurize_manifest(&manifest, base, WindowSpec::default()).map_err(|e| e.to_string())?.dataset;
    let split = make_split(&ds, &manifest.name, 0).map_err(|e| e.to_string())?;
    let test = test_data(&ds, &split);
    let mut m = Vec::new();
    for kind in [ModelKind::StNn, ModelKind::MtNn] {
        let out = train_kind(&ds, &split, kind, &kind.default_grid(), &FitConfig::default()).map_err(|e| e.to_string())?;
        m.push(evaluate_model(kind.display_name(), &out.model, &test).map_err(|e| e.to_string())?);
    }
    let (st, mt) = (&m[0], &m[1]);
    check(
        (mt.mean_f1 - 0.965).abs() <= 0.05
            && (mt.mean_kappa - 0.879).abs() <= 0.10
            && mt.mean_f1 > st.mean_f1
            && mt.mean_kappa > st.mean_kappa,
        format!(
            "MT-NN F1 {:.3} kappa {:.3}; ST-NN F1 {:.3} kappa {:.3}",
            mt.mean_f1, mt.mean_kappa, st.mean_f1, st.mean_kappa
        ),
    )
}

fn main() {
    // Ignore libtest arguments such as --nocapture or a name filter.
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("gradient correctness", gradient_check),
        ("metric oracles", metric_oracle),
        ("feature oracle", feature_oracle),
        ("svm correctness", svm_check),
        ("early stopping", early_stopping),
        ("mtl personalization benefit", mtl_benefit),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t0 = Instant::now();
        let outcome = f();
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("[PASS] {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("[FAIL] {name}: {d} [{secs:.1} s]");
            }
        }
    }
    match std::env::var(REAL_ENV) {
        Ok(p) => match real_data(&p) {
            Ok(d) => println!("[PASS] real recordings: {d}"),
            Err(d) => {
                failed += 1;
                println!("[FAIL] real recordings: {d}");
            }
        },
        Err(_) => println!("[SKIP] real recordings: set {REAL_ENV} to a dataset manifest to run"),
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
