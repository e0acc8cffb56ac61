//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line
//! to stderr (uncaptured) and the test fails if any criterion fails.
//!
//! Criterion 7 trains on psMNIST and needs the IDX files in `data/mnist` (see
//! `scripts/fetch_mnist.sh`) or in the directory named by `DLSSM_MNIST_DIR`.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use dlssm::config::RunConfig;
use dlssm::gradcheck::check_gradients;
use dlssm::init::{kaiming_uniform, seeded_rng};
use dlssm::layer::legendre_memory;
use dlssm::lmu::{lmu_forward, window_reconstruct};
use dlssm::model::Layer;
use dlssm::pdmu::{build_gate_matrix, gate_sequences, pdmu_forward, PdmuLayerParams, Variant};
use dlssm::spiking::{is_binary, spike_encode, spiking_dmu_forward, LifConfig, SpikingDmuParams};
use dlssm::ssm::{
    fft_convolve, max_relative_error, pade_matrices, parallel_scan, sequential_scan,
    zoh_discretize, ContinuousSystem, ImpulseKernel, ScanPath,
};
use dlssm::train::Trainer;
use dlssm::{LayerConfig, Matrix, Mode, ModelVariant, Network, NetworkSpec, Readout, Target};
use dlssm_cli::{load_task_data, run_bench, TaskData, MNIST_DIR_ENV};
use nalgebra::DMatrix;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn layer(input_dim: usize, hidden_dim: usize, order: usize, delays: usize) -> LayerConfig {
    LayerConfig {
        input_dim,
        hidden_dim,
        memory_order: Some(order),
        delays,
        ..LayerConfig::default()
    }
}

fn path_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded_rng(101);
    let (mut scan_worst, mut pdmu_worst) = (0.0f64, 0.0f64);
    for case in 0..100 {
        let order = rng.random_range(1..=16);
        let delays = rng.random_range(1..=10);
        let len = rng.random_range(1..=512);
        let theta = rng.random_range(0.5..2.0) * order as f64;
        let sys = zoh_discretize(
            &pade_matrices(order).unwrap().time_scaled(theta).unwrap(),
            1.0,
        )
        .unwrap();
        let u: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seq = sequential_scan(&sys, &u, &vec![0.0; order]).unwrap();
        let par = parallel_scan(&sys, &u).unwrap();
        let fft = fft_convolve(&ImpulseKernel::new(&sys, len), &u).unwrap();
        scan_worst = scan_worst
            .max(max_relative_error(&par, &seq))
            .max(max_relative_error(&fft, &seq));

        let variant = if case % 2 == 0 {
            Variant::Plain
        } else {
            Variant::Efficient
        };
        let params = PdmuLayerParams::new(&layer(2, 6, order, delays), variant, &mut rng).unwrap();
        let x = kaiming_uniform(len, 2, 1, &mut rng);
        let (o_par, h_par) = pdmu_forward(&params, &x, Mode::Parallel).unwrap();
        let (o_seq, h_seq) = pdmu_forward(&params, &x, Mode::Sequential).unwrap();
        pdmu_worst = pdmu_worst
            .max(max_relative_error(&o_par, &o_seq))
            .max(max_relative_error(&h_par, &h_seq));
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "scan {scan_worst:.2e}, pdmu {pdmu_worst:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    );
    ensure(scan_worst <= 1e-8 && pdmu_worst <= 1e-8, || detail.clone())?;
    ensure(elapsed < Duration::from_secs(60), || {
        format!("too slow: {detail}")
    })?;
    Ok(detail)
}

fn expm_oracle(sys: &ContinuousSystem, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = sys.order();
    let mut aug = DMatrix::<f64>::zeros(q + 1, q + 1);
    for i in 0..q {
        for j in 0..q {
            aug[(i, j)] = sys.a()[(i, j)] * dt;
        }
        aug[(i, q)] = sys.b()[(i, 0)] * dt;
    }
    let e = aug.exp();
    (
        e.view((0, 0), (q, q)).into_owned(),
        e.view((0, q), (q, 1)).into_owned(),
    )
}

fn max_diff(ours: &Matrix, theirs: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..ours.rows() {
        for j in 0..ours.cols() {
            worst = worst.max((ours[(i, j)] - theirs[(i, j)]).abs());
        }
    }
    worst
}

fn discretization_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for q in 1..=64 {
        let raw = pade_matrices(q).unwrap();
        for (sys, dt) in [
            (raw.time_scaled(q as f64).unwrap(), 1.0),
            (raw.clone(), 0.05),
            (raw.clone(), 1.0),
        ] {
            let d = zoh_discretize(&sys, dt).unwrap();
            let (a, b) = expm_oracle(&sys, dt);
            worst = worst
                .max(max_diff(d.a_bar(), &a))
                .max(max_diff(d.b_bar(), &b));
        }
    }
    let scalar =
        ContinuousSystem::new(Matrix::from_rows(&[[-1.0]]), Matrix::from_rows(&[[1.0]])).unwrap();
    let mut scalar_worst = 0.0f64;
    for dt in [1e-3, 0.1, 0.5, 1.0, 3.0] {
        let d = zoh_discretize(&scalar, dt).unwrap();
        scalar_worst = scalar_worst.max((d.a_bar()[(0, 0)] - (-dt).exp()).abs());
    }
    let detail = format!("pade {worst:.2e}, scalar {scalar_worst:.2e}");
    ensure(worst <= 1e-12 && scalar_worst <= 1e-14, || detail.clone())?;
    Ok(detail)
}

fn gradient_instance(variant: ModelVariant, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let readout = [Readout::LastStep, Readout::MeanPool, Readout::PerStep][rng.random_range(0..3)];
    let spiking = variant == ModelVariant::SpikingDmu;
    let spec = NetworkSpec {
        variant,
        layer: layer(3, 4, 5, 3),
        layers: 1 + (seed % 3 == 2) as usize,
        outputs: if readout == Readout::PerStep { 2 } else { 3 },
        readout,
        lif: LifConfig {
            threshold: 0.5,
            leak: 0.9,
            surrogate_width: 1.0,
        },
        encoder_channels: (spiking && seed.is_multiple_of(2)).then_some(3),
    };
    let net = Network::new(&spec, &mut rng).unwrap();
    let t = 10;
    let x = if spiking && spec.encoder_channels.is_none() {
        Matrix::from_vec(
            t,
            3,
            (0..t * 3)
                .map(|_| (rng.random::<f64>() < 0.4) as u8 as f64)
                .collect(),
        )
    } else {
        kaiming_uniform(t, 3, 1, &mut rng)
    };
    let seq = kaiming_uniform(t, 2, 1, &mut rng);
    let label = rng.random_range(0..3);
    let report = check_gradients(&net, 1e-5, |net, tape| {
        let target = if readout == Readout::PerStep {
            Target::Sequence(&seq)
        } else {
            Target::Class(label)
        };
        let xv = tape.input(x.clone());
        let (out, _) = net.record(tape, xv, Mode::Parallel)?;
        net.record_loss(tape, out, target)
    })
    .unwrap();
    report.worst()
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for variant in ModelVariant::ALL {
        let tolerance = match variant {
            ModelVariant::Epdmu | ModelVariant::SpikingDmu => 1e-3,
            _ => 1e-4,
        };
        let worst = (0..20)
            .map(|s| gradient_instance(variant, s))
            .fold(0.0f64, f64::max);
        ensure(worst <= tolerance, || {
            format!("{variant}: {worst:.2e} > {tolerance:e}")
        })?;
        parts.push(format!("{variant} {worst:.1e}"));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || {
        format!("took {:.1}s", elapsed.as_secs_f64())
    })?;
    Ok(format!(
        "{}, {:.1}s",
        parts.join(", "),
        elapsed.as_secs_f64()
    ))
}

fn loop_form(m: &Matrix, fwd: &Matrix, bwd: Option<&Matrix>) -> Matrix {
    let mut h = m.clone();
    for k in 0..m.rows() {
        for j in 1..=fwd.cols() {
            for c in 0..m.cols() {
                if k >= j {
                    h[(k, c)] += fwd[(k - j, j - 1)] * m[(k - j, c)];
                }
                if let Some(b) = bwd.filter(|_| k + j < m.rows()) {
                    h[(k, c)] += b[(k + j, j - 1)] * m[(k + j, c)];
                }
            }
        }
    }
    h
}

fn structure_suite() -> Outcome {
    let mut rng = seeded_rng(404);
    let mut form_worst = 0.0f64;
    for case in 0..60 {
        let variant = [Variant::Plain, Variant::Bidirectional, Variant::Efficient][case % 3];
        let delays = rng.random_range(1..=10);
        let len = rng.random_range(1..=64);
        let params = PdmuLayerParams::new(&layer(3, 4, 5, delays), variant, &mut rng).unwrap();
        let x = kaiming_uniform(len, 3, 1, &mut rng).scaled(2.0);
        let g = gate_sequences(&params, &x).unwrap();
        let gm = build_gate_matrix(&g.forward, g.backward.as_ref(), variant).unwrap();
        let dense = gm.dense();
        for i in 0..len {
            ensure(dense[(i, i)] == 1.0, || format!("diagonal at {i}"))?;
            for k in 0..len {
                let outside =
                    i.abs_diff(k) > delays || (variant != Variant::Bidirectional && k < i);
                ensure(!outside || dense[(i, k)] == 0.0, || {
                    format!("{variant:?}: entry ({i},{k}) outside band")
                })?;
            }
            let row = gm.upper_band().row(i);
            if variant == Variant::Efficient {
                let nonzero = row.iter().filter(|&&v| v != 0.0).count();
                ensure(nonzero == 1, || {
                    format!("efficient row {i} has {nonzero} nonzeros")
                })?;
            } else {
                let sum: f64 = row.iter().sum();
                ensure((sum - 1.0).abs() <= 1e-6, || {
                    format!("row {i} sums to {sum}")
                })?;
            }
        }
        let (_, m) = lmu_forward(&params.core, &x, Mode::Parallel).unwrap();
        let looped = loop_form(&m, gm.upper_band(), gm.lower_band());
        form_worst = form_worst.max(gm.combine(&m).unwrap().sub(&looped).max_abs());
    }
    ensure(form_worst <= 1e-12, || {
        format!("matrix vs loop form {form_worst:.2e}")
    })?;
    for (n_hidden, q, n) in [(1, 1, 1), (64, 64, 5), (128, 128, 10)] {
        let count = PdmuLayerParams::zeros(&layer(2, n_hidden, q, n), Variant::Plain)
            .unwrap()
            .runtime_state_count();
        ensure(count == n_hidden + q + n, || {
            format!("state count {count} for ({n_hidden},{q},{n})")
        })?;
    }
    Ok(format!("60 gate matrices, forms agree to {form_worst:.1e}"))
}

fn skip_connection() -> Outcome {
    let mut rng = seeded_rng(5);
    let params = PdmuLayerParams::new(&layer(3, 5, 6, 1), Variant::Plain, &mut rng).unwrap();
    let x = kaiming_uniform(100, 3, 1, &mut rng);
    let (_, m) = lmu_forward(&params.core, &x, Mode::Parallel).unwrap();
    let (_, h) = pdmu_forward(&params, &x, Mode::Parallel).unwrap();
    ensure(h.row(0) == m.row(0), || "first step differs".into())?;
    for k in 1..100 {
        let expect: Vec<f64> = m
            .row(k)
            .iter()
            .zip(m.row(k - 1))
            .map(|(a, b)| a + b)
            .collect();
        ensure(h.row(k) == expect.as_slice(), || {
            format!("step {k} is not m[k] + m[k-1]")
        })?;
    }
    Ok("h[k] = m[k] + m[k-1] bit-exact over 100 steps".into())
}

fn window_fidelity() -> Outcome {
    let theta = 64.0;
    let len = 1024;
    let signal: Vec<f64> = (0..len)
        .map(|k| (2.0 * std::f64::consts::PI * k as f64 / (4.0 * theta)).sin())
        .collect();
    let engine = legendre_memory(16, theta, 1.0, 64).unwrap();
    let m = engine.forward(
        &Matrix::from_vec(len, 1, signal.clone()),
        ScanPath::Sequential,
    );
    let lag = (theta / 2.0) as usize;
    let start = 3 * theta as usize;
    let sq: f64 = (start..len)
        .map(|k| (window_reconstruct(m.row(k), 0.5) - signal[k - lag]).powi(2))
        .sum();
    let rms = (sq / (len - start) as f64).sqrt();
    ensure(rms <= 0.1, || format!("rms {rms:.4}"))?;
    Ok(format!("rms {rms:.4}"))
}

fn train_final(cfg_text: &str, data: &TaskData) -> Result<(f64, Option<f64>, Duration), String> {
    let cfg = RunConfig::parse(cfg_text).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outputs = data.train.classes().unwrap_or(1);
    let spec = cfg.network_spec(data.train.input_dim(), outputs);
    let net = Network::new(&spec, &mut seeded_rng(cfg.train.seed)).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(net, cfg.train.clone()).map_err(|e| e.to_string())?;
    trainer
        .fit(&data.train, &data.val, |_| {})
        .map_err(|e| e.to_string())?;
    let last = trainer.history.last().ok_or("no epochs ran")?;
    Ok((last.val_loss, last.val_accuracy, start.elapsed()))
}

fn recall_config(variant: &str, delay: usize, seed: u64) -> String {
    format!(
        "task = delay-recall\nvariant = {variant}\nseq_len = 64\ndelay = {delay}\ntrain_samples = 1024\n\
         val_samples = 256\nhidden = 16\nmemory_order = 8\ndelays = 8\ninput_activation = identity\n\
         batch = 32\nepochs = 60\nlr = 0.005\nseed = {seed}\n"
    )
}

fn psmnist_config(variant: &str, dir: &std::path::Path) -> String {
    format!(
        "task = psmnist\nvariant = {variant}\nmnist_dir = {}\nsubset = 10000\nval_fraction = 0.2\n\
         hidden = 64\nmemory_order = 64\ntheta = 784\ndelays = 5\ninput_activation = identity\n\
         batch = 32\nepochs = 10\nlr = 0.002\nseed = 1\n",
        dir.display()
    )
}

fn mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn desk_scale_learning() -> Outcome {
    let mut parts = Vec::new();
    for delay in [4, 8] {
        let mut means = [0.0; 2];
        for seed in 1..=3 {
            let any =
                RunConfig::parse(&recall_config("lmu", delay, seed)).map_err(|e| e.to_string())?;
            let data = load_task_data(&any).map_err(|e| e.to_string())?;
            for (slot, variant) in ["lmu", "pdmu"].iter().enumerate() {
                let (mse, _, took) = train_final(&recall_config(variant, delay, seed), &data)?;
                ensure(took <= Duration::from_secs(300), || {
                    format!("{variant} k={delay} took {took:?}")
                })?;
                means[slot] += mse / 3.0;
            }
        }
        ensure(means[1] < means[0], || {
            format!("k={delay}: pdmu {:.4} vs lmu {:.4}", means[1], means[0])
        })?;
        parts.push(format!(
            "k={delay} mse pdmu {:.4} < lmu {:.4}",
            means[1], means[0]
        ));
    }

    let dir = mnist_dir();
    let base = RunConfig::parse(&psmnist_config("lmu", &dir)).map_err(|e| e.to_string())?;
    let data = load_task_data(&base)
        .map_err(|e| format!("psMNIST data unavailable in {}: {e}", dir.display()))?;
    let mut acc = [0.0; 2];
    for (slot, variant) in ["lmu", "pdmu"].iter().enumerate() {
        let (_, a, took) = train_final(&psmnist_config(variant, &dir), &data)?;
        ensure(took <= Duration::from_secs(1800), || {
            format!("psmnist {variant} took {took:?}")
        })?;
        acc[slot] = a.ok_or("no accuracy")?;
    }
    parts.push(format!("psmnist acc pdmu {:.4}, lmu {:.4}", acc[1], acc[0]));
    let detail = parts.join("; ");
    ensure(acc[1] >= acc[0] && acc[1] >= 0.70, || detail.clone())?;
    Ok(detail)
}

fn speed_direction() -> Outcome {
    let cfg = RunConfig::parse(
        "task = delay-recall\nvariant = pdmu\ndelays = 4\nbench_steps = 2\nbench_seq_len = 512\n\
         bench_batch = 64\nbench_hidden = 128\n",
    )
    .map_err(|e| e.to_string())?;
    let rows = run_bench(&cfg).map_err(|e| e.to_string())?;
    let ratio = rows
        .iter()
        .find(|r| r.variant == "pdmu-parallel")
        .map(|r| r.ratio_vs_sequential)
        .ok_or("missing parallel row")?;
    let detail = rows
        .iter()
        .map(|r| format!("{} {:.0}ms", r.variant, r.ms_per_step))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(ratio >= 2.0, || format!("ratio {ratio:.2}: {detail}"))?;
    Ok(format!("ratio {ratio:.2} ({detail})"))
}

const TRACE_SPIKES: [[f64; 2]; 6] = [
    [1.0, 0.0],
    [0.0, 0.0],
    [1.0, 1.0],
    [1.0, 1.0],
    [1.0, 0.0],
    [0.0, 1.0],
];
const TRACE_COMBINED: [[f64; 2]; 6] = [
    [0.5513315546461229, -0.506970263484258],
    [0.6087037981731063, -0.03009208946926067],
    [0.5538572289727302, 0.05177875188661824],
    [0.8181453109387772, -0.1735356922566292],
    [0.7902323617835413, -0.03645809540003279],
    [0.4073229777536746, 0.21311154592448917],
];

fn random_spikes(t: usize, c: usize, density: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(
        t,
        c,
        (0..t * c)
            .map(|_| (rng.random::<f64>() < density) as u8 as f64)
            .collect(),
    )
}

fn spiking_suite() -> Outcome {
    let mut rng = seeded_rng(909);
    let spec = NetworkSpec {
        variant: ModelVariant::SpikingDmu,
        layer: layer(4, 8, 4, 3),
        layers: 3,
        outputs: 3,
        readout: Readout::MeanPool,
        lif: LifConfig {
            leak: 0.9,
            ..LifConfig::default()
        },
        encoder_channels: None,
    };
    let mut spikes_seen = 0.0;
    for trial in 0..10 {
        // odd trials feed binary spikes straight in, even ones go through the encoder
        let encoded = trial % 2 == 0;
        let spec = NetworkSpec {
            encoder_channels: encoded.then_some(6),
            layer: layer(if encoded { 4 } else { 6 }, 8, 4, 3),
            ..spec.clone()
        };
        let mut net = Network::new(&spec, &mut rng).unwrap();
        for l in &mut net.layers {
            if let Layer::Spiking(p) = l {
                p.core.core.w_m = p.core.core.w_m.scaled(3.0);
            }
        }
        let mut signal = if encoded {
            let raw = kaiming_uniform(40, 4, 1, &mut rng).scaled(3.0);
            spike_encode(&raw, net.encoder.as_ref().unwrap()).unwrap()
        } else {
            random_spikes(40, 6, 0.3, &mut rng)
        };
        ensure(is_binary(&signal), || "encoder output not binary".into())?;
        for (i, l) in net.layers.iter().enumerate() {
            let Layer::Spiking(p) = l else { unreachable!() };
            let out = spiking_dmu_forward(p, &signal).unwrap();
            ensure(
                is_binary(&out.branch_u) && is_binary(&out.branch_v) && is_binary(&out.spikes),
                || format!("layer {i} emitted a non-binary signal"),
            )?;
            let mut stepper = p.stepper().unwrap();
            for k in 0..signal.rows() {
                let s = stepper.step(signal.row(k)).to_vec();
                for (j, &fired) in s.iter().enumerate() {
                    ensure(fired == 0.0 || stepper.potential()[j] == 0.0, || {
                        format!("layer {i} no reset at {k}")
                    })?;
                }
            }
            spikes_seen += out.spikes.as_slice().iter().sum::<f64>();
            signal = out.spikes;
        }
        if !encoded {
            let silent = net.synops(&Matrix::zeros(40, 6)).unwrap();
            ensure(silent.synops == 0, || {
                format!("silent input cost {} synops", silent.synops)
            })?;
        }
    }
    ensure(spikes_seen > 0.0, || "networks never spiked".into())?;

    let mut core = PdmuLayerParams::zeros(&layer(2, 2, 2, 2), Variant::Plain).unwrap();
    core.core.w_u = Matrix::from_rows(&[[1.5, 0.2]]);
    core.forward_gate.w_v = Matrix::from_rows(&[[0.3, 1.2]]);
    core.core.w_x = Matrix::from_rows(&[[0.6, -0.4], [0.1, 0.9]]);
    core.core.w_m = Matrix::from_rows(&[[1.5, 0.5], [0.9, 1.1]]);
    let lif = LifConfig {
        threshold: 1.0,
        leak: 0.8,
        surrogate_width: 1.0,
    };
    let traced = SpikingDmuParams::from_core(core, lif).unwrap();
    let x = Matrix::from_rows(&[
        [1.0, 0.0],
        [0.0, 0.0],
        [0.0, 1.0],
        [1.0, 1.0],
        [0.0, 0.0],
        [0.0, 0.0],
    ]);
    let out = spiking_dmu_forward(&traced, &x).unwrap();
    ensure(out.spikes == Matrix::from_rows(&TRACE_SPIKES), || {
        "trace spikes differ".into()
    })?;
    ensure(
        out.branch_u.as_slice() == [1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        || "trace u differs".into(),
    )?;
    ensure(
        out.branch_v.as_slice() == [0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        || "trace v differs".into(),
    )?;
    let drift = out
        .memory
        .sub(&Matrix::from_rows(&TRACE_COMBINED))
        .max_abs();
    ensure(drift <= 1e-12, || format!("trace memory drift {drift:.2e}"))?;
    Ok(format!(
        "30 stacked layers binary with exact resets, {spikes_seen} spikes, trace exact"
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("path equivalence", path_equivalence),
        ("discretization oracle", discretization_oracle),
        ("gradient suite", gradient_suite),
        ("structure suite", structure_suite),
        ("skip-connection limit", skip_connection),
        ("window fidelity", window_fidelity),
        ("desk-scale learning", desk_scale_learning),
        ("speed direction", speed_direction),
        ("spiking suite", spiking_suite),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(i + 1);
                ("FAIL", d)
            }
        };
        let line = format!(
            "{status} criterion {}: {name} ({detail}) [{:.1}s]\n",
            i + 1,
            start.elapsed().as_secs_f64()
        );
        let _ = std::io::stderr().write_all(line.as_bytes());
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
