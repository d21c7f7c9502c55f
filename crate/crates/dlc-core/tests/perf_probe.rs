//! Manual timing probe; run with `cargo test -p dlc-core --test perf_probe -- --ignored --nocapture`.

use std::time::Instant;

use dlc_core::codec::ArchitectureDescriptor;
use dlc_core::training::{train, RdoConfig, Variant, DESK_CHANNELS};

#[test]
#[ignore]
fn desk_step_timing() {
    let dir = tempfile::tempdir().unwrap();
    dlc_core::synth::write_corpus(dir.path(), 4, 192, 192, 1).unwrap();
    let out = dir.path().join("m.dlck");

    let cfg = RdoConfig {
        steps: 10,
        variant: Variant::Y,
        seed: 1,
        ..RdoConfig::desk_preset()
    };
    let d = ArchitectureDescriptor::with_channels(DESK_CHANNELS);

    let t0 = Instant::now();
    let report = train(dir.path(), &cfg, d, &out).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "10 desk steps: {dt:.2}s total, {:.3}s/step, decorr share {:.2}%",
        dt / 10.0,
        100.0 * report.timing.decorr_seconds / report.timing.total_seconds
    );
}

#[test]
#[ignore]
fn paper_channels_step_timing() {
    let dir = tempfile::tempdir().unwrap();
    dlc_core::synth::write_corpus(dir.path(), 4, 192, 192, 2).unwrap();
    let out = dir.path().join("m.dlck");

    let cfg = RdoConfig {
        steps: 3,
        variant: Variant::YZ,
        seed: 1,
        batch_size: 8,
        patch_size: 128,
        ..RdoConfig::default()
    };
    let d = ArchitectureDescriptor::with_channels(128);

    let t0 = Instant::now();
    let report = train(dir.path(), &cfg, d, &out).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "3 C=128 steps: {dt:.2}s total, {:.3}s/step, decorr share {:.2}%",
        dt / 3.0,
        100.0 * report.timing.decorr_seconds / report.timing.total_seconds
    );
}

#[test]
#[ignore]
fn gemm_throughput() {
    use ndarray::Array2;
    let a = Array2::<f64>::from_elem((48, 432), 1.01);
    let b = Array2::<f64>::from_elem((432, 1024), 0.99);
    let t0 = Instant::now();
    let n = 400;
    let mut acc = 0.0;
    for _ in 0..n {
        let c = a.dot(&b);
        acc += c[[0, 0]];
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = 2.0 * 48.0 * 432.0 * 1024.0 * n as f64;
    println!("f64 GEMM 48x432x1024: {:.2} GFLOP/s (acc {acc})", flops / dt / 1e9);

    let a = Array2::<f64>::from_elem((432, 1024), 1.01);
    let b = Array2::<f64>::from_elem((1024, 432), 0.99);
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..n {
        let c = a.dot(&b);
        acc += c[[0, 0]];
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = 2.0 * 432.0 * 1024.0 * 432.0 * n as f64;
    println!("f64 GEMM 432x1024x432: {:.2} GFLOP/s (acc {acc})", flops / dt / 1e9);
}

#[test]
#[ignore]
fn component_timing() {
    use dlc_core::kernels::*;
    use ndarray::{Array1, Array2, Array4};

    let mk_conv = |c_in: usize, c_out: usize, stride: usize| Conv2d {
        weight: Array2::from_elem((c_out, c_in * 9), 0.01),
        bias: Array1::zeros(c_out),
        shape: ConvShape { c_in, c_out, kernel: 3, stride, pad: 1, pad_mode: PadMode::Zero },
    };

    let x1 = Array4::<f64>::from_elem((8, 3, 128, 128), 0.5);
    let conv1 = mk_conv(3, 48, 2);
    let t0 = Instant::now();
    for _ in 0..10 {
        std::hint::black_box(conv2d_forward(&x1, &conv1));
    }
    println!("conv1 fwd x10: {:.3}s", t0.elapsed().as_secs_f64());

    let x2 = Array4::<f64>::from_elem((8, 48, 64, 64), 0.5);
    let conv2 = mk_conv(48, 48, 2);
    let t0 = Instant::now();
    for _ in 0..10 {
        std::hint::black_box(conv2d_forward(&x2, &conv2));
    }
    println!("conv2 fwd x10: {:.3}s", t0.elapsed().as_secs_f64());

    // SiLU-scale elementwise exp cost.
    let act = Array4::<f64>::from_elem((8, 48, 64, 64), 0.3);
    let t0 = Instant::now();
    for _ in 0..10 {
        std::hint::black_box(act.mapv(|v| v * (1.0 / (1.0 + (-v).exp()))));
    }
    println!("silu on 1.57M x10: {:.3}s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    for _ in 0..10 {
        std::hint::black_box(act.mapv(|v| v / (1.0 + v.abs())));
    }
    println!("softsign on 1.57M x10: {:.3}s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    for _ in 0..10 {
        std::hint::black_box(Array4::<f64>::zeros((8, 48, 64, 64)));
    }
    println!("alloc+zero 1.57M x10: {:.3}s", t0.elapsed().as_secs_f64());
}
