//! End-to-end finite-difference checks through the model graphs, run on
//! the f64 instantiation of the kernels (see the tensor crate's grad tests
//! for why f32 central differences cannot carry a 1e-3 bound).
//!
//! Step size is 1e-6 here rather than the per-op 1e-3: a deep ReLU stack
//! flips hundreds of activation signs across a 2e-3 interval, so central
//! differences at that step measure kink overshoot, not the gradient. At
//! 1e-6 the intervals are almost always decision-free and the tape's
//! region signature discards the few that are not.

use crossres_model::{Binder, GopMode, ModelConfig, SynthModel};
use crossres_tensor::{grad_check_sampled, Real, Tape, Tensor, Val};

fn random_tensor<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut state = seed | 1;
    Tensor::from_fn(shape.to_vec(), |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        T::from_f64(((state >> 40) as f64 / (1u64 << 24) as f64) * 0.8 + 0.1)
    })
}

fn jittered_model(mode: GopMode, seed: u64) -> SynthModel {
    SynthModel::init_jittered(ModelConfig { channels: 64, mode }, seed)
}

#[test]
fn man_forward_grads_on_8x8_frames() {
    let model = jittered_model(GopMode::Ldp, 21);
    let inputs: Vec<Tensor<f64>> = (0..3).map(|i| random_tensor(&[1, 8, 8], 100 + i)).collect();
    let err = grad_check_sampled(
        |tape: &mut Tape<f64>, vals: &[Val]| {
            let mut binder = Binder::new(tape, false);
            let m = model.bind(&mut binder);
            let out = m
                .man
                .apply(tape, vals)
                .map_err(|_| crossres_tensor::TensorError::InvalidArgument {
                    op: "man",
                    msg: "forward failed".into(),
                })?;
            Ok(out)
        },
        &inputs,
        1e-6f64,
        10,
        0xA11CE,
    )
    .unwrap();
    assert!(err < 1e-3, "man_forward: {err}");
}

#[test]
fn tcn_forward_grads_on_16x16_inputs() {
    let model = jittered_model(GopMode::Ldp, 22);
    let inputs: Vec<Tensor<f64>> = vec![
        random_tensor(&[1, 16, 16], 200), // intra
        random_tensor(&[1, 16, 16], 201), // re-sampled intra
        random_tensor(&[1, 16, 16], 202), // upscaled inter
    ];
    let err = grad_check_sampled(
        |tape: &mut Tape<f64>, vals: &[Val]| {
            let mut binder = Binder::new(tape, false);
            let m = model.bind(&mut binder);
            let bundle = m
                .tcn
                .apply(tape, vals[0], vals[1], vals[2])
                .map_err(|_| crossres_tensor::TensorError::InvalidArgument {
                    op: "tcn",
                    msg: "forward failed".into(),
                })?;
            // Reduce over every differentiable output of the bundle.
            let s_q = tape.sum(bundle.tex_quarter);
            let s_h = tape.sum(bundle.tex_half);
            let s_f = tape.sum(bundle.tex_full);
            let s_a = tape.sum(bundle.aff_full);
            let t0 = tape.add(s_q, s_h)?;
            let t1 = tape.add(s_f, s_a)?;
            tape.add(t0, t1)
        },
        &inputs,
        1e-6f64,
        10,
        0xBEEF,
    )
    .unwrap();
    assert!(err < 1e-3, "tcn_forward: {err}");
}

#[test]
fn crs_forward_grads_end_to_end_on_16x16_frames() {
    let model = jittered_model(GopMode::Ldp, 23);
    let mut inputs: Vec<Tensor<f64>> =
        (0..3).map(|i| random_tensor(&[1, 8, 8], 300 + i)).collect();
    inputs.push(random_tensor(&[1, 16, 16], 310)); // intra reference
    let err = grad_check_sampled(
        |tape: &mut Tape<f64>, vals: &[Val]| {
            let mut binder = Binder::new(tape, false);
            let m = model.bind(&mut binder);
            let out = m
                .synthesize(tape, &vals[..3], &vals[3..])
                .map_err(|_| crossres_tensor::TensorError::InvalidArgument {
                    op: "crs",
                    msg: "forward failed".into(),
                })?;
            Ok(out)
        },
        &inputs,
        1e-6f64,
        8,
        0xC0FFEE,
    )
    .unwrap();
    assert!(err < 1e-3, "crs_forward: {err}");
}

#[test]
fn crs_forward_grads_in_ra_mode() {
    let model = jittered_model(GopMode::Ra, 24);
    let mut inputs: Vec<Tensor<f64>> =
        (0..3).map(|i| random_tensor(&[1, 8, 8], 400 + i)).collect();
    inputs.push(random_tensor(&[1, 16, 16], 410));
    inputs.push(random_tensor(&[1, 16, 16], 411));
    let err = grad_check_sampled(
        |tape: &mut Tape<f64>, vals: &[Val]| {
            let mut binder = Binder::new(tape, false);
            let m = model.bind(&mut binder);
            let out = m
                .synthesize(tape, &vals[..3], &vals[3..])
                .map_err(|_| crossres_tensor::TensorError::InvalidArgument {
                    op: "crs",
                    msg: "forward failed".into(),
                })?;
            Ok(out)
        },
        &inputs,
        1e-6f64,
        6,
        0xD00D,
    )
    .unwrap();
    assert!(err < 1e-3, "crs_forward ra: {err}");
}
